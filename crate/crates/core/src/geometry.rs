//! Polyhedral cones, cone fields and the Hilbert projective metric.
//!
//! A [`Cone`] is stored in both representations: halfspace covectors `h_i`
//! (the cone is `{v : <h_i, v> >= 0 for all i}`) and unit extreme rays `g_j`.
//! Generators are derived automatically in dimension 2 and for simplicial
//! cones; other cones must be given both representations, which are then
//! cross-checked.
//!
//! Hilbert bounds use the closed-form halfspace ratios
//! `M = max_i <h_i,dx>/<h_i,dy>` and `m = min_i <h_i,dx>/<h_i,dy>`.

use crate::error::{Error, Result};
use crate::serde_ext::ext_real;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Largest supported tangent-space dimension.
pub const MAX_DIM: usize = 8;

/// Relative size below which a facet evaluation counts as exactly zero.
pub const ZERO_RATIO_TOL: f64 = 1e-12;

/// Hilbert distances below this are reported as 0.
pub const DISTANCE_FLOOR: f64 = 1e-14;

/// Slack for non-strict membership, relative to `|h| |v|`.
const MEMBERSHIP_SLACK: f64 = 1e-12;

/// Tolerance used when deciding that a generator is tight on a facet.
const TIGHT_TOL: f64 = 1e-9;

/// Solid, pointed polyhedral cone in a tangent space of dimension `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConeRepr", into = "ConeRepr")]
pub struct Cone {
    halfspaces: Vec<DVector<f64>>,
    generators: Vec<DVector<f64>>,
    dim: usize,
}

/// Declarative form: `halfspaces = [[1,0],[1,1]]`, generators optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeRepr {
    pub halfspaces: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<Vec<f64>>>,
}

impl TryFrom<ConeRepr> for Cone {
    type Error = Error;

    fn try_from(repr: ConeRepr) -> Result<Self> {
        match repr.generators {
            Some(gens) => Cone::with_generators(to_vectors(repr.halfspaces), to_vectors(gens)),
            None => Cone::from_halfspaces(repr.halfspaces),
        }
    }
}

impl From<Cone> for ConeRepr {
    fn from(cone: Cone) -> Self {
        ConeRepr {
            halfspaces: cone.halfspaces.iter().map(|h| h.as_slice().to_vec()).collect(),
            generators: Some(cone.generators.iter().map(|g| g.as_slice().to_vec()).collect()),
        }
    }
}

fn to_vectors(rows: Vec<Vec<f64>>) -> Vec<DVector<f64>> {
    rows.into_iter().map(DVector::from_vec).collect()
}

impl Cone {
    /// Builds a cone from row-major halfspace covectors, deriving generators.
    pub fn from_halfspaces(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_halfspace_vectors(to_vectors(rows))
    }

    pub fn from_halfspace_vectors(halfspaces: Vec<DVector<f64>>) -> Result<Self> {
        let dim = check_rows(&halfspaces, "halfspace")?;
        let generators = if dim == 2 {
            planar_generators(&halfspaces)?
        } else if halfspaces.len() == dim {
            simplicial_generators(&halfspaces)?
        } else {
            return Err(Error::InvalidCone(format!(
                "{} halfspaces in dimension {dim}: generators must be supplied for non-simplicial cones",
                halfspaces.len()
            )));
        };
        Self::with_generators(halfspaces, generators)
    }

    /// Builds a cone from both representations and checks that they agree.
    pub fn with_generators(
        halfspaces: Vec<DVector<f64>>,
        generators: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let dim = check_rows(&halfspaces, "halfspace")?;
        let gdim = check_rows(&generators, "generator")?;
        if gdim != dim {
            return Err(Error::InvalidCone(format!(
                "generators have dimension {gdim}, halfspaces {dim}"
            )));
        }
        let generators: Vec<_> = generators.into_iter().map(|g| g.normalize()).collect();
        let cone = Cone {
            halfspaces,
            generators,
            dim,
        };
        cone.validate()?;
        Ok(cone)
    }

    /// Builds the cone spanned by the given extreme rays (2-D or simplicial).
    pub fn from_generators(rows: Vec<Vec<f64>>) -> Result<Self> {
        let generators = to_vectors(rows);
        let dim = check_rows(&generators, "generator")?;
        let halfspaces = if dim == 2 && generators.len() == 2 {
            let (a, b) = (&generators[0], &generators[1]);
            // facet through each ray, oriented toward the other one
            let facet = |on: &DVector<f64>, other: &DVector<f64>| {
                let n = DVector::from_vec(vec![-on[1], on[0]]);
                if n.dot(other) < 0.0 {
                    -n
                } else {
                    n
                }
            };
            vec![facet(a, b), facet(b, a)]
        } else if generators.len() == dim {
            let g = DMatrix::from_columns(&generators);
            let inv = g
                .try_inverse()
                .ok_or_else(|| Error::InvalidCone("generators are linearly dependent".into()))?;
            (0..dim).map(|i| inv.row(i).transpose()).collect()
        } else {
            return Err(Error::InvalidInput(
                "halfspaces can only be rebuilt for 2-D or simplicial cones".into(),
            ));
        };
        Self::with_generators(halfspaces, generators)
    }

    /// The nonnegative orthant of dimension `n`.
    pub fn orthant(n: usize) -> Self {
        let basis: Vec<_> = (0..n)
            .map(|i| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 }))
            .collect();
        Cone {
            halfspaces: basis.clone(),
            generators: basis,
            dim: n,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn halfspaces(&self) -> &[DVector<f64>] {
        &self.halfspaces
    }

    pub fn generators(&self) -> &[DVector<f64>] {
        &self.generators
    }

    /// Facet function values `<h_i, v>`.
    pub fn evaluate(&self, v: &DVector<f64>) -> Vec<f64> {
        self.halfspaces.iter().map(|h| h.dot(v)).collect()
    }

    /// Membership test. Non-strict membership allows a relative slack of
    /// 1e-12 to absorb rounding on boundary vectors.
    pub fn contains(&self, v: &DVector<f64>, strict: bool) -> Result<bool> {
        self.check_dim(v)?;
        let vn = v.norm();
        Ok(self.halfspaces.iter().all(|h| {
            let k = h.dot(v);
            if strict {
                k > 0.0
            } else {
                k >= -MEMBERSHIP_SLACK * h.norm() * vn
            }
        }))
    }

    /// `min_i <h_i, v> / (|h_i| |v|)`: positive inside, zero on the boundary.
    pub fn interior_margin(&self, v: &DVector<f64>) -> f64 {
        let vn = v.norm();
        if vn == 0.0 {
            return 0.0;
        }
        self.halfspaces
            .iter()
            .map(|h| h.dot(v) / (h.norm() * vn))
            .fold(f64::INFINITY, f64::min)
    }

    /// Normalized sum of the generators, a deep interior direction.
    pub fn interior_probe(&self) -> DVector<f64> {
        let sum = self
            .generators
            .iter()
            .fold(DVector::zeros(self.dim), |acc, g| acc + g);
        sum.normalize()
    }

    /// True when the facets are the coordinate hyperplanes oriented positively.
    pub fn is_orthant(&self) -> bool {
        if self.halfspaces.len() != self.dim {
            return false;
        }
        let mut seen = vec![false; self.dim];
        for h in &self.halfspaces {
            let hn = h / h.norm();
            let Some(i) = (0..self.dim).find(|&i| (hn[i] - 1.0).abs() < 1e-12) else {
                return false;
            };
            if seen[i] {
                return false;
            }
            seen[i] = true;
        }
        true
    }

    /// Sign representative of the ray through `v`: flips `v` so that its first
    /// facet evaluation that is not zero is positive.
    pub fn orient(&self, v: &DVector<f64>) -> DVector<f64> {
        let vn = v.norm();
        for h in &self.halfspaces {
            let k = h.dot(v);
            if k.abs() > ZERO_RATIO_TOL * h.norm() * vn {
                return if k > 0.0 { v.clone() } else { -v };
            }
        }
        v.clone()
    }

    /// Image cone `gamma K`: generators `gamma g`, covectors `gamma^{-T} h`.
    pub fn transformed(&self, gamma: &DMatrix<f64>) -> Result<Cone> {
        if gamma.nrows() != self.dim || gamma.ncols() != self.dim {
            return Err(Error::InvalidInput("transport has the wrong shape".into()));
        }
        let inv = gamma
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("transport map is singular".into()))?;
        let halfspaces = self.halfspaces.iter().map(|h| inv.transpose() * h).collect();
        let generators = self.generators.iter().map(|g| gamma * g).collect();
        Cone::with_generators(halfspaces, generators)
    }

    /// Rebuilds the halfspace representation from the generators alone.
    pub fn rebuilt_from_generators(&self) -> Result<Cone> {
        Cone::from_generators(
            self.generators
                .iter()
                .map(|g| g.as_slice().to_vec())
                .collect(),
        )
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "vector of dimension {} tested against a cone of dimension {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim;
        for (j, g) in self.generators.iter().enumerate() {
            for (i, h) in self.halfspaces.iter().enumerate() {
                if h.dot(g) < -TIGHT_TOL * h.norm() {
                    return Err(Error::InvalidCone(format!(
                        "generator {j} violates halfspace {i}"
                    )));
                }
            }
        }
        if rank(&self.generators, n) < n {
            return Err(Error::InvalidCone("generators do not span the space (not solid)".into()));
        }
        if rank(&self.halfspaces, n) < n {
            return Err(Error::InvalidCone("halfspaces do not have full rank (not pointed)".into()));
        }
        for (i, h) in self.halfspaces.iter().enumerate() {
            let tight: Vec<_> = self
                .generators
                .iter()
                .filter(|g| h.dot(g).abs() <= TIGHT_TOL * h.norm())
                .cloned()
                .collect();
            if rank(&tight, n) + 1 < n {
                return Err(Error::InvalidCone(format!(
                    "halfspace {i} is not a facet (tight on fewer than {} independent generators)",
                    n - 1
                )));
            }
        }
        Ok(())
    }
}

fn check_rows(rows: &[DVector<f64>], what: &str) -> Result<usize> {
    let Some(first) = rows.first() else {
        return Err(Error::InvalidCone(format!("no {what}s given")));
    };
    let dim = first.len();
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidCone(format!(
            "dimension {dim} outside the supported range 1..={MAX_DIM}"
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::InvalidCone(format!("{what} {i} has dimension {}", r.len())));
        }
        if !r.iter().all(|x| x.is_finite()) || r.norm() == 0.0 {
            return Err(Error::InvalidCone(format!("{what} {i} is zero or not finite")));
        }
    }
    Ok(dim)
}

fn rank(vectors: &[DVector<f64>], n: usize) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let m = DMatrix::from_columns(vectors);
    let sv = m.singular_values();
    let scale = sv.max().max(f64::MIN_POSITIVE);
    let r = sv.iter().filter(|s| **s > 1e-10 * scale).count();
    r.min(n)
}

/// Extreme rays of a planar cone: the feasible rays orthogonal to each facet,
/// ordered by facet index.
fn planar_generators(halfspaces: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let mut rays: Vec<DVector<f64>> = Vec::new();
    for h in halfspaces {
        let perp = DVector::from_vec(vec![-h[1], h[0]]).normalize();
        for cand in [perp.clone(), -perp] {
            let feasible = halfspaces
                .iter()
                .all(|k| k.dot(&cand) >= -TIGHT_TOL * k.norm());
            if feasible && !rays.iter().any(|r| r.dot(&cand) > 1.0 - 1e-12) {
                rays.push(cand);
            }
        }
    }
    match rays.len() {
        2 if rays[0].dot(&rays[1]) < -1.0 + 1e-12 => Err(Error::InvalidCone(
            "halfspaces describe a half-plane (not pointed)".into(),
        )),
        2 => Ok(rays),
        0 | 1 => Err(Error::InvalidCone("halfspaces leave no solid cone".into())),
        _ => Err(Error::InvalidCone("redundant or inconsistent planar halfspaces".into())),
    }
}

fn simplicial_generators(halfspaces: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let h = DMatrix::from_rows(
        &halfspaces
            .iter()
            .map(|r| r.transpose())
            .collect::<Vec<_>>(),
    );
    let inv = h
        .try_inverse()
        .ok_or_else(|| Error::InvalidCone("simplicial halfspaces are linearly dependent".into()))?;
    Ok((0..inv.ncols()).map(|j| inv.column(j).normalize()).collect())
}

/// Hilbert projective distance with its bounds `M` and `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HilbertDistance {
    #[serde(with = "ext_real")]
    pub value: f64,
    #[serde(with = "ext_real")]
    pub upper: f64,
    pub lower: f64,
}

impl HilbertDistance {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

impl fmt::Display for HilbertDistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.value.is_finite() {
            write!(f, "{}", self.value)
        } else {
            f.write_str("inf")
        }
    }
}

pub fn cone_contains(cone: &Cone, v: &DVector<f64>, strict: bool) -> Result<bool> {
    cone.contains(v, strict)
}

/// `(M, m)` with `M = inf{l >= 0 : l dy - dx in K}`, `m = sup{l >= 0 : dx - l dy in K}`.
///
/// Facets where both evaluations vanish impose no constraint. A facet with
/// `<h,dy> = 0 < <h,dx>` makes `M` infinite.
pub fn hilbert_bounds(cone: &Cone, dx: &DVector<f64>, dy: &DVector<f64>) -> Result<(f64, f64)> {
    if !cone.contains(dx, false)? {
        return Err(Error::OutsideCone(format!("dx = {:?}", dx.as_slice())));
    }
    if !cone.contains(dy, false)? {
        return Err(Error::OutsideCone(format!("dy = {:?}", dy.as_slice())));
    }
    let (nx, ny) = (dx.norm(), dy.norm());
    if ny == 0.0 {
        return Err(Error::InvalidInput("dy must be nonzero".into()));
    }
    let mut upper = f64::NEG_INFINITY;
    let mut lower = f64::INFINITY;
    for h in cone.halfspaces() {
        let hn = h.norm();
        let a = h.dot(dx);
        let b = h.dot(dy);
        let a_zero = a.abs() <= ZERO_RATIO_TOL * hn * nx;
        let b_zero = b.abs() <= ZERO_RATIO_TOL * hn * ny;
        if b_zero {
            if !a_zero {
                upper = f64::INFINITY;
            }
            continue;
        }
        let r = if a_zero { 0.0 } else { a / b };
        upper = upper.max(r);
        lower = lower.min(r);
    }
    if upper == f64::NEG_INFINITY {
        return Err(Error::InvalidInput("no facet constrains the pair".into()));
    }
    if lower == f64::INFINITY {
        lower = 0.0;
    }
    Ok((upper, lower))
}

/// `log(M/m)`, infinite when `M = inf` or `m = 0`.
pub fn hilbert_distance(cone: &Cone, dx: &DVector<f64>, dy: &DVector<f64>) -> Result<HilbertDistance> {
    if dx.norm() == 0.0 {
        return Err(Error::InvalidInput("dx must be nonzero".into()));
    }
    let (upper, lower) = hilbert_bounds(cone, dx, dy)?;
    let value = if upper.is_infinite() || lower <= 0.0 {
        f64::INFINITY
    } else {
        let d = (upper / lower).ln();
        if d < DISTANCE_FLOOR {
            0.0
        } else {
            d
        }
    };
    Ok(HilbertDistance {
        value,
        upper,
        lower,
    })
}

/// Largest pairwise Hilbert distance in the sample set.
pub fn projective_diameter(cone: &Cone, samples: &[DVector<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("projective diameter of an empty set".into()));
    }
    let mut diameter: f64 = 0.0;
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            let d = hilbert_distance(cone, a, b)?.value;
            if d.is_infinite() {
                return Ok(f64::INFINITY);
            }
            diameter = diameter.max(d);
        }
    }
    Ok(diameter)
}

/// `tanh(diameter / 4)`, with `tanh(inf) = 1`.
pub fn contraction_ratio(diameter: f64) -> Result<f64> {
    if diameter.is_nan() || diameter < 0.0 {
        return Err(Error::InvalidInput(format!("diameter {diameter} must be nonnegative")));
    }
    if diameter.is_infinite() {
        return Ok(1.0);
    }
    Ok((diameter / 4.0).tanh())
}

pub type HalfspaceFn = dyn Fn(&DVector<f64>) -> Vec<DVector<f64>> + Send + Sync;
pub type TransportFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
/// Directional derivatives of the facet covectors: `(x, xdot) -> [dh_i/dt]`.
pub type FacetRateFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> Vec<DVector<f64>> + Send + Sync;

#[derive(Clone)]
enum FieldKind {
    Constant(Cone),
    Varying {
        halfspaces: Arc<HalfspaceFn>,
        transport: Option<Arc<TransportFn>>,
        facet_rates: Option<Arc<FacetRateFn>>,
    },
}

/// State-dependent assignment of a cone to each tangent space.
///
/// Varying fields keep a fixed facet order so that facet indices are
/// comparable across states.
#[derive(Clone)]
pub struct ConeField {
    dim: usize,
    kind: FieldKind,
}

impl fmt::Debug for ConeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FieldKind::Constant(c) => f.debug_tuple("ConeField::Constant").field(c).finish(),
            FieldKind::Varying { transport, .. } => f
                .debug_struct("ConeField::Varying")
                .field("dim", &self.dim)
                .field("has_transport", &transport.is_some())
                .finish(),
        }
    }
}

impl ConeField {
    pub fn constant(cone: Cone) -> Self {
        ConeField {
            dim: cone.dim(),
            kind: FieldKind::Constant(cone),
        }
    }

    pub fn varying<F>(dim: usize, halfspaces: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Vec<DVector<f64>> + Send + Sync + 'static,
    {
        ConeField {
            dim,
            kind: FieldKind::Varying {
                halfspaces: Arc::new(halfspaces),
                transport: None,
                facet_rates: None,
            },
        }
    }

    /// Attaches the model-supplied transport maps `Gamma(x1, x2)`.
    pub fn with_transport<F>(mut self, transport: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if let FieldKind::Varying { transport: t, .. } = &mut self.kind {
            *t = Some(Arc::new(transport));
        }
        self
    }

    /// Attaches analytic facet derivatives, overriding finite differences.
    pub fn with_facet_rates<F>(mut self, rates: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> Vec<DVector<f64>> + Send + Sync + 'static,
    {
        if let FieldKind::Varying { facet_rates, .. } = &mut self.kind {
            *facet_rates = Some(Arc::new(rates));
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, FieldKind::Constant(_))
    }

    /// The constant cone, if the field does not vary with the state.
    pub fn constant_cone(&self) -> Option<&Cone> {
        match &self.kind {
            FieldKind::Constant(c) => Some(c),
            FieldKind::Varying { .. } => None,
        }
    }

    pub fn halfspaces_at(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        match &self.kind {
            FieldKind::Constant(c) => c.halfspaces().to_vec(),
            FieldKind::Varying { halfspaces, .. } => halfspaces(x),
        }
    }

    pub fn cone_at(&self, x: &DVector<f64>) -> Result<Cone> {
        match &self.kind {
            FieldKind::Constant(c) => Ok(c.clone()),
            FieldKind::Varying { halfspaces, .. } => Cone::from_halfspace_vectors(halfspaces(x)),
        }
    }

    /// Analytic `dh_i/dt` along `xdot`, when the model provides it.
    /// Constant fields return zeros.
    pub fn analytic_facet_rates(&self, x: &DVector<f64>, xdot: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        match &self.kind {
            FieldKind::Constant(c) => Some(vec![DVector::zeros(self.dim); c.halfspaces().len()]),
            FieldKind::Varying { facet_rates, .. } => facet_rates.as_ref().map(|r| r(x, xdot)),
        }
    }

    /// `Gamma(x1, x2)`, mapping `K(x1)` onto `K(x2)`.
    pub fn transport(&self, x1: &DVector<f64>, x2: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.kind {
            FieldKind::Constant(_) => Ok(DMatrix::identity(self.dim, self.dim)),
            FieldKind::Varying { transport, .. } => transport
                .as_ref()
                .map(|t| t(x1, x2))
                .ok_or_else(|| Error::MissingTransport("the model did not supply one".into())),
        }
    }

    /// Checks `Gamma(x1,x2) K(x1) ⊆ K(x2)` on generators and
    /// `Gamma(x1,x2) Gamma(x2,x1) = I` to `tol`.
    pub fn validate_transport(&self, x1: &DVector<f64>, x2: &DVector<f64>, tol: f64) -> Result<()> {
        let forward = self.transport(x1, x2)?;
        let backward = self.transport(x2, x1)?;
        let defect = (&forward * &backward - DMatrix::identity(self.dim, self.dim)).amax();
        if defect > tol {
            return Err(Error::InvalidCone(format!(
                "transport maps are not mutually inverse (defect {defect:e})"
            )));
        }
        let k1 = self.cone_at(x1)?;
        let k2 = self.cone_at(x2)?;
        for (j, g) in k1.generators().iter().enumerate() {
            let image = &forward * g;
            let margin = k2.interior_margin(&image);
            if margin < -tol.max(1e-9) {
                return Err(Error::InvalidCone(format!(
                    "transported generator {j} leaves the target cone (margin {margin:e})"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn pendulum_cone() -> Cone {
        Cone::from_halfspaces(vec![vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap()
    }

    #[test]
    fn contains_examples() {
        let q = Cone::orthant(2);
        assert!(cone_contains(&q, &v(&[1.0, 1.0]), false).unwrap());
        assert!(!cone_contains(&q, &v(&[1.0, 0.0]), true).unwrap());
        assert!(cone_contains(&q, &v(&[1.0, 0.0]), false).unwrap());
        assert!(!cone_contains(&pendulum_cone(), &v(&[1.0, -2.0]), false).unwrap());
        assert!(matches!(
            cone_contains(&q, &v(&[1.0, 0.0, 2.0]), false),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn pendulum_generators() {
        let c = pendulum_cone();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let gens = c.generators();
        assert_eq!(gens.len(), 2);
        assert!((&gens[0] - v(&[0.0, 1.0])).norm() < 1e-15);
        assert!((&gens[1] - v(&[s, -s])).norm() < 1e-15);
    }

    #[test]
    fn hilbert_bounds_examples() {
        let q = Cone::orthant(2);
        assert_eq!(hilbert_bounds(&q, &v(&[2.0, 1.0]), &v(&[1.0, 1.0])).unwrap(), (2.0, 1.0));
        assert_eq!(hilbert_bounds(&q, &v(&[0.3, 0.7]), &v(&[0.3, 0.7])).unwrap(), (1.0, 1.0));
        let (m_up, m_lo) = hilbert_bounds(&q, &v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!(m_up.is_infinite());
        assert_eq!(m_lo, 1.0);
        assert!(matches!(
            hilbert_bounds(&q, &v(&[-1.0, 1.0]), &v(&[1.0, 1.0])),
            Err(Error::OutsideCone(_))
        ));
        assert!(matches!(
            hilbert_bounds(&q, &v(&[1.0, 1.0]), &v(&[0.0, 0.0])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn hilbert_distance_examples() {
        let q = Cone::orthant(2);
        let d = hilbert_distance(&q, &v(&[2.0, 1.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((d.value - 2f64.ln()).abs() < 1e-15);
        assert_eq!(hilbert_distance(&q, &v(&[3.0, 3.0]), &v(&[1.0, 1.0])).unwrap().value, 0.0);
        assert!(hilbert_distance(&q, &v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap().value.is_infinite());
    }

    #[test]
    fn diameter_examples() {
        let q = Cone::orthant(2);
        assert_eq!(projective_diameter(&q, &[v(&[1.0, 1.0])]).unwrap(), 0.0);
        let d = projective_diameter(&q, &[v(&[2.0, 1.0]), v(&[1.0, 1.0]), v(&[1.0, 2.0])]).unwrap();
        assert!((d - 4f64.ln()).abs() < 1e-15);
        assert!(projective_diameter(&q, &[v(&[1.0, 0.0]), v(&[1.0, 1.0])]).unwrap().is_infinite());
        assert!(matches!(projective_diameter(&q, &[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn contraction_ratio_examples() {
        assert_eq!(contraction_ratio(0.0).unwrap(), 0.0);
        assert_eq!(contraction_ratio(f64::INFINITY).unwrap(), 1.0);
        let r = contraction_ratio(4.0 * 0.5f64.atanh()).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert!(matches!(contraction_ratio(-1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn invalid_cones_are_rejected() {
        // single halfspace: half-plane, not pointed
        assert!(Cone::from_halfspaces(vec![vec![1.0, 0.0]]).is_err());
        // opposite halfspaces: a line, not solid
        assert!(Cone::from_halfspaces(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).is_err());
        // non-simplicial 3-D cone without generators
        assert!(Cone::from_halfspaces(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ])
        .is_err());
        // generator outside a halfspace
        assert!(Cone::with_generators(
            vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])],
            vec![v(&[1.0, 0.0]), v(&[-1.0, 1.0])]
        )
        .is_err());
    }

    #[test]
    fn square_pyramid_with_explicit_generators() {
        // four facets, four extreme rays: not simplicial
        let hs = vec![
            v(&[1.0, 0.0, 1.0]),
            v(&[-1.0, 0.0, 1.0]),
            v(&[0.0, 1.0, 1.0]),
            v(&[0.0, -1.0, 1.0]),
        ];
        let gens = vec![
            v(&[1.0, 1.0, 1.0]),
            v(&[1.0, -1.0, 1.0]),
            v(&[-1.0, 1.0, 1.0]),
            v(&[-1.0, -1.0, 1.0]),
        ];
        let c = Cone::with_generators(hs, gens).unwrap();
        assert!(c.contains(&v(&[0.0, 0.0, 1.0]), true).unwrap());
        assert!(!c.is_orthant());
    }

    #[test]
    fn orthant_detection() {
        assert!(Cone::orthant(3).is_orthant());
        assert!(Cone::from_halfspaces(vec![vec![0.0, 2.0], vec![3.0, 0.0]])
            .unwrap()
            .is_orthant());
        assert!(!pendulum_cone().is_orthant());
    }

    #[test]
    fn representation_round_trip() {
        for cone in [
            pendulum_cone(),
            Cone::orthant(2),
            Cone::orthant(4),
            Cone::from_halfspaces(vec![vec![2.0, -1.0], vec![-0.5, 1.0]]).unwrap(),
            Cone::from_halfspaces(vec![
                vec![1.0, 0.2, 0.0],
                vec![0.0, 1.0, 0.3],
                vec![0.1, 0.0, 1.0],
            ])
            .unwrap(),
        ] {
            let rebuilt = cone.rebuilt_from_generators().unwrap();
            for g in cone.generators() {
                assert!(rebuilt.contains(g, false).unwrap());
                assert!(rebuilt.interior_margin(g).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cone_serializes_declaratively() {
        let c: Cone = toml::from_str("halfspaces = [[1.0, 0.0], [1.0, 1.0]]").unwrap();
        assert_eq!(c, pendulum_cone());
        let json = serde_json::to_string(&c).unwrap();
        let back: Cone = serde_json::from_str(&json).unwrap();
        assert_eq!(back.halfspaces(), c.halfspaces());
    }

    #[test]
    fn hilbert_distance_serializes_infinity() {
        let d = hilbert_distance(&Cone::orthant(2), &v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"inf\""));
        let back: HilbertDistance = serde_json::from_str(&json).unwrap();
        assert!(back.value.is_infinite());
    }

    #[test]
    fn constant_field_transport_is_identity() {
        let field = ConeField::constant(pendulum_cone());
        let g = field.transport(&v(&[0.0, 1.0]), &v(&[2.0, -1.0])).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));
        field.validate_transport(&v(&[0.0, 1.0]), &v(&[2.0, -1.0]), 1e-10).unwrap();
    }

    #[test]
    fn varying_field_without_transport_is_flagged() {
        let field = ConeField::varying(2, |_x| vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]);
        assert!(matches!(
            field.transport(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])),
            Err(Error::MissingTransport(_))
        ));
    }
}
