//! System definitions, chart topology, linearization and the prolonged system.

use crate::error::{Error, Result};
use crate::geometry::ConeField;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeKind {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordKind {
    Line,
    /// Angle with period 2π, reported in `[0, 2π)`.
    Circle,
    /// Strictly positive coordinate.
    PositiveHalfLine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartTopology {
    pub kinds: Vec<CoordKind>,
}

impl ChartTopology {
    pub fn euclidean(n: usize) -> Self {
        ChartTopology {
            kinds: vec![CoordKind::Line; n],
        }
    }

    pub fn new(kinds: Vec<CoordKind>) -> Self {
        ChartTopology { kinds }
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn has_circle(&self) -> bool {
        self.kinds.contains(&CoordKind::Circle)
    }

    /// Wraps circle coordinates into `[0, 2π)` and returns the winding count
    /// per coordinate.
    pub fn normalize(&self, x: &DVector<f64>) -> Result<(DVector<f64>, Vec<i64>)> {
        let mut out = x.clone();
        let mut wraps = vec![0i64; x.len()];
        for (i, kind) in self.kinds.iter().enumerate() {
            match kind {
                CoordKind::Line => {}
                CoordKind::Circle => {
                    let turns = (x[i] / TAU).floor();
                    let mut r = x[i] - turns * TAU;
                    let mut w = turns as i64;
                    // rem can round up to exactly TAU
                    if r >= TAU {
                        r -= TAU;
                        w += 1;
                    }
                    out[i] = r;
                    wraps[i] = w;
                }
                CoordKind::PositiveHalfLine => {
                    if x[i] <= 0.0 || x[i].is_nan() {
                        return Err(Error::LeftDomain {
                            state: x.as_slice().to_vec(),
                            coordinate: i,
                        });
                    }
                }
            }
        }
        Ok((out, wraps))
    }

    /// Chart displacement `b - a`, taking the short way around circles.
    pub fn displacement(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut d = b - a;
        for (i, kind) in self.kinds.iter().enumerate() {
            if *kind == CoordKind::Circle {
                d[i] = wrap_pi(d[i]);
            }
        }
        d
    }

    pub fn distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.slice_distance(a.as_slice(), b.as_slice())
    }

    /// [`ChartTopology::distance`] on plain slices.
    pub fn slice_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, kind) in self.kinds.iter().enumerate() {
            let mut d = b[i] - a[i];
            if *kind == CoordKind::Circle {
                d = wrap_pi(d);
            }
            acc += d * d;
        }
        acc.sqrt()
    }
}

/// Maps an angle into `(-π, π]`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > std::f64::consts::PI {
        r - TAU
    } else {
        r
    }
}

/// Right-hand side `f(x, u)` (continuous time) or next-state map (discrete time).
pub trait VectorField: Send + Sync {
    fn eval(&self, x: &DVector<f64>, u: &[f64]) -> DVector<f64>;

    /// Analytic `∂x f`, if available.
    fn jacobian(&self, _x: &DVector<f64>, _u: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Analytic `∂u f`, if available.
    fn input_jacobian(&self, _x: &DVector<f64>, _u: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Adapter turning closures into a [`VectorField`].
pub struct FnField<F, J = fn(&DVector<f64>, &[f64]) -> DMatrix<f64>> {
    f: F,
    jac: Option<J>,
}

impl<F> FnField<F>
where
    F: Fn(&DVector<f64>, &[f64]) -> DVector<f64> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnField { f, jac: None }
    }
}

impl<F, J> FnField<F, J>
where
    F: Fn(&DVector<f64>, &[f64]) -> DVector<f64> + Send + Sync,
    J: Fn(&DVector<f64>, &[f64]) -> DMatrix<f64> + Send + Sync,
{
    pub fn with_jacobian(f: F, jac: J) -> Self {
        FnField { f, jac: Some(jac) }
    }
}

impl<F, J> VectorField for FnField<F, J>
where
    F: Fn(&DVector<f64>, &[f64]) -> DVector<f64> + Send + Sync,
    J: Fn(&DVector<f64>, &[f64]) -> DMatrix<f64> + Send + Sync,
{
    fn eval(&self, x: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        (self.f)(x, u)
    }

    fn jacobian(&self, x: &DVector<f64>, u: &[f64]) -> Option<DMatrix<f64>> {
        self.jac.as_ref().map(|j| j(x, u))
    }
}

/// A smooth system with its chart topology and cone field.
#[derive(Clone)]
pub struct SystemDef {
    name: String,
    time_kind: TimeKind,
    dim: usize,
    input_dim: usize,
    field: Arc<dyn VectorField>,
    topology: ChartTopology,
    cone_field: ConeField,
    nominal_input: Vec<f64>,
}

impl fmt::Debug for SystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDef")
            .field("name", &self.name)
            .field("time_kind", &self.time_kind)
            .field("dim", &self.dim)
            .field("input_dim", &self.input_dim)
            .field("topology", &self.topology)
            .field("cone_field", &self.cone_field)
            .finish()
    }
}

impl SystemDef {
    pub fn new(
        name: impl Into<String>,
        time_kind: TimeKind,
        field: Arc<dyn VectorField>,
        topology: ChartTopology,
        cone_field: ConeField,
        input_dim: usize,
    ) -> Result<Self> {
        let dim = topology.dim();
        if dim == 0 {
            return Err(Error::InvalidSpec("system of dimension 0".into()));
        }
        if cone_field.dim() != dim {
            return Err(Error::InvalidSpec(format!(
                "cone field of dimension {} for a system of dimension {dim}",
                cone_field.dim()
            )));
        }
        Ok(SystemDef {
            name: name.into(),
            time_kind,
            dim,
            input_dim,
            field,
            topology,
            cone_field,
            nominal_input: vec![0.0; input_dim],
        })
    }

    /// Input used when the caller does not specify one (e.g. a model's `u` parameter).
    pub fn with_nominal_input(mut self, u: Vec<f64>) -> Result<Self> {
        if u.len() != self.input_dim {
            return Err(Error::InvalidSpec(format!(
                "nominal input has {} entries, expected {}",
                u.len(),
                self.input_dim
            )));
        }
        self.nominal_input = u;
        Ok(self)
    }

    /// Same dynamics with a different cone field.
    pub fn with_cone_field(mut self, cone_field: ConeField) -> Result<Self> {
        if cone_field.dim() != self.dim {
            return Err(Error::InvalidSpec("cone field dimension mismatch".into()));
        }
        self.cone_field = cone_field;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn time_kind(&self) -> TimeKind {
        self.time_kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn topology(&self) -> &ChartTopology {
        &self.topology
    }

    pub fn cone_field(&self) -> &ConeField {
        &self.cone_field
    }

    pub fn nominal_input(&self) -> &[f64] {
        &self.nominal_input
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        let x = DVector::zeros(self.dim);
        self.field.jacobian(&x, &self.nominal_input).is_some()
    }

    fn check_input(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.input_dim {
            return Err(Error::InvalidInput(format!(
                "input has {} entries, system expects {}",
                u.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "state has dimension {}, system has {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `f(x, u)`, rejecting non-finite values.
    pub fn eval(&self, x: &DVector<f64>, u: &[f64]) -> Result<DVector<f64>> {
        self.check_state(x)?;
        self.check_input(u)?;
        let fx = self.field.eval(x, u);
        if fx.len() != self.dim {
            return Err(Error::Evaluation {
                state: x.as_slice().to_vec(),
                reason: format!("field returned {} components", fx.len()),
            });
        }
        if !fx.iter().all(|v| v.is_finite()) {
            return Err(Error::Evaluation {
                state: x.as_slice().to_vec(),
                reason: "non-finite field value".into(),
            });
        }
        Ok(fx)
    }

    /// `(∂x f, ∂u f)`; central differences with step `1e-6 max(1, |x_i|)`
    /// stand in for missing analytic derivatives.
    pub fn linearize(&self, x: &DVector<f64>, u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let a = self.state_jacobian(x, u)?;
        let b = self.input_jacobian(x, u)?;
        Ok((a, b))
    }

    pub fn state_jacobian(&self, x: &DVector<f64>, u: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        self.check_input(u)?;
        let a = match self.field.jacobian(x, u) {
            Some(a) => a,
            None => {
                self.eval(x, u)?;
                self.fd_state_jacobian(x, u)?
            }
        };
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::Evaluation {
                state: x.as_slice().to_vec(),
                reason: "non-finite Jacobian entry".into(),
            });
        }
        Ok(a)
    }

    pub fn input_jacobian(&self, x: &DVector<f64>, u: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        self.check_input(u)?;
        if self.input_dim == 0 {
            return Ok(DMatrix::zeros(self.dim, 0));
        }
        if let Some(b) = self.field.input_jacobian(x, u) {
            return Ok(b);
        }
        let mut b = DMatrix::zeros(self.dim, self.input_dim);
        let mut up = u.to_vec();
        for j in 0..self.input_dim {
            let h = 1e-6 * u[j].abs().max(1.0);
            up[j] = u[j] + h;
            let fp = self.eval(x, &up)?;
            up[j] = u[j] - h;
            let fm = self.eval(x, &up)?;
            up[j] = u[j];
            b.set_column(j, &((fp - fm) / (2.0 * h)));
        }
        Ok(b)
    }

    /// Central-difference Jacobian, used when no analytic one is supplied.
    pub fn fd_state_jacobian(&self, x: &DVector<f64>, u: &[f64]) -> Result<DMatrix<f64>> {
        let mut a = DMatrix::zeros(self.dim, self.dim);
        let mut xp = x.clone();
        for j in 0..self.dim {
            let h = 1e-6 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            let fp = self.eval(&xp, u)?;
            xp[j] = x[j] - h;
            let fm = self.eval(&xp, u)?;
            xp[j] = x[j];
            a.set_column(j, &((fp - fm) / (2.0 * h)));
        }
        Ok(a)
    }

    /// Largest entrywise gap between the supplied Jacobian and central
    /// differences, relative to `max(1e-5, 1e-4 ‖∂x f‖)`. Values ≤ 1 pass.
    pub fn jacobian_consistency(&self, samples: &[DVector<f64>], u: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for x in samples {
            let a = self.state_jacobian(x, u)?;
            let fd = self.fd_state_jacobian(x, u)?;
            let allowed = (1e-4 * a.norm()).max(1e-5);
            worst = worst.max((a - fd).amax() / allowed);
        }
        Ok(worst)
    }

    /// Right-hand side of the prolonged system: `(f(x,u), ∂x f dx + ∂u f du)`.
    /// For discrete systems this is the next `(x, dx)` pair.
    pub fn prolonged_rhs(
        &self,
        ps: &ProlongedState,
        u: &[f64],
        du: &[f64],
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        if ps.dx.len() != self.dim {
            return Err(Error::InvalidInput("tangent vector dimension mismatch".into()));
        }
        if du.len() != self.input_dim {
            return Err(Error::InvalidInput(format!(
                "input tangent has {} entries, expected {}",
                du.len(),
                self.input_dim
            )));
        }
        let xdot = self.eval(&ps.x, u)?;
        let a = self.state_jacobian(&ps.x, u)?;
        let mut dxdot = a * &ps.dx;
        if self.input_dim > 0 && du.iter().any(|d| *d != 0.0) {
            let b = self.input_jacobian(&ps.x, u)?;
            dxdot += b * DVector::from_column_slice(du);
        }
        Ok((xdot, dxdot))
    }

    pub fn chart_normalize(&self, x: &DVector<f64>) -> Result<(DVector<f64>, Vec<i64>)> {
        self.check_state(x)?;
        self.topology.normalize(x)
    }
}

/// Base point together with a tangent vector at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProlongedState {
    #[serde(with = "crate::serde_ext::dvec")]
    pub x: DVector<f64>,
    #[serde(with = "crate::serde_ext::dvec")]
    pub dx: DVector<f64>,
}

impl ProlongedState {
    pub fn new(x: DVector<f64>, dx: DVector<f64>) -> Self {
        ProlongedState { x, dx }
    }
}

pub fn linearize(sys: &SystemDef, x: &DVector<f64>, u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    sys.linearize(x, u)
}

pub fn prolonged_rhs(
    sys: &SystemDef,
    ps: &ProlongedState,
    u: &[f64],
    du: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    sys.prolonged_rhs(ps, u, du)
}

pub fn chart_normalize(sys: &SystemDef, x: &DVector<f64>) -> Result<(DVector<f64>, Vec<i64>)> {
    sys.chart_normalize(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Cone;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn linear(a: DMatrix<f64>, analytic: bool) -> SystemDef {
        let n = a.nrows();
        let a1 = a.clone();
        let field: Arc<dyn VectorField> = if analytic {
            let a2 = a.clone();
            Arc::new(FnField::with_jacobian(
                move |x: &DVector<f64>, _u: &[f64]| &a1 * x,
                move |_x: &DVector<f64>, _u: &[f64]| a2.clone(),
            ))
        } else {
            Arc::new(FnField::new(move |x: &DVector<f64>, _u: &[f64]| &a1 * x))
        };
        SystemDef::new(
            "linear",
            TimeKind::Continuous,
            field,
            ChartTopology::euclidean(n),
            ConeField::constant(Cone::orthant(n)),
            0,
        )
        .unwrap()
    }

    #[test]
    fn linearization_of_linear_map_is_constant() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        for analytic in [true, false] {
            let sys = linear(a.clone(), analytic);
            for x in [v(&[0.0, 0.0]), v(&[3.0, -7.0]), v(&[1e3, 0.5])] {
                let (ja, jb) = sys.linearize(&x, &[]).unwrap();
                assert!((ja - &a).amax() < 1e-6);
                assert_eq!(jb.ncols(), 0);
            }
        }
    }

    #[test]
    fn harmonic_prolonged_rhs() {
        let sys = linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), true);
        let ps = ProlongedState::new(v(&[1.0, 0.0]), v(&[0.0, 1.0]));
        let (xdot, dxdot) = sys.prolonged_rhs(&ps, &[], &[]).unwrap();
        assert_eq!(xdot, v(&[0.0, -1.0]));
        assert_eq!(dxdot, v(&[1.0, 0.0]));
        let zero = ProlongedState::new(v(&[0.3, -2.0]), v(&[0.0, 0.0]));
        assert_eq!(sys.prolonged_rhs(&zero, &[], &[]).unwrap().1, v(&[0.0, 0.0]));
    }

    #[test]
    fn circle_normalization() {
        let topo = ChartTopology::new(vec![CoordKind::Circle, CoordKind::Line]);
        let (x, w) = topo.normalize(&v(&[TAU + 0.1, 5.0])).unwrap();
        assert!((x[0] - 0.1).abs() < 1e-12);
        assert_eq!(w, vec![1, 0]);
        let (x, w) = topo.normalize(&v(&[-0.1, 5.0])).unwrap();
        assert!((x[0] - (TAU - 0.1)).abs() < 1e-12);
        assert_eq!(w[0], -1);
        let (x, _) = topo.normalize(&v(&[-1e-18, 0.0])).unwrap();
        assert!(x[0] >= 0.0 && x[0] < TAU);
    }

    #[test]
    fn positive_half_line_violation() {
        let topo = ChartTopology::new(vec![CoordKind::Circle, CoordKind::PositiveHalfLine]);
        assert!(matches!(
            topo.normalize(&v(&[0.0, -0.5])),
            Err(Error::LeftDomain { coordinate: 1, .. })
        ));
    }

    #[test]
    fn non_finite_field_is_an_evaluation_error() {
        let sys = SystemDef::new(
            "bad",
            TimeKind::Continuous,
            Arc::new(FnField::new(|x: &DVector<f64>, _u: &[f64]| x.map(|v| 1.0 / v))),
            ChartTopology::euclidean(1),
            ConeField::constant(Cone::orthant(1)),
            0,
        )
        .unwrap();
        assert!(matches!(sys.eval(&v(&[0.0]), &[]), Err(Error::Evaluation { .. })));
        assert!(matches!(sys.linearize(&v(&[0.0]), &[]), Err(Error::Evaluation { .. })));
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let sys = linear(DMatrix::identity(2, 2), true);
        assert!(matches!(sys.eval(&v(&[0.0, 0.0]), &[1.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn displacement_takes_short_way() {
        let topo = ChartTopology::new(vec![CoordKind::Circle]);
        let d = topo.displacement(&v(&[0.1]), &v(&[TAU - 0.1]));
        assert!((d[0] + 0.2).abs() < 1e-12);
    }
}
