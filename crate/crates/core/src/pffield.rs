//! Perron-Frobenius vector field: the limit direction of cone-interior
//! tangent vectors pushed forward from the far past.
//!
//! For a state `x` the backward trajectory `z(-W)` is integrated once and
//! stored. A probe and the generators of `K(z(-W))` are then pushed forward
//! along the stored path, and the window `W` is doubled until successive
//! results agree in the Hilbert metric of `K(x)`.

use crate::dynsys::{SystemDef, TimeKind};
use crate::error::{Error, Result};
use crate::geometry::{hilbert_distance, projective_diameter, Cone};
use crate::integrate::{fmt_f64, DEFAULT_STEP, STATE_LIMIT};
use crate::positivity::INTERIOR_MARGIN;
use crate::sampling::StateBox;
use crate::serde_ext::{dvec, ext_real};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSettings {
    /// Initial backward window (time units, or steps for maps).
    pub window: f64,
    /// Hilbert distance between successive windows that counts as converged.
    pub tol: f64,
    pub step: f64,
    pub max_doublings: u32,
}

impl Default for PfSettings {
    fn default() -> Self {
        PfSettings {
            window: 1.0,
            tol: 1e-6,
            step: DEFAULT_STEP,
            max_doublings: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PFVector {
    #[serde(with = "dvec")]
    pub x: DVector<f64>,
    #[serde(with = "dvec")]
    pub w: DVector<f64>,
    pub residual_hilbert: f64,
    pub window: f64,
}

/// Backward trajectory, grown on demand. `states[k]` is `z(-k h)`.
struct BackwardPath<'a> {
    sys: &'a SystemDef,
    u: &'a [f64],
    h: f64,
    states: Vec<DVector<f64>>,
    stop: Option<Error>,
}

impl<'a> BackwardPath<'a> {
    fn new(sys: &'a SystemDef, x: &DVector<f64>, u: &'a [f64], h: f64) -> Result<Self> {
        let (x, _) = sys.chart_normalize(x)?;
        Ok(BackwardPath {
            sys,
            u,
            h,
            states: vec![x],
            stop: None,
        })
    }

    fn back_step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (sys, u) = (self.sys, self.u);
        let y = match sys.time_kind() {
            TimeKind::Continuous => {
                let h = -self.h;
                let k1 = sys.eval(x, u)?;
                let k2 = sys.eval(&(x + &k1 * (0.5 * h)), u)?;
                let k3 = sys.eval(&(x + &k2 * (0.5 * h)), u)?;
                let k4 = sys.eval(&(x + &k3 * h), u)?;
                x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
            }
            TimeKind::Discrete => invert_map(sys, x, u)?,
        };
        if !y.iter().all(|v| v.is_finite()) || y.norm() > STATE_LIMIT {
            return Err(Error::Diverged {
                time: -(self.states.len() as f64) * self.h,
                reason: "backward flow escaped".into(),
            });
        }
        Ok(sys.chart_normalize(&y)?.0)
    }

    /// Extends the path to `n` steps if possible; returns the steps available.
    fn extend_to(&mut self, n: usize) -> usize {
        while self.stop.is_none() && self.states.len() <= n {
            let last = self.states.last().unwrap();
            match self.back_step(last) {
                Ok(y) => self.states.push(y),
                Err(e) => self.stop = Some(e),
            }
        }
        (self.states.len() - 1).min(n)
    }

    /// Pushes the columns of `v` from `z(-n h)` to `z(0)`, renormalizing.
    fn push(&self, n: usize, mut v: DMatrix<f64>) -> Result<DMatrix<f64>> {
        let sys = self.sys;
        let u = self.u;
        let topo = sys.topology();
        let h = self.h;
        for k in (1..=n).rev() {
            let a = &self.states[k];
            v = match sys.time_kind() {
                TimeKind::Discrete => sys.state_jacobian(a, u)? * v,
                TimeKind::Continuous => {
                    let b = a + topo.displacement(a, &self.states[k - 1]);
                    let (fa, fb) = (sys.eval(a, u)?, sys.eval(&b, u)?);
                    // cubic Hermite midpoint of the base trajectory
                    let m = (a + &b) * 0.5 + (fa - fb) * (h / 8.0);
                    let ja = sys.state_jacobian(a, u)?;
                    let jm = sys.state_jacobian(&m, u)?;
                    let jb = sys.state_jacobian(&b, u)?;
                    let k1 = &ja * &v;
                    let k2 = &jm * (&v + &k1 * (0.5 * h));
                    let k3 = &jm * (&v + &k2 * (0.5 * h));
                    let k4 = &jb * (&v + &k3 * h);
                    &v + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
                }
            };
            for mut col in v.column_iter_mut() {
                let norm = col.norm();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(Error::Diverged {
                        time: -(k as f64) * h,
                        reason: "pushed tangent vector degenerated".into(),
                    });
                }
                col /= norm;
            }
        }
        Ok(v)
    }
}

/// Solves `f(y) = x` by Newton iteration started at `x`.
fn invert_map(sys: &SystemDef, x: &DVector<f64>, u: &[f64]) -> Result<DVector<f64>> {
    let topo = sys.topology();
    let mut y = x.clone();
    for _ in 0..50 {
        let r = topo.displacement(x, &sys.eval(&y, u)?);
        if r.norm() <= 1e-13 * (1.0 + x.norm()) {
            return Ok(y);
        }
        let j = sys.state_jacobian(&y, u)?;
        let dy = j.lu().solve(&r).ok_or_else(|| Error::Diverged {
            time: 0.0,
            reason: "map Jacobian is singular, cannot step backward".into(),
        })?;
        y -= dy;
        if !y.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::Diverged {
        time: 0.0,
        reason: "Newton inversion of the map did not converge".into(),
    })
}

/// Unit Perron-Frobenius vector at `x` for the constant input `u`.
pub fn pf_vector_at(sys: &SystemDef, x: &DVector<f64>, u: &[f64], settings: &PfSettings) -> Result<PFVector> {
    if !(settings.window > 0.0) || !(settings.tol > 0.0) {
        return Err(Error::InvalidInput("window and tol must be positive".into()));
    }
    let discrete = sys.time_kind() == TimeKind::Discrete;
    let h = if discrete { 1.0 } else { settings.step };
    let mut path = BackwardPath::new(sys, x, u, h)?;
    let x0 = path.states[0].clone();
    let cone_x = sys.cone_field().cone_at(&x0)?;

    let mut prev: Option<DVector<f64>> = None;
    let mut prev_diam_inf = false;
    let mut prev_dist = f64::INFINITY;
    let mut prev_steps = 0usize;
    let mut plateau = 0;
    for j in 0..=settings.max_doublings {
        let want = ((settings.window * 2f64.powi(j as i32)) / h).round().max(1.0) as usize;
        let n = path.extend_to(want);
        let clipped = n < want;
        if n == 0 || n <= prev_steps {
            let reason = path
                .stop
                .as_ref()
                .map_or_else(|| "no backward horizon".to_string(), |e| e.to_string());
            return Err(Error::Diverged {
                time: -(n as f64) * h,
                reason: format!("backward window exhausted before convergence: {reason}"),
            });
        }
        prev_steps = n;
        let z = &path.states[n];
        let cone_z = sys.cone_field().cone_at(z)?;
        let mut cols = vec![cone_z.interior_probe()];
        cols.extend(cone_z.generators().iter().cloned());
        let pushed = path.push(n, DMatrix::from_columns(&cols))?;
        let w = cone_x.orient(&pushed.column(0).into_owned()).normalize();
        let gens: Vec<DVector<f64>> = (1..pushed.ncols())
            .map(|c| cone_x.orient(&pushed.column(c).into_owned()))
            .collect();
        let diameter = image_diameter(&cone_x, &gens);
        let dist = match &prev {
            Some(p) => hilbert_distance(&cone_x, p, &w).map_or(f64::INFINITY, |d| d.value),
            None => f64::INFINITY,
        };
        let window = n as f64 * h;
        // the limit lies inside the pushed cone, so a small image certifies it too
        if (dist < settings.tol || diameter < settings.tol) && diameter.is_finite() {
            if !cone_x.contains(&w, true)? {
                return Err(Error::NonContractive(format!("limit direction {:?} is on the cone boundary", w.as_slice())));
            }
            return Ok(PFVector {
                x: x0,
                w,
                residual_hilbert: dist.min(diameter),
                window,
            });
        }
        if diameter.is_infinite() && prev_diam_inf {
            return Err(Error::NonContractive(format!(
                "cone image keeps infinite Hilbert diameter up to window {window}"
            )));
        }
        if dist.is_finite() && dist >= 0.5 * prev_dist && dist > settings.tol {
            plateau += 1;
            if plateau >= 2 {
                return Err(Error::NonContractive(format!(
                    "successive distances plateau at {dist:e} (window {window})"
                )));
            }
        } else {
            plateau = 0;
        }
        if clipped {
            let reason = path.stop.as_ref().map_or_else(String::new, |e| e.to_string());
            return Err(Error::Diverged {
                time: -window,
                reason: format!("not converged within the available backward horizon ({dist:e}): {reason}"),
            });
        }
        prev_diam_inf = diameter.is_infinite();
        prev_dist = dist;
        prev = Some(w);
    }
    Err(Error::NonContractive(format!(
        "no convergence after {} window doublings",
        settings.max_doublings
    )))
}

fn image_diameter(cone: &Cone, gens: &[DVector<f64>]) -> f64 {
    if gens.iter().any(|g| cone.interior_margin(g) < INTERIOR_MARGIN) {
        return f64::INFINITY;
    }
    projective_diameter(cone, gens).unwrap_or(f64::INFINITY)
}

/// Error tag and message for a failed grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfCell {
    pub index: Vec<usize>,
    /// Grid node in box coordinates (before chart wrapping).
    pub node: Vec<f64>,
    pub result: std::result::Result<PFVector, CellError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfGrid {
    pub region: StateBox,
    pub resolution: Vec<usize>,
    pub periodic: Vec<bool>,
    pub cells: Vec<PfCell>,
}

impl PfGrid {
    pub fn success_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().filter(|c| c.result.is_ok()).count() as f64 / self.cells.len() as f64
    }

    pub fn vectors(&self) -> impl Iterator<Item = &PFVector> {
        self.cells.iter().filter_map(|c| c.result.as_ref().ok())
    }

    /// `x_1..x_n, w_1..w_n, residual, window`; failed cells are omitted.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.region.dim();
        let mut header: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
        header.extend((1..=n).map(|i| format!("w_{i}")));
        header.push("residual".into());
        header.push("window".into());
        writeln!(w, "{}", header.join(","))?;
        for p in self.vectors() {
            let mut row: Vec<String> = p.x.iter().map(|v| fmt_f64(*v)).collect();
            row.extend(p.w.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(p.residual_hilbert));
            row.push(fmt_f64(p.window));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    fn spacing(&self, axis: usize) -> f64 {
        let (a, b) = (self.region.lo[axis], self.region.hi[axis]);
        let r = self.resolution[axis];
        if self.periodic[axis] {
            (b - a) / r as f64
        } else if r > 1 {
            (b - a) / (r - 1) as f64
        } else {
            f64::INFINITY
        }
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.resolution)
            .fold(0, |acc, (i, r)| acc * r + i)
    }

    fn w_at(&self, idx: &[usize]) -> Result<&DVector<f64>> {
        match &self.cells[self.flat(idx)].result {
            Ok(p) => Ok(&p.w),
            Err(e) => Err(Error::NeedsDenserGrid(format!("cell {idx:?} failed: {}", e.kind))),
        }
    }

    /// Fractional grid coordinate of `x` along `axis`.
    fn coord(&self, axis: usize, x: f64) -> f64 {
        let s = self.spacing(axis);
        let mut c = (x - self.region.lo[axis]) / s;
        if self.periodic[axis] {
            c = c.rem_euclid(self.resolution[axis] as f64);
        }
        c
    }

    /// Multilinear interpolation of the sampled field, renormalized.
    pub fn interpolate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.region.dim();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for i in 0..n {
            let c = self.coord(i, x[i]);
            let r = self.resolution[i];
            let upper = if self.periodic[i] { r as f64 } else { (r - 1) as f64 };
            if !(c >= -1e-9 && c <= upper + 1e-9) || (!self.periodic[i] && r < 2) {
                return Err(Error::NeedsDenserGrid(format!("{:?} lies outside the sampled grid", x.as_slice())));
            }
            let c = c.clamp(0.0, upper);
            let b = (c.floor() as usize).min(if self.periodic[i] { r - 1 } else { r - 2 });
            base[i] = b;
            frac[i] = c - b as f64;
        }
        let mut acc = DVector::zeros(n);
        for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut idx = base.clone();
            for i in 0..n {
                if corner >> i & 1 == 1 {
                    weight *= frac[i];
                    idx[i] = (idx[i] + 1) % self.resolution[i];
                } else {
                    weight *= 1.0 - frac[i];
                }
            }
            if weight != 0.0 {
                acc += self.w_at(&idx)? * weight;
            }
        }
        Ok(acc.normalize())
    }
}

pub fn pf_field_on_grid(
    sys: &SystemDef,
    u: &[f64],
    region: &StateBox,
    resolution: &[usize],
    settings: &PfSettings,
) -> Result<PfGrid> {
    if region.dim() != sys.dim() || resolution.len() != sys.dim() || resolution.contains(&0) {
        return Err(Error::InvalidInput("grid box and resolution must match the state dimension".into()));
    }
    let kinds = &sys.topology().kinds;
    let periodic: Vec<bool> = (0..region.dim()).map(|i| region.is_periodic_axis(i, kinds)).collect();
    let axes: Vec<Vec<f64>> = (0..region.dim())
        .map(|i| region.axis_nodes(i, resolution[i], periodic[i]))
        .collect();
    let total: usize = resolution.iter().product();
    let cells = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut idx = vec![0; resolution.len()];
            let mut rem = flat;
            for i in (0..resolution.len()).rev() {
                idx[i] = rem % resolution[i];
                rem /= resolution[i];
            }
            let node: Vec<f64> = idx.iter().enumerate().map(|(i, &k)| axes[i][k]).collect();
            let result = pf_vector_at(sys, &DVector::from_vec(node.clone()), u, settings).map_err(|e| CellError {
                kind: e.kind().to_string(),
                message: e.to_string(),
            });
            PfCell {
                index: idx,
                node,
                result,
            }
        })
        .collect();
    Ok(PfGrid {
        region: region.clone(),
        resolution: resolution.to_vec(),
        periodic,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PFResidual {
    #[serde(with = "dvec")]
    pub x: DVector<f64>,
    pub pde_residual: f64,
    #[serde(with = "ext_real")]
    pub lambda: f64,
}

/// Largest grid spacing accepted for finite differences of `w`.
pub const MAX_RESIDUAL_SPACING: f64 = 0.1;

/// Defect of `[dw] f = [df] w - lambda w` at the grid node nearest `x`
/// (continuous), or of `w(f(x)) = lambda [df] w` (discrete).
pub fn pf_residual(sys: &SystemDef, u: &[f64], field: &PfGrid, x: &DVector<f64>) -> Result<PFResidual> {
    let n = sys.dim();
    if field.region.dim() != n || x.len() != n {
        return Err(Error::InvalidInput("field and state dimensions differ".into()));
    }
    let mut idx = vec![0usize; n];
    for i in 0..n {
        let s = field.spacing(i);
        if !(s <= MAX_RESIDUAL_SPACING) {
            return Err(Error::NeedsDenserGrid(format!(
                "spacing {s} along axis {} exceeds {MAX_RESIDUAL_SPACING}",
                i + 1
            )));
        }
        let c = field.coord(i, x[i]).round();
        let r = field.resolution[i] as f64;
        if c < 0.0 || c > r - 1.0 + if field.periodic[i] { 1.0 } else { 0.0 } {
            return Err(Error::NeedsDenserGrid(format!("{:?} lies outside the sampled grid", x.as_slice())));
        }
        idx[i] = (c as usize) % field.resolution[i];
    }
    let node = DVector::from_vec(field.cells[field.flat(&idx)].node.clone());
    let w = field.w_at(&idx)?.clone();
    let a = sys.state_jacobian(&node, u)?;
    let aw = &a * &w;

    match sys.time_kind() {
        TimeKind::Continuous => {
            let mut dw = DMatrix::zeros(n, n);
            for i in 0..n {
                let (r, periodic) = (field.resolution[i], field.periodic[i]);
                let step = |k: usize, up: bool| -> Option<usize> {
                    match (up, periodic) {
                        (true, true) => Some((k + 1) % r),
                        (false, true) => Some((k + r - 1) % r),
                        (true, false) => (k + 1 < r).then_some(k + 1),
                        (false, false) => k.checked_sub(1),
                    }
                };
                let mut hi = idx.clone();
                let mut lo = idx.clone();
                let (up, down) = (step(idx[i], true), step(idx[i], false));
                let s = field.spacing(i);
                let (wp, wm, span) = match (up, down) {
                    (Some(p), Some(m)) => {
                        hi[i] = p;
                        lo[i] = m;
                        (field.w_at(&hi)?.clone(), field.w_at(&lo)?.clone(), 2.0 * s)
                    }
                    (Some(p), None) => {
                        hi[i] = p;
                        (field.w_at(&hi)?.clone(), w.clone(), s)
                    }
                    (None, Some(m)) => {
                        lo[i] = m;
                        (w.clone(), field.w_at(&lo)?.clone(), s)
                    }
                    (None, None) => {
                        return Err(Error::NeedsDenserGrid(format!("axis {} has a single node", i + 1)))
                    }
                };
                dw.set_column(i, &((wp - wm) / span));
            }
            let f = sys.eval(&node, u)?;
            let dwf = &dw * &f;
            let lambda = w.dot(&aw) - w.dot(&dwf);
            let defect = dwf - aw + &w * lambda;
            Ok(PFResidual {
                x: node,
                pde_residual: defect.norm(),
                lambda,
            })
        }
        TimeKind::Discrete => {
            let fx = sys.eval(&node, u)?;
            let w_next = field.interpolate(&fx)?;
            let lambda = 1.0 / aw.norm();
            let defect = w_next - &aw * lambda;
            Ok(PFResidual {
                x: node,
                pde_residual: defect.norm(),
                lambda,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{ChartTopology, FnField};
    use crate::geometry::ConeField;
    use crate::models::{make_model, ModelName, ModelSpec};
    use std::f64::consts::{FRAC_1_SQRT_2, TAU};
    use std::sync::Arc;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn linear_model() -> SystemDef {
        make_model(&ModelSpec::positive_linear([[2.0, 1.0], [1.0, 2.0]])).unwrap()
    }

    #[test]
    fn linear_pf_is_perron_vector() {
        let sys = linear_model();
        for x in [v(&[1.0, -0.5]), v(&[0.0, 0.0]), v(&[-2.0, 3.0])] {
            let p = pf_vector_at(&sys, &x, &[], &PfSettings::default()).unwrap();
            assert!((p.w.clone() - v(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])).amax() < 1e-8, "{:?}", p.w);
            assert!((p.w.norm() - 1.0).abs() < 1e-12);
            assert!(p.residual_hilbert < 1e-6);
        }
    }

    #[test]
    fn oscillator_is_non_contractive() {
        let sys = make_model(&ModelSpec::new(ModelName::HarmonicOscillatorRotatingCone)).unwrap();
        let e = pf_vector_at(&sys, &v(&[1.0, 0.0]), &[], &PfSettings::default()).unwrap_err();
        assert!(matches!(e, Error::NonContractive(_)), "{e}");
    }

    #[test]
    fn pendulum_pf_is_interior() {
        let sys = make_model(&ModelSpec::pendulum(3.0, 0.0)).unwrap();
        let settings = PfSettings {
            tol: 1e-5,
            ..PfSettings::default()
        };
        let p = pf_vector_at(&sys, &v(&[0.0, 0.0]), &[0.0], &settings).unwrap();
        let cone = sys.cone_field().cone_at(&p.x).unwrap();
        assert!(cone.contains(&p.w, true).unwrap());
        // at the equilibrium w is the slow eigenvector of [[0,1],[-1,-3]]
        let slow = (-3.0 + 5f64.sqrt()) / 2.0;
        let e = v(&[1.0, slow]).normalize();
        assert!((p.w - e).amax() < 1e-5);
    }

    #[test]
    fn single_cell_grid_matches_point() {
        let sys = linear_model();
        let region = StateBox::new(vec![-1.0, -1.0], vec![1.0, 3.0]).unwrap();
        let g = pf_field_on_grid(&sys, &[], &region, &[1, 1], &PfSettings::default()).unwrap();
        assert_eq!(g.cells.len(), 1);
        let p = pf_vector_at(&sys, &v(&[0.0, 1.0]), &[], &PfSettings::default()).unwrap();
        assert_eq!(g.cells[0].result.as_ref().unwrap(), &p);
    }

    #[test]
    fn linear_grid_is_constant_and_residual_vanishes() {
        let sys = linear_model();
        let region = StateBox::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
        let settings = PfSettings {
            tol: 1e-12,
            ..PfSettings::default()
        };
        let g = pf_field_on_grid(&sys, &[], &region, &[11, 11], &settings).unwrap();
        assert_eq!(g.success_fraction(), 1.0);
        let w0 = g.vectors().next().unwrap().w.clone();
        for p in g.vectors() {
            assert!((&p.w - &w0).amax() <= 1e-12);
        }
        let r = pf_residual(&sys, &[], &g, &v(&[0.1, -0.2])).unwrap();
        assert!(r.pde_residual < 1e-10, "{}", r.pde_residual);
        assert!((r.lambda - 3.0).abs() < 1e-10);

        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x_1,x_2,w_1,w_2,residual,window\n"));
        assert_eq!(text.lines().count(), 122);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let sys = linear_model();
        let region = StateBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let g = pf_field_on_grid(&sys, &[], &region, &[3, 3], &PfSettings::default()).unwrap();
        assert!(matches!(
            pf_residual(&sys, &[], &g, &v(&[0.0, 0.0])),
            Err(Error::NeedsDenserGrid(_))
        ));
    }

    #[test]
    fn boundary_eigenvector_gives_no_field() {
        let sys = make_model(&ModelSpec::positive_linear([[1.0, 0.0], [0.0, -1.0]])).unwrap();
        let region = StateBox::new(vec![-0.1, -0.1], vec![0.1, 0.1]).unwrap();
        let settings = PfSettings {
            tol: 1e-12,
            ..PfSettings::default()
        };
        let g = pf_field_on_grid(&sys, &[], &region, &[5, 5], &settings).unwrap();
        // the dominant axis e1 lies on the orthant boundary
        assert_eq!(g.success_fraction(), 0.0);
        assert!(g.cells.iter().all(|c| c.result.as_ref().unwrap_err().kind == "NonContractive"));
    }

    #[test]
    fn discrete_linear_map() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let m2 = m.clone();
        let sys = SystemDef::new(
            "map",
            TimeKind::Discrete,
            Arc::new(FnField::with_jacobian(
                move |x: &DVector<f64>, _u: &[f64]| &m * x,
                move |_x: &DVector<f64>, _u: &[f64]| m2.clone(),
            )),
            ChartTopology::euclidean(2),
            ConeField::constant(Cone::orthant(2)),
            0,
        )
        .unwrap();
        let settings = PfSettings {
            window: 4.0,
            tol: 1e-12,
            ..PfSettings::default()
        };
        let p = pf_vector_at(&sys, &v(&[0.3, 0.2]), &[], &settings).unwrap();
        assert!((p.w.clone() - v(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])).amax() < 1e-10);
        let region = StateBox::new(vec![-0.2, -0.2], vec![0.2, 0.2]).unwrap();
        let g = pf_field_on_grid(&sys, &[], &region, &[5, 5], &settings).unwrap();
        let r = pf_residual(&sys, &[], &g, &v(&[0.0, 0.0])).unwrap();
        assert!(r.pde_residual < 1e-10);
        assert!((r.lambda - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn periodic_grid_interpolation_wraps() {
        let sys = make_model(&ModelSpec::pendulum(3.0, 0.0)).unwrap();
        let region = StateBox::new(vec![0.0, -0.1], vec![TAU, 0.1]).unwrap();
        let settings = PfSettings {
            tol: 1e-4,
            ..PfSettings::default()
        };
        let g = pf_field_on_grid(&sys, &[0.0], &region, &[8, 2], &settings).unwrap();
        assert!(g.periodic[0] && !g.periodic[1]);
        let a = g.interpolate(&v(&[TAU - 1e-9, 0.0])).unwrap();
        let b = g.interpolate(&v(&[0.0, 0.0])).unwrap();
        assert!((a - b).amax() < 1e-6);
    }
}
