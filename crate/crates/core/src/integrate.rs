//! Fixed-step flows for the base, prolonged and matrix-variational dynamics.
//!
//! Continuous systems use classical RK4 with a fixed step; the base state and
//! any tangent vectors are advanced as one stacked state so that both see the
//! same discretization. Discrete systems iterate the map and its Jacobian.

use crate::dynsys::{SystemDef, TimeKind};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::io::{self, Write};
use std::sync::Arc;

/// Default RK4 step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Base states with a larger norm abort the run.
pub const STATE_LIMIT: f64 = 1e8;

/// Tangent vectors with a larger norm abort a run without renormalization.
pub const TANGENT_LIMIT: f64 = 1e12;

/// Input applied during integration.
#[derive(Clone)]
pub enum Input {
    Constant(Vec<f64>),
    /// Time-varying input `u(t)`; only the integrators accept it.
    Signal(Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>),
}

impl Input {
    pub fn none() -> Self {
        Input::Constant(Vec::new())
    }

    pub fn at(&self, t: f64) -> Cow<'_, [f64]> {
        match self {
            Input::Constant(u) => Cow::Borrowed(u.as_slice()),
            Input::Signal(f) => Cow::Owned(f(t)),
        }
    }
}

impl From<&[f64]> for Input {
    fn from(u: &[f64]) -> Self {
        Input::Constant(u.to_vec())
    }
}

impl From<Vec<f64>> for Input {
    fn from(u: Vec<f64>) -> Self {
        Input::Constant(u)
    }
}

/// Sampled solution. Circle coordinates are stored in `[0, 2π)` with the
/// accumulated winding count alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub wrap_counts: Vec<Vec<i64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn state(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.states[i])
    }

    pub fn last_state(&self) -> DVector<f64> {
        self.state(self.len() - 1)
    }

    /// State with circle coordinates unwound by their winding counts.
    pub fn unwrapped(&self, i: usize) -> DVector<f64> {
        let mut x = self.state(i);
        for (j, w) in self.wrap_counts[i].iter().enumerate() {
            x[j] += *w as f64 * std::f64::consts::TAU;
        }
        x
    }

    /// Samples with `t >= t_from`.
    pub fn tail_from(&self, t_from: f64) -> Trajectory {
        let start = self.times.partition_point(|t| *t < t_from);
        Trajectory {
            times: self.times[start..].to_vec(),
            states: self.states[start..].to_vec(),
            wrap_counts: self.wrap_counts[start..].to_vec(),
        }
    }

    /// CSV with header `t,x_1..x_n,wrap_1..wrap_n`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=n).map(|i| format!("wrap_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[i])];
            row.extend(self.states[i].iter().map(|v| fmt_f64(*v)));
            row.extend(self.wrap_counts[i].iter().map(|c| c.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Output of [`variational_flow`].
#[derive(Debug, Clone)]
pub struct VariationalRun {
    pub trajectory: Trajectory,
    pub tangents: Vec<DVector<f64>>,
    /// Accumulated log of the scale factors removed by renormalization;
    /// the total growth of `|dx|` is `exp(log_growth)`.
    pub log_growth: f64,
}

/// `Psi(t, t0)`, the fundamental solution of the variational equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundamentalMatrix {
    pub t0: f64,
    pub t: f64,
    #[serde(with = "matrix_rows")]
    pub psi: DMatrix<f64>,
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        Ok(DMatrix::from_row_iterator(n, m, rows.into_iter().flatten()))
    }
}

/// Number of fixed steps covering `[t0, t1]` and the step actually used.
/// The step is shrunk slightly when `h` does not divide the span.
pub fn step_plan(t0: f64, t1: f64, h: f64) -> Result<(usize, f64)> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("step {h} must be positive")));
    }
    if !t0.is_finite() || !t1.is_finite() || t1 < t0 {
        return Err(Error::InvalidInput(format!("bad time span [{t0}, {t1}]")));
    }
    let span = t1 - t0;
    if span == 0.0 {
        return Ok((0, h));
    }
    let ratio = span / h;
    let n = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
        ratio.round()
    } else {
        ratio.ceil()
    } as usize;
    Ok((n, span / n as f64))
}

/// Joint integrator for a base state and a block of tangent vectors.
pub struct JointFlow<'a> {
    sys: &'a SystemDef,
    input: &'a Input,
    h: f64,
    t: f64,
    x: DVector<f64>,
    wraps: Vec<i64>,
    tangents: DMatrix<f64>,
    renormalize: bool,
    log_growth: Vec<f64>,
}

impl<'a> JointFlow<'a> {
    /// `tangents` holds one tangent vector per column (possibly zero columns).
    pub fn new(
        sys: &'a SystemDef,
        x0: &DVector<f64>,
        tangents: DMatrix<f64>,
        input: &'a Input,
        t0: f64,
        h: f64,
        renormalize: bool,
    ) -> Result<Self> {
        if tangents.nrows() != sys.dim() {
            return Err(Error::InvalidInput("tangent block has the wrong row count".into()));
        }
        if renormalize && tangents.column_iter().any(|c| c.norm() == 0.0) {
            return Err(Error::InvalidInput("renormalization needs nonzero tangent vectors".into()));
        }
        let (x, wraps) = sys.chart_normalize(x0)?;
        let k = tangents.ncols();
        Ok(JointFlow {
            sys,
            input,
            h,
            t: t0,
            x,
            wraps,
            tangents,
            renormalize,
            log_growth: vec![0.0; k],
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn wraps(&self) -> &[i64] {
        &self.wraps
    }

    pub fn tangents(&self) -> &DMatrix<f64> {
        &self.tangents
    }

    pub fn log_growth(&self) -> &[f64] {
        &self.log_growth
    }

    pub fn set_step(&mut self, h: f64) {
        self.h = h;
    }

    fn rhs(&self, t: f64, x: &DVector<f64>, v: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let u = self.input.at(t);
        let fx = self.sys.eval(x, &u)?;
        let dv = if v.ncols() > 0 {
            self.sys.state_jacobian(x, &u)? * v
        } else {
            DMatrix::zeros(x.len(), 0)
        };
        Ok((fx, dv))
    }

    /// Advances one step (one RK4 step, or one map iteration).
    pub fn step(&mut self) -> Result<()> {
        let (x_next, v_next, dt) = match self.sys.time_kind() {
            TimeKind::Continuous => {
                let h = self.h;
                let t = self.t;
                let (k1x, k1v) = self.rhs(t, &self.x, &self.tangents)?;
                let (k2x, k2v) = self.rhs(
                    t + 0.5 * h,
                    &(&self.x + &k1x * (0.5 * h)),
                    &(&self.tangents + &k1v * (0.5 * h)),
                )?;
                let (k3x, k3v) = self.rhs(
                    t + 0.5 * h,
                    &(&self.x + &k2x * (0.5 * h)),
                    &(&self.tangents + &k2v * (0.5 * h)),
                )?;
                let (k4x, k4v) = self.rhs(t + h, &(&self.x + &k3x * h), &(&self.tangents + &k3v * h))?;
                let x = &self.x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
                let v = &self.tangents + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
                (x, v, h)
            }
            TimeKind::Discrete => {
                let u = self.input.at(self.t);
                let x = self.sys.eval(&self.x, &u)?;
                let v = if self.tangents.ncols() > 0 {
                    self.sys.state_jacobian(&self.x, &u)? * &self.tangents
                } else {
                    DMatrix::zeros(self.x.len(), 0)
                };
                (x, v, 1.0)
            }
        };
        let t_next = self.t + dt;
        if !x_next.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged {
                time: t_next,
                reason: "non-finite state".into(),
            });
        }
        let (x, w) = self.sys.chart_normalize(&x_next)?;
        if x.norm() > STATE_LIMIT {
            return Err(Error::Diverged {
                time: t_next,
                reason: format!("|x| exceeded {STATE_LIMIT:e}"),
            });
        }
        let mut v = v_next;
        if !v.iter().all(|e| e.is_finite()) {
            return Err(Error::Diverged {
                time: t_next,
                reason: "non-finite tangent vector".into(),
            });
        }
        for (j, mut col) in v.column_iter_mut().enumerate() {
            let norm = col.norm();
            if self.renormalize {
                if norm == 0.0 {
                    return Err(Error::Diverged {
                        time: t_next,
                        reason: "tangent vector collapsed to zero".into(),
                    });
                }
                col /= norm;
                self.log_growth[j] += norm.ln();
            } else if norm > TANGENT_LIMIT {
                return Err(Error::Diverged {
                    time: t_next,
                    reason: format!("|dx| exceeded {TANGENT_LIMIT:e}"),
                });
            }
        }
        self.x = x;
        for (acc, dw) in self.wraps.iter_mut().zip(w) {
            *acc += dw;
        }
        self.tangents = v;
        self.t = t_next;
        Ok(())
    }
}

fn check_continuous_input(sys: &SystemDef, input: &Input) -> Result<()> {
    if let Input::Constant(u) = input {
        if u.len() != sys.input_dim() {
            return Err(Error::InvalidInput(format!(
                "input has {} entries, system expects {}",
                u.len(),
                sys.input_dim()
            )));
        }
    }
    Ok(())
}

fn plan(sys: &SystemDef, t_span: (f64, f64), h: f64) -> Result<(usize, f64)> {
    match sys.time_kind() {
        TimeKind::Continuous => step_plan(t_span.0, t_span.1, h),
        TimeKind::Discrete => {
            let (n, _) = step_plan(t_span.0, t_span.1, 1.0)?;
            Ok((n, 1.0))
        }
    }
}

fn run_joint(
    sys: &SystemDef,
    x0: &DVector<f64>,
    tangents: DMatrix<f64>,
    input: &Input,
    t_span: (f64, f64),
    h: f64,
    renormalize: bool,
    mut record: impl FnMut(&JointFlow<'_>),
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_continuous_input(sys, input)?;
    let (steps, h) = plan(sys, t_span, h)?;
    let mut jf = JointFlow::new(sys, x0, tangents, input, t_span.0, h, renormalize)?;
    record(&jf);
    for _ in 0..steps {
        jf.step()?;
        record(&jf);
    }
    Ok((jf.tangents, jf.log_growth))
}

/// Samples of `psi(t, t0, x0, u)` at `t0, t0 + h, ...`.
pub fn flow(
    sys: &SystemDef,
    x0: &DVector<f64>,
    input: &Input,
    t_span: (f64, f64),
    h: f64,
) -> Result<Trajectory> {
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        wrap_counts: Vec::new(),
    };
    run_joint(
        sys,
        x0,
        DMatrix::zeros(sys.dim(), 0),
        input,
        t_span,
        h,
        false,
        |jf| {
            traj.times.push(jf.time());
            traj.states.push(jf.state().as_slice().to_vec());
            traj.wrap_counts.push(jf.wraps().to_vec());
        },
    )?;
    Ok(traj)
}

/// Co-integrates the base state and one tangent vector.
pub fn variational_flow(
    sys: &SystemDef,
    x0: &DVector<f64>,
    dx0: &DVector<f64>,
    input: &Input,
    t_span: (f64, f64),
    h: f64,
    renormalize: bool,
) -> Result<VariationalRun> {
    if dx0.len() != sys.dim() {
        return Err(Error::InvalidInput("tangent vector dimension mismatch".into()));
    }
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        wrap_counts: Vec::new(),
    };
    let mut tangents = Vec::new();
    let (_, growth) = run_joint(
        sys,
        x0,
        DMatrix::from_columns(std::slice::from_ref(dx0)),
        input,
        t_span,
        h,
        renormalize,
        |jf| {
            traj.times.push(jf.time());
            traj.states.push(jf.state().as_slice().to_vec());
            traj.wrap_counts.push(jf.wraps().to_vec());
            tangents.push(jf.tangents().column(0).into_owned());
        },
    )?;
    Ok(VariationalRun {
        trajectory: traj,
        tangents,
        log_growth: growth[0],
    })
}

/// Fundamental matrix over `[t0, t]`: variational flows of the canonical basis.
pub fn fundamental_matrix(
    sys: &SystemDef,
    x0: &DVector<f64>,
    u: &[f64],
    t0: f64,
    t: f64,
    h: f64,
) -> Result<FundamentalMatrix> {
    let input = Input::Constant(u.to_vec());
    let n = sys.dim();
    let (psi, _) = run_joint(sys, x0, DMatrix::identity(n, n), &input, (t0, t), h, false, |_| {})?;
    Ok(FundamentalMatrix { t0, t, psi })
}

/// Final state and tangent block after integrating over `[t0, t1]`.
pub fn push_forward(
    sys: &SystemDef,
    x0: &DVector<f64>,
    tangents: DMatrix<f64>,
    u: &[f64],
    t_span: (f64, f64),
    h: f64,
    renormalize: bool,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let input = Input::Constant(u.to_vec());
    let mut last = x0.clone();
    let (v, _) = run_joint(sys, x0, tangents, &input, t_span, h, renormalize, |jf| {
        last = jf.state().clone();
    })?;
    Ok((last, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{ChartTopology, FnField, VectorField};
    use crate::geometry::{Cone, ConeField};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn linear(a: DMatrix<f64>) -> SystemDef {
        let n = a.nrows();
        let a1 = a.clone();
        let field: Arc<dyn VectorField> = Arc::new(FnField::with_jacobian(
            move |x: &DVector<f64>, _u: &[f64]| &a1 * x,
            move |_x: &DVector<f64>, _u: &[f64]| a.clone(),
        ));
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
    fn step_plan_divides_span() {
        assert_eq!(step_plan(0.0, 1.0, 1e-3).unwrap().0, 1000);
        let (n, h) = step_plan(0.0, 1.0, 0.3).unwrap();
        assert_eq!(n, 4);
        assert!((h - 0.25).abs() < 1e-15);
        assert!(step_plan(0.0, 1.0, 0.0).is_err());
        assert!(step_plan(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn zero_tangent_stays_zero() {
        let sys = linear(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        let run = variational_flow(&sys, &v(&[1.0, 0.0]), &v(&[0.0, 0.0]), &Input::none(), (0.0, 1.0), 1e-2, false)
            .unwrap();
        assert!(run.tangents.iter().all(|t| t.norm() == 0.0));
        assert!(variational_flow(&sys, &v(&[1.0, 0.0]), &v(&[0.0, 0.0]), &Input::none(), (0.0, 1.0), 1e-2, true)
            .is_err());
    }

    #[test]
    fn renormalization_ledger_matches_growth() {
        let sys = linear(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]));
        let dx0 = v(&[1.0, 0.0]);
        let run = variational_flow(&sys, &v(&[1.0, 1.0]), &dx0, &Input::none(), (0.0, 2.0), 1e-3, true).unwrap();
        assert!((run.log_growth + 2.0).abs() < 1e-9);
        assert!((run.tangents.last().unwrap().norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn divergence_guard() {
        let sys = linear(DMatrix::from_row_slice(1, 1, &[5.0]));
        let r = flow(&sys, &v(&[1.0]), &Input::none(), (0.0, 10.0), 1e-3);
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn time_varying_input_signal() {
        // xdot = u(t) = cos t  =>  x(t) = sin t
        let sys = SystemDef::new(
            "driven",
            TimeKind::Continuous,
            Arc::new(FnField::new(|_x: &DVector<f64>, u: &[f64]| DVector::from_element(1, u[0]))),
            ChartTopology::euclidean(1),
            ConeField::constant(Cone::orthant(1)),
            1,
        )
        .unwrap();
        let input = Input::Signal(Arc::new(|t: f64| vec![t.cos()]));
        let traj = flow(&sys, &v(&[0.0]), &input, (0.0, 1.0), 1e-3).unwrap();
        assert!((traj.last_state()[0] - 1f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn discrete_map_iterates() {
        let sys = SystemDef::new(
            "halving",
            TimeKind::Discrete,
            Arc::new(FnField::new(|x: &DVector<f64>, _u: &[f64]| x * 0.5)),
            ChartTopology::euclidean(1),
            ConeField::constant(Cone::orthant(1)),
            0,
        )
        .unwrap();
        let traj = flow(&sys, &v(&[8.0]), &Input::none(), (0.0, 3.0), 1.0).unwrap();
        assert_eq!(traj.times, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(traj.last_state()[0], 1.0);
        let psi = fundamental_matrix(&sys, &v(&[8.0]), &[], 0.0, 3.0, 1.0).unwrap();
        assert!((psi.psi[(0, 0)] - 0.125).abs() < 1e-9);
    }

    #[test]
    fn csv_export_layout() {
        let sys = linear(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]));
        let traj = flow(&sys, &v(&[1.0, 2.0]), &Input::none(), (0.0, 0.002), 1e-3).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x_1,x_2,wrap_1,wrap_2");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0.0000000000000000e0,1.0000000000000000e0,"));
        let json = serde_json::to_string(&traj).unwrap();
        let back: Trajectory = serde_json::from_str(&json).unwrap();
        assert_eq!(back, traj);
    }
}
