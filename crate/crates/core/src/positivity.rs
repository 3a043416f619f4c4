//! Pointwise and strict differential positivity checks.
//!
//! Pointwise: on every sampled facet ray `dx` (where `k_j(x, dx) = 0`) the
//! facet function must not decrease along the prolonged flow,
//! `k̇_j = <ḣ_j, dx> + <h_j, A(x) dx> >= -tol`.
//!
//! Strict: boundary rays pushed forward over a horizon `T` must land strictly
//! inside the cone with finite Hilbert diameter.

use crate::dynsys::{SystemDef, TimeKind};
use crate::error::{Error, Result};
use crate::geometry::{contraction_ratio, hilbert_distance, Cone, ConeField};
use crate::integrate::{step_plan, Input, JointFlow, DEFAULT_STEP};
use crate::serde_ext::{dvec, ext_real};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

/// Default violation threshold for `k̇`.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// A pushed ray counts as strictly interior when its normalized margin
/// `min_i <h_i, dx> / (|h_i| |dx|)` reaches this value.
pub const INTERIOR_MARGIN: f64 = 1e-7;

/// Step for the finite-difference facet derivative along `f`.
const FACET_FD_STEP: f64 = 1e-6;

/// Tolerance for deciding which facets a boundary sample lies on.
const TIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySample {
    #[serde(with = "dvec")]
    pub x: DVector<f64>,
    #[serde(with = "dvec")]
    pub dx: DVector<f64>,
    pub facet_index: usize,
    pub tight_set: Vec<usize>,
}

/// Unit rays on each facet of `K(x)`: first the extreme rays of the facet,
/// then seeded random convex combinations of them, `per_facet` in total.
/// In the plane every facet is a single ray and yields one sample.
pub fn boundary_samples(
    cone_field: &ConeField,
    x: &DVector<f64>,
    per_facet: usize,
    seed: u64,
) -> Result<Vec<BoundarySample>> {
    let cone = cone_field.cone_at(x)?;
    Ok(facet_rays(&cone, per_facet, seed)
        .into_iter()
        .map(|(facet_index, dx)| BoundarySample {
            x: x.clone(),
            tight_set: tight_set(&cone, &dx),
            dx,
            facet_index,
        })
        .collect())
}

fn tight_set(cone: &Cone, dx: &DVector<f64>) -> Vec<usize> {
    cone.halfspaces()
        .iter()
        .enumerate()
        .filter(|(_, h)| h.dot(dx).abs() <= TIGHT_TOL * h.norm())
        .map(|(i, _)| i)
        .collect()
}

fn facet_rays(cone: &Cone, per_facet: usize, seed: u64) -> Vec<(usize, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, h) in cone.halfspaces().iter().enumerate() {
        let face: Vec<&DVector<f64>> = cone
            .generators()
            .iter()
            .filter(|g| h.dot(g).abs() <= 1e-9 * h.norm())
            .collect();
        if face.is_empty() {
            continue;
        }
        let count = if cone.dim() == 2 { 1 } else { per_facet.max(1) };
        let hn = h / h.norm();
        let project = |v: DVector<f64>| {
            let v = &v - &hn * hn.dot(&v);
            v.normalize()
        };
        for k in 0..count {
            let v = if k < face.len() {
                face[k].clone()
            } else {
                // flat Dirichlet weights from exponential variates
                let w: Vec<f64> = face
                    .iter()
                    .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                    .collect();
                face.iter()
                    .zip(&w)
                    .fold(DVector::zeros(cone.dim()), |acc, (g, wi)| acc + *g * *wi)
            };
            out.push((i, project(v)));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Positive,
    NotPositive,
    Inconclusive,
}

/// One boundary evaluation: `rate` is `k̇` (continuous) or the facet value
/// of the image (discrete).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub dx: Vec<f64>,
    pub facet: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub verdict: Verdict,
    pub tolerance: f64,
    /// Violations, most negative first.
    pub witnesses: Vec<Witness>,
    pub samples_checked: usize,
    #[serde(with = "ext_real")]
    pub min_margin: f64,
    /// Smallest rate seen on each facet.
    pub facet_margins: Vec<Option<f64>>,
    /// Sample attaining `min_margin`.
    pub worst: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    pub per_facet: usize,
    pub tolerance: f64,
    /// Constant input; the model's nominal input when absent.
    pub input: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings {
            per_facet: 5,
            tolerance: DEFAULT_TOLERANCE,
            input: None,
            seed: 0,
        }
    }
}

impl CheckSettings {
    fn input<'a>(&'a self, sys: &'a SystemDef) -> &'a [f64] {
        self.input.as_deref().unwrap_or(sys.nominal_input())
    }
}

/// `dh_j/dt` along `f` for every facet: analytic when the field provides it,
/// otherwise central differences of `h_j(x ± eps f)`.
pub fn facet_rates(field: &ConeField, x: &DVector<f64>, fx: &DVector<f64>) -> Vec<DVector<f64>> {
    if let Some(r) = field.analytic_facet_rates(x, fx) {
        return r;
    }
    let plus = field.halfspaces_at(&(x + fx * FACET_FD_STEP));
    let minus = field.halfspaces_at(&(x - fx * FACET_FD_STEP));
    plus.iter()
        .zip(&minus)
        .map(|(p, m)| (p - m) / (2.0 * FACET_FD_STEP))
        .collect()
}

/// Boundary rates at a single state, one entry per boundary sample and tight facet.
pub fn boundary_rates(sys: &SystemDef, x: &DVector<f64>, u: &[f64], per_facet: usize, seed: u64) -> Result<Vec<Witness>> {
    let samples = boundary_samples(sys.cone_field(), x, per_facet, seed)?;
    let a = sys.state_jacobian(x, u)?;
    let fx = sys.eval(x, u)?;
    let mut out = Vec::new();
    match sys.time_kind() {
        TimeKind::Continuous => {
            let hs = sys.cone_field().halfspaces_at(x);
            let hdot = facet_rates(sys.cone_field(), x, &fx);
            for s in &samples {
                let adx = &a * &s.dx;
                for &j in &s.tight_set {
                    out.push(Witness {
                        x: x.as_slice().to_vec(),
                        dx: s.dx.as_slice().to_vec(),
                        facet: j,
                        rate: hdot[j].dot(&s.dx) + hs[j].dot(&adx),
                    });
                }
            }
        }
        TimeKind::Discrete => {
            let (fx, _) = sys.chart_normalize(&fx)?;
            let hs = sys.cone_field().halfspaces_at(&fx);
            for s in &samples {
                let image = &a * &s.dx;
                for (j, h) in hs.iter().enumerate() {
                    out.push(Witness {
                        x: x.as_slice().to_vec(),
                        dx: s.dx.as_slice().to_vec(),
                        facet: j,
                        rate: h.dot(&image),
                    });
                }
            }
        }
    }
    Ok(out)
}

fn summarize(per_state: Vec<Vec<Witness>>, facets: usize, tolerance: f64) -> PositivityReport {
    let mut witnesses = Vec::new();
    let mut facet_margins: Vec<Option<f64>> = vec![None; facets];
    let mut worst: Option<Witness> = None;
    let mut samples_checked = 0;
    for w in per_state.into_iter().flatten() {
        samples_checked += 1;
        if w.facet >= facet_margins.len() {
            facet_margins.resize(w.facet + 1, None);
        }
        let slot = &mut facet_margins[w.facet];
        *slot = Some(slot.map_or(w.rate, |m| m.min(w.rate)));
        if worst.as_ref().is_none_or(|b| w.rate < b.rate) {
            worst = Some(w.clone());
        }
        if w.rate < -tolerance {
            witnesses.push(w);
        }
    }
    // stable sort keeps sample order among ties
    witnesses.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    let verdict = if samples_checked == 0 {
        Verdict::Inconclusive
    } else if witnesses.is_empty() {
        Verdict::Positive
    } else {
        Verdict::NotPositive
    };
    PositivityReport {
        verdict,
        tolerance,
        witnesses,
        samples_checked,
        min_margin: worst.as_ref().map_or(f64::INFINITY, |w| w.rate),
        facet_margins,
        worst,
    }
}

pub fn check_pointwise_positivity(
    sys: &SystemDef,
    states: &[DVector<f64>],
    settings: &CheckSettings,
) -> Result<PositivityReport> {
    let u = settings.input(sys);
    let per_state = states
        .par_iter()
        .map(|x| boundary_rates(sys, x, u, settings.per_facet, settings.seed))
        .collect::<Result<Vec<_>>>()?;
    let facets = states
        .first()
        .map_or(0, |x| sys.cone_field().halfspaces_at(x).len());
    Ok(summarize(per_state, facets, settings.tolerance))
}

/// Off-diagonal Jacobian entries as rates: entry `a_ij` is `k̇_i` on the
/// orthant facet ray `e_j`.
pub fn metzler_check(sys: &SystemDef, states: &[DVector<f64>], settings: &CheckSettings) -> Result<PositivityReport> {
    match sys.cone_field().constant_cone() {
        Some(c) if c.is_orthant() => {}
        _ => return Err(Error::WrongConeKind),
    }
    let u = settings.input(sys);
    let n = sys.dim();
    let per_state = states
        .par_iter()
        .map(|x| {
            let a = sys.state_jacobian(x, u)?;
            let mut out = Vec::with_capacity(n * n.saturating_sub(1));
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let mut e = vec![0.0; n];
                    e[j] = 1.0;
                    out.push(Witness {
                        x: x.as_slice().to_vec(),
                        dx: e,
                        facet: i,
                        rate: a[(i, j)],
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(per_state, n, settings.tolerance))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrictVerdict {
    Strict,
    NonStrict,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrictSettings {
    /// Horizon `T` (time units, or steps for maps).
    pub horizon: f64,
    pub per_facet: usize,
    pub step: f64,
    pub input: Option<Vec<f64>>,
    pub seed: u64,
    /// Decay samples per horizon.
    pub samples_per_horizon: usize,
}

impl Default for StrictSettings {
    fn default() -> Self {
        StrictSettings {
            horizon: 2.0,
            per_facet: 3,
            step: DEFAULT_STEP,
            input: None,
            seed: 0,
            samples_per_horizon: 10,
        }
    }
}

/// Max pairwise Hilbert distances at one time, maximized over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub t: f64,
    /// Among pushed boundary rays.
    #[serde(with = "ext_real")]
    pub boundary: f64,
    /// Among pushed interior probes.
    #[serde(with = "ext_real")]
    pub interior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(with = "ext_real")]
    pub diameter_estimate: f64,
    pub mu_t: f64,
    pub fitted_lambda: Option<f64>,
    pub strict_verdict: StrictVerdict,
    pub samples_checked: usize,
    /// Smallest normalized interiority margin of the boundary images at `T`.
    pub min_image_margin: f64,
    pub decay: Vec<DecayPoint>,
    pub diagnostic: Option<String>,
}

impl ContractionReport {
    /// `t,boundary_distance,interior_distance`
    pub fn write_decay_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,boundary_distance,interior_distance")?;
        for p in &self.decay {
            writeln!(
                w,
                "{},{},{}",
                crate::integrate::fmt_f64(p.t),
                crate::integrate::fmt_f64(p.boundary),
                crate::integrate::fmt_f64(p.interior)
            )?;
        }
        Ok(())
    }
}

struct StateRun {
    times: Vec<f64>,
    boundary: Vec<f64>,
    interior: Vec<f64>,
    margin_at_t: f64,
    diameter_at_t: f64,
}

fn max_pairwise(cone: &Cone, cols: &[DVector<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in cols.iter().enumerate() {
        for b in &cols[i + 1..] {
            // vectors pushed slightly outside by rounding count as on the boundary
            match hilbert_distance(cone, a, b) {
                Ok(h) => d = d.max(h.value),
                Err(_) => return f64::INFINITY,
            }
        }
    }
    d
}

fn run_state(sys: &SystemDef, x: &DVector<f64>, input: &Input, s: &StrictSettings) -> Result<StateRun> {
    let field = sys.cone_field();
    let cone = field.cone_at(x)?;
    let rays: Vec<DVector<f64>> = facet_rays(&cone, s.per_facet, s.seed)
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    let nb = rays.len();
    let mut cols = rays;
    let center = cone.interior_probe();
    cols.push(center.clone());
    for g in cone.generators() {
        cols.push((&center * cone.generators().len() as f64 + g * 2.0).normalize());
    }
    let block = DMatrix::from_columns(&cols);

    let discrete = sys.time_kind() == TimeKind::Discrete;
    let (h, steps_per_horizon) = if discrete {
        (1.0, s.horizon.round().max(1.0) as usize)
    } else {
        let (n, h) = step_plan(0.0, s.horizon, s.step)?;
        (h, n.max(1))
    };
    let every = (steps_per_horizon / s.samples_per_horizon.max(1)).max(1);
    let total = 3 * steps_per_horizon;

    let mut jf = JointFlow::new(sys, x, block, input, 0.0, h, true)?;
    let mut run = StateRun {
        times: Vec::new(),
        boundary: Vec::new(),
        interior: Vec::new(),
        margin_at_t: f64::NAN,
        diameter_at_t: f64::NAN,
    };
    for step in 0..=total {
        if step > 0 {
            jf.step()?;
        }
        if step % every != 0 && step != steps_per_horizon {
            continue;
        }
        let here = field.cone_at(jf.state())?;
        let v: Vec<DVector<f64>> = jf.tangents().column_iter().map(|c| here.orient(&c.into_owned())).collect();
        let (b, p) = v.split_at(nb);
        let db = max_pairwise(&here, b);
        let dp = max_pairwise(&here, p);
        if step % every == 0 {
            run.times.push(jf.time());
            run.boundary.push(db);
            run.interior.push(dp);
        }
        if step == steps_per_horizon {
            run.margin_at_t = b.iter().map(|c| here.interior_margin(c)).fold(f64::INFINITY, f64::min);
            run.diameter_at_t = if run.margin_at_t >= INTERIOR_MARGIN { db } else { f64::INFINITY };
        }
    }
    Ok(run)
}

/// Least-squares slope of `log d` against `t` over `[t0, t1]`, skipping
/// values below 1e-12 and non-finite ones.
pub fn fit_log_slope(times: &[f64], values: &[f64], t0: f64, t1: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= t0 - 1e-9 && **t <= t1 + 1e-9 && v.is_finite() && **v >= 1e-12)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn check_strict_positivity(
    sys: &SystemDef,
    states: &[DVector<f64>],
    settings: &StrictSettings,
) -> Result<ContractionReport> {
    if !(settings.horizon > 0.0) {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    let input = Input::Constant(settings.input.clone().unwrap_or_else(|| sys.nominal_input().to_vec()));
    let results: Vec<Result<StateRun>> = states
        .par_iter()
        .map(|x| run_state(sys, x, &input, settings))
        .collect();

    let mut runs = Vec::with_capacity(results.len());
    for (x, r) in states.iter().zip(results) {
        match r {
            Ok(run) => runs.push(run),
            Err(e @ (Error::Diverged { .. } | Error::LeftDomain { .. })) => {
                return Ok(ContractionReport {
                    horizon: settings.horizon,
                    diameter_estimate: f64::INFINITY,
                    mu_t: 1.0,
                    fitted_lambda: None,
                    strict_verdict: StrictVerdict::Inconclusive,
                    samples_checked: runs.len(),
                    min_image_margin: 0.0,
                    decay: Vec::new(),
                    diagnostic: Some(format!("flow from {:?}: {e}", x.as_slice())),
                });
            }
            Err(e) => return Err(e),
        }
    }
    if runs.is_empty() {
        return Err(Error::InvalidInput("no states to check".into()));
    }

    let times = runs[0].times.clone();
    let decay: Vec<DecayPoint> = times
        .iter()
        .enumerate()
        .map(|(k, &t)| DecayPoint {
            t,
            boundary: runs.iter().map(|r| r.boundary[k]).fold(0.0, f64::max),
            interior: runs.iter().map(|r| r.interior[k]).fold(0.0, f64::max),
        })
        .collect();
    let diameter = runs.iter().map(|r| r.diameter_at_t).fold(0.0, f64::max);
    let min_margin = runs.iter().map(|r| r.margin_at_t).fold(f64::INFINITY, f64::min);
    let mu = contraction_ratio(diameter)?;

    let t = settings.horizon;
    let tail_finite = decay.iter().filter(|p| p.t >= t - 1e-9).all(|p| p.boundary.is_finite());
    let curve: Vec<f64> = if tail_finite {
        decay.iter().map(|p| p.boundary).collect()
    } else {
        decay.iter().map(|p| p.interior).collect()
    };
    let slope = fit_log_slope(&times, &curve, t, 3.0 * t);
    let lambda = slope.map(|s| -s);

    let (verdict, diagnostic) = if !diameter.is_finite() {
        let worst = runs
            .iter()
            .zip(states)
            .min_by(|a, b| a.0.margin_at_t.total_cmp(&b.0.margin_at_t))
            .map(|(_, x)| x.as_slice().to_vec());
        (
            StrictVerdict::NonStrict,
            Some(format!(
                "boundary image stays on the cone boundary (margin {min_margin:e}) from {worst:?}"
            )),
        )
    } else if lambda.is_none_or(|l| !(l > 0.0)) {
        let all_zero = curve.iter().all(|v| *v < 1e-12);
        if all_zero {
            (StrictVerdict::Strict, None)
        } else {
            (
                StrictVerdict::Inconclusive,
                Some("images are interior but pairwise distances do not decay".into()),
            )
        }
    } else {
        (StrictVerdict::Strict, None)
    };

    Ok(ContractionReport {
        horizon: settings.horizon,
        diameter_estimate: diameter,
        mu_t: mu,
        fitted_lambda: lambda,
        strict_verdict: verdict,
        samples_checked: runs.len(),
        min_image_margin: min_margin,
        decay,
        diagnostic,
    })
}
