//! Omega-limit estimation, period detection, alignment with the
//! Perron-Frobenius field, and classification of limit sets.

use crate::dynsys::{CoordKind, SystemDef};
use crate::error::{Error, Result};
use crate::geometry::hilbert_distance;
use crate::integrate::{flow, variational_flow, Input, Trajectory, DEFAULT_STEP};
use crate::pffield::{pf_vector_at, PfSettings};
use crate::positivity::INTERIOR_MARGIN;
use crate::sampling::StateBox;
use crate::serde_ext::{dvec, ext_real, opt_ext_real};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Cap on the number of cloud points used for diameters and Hausdorff distances.
const MAX_CLOUD: usize = 4000;

/// `|f|` below which a point counts as an equilibrium.
const EQUILIBRIUM_SPEED: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaSet {
    /// Thinned tail cloud, chart coordinates.
    pub points: Vec<Vec<f64>>,
    pub source: Vec<f64>,
    pub t_transient: f64,
    pub t_tail: f64,
    /// Full tail samples, kept for period detection.
    #[serde(skip)]
    pub tail: Option<Trajectory>,
}

impl OmegaSet {
    pub fn point(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.points[i])
    }
}

fn thin(traj: &Trajectory, max: usize) -> Vec<Vec<f64>> {
    let stride = traj.len().div_ceil(max).max(1);
    traj.states.iter().step_by(stride).cloned().collect()
}

/// Flows `x0` over `[0, t_max]` and keeps the last `tail_fraction` of it.
pub fn omega_estimate(
    sys: &SystemDef,
    x0: &DVector<f64>,
    u: &[f64],
    t_max: f64,
    tail_fraction: f64,
    step: f64,
) -> Result<OmegaSet> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidInput("tail_fraction must lie in (0, 1]".into()));
    }
    let traj = flow(sys, x0, &Input::Constant(u.to_vec()), (0.0, t_max), step)?;
    let t_transient = t_max * (1.0 - tail_fraction);
    let tail = traj.tail_from(t_transient);
    Ok(OmegaSet {
        points: thin(&tail, MAX_CLOUD),
        source: x0.as_slice().to_vec(),
        t_transient,
        t_tail: t_max - t_transient,
        tail: Some(tail),
    })
}

/// Largest pairwise chart distance within the cloud.
pub fn cloud_diameter(sys: &SystemDef, points: &[Vec<f64>]) -> f64 {
    let topo = sys.topology();
    points
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            points[i + 1..]
                .iter()
                .map(|b| topo.slice_distance(a, b))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Mean with circle coordinates averaged on the circle.
pub fn cloud_centroid(sys: &SystemDef, points: &[Vec<f64>]) -> DVector<f64> {
    let n = sys.dim();
    let kinds = &sys.topology().kinds;
    let m = points.len().max(1) as f64;
    DVector::from_fn(n, |i, _| {
        if kinds[i] == CoordKind::Circle {
            let (s, c) = points
                .iter()
                .fold((0.0, 0.0), |(s, c), p| (s + p[i].sin(), c + p[i].cos()));
            s.atan2(c).rem_euclid(TAU)
        } else {
            points.iter().map(|p| p[i]).sum::<f64>() / m
        }
    })
}

/// Symmetric Hausdorff distance between two clouds in chart distance.
pub fn hausdorff_distance(sys: &SystemDef, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let topo = sys.topology();
    let one_way = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.par_iter()
            .map(|x| to.iter().map(|y| topo.slice_distance(x, y)).fold(f64::INFINITY, f64::min))
            .reduce(|| 0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

/// Hyperplane through `point` with normal `normal`. Crossings farther than
/// `radius` from `point` are ignored when a radius is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    #[serde(with = "dvec")]
    pub point: DVector<f64>,
    #[serde(with = "dvec")]
    pub normal: DVector<f64>,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    /// Mean crossing gap, present when the relative spread is within bounds.
    pub period: Option<f64>,
    pub crossings: Vec<f64>,
    pub relative_spread: f64,
}

/// Relative spread of crossing gaps accepted as periodic.
pub const PERIOD_SPREAD: f64 = 1e-3;

/// Same-direction crossings of the section, with linear interpolation in time.
pub fn detect_period(sys: &SystemDef, traj: &Trajectory, section: &Section) -> Result<PeriodEstimate> {
    let topo = sys.topology();
    let kinds = &topo.kinds;
    let normal = section.normal.normalize();
    let disp: Vec<DVector<f64>> = (0..traj.len())
        .map(|i| topo.displacement(&section.point, &traj.state(i)))
        .collect();
    let mut crossings = Vec::new();
    for i in 0..traj.len().saturating_sub(1) {
        let (d0, d1) = (&disp[i], &disp[i + 1]);
        // displacement wrapped across the antipode of the section point
        let jumped = kinds
            .iter()
            .enumerate()
            .any(|(k, kind)| *kind == CoordKind::Circle && (d1[k] - d0[k]).abs() > std::f64::consts::PI);
        if jumped {
            continue;
        }
        let (s0, s1) = (normal.dot(d0), normal.dot(d1));
        if s0 < 0.0 && s1 >= 0.0 {
            let a = -s0 / (s1 - s0);
            let hit = d0 + (d1 - d0) * a;
            if section.radius.is_none_or(|r| hit.norm() <= r) {
                crossings.push(traj.times[i] + a * (traj.times[i + 1] - traj.times[i]));
            }
        }
    }
    if crossings.len() < 3 {
        return Err(Error::NoPeriod(format!("{} section crossings", crossings.len())));
    }
    let gaps: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let (lo, hi) = gaps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), g| (l.min(*g), h.max(*g)));
    let spread = (hi - lo) / mean;
    Ok(PeriodEstimate {
        period: (spread <= PERIOD_SPREAD).then_some(mean),
        crossings,
        relative_spread: spread,
    })
}

/// Section through the tail point nearest the centroid, normal to `f` there.
/// `diameter` is the cloud diameter, which bounds the accepted crossings.
pub fn default_section(sys: &SystemDef, u: &[f64], omega: &OmegaSet, diameter: f64) -> Result<Section> {
    let c = cloud_centroid(sys, &omega.points);
    let topo = sys.topology();
    let p = omega
        .points
        .iter()
        .map(|p| DVector::from_column_slice(p))
        .min_by(|a, b| topo.distance(a, &c).total_cmp(&topo.distance(b, &c)))
        .ok_or_else(|| Error::NoPeriod("empty cloud".into()))?;
    let f = sys.eval(&p, u)?;
    if f.norm() <= EQUILIBRIUM_SPEED {
        return Err(Error::NoPeriod("vector field vanishes at the section point".into()));
    }
    Ok(Section {
        radius: Some(0.5 * diameter.max(1e-6)),
        point: p,
        normal: f,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignmentTag {
    Aligned,
    NotInCone,
    Equilibrium,
    PfFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPoint {
    pub x: Vec<f64>,
    #[serde(with = "ext_real")]
    pub distance: f64,
    pub tag: AlignmentTag,
    pub error: Option<String>,
}

/// Hilbert distance between `±f(x)` (whichever lies in the cone) and `w(x)`
/// at up to `max_points` evenly spaced cloud points.
pub fn alignment_profile(
    sys: &SystemDef,
    u: &[f64],
    omega: &OmegaSet,
    pf: &PfSettings,
    max_points: usize,
) -> Vec<AlignmentPoint> {
    let stride = omega.points.len().div_ceil(max_points.max(1)).max(1);
    let pts: Vec<DVector<f64>> = omega
        .points
        .iter()
        .step_by(stride)
        .map(|p| DVector::from_column_slice(p))
        .collect();
    pts.par_iter().map(|x| align_at(sys, u, x, pf)).collect()
}

fn align_at(sys: &SystemDef, u: &[f64], x: &DVector<f64>, pf: &PfSettings) -> AlignmentPoint {
    let point = |distance, tag, error| AlignmentPoint {
        x: x.as_slice().to_vec(),
        distance,
        tag,
        error,
    };
    let f = match sys.eval(x, u) {
        Ok(f) => f,
        Err(e) => return point(f64::INFINITY, AlignmentTag::PfFailed, Some(e.to_string())),
    };
    if f.norm() <= EQUILIBRIUM_SPEED {
        return point(0.0, AlignmentTag::Equilibrium, None);
    }
    let cone = match sys.cone_field().cone_at(x) {
        Ok(c) => c,
        Err(e) => return point(f64::INFINITY, AlignmentTag::PfFailed, Some(e.to_string())),
    };
    let s = if cone.contains(&f, false).unwrap_or(false) {
        f
    } else if cone.contains(&-&f, false).unwrap_or(false) {
        -f
    } else {
        return point(f64::INFINITY, AlignmentTag::NotInCone, None);
    };
    match pf_vector_at(sys, x, u, pf) {
        Ok(p) => {
            let d = hilbert_distance(&cone, &s, &p.w).map_or(f64::INFINITY, |d| d.value);
            point(d, AlignmentTag::Aligned, None)
        }
        Err(e) => point(f64::INFINITY, AlignmentTag::PfFailed, Some(format!("{}: {e}", e.kind()))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimitVerdict {
    FixedPoint,
    LimitCycle,
    FixedPointsAndArcs,
    NonAligned,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifySettings {
    pub t_max: f64,
    pub tail_fraction: f64,
    pub step: f64,
    pub fp_tol: f64,
    pub align_tol: f64,
    pub pf: PfSettings,
    pub profile_points: usize,
    /// Renormalization log-growth (nats) above which growth counts as unbounded.
    pub growth_threshold: f64,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        ClassifySettings {
            t_max: 400.0,
            tail_fraction: 0.3,
            step: DEFAULT_STEP,
            fp_tol: 1e-4,
            align_tol: 1e-2,
            pf: PfSettings {
                tol: 1e-5,
                ..PfSettings::default()
            },
            profile_points: 24,
            growth_threshold: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSetReport {
    pub verdict: LimitVerdict,
    #[serde(with = "opt_ext_real")]
    pub alignment_max: Option<f64>,
    pub period: Option<f64>,
    pub growth_flag: bool,
    pub log_growth: f64,
    pub cloud_diameter: f64,
    pub centroid: Vec<f64>,
    pub fixed_point: Option<Vec<f64>>,
    /// Equilibrium clusters found in the tail (FixedPointsAndArcs).
    pub clusters: Vec<Vec<f64>>,
    pub profile: Vec<AlignmentPoint>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub report: LimitSetReport,
    pub omega: OmegaSet,
}

fn growth(sys: &SystemDef, x0: &DVector<f64>, u: &[f64], s: &ClassifySettings) -> Result<f64> {
    let probe = sys.cone_field().cone_at(x0)?.interior_probe();
    let run = variational_flow(sys, x0, &probe, &Input::Constant(u.to_vec()), (0.0, s.t_max), s.step, true)?;
    Ok(run.log_growth)
}

/// Groups slow points into clusters of chart radius `radius`; returns centers.
fn slow_clusters(sys: &SystemDef, u: &[f64], points: &[Vec<f64>], radius: f64) -> Result<Vec<DVector<f64>>> {
    let topo = sys.topology();
    let mut centers: Vec<DVector<f64>> = Vec::new();
    for p in points {
        let x = DVector::from_column_slice(p);
        if sys.eval(&x, u)?.norm() > 1e-3 {
            continue;
        }
        if !centers.iter().any(|c| topo.distance(c, &x) < radius) {
            centers.push(x);
        }
    }
    Ok(centers)
}

pub fn classify_limit_set(
    sys: &SystemDef,
    u: &[f64],
    x0: &DVector<f64>,
    s: &ClassifySettings,
) -> Result<Classification> {
    let omega = omega_estimate(sys, x0, u, s.t_max, s.tail_fraction, s.step)?;
    let diameter = cloud_diameter(sys, &omega.points);
    let centroid = cloud_centroid(sys, &omega.points);
    let log_growth = growth(sys, x0, u, s)?;
    let mut report = LimitSetReport {
        verdict: LimitVerdict::Inconclusive,
        alignment_max: None,
        period: None,
        growth_flag: log_growth > s.growth_threshold,
        log_growth,
        cloud_diameter: diameter,
        centroid: centroid.as_slice().to_vec(),
        fixed_point: None,
        clusters: Vec::new(),
        profile: Vec::new(),
        diagnostic: None,
    };

    if diameter < s.fp_tol {
        report.verdict = LimitVerdict::FixedPoint;
        report.fixed_point = omega.tail.as_ref().map(|t| t.states[t.len() - 1].clone());
        return Ok(Classification { report, omega });
    }

    let period = default_section(sys, u, &omega, diameter)
        .and_then(|sec| detect_period(sys, omega.tail.as_ref().unwrap(), &sec));
    let profile = alignment_profile(sys, u, &omega, &s.pf, s.profile_points);
    let moving: Vec<&AlignmentPoint> = profile.iter().filter(|p| p.tag != AlignmentTag::Equilibrium).collect();
    let alignment_max = moving.iter().map(|p| p.distance).fold(0.0, f64::max);
    report.alignment_max = Some(alignment_max);

    match &period {
        Ok(p) => report.period = p.period,
        Err(e) => report.diagnostic = Some(e.to_string()),
    }
    if report.period.is_some() && alignment_max <= s.align_tol {
        report.verdict = LimitVerdict::LimitCycle;
    } else if !moving.is_empty() && moving.iter().all(|p| p.tag == AlignmentTag::NotInCone) {
        report.verdict = LimitVerdict::NonAligned;
    } else {
        let clusters = slow_clusters(sys, u, &omega.points, (0.05 * diameter).max(10.0 * s.fp_tol))?;
        if clusters.len() >= 2 && alignment_max <= s.align_tol {
            report.verdict = LimitVerdict::FixedPointsAndArcs;
            report.clusters = clusters.iter().map(|c| c.as_slice().to_vec()).collect();
        } else if report.diagnostic.is_none() {
            report.diagnostic = Some(format!(
                "period {:?}, alignment_max {alignment_max:e}, {} slow clusters",
                report.period,
                clusters.len()
            ));
        }
    }
    report.profile = profile;
    Ok(Classification { report, omega })
}

/// Region for [`invariant_region_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Box(StateBox),
    /// Planar tube of the given radius around a closed or open polyline.
    Tube { centerline: Vec<Vec<f64>>, radius: f64 },
    /// Planar annulus around the origin.
    Annulus { inner: f64, outer: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCheck {
    pub holds: bool,
    /// Smallest normalized interiority margin of `f` over the samples.
    pub margin: f64,
    pub interior_ok: bool,
    pub invariance_ok: bool,
    pub samples: usize,
    pub worst_state: Option<Vec<f64>>,
}

impl Region {
    fn contains(&self, sys: &SystemDef, x: &DVector<f64>) -> bool {
        let topo = sys.topology();
        match self {
            Region::Box(b) => (0..b.dim()).all(|i| {
                if b.is_periodic_axis(i, &topo.kinds) {
                    return true;
                }
                let v = if topo.kinds[i] == CoordKind::Circle {
                    // compare on the circle against the box interval
                    let w = (x[i] - b.lo[i]).rem_euclid(TAU);
                    b.lo[i] + w
                } else {
                    x[i]
                };
                v >= b.lo[i] - 1e-12 && v <= b.hi[i] + 1e-12
            }),
            Region::Tube { centerline, radius } => tube_distance(sys, centerline, x) <= radius * (1.0 + 1e-9),
            Region::Annulus { inner, outer } => {
                let r = x.norm();
                r >= *inner - 1e-12 && r <= *outer + 1e-12
            }
        }
    }

    /// Interior samples and boundary samples.
    fn samples(&self, sys: &SystemDef, count: usize) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        match self {
            Region::Box(b) => {
                let kinds = &sys.topology().kinds;
                let side = ((count as f64).powf(1.0 / b.dim() as f64).ceil() as usize).max(2);
                let mut inside = b.grid(&vec![side; b.dim()], kinds);
                inside.extend(b.halton(count, 0));
                let boundary = inside
                    .iter()
                    .filter(|x| {
                        (0..b.dim()).any(|i| {
                            !b.is_periodic_axis(i, kinds) && (x[i] == b.lo[i] || x[i] == b.hi[i])
                        })
                    })
                    .cloned()
                    .collect();
                Ok((inside, boundary))
            }
            Region::Tube { centerline, radius } => {
                if centerline.first().is_none_or(|p| p.len() != 2) || centerline.len() < 2 {
                    return Err(Error::InvalidInput("tube regions need a planar polyline".into()));
                }
                let topo = sys.topology();
                let stride = centerline.len().div_ceil(count.max(1)).max(1);
                let mut inside = Vec::new();
                let mut boundary = Vec::new();
                for i in (0..centerline.len() - 1).step_by(stride) {
                    let a = DVector::from_column_slice(&centerline[i]);
                    let b = DVector::from_column_slice(&centerline[i + 1]);
                    let t = topo.displacement(&a, &b);
                    if t.norm() == 0.0 {
                        continue;
                    }
                    let nrm = DVector::from_vec(vec![-t[1], t[0]]).normalize();
                    for s in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                        let x = sys.chart_normalize(&(&a + &nrm * (s * radius)))?.0;
                        if s == -1.0 || s == 1.0 {
                            boundary.push(x.clone());
                        }
                        inside.push(x);
                    }
                }
                Ok((inside, boundary))
            }
            Region::Annulus { inner, outer } => {
                let k = count.max(8);
                let mut inside = Vec::new();
                let mut boundary = Vec::new();
                for j in 0..k {
                    let a = TAU * j as f64 / k as f64;
                    let dir = DVector::from_vec(vec![a.cos(), a.sin()]);
                    for s in [0.0, 0.5, 1.0] {
                        let x = &dir * (inner + s * (outer - inner));
                        if s != 0.5 {
                            boundary.push(x.clone());
                        }
                        inside.push(x);
                    }
                }
                Ok((inside, boundary))
            }
        }
    }
}

/// Chart distance from `x` to the polyline.
fn tube_distance(sys: &SystemDef, line: &[Vec<f64>], x: &DVector<f64>) -> f64 {
    let topo = sys.topology();
    line.windows(2)
        .map(|w| {
            let a = DVector::from_column_slice(&w[0]);
            let b = DVector::from_column_slice(&w[1]);
            let ab = topo.displacement(&a, &b);
            let ax = topo.displacement(&a, x);
            let l2 = ab.norm_squared();
            let t = if l2 > 0.0 { (ax.dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
            (ax - ab * t).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// `f` strictly inside the cone at all samples, and boundary samples stay
/// in the region over `horizon`.
pub fn invariant_region_check(
    sys: &SystemDef,
    u: &[f64],
    region: &Region,
    samples: usize,
    horizon: f64,
) -> Result<RegionCheck> {
    let (inside, boundary) = region.samples(sys, samples)?;
    let margins: Vec<(f64, DVector<f64>)> = inside
        .par_iter()
        .map(|x| {
            let m = match (sys.eval(x, u), sys.cone_field().cone_at(x)) {
                (Ok(f), Ok(cone)) => cone.interior_margin(&f),
                _ => f64::NEG_INFINITY,
            };
            (m, x.clone())
        })
        .collect();
    let (margin, worst) = margins
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(m, x)| (*m, Some(x.as_slice().to_vec())))
        .unwrap_or((f64::NEG_INFINITY, None));
    let interior_ok = margin >= INTERIOR_MARGIN;

    let input = Input::Constant(u.to_vec());
    let invariance_ok = boundary.par_iter().all(|x| match flow(sys, x, &input, (0.0, horizon), DEFAULT_STEP) {
        Ok(traj) => (0..traj.len()).step_by(10).all(|i| region.contains(sys, &traj.state(i))),
        Err(_) => false,
    });
    Ok(RegionCheck {
        holds: interior_ok && invariance_ok,
        margin,
        interior_ok,
        invariance_ok,
        samples: inside.len(),
        worst_state: worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcReport {
    /// `+1` or `-1` along the unstable direction.
    pub sign: f64,
    pub endpoint: Option<Vec<f64>>,
    pub pf_at_endpoint: Option<Vec<f64>>,
    /// Angle between the arrival direction and `w` at the endpoint, radians.
    pub arrival_angle: Option<f64>,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub saddle: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub unstable_direction: Vec<f64>,
    /// Dominant eigenvector of the linearization, oriented into the cone.
    pub linear_pf: Vec<f64>,
    pub unstable_pf_angle: f64,
    pub arcs: Vec<ArcReport>,
    pub tangent: bool,
}

fn line_angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0);
    c.acos()
}

/// Unit vector spanning the kernel of `m` (smallest singular direction).
fn null_vector(m: DMatrix<f64>) -> DVector<f64> {
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    vt.row(k).transpose().normalize()
}

fn newton_equilibrium(sys: &SystemDef, x: &DVector<f64>, u: &[f64]) -> Result<DVector<f64>> {
    let mut y = x.clone();
    for _ in 0..30 {
        let f = sys.eval(&y, u)?;
        if f.norm() < 1e-14 {
            break;
        }
        let j = sys.state_jacobian(&y, u)?;
        let Some(dy) = j.lu().solve(&f) else { break };
        y -= dy;
    }
    Ok(sys.chart_normalize(&y)?.0)
}

/// Launches arcs from `saddle ± eps e_u`, follows them to their limiting
/// equilibria, and compares the arrival direction with the PF vector there.
pub fn saddle_tangency_diagnostic(
    sys: &SystemDef,
    u: &[f64],
    saddle: &DVector<f64>,
    tol: f64,
    pf: &PfSettings,
) -> Result<SaddleReport> {
    let a = sys.state_jacobian(saddle, u)?;
    let n = a.nrows();
    let eig = a.complex_eigenvalues();
    if eig.iter().any(|z| z.im.abs() > 1e-10) {
        return Err(Error::NotHyperbolic(format!("complex eigenvalues {:?}", eig.as_slice())));
    }
    let mut lambdas: Vec<f64> = eig.iter().map(|z| z.re).collect();
    lambdas.sort_by(|x, y| y.total_cmp(x));
    if lambdas.iter().any(|l| l.abs() < 1e-9) {
        return Err(Error::NotHyperbolic(format!("eigenvalue on the imaginary axis: {lambdas:?}")));
    }
    if !(lambdas[0] > 0.0 && lambdas[n - 1] < 0.0) {
        return Err(Error::NotHyperbolic(format!("eigenvalues do not split in sign: {lambdas:?}")));
    }
    let e_u = null_vector(&a - DMatrix::identity(n, n) * lambdas[0]);
    let cone = sys.cone_field().cone_at(saddle)?;
    let linear_pf = {
        let o = cone.orient(&e_u);
        if cone.contains(&o, false)? {
            o
        } else {
            e_u.clone()
        }
    };
    let unstable_pf_angle = line_angle(&e_u, &linear_pf);

    let eps = 1e-6;
    let input = Input::Constant(u.to_vec());
    let arcs: Vec<ArcReport> = [1.0, -1.0]
        .par_iter()
        .map(|&sign| {
            let start = saddle + &e_u * (sign * eps);
            let mut report = ArcReport {
                sign,
                endpoint: None,
                pf_at_endpoint: None,
                arrival_angle: None,
                outcome: String::new(),
            };
            let traj = match flow(sys, &start, &input, (0.0, 200.0), DEFAULT_STEP) {
                Ok(t) => t,
                Err(e) => {
                    report.outcome = format!("escaped: {e}");
                    return report;
                }
            };
            let result = (|| -> Result<(DVector<f64>, DVector<f64>, f64)> {
                let end = traj.last_state();
                let eq = newton_equilibrium(sys, &end, u)?;
                let topo = sys.topology();
                if topo.distance(&eq, saddle) < 1e-6 {
                    return Err(Error::NoPeriod("arc returned to the saddle".into()));
                }
                // last sample still resolvably away from the equilibrium
                let idx = (0..traj.len())
                    .rev()
                    .find(|&i| topo.distance(&traj.state(i), &eq) > 1e-6)
                    .ok_or_else(|| Error::InvalidInput("arc starts at its endpoint".into()))?;
                let dir = topo.displacement(&eq, &traj.state(idx));
                let w = pf_vector_at(sys, &eq, u, pf)?.w;
                Ok((eq, w.clone(), line_angle(&dir, &w)))
            })();
            match result {
                Ok((eq, w, angle)) => {
                    report.endpoint = Some(eq.as_slice().to_vec());
                    report.pf_at_endpoint = Some(w.as_slice().to_vec());
                    report.arrival_angle = Some(angle);
                    report.outcome = if angle <= tol { "tangent" } else { "transversal" }.into();
                }
                Err(e) => report.outcome = format!("{}: {e}", e.kind()),
            }
            report
        })
        .collect();
    let reached: Vec<f64> = arcs.iter().filter_map(|a| a.arrival_angle).collect();
    Ok(SaddleReport {
        saddle: saddle.as_slice().to_vec(),
        eigenvalues: lambdas,
        unstable_direction: e_u.as_slice().to_vec(),
        linear_pf: linear_pf.as_slice().to_vec(),
        unstable_pf_angle,
        tangent: !reached.is_empty() && reached.iter().all(|a| *a <= tol),
        arcs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, ModelName, ModelSpec};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn oscillator() -> SystemDef {
        make_model(&ModelSpec::new(ModelName::HarmonicOscillatorRotatingCone)).unwrap()
    }

    #[test]
    fn oscillator_period_and_circle() {
        let sys = oscillator();
        let om = omega_estimate(&sys, &v(&[1.0, 0.0]), &[], 40.0, 0.5, 1e-3).unwrap();
        for p in &om.points {
            assert!((v(p).norm() - 1.0).abs() < 1e-5);
        }
        let sec = Section {
            point: v(&[1.0, 0.0]),
            normal: v(&[0.0, 1.0]),
            radius: None,
        };
        let p = detect_period(&sys, om.tail.as_ref().unwrap(), &sec).unwrap();
        assert!((p.period.unwrap() - TAU).abs() < 1e-5);
    }

    #[test]
    fn fixed_point_has_no_period() {
        let sys = make_model(&ModelSpec::pendulum(3.0, 0.0)).unwrap();
        let om = omega_estimate(&sys, &v(&[0.3, 0.0]), &[0.0], 200.0, 0.2, 1e-3).unwrap();
        assert!(cloud_diameter(&sys, &om.points) < 1e-4);
        let sec = Section {
            point: v(&[0.0, 0.0]),
            normal: v(&[1.0, 0.0]),
            radius: None,
        };
        assert!(matches!(
            detect_period(&sys, om.tail.as_ref().unwrap(), &sec),
            Err(Error::NoPeriod(_))
        ));
        let still = omega_estimate(&sys, &v(&[0.0, 0.0]), &[0.0], 5.0, 0.2, 1e-3).unwrap();
        assert_eq!(cloud_diameter(&sys, &still.points), 0.0);
    }

    #[test]
    fn fixed_point_classification() {
        let sys = make_model(&ModelSpec::pendulum(3.0, 0.5)).unwrap();
        let c = classify_limit_set(&sys, &[0.5], &v(&[0.1, 0.0]), &ClassifySettings::default()).unwrap();
        assert_eq!(c.report.verdict, LimitVerdict::FixedPoint);
        let fp = c.report.fixed_point.unwrap();
        assert!((fp[0] - 0.5f64.asin()).abs() < 1e-4 && fp[1].abs() < 1e-4);
        assert!(!c.report.growth_flag);
    }

    #[test]
    fn alignment_tags() {
        let pend = make_model(&ModelSpec::pendulum(3.0, 0.0)).unwrap();
        let cloud = |p: Vec<f64>| OmegaSet {
            points: vec![p.clone()],
            source: p,
            t_transient: 0.0,
            t_tail: 0.0,
            tail: None,
        };
        let pf = PfSettings::default();
        // f = (1, -3): neither f nor -f satisfies both facets
        let prof = alignment_profile(&pend, &[0.0], &cloud(vec![0.0, 1.0]), &pf, 10);
        assert_eq!(prof[0].tag, AlignmentTag::NotInCone);
        assert!(prof[0].distance.is_infinite());

        let prof = alignment_profile(&pend, &[0.0], &cloud(vec![0.0, 0.0]), &pf, 10);
        assert_eq!(prof[0].tag, AlignmentTag::Equilibrium);

        // -f is interior for the rotating cone, but there is no PF field
        let prof = alignment_profile(&oscillator(), &[], &cloud(vec![1.0, 0.0]), &pf, 10);
        assert_eq!(prof[0].tag, AlignmentTag::PfFailed);
        assert!(prof[0].error.as_ref().unwrap().starts_with("NonContractive"));
    }

    #[test]
    fn region_checks() {
        let pend = make_model(&ModelSpec::pendulum(3.0, 0.0)).unwrap();
        let b = Region::Box(StateBox::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap());
        let r = invariant_region_check(&pend, &[0.0], &b, 25, 1.0).unwrap();
        assert!(!r.holds && !r.interior_ok);

        let osc = oscillator();
        let ann = Region::Annulus { inner: 0.5, outer: 1.5 };
        let r = invariant_region_check(&osc, &[], &ann, 16, 1.0).unwrap();
        assert!(r.invariance_ok);
        assert!(!r.interior_ok);
        assert!(r.margin.abs() < 1e-12 || r.margin < 0.0);
    }

    #[test]
    fn hausdorff_of_shifted_clouds() {
        let sys = make_model(&ModelSpec::new(ModelName::PositiveLinear)).unwrap();
        let a = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let b = vec![vec![0.0, 0.5], vec![1.0, 0.0]];
        assert!((hausdorff_distance(&sys, &a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn linear_saddle_pf_is_unstable_axis() {
        let sys = make_model(&ModelSpec::positive_linear([[1.0, 0.0], [0.0, -1.0]])).unwrap();
        let r = saddle_tangency_diagnostic(&sys, &[], &v(&[0.0, 0.0]), 1e-2, &PfSettings::default()).unwrap();
        assert_eq!(r.eigenvalues, vec![1.0, -1.0]);
        assert!((r.linear_pf[0] - 1.0).abs() < 1e-12 && r.linear_pf[1].abs() < 1e-12);
        assert!(r.unstable_pf_angle < 1e-12);
        assert!(r.arcs.iter().all(|a| a.outcome.starts_with("escaped")));
    }

    #[test]
    fn stable_node_is_not_a_saddle() {
        let sys = make_model(&ModelSpec::pendulum(3.0, 0.0)).unwrap();
        let e = saddle_tangency_diagnostic(&sys, &[0.0], &v(&[0.0, 0.0]), 1e-2, &PfSettings::default()).unwrap_err();
        assert!(matches!(e, Error::NotHyperbolic(_)));
    }
}
