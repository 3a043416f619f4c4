//! Built-in planar models with their cone fields.
//!
//! | model | dynamics | cone field |
//! |---|---|---|
//! | `positive_linear` | `ẋ = A x` | positive orthant |
//! | `monotone_bistable` | `ẋ1 = -x1 + x2`, `ẋ2 = -x2 + g tanh(x1)` | positive orthant |
//! | `harmonic_oscillator` | `ẋ1 = x2`, `ẋ2 = -x1` | rotating cone on `R² \ {0}` |
//! | `polar_decoupled` | `θ̇ = 1`, `ρ̇ = ρ - ρ³/3` | orthant in `(δθ, δρ)` |
//! | `pendulum` | `θ̇ = v`, `v̇ = -sin θ - k v + u` | `δθ ≥ 0`, `δθ + δv ≥ 0` |

use crate::dynsys::{ChartTopology, CoordKind, SystemDef, TimeKind, VectorField};
use crate::error::{Error, Result};
use crate::geometry::{Cone, ConeField};
use crate::sampling::StateBox;
use nalgebra::{DMatrix, DVector, Matrix2, Rotation2, Vector2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    PositiveLinear,
    MonotoneBistable,
    HarmonicOscillatorRotatingCone,
    PolarDecoupled,
    Pendulum,
}

impl ModelName {
    pub const ALL: [ModelName; 5] = [
        ModelName::PositiveLinear,
        ModelName::MonotoneBistable,
        ModelName::HarmonicOscillatorRotatingCone,
        ModelName::PolarDecoupled,
        ModelName::Pendulum,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelName::PositiveLinear => "positive_linear",
            ModelName::MonotoneBistable => "monotone_bistable",
            ModelName::HarmonicOscillatorRotatingCone => "harmonic_oscillator",
            ModelName::PolarDecoupled => "polar_decoupled",
            ModelName::Pendulum => "pendulum",
        }
    }

    fn allowed_params(&self) -> &'static [&'static str] {
        match self {
            ModelName::PositiveLinear => &["a11", "a12", "a21", "a22"],
            ModelName::MonotoneBistable => &["gain"],
            ModelName::HarmonicOscillatorRotatingCone => &[],
            ModelName::PolarDecoupled => &[],
            ModelName::Pendulum => &["k", "u"],
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match key.as_str() {
            "positive_linear" | "positivelinear" | "linear" => ModelName::PositiveLinear,
            "monotone_bistable" | "monotonebistable" | "bistable" => ModelName::MonotoneBistable,
            "harmonic_oscillator" | "harmonic_oscillator_rotating_cone" | "harmonicoscillatorrotatingcone"
            | "oscillator" => ModelName::HarmonicOscillatorRotatingCone,
            "polar_decoupled" | "polardecoupled" | "polar" => ModelName::PolarDecoupled,
            "pendulum" => ModelName::Pendulum,
            _ => return Err(Error::InvalidSpec(format!("unknown model `{s}`"))),
        })
    }
}

/// Model name plus named parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: ModelName,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(name: ModelName) -> Self {
        ModelSpec {
            name,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn pendulum(k: f64, u: f64) -> Self {
        ModelSpec::new(ModelName::Pendulum).with("k", k).with("u", u)
    }

    pub fn positive_linear(a: [[f64; 2]; 2]) -> Self {
        ModelSpec::new(ModelName::PositiveLinear)
            .with("a11", a[0][0])
            .with("a12", a[0][1])
            .with("a21", a[1][0])
            .with("a22", a[1][1])
    }

    fn param(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.params.get(key).copied().unwrap_or(default);
        if !v.is_finite() {
            return Err(Error::InvalidSpec(format!("parameter `{key}` must be finite")));
        }
        Ok(v)
    }

    fn validate_keys(&self) -> Result<()> {
        let allowed = self.name.allowed_params();
        for key in self.params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::InvalidSpec(format!(
                    "model `{}` has no parameter `{key}` (allowed: {})",
                    self.name,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Region used for state sampling when the caller gives none.
    pub fn default_box(&self) -> StateBox {
        let (lo, hi) = match self.name {
            ModelName::PositiveLinear => (vec![-2.0, -2.0], vec![2.0, 2.0]),
            ModelName::MonotoneBistable => (vec![-3.0, -3.0], vec![3.0, 3.0]),
            ModelName::HarmonicOscillatorRotatingCone => (vec![-2.0, -2.0], vec![2.0, 2.0]),
            ModelName::PolarDecoupled => (vec![0.0, 0.2], vec![TAU, 3.0]),
            ModelName::Pendulum => (vec![0.0, -3.0], vec![TAU, 3.0]),
        };
        StateBox { lo, hi }
    }
}

struct Pendulum {
    k: f64,
}

impl VectorField for Pendulum {
    fn eval(&self, x: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        DVector::from_vec(vec![x[1], -x[0].sin() - self.k * x[1] + u[0]])
    }

    fn jacobian(&self, x: &DVector<f64>, _u: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -x[0].cos(), -self.k]))
    }

    fn input_jacobian(&self, _x: &DVector<f64>, _u: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
    }
}

struct Linear {
    a: DMatrix<f64>,
}

impl VectorField for Linear {
    fn eval(&self, x: &DVector<f64>, _u: &[f64]) -> DVector<f64> {
        &self.a * x
    }

    fn jacobian(&self, _x: &DVector<f64>, _u: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }
}

struct Bistable {
    gain: f64,
}

impl VectorField for Bistable {
    fn eval(&self, x: &DVector<f64>, _u: &[f64]) -> DVector<f64> {
        DVector::from_vec(vec![-x[0] + x[1], -x[1] + self.gain * x[0].tanh()])
    }

    fn jacobian(&self, x: &DVector<f64>, _u: &[f64]) -> Option<DMatrix<f64>> {
        let sech2 = 1.0 / x[0].cosh().powi(2);
        Some(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, self.gain * sech2, -1.0]))
    }
}

struct Polar;

impl VectorField for Polar {
    fn eval(&self, x: &DVector<f64>, _u: &[f64]) -> DVector<f64> {
        let rho = x[1];
        DVector::from_vec(vec![1.0, rho - rho.powi(3) / 3.0])
    }

    fn jacobian(&self, x: &DVector<f64>, _u: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0 - x[1] * x[1]]))
    }
}

/// Covector matrices of the rotating cone: `h1(x) = M1 x`, `h2(x) = M2 x`.
fn oscillator_covectors() -> (Matrix2<f64>, Matrix2<f64>) {
    (
        Matrix2::new(-1.0, -1.0, 1.0, -1.0),
        Matrix2::new(1.0, -1.0, 1.0, 1.0),
    )
}

fn oscillator_cone_field() -> ConeField {
    let (m1, m2) = oscillator_covectors();
    let apply = move |m: &Matrix2<f64>, x: &DVector<f64>| {
        let h = m * Vector2::new(x[0], x[1]);
        DVector::from_vec(vec![h[0], h[1]])
    };
    ConeField::varying(2, move |x| vec![apply(&m1, x), apply(&m2, x)])
        .with_facet_rates(move |_x, xdot| vec![apply(&m1, xdot), apply(&m2, xdot)])
        .with_transport(|x1, x2| {
            let angle = x2[1].atan2(x2[0]) - x1[1].atan2(x1[0]);
            let r = Rotation2::new(angle);
            DMatrix::from_row_slice(2, 2, r.matrix().transpose().as_slice())
        })
}

pub fn make_model(spec: &ModelSpec) -> Result<SystemDef> {
    spec.validate_keys()?;
    let name = spec.name.as_str();
    match spec.name {
        ModelName::Pendulum => {
            let k = spec.param("k", 3.0)?;
            let u = spec.param("u", 0.0)?;
            if k < 0.0 {
                return Err(Error::InvalidSpec(format!("pendulum damping k = {k} must be >= 0")));
            }
            let cone = Cone::from_halfspaces(vec![vec![1.0, 0.0], vec![1.0, 1.0]])?;
            SystemDef::new(
                name,
                TimeKind::Continuous,
                Arc::new(Pendulum { k }),
                ChartTopology::new(vec![CoordKind::Circle, CoordKind::Line]),
                ConeField::constant(cone),
                1,
            )?
            .with_nominal_input(vec![u])
        }
        ModelName::PositiveLinear => {
            let a = DMatrix::from_row_slice(
                2,
                2,
                &[
                    spec.param("a11", 2.0)?,
                    spec.param("a12", 1.0)?,
                    spec.param("a21", 1.0)?,
                    spec.param("a22", 2.0)?,
                ],
            );
            SystemDef::new(
                name,
                TimeKind::Continuous,
                Arc::new(Linear { a }),
                ChartTopology::euclidean(2),
                ConeField::constant(Cone::orthant(2)),
                0,
            )
        }
        ModelName::MonotoneBistable => {
            let gain = spec.param("gain", 2.0)?;
            SystemDef::new(
                name,
                TimeKind::Continuous,
                Arc::new(Bistable { gain }),
                ChartTopology::euclidean(2),
                ConeField::constant(Cone::orthant(2)),
                0,
            )
        }
        ModelName::HarmonicOscillatorRotatingCone => SystemDef::new(
            name,
            TimeKind::Continuous,
            Arc::new(Linear {
                a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            }),
            ChartTopology::euclidean(2),
            oscillator_cone_field(),
            0,
        ),
        ModelName::PolarDecoupled => SystemDef::new(
            name,
            TimeKind::Continuous,
            Arc::new(Polar),
            ChartTopology::new(vec![CoordKind::Circle, CoordKind::PositiveHalfLine]),
            ConeField::constant(Cone::orthant(2)),
            0,
        ),
    }
}
