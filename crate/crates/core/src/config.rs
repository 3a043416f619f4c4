//! Declarative run configuration (TOML).
//!
//! ```toml
//! command = "check"
//! model = "pendulum"
//! params = { k = 3.0, u = 1.2 }
//!
//! [settings]
//! grid = [41, 41]
//! tolerance = 1e-9
//! ```
//!
//! Instead of `model`, a `[system]` block gives the vector field as
//! expressions, with a `[cone]` block for the (constant) cone.

use crate::dynsys::{ChartTopology, CoordKind, SystemDef, TimeKind};
use crate::error::{Error, Result};
use crate::expr::{ExprField, Scope};
use crate::geometry::{Cone, ConeField, ConeRepr};
use crate::models::{make_model, ModelName, ModelSpec};
use crate::sampling::StateBox;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Check,
    Strict,
    PfField,
    Classify,
    Simulate,
    Hilbert,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Strict => "strict",
            Command::PfField => "pf-field",
            Command::Classify => "classify",
            Command::Simulate => "simulate",
            Command::Hilbert => "hilbert",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "continuous")]
    pub time: TimeKind,
    pub states: Vec<String>,
    /// One entry per state; all `line` when omitted.
    #[serde(default)]
    pub topology: Option<Vec<CoordKind>>,
    pub equations: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    /// Nominal input values, one per entry of `inputs`.
    #[serde(default)]
    pub input: Vec<f64>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

fn continuous() -> TimeKind {
    TimeKind::Continuous
}

/// Numeric settings. Every field is optional; commands fall back to their own defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub step: Option<f64>,
    pub horizon: Option<f64>,
    pub grid: Option<Vec<usize>>,
    pub box_lo: Option<Vec<f64>>,
    pub box_hi: Option<Vec<f64>>,
    pub tolerance: Option<f64>,
    pub per_facet: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub input: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub t_end: Option<f64>,
    pub t_max: Option<f64>,
    pub tail_fraction: Option<f64>,
    pub window: Option<f64>,
    pub pf_tol: Option<f64>,
    pub max_doublings: Option<u32>,
    pub align_tol: Option<f64>,
    /// Base point for `hilbert` (cone taken at this state).
    pub at: Option<Vec<f64>>,
    /// Tangent vectors compared pairwise by `hilbert`.
    pub vectors: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Main artifact; stdout when absent.
    pub out: Option<PathBuf>,
    /// Secondary CSV (Hilbert decay for `strict`).
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub model: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub system: Option<SystemBlock>,
    pub cone: Option<ConeRepr>,
    #[serde(default)]
    pub settings: Settings,
    #[serde(default)]
    pub output: OutputPaths,
}

/// 1-based line and column of a byte offset.
fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before, |i| &before[i + 1..]).chars().count() + 1;
    (line, col)
}

impl RunConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(src, s.start));
            Error::Config {
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    /// The built-in model spec, if the config names one.
    pub fn model_spec(&self) -> Result<Option<ModelSpec>> {
        match &self.model {
            None => Ok(None),
            Some(name) => Ok(Some(ModelSpec {
                name: ModelName::from_str(name)?,
                params: self.params.clone(),
            })),
        }
    }

    /// Builds the system from either `model` or `[system]`, applying a `[cone]` override.
    pub fn build_system(&self) -> Result<SystemDef> {
        let sys = match (self.model_spec()?, &self.system) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidSpec("give either `model` or `[system]`, not both".into()))
            }
            (None, None) => return Err(Error::InvalidSpec("no `model` or `[system]` given".into())),
            (Some(spec), None) => make_model(&spec)?,
            (None, Some(block)) => {
                if !self.params.is_empty() {
                    return Err(Error::InvalidSpec("top-level `params` apply to built-in models only".into()));
                }
                let cone = self
                    .cone
                    .clone()
                    .ok_or_else(|| Error::InvalidSpec("`[system]` needs a `[cone]` block".into()))?;
                return build_expr_system(block, Cone::try_from(cone)?);
            }
        };
        match &self.cone {
            Some(repr) => sys.with_cone_field(ConeField::constant(Cone::try_from(repr.clone())?)),
            None => Ok(sys),
        }
    }

    /// Sampling region: explicit box, else the model default, else a box derived from the topology.
    pub fn region(&self, sys: &SystemDef) -> Result<StateBox> {
        match (&self.settings.box_lo, &self.settings.box_hi) {
            (Some(lo), Some(hi)) => return StateBox::new(lo.clone(), hi.clone()),
            (None, None) => {}
            _ => return Err(Error::InvalidInput("box_lo and box_hi must be given together".into())),
        }
        if let Some(spec) = self.model_spec()? {
            return Ok(spec.default_box());
        }
        let (lo, hi) = sys
            .topology()
            .kinds
            .iter()
            .map(|k| match k {
                CoordKind::Circle => (0.0, TAU),
                CoordKind::Line => (-2.0, 2.0),
                CoordKind::PositiveHalfLine => (0.1, 2.0),
            })
            .unzip();
        StateBox::new(lo, hi)
    }
}

fn build_expr_system(block: &SystemBlock, cone: Cone) -> Result<SystemDef> {
    let n = block.states.len();
    let kinds = block.topology.clone().unwrap_or_else(|| vec![CoordKind::Line; n]);
    if kinds.len() != n {
        return Err(Error::InvalidSpec(format!("{} topology entries for {n} states", kinds.len())));
    }
    let scope = Scope {
        states: block.states.clone(),
        inputs: block.inputs.clone(),
        params: block.params.clone(),
    };
    let field = ExprField::parse(&block.equations, &scope)?;
    let m = block.inputs.len();
    let sys = SystemDef::new(
        block.name.clone().unwrap_or_else(|| "expression".into()),
        block.time,
        Arc::new(field),
        ChartTopology::new(kinds),
        ConeField::constant(cone),
        m,
    )?;
    if block.input.is_empty() {
        Ok(sys)
    } else {
        sys.with_nominal_input(block.input.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn model_config() {
        let c = RunConfig::from_toml_str(
            "command = \"classify\"\nmodel = \"pendulum\"\nparams = { k = 3.0, u = 1.2 }\n[settings]\nt_max = 100.0\n",
        )
        .unwrap();
        assert_eq!(c.command, Some(Command::Classify));
        assert_eq!(c.settings.t_max, Some(100.0));
        let sys = c.build_system().unwrap();
        assert_eq!(sys.nominal_input(), &[1.2]);
        assert_eq!(c.region(&sys).unwrap().hi, vec![TAU, 3.0]);
    }

    #[test]
    fn expression_system_matches_builtin() {
        let src = r#"
[system]
states = ["theta", "v"]
topology = ["circle", "line"]
equations = ["v", "-sin(theta) - k*v + u"]
inputs = ["u"]
input = [1.2]
params = { k = 3.0 }

[cone]
halfspaces = [[1, 0], [1, 1]]
"#;
        let sys = RunConfig::from_toml_str(src).unwrap().build_system().unwrap();
        let builtin = make_model(&ModelSpec::pendulum(3.0, 1.2)).unwrap();
        let x = DVector::from_vec(vec![0.7, -0.3]);
        let a = sys.eval(&x, &[1.2]).unwrap();
        let b = builtin.eval(&x, &[1.2]).unwrap();
        assert!((a - b).norm() < 1e-15);
        let ja = sys.state_jacobian(&x, &[1.2]).unwrap();
        let jb = builtin.state_jacobian(&x, &[1.2]).unwrap();
        assert!((ja - jb).norm() < 1e-6);
    }

    #[test]
    fn parse_errors_report_position() {
        let e = RunConfig::from_toml_str("model = \"pendulum\"\nparams = { k = }\n").unwrap_err();
        match e {
            Error::Config { line, column, .. } => assert_eq!((line, column), (2, 16)),
            other => panic!("{other:?}"),
        }
        let e = RunConfig::from_toml_str("model = \"pendulum\"\n\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }), "{e:?}");
    }

    #[test]
    fn invalid_combinations() {
        let c = RunConfig::from_toml_str("model = \"nope\"").unwrap();
        assert!(matches!(c.build_system(), Err(Error::InvalidSpec(_))));
        let c = RunConfig::default();
        assert!(matches!(c.build_system(), Err(Error::InvalidSpec(_))));
        let c = RunConfig::from_toml_str("[system]\nstates = [\"x\"]\nequations = [\"-x\"]\n").unwrap();
        assert!(matches!(c.build_system(), Err(Error::InvalidSpec(_))));
        let c = RunConfig::from_toml_str("[system]\nstates = [\"x\"]\nequations = [\"-x +\"]\n[cone]\nhalfspaces = [[1]]\n")
            .unwrap();
        assert!(matches!(c.build_system(), Err(Error::Expression { .. })));
    }

    #[test]
    fn cone_override_on_a_model() {
        let c = RunConfig::from_toml_str("model = \"bistable\"\n[cone]\nhalfspaces = [[1, 1], [1, -1]]\n").unwrap();
        let sys = c.build_system().unwrap();
        let cone = sys.cone_field().cone_at(&DVector::zeros(2)).unwrap();
        assert!(!cone.is_orthant());
    }
}
