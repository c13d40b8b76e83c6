//! Run configuration: JSON schema, validation, and assembly of the solver
//! inputs (problem data, initial fields, oracle) from expression strings.

use std::path::{Path, PathBuf};

use mfg_core::{
    exact_2d_from_w, exact_congestion, exact_zero_drift, ExactSolution, ExactSolution2D,
    FlowConfig, GridFunction1D, GridFunction2D, IntegratorKind, ProblemData1D, ProblemData2D,
    Variant,
};
use serde::{Deserialize, Serialize};

use crate::expr::{Expr, Var};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Standard,
    Congestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowName {
    Gradient,
    Monotone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorName {
    #[default]
    Rk45,
    ImplicitEuler,
}

fn default_variant() -> VariantName {
    VariantName::Standard
}

fn default_dimension() -> u32 {
    1
}

fn default_u0() -> String {
    "0".to_string()
}

fn default_rtol() -> f64 {
    1e-8
}

fn default_atol() -> f64 {
    1e-10
}

fn default_residual_stop() -> f64 {
    1e-9
}

fn default_max_steps() -> u64 {
    10_000_000
}

/// One solver run, as archived in JSON next to its outputs.
///
/// `V`, `b`, `u0`, `m0` are expressions in `x` (1-D); `W`, `u0`, `m0` are
/// expressions in `x` and `y` (2-D). `record_every` defaults to
/// `t_max / 100`. `compare_exact` requires a case with a closed form:
/// any 2-D run, or a 1-D run whose drift is absent or identically zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_variant")]
    pub variant: VariantName,
    #[serde(default = "default_dimension")]
    pub dimension: u32,
    pub n: usize,
    pub flow: FlowName,
    pub t_max: f64,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<String>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<String>,
    #[serde(default = "default_u0")]
    pub u0: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<String>,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_residual_stop")]
    pub residual_stop: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub integrator: IntegratorName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub compare_exact: bool,
}

/// Everything a solve needs, after validation and expression sampling.
#[derive(Debug)]
pub enum Built {
    OneD {
        data: ProblemData1D,
        u0: GridFunction1D,
        /// Present exactly when the flow is monotone.
        m0: Option<GridFunction1D>,
        oracle: Option<ExactSolution>,
    },
    TwoD {
        data: ProblemData2D,
        w0: GridFunction2D,
        theta0: Option<GridFunction2D>,
        oracle: Option<ExactSolution2D>,
    },
}

pub fn load_config(path: &Path) -> Result<RunSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let spec: RunSpec = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        CliError::Config(format!(
            "invalid config {}: at {}: {}",
            path.display(),
            e.path(),
            e.inner()
        ))
    })?;
    Ok(spec)
}

fn parse_named(name: &str, src: &str) -> Result<Expr, CliError> {
    Expr::parse(src)
        .map_err(|e| CliError::Config(format!("in expression {name} = {src:?}: {e}")))
}

/// Parses an expression and samples it at the 1-D grid nodes; rejects uses
/// of `y` and evaluation domain errors.
fn sample_1d(name: &str, src: &str, n: usize) -> Result<Vec<f64>, CliError> {
    let ast = parse_named(name, src)?;
    if ast.uses_var(Var::Y) {
        return Err(CliError::Config(format!(
            "expression {name} uses the variable y in a 1-D run"
        )));
    }
    (1..=n)
        .map(|i| {
            ast.eval(i as f64 / n as f64, 0.0).map_err(|e| {
                CliError::Config(format!("in expression {name} at x = {}: {e}", i as f64 / n as f64))
            })
        })
        .collect()
}

fn sample_2d(name: &str, src: &str, n: usize) -> Result<Vec<f64>, CliError> {
    let ast = parse_named(name, src)?;
    let mut vals = Vec::with_capacity(n * n);
    for j in 1..=n {
        for i in 1..=n {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            vals.push(ast.eval(x, y).map_err(|e| {
                CliError::Config(format!("in expression {name} at ({x}, {y}): {e}"))
            })?);
        }
    }
    Ok(vals)
}

/// An expression closure for the quadrature oracles. Domain errors surface
/// as NaN, which the adaptive quadrature then rejects; the grid sampling
/// above has already vetted the expression at the nodes.
fn closure_1d(ast: Expr) -> impl Fn(f64) -> f64 {
    move |x| ast.eval(x, 0.0).unwrap_or(f64::NAN)
}

fn closure_2d(ast: Expr) -> impl Fn(f64, f64) -> f64 {
    move |x, y| ast.eval(x, y).unwrap_or(f64::NAN)
}

impl RunSpec {
    pub fn flow_config(&self) -> FlowConfig {
        let mut cfg = FlowConfig::new(self.t_max);
        cfg.rtol = self.rtol;
        cfg.atol = self.atol;
        cfg.residual_stop = self.residual_stop;
        cfg.record_every = self.record_every.unwrap_or(self.t_max / 100.0);
        cfg.max_steps = self.max_steps;
        cfg.integrator = match self.integrator {
            IntegratorName::Rk45 => IntegratorKind::Rk45,
            IntegratorName::ImplicitEuler => IntegratorKind::ImplicitEuler,
        };
        cfg
    }

    /// Validates the configuration and assembles the solver inputs. All
    /// violations are configuration errors (exit code 1).
    pub fn build(&self) -> Result<Built, CliError> {
        if self.dimension != 1 && self.dimension != 2 {
            return Err(CliError::Config(format!(
                "dimension must be 1 or 2, got {}",
                self.dimension
            )));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(CliError::Config("t_max must be positive and finite".into()));
        }
        if self.flow == FlowName::Monotone && self.m0.is_none() {
            return Err(CliError::Config(
                "the monotone flow requires the field m0 (initial density expression)".into(),
            ));
        }
        if self.flow == FlowName::Gradient && self.variant == VariantName::Congestion {
            return Err(CliError::Config(
                "the gradient flow applies to the standard variant only; use flow = \"monotone\" for congestion".into(),
            ));
        }
        if self.dimension == 2 {
            self.build_2d()
        } else {
            self.build_1d()
        }
    }

    fn build_1d(&self) -> Result<Built, CliError> {
        let n = self.n;
        let v_src = self.v.as_deref().ok_or_else(|| {
            CliError::Config("a 1-D run requires the potential expression V".into())
        })?;
        if self.w.is_some() {
            return Err(CliError::Config(
                "the field W applies to 2-D runs; a 1-D run takes V".into(),
            ));
        }
        let v_vals = sample_1d("V", v_src, n)?;
        let b_vals = match self.b.as_deref() {
            Some(src) => sample_1d("b", src, n)?,
            None => vec![0.0; n],
        };
        let drift_is_zero = b_vals.iter().all(|&x| x == 0.0);
        let variant = match self.variant {
            VariantName::Standard => Variant::Standard,
            VariantName::Congestion => Variant::Congestion,
        };
        if variant == Variant::Congestion && !drift_is_zero {
            return Err(CliError::Config(
                "the congestion variant has no drift term; omit b or set it to 0".into(),
            ));
        }

        let grid = mfg_core::PeriodicGrid1D::new(n).map_err(CliError::config_from_core)?;
        let data = ProblemData1D::new(
            GridFunction1D::new(grid, v_vals).map_err(CliError::config_from_core)?,
            GridFunction1D::new(grid, b_vals).map_err(CliError::config_from_core)?,
            variant,
        )
        .map_err(CliError::config_from_core)?;

        let u0 =
            GridFunction1D::new(grid, sample_1d("u0", &self.u0, n)?).map_err(CliError::config_from_core)?;
        let m0 = match (self.flow, self.m0.as_deref()) {
            (FlowName::Monotone, Some(src)) => {
                let vals = sample_1d("m0", src, n)?;
                if let Some(k) = vals.iter().position(|&x| x <= 0.0) {
                    return Err(CliError::Config(format!(
                        "m0 must be positive everywhere, found {} at x = {}",
                        vals[k],
                        (k + 1) as f64 / n as f64
                    )));
                }
                Some(GridFunction1D::new(grid, vals).map_err(CliError::config_from_core)?)
            }
            _ => None,
        };

        let oracle = if self.compare_exact {
            if !drift_is_zero {
                return Err(CliError::Config(
                    "compare_exact needs a closed form, which exists only without drift; omit b or drop the comparison".into(),
                ));
            }
            let vf = closure_1d(parse_named("V", v_src)?);
            let sol = match variant {
                Variant::Standard => exact_zero_drift(n, vf),
                Variant::Congestion => exact_congestion(n, vf),
            }
            .map_err(CliError::numerical_from_core)?;
            Some(sol)
        } else {
            None
        };
        Ok(Built::OneD { data, u0, m0, oracle })
    }

    fn build_2d(&self) -> Result<Built, CliError> {
        let n = self.n;
        if self.variant == VariantName::Congestion {
            return Err(CliError::Config("the congestion variant is 1-D only".into()));
        }
        if self.flow == FlowName::Gradient {
            return Err(CliError::Config(
                "the 2-D scheme uses the monotone flow; set flow = \"monotone\"".into(),
            ));
        }
        if self.v.is_some() {
            return Err(CliError::Config(
                "the field V applies to 1-D runs; a 2-D run takes W".into(),
            ));
        }
        if let Some(src) = self.b.as_deref() {
            let vals = sample_2d("b", src, n)?;
            if vals.iter().any(|&x| x != 0.0) {
                return Err(CliError::Config(
                    "the 2-D scheme has no drift term; omit b or set it to 0".into(),
                ));
            }
        }
        let w_src = self.w.as_deref().ok_or_else(|| {
            CliError::Config("a 2-D run requires the potential expression W".into())
        })?;
        let w_vals = sample_2d("W", w_src, n)?;
        let grid = mfg_core::PeriodicGrid2D::new(n).map_err(CliError::config_from_core)?;
        let data = ProblemData2D::new(
            GridFunction2D::new(grid, w_vals).map_err(CliError::config_from_core)?,
        );

        let w0 =
            GridFunction2D::new(grid, sample_2d("u0", &self.u0, n)?).map_err(CliError::config_from_core)?;
        let theta0 = match self.m0.as_deref() {
            Some(src) => {
                let vals = sample_2d("m0", src, n)?;
                if let Some(k) = vals.iter().position(|&x| x <= 0.0) {
                    return Err(CliError::Config(format!(
                        "m0 must be positive everywhere, found {}",
                        vals[k]
                    )));
                }
                Some(GridFunction2D::new(grid, vals).map_err(CliError::config_from_core)?)
            }
            None => None,
        };

        let oracle = if self.compare_exact {
            let wf = closure_2d(parse_named("W", w_src)?);
            Some(exact_2d_from_w(n, wf).map_err(CliError::numerical_from_core)?)
        } else {
            None
        };
        Ok(Built::TwoD { data, w0, theta0, oracle })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_json(text: &str) -> Result<RunSpec, CliError> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| CliError::Config(format!("at {}: {}", e.path(), e.inner())))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let spec = from_json(
            r#"{"n": 100, "flow": "gradient", "t_max": 1.0, "V": "sin(2*pi*x)"}"#,
        )
        .unwrap();
        assert_eq!(spec.variant, VariantName::Standard);
        assert_eq!(spec.dimension, 1);
        assert_eq!(spec.rtol, 1e-8);
        assert_eq!(spec.atol, 1e-10);
        assert_eq!(spec.residual_stop, 1e-9);
        assert_eq!(spec.integrator, IntegratorName::Rk45);
        assert!(!spec.compare_exact);
        let cfg = spec.flow_config();
        assert_eq!(cfg.record_every, 0.01);
        assert!(matches!(spec.build().unwrap(), Built::OneD { m0: None, .. }));
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = from_json(r#"{"n": 10, "flow": "gradient", "t_max": 1.0, "V": "0", "rtoll": 1e-6}"#)
            .unwrap_err();
        assert!(err.to_string().contains("rtoll"), "{err}");
    }

    #[test]
    fn missing_m0_for_monotone_flow_names_the_field() {
        let spec =
            from_json(r#"{"n": 10, "flow": "monotone", "t_max": 1.0, "V": "sin(2*pi*x)"}"#)
                .unwrap();
        let err = spec.build().unwrap_err();
        assert!(err.to_string().contains("m0"), "{err}");
    }

    #[test]
    fn expression_errors_carry_position() {
        let spec = from_json(r#"{"n": 10, "flow": "gradient", "t_max": 1.0, "V": "2*+3"}"#).unwrap();
        let err = spec.build().unwrap_err();
        assert!(err.to_string().contains("byte 2"), "{err}");
    }

    #[test]
    fn congestion_rejects_drift_but_accepts_explicit_zero() {
        let base = r#"{"variant": "congestion", "n": 10, "flow": "monotone", "t_max": 1.0,
                       "V": "sin(2*pi*x)", "m0": "1", "b": "BEXPR"}"#;
        let with_drift = from_json(&base.replace("BEXPR", "cos(2*pi*x)")).unwrap();
        assert!(with_drift.build().is_err());
        let with_zero = from_json(&base.replace("BEXPR", "0*x")).unwrap();
        assert!(with_zero.build().is_ok());
    }

    #[test]
    fn compare_exact_requires_zero_drift() {
        let spec = from_json(
            r#"{"n": 10, "flow": "monotone", "t_max": 1.0, "V": "sin(2*pi*x)",
                "b": "cos(2*pi*x)", "m0": "1", "compare_exact": true}"#,
        )
        .unwrap();
        assert!(spec.build().is_err());
    }

    #[test]
    fn one_d_rejects_y_and_w() {
        let spec =
            from_json(r#"{"n": 10, "flow": "gradient", "t_max": 1.0, "V": "sin(2*pi*y)"}"#)
                .unwrap();
        assert!(spec.build().unwrap_err().to_string().contains('y'));
        let spec = from_json(
            r#"{"n": 10, "flow": "gradient", "t_max": 1.0, "V": "0", "W": "0"}"#,
        )
        .unwrap();
        assert!(spec.build().is_err());
    }

    #[test]
    fn two_d_spec_builds_with_oracle() {
        let spec = from_json(
            r#"{"dimension": 2, "n": 8, "flow": "monotone", "t_max": 1.0,
                "W": "sin(2*pi*x)+sin(2*pi*y)", "m0": "1+0.3*cos(2*pi*(x-3*y))",
                "u0": "0.4*cos(2*pi*(x+2*y))", "compare_exact": true}"#,
        )
        .unwrap();
        match spec.build().unwrap() {
            Built::TwoD { oracle: Some(sol), theta0: Some(t0), .. } => {
                assert!(sol.hbar.is_finite());
                assert!(t0.values().iter().all(|&x| x > 0.0));
            }
            _ => panic!("expected a 2-D build with oracle and initial density"),
        }
    }

    #[test]
    fn nonpositive_m0_is_a_config_error() {
        let spec = from_json(
            r#"{"n": 10, "flow": "monotone", "t_max": 1.0, "V": "0", "m0": "cos(2*pi*x)"}"#,
        )
        .unwrap();
        let err = spec.build().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("positive"), "{err}");
    }
}
