use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub problem: ProblemSpec,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub uq: UqSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default, skip_serializing)]
    pub output: OutputSpec,
}

/// Either a generator with its parameters, or a saved instance directory.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<PathBuf>,
    /// Generator parameters.
    #[serde(flatten)]
    pub params: Table,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
    /// `separable` (Q_t ⊗ Q_s) or `nonseparable` (spatial kernel applied to
    /// scaled space-time distance).
    pub kind: String,
    /// `matern`, `gamma-exp` or `identity`.
    pub spatial_kernel: String,
    pub spatial_nu: f64,
    pub spatial_ell: f64,
    pub spatial_gamma: f64,
    pub spatial_nugget: f64,
    /// `identity`, `kernel` or `minij`.
    pub temporal: String,
    pub temporal_nu: f64,
    pub temporal_ell: f64,
    pub temporal_nugget: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            kind: "separable".into(),
            spatial_kernel: "matern".into(),
            spatial_nu: f64::INFINITY,
            spatial_ell: 0.1,
            spatial_gamma: 1.0,
            spatial_nugget: 1e-6,
            temporal: "identity".into(),
            temporal_nu: f64::INFINITY,
            temporal_ell: 1.0,
            temporal_nugget: 1e-6,
            c1: 1.0,
            c2: 1.0,
            mean: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    /// `simultaneous` or `decoupled`.
    pub method: String,
    /// `fixed`, `gcv`, `wgcv` or `optimal`.
    pub strategy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub wgcv_weight: f64,
    pub wgcv_adaptive: bool,
    pub max_iter: usize,
    pub reorthogonalize: bool,
    pub gcv_flat_stop: bool,
    pub gcv_flat_tol: f64,
    pub lambda_stagnation: f64,
    pub flat_window: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_tol: Option<f64>,
    /// `shared` or `per-time` (decoupled only).
    pub lambda_mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            method: "simultaneous".into(),
            strategy: "wgcv".into(),
            lambda: None,
            wgcv_weight: 0.8,
            wgcv_adaptive: false,
            max_iter: 100,
            reorthogonalize: true,
            gcv_flat_stop: true,
            gcv_flat_tol: 1e-6,
            lambda_stagnation: 0.01,
            flat_window: 3,
            residual_tol: None,
            lambda_mode: "shared".into(),
            threads: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UqSpec {
    /// Also compute variances after `solve`.
    pub enabled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Summary file of an earlier `solve` to take λ from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<PathBuf>,
    /// Number of bidiagonalization steps; defaults to `solver.max_iter`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub oracle_check: bool,
    /// Largest unknown count for which the dense check is attempted.
    pub oracle_max_n: usize,
}

impl Default for UqSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            lambda: None,
            summary: None,
            rank: None,
            oracle_check: true,
            oracle_max_n: 2000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSpec {
    /// `matern` or `gamma-exp`.
    pub family: String,
    pub nu: f64,
    pub ell: f64,
    pub gamma: f64,
    pub r_max: f64,
    pub points: usize,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            family: "matern".into(),
            nu: 1.5,
            ell: 1.0,
            gamma: 1.0,
            r_max: 3.0,
            points: 301,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("dyninv-out"),
        }
    }
}

pub const OUTPUT_ROOT_ENV: &str = "DYNINV_OUTPUT_ROOT";

impl RunConfig {
    /// Read `path` (if any), apply `section.key=value` overrides, and check
    /// the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {}", e.message())))?;
        Ok(cfg)
    }

    /// Output directory, placed under `$DYNINV_OUTPUT_ROOT` when relative.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output.dir.is_relative() => PathBuf::from(root).join(&self.output.dir),
            _ => self.output.dir.clone(),
        }
    }

    /// Configuration text for the run manifest. The output location is not
    /// part of it, so identical runs produce identical manifests.
    pub fn manifest(&self, command: &str) -> Result<String, CliError> {
        let body = toml::to_string(self).map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(format!("# dyninv {} {command}\n{body}", env!("CARGO_PKG_VERSION")))
    }
}

/// Split raw arguments into `section.key=value` overrides and the rest.
pub fn split_overrides(args: impl IntoIterator<Item = String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((key, _)) if key.contains('.') || key == "seed" => overrides.push(a[2..].to_string()),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn apply_override(table: &mut Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override `{spec}` is not key=value")))?;
    let value = parse_value(raw);
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("bad override key `{key}`")));
    }
    let (last, sections) = parts.split_last().expect("nonempty key");
    let mut cur = table;
    for s in sections {
        let entry = cur.entry(s.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("`{s}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_typed() {
        let cfg = RunConfig::load(
            None,
            &[
                "solver.lambda=2.5".into(),
                "solver.strategy=fixed".into(),
                "problem.generator=deblur".into(),
                "problem.nx=12".into(),
                "problem.rays_per_time=[3, 4]".into(),
                "seed=7".into(),
                "prior.spatial_nu=inf".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.solver.lambda, Some(2.5));
        assert_eq!(cfg.solver.strategy, "fixed");
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.problem.params["nx"].as_integer(), Some(12));
        assert!(cfg.problem.params["rays_per_time"].is_array());
        assert!(cfg.prior.spatial_nu.is_infinite());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::load(None, &["solver.lamda=1".into()]).unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
    }

    #[test]
    fn split_args() {
        let (rest, ov) = split_overrides(
            ["solve", "--config", "a.toml", "--solver.lambda=1", "--seed=3", "--verbose"]
                .map(String::from),
        );
        assert_eq!(rest, ["solve", "--config", "a.toml", "--verbose"]);
        assert_eq!(ov, ["solver.lambda=1", "seed=3"]);
    }

    #[test]
    fn manifest_round_trips_without_output() {
        let mut cfg = RunConfig::load(None, &["problem.generator=rays".into(), "problem.nx=5".into()]).unwrap();
        cfg.output.dir = "somewhere".into();
        let text = cfg.manifest("generate").unwrap();
        assert!(!text.contains("somewhere"));
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.problem.generator.as_deref(), Some("rays"));
        assert_eq!(back.problem.params["nx"].as_integer(), Some(5));
    }
}
