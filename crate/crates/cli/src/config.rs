//! Config files (TOML or JSON) and `key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use kconvex_core::io::{read_density, read_scalar_field, SpaceConfig};
use kconvex_core::verify::{BumpSpec, Scenario};
use kconvex_core::{Density, MetricMeasureSpace, ScalarField};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Potential `u` driving flows and checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `u(x) = λ|x|²/2`.
    Quadratic {
        #[serde(default = "one")]
        lambda: f64,
    },
    /// `u(x) = ⟨c, x⟩`.
    Linear { coefficients: Vec<f64> },
    /// Nodal values, one per point.
    Csv { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::Quadratic { lambda: 1.0 }
    }
}

impl PotentialSpec {
    pub fn build(&self, space: &MetricMeasureSpace, base_dir: &Path) -> Result<ScalarField> {
        Ok(match self {
            PotentialSpec::Quadratic { lambda } => {
                ScalarField::from_fn(space, |x| 0.5 * lambda * x.iter().map(|v| v * v).sum::<f64>())?
            }
            PotentialSpec::Linear { coefficients } => {
                let g = space.require_grid("linear potential")?;
                if coefficients.len() != g.dim() {
                    bail!("linear potential has {} coefficients for a {}-dimensional grid", coefficients.len(), g.dim());
                }
                ScalarField::from_fn(space, |x| x.iter().zip(coefficients).map(|(a, b)| a * b).sum())?
            }
            PotentialSpec::Csv { path } => read_scalar_field(space, &base_dir.join(path))?,
        })
    }
}

/// A probability measure given as a bump or read from a density CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureSpec {
    Bump(BumpSpec),
    File { path: PathBuf },
}

impl MeasureSpec {
    pub fn build(&self, space: &MetricMeasureSpace, base_dir: &Path) -> Result<Density> {
        Ok(match self {
            MeasureSpec::Bump(b) => b.density(space)?,
            MeasureSpec::File { path } => read_density(space, &base_dir.join(path))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    pub mu: MeasureSpec,
    pub nu: MeasureSpec,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Also write the plan as CSV.
    #[serde(default)]
    pub write_plan: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopflaxConfig {
    pub times: Vec<f64>,
    /// Initial datum; the config's potential when absent.
    #[serde(default)]
    pub phi: Option<PotentialSpec>,
    /// Time step of the Hamilton-Jacobi residual; skipped when absent.
    #[serde(default)]
    pub residual_dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowSolver {
    #[default]
    Lagrangian,
    Eulerian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub initial: MeasureSpec,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "one_usize")]
    pub stride: usize,
    #[serde(default)]
    pub solver: FlowSolver,
    /// Particles leaving the domain are frozen instead of raising an error.
    #[serde(default)]
    pub freeze_escaped: bool,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub bounds: Vec<[f64; 2]>,
    pub spacing: f64,
    pub pairs: usize,
    pub horizon: f64,
    pub dt: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { bounds: vec![[-1.0, 1.0], [-1.0, 1.0]], spacing: 0.05, pairs: 6, horizon: 1.0, dt: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub space: Option<SpaceConfig>,
    #[serde(default)]
    pub potential: Option<PotentialSpec>,
    /// Moduli tested by `verify` when `--K` is not given.
    #[serde(default, rename = "K")]
    pub k: Option<Vec<f64>>,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub transport: Option<TransportConfig>,
    #[serde(default)]
    pub hopflax: Option<HopflaxConfig>,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub demo: Option<DemoConfig>,
}

/// A parsed config together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn space(&self) -> Result<MetricMeasureSpace> {
        let cfg = self.config.space.as_ref().ok_or_else(|| anyhow!("config has no [space] section"))?;
        cfg.build(&self.base_dir).context("building the space")
    }

    pub fn potential(&self, space: &MetricMeasureSpace) -> Result<ScalarField> {
        self.config.potential.clone().unwrap_or_default().build(space, &self.base_dir).context("building the potential")
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> Result<String> {
        config_hash(&self.config)
    }
}

pub fn config_hash(config: &Config) -> Result<String> {
    let text = kconvex_core::io::to_json(config)?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

enum Format {
    Toml,
    Json,
}

fn detect(path: &Path, text: &str) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        Some("toml") => Format::Toml,
        _ if text.trim_start().starts_with('{') => Format::Json,
        _ => Format::Toml,
    }
}

/// Parses `text`, reporting syntax and schema errors with line and key.
pub fn parse(path: &Path, text: &str, overrides: &[String]) -> Result<Config> {
    let config: Config = match detect(path, text) {
        Format::Toml => toml::from_str(text).map_err(|e| anyhow!("{}: {e}", path.display()))?,
        Format::Json => serde_json::from_str(text).map_err(|e| anyhow!("{}: {e}", path.display()))?,
    };
    if overrides.is_empty() {
        return Ok(config);
    }
    let mut tree = serde_json::to_value(&config)?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    serde_json::from_value(tree).map_err(|e| anyhow!("config after overrides is invalid: {e}"))
}

pub fn load(path: &Path, overrides: &[String]) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config = parse(path, &text, overrides)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base_dir })
}

/// Applies `a.b.c=value`. The value is read as a TOML literal (number,
/// boolean, array, inline table, quoted string) and falls back to a bare
/// string. Numeric segments index into arrays.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| anyhow!("override '{assignment}' is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override '{assignment}' has an empty key segment");
    }
    let value: Value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key present"))?,
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let segments: Vec<&str> = key.split('.').collect();
    let mut node = tree;
    for (n, seg) in segments.iter().enumerate() {
        let last = n + 1 == segments.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let i: usize = seg.parse().map_err(|_| anyhow!("override key '{key}': '{seg}' must index an array"))?;
                let len = items.len();
                let slot = items.get_mut(i).ok_or_else(|| anyhow!("override key '{key}': index {i} out of range ({len} items)"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => bail!("override key '{key}': '{seg}' does not address a table or array"),
        };
    }
    unreachable!("loop returns on the last segment")
}
