//! Run configuration: TOML sections plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::CliError;

pub const CASES: [&str; 5] = ["tgv2d", "tgv3d", "kovasznay", "channel", "box"];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: CaseConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub flux: FluxConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub stats: StatsConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub name: String,
    /// Defaults per case (2 except for `tgv3d`).
    pub dim: Option<usize>,
    #[serde(default = "default_cells")]
    pub cells: usize,
    /// `[lower, upper]` per axis; defaults per case.
    pub extent: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Kovasznay Reynolds number (viscosity `1/re` unless `time.nu` is set).
    #[serde(default = "default_re")]
    pub re: f64,
    /// Kovasznay: outlet on the outflow face instead of exact data.
    #[serde(default)]
    pub outlet: bool,
    /// Iterate to a steady state instead of integrating to `t_end`.
    #[serde(default)]
    pub steady: bool,
    /// Channel body force along x.
    #[serde(default = "default_forcing")]
    pub forcing: f64,
    /// Amplitude of the seeded initial perturbation (channel, box).
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    pub nu: Option<f64>,
    /// `explicit` or `extrapolated` convection.
    #[serde(default = "default_convection")]
    pub convection: String,
    #[serde(default = "default_cfl")]
    pub cfl_guard: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxConfig {
    /// `central`, `upwind`, `hopu` (fixed `l`) or `adaptive`.
    #[serde(default = "default_flux")]
    pub mode: String,
    pub l: Option<usize>,
    pub thresholds: Option<Vec<f64>>,
    #[serde(default = "default_cadence")]
    pub cadence: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// `bubbles` (eliminate stress, rotation and bubbles) or `stress`.
    #[serde(default = "default_elimination")]
    pub elimination: String,
    /// `jacobi` or `two_level`.
    #[serde(default = "default_pressure_pc")]
    pub pressure_pc: String,
    #[serde(default = "default_momentum_tol")]
    pub momentum_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// `projected` or `literal`.
    #[serde(default = "default_update")]
    pub update: String,
    /// Accumulate pressure increments; defaults to true for steady runs.
    pub incremental: Option<bool>,
    #[serde(default = "default_steady_tol")]
    pub steady_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// VTK snapshot cadence in steps (0: none).
    #[serde(default)]
    pub vtk_every: usize,
    /// Checkpoint cadence in steps (0: only the final state).
    #[serde(default)]
    pub checkpoint_every: usize,
    pub restart: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    /// Averaging windows `[t_start, t_end]`.
    #[serde(default)]
    pub windows: Vec<[f64; 2]>,
    /// Probe rows across the channel (wall-normal levels).
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Probes per level along the homogeneous directions.
    #[serde(default = "default_per_level")]
    pub per_level: usize,
    /// Sampling cadence in time steps.
    #[serde(default = "default_every")]
    pub every: usize,
    /// Edge criterion for the thickness integrals, as a fraction of the maximum.
    #[serde(default = "default_edge_fraction")]
    pub edge_fraction: f64,
}

fn default_every() -> usize {
    10
}

fn default_edge_fraction() -> f64 {
    0.99
}

fn default_cells() -> usize {
    8
}
fn default_k() -> usize {
    3
}
fn default_re() -> f64 {
    40.0
}
fn default_forcing() -> f64 {
    1.0
}
fn default_perturbation() -> f64 {
    0.1
}
fn default_seed() -> u64 {
    1
}
fn default_dt() -> f64 {
    1e-3
}
fn default_t_end() -> f64 {
    0.01
}
fn default_convection() -> String {
    "explicit".into()
}
fn default_cfl() -> f64 {
    0.5
}
fn default_flux() -> String {
    "upwind".into()
}
fn default_cadence() -> usize {
    10
}
fn default_elimination() -> String {
    "bubbles".into()
}
fn default_pressure_pc() -> String {
    "jacobi".into()
}
fn default_momentum_tol() -> f64 {
    1e-11
}
fn default_max_iter() -> usize {
    2000
}
fn default_update() -> String {
    "projected".into()
}
fn default_steady_tol() -> f64 {
    1e-9
}
fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_levels() -> usize {
    16
}
fn default_per_level() -> usize {
    8
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { dt: default_dt(), t_end: default_t_end(), nu: None, convection: default_convection(), cfl_guard: default_cfl() }
    }
}

impl Default for FluxConfig {
    fn default() -> Self {
        FluxConfig { mode: default_flux(), l: None, thresholds: None, cadence: default_cadence() }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            elimination: default_elimination(),
            pressure_pc: default_pressure_pc(),
            momentum_tol: default_momentum_tol(),
            max_iter: default_max_iter(),
            update: default_update(),
            incremental: None,
            steady_tol: default_steady_tol(),
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir(), vtk_every: 0, checkpoint_every: 0, restart: None }
    }
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            windows: vec![],
            levels: default_levels(),
            per_level: default_per_level(),
            every: default_every(),
            edge_fraction: default_edge_fraction(),
        }
    }
}

impl RunConfig {
    /// Parses `text`, applies `key=value` overrides and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let cfg: RunConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        } else {
            let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            table.try_into().map_err(|e: toml::de::Error| CliError::Config(format!("after overrides: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn dim(&self) -> usize {
        self.case.dim.unwrap_or(if self.case.name == "tgv3d" { 3 } else { 2 })
    }

    /// Kinematic viscosity, with the Kovasznay default `1/re`.
    pub fn nu(&self) -> f64 {
        self.time.nu.unwrap_or(if self.case.name == "kovasznay" { 1.0 / self.case.re } else { 0.01 })
    }

    pub fn incremental(&self) -> bool {
        self.solver.incremental.unwrap_or(self.case.steady)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, msg: String| Err(CliError::Config(format!("{key}: {msg}")));
        if !CASES.contains(&self.case.name.as_str()) {
            return bad("case.name", format!("unknown case '{}'; available cases: {}", self.case.name, CASES.join(", ")));
        }
        let dim = self.dim();
        match (self.case.name.as_str(), dim) {
            ("tgv2d" | "kovasznay", 2) | ("tgv3d", 3) | ("channel" | "box", 2 | 3) => {}
            (name, d) => return bad("case.dim", format!("case {name} does not support dimension {d}")),
        }
        if self.case.cells == 0 {
            return bad("case.cells", "must be at least 1".into());
        }
        if !(1..=6).contains(&self.case.k) {
            return bad("case.k", format!("must be in 1..=6, got {}", self.case.k));
        }
        if let Some(ext) = &self.case.extent {
            if ext.len() != dim || ext.iter().any(|[a, b]| !(b > a)) {
                return bad("case.extent", format!("need {dim} intervals [lower, upper] with lower < upper"));
            }
        }
        for (key, v) in [
            ("time.dt", self.time.dt),
            ("time.t_end", self.time.t_end),
            ("time.nu", self.nu()),
            ("time.cfl_guard", self.time.cfl_guard),
            ("case.re", self.case.re),
            ("solver.momentum_tol", self.solver.momentum_tol),
            ("solver.steady_tol", self.solver.steady_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, format!("must be positive, got {v}"));
            }
        }
        if !(self.case.perturbation >= 0.0) || !self.case.forcing.is_finite() {
            return bad("case.perturbation", "must be non-negative".into());
        }
        if !matches!(self.time.convection.as_str(), "explicit" | "extrapolated") {
            return bad("time.convection", format!("expected explicit or extrapolated, got '{}'", self.time.convection));
        }
        match self.flux.mode.as_str() {
            "central" | "upwind" => {}
            "hopu" => match self.flux.l {
                Some(l) if l <= self.case.k => {}
                Some(l) => return bad("flux.l", format!("projection order {l} exceeds k = {}", self.case.k)),
                None => return bad("flux.l", "required for mode hopu".into()),
            },
            "adaptive" => {
                let Some(t) = &self.flux.thresholds else {
                    return bad("flux.thresholds", "required for mode adaptive".into());
                };
                if t.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("flux.thresholds", "must be strictly increasing".into());
                }
                if t.len() != self.case.k + 1 {
                    return bad("flux.thresholds", format!("need k + 1 = {} values, got {}", self.case.k + 1, t.len()));
                }
            }
            m => return bad("flux.mode", format!("expected central, upwind, hopu or adaptive, got '{m}'")),
        }
        if self.flux.cadence == 0 {
            return bad("flux.cadence", "must be at least 1".into());
        }
        if !matches!(self.solver.elimination.as_str(), "bubbles" | "stress") {
            return bad("solver.elimination", format!("expected bubbles or stress, got '{}'", self.solver.elimination));
        }
        if !matches!(self.solver.pressure_pc.as_str(), "jacobi" | "two_level") {
            return bad("solver.pressure_pc", format!("expected jacobi or two_level, got '{}'", self.solver.pressure_pc));
        }
        if !matches!(self.solver.update.as_str(), "projected" | "literal") {
            return bad("solver.update", format!("expected projected or literal, got '{}'", self.solver.update));
        }
        if self.stats.windows.iter().any(|[a, b]| !(b > a)) {
            return bad("stats.windows", "each window needs t_start < t_end".into());
        }
        if !self.stats.windows.is_empty() && self.case.name != "channel" {
            return bad("stats.windows", "statistics are collected for the channel case only".into());
        }
        if self.stats.levels < 2 || self.stats.per_level == 0 {
            return bad("stats.levels", "need at least two levels and one probe per level".into());
        }
        if self.stats.every == 0 {
            return bad("stats.every", "must be at least 1".into());
        }
        if !(self.stats.edge_fraction > 0.0 && self.stats.edge_fraction <= 1.0) {
            return bad("stats.edge_fraction", format!("must lie in (0, 1], got {}", self.stats.edge_fraction));
        }
        Ok(())
    }
}

/// `section.key=value`; the value is read as a TOML value, falling back to
/// a plain string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not of the form section.key=value")))?;
    let path = path.trim();
    let raw = raw.trim();
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override '{spec}' has an empty key")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override '{spec}': '{k}' is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[case]\nname = \"tgv2d\"\ncells = 8\nk = 2\n\n[time]\ndt = 1e-3\nt_end = 0.01\n";

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse(BASE, &[]).unwrap();
        assert_eq!(c.dim(), 2);
        assert_eq!(c.nu(), 0.01);
        assert_eq!(c.flux.mode, "upwind");
        let c = RunConfig::parse(BASE, &["time.dt=2e-3".into(), "flux.mode=central".into(), "output.dir=/tmp/x".into()]).unwrap();
        assert_eq!(c.time.dt, 2e-3);
        assert_eq!(c.flux.mode, "central");
        assert_eq!(c.output.dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::parse("[case]\nname = \"nope\"\n", &[]).unwrap_err().to_string();
        assert!(e.contains("available cases") && e.contains("kovasznay"), "{e}");
        let e = RunConfig::parse(&format!("{BASE}bogus = 1\n"), &[]).unwrap_err().to_string();
        assert!(e.contains("bogus") && e.contains("line"), "{e}");
        let e = RunConfig::parse(BASE, &["time.dt=-1".into()]).unwrap_err().to_string();
        assert!(e.contains("time.dt"), "{e}");
        let e = RunConfig::parse(BASE, &["flux.mode=adaptive".into(), "flux.thresholds=[0.1, 0.3, 0.2]".into()])
            .unwrap_err()
            .to_string();
        assert!(e.contains("strictly increasing"), "{e}");
        assert!(RunConfig::parse(BASE, &["nodots".into()]).is_err());
    }

    #[test]
    fn kovasznay_viscosity_default() {
        let c = RunConfig::parse("[case]\nname = \"kovasznay\"\n", &[]).unwrap();
        assert_eq!(c.nu(), 1.0 / 40.0);
        assert_eq!(c.case.k, 3);
    }
}
