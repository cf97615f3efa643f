//! Flat `key = value` run configuration.
//!
//! Values are applied in layers: built-in defaults, then a config file, then
//! command-line flags. Blank lines and lines starting with `#` are ignored.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rssa_core::experiments::RssaVariant;
use rssa_core::safety_index::SafetyIndexParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {value:?} ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn bad(key: &str, value: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobotKind {
    Scara,
    Segway,
    /// Deterministic point mass, handy for smoke runs.
    Toy,
}

impl RobotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RobotKind::Scara => "scara",
            RobotKind::Segway => "segway",
            RobotKind::Toy => "toy",
        }
    }
}

impl FromStr for RobotKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scara" => Ok(RobotKind::Scara),
            "segway" => Ok(RobotKind::Segway),
            "toy" => Ok(RobotKind::Toy),
            _ => Err("expected scara, segway or toy".into()),
        }
    }
}

/// Built-in index parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexPreset {
    /// The robot's shipped index.
    Robot,
    /// `(1, 0, 0)`, the user-specified constraint alone.
    Phi0,
    /// `(1, 0.2, 0)`.
    Hand,
}

impl FromStr for IndexPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "robot" => Ok(IndexPreset::Robot),
            "phi0" => Ok(IndexPreset::Phi0),
            "hand" => Ok(IndexPreset::Hand),
            _ => Err("expected robot, phi0 or hand".into()),
        }
    }
}

/// Where a simulation starts.
#[derive(Debug, Clone, PartialEq)]
pub enum StartSpec {
    /// Grid-scan start with `phi < 0`.
    Case1,
    /// Grid-scan start with `phi0 < 0 < phi`.
    Case2,
    /// All-zero state.
    Rest,
    State(Vec<f64>),
}

impl FromStr for StartSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "case1" => Ok(StartSpec::Case1),
            "case2" => Ok(StartSpec::Case2),
            "rest" => Ok(StartSpec::Rest),
            _ => parse_list::<f64>(s).map(StartSpec::State),
        }
    }
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    let items: Result<Vec<T>, String> = s
        .split(',')
        .map(|t| t.trim().parse::<T>().map_err(|e| format!("{t:?}: {e}")))
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub robot: RobotKind,
    pub rssa: RssaVariant,
    pub confidence: f64,
    /// Dynamics samples per bound.
    pub samples: usize,
    pub seed: u64,
    pub dt: f64,
    /// Simulated seconds.
    pub horizon: f64,
    pub out: PathBuf,
    /// Index parameter file; overrides `index` when given.
    pub params: Option<PathBuf>,
    pub index: IndexPreset,
    /// Hidden parameter of the simulated plant; robot default when absent.
    pub true_param: Option<f64>,
    pub start: Option<StartSpec>,
    /// Residual constant for the constant bound; estimated on `residual_grid` when absent.
    pub d_res: Option<f64>,
    pub residual_grid: Option<Vec<usize>>,
    /// Synthesis state grid (points per axis).
    pub grid: Option<Vec<usize>>,
    pub population: usize,
    pub generations: usize,
    pub sigma0: f64,
    /// Margin override; the Lipschitz margin is used when absent.
    pub epsilon: Option<f64>,
    pub gamma_slope: Option<f64>,
    pub probes: usize,
    pub safety_factor: f64,
    /// Joint-position grid of the feasibility map.
    pub map_grid: Option<Vec<usize>>,
    pub velocity_samples: usize,
    pub trials: usize,
    pub fi_values: Vec<f64>,
    pub sample_counts: Vec<usize>,
    pub repeats: usize,
    /// Filter calls timed per repeat.
    pub bench_states: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            robot: RobotKind::Scara,
            rssa: RssaVariant::Polytope,
            confidence: 0.95,
            samples: 50,
            seed: 0,
            dt: 0.002,
            horizon: 5.0,
            out: PathBuf::from("."),
            params: None,
            index: IndexPreset::Robot,
            true_param: None,
            start: None,
            d_res: None,
            residual_grid: None,
            grid: None,
            population: 16,
            generations: 50,
            sigma0: 0.3,
            epsilon: None,
            gamma_slope: None,
            probes: 2000,
            safety_factor: 1.5,
            map_grid: None,
            velocity_samples: 100,
            trials: 100,
            fi_values: vec![1.0, 2.0, 3.0],
            sample_counts: vec![10, 50, 100, 500],
            repeats: 10,
            bench_states: 50,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| bad(key, value, e))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    parse_list(value).map_err(|e| bad(key, value, e))
}

/// `none` or `auto` clears an optional value.
fn cleared(value: &str) -> bool {
    matches!(value, "none" | "auto" | "")
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim() {
            "robot" => self.robot = value.parse().map_err(|e| bad(key, value, e))?,
            "rssa" => {
                self.rssa = RssaVariant::parse(value)
                    .ok_or_else(|| bad(key, value, "expected polytope, ellipsoid, constant or none"))?
            }
            "confidence" => self.confidence = num(key, value)?,
            "samples" => self.samples = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "dt" => self.dt = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "params" => self.params = (!cleared(value)).then(|| PathBuf::from(value)),
            "index" => self.index = value.parse().map_err(|e| bad(key, value, e))?,
            "true_param" => self.true_param = if cleared(value) { None } else { Some(num(key, value)?) },
            "start" => self.start = Some(value.parse().map_err(|e| bad(key, value, e))?),
            "d_res" => self.d_res = if cleared(value) { None } else { Some(num(key, value)?) },
            "residual_grid" => self.residual_grid = Some(list(key, value)?),
            "grid" => self.grid = Some(list(key, value)?),
            "population" => self.population = num(key, value)?,
            "generations" => self.generations = num(key, value)?,
            "sigma0" => self.sigma0 = num(key, value)?,
            "epsilon" => self.epsilon = if cleared(value) { None } else { Some(num(key, value)?) },
            "gamma_slope" => self.gamma_slope = if cleared(value) { None } else { Some(num(key, value)?) },
            "probes" => self.probes = num(key, value)?,
            "safety_factor" => self.safety_factor = num(key, value)?,
            "map_grid" => self.map_grid = Some(list(key, value)?),
            "velocity_samples" => self.velocity_samples = num(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "fi_values" => self.fi_values = list(key, value)?,
            "sample_counts" => self.sample_counts = list(key, value)?,
            "repeats" => self.repeats = num(key, value)?,
            "bench_states" => self.bench_states = num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Apply every setting of a config text; `origin` names it in errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, key: &str, value: String, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(bad(key, &value, reason))
            }
        };
        check(
            self.confidence > 0.0 && self.confidence < 1.0,
            "confidence",
            self.confidence.to_string(),
            "must lie in (0, 1)",
        )?;
        check(self.samples >= 1, "samples", self.samples.to_string(), "must be at least 1")?;
        check(self.dt > 0.0 && self.dt.is_finite(), "dt", self.dt.to_string(), "must be positive")?;
        check(
            self.horizon > 0.0 && self.horizon.is_finite(),
            "horizon",
            self.horizon.to_string(),
            "must be positive",
        )?;
        check(self.population >= 2, "population", self.population.to_string(), "must be at least 2")?;
        check(self.sigma0 > 0.0, "sigma0", self.sigma0.to_string(), "must be positive")?;
        check(self.probes >= 100, "probes", self.probes.to_string(), "must be at least 100")?;
        check(
            self.safety_factor >= 1.0,
            "safety_factor",
            self.safety_factor.to_string(),
            "must be at least 1",
        )?;
        check(self.trials >= 1, "trials", self.trials.to_string(), "must be at least 1")?;
        check(self.repeats >= 10, "repeats", self.repeats.to_string(), "must be at least 10")?;
        check(
            self.velocity_samples >= 1,
            "velocity_samples",
            self.velocity_samples.to_string(),
            "must be at least 1",
        )?;
        check(self.bench_states >= 1, "bench_states", self.bench_states.to_string(), "must be at least 1")?;
        if let Some(e) = self.epsilon {
            check(e >= 0.0, "epsilon", e.to_string(), "must be non-negative")?;
        }
        if let Some(d) = self.d_res {
            check(d >= 0.0, "d_res", d.to_string(), "must be non-negative")?;
        }
        if let Some(g) = self.gamma_slope {
            check(g > 0.0, "gamma_slope", g.to_string(), "must be positive")?;
        }
        for (key, grid) in [("grid", &self.grid), ("map_grid", &self.map_grid), ("residual_grid", &self.residual_grid)] {
            if let Some(g) = grid {
                check(g.iter().all(|&c| c >= 1), key, format!("{g:?}"), "counts must be at least 1")?;
            }
        }
        check(
            self.sample_counts.iter().all(|&c| c >= 1),
            "sample_counts",
            format!("{:?}", self.sample_counts),
            "counts must be at least 1",
        )?;
        Ok(())
    }

    /// Whole simulation steps in the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }
}

/// Index parameters as `key = value` text.
pub fn format_params(p: &SafetyIndexParams) -> String {
    format!(
        "alpha = {}\nk_v = {}\nbeta = {}\ngamma_slope = {}\n",
        p.alpha, p.k_v, p.beta, p.gamma_slope
    )
}

/// Parse a parameter file written by [`format_params`]. `gamma_slope` is optional.
pub fn parse_params(text: &str, origin: &str) -> Result<SafetyIndexParams, ConfigError> {
    let (mut alpha, mut k_v, mut beta, mut slope) = (None, None, None, None);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: origin.to_string(),
            line: i + 1,
        })?;
        let (key, value) = (key.trim(), value.trim());
        let v: f64 = num(key, value)?;
        match key {
            "alpha" => alpha = Some(v),
            "k_v" => k_v = Some(v),
            "beta" => beta = Some(v),
            "gamma_slope" => slope = Some(v),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
    }
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| bad(key, "", "missing from parameter file"));
    let mut p = SafetyIndexParams::new(need(alpha, "alpha")?, need(k_v, "k_v")?, need(beta, "beta")?);
    if let Some(s) = slope {
        p = p.with_gamma_slope(s);
    }
    p.validate().map_err(|e| bad("params", origin, e))?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn later_layers_win() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nrobot = segway\nseed=4\n\nsamples = 10\n", "file").unwrap();
        c.set("seed", "9").unwrap();
        assert_eq!(c.robot, RobotKind::Segway);
        assert_eq!(c.seed, 9);
        assert_eq!(c.samples, 10);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("colour", "red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.apply_text("robot scara", "f"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(c.set("confidence", "high").is_err());
    }

    #[test]
    fn validation_catches_ranges() {
        let c = RunConfig {
            confidence: 1.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            dt: 0.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn start_and_lists() {
        let mut c = RunConfig::default();
        c.set("start", "0.1, 0.2,0,0").unwrap();
        assert_eq!(c.start, Some(StartSpec::State(vec![0.1, 0.2, 0.0, 0.0])));
        c.set("start", "case2").unwrap();
        assert_eq!(c.start, Some(StartSpec::Case2));
        c.set("grid", "3,4").unwrap();
        assert_eq!(c.grid, Some(vec![3, 4]));
        c.set("epsilon", "auto").unwrap();
        assert_eq!(c.epsilon, None);
    }

    #[test]
    fn params_round_trip() {
        let p = SafetyIndexParams::new(0.57, 2.15, 0.072).with_gamma_slope(2.0);
        let q = parse_params(&format_params(&p), "mem").unwrap();
        assert_eq!(p, q);
        assert!(parse_params("alpha = 1\nk_v = 1\n", "mem").is_err());
        assert!(parse_params("alpha = -1\nk_v = 1\nbeta = 0\n", "mem").is_err());
    }
}
