//! Run configuration: one TOML file per run, with `--set section.key=value`
//! overrides applied before deserialization.

use std::fmt;
use std::path::{Path, PathBuf};

use ngarch::classic_garch::{GarchKind, Innovation};
use ngarch::neural_garch::{self as ng, Layout};
use ngarch::timeseries::{ColumnSpec, SplitSpec, DEFAULT_SCALE};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    GarchN,
    GarchT,
    EgarchN,
    EgarchT,
    BekkN,
    BekkT,
    NeuralGarchN,
    NeuralGarchT,
    NeuralBekkN,
    NeuralBekkT,
}

impl ModelKind {
    pub const ALL: [ModelKind; 10] = [
        ModelKind::GarchN,
        ModelKind::GarchT,
        ModelKind::EgarchN,
        ModelKind::EgarchT,
        ModelKind::BekkN,
        ModelKind::BekkT,
        ModelKind::NeuralGarchN,
        ModelKind::NeuralGarchT,
        ModelKind::NeuralBekkN,
        ModelKind::NeuralBekkT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GarchN => "garch-n",
            ModelKind::GarchT => "garch-t",
            ModelKind::EgarchN => "egarch-n",
            ModelKind::EgarchT => "egarch-t",
            ModelKind::BekkN => "bekk-n",
            ModelKind::BekkT => "bekk-t",
            ModelKind::NeuralGarchN => "neural-garch-n",
            ModelKind::NeuralGarchT => "neural-garch-t",
            ModelKind::NeuralBekkN => "neural-bekk-n",
            ModelKind::NeuralBekkT => "neural-bekk-t",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn innovation(self) -> Innovation {
        match self {
            ModelKind::GarchN
            | ModelKind::EgarchN
            | ModelKind::BekkN
            | ModelKind::NeuralGarchN
            | ModelKind::NeuralBekkN => Innovation::Normal,
            _ => Innovation::StudentT,
        }
    }

    pub fn is_univariate(self) -> bool {
        matches!(
            self,
            ModelKind::GarchN
                | ModelKind::GarchT
                | ModelKind::EgarchN
                | ModelKind::EgarchT
                | ModelKind::NeuralGarchN
                | ModelKind::NeuralGarchT
        )
    }

    pub fn is_neural(self) -> bool {
        matches!(
            self,
            ModelKind::NeuralGarchN | ModelKind::NeuralGarchT | ModelKind::NeuralBekkN | ModelKind::NeuralBekkT
        )
    }

    /// The classical univariate kind, if this is one.
    pub fn garch_kind(self) -> Option<GarchKind> {
        match self {
            ModelKind::GarchN => Some(GarchKind::GarchNormal),
            ModelKind::GarchT => Some(GarchKind::GarchT),
            ModelKind::EgarchN => Some(GarchKind::EgarchNormal),
            ModelKind::EgarchT => Some(GarchKind::EgarchT),
            _ => None,
        }
    }

    pub fn layout(self, n_assets: usize) -> Layout {
        if self.is_univariate() {
            Layout::Garch
        } else {
            Layout::Bekk(n_assets)
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: Option<DataSection>,
    pub model: Option<ModelSection>,
    pub simulate: Option<SimulateSection>,
    pub rank: Option<RankSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// One price file per asset.
    pub files: Vec<PathBuf>,
    /// Dataset identifier in results files; defaults to the file stems
    /// joined with `+`.
    pub name: Option<String>,
    #[serde(default = "default_date_column")]
    pub date_column: String,
    #[serde(default = "default_price_column")]
    pub price_column: String,
    #[serde(default = "default_date_format")]
    pub date_format: String,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Subtract the training-sample mean from every return.
    #[serde(default)]
    pub demean: bool,
}

fn default_date_column() -> String {
    ColumnSpec::default().date_column
}
fn default_price_column() -> String {
    ColumnSpec::default().price_column
}
fn default_date_format() -> String {
    ColumnSpec::default().date_format
}
fn default_scale() -> f64 {
    DEFAULT_SCALE
}
fn default_split() -> [f64; 3] {
    let s = SplitSpec::default();
    [s.train_frac, s.val_frac, s.test_frac]
}

impl DataSection {
    pub fn column_spec(&self) -> ColumnSpec {
        ColumnSpec {
            date_column: self.date_column.clone(),
            price_column: self.price_column.clone(),
            date_format: self.date_format.clone(),
        }
    }

    pub fn split_spec(&self) -> ngarch::Result<SplitSpec> {
        SplitSpec::new(self.split[0], self.split[1], self.split[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Optimizer starts for the classical estimators.
    #[serde(default = "default_n_starts")]
    pub n_starts: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_mlp_width")]
    pub mlp_width: usize,
    #[serde(default = "default_nu_scale")]
    pub nu_scale: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_one")]
    pub elbo_samples: usize,
    #[serde(default = "default_var_bias")]
    pub var_bias_init: f64,
    /// 0 forecasts at the prior mean; otherwise Monte Carlo prior draws.
    #[serde(default)]
    pub predict_draws: usize,
    #[serde(default = "default_true")]
    pub posterior_update: bool,
}

fn default_n_starts() -> usize {
    5
}
fn default_hidden() -> usize {
    ng::DEFAULT_HIDDEN
}
fn default_mlp_width() -> usize {
    ng::DEFAULT_MLP_WIDTH
}
fn default_nu_scale() -> f64 {
    ng::DEFAULT_NU_SCALE
}
fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    ng::DEFAULT_EPOCHS
}
fn default_one() -> usize {
    1
}
fn default_var_bias() -> f64 {
    ng::DEFAULT_VAR_BIAS
}
fn default_true() -> bool {
    true
}

impl ModelSection {
    pub fn neural_config(&self, n_assets: usize, seed: u64, scale: f64) -> ng::ModelConfig {
        ng::ModelConfig {
            layout: self.kind.layout(n_assets),
            innovation: self.kind.innovation(),
            hidden: self.hidden,
            mlp_width: self.mlp_width,
            nu_scale: self.nu_scale,
            lr: self.lr,
            epochs: self.epochs,
            seed,
            scale,
            elbo_samples: self.elbo_samples,
            var_bias_init: self.var_bias_init,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimModel {
    Garch,
    Bekk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimInnovation {
    N,
    T,
}

impl From<SimInnovation> for Innovation {
    fn from(s: SimInnovation) -> Self {
        match s {
            SimInnovation::N => Innovation::Normal,
            SimInnovation::T => Innovation::StudentT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub model: SimModel,
    #[serde(default = "default_sim_innovation")]
    pub innovation: SimInnovation,
    pub length: usize,
    /// File stem; multi-asset paths get `_1`, `_2`, ... appended.
    #[serde(default = "default_sim_name")]
    pub name: String,
    pub omega: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Factor applied to ω from the midpoint of the path onwards.
    #[serde(default = "default_omega_break")]
    pub omega_break: f64,
    pub nu: Option<f64>,
    /// Row-major upper triangle of C.
    pub c_upper: Option<Vec<f64>>,
    pub a_diag: Option<Vec<f64>>,
    pub b_diag: Option<Vec<f64>>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_p0")]
    pub p0: f64,
    #[serde(default = "default_start_date")]
    pub start_date: String,
}

fn default_sim_innovation() -> SimInnovation {
    SimInnovation::N
}
fn default_sim_name() -> String {
    "sim".into()
}
fn default_omega_break() -> f64 {
    1.0
}
fn default_p0() -> f64 {
    100.0
}
fn default_start_date() -> String {
    "2010-01-01".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankSection {
    /// Results files, or directories searched recursively for `results.csv`.
    pub results: Vec<PathBuf>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub holm: bool,
}

fn default_alpha() -> f64 {
    0.05
}

/// A parsed configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub path: PathBuf,
    /// Directory relative paths in the file are resolved against.
    pub base: PathBuf,
    text: String,
    /// Hex SHA-256 of the canonical (post-override) configuration, output
    /// directory excluded.
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_str(&text, path, overrides)
    }

    pub fn from_str(text: &str, path: &Path, overrides: &[String]) -> CliResult<Self> {
        let config: RunConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| config_error(text, path, e))?
        } else {
            // spans no longer map onto the file once overrides are applied
            let mut table: toml::Table = text.parse().map_err(|e| config_error(text, path, e))?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            table
                .try_into()
                .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {}", path.display(), e.message().trim())))?
        };
        // where outputs go is not part of what was run
        let mut hashed = config.clone();
        hashed.run.output_dir = PathBuf::new();
        let canonical = toml::to_string(&hashed).map_err(|e| CliError::Config(e.to_string()))?;
        let hash = Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self {
            config,
            path: path.to_path_buf(),
            base,
            text: text.to_string(),
            hash,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn seed(&self) -> u64 {
        self.config.run.seed
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.run.output_dir)
    }

    /// A validation error pointing at the line of `section.key` when the
    /// key appears in the file.
    pub fn error_at(&self, section: &str, key: &str, msg: impl fmt::Display) -> CliError {
        match find_key_line(&self.text, section, key) {
            Some(line) => CliError::Config(format!("{}:{line}: {section}.{key}: {msg}", self.path.display())),
            None => CliError::Config(format!("{}: {section}.{key}: {msg}", self.path.display())),
        }
    }

    pub fn data(&self) -> CliResult<&DataSection> {
        self.config
            .data
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{}: missing [data] section", self.path.display())))
    }

    pub fn model(&self) -> CliResult<&ModelSection> {
        self.config
            .model
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{}: missing [model] section", self.path.display())))
    }

    pub fn simulate(&self) -> CliResult<&SimulateSection> {
        self.config
            .simulate
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{}: missing [simulate] section", self.path.display())))
    }

    pub fn rank(&self) -> CliResult<&RankSection> {
        self.config
            .rank
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{}: missing [rank] section", self.path.display())))
    }

    fn validate(&self) -> CliResult<()> {
        if let Some(d) = &self.config.data {
            if d.files.is_empty() {
                return Err(self.error_at("data", "files", "at least one price file is required"));
            }
            if !(d.scale > 0.0 && d.scale.is_finite()) {
                return Err(self.error_at("data", "scale", format!("must be positive, got {}", d.scale)));
            }
            if let Err(e) = d.split_spec() {
                return Err(self.error_at("data", "split", e));
            }
            if let Some(m) = &self.config.model {
                let n = d.files.len();
                if m.kind.is_univariate() && n != 1 {
                    return Err(self.error_at(
                        "model",
                        "kind",
                        format!("{} is univariate but data.files lists {n} assets", m.kind),
                    ));
                }
            }
        }
        if let Some(m) = &self.config.model {
            if m.kind.is_neural() {
                let cfg = m.neural_config(1, self.seed(), 1.0);
                if let Err(e) = cfg.validate() {
                    return Err(self.error_at("model", "kind", e));
                }
            } else if m.n_starts == 0 {
                return Err(self.error_at("model", "n_starts", "must be at least 1"));
            }
        }
        if let Some(s) = &self.config.simulate {
            if s.length < 2 {
                return Err(self.error_at("simulate", "length", "must be at least 2"));
            }
            if !(s.scale > 0.0 && s.scale.is_finite()) {
                return Err(self.error_at("simulate", "scale", "must be positive"));
            }
            if chrono::NaiveDate::parse_from_str(&s.start_date, "%Y-%m-%d").is_err() {
                return Err(self.error_at("simulate", "start_date", "expected YYYY-MM-DD"));
            }
        }
        if let Some(r) = &self.config.rank {
            if r.results.is_empty() {
                return Err(self.error_at("rank", "results", "no results files listed"));
            }
            if !(r.alpha > 0.0 && r.alpha < 1.0) {
                return Err(self.error_at("rank", "alpha", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

/// `section.key=value`; the value is read as a TOML literal, falling back to
/// a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let bad = || CliError::Config(format!("override '{spec}' is not of the form section.key=value"));
    let (path, raw) = spec.split_once('=').ok_or_else(bad)?;
    let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        _ => Err(CliError::Config(format!("override '{spec}': '{section}' is not a section"))),
    }
}

fn config_error(text: &str, path: &Path, e: toml::de::Error) -> CliError {
    let msg = e.message().trim().to_string();
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            CliError::Config(format!("{}:{line}: {msg}", path.display()))
        }
        None => CliError::Config(format!("{}: {msg}", path.display())),
    }
}

fn find_key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if let Some(name) = l.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = l.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[run]
seed = 7

[data]
files = ["a.csv"]

[model]
kind = "garch-n"
"#;

    fn load(text: &str, overrides: &[&str]) -> CliResult<LoadedConfig> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        LoadedConfig::from_str(text, Path::new("dir/run.toml"), &o)
    }

    #[test]
    fn defaults_fill_in() {
        let c = load(BASIC, &[]).unwrap();
        let d = c.data().unwrap();
        assert_eq!(d.scale, 100.0);
        assert_eq!(d.split, [0.8, 0.1, 0.1]);
        assert_eq!(d.price_column, "price");
        assert_eq!(c.model().unwrap().n_starts, 5);
        assert_eq!(c.output_dir(), PathBuf::from("dir/out"));
        assert_eq!(c.hash.len(), 64);
    }

    #[test]
    fn every_kind_round_trips_through_its_name() {
        for k in ModelKind::ALL {
            assert_eq!(ModelKind::parse(k.name()), Some(k));
            let text = BASIC.replace("garch-n", k.name()).replace(r#"["a.csv"]"#, r#"["a.csv", "b.csv"]"#);
            let parsed = load(&text, &[]);
            assert_eq!(parsed.is_ok(), !k.is_univariate(), "{k}");
        }
    }

    #[test]
    fn seed_is_mandatory() {
        let err = load(&BASIC.replace("seed = 7", ""), &[]).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_kind_reports_its_line() {
        let err = load(&BASIC.replace("garch-n", "garch-x"), &[]).unwrap_err();
        assert!(err.to_string().contains("run.toml:9:"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn univariate_kind_with_two_assets_is_rejected_at_the_kind_line() {
        let err = load(&BASIC.replace(r#"["a.csv"]"#, r#"["a.csv", "b.csv"]"#), &[]).unwrap_err();
        assert!(err.to_string().contains("run.toml:9: model.kind"), "{err}");
    }

    #[test]
    fn overrides_change_values_and_hash() {
        let base = load(BASIC, &[]).unwrap();
        let c = load(BASIC, &["run.seed=9", "model.kind=egarch-t", "data.scale = 1.0"]).unwrap();
        assert_eq!(c.seed(), 9);
        assert_eq!(c.model().unwrap().kind, ModelKind::EgarchT);
        assert_eq!(c.data().unwrap().scale, 1.0);
        assert_ne!(base.hash, c.hash);
        assert_eq!(base.hash, load(BASIC, &[]).unwrap().hash);
        assert!(load(BASIC, &["seed"]).is_err());
        assert_eq!(load(BASIC, &["run.output_dir=elsewhere"]).unwrap().hash, base.hash);
    }

    #[test]
    fn bad_split_is_a_config_error() {
        let text = BASIC.replace("files", "split = [0.5, 0.1, 0.1]\nfiles");
        let err = load(&text, &[]).unwrap_err();
        assert!(err.to_string().contains("data.split"), "{err}");
    }
}
