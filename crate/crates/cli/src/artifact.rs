//! Fitted-model files. Classical models are stored as `key=value` text;
//! neural models use the binary checkpoint with the same run metadata in
//! its header block.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ngarch::classic_bekk::BekkParams;
use ngarch::classic_garch::{EgarchParams, GarchParams, UnivariateModel};
use ngarch::linalg::CovMatrix;
use ngarch::neural_core::checkpoint::MAGIC;
use ngarch::neural_garch::NeuralGarch;
use ngarch::Error;

use crate::config::ModelKind;
use crate::error::{CliError, CliResult};

pub const CLASSIC_FORMAT: &str = "ngarch-classic-1";

/// What the run was fitted on, stored alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInfo {
    pub kind: ModelKind,
    pub dataset: String,
    pub n_assets: usize,
    pub scale: f64,
    pub split: [f64; 3],
    pub demean: bool,
    /// Training mean subtracted from the returns (zeros without `demean`).
    pub mean: Vec<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub train_ll: f64,
    pub val_ll: f64,
}

#[derive(Debug, Clone)]
pub enum Fitted {
    Univariate { model: UnivariateModel, sigma0_sq: f64 },
    Bekk { params: BekkParams, sigma0: CovMatrix },
    Neural(Box<NeuralGarch>),
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub info: RunInfo,
    pub fitted: Fitted,
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

impl RunInfo {
    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("kind", self.kind.name().to_string()),
            ("dataset", self.dataset.clone()),
            ("n_assets", self.n_assets.to_string()),
            ("scale", fmt_f64(self.scale)),
            ("split", join(&self.split)),
            ("demean", self.demean.to_string()),
            ("mean", join(&self.mean)),
            ("seed", self.seed.to_string()),
            ("config_hash", self.config_hash.clone()),
            ("train_ll", fmt_f64(self.train_ll)),
            ("val_ll", fmt_f64(self.val_ll)),
        ]
    }

    fn from_map(m: &Fields) -> CliResult<Self> {
        let kind_name = m.get("kind")?;
        let kind = ModelKind::parse(kind_name).ok_or_else(|| bad(format!("unknown kind '{kind_name}'")))?;
        let split = m.floats("split")?;
        let split: [f64; 3] = split
            .try_into()
            .map_err(|_| bad("split needs three fractions".into()))?;
        Ok(Self {
            kind,
            dataset: m.get("dataset")?.to_string(),
            n_assets: m.parse("n_assets")?,
            scale: m.parse("scale")?,
            split,
            demean: m.parse("demean")?,
            mean: m.floats("mean")?,
            seed: m.parse("seed")?,
            config_hash: m.get("config_hash")?.to_string(),
            train_ll: m.parse("train_ll")?,
            val_ll: m.parse("val_ll")?,
        })
    }
}

fn bad(msg: String) -> CliError {
    CliError::Core(Error::Artifact(msg))
}

struct Fields<'a>(&'a BTreeMap<String, String>);

impl Fields<'_> {
    fn get(&self, k: &str) -> CliResult<&str> {
        self.0
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing field '{k}'")))
    }

    fn opt(&self, k: &str) -> Option<&str> {
        self.0.get(k).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, k: &str) -> CliResult<T> {
        let v = self.get(k)?;
        v.parse().map_err(|_| bad(format!("bad value for '{k}': '{v}'")))
    }

    fn floats(&self, k: &str) -> CliResult<Vec<f64>> {
        let v = self.get(k)?;
        v.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad(format!("bad number in '{k}': '{x}'"))))
            .collect()
    }
}

impl Artifact {
    /// Neural models go to a checkpoint, everything else to text. The header
    /// comment carries the config hash and seed either way.
    pub fn write(&self, path: &Path) -> CliResult<()> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = BufWriter::new(file);
        match &self.fitted {
            Fitted::Neural(model) => {
                let meta: BTreeMap<String, String> = self
                    .info
                    .to_pairs()
                    .into_iter()
                    .map(|(k, v)| (format!("run.{k}"), v))
                    .collect();
                model.save(&mut w, &meta)?;
            }
            _ => {
                w.write_all(self.classic_text().as_bytes())
                    .map_err(|e| CliError::io(path, e))?;
            }
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }

    fn classic_text(&self) -> String {
        let mut pairs = vec![("format", CLASSIC_FORMAT.to_string())];
        pairs.extend(self.info.to_pairs());
        let nu = match &self.fitted {
            Fitted::Univariate { model, sigma0_sq } => {
                pairs.push(("sigma0", fmt_f64(*sigma0_sq)));
                match model {
                    UnivariateModel::Garch(p) => {
                        pairs.push(("omega", fmt_f64(p.omega)));
                        pairs.push(("alpha", fmt_f64(p.alpha)));
                        pairs.push(("beta", fmt_f64(p.beta)));
                    }
                    UnivariateModel::Egarch(p) => {
                        pairs.push(("omega", fmt_f64(p.omega)));
                        pairs.push(("alpha", fmt_f64(p.alpha)));
                        pairs.push(("gamma_lev", fmt_f64(p.gamma_lev)));
                        pairs.push(("beta", fmt_f64(p.beta)));
                    }
                }
                model.nu()
            }
            Fitted::Bekk { params, sigma0 } => {
                pairs.push(("sigma0", join(sigma0.entries())));
                pairs.push(("c_upper", join(&params.c_upper)));
                pairs.push(("a_diag", join(&params.a_diag)));
                pairs.push(("b_diag", join(&params.b_diag)));
                params.nu
            }
            Fitted::Neural(_) => unreachable!("neural models are checkpointed"),
        };
        if let Some(nu) = nu {
            pairs.push(("nu", fmt_f64(nu)));
        }
        let mut s = format!(
            "# ngarch config_hash={} seed={}\n# fitted model parameters\n",
            self.info.config_hash, self.info.seed
        );
        for (k, v) in pairs {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let file = File::open(path).map_err(|_| CliError::Core(Error::FileNotFound(path.to_path_buf())))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| CliError::io(path, e))?;
        if bytes.starts_with(MAGIC) {
            let (model, meta) = NeuralGarch::load(bytes.as_slice())?;
            let run: BTreeMap<String, String> = meta
                .iter()
                .filter_map(|(k, v)| k.strip_prefix("run.").map(|k| (k.to_string(), v.clone())))
                .collect();
            let info = RunInfo::from_map(&Fields(&run))?;
            if !info.kind.is_neural() {
                return Err(bad(format!("checkpoint holds non-neural kind {}", info.kind)));
            }
            return Ok(Self {
                info,
                fitted: Fitted::Neural(Box::new(model)),
            });
        }
        let text = String::from_utf8(bytes).map_err(|_| bad("artifact is neither text nor a checkpoint".into()))?;
        Self::parse_classic(&text)
    }

    fn parse_classic(text: &str) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", i + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let m = Fields(&map);
        if m.get("format")? != CLASSIC_FORMAT {
            return Err(bad(format!("unsupported artifact format '{}'", m.get("format")?)));
        }
        let info = RunInfo::from_map(&m)?;
        let nu = m.opt("nu").map(|_| m.parse::<f64>("nu")).transpose()?;
        let fitted = match info.kind {
            ModelKind::GarchN | ModelKind::GarchT => Fitted::Univariate {
                model: UnivariateModel::Garch(GarchParams {
                    omega: m.parse("omega")?,
                    alpha: m.parse("alpha")?,
                    beta: m.parse("beta")?,
                    nu,
                }),
                sigma0_sq: m.parse("sigma0")?,
            },
            ModelKind::EgarchN | ModelKind::EgarchT => Fitted::Univariate {
                model: UnivariateModel::Egarch(EgarchParams {
                    omega: m.parse("omega")?,
                    alpha: m.parse("alpha")?,
                    gamma_lev: m.parse("gamma_lev")?,
                    beta: m.parse("beta")?,
                    nu,
                }),
                sigma0_sq: m.parse("sigma0")?,
            },
            ModelKind::BekkN | ModelKind::BekkT => {
                let params = BekkParams {
                    c_upper: m.floats("c_upper")?,
                    a_diag: m.floats("a_diag")?,
                    b_diag: m.floats("b_diag")?,
                    nu,
                };
                params.validate()?;
                let sigma0 = CovMatrix::new(params.dim(), m.floats("sigma0")?)?;
                Fitted::Bekk { params, sigma0 }
            }
            k => return Err(bad(format!("{k} artifacts must be checkpoints"))),
        };
        if (info.kind.innovation() == ngarch::classic_garch::Innovation::StudentT) != nu.is_some() {
            return Err(bad(format!("{} artifact and 'nu' field disagree", info.kind)));
        }
        Ok(Self { info, fitted })
    }
}
