//! The subcommands. Each takes a loaded configuration and writes its
//! outputs under the configured output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use ngarch::classic_bekk::{self, BekkParams};
use ngarch::classic_garch::{self, FitOptions, GarchParams, Innovation};
use ngarch::evaluation::{cd_report, RankReport, ResultRecord, ResultsMatrix};
use ngarch::likelihood::{loglik_mvn, loglik_mvt};
use ngarch::neural_garch::{self as ng, NeuralGarch, PredictOptions};
use ngarch::simulate;
use ngarch::timeseries::{load_prices, to_returns, ReturnSeries, SplitRanges};
use serde::Deserialize;

use crate::artifact::{fmt_f64, Artifact, Fitted, RunInfo};
use crate::config::{LoadedConfig, SimModel};
use crate::error::{CliError, CliResult};

pub const CLASSIC_ARTIFACT: &str = "model.txt";
pub const NEURAL_ARTIFACT: &str = "model.ckpt";
pub const FIT_REPORT: &str = "fit_report.csv";
pub const HISTORY: &str = "history.csv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const RESULTS: &str = "results.csv";
pub const RANK_REPORT: &str = "rank_report.txt";
pub const RANKS: &str = "ranks.csv";
pub const CD_DIAGRAM: &str = "cd_diagram.svg";

/// `# ngarch config_hash=… seed=…`, the first line of every text output.
pub fn header(cfg: &LoadedConfig) -> String {
    format!("# ngarch config_hash={} seed={}\n", cfg.hash, cfg.seed())
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Returns on the aligned grid, demeaned when configured, with the split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub series: ReturnSeries,
    pub splits: SplitRanges,
    pub mean: Vec<f64>,
}

impl Dataset {
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.series.returns
    }

    pub fn n_assets(&self) -> usize {
        self.series.n_assets()
    }
}

/// Loads the configured price files. `mean` overrides the demeaning vector
/// (prediction reuses the one stored at fit time).
pub fn load_dataset(cfg: &LoadedConfig, mean: Option<&[f64]>) -> CliResult<Dataset> {
    let d = cfg.data()?;
    let spec = d.column_spec();
    let prices = d
        .files
        .iter()
        .map(|f| load_prices(&cfg.resolve(f), &spec))
        .collect::<ngarch::Result<Vec<_>>>()?;
    let series = to_returns(&prices, d.scale)?;
    let splits = d.split_spec()?.ranges(series.len())?;
    let name = d
        .name
        .clone()
        .unwrap_or_else(|| series.names.join("+"));
    let n = series.n_assets();
    let (series, mean) = if d.demean {
        let m = match mean {
            Some(m) => m.to_vec(),
            None => series.slice(splits.train.clone()).mean(),
        };
        (series.demeaned(&m), m)
    } else {
        (series, vec![0.0; n])
    };
    Ok(Dataset {
        name,
        series,
        splits,
        mean,
    })
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub artifact: PathBuf,
    pub report: PathBuf,
    pub train_ll: f64,
    pub val_ll: f64,
}

pub fn artifact_path(cfg: &LoadedConfig) -> CliResult<PathBuf> {
    let name = if cfg.model()?.kind.is_neural() {
        NEURAL_ARTIFACT
    } else {
        CLASSIC_ARTIFACT
    };
    Ok(cfg.output_dir().join(name))
}

pub fn fit(cfg: &LoadedConfig) -> CliResult<FitSummary> {
    let m = cfg.model()?;
    let ds = load_dataset(cfg, None)?;
    let n = ds.n_assets();
    if !m.kind.is_univariate() && n == 1 {
        eprintln!(
            "warning: {} given a single asset; fitting the one-dimensional model",
            m.kind
        );
    }
    let out = cfg.output_dir();
    ensure_dir(&out)?;
    let rows = ds.rows();
    let sp = &ds.splits;
    let seed = cfg.seed();
    let started = Instant::now();
    let mut extra_report: Vec<(&str, String)> = Vec::new();

    let (fitted, train_ll, val_ll) = if let Some(kind) = m.kind.garch_kind() {
        let r = ds.series.column(0);
        let opts = FitOptions {
            n_starts: m.n_starts,
            seed,
        };
        let fit = classic_garch::fit_mle(kind, &r[sp.train.clone()], &opts)?;
        let train_ll = fit.model.loglik_range(&r, fit.sigma0_sq, sp.train.clone())?;
        let val_ll = fit.model.loglik_range(&r, fit.sigma0_sq, sp.val.clone())?;
        let fitted = Fitted::Univariate {
            model: fit.model,
            sigma0_sq: fit.sigma0_sq,
        };
        (fitted, train_ll, val_ll)
    } else if !m.kind.is_neural() {
        let opts = FitOptions {
            n_starts: m.n_starts,
            seed,
        };
        let fit = classic_bekk::fit_mle(m.kind.innovation(), &rows[sp.train.clone()], &opts)?;
        let train_ll = fit.loglik_range(rows, sp.train.clone())?;
        let val_ll = fit.loglik_range(rows, sp.val.clone())?;
        let fitted = Fitted::Bekk {
            params: fit.params,
            sigma0: fit.sigma0,
        };
        (fitted, train_ll, val_ll)
    } else {
        let config = m.neural_config(n, seed, ds.series.scale);
        let mut model = NeuralGarch::new(config, &rows[sp.train.clone()])?;
        let report = ng::train(&mut model, rows, sp)?;
        let train_ll = model
            .predict_rolling(&rows[..sp.train.end], sp.train.clone(), &PredictOptions::default())?
            .loglik;
        let mut history = header(cfg);
        history.push_str("epoch,loss,loglik,kl,val_loglik\n");
        for h in &report.history {
            let _ = writeln!(
                history,
                "{},{},{},{},{}",
                h.epoch,
                fmt_f64(h.loss),
                fmt_f64(h.loglik),
                fmt_f64(h.kl),
                fmt_f64(h.val_loglik)
            );
        }
        write_file(&out.join(HISTORY), &history)?;
        extra_report.push(("best_epoch", report.best_epoch.to_string()));
        extra_report.push(("initial_val_ll", fmt_f64(report.initial_val_loglik())));
        (Fitted::Neural(Box::new(model)), train_ll, report.best_val_loglik)
    };
    let wall = started.elapsed().as_secs_f64();

    let artifact = Artifact {
        info: RunInfo {
            kind: m.kind,
            dataset: ds.name.clone(),
            n_assets: n,
            scale: ds.series.scale,
            split: cfg.data()?.split,
            demean: cfg.data()?.demean,
            mean: ds.mean.clone(),
            seed,
            config_hash: cfg.hash.clone(),
            train_ll,
            val_ll,
        },
        fitted,
    };
    let artifact_path = artifact_path(cfg)?;
    artifact.write(&artifact_path)?;

    let (n_train, n_val, n_test) = sp.lengths();
    let mut report = header(cfg);
    report.push_str("key,value\n");
    let mut pairs: Vec<(&str, String)> = vec![
        ("dataset", ds.name.clone()),
        ("model", m.kind.to_string()),
        ("seed", seed.to_string()),
        ("n_assets", n.to_string()),
        ("n_train", n_train.to_string()),
        ("n_val", n_val.to_string()),
        ("n_test", n_test.to_string()),
        ("train_ll", fmt_f64(train_ll)),
        ("val_ll", fmt_f64(val_ll)),
    ];
    pairs.extend(extra_report);
    pairs.push(("wall_time_s", format!("{wall:.3}")));
    for (k, v) in pairs {
        let _ = writeln!(report, "{k},{v}");
    }
    let report_path = out.join(FIT_REPORT);
    write_file(&report_path, &report)?;
    Ok(FitSummary {
        artifact: artifact_path,
        report: report_path,
        train_ll,
        val_ll,
    })
}

#[derive(Debug, Clone)]
pub struct PredictSummary {
    pub predictions: PathBuf,
    pub results: PathBuf,
    pub test_ll: f64,
    pub n_steps: usize,
}

/// Column labels of vech(Σ): lower triangle, row by row.
fn vech_names(n: usize) -> Vec<String> {
    let mut v = Vec::new();
    for i in 1..=n {
        for j in 1..=i {
            v.push(format!("cov_{i}_{j}"));
        }
    }
    v
}

pub fn predict(cfg: &LoadedConfig, artifact: Option<&Path>) -> CliResult<PredictSummary> {
    let path = match artifact {
        Some(p) => p.to_path_buf(),
        None => artifact_path(cfg)?,
    };
    let art = Artifact::read(&path)?;
    let d = cfg.data()?;
    if d.files.len() != art.info.n_assets {
        return Err(ngarch::Error::DimensionMismatch(format!(
            "artifact {} was fitted on {} asset(s), config lists {}",
            path.display(),
            art.info.n_assets,
            d.files.len()
        ))
        .into());
    }
    if d.scale != art.info.scale || d.split != art.info.split || d.demean != art.info.demean {
        return Err(cfg.error_at(
            "data",
            "scale",
            format!("scale/split/demean differ from those the artifact {} was fitted with", path.display()),
        ));
    }
    let ds = load_dataset(cfg, Some(&art.info.mean))?;
    let rows = ds.rows();
    let test = ds.splits.test.clone();
    let n = ds.n_assets();

    let mut columns: Vec<String> = vec!["date".into()];
    // one row of values per test step, excluding the date
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(test.len());
    match &art.fitted {
        Fitted::Univariate { model, sigma0_sq } => {
            let r = ds.series.column(0);
            let var = model.filter(&r, *sigma0_sq)?;
            columns.extend(["sigma".into(), "loglik".into()]);
            for t in test.clone() {
                let ll = model.score(&var[t..t + 1], &r[t..t + 1])?;
                table.push(vec![var[t].sqrt(), ll]);
            }
        }
        Fitted::Bekk { params, sigma0 } => {
            let sig = classic_bekk::bekk_filter(params, rows, sigma0)?;
            columns.extend(vech_names(n));
            columns.push("loglik".into());
            for t in test.clone() {
                let s = std::slice::from_ref(&sig[t]);
                let r = std::slice::from_ref(&rows[t]);
                let ll = match params.nu {
                    None => loglik_mvn(s, r)?,
                    Some(nu) => loglik_mvt(s, r, nu)?,
                };
                let mut row = sig[t].vech();
                row.push(ll);
                table.push(row);
            }
        }
        Fitted::Neural(model) => {
            let m = cfg.model()?;
            let opts = PredictOptions {
                draws: m.predict_draws,
                seed: cfg.seed(),
                posterior_update: m.posterior_update,
            };
            let f = model.predict_rolling(rows, test.clone(), &opts)?;
            let univariate = art.info.kind.is_univariate();
            if univariate {
                columns.push("sigma".into());
            } else {
                columns.extend(vech_names(n));
            }
            columns.push("loglik".into());
            columns.extend(model.config.layout.gamma_names(model.config.innovation));
            for i in 0..f.sigmas.len() {
                let mut row = if univariate {
                    vec![f.sigmas[i].get(0, 0).sqrt()]
                } else {
                    f.sigmas[i].vech()
                };
                row.push(f.logliks[i]);
                row.extend(&f.prior_gammas[i]);
                table.push(row);
            }
        }
    }
    // table rows exclude the date column
    let ll_col = columns.iter().position(|c| c == "loglik").expect("loglik column") - 1;
    let test_ll: f64 = table.iter().map(|row| row[ll_col]).sum();

    let out = cfg.output_dir();
    ensure_dir(&out)?;
    let mut s = header(cfg);
    s.push_str(&columns.join(","));
    s.push('\n');
    for (t, row) in test.clone().zip(&table) {
        s.push_str(&ds.series.dates[t].to_string());
        for v in row {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    let predictions = out.join(PREDICTIONS);
    write_file(&predictions, &s)?;

    let mut r = header(cfg);
    r.push_str("dataset,model,seed,train_ll,val_ll,test_ll\n");
    let _ = writeln!(
        r,
        "{},{},{},{},{},{}",
        ds.name,
        art.info.kind,
        art.info.seed,
        fmt_f64(art.info.train_ll),
        fmt_f64(art.info.val_ll),
        fmt_f64(test_ll)
    );
    let results = out.join(RESULTS);
    write_file(&results, &r)?;
    Ok(PredictSummary {
        predictions,
        results,
        test_ll,
        n_steps: table.len(),
    })
}

#[derive(Debug, Deserialize)]
struct ResultRow {
    dataset: String,
    model: String,
    seed: u64,
    train_ll: f64,
    val_ll: f64,
    test_ll: f64,
}

/// Expands directories into the `results.csv` files below them, sorted by
/// path so the record order (and hence the report) is stable.
pub fn collect_results(cfg: &LoadedConfig) -> CliResult<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::io(dir, e))?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == RESULTS) {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    for p in &cfg.rank()?.results {
        let p = cfg.resolve(p);
        if p.is_dir() {
            walk(&p, &mut files)?;
        } else if p.is_file() {
            files.push(p);
        } else {
            return Err(cfg.error_at("rank", "results", format!("{} does not exist", p.display())));
        }
    }
    if files.is_empty() {
        return Err(cfg.error_at("rank", "results", "no results.csv files found"));
    }
    Ok(files)
}

pub fn read_results(path: &Path) -> CliResult<Vec<ResultRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    rdr.deserialize::<ResultRow>()
        .map(|row| {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                CliError::Core(ngarch::Error::Parse {
                    line,
                    msg: format!("{}: {e}", path.display()),
                })
            })?;
            Ok(ResultRecord {
                dataset: row.dataset,
                model: row.model,
                seed: row.seed,
                train_ll: row.train_ll,
                val_ll: row.val_ll,
                test_ll: row.test_ll,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RankSummary {
    pub report: RankReport,
    pub text: PathBuf,
    pub svg: PathBuf,
}

pub fn rank(cfg: &LoadedConfig) -> CliResult<RankSummary> {
    let rs = cfg.rank()?;
    let mut records = Vec::new();
    for f in collect_results(cfg)? {
        records.extend(read_results(&f)?);
    }
    let rm = ResultsMatrix::from_records(&records)?;
    let report = cd_report(&rm, rs.alpha, rs.holm)?;

    let out = cfg.output_dir();
    ensure_dir(&out)?;
    let mut text = header(cfg);
    let _ = writeln!(text, "{} models x {} datasets", rm.n_models(), rm.n_datasets());
    text.push_str(&report.to_text());
    let text_path = out.join(RANK_REPORT);
    write_file(&text_path, &text)?;

    let mut csv = header(cfg);
    csv.push_str("model,avg_rank\n");
    for (m, r) in report.models.iter().zip(&report.avg_ranks) {
        let _ = writeln!(csv, "{m},{}", fmt_f64(*r));
    }
    write_file(&out.join(RANKS), &csv)?;

    let svg = format!(
        "<!-- ngarch config_hash={} seed={} -->\n{}",
        cfg.hash,
        cfg.seed(),
        report.to_svg()
    );
    let svg_path = out.join(CD_DIAGRAM);
    write_file(&svg_path, &svg)?;
    Ok(RankSummary {
        report,
        text: text_path,
        svg: svg_path,
    })
}

/// Writes one `date,price` file per simulated asset; returns their paths.
pub fn simulate(cfg: &LoadedConfig) -> CliResult<Vec<PathBuf>> {
    let s = cfg.simulate()?;
    let seed = cfg.seed();
    let innovation: Innovation = s.innovation.into();
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| cfg.error_at("simulate", key, "required for this model"));
    let returns: Vec<Vec<f64>> = match s.model {
        SimModel::Garch => {
            let p = GarchParams {
                omega: need(s.omega, "omega")?,
                alpha: need(s.alpha, "alpha")?,
                beta: need(s.beta, "beta")?,
                nu: s.nu,
            };
            if let Err(e) = p.validate() {
                return Err(cfg.error_at("simulate", "omega", e));
            }
            if !(s.omega_break > 0.0 && s.omega_break.is_finite()) {
                return Err(cfg.error_at("simulate", "omega_break", "must be positive"));
            }
            let half = s.length / 2;
            let r = simulate::simulate_tv_garch(
                |t| {
                    let w = if t < half { p.omega } else { p.omega * s.omega_break };
                    (w, p.alpha, p.beta)
                },
                innovation,
                p.nu,
                s.length,
                seed,
            );
            vec![r]
        }
        SimModel::Bekk => {
            let missing = |key: &str| cfg.error_at("simulate", key, "required for the bekk model");
            let p = BekkParams {
                c_upper: s.c_upper.clone().ok_or_else(|| missing("c_upper"))?,
                a_diag: s.a_diag.clone().ok_or_else(|| missing("a_diag"))?,
                b_diag: s.b_diag.clone().ok_or_else(|| missing("b_diag"))?,
                nu: s.nu,
            };
            if let Err(e) = p.validate() {
                return Err(cfg.error_at("simulate", "c_upper", e));
            }
            let rows = simulate::simulate_bekk(&p, innovation, s.length, seed);
            (0..p.dim()).map(|i| rows.iter().map(|r| r[i]).collect()).collect()
        }
    };
    if returns.iter().flatten().any(|x| !x.is_finite()) {
        return Err(ngarch::Error::Domain("simulated path is not finite".into()).into());
    }
    let start = NaiveDate::parse_from_str(&s.start_date, "%Y-%m-%d")
        .map_err(|e| cfg.error_at("simulate", "start_date", e))?;
    let out = cfg.output_dir();
    ensure_dir(&out)?;
    let mut paths = Vec::new();
    for (i, r) in returns.iter().enumerate() {
        let (dates, prices) = simulate::to_prices(r, s.scale, s.p0, start);
        let mut text = header(cfg);
        text.push_str("date,price\n");
        for (d, p) in dates.iter().zip(&prices) {
            let _ = writeln!(text, "{d},{}", fmt_f64(*p));
        }
        let file = if returns.len() == 1 {
            format!("{}.csv", s.name)
        } else {
            format!("{}_{}.csv", s.name, i + 1)
        };
        let path = out.join(file);
        write_file(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}
