//! GARCH(1,1) and diagonal BEKK(1,1) with time-varying coefficients `γ_t`.
//!
//! A shared GRU reads the return history. A prediction head maps
//! `(γ_{t−1}, h_{t−1})` to a prior over `γ_t`; an inference head maps
//! `(γ_{t−1}, h_t)` to a posterior. Training maximizes the ELBO with
//! reparameterized samples and carries the covariance forward along the
//! posterior chain. Prediction forecasts with the prior, then replaces the
//! state with the posterior once the return is observed.
//!
//! Indexing follows the classical filters: row `t` of a series is scored
//! under the covariance built from `γ_t`, `r_{t−1}` and `Σ_{t−1}`, with the
//! pre-sample outer product set to `Σ_0`, the training covariance.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{BoundParams, ParamSet, Shape, Tape, Var};
use crate::classic_bekk::{self, n_upper};
use crate::classic_garch::Innovation;
use crate::error::{Error, Result};
use crate::likelihood::{tape as lik, Normalization};
use crate::linalg::{self, CovMatrix};
use crate::neural_core::{
    checkpoint, kl_diag_gauss_var, sample_gaussian, GaussianParams, GruCell, GruState, MlpHead,
};
use crate::optim::{Adam, AdamConfig};
use crate::timeseries::SplitRanges;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_MLP_WIDTH: usize = 64;
pub const DEFAULT_NU_SCALE: f64 = 28.0;
pub const DEFAULT_EPOCHS: usize = 200;
/// Initial output bias of the variance blocks: `σ(−5) ≈ 0.0067`.
pub const DEFAULT_VAR_BIAS: f64 = -5.0;

/// Which recursion the coefficients drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// `γ = [ω, α, β]`.
    Garch,
    /// `γ = [a (n), b (n), C upper-triangular row-major]` for `n` assets.
    Bekk(usize),
}

impl Layout {
    pub fn n_assets(self) -> usize {
        match self {
            Layout::Garch => 1,
            Layout::Bekk(n) => n,
        }
    }

    /// Number of recursion coefficients, excluding `ν′`.
    pub fn coef_dim(self) -> usize {
        match self {
            Layout::Garch => 3,
            Layout::Bekk(n) => 2 * n + n_upper(n),
        }
    }

    pub fn gamma_dim(self, innovation: Innovation) -> usize {
        self.coef_dim() + usize::from(innovation == Innovation::StudentT)
    }

    /// Column names for exported coefficient paths (`ν` last when present).
    pub fn gamma_names(self, innovation: Innovation) -> Vec<String> {
        let mut names: Vec<String> = match self {
            Layout::Garch => vec!["omega".into(), "alpha".into(), "beta".into()],
            Layout::Bekk(n) => {
                let mut v: Vec<String> = (1..=n).map(|i| format!("a{i}")).collect();
                v.extend((1..=n).map(|i| format!("b{i}")));
                for i in 1..=n {
                    for j in i..=n {
                        v.push(format!("c{i}{j}"));
                    }
                }
                v
            }
        };
        if innovation == Innovation::StudentT {
            names.push("nu".into());
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layout: Layout,
    pub innovation: Innovation,
    /// GRU hidden size.
    pub hidden: usize,
    /// Width of the two hidden layers of each head.
    pub mlp_width: usize,
    /// `ν = ν′·S_ν + 2`.
    pub nu_scale: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub scale: f64,
    /// Reparameterized samples per ELBO evaluation.
    pub elbo_samples: usize,
    /// Initial bias of the variance block in both heads' output layer.
    pub var_bias_init: f64,
}

impl ModelConfig {
    pub fn new(layout: Layout, innovation: Innovation) -> Self {
        Self {
            layout,
            innovation,
            hidden: DEFAULT_HIDDEN,
            mlp_width: DEFAULT_MLP_WIDTH,
            nu_scale: DEFAULT_NU_SCALE,
            lr: 1e-3,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            scale: crate::timeseries::DEFAULT_SCALE,
            elbo_samples: 1,
            var_bias_init: DEFAULT_VAR_BIAS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layout.n_assets();
        if n == 0 || self.hidden == 0 || self.mlp_width == 0 || self.elbo_samples == 0 {
            return Err(Error::InvalidParams("model sizes must be positive".into()));
        }
        if !(self.nu_scale > 0.0 && self.nu_scale.is_finite()) {
            return Err(Error::InvalidParams(format!("nu_scale must be > 0, got {}", self.nu_scale)));
        }
        if !self.var_bias_init.is_finite() {
            return Err(Error::InvalidParams("var_bias_init must be finite".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParams(format!("learning rate must be > 0, got {}", self.lr)));
        }
        Ok(())
    }

    pub fn gamma_dim(&self) -> usize {
        self.layout.gamma_dim(self.innovation)
    }

    /// `neural-garch-n`, `neural-bekk-t`, ...
    pub fn kind_name(&self) -> String {
        let family = match self.layout {
            Layout::Garch => "neural-garch",
            Layout::Bekk(_) => "neural-bekk",
        };
        format!("{family}-{}", self.innovation.suffix())
    }
}

/// Coefficient vector and the distribution it was drawn from (`None` for
/// the delta-distributed initial value).
#[derive(Debug, Clone, PartialEq)]
pub struct GammaState {
    pub values: Vec<f64>,
    pub dist: Option<GaussianParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub h: GruState,
    pub gamma: GammaState,
    pub sigma: CovMatrix,
    /// `r_{t} r_{t}ᵀ` of the last observation (row-major), `Σ_0` before any.
    pub prev_outer: Vec<f64>,
}

/// `Σ_0` = training covariance, `γ_0` = ones, `h_0` = 0.
pub fn init_priors(config: &ModelConfig, train: &[Vec<f64>]) -> Result<FilterState> {
    if train.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            got: train.len(),
        });
    }
    let n = config.layout.n_assets();
    if let Some(row) = train.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "model expects {n} assets, data row has {}",
            row.len()
        )));
    }
    let sigma = CovMatrix::new(n, linalg::sample_covariance(train, true))?;
    sigma.cholesky()?;
    Ok(FilterState {
        h: GruState::zeros(config.hidden),
        gamma: GammaState {
            values: vec![1.0; config.gamma_dim()],
            dist: None,
        },
        prev_outer: sigma.entries().to_vec(),
        sigma,
    })
}

/// One step of the recursion driven by `gamma`.
pub fn step_variance(layout: Layout, gamma: &[f64], r_prev: &[f64], sigma_prev: &CovMatrix) -> Result<CovMatrix> {
    step_variance_outer(layout, gamma, &classic_bekk::outer(r_prev), sigma_prev)
}

/// [`step_variance`] with the lagged outer product given directly.
pub fn step_variance_outer(layout: Layout, gamma: &[f64], prev_outer: &[f64], sigma_prev: &CovMatrix) -> Result<CovMatrix> {
    if gamma.len() < layout.coef_dim() || sigma_prev.dim() != layout.n_assets() {
        return Err(Error::ShapeMismatch(format!(
            "step_variance: gamma {} / sigma {} for {layout:?}",
            gamma.len(),
            sigma_prev.dim()
        )));
    }
    let out = match layout {
        Layout::Garch => {
            let v = gamma[0] + gamma[1] * prev_outer[0] + gamma[2] * sigma_prev.entries()[0];
            CovMatrix::scalar(v)
        }
        Layout::Bekk(n) => {
            let (a, b, c) = (&gamma[..n], &gamma[n..2 * n], &gamma[2 * n..2 * n + n_upper(n)]);
            let cu = classic_bekk::unpack_upper(n, c);
            let cc = linalg::gram(n, &cu);
            let s = sigma_prev.entries();
            let m: Vec<f64> = (0..n * n)
                .map(|k| {
                    let (i, j) = (k / n, k % n);
                    cc[k] + a[i] * a[j] * prev_outer[k] + b[i] * b[j] * s[k]
                })
                .collect();
            CovMatrix::new(n, m)?
        }
    };
    out.cholesky()?;
    Ok(out)
}

/// Time-varying long-run variance `ω_t / (1 − α_t − β_t)` at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnconditionalVariance {
    /// `f64::INFINITY` when flagged.
    pub value: f64,
    /// `α_t + β_t ≥ 1`.
    pub violation: bool,
}

/// Per-step diagnostic over a univariate `[ω, α, β, ..]` path.
pub fn unconditional_variance_diag(gammas: &[Vec<f64>]) -> Vec<UnconditionalVariance> {
    gammas
        .iter()
        .map(|g| {
            let p = g[1] + g[2];
            if p >= 1.0 {
                UnconditionalVariance {
                    value: f64::INFINITY,
                    violation: true,
                }
            } else {
                UnconditionalVariance {
                    value: g[0] / (1.0 - p),
                    violation: false,
                }
            }
        })
        .collect()
}

/// Values of one ELBO evaluation; `loss = −(loglik − kl)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboValue {
    pub loss: f64,
    pub loglik: f64,
    pub kl: f64,
}

/// Standard-normal draws indexed `[sample][t][element]`.
pub type ElboNoise = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOptions {
    /// 0 scores at the prior mean; otherwise the predictive density is the
    /// average over this many prior draws.
    pub draws: usize,
    pub seed: u64,
    /// When false the state is carried with the prior forecast only.
    pub posterior_update: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            draws: 0,
            seed: 0,
            posterior_update: true,
        }
    }
}

/// One-step-ahead forecasts for the scored range.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub range: Range<usize>,
    /// Forecast covariance for each scored row.
    pub sigmas: Vec<CovMatrix>,
    /// Prior coefficients used for each forecast (`ν′` mapped to `ν`).
    pub prior_gammas: Vec<Vec<f64>>,
    /// Posterior coefficients after observing each row (`ν′` mapped to `ν`).
    pub posterior_gammas: Vec<Vec<f64>>,
    pub logliks: Vec<f64>,
    pub loglik: f64,
}

#[derive(Clone, Copy)]
struct Carry<'t> {
    h: Var<'t>,
    gamma: Var<'t>,
    sigma: Var<'t>,
    prev_outer: Var<'t>,
}

#[derive(Debug, Clone)]
pub struct NeuralGarch {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub gru: GruCell,
    pub prior_head: MlpHead,
    pub posterior_head: MlpHead,
    pub sigma0: CovMatrix,
}

impl NeuralGarch {
    /// Fresh weights from `config.seed`; `Σ_0` from `train`.
    pub fn new(config: ModelConfig, train: &[Vec<f64>]) -> Result<Self> {
        config.validate()?;
        let init = init_priors(&config, train)?;
        Ok(Self::build(config, init.sigma))
    }

    fn build(config: ModelConfig, sigma0: CovMatrix) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let n = config.layout.n_assets();
        let d = config.gamma_dim();
        let gru = GruCell::new(&mut params, "gru", n, config.hidden, &mut rng);
        let prior_head = MlpHead::new(&mut params, "prior", d + config.hidden, config.mlp_width, d, &mut rng);
        let posterior_head = MlpHead::new(&mut params, "posterior", d + config.hidden, config.mlp_width, d, &mut rng);
        prior_head.set_variance_bias(&mut params, config.var_bias_init);
        posterior_head.set_variance_bias(&mut params, config.var_bias_init);
        Self {
            config,
            params,
            gru,
            prior_head,
            posterior_head,
            sigma0,
        }
    }

    pub fn initial_state(&self) -> FilterState {
        FilterState {
            h: GruState::zeros(self.config.hidden),
            gamma: GammaState {
                values: vec![1.0; self.config.gamma_dim()],
                dist: None,
            },
            sigma: self.sigma0.clone(),
            prev_outer: self.sigma0.entries().to_vec(),
        }
    }

    fn check_rows(&self, rows: &[Vec<f64>]) -> Result<()> {
        let n = self.config.layout.n_assets();
        match rows.iter().find(|r| r.len() != n) {
            Some(r) => Err(Error::DimensionMismatch(format!(
                "model expects {n} assets, data row has {}",
                r.len()
            ))),
            None => Ok(()),
        }
    }

    pub fn gru_encode(&self, h_prev: &GruState, r: &[f64]) -> Result<GruState> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let h = self.gru.step(&p, tape.column(&h_prev.h), tape.column(r))?;
        Ok(GruState { h: h.value() })
    }

    /// Prior over `γ_t` from `(γ_{t−1}, h_{t−1})`.
    pub fn predict_gamma(&self, gamma_prev: &GammaState, h_prev: &GruState) -> Result<GaussianParams> {
        self.head_values(&self.prior_head, gamma_prev, h_prev)
    }

    /// Posterior over `γ_t` from `(γ_{t−1}, h_t)`.
    pub fn infer_gamma(&self, gamma_prev: &GammaState, h_t: &GruState) -> Result<GaussianParams> {
        self.head_values(&self.posterior_head, gamma_prev, h_t)
    }

    fn head_values(&self, head: &MlpHead, gamma_prev: &GammaState, h: &GruState) -> Result<GaussianParams> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let g = head.forward_on(&p, tape.column(&gamma_prev.values), tape.column(&h.h))?;
        Ok(g.values())
    }

    fn variance_var<'t>(&self, tape: &'t Tape, gamma: Var<'t>, prev_outer: Var<'t>, sigma_prev: Var<'t>) -> Result<Var<'t>> {
        match self.config.layout {
            Layout::Garch => {
                let w = gamma.slice(0, 1)?;
                let a = gamma.slice(1, 1)?;
                let b = gamma.slice(2, 1)?;
                w.add(&a.mul(&prev_outer)?)?.add(&b.mul(&sigma_prev)?)
            }
            Layout::Bekk(n) => {
                let a = gamma.slice(0, n)?;
                let b = gamma.slice(n, n)?;
                let c = classic_bekk::tape::c_matrix(tape, n, gamma.slice(2 * n, n_upper(n))?)?;
                let cc = c.transpose().matmul(&c)?;
                classic_bekk::tape::step(cc, a, b, prev_outer, sigma_prev)
            }
        }
    }

    fn nu_var<'t>(&self, gamma: Var<'t>) -> Result<Option<Var<'t>>> {
        Ok(match self.config.innovation {
            Innovation::Normal => None,
            Innovation::StudentT => Some(
                gamma
                    .slice(self.config.layout.coef_dim(), 1)?
                    .scale(self.config.nu_scale)
                    .offset(2.0),
            ),
        })
    }

    fn obs_loglik<'t>(&self, tape: &'t Tape, sigma: Var<'t>, gamma: Var<'t>, r: &[f64]) -> Result<Var<'t>> {
        let nu = self.nu_var(gamma)?;
        match self.config.layout {
            Layout::Garch => {
                let rsq = tape.scalar(r[0] * r[0]);
                let var = sigma.reshape(Shape::SCALAR)?;
                match nu {
                    None => lik::normal_terms(var, rsq, Normalization::Full),
                    Some(nu) => lik::student_t_terms(var, rsq, nu.reshape(Shape::SCALAR)?, Normalization::Full),
                }
            }
            Layout::Bekk(_) => {
                let rv = tape.column(r);
                match nu {
                    None => lik::mvn_term(sigma, rv),
                    Some(nu) => lik::mvt_term(sigma, rv, nu.reshape(Shape::SCALAR)?),
                }
            }
        }
    }

    /// Reported coefficients: `ν′` mapped to `ν`.
    fn report_gamma(&self, mut g: Vec<f64>) -> Vec<f64> {
        if self.config.innovation == Innovation::StudentT {
            let k = self.config.layout.coef_dim();
            g[k] = g[k] * self.config.nu_scale + 2.0;
        }
        g
    }

    fn carry_from<'t>(&self, tape: &'t Tape, s: &FilterState) -> Carry<'t> {
        let n = self.config.layout.n_assets();
        Carry {
            h: tape.column(&s.h.h),
            gamma: tape.column(&s.gamma.values),
            sigma: tape.var(Shape::new(n, n), s.sigma.entries().to_vec()).expect("square"),
            prev_outer: tape.var(Shape::new(n, n), s.prev_outer.clone()).expect("square"),
        }
    }

    /// Standard-normal draws for [`Self::elbo`], one block per sample.
    pub fn draw_noise(&self, len: usize, rng: &mut ChaCha8Rng) -> ElboNoise {
        let d = self.config.gamma_dim();
        (0..self.config.elbo_samples)
            .map(|_| {
                (0..len)
                    .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
                    .collect()
            })
            .collect()
    }

    /// Returns `(Σ LL, Σ KL)` averaged over the noise samples.
    fn elbo_tape<'t>(&self, tape: &'t Tape, p: &BoundParams<'t>, rows: &[Vec<f64>], noise: &ElboNoise) -> Result<(Var<'t>, Var<'t>)> {
        if rows.len() < 2 {
            return Err(Error::SeriesTooShort {
                needed: 2,
                got: rows.len(),
            });
        }
        self.check_rows(rows)?;
        let d = self.config.gamma_dim();
        if noise.is_empty() || noise.iter().any(|s| s.len() != rows.len() || s.iter().any(|e| e.len() != d)) {
            return Err(Error::ShapeMismatch("ELBO noise does not match series".into()));
        }
        let n = self.config.layout.n_assets();
        let init = self.initial_state();
        let mut ll_parts = Vec::with_capacity(noise.len());
        let mut kl_parts = Vec::with_capacity(noise.len());
        for sample in noise {
            let mut c = self.carry_from(tape, &init);
            let mut lls = Vec::with_capacity(rows.len());
            let mut kls = Vec::with_capacity(rows.len());
            for (r, eps) in rows.iter().zip(sample) {
                let prior = self.prior_head.forward_on(p, c.gamma, c.h)?;
                let h = self.gru.step(p, c.h, tape.column(r))?;
                let post = self.posterior_head.forward_on(p, c.gamma, h)?;
                let gamma = sample_gaussian(&post, eps)?;
                let sigma = self.variance_var(tape, gamma, c.prev_outer, c.sigma)?;
                lls.push(self.obs_loglik(tape, sigma, gamma, r)?);
                kls.push(kl_diag_gauss_var(&post, &prior)?);
                c = Carry {
                    h,
                    gamma,
                    sigma,
                    prev_outer: tape.var(Shape::new(n, n), classic_bekk::outer(r))?,
                };
            }
            ll_parts.push(tape.concat(&lls)?.sum());
            kl_parts.push(tape.concat(&kls)?.sum());
        }
        let k = 1.0 / noise.len() as f64;
        Ok((tape.concat(&ll_parts)?.sum().scale(k), tape.concat(&kl_parts)?.sum().scale(k)))
    }

    pub fn elbo(&self, rows: &[Vec<f64>], noise: &ElboNoise) -> Result<ElboValue> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let (ll, kl) = self.elbo_tape(&tape, &p, rows, noise)?;
        let (ll, kl) = (ll.item(), kl.item());
        Ok(ElboValue {
            loss: -(ll - kl),
            loglik: ll,
            kl,
        })
    }

    /// Loss and its gradient in [`ParamSet::flatten`] order.
    pub fn loss_and_gradient(&self, rows: &[Vec<f64>], noise: &ElboNoise) -> Result<(ElboValue, Vec<f64>)> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let (ll, kl) = self.elbo_tape(&tape, &p, rows, noise)?;
        let loss = kl.sub(&ll)?;
        let grads = loss.backward()?;
        let value = ElboValue {
            loss: loss.item(),
            loglik: ll.item(),
            kl: kl.item(),
        };
        Ok((value, p.gradient(&grads)))
    }

    /// Rolling one-step-ahead forecasts over `rows[..range.end]`, scoring
    /// `rows[range]`. `rows` must start where the training data started.
    pub fn predict_rolling(&self, rows: &[Vec<f64>], range: Range<usize>, opts: &PredictOptions) -> Result<Forecast> {
        if range.end > rows.len() || range.is_empty() {
            return Err(Error::InvalidParams(format!(
                "prediction range {range:?} outside series of length {}",
                rows.len()
            )));
        }
        self.check_rows(rows)?;
        let n = self.config.layout.n_assets();
        let d = self.config.gamma_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let mark = tape.len();
        let mut state = self.initial_state();
        let mut out = Forecast {
            range: range.clone(),
            sigmas: Vec::with_capacity(range.len()),
            prior_gammas: Vec::with_capacity(range.len()),
            posterior_gammas: Vec::with_capacity(range.len()),
            logliks: Vec::with_capacity(range.len()),
            loglik: 0.0,
        };
        let zeros = vec![0.0; d];
        for (t, r) in rows[..range.end].iter().enumerate() {
            let scored = range.contains(&t);
            let c = self.carry_from(&tape, &state);
            let prior = self.prior_head.forward_on(&p, c.gamma, c.h)?;
            let gamma_hat = sample_gaussian(&prior, &zeros)?;
            let sigma_hat = self.variance_var(&tape, gamma_hat, c.prev_outer, c.sigma)?;
            if scored {
                let ll = if opts.draws == 0 {
                    self.obs_loglik(&tape, sigma_hat, gamma_hat, r)?.item()
                } else {
                    let mut terms = Vec::with_capacity(opts.draws);
                    for _ in 0..opts.draws {
                        let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                        let g = sample_gaussian(&prior, &eps)?;
                        let s = self.variance_var(&tape, g, c.prev_outer, c.sigma)?;
                        terms.push(self.obs_loglik(&tape, s, g, r)?.item());
                    }
                    log_mean_exp(&terms)
                };
                out.logliks.push(ll);
                out.sigmas.push(CovMatrix::new(n, sigma_hat.value())?);
                out.prior_gammas.push(self.report_gamma(gamma_hat.value()));
            }
            let h = self.gru.step(&p, c.h, tape.column(r))?;
            let (gamma, sigma, dist) = if opts.posterior_update {
                let post = self.posterior_head.forward_on(&p, c.gamma, h)?;
                let g = sample_gaussian(&post, &zeros)?;
                let s = self.variance_var(&tape, g, c.prev_outer, c.sigma)?;
                (g, s, post)
            } else {
                (gamma_hat, sigma_hat, prior)
            };
            let sigma = CovMatrix::new(n, sigma.value())?;
            sigma.cholesky().map_err(|_| Error::NotPositiveDefiniteAt { t })?;
            if scored {
                out.posterior_gammas.push(self.report_gamma(gamma.value()));
            }
            state = FilterState {
                h: GruState { h: h.value() },
                gamma: GammaState {
                    values: gamma.value(),
                    dist: Some(dist.values()),
                },
                sigma,
                prev_outer: classic_bekk::outer(r),
            };
            tape.truncate(mark);
        }
        out.loglik = out.logliks.iter().sum();
        Ok(out)
    }

    /// Writes the checkpoint: configuration and `Σ_0` in the metadata block,
    /// followed by every weight tensor. `extra` entries are stored verbatim.
    pub fn save<W: Write>(&self, w: W, extra: &BTreeMap<String, String>) -> Result<()> {
        let c = &self.config;
        let mut meta = extra.clone();
        let (layout, n) = match c.layout {
            Layout::Garch => ("garch", 1),
            Layout::Bekk(n) => ("bekk", n),
        };
        let entries: Vec<String> = self.sigma0.entries().iter().map(|x| format!("{x:?}")).collect();
        for (k, v) in [
            ("layout", layout.to_string()),
            ("n_assets", n.to_string()),
            ("innovation", c.innovation.suffix().to_string()),
            ("hidden", c.hidden.to_string()),
            ("mlp_width", c.mlp_width.to_string()),
            ("nu_scale", format!("{:?}", c.nu_scale)),
            ("lr", format!("{:?}", c.lr)),
            ("epochs", c.epochs.to_string()),
            ("seed", c.seed.to_string()),
            ("scale", format!("{:?}", c.scale)),
            ("elbo_samples", c.elbo_samples.to_string()),
            ("var_bias_init", format!("{:?}", c.var_bias_init)),
            ("sigma0", entries.join(",")),
        ] {
            meta.insert(k.to_string(), v);
        }
        checkpoint::write(w, &meta, &self.params)
    }

    /// Reads a checkpoint written by [`Self::save`]; returns the full
    /// metadata block alongside the model.
    pub fn load<R: Read>(r: R) -> Result<(Self, BTreeMap<String, String>)> {
        let (meta, params) = checkpoint::read(r)?;
        let get = |k: &str| {
            meta.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Artifact(format!("checkpoint metadata lacks '{k}'")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Artifact(format!("bad checkpoint value {k}={v}")))
        }
        let n: usize = num("n_assets", get("n_assets")?)?;
        let layout = match get("layout")? {
            "garch" => Layout::Garch,
            "bekk" => Layout::Bekk(n),
            other => return Err(Error::Artifact(format!("unknown layout '{other}'"))),
        };
        let innovation = match get("innovation")? {
            "n" => Innovation::Normal,
            "t" => Innovation::StudentT,
            other => return Err(Error::Artifact(format!("unknown innovation '{other}'"))),
        };
        let config = ModelConfig {
            layout,
            innovation,
            hidden: num("hidden", get("hidden")?)?,
            mlp_width: num("mlp_width", get("mlp_width")?)?,
            nu_scale: num("nu_scale", get("nu_scale")?)?,
            lr: num("lr", get("lr")?)?,
            epochs: num("epochs", get("epochs")?)?,
            seed: num("seed", get("seed")?)?,
            scale: num("scale", get("scale")?)?,
            elbo_samples: num("elbo_samples", get("elbo_samples")?)?,
            var_bias_init: num("var_bias_init", get("var_bias_init")?)?,
        };
        config.validate()?;
        let sigma0: Vec<f64> = get("sigma0")?
            .split(',')
            .map(|v| num("sigma0", v))
            .collect::<Result<_>>()?;
        let mut model = Self::build(config, CovMatrix::new(n, sigma0)?);
        let same_layout = model.params.names() == params.names()
            && model
                .params
                .tensors()
                .iter()
                .zip(params.tensors())
                .all(|(a, b)| a.shape == b.shape);
        if !same_layout {
            return Err(Error::Artifact("checkpoint weights do not match its configuration".into()));
        }
        model.params = params;
        Ok((model, meta))
    }
}

fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub loss: f64,
    pub loglik: f64,
    pub kl: f64,
    /// Predictive log-likelihood of the validation rows after this epoch.
    pub val_loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loglik: f64,
}

impl TrainReport {
    pub fn initial_val_loglik(&self) -> f64 {
        self.history[0].val_loglik
    }
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Domain(_)
            | Error::NotPositiveDefinite { .. }
            | Error::NotPositiveDefiniteAt { .. }
            | Error::NonPositiveVariance(_)
            | Error::DegreesOfFreedomTooSmall(_)
    )
}

/// Adam on the negative ELBO of `rows[splits.train]`, full sequence per
/// step, keeping the weights with the best validation log-likelihood
/// (epoch 0, the initial weights, included).
pub fn train(model: &mut NeuralGarch, rows: &[Vec<f64>], splits: &SplitRanges) -> Result<TrainReport> {
    let train_rows = &rows[splits.train.clone()];
    let val_rows = &rows[..splits.val.end];
    let mut noise_rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = Adam::new(
        model.params.num_scalars(),
        AdamConfig {
            lr: model.config.lr,
            ..AdamConfig::default()
        },
    );
    let val_ll = |m: &NeuralGarch| {
        m.predict_rolling(val_rows, splits.val.clone(), &PredictOptions::default())
            .map(|f| f.loglik)
            .ok()
            .filter(|v| v.is_finite())
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut history = Vec::with_capacity(model.config.epochs + 1);
    let mut best = (0, val_ll(model), model.params.flatten());
    let mut flat = model.params.flatten();
    for epoch in 0..=model.config.epochs {
        let noise = model.draw_noise(train_rows.len(), &mut noise_rng);
        let (value, grad) = match model.loss_and_gradient(train_rows, &noise) {
            Ok(v) => v,
            Err(e) if is_numeric_failure(&e) => return Err(Error::NonFiniteLoss { epoch }),
            Err(e) => return Err(e),
        };
        if !value.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let val_loglik = if epoch == 0 { best.1 } else { val_ll(model) };
        if val_loglik > best.1 {
            best = (epoch, val_loglik, flat.clone());
        }
        history.push(EpochRecord {
            epoch,
            loss: value.loss,
            loglik: value.loglik,
            kl: value.kl,
            val_loglik,
        });
        if epoch == model.config.epochs {
            break;
        }
        adam.step(&mut flat, &grad);
        model.params.unflatten(&flat);
    }
    model.params.unflatten(&best.2);
    Ok(TrainReport {
        history,
        best_epoch: best.0,
        best_val_loglik: best.1,
    })
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (assets {}, hidden {}, width {}, epochs {}, lr {}, seed {})",
            self.kind_name(),
            self.layout.n_assets(),
            self.hidden,
            self.mlp_width,
            self.epochs,
            self.lr,
            self.seed
        )
    }
}
