//! Constant-coefficient univariate benchmarks: GARCH(1,1) and EGARCH(1,1,1)
//! with normal or standardized Student's t innovations.
//!
//! Filters take the pre-sample variance `σ_0²` and return one variance per
//! observation: entry `t` is the variance used to score `r[t]`. The
//! pre-sample shock is set to its expectation (`r_0² = σ_0²` for GARCH,
//! `z_0 = 0` and `|z_0| = E|z|` for EGARCH).

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{special::lgamma, Tape, Var};
use crate::error::{Error, Result};
pub use crate::likelihood::{loglik_normal, loglik_student_t, Normalization};
use crate::likelihood::tape as lik;
use crate::optim::{bfgs, BfgsConfig};

/// Minimum training length accepted by the estimators.
pub const MIN_FIT_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Innovation {
    Normal,
    StudentT,
}

impl Innovation {
    pub fn suffix(self) -> &'static str {
        match self {
            Innovation::Normal => "n",
            Innovation::StudentT => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nu: Option<f64>,
}

impl GarchParams {
    pub fn new(omega: f64, alpha: f64, beta: f64) -> Self {
        Self {
            omega,
            alpha,
            beta,
            nu: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidParams(format!("omega must be > 0, got {}", self.omega)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !(self.alpha + self.beta).is_finite() {
            return Err(Error::InvalidParams(format!(
                "alpha and beta must be >= 0, got {} and {}",
                self.alpha, self.beta
            )));
        }
        check_nu(self.nu)
    }

    /// `ω / (1 − α − β)`, or `None` without covariance stationarity.
    pub fn unconditional_variance(&self) -> Option<f64> {
        let p = self.alpha + self.beta;
        (p < 1.0).then(|| self.omega / (1.0 - p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgarchParams {
    pub omega: f64,
    pub alpha: f64,
    pub gamma_lev: f64,
    pub beta: f64,
    pub nu: Option<f64>,
}

impl EgarchParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.omega, self.alpha, self.gamma_lev, self.beta];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite EGARCH coefficient".into()));
        }
        if !(self.beta.abs() < 1.0) {
            return Err(Error::InvalidParams(format!("|beta| must be < 1, got {}", self.beta)));
        }
        check_nu(self.nu)
    }
}

fn check_nu(nu: Option<f64>) -> Result<()> {
    match nu {
        Some(v) if !(v > 2.0) || !v.is_finite() => Err(Error::DegreesOfFreedomTooSmall(v)),
        _ => Ok(()),
    }
}

/// `E|z|` for a unit-variance innovation: `√(2/π)` for the normal,
/// `√(ν−2) Γ((ν−1)/2) / (√π Γ(ν/2))` for the standardized t.
pub fn expected_abs_z(nu: Option<f64>) -> f64 {
    match nu {
        None => (2.0 / PI).sqrt(),
        Some(nu) => (nu - 2.0).sqrt() * (lgamma(0.5 * (nu - 1.0)) - lgamma(0.5 * nu)).exp() / PI.sqrt(),
    }
}

pub fn garch_filter(params: &GarchParams, r: &[f64], sigma0_sq: f64) -> Result<Vec<f64>> {
    params.validate()?;
    if !(sigma0_sq > 0.0) {
        return Err(Error::InvalidParams(format!("sigma0_sq must be > 0, got {sigma0_sq}")));
    }
    let mut out = Vec::with_capacity(r.len());
    let (mut prev_var, mut prev_rsq) = (sigma0_sq, sigma0_sq);
    for x in r {
        let v = params.omega + params.alpha * prev_rsq + params.beta * prev_var;
        out.push(v);
        prev_var = v;
        prev_rsq = x * x;
    }
    Ok(out)
}

pub fn egarch_filter(params: &EgarchParams, r: &[f64], logsigma0_sq: f64) -> Result<Vec<f64>> {
    params.validate()?;
    if !logsigma0_sq.is_finite() {
        return Err(Error::InvalidParams("non-finite initial log variance".into()));
    }
    let ez = expected_abs_z(params.nu);
    let mut out = Vec::with_capacity(r.len());
    let mut lv = logsigma0_sq;
    let (mut z, mut absz) = (0.0, ez);
    for x in r {
        lv = params.omega + params.alpha * (absz - ez) + params.gamma_lev * z + params.beta * lv;
        let v = lv.exp();
        out.push(v);
        z = x / v.sqrt();
        absz = z.abs();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GarchKind {
    GarchNormal,
    GarchT,
    EgarchNormal,
    EgarchT,
}

impl GarchKind {
    pub const ALL: [GarchKind; 4] = [
        GarchKind::GarchNormal,
        GarchKind::GarchT,
        GarchKind::EgarchNormal,
        GarchKind::EgarchT,
    ];

    pub fn innovation(self) -> Innovation {
        match self {
            GarchKind::GarchNormal | GarchKind::EgarchNormal => Innovation::Normal,
            GarchKind::GarchT | GarchKind::EgarchT => Innovation::StudentT,
        }
    }

    pub fn is_egarch(self) -> bool {
        matches!(self, GarchKind::EgarchNormal | GarchKind::EgarchT)
    }

    fn n_unconstrained(self) -> usize {
        let base = if self.is_egarch() { 4 } else { 3 };
        base + usize::from(self.innovation() == Innovation::StudentT)
    }
}

impl fmt::Display for GarchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GarchKind::GarchNormal => "garch-n",
            GarchKind::GarchT => "garch-t",
            GarchKind::EgarchNormal => "egarch-n",
            GarchKind::EgarchT => "egarch-t",
        };
        f.write_str(s)
    }
}

impl FromStr for GarchKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GarchKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown univariate model '{s}'")))
    }
}

/// A fitted or user-supplied univariate model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnivariateModel {
    Garch(GarchParams),
    Egarch(EgarchParams),
}

impl UnivariateModel {
    pub fn nu(&self) -> Option<f64> {
        match self {
            UnivariateModel::Garch(p) => p.nu,
            UnivariateModel::Egarch(p) => p.nu,
        }
    }

    /// Conditional variances over `r`, starting from `sigma0_sq`.
    pub fn filter(&self, r: &[f64], sigma0_sq: f64) -> Result<Vec<f64>> {
        match self {
            UnivariateModel::Garch(p) => garch_filter(p, r, sigma0_sq),
            UnivariateModel::Egarch(p) => egarch_filter(p, r, sigma0_sq.ln()),
        }
    }

    /// Log-likelihood of `r[range]` after filtering the whole of `r`.
    pub fn loglik_range(&self, r: &[f64], sigma0_sq: f64, range: Range<usize>) -> Result<f64> {
        let var = self.filter(r, sigma0_sq)?;
        self.score(&var[range.clone()], &r[range])
    }

    pub fn score(&self, var: &[f64], r: &[f64]) -> Result<f64> {
        match self.nu() {
            None => loglik_normal(var, r, Normalization::Full),
            Some(nu) => loglik_student_t(var, r, nu, Normalization::Full),
        }
    }
}

/// Sample variance (divisor `T`, about the sample mean).
pub fn sample_variance(r: &[f64]) -> f64 {
    let n = r.len().max(1) as f64;
    let m = r.iter().sum::<f64>() / n;
    r.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps unconstrained coordinates onto the model's parameter set, on the
/// tape. GARCH: `ω = e^u0`, `α + β = σ(u1)`, `α / (α + β) = σ(u2)`.
/// EGARCH: `β = tanh(u3)`. Both: `ν = 2 + e^u_last`.
fn constrain<'t>(kind: GarchKind, u: &[Var<'t>]) -> Vec<Var<'t>> {
    let mut out = Vec::with_capacity(5);
    if kind.is_egarch() {
        out.extend_from_slice(&[u[0], u[1], u[2], u[3].tanh()]);
    } else {
        let omega = u[0].exp();
        let persistence = u[1].sigmoid();
        let alpha = persistence.mul(&u[2].sigmoid()).expect("scalars");
        let beta = persistence.sub(&alpha).expect("scalars");
        out.extend_from_slice(&[omega, alpha, beta]);
    }
    if kind.innovation() == Innovation::StudentT {
        out.push(u[u.len() - 1].exp().offset(2.0));
    }
    out
}

fn unconstrain(model: &UnivariateModel) -> Vec<f64> {
    let mut u = match model {
        UnivariateModel::Garch(p) => {
            let pers = p.alpha + p.beta;
            vec![p.omega.ln(), logit(pers), logit(p.alpha / pers)]
        }
        UnivariateModel::Egarch(p) => vec![p.omega, p.alpha, p.gamma_lev, p.beta.atanh()],
    };
    if let Some(nu) = model.nu() {
        u.push((nu - 2.0).ln());
    }
    u
}

fn model_from_values(kind: GarchKind, v: &[f64]) -> UnivariateModel {
    let nu = (kind.innovation() == Innovation::StudentT).then(|| v[v.len() - 1]);
    if kind.is_egarch() {
        UnivariateModel::Egarch(EgarchParams {
            omega: v[0],
            alpha: v[1],
            gamma_lev: v[2],
            beta: v[3],
            nu,
        })
    } else {
        UnivariateModel::Garch(GarchParams {
            omega: v[0],
            alpha: v[1],
            beta: v[2],
            nu,
        })
    }
}

fn model_from_unconstrained(kind: GarchKind, u: &[f64]) -> UnivariateModel {
    let tape = Tape::new();
    let uv: Vec<Var> = u.iter().map(|x| tape.scalar(*x)).collect();
    let vals: Vec<f64> = constrain(kind, &uv).iter().map(|v| v.item()).collect();
    model_from_values(kind, &vals)
}

/// Total log-likelihood of `r` as a tape expression of the constrained
/// parameters `p` (layout of [`constrain`]).
fn tape_loglik<'t>(tape: &'t Tape, kind: GarchKind, p: &[Var<'t>], r: &[f64], sigma0_sq: f64) -> Result<Var<'t>> {
    let mut path = Vec::with_capacity(r.len());
    let nu = (kind.innovation() == Innovation::StudentT).then(|| p[p.len() - 1]);
    let var = if kind.is_egarch() {
        let (omega, alpha, gamma, beta) = (p[0], p[1], p[2], p[3]);
        let ez = match nu {
            None => tape.scalar((2.0 / PI).sqrt()),
            Some(nu) => {
                let ratio = nu.offset(-1.0).scale(0.5).lgamma()?.sub(&nu.scale(0.5).lgamma()?)?.exp();
                nu.offset(-2.0).sqrt()?.mul(&ratio)?.scale(1.0 / PI.sqrt())
            }
        };
        let mut lv = tape.scalar(sigma0_sq.ln());
        for t in 0..r.len() {
            let mut next = omega.add(&beta.mul(&lv)?)?;
            if t > 0 {
                let z = lv.scale(-0.5).exp().scale(r[t - 1]);
                let shock = alpha.mul(&z.abs().sub(&ez)?)?.add(&gamma.mul(&z)?)?;
                next = next.add(&shock)?;
            }
            path.push(next);
            lv = next;
        }
        tape.concat(&path)?.exp()
    } else {
        let (omega, alpha, beta) = (p[0], p[1], p[2]);
        let mut prev = tape.scalar(sigma0_sq);
        let mut prev_rsq = sigma0_sq;
        for x in r {
            let v = omega.add(&alpha.scale(prev_rsq))?.add(&beta.mul(&prev)?)?;
            path.push(v);
            prev = v;
            prev_rsq = x * x;
        }
        tape.concat(&path)?
    };
    let rsq: Vec<f64> = r.iter().map(|x| x * x).collect();
    let rsq = tape.column(&rsq);
    let terms = match nu {
        None => lik::normal_terms(var, rsq, Normalization::Full)?,
        Some(nu) => lik::student_t_terms(var, rsq, nu, Normalization::Full)?,
    };
    Ok(terms.sum())
}

/// Log-likelihood and its gradient in unconstrained coordinates.
fn objective(kind: GarchKind, u: &[f64], r: &[f64], sigma0_sq: f64) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let uv: Vec<Var> = u.iter().map(|x| tape.scalar(*x)).collect();
    let p = constrain(kind, &uv);
    let ll = tape_loglik(&tape, kind, &p, r, sigma0_sq)?;
    let g = ll.backward()?;
    Ok((ll.item(), uv.iter().map(|v| g.wrt(*v)[0]).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { n_starts: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GarchFit {
    pub kind: GarchKind,
    pub model: UnivariateModel,
    /// Training log-likelihood at the optimum.
    pub loglik: f64,
    /// Pre-sample variance used by the filter (training sample variance).
    pub sigma0_sq: f64,
    /// Log-likelihood at each start's initial point (`-inf` if infeasible).
    pub start_logliks: Vec<f64>,
}

/// The fixed first start: `(ω, α, β) = (sample var, 0.05, 0.9)` and its
/// EGARCH analogue.
pub fn baseline_start(kind: GarchKind, var: f64) -> UnivariateModel {
    let nu = (kind.innovation() == Innovation::StudentT).then_some(8.0);
    if kind.is_egarch() {
        UnivariateModel::Egarch(EgarchParams {
            omega: 0.1 * var.ln(),
            alpha: 0.1,
            gamma_lev: 0.0,
            beta: 0.9,
            nu,
        })
    } else {
        UnivariateModel::Garch(GarchParams {
            omega: var,
            alpha: 0.05,
            beta: 0.9,
            nu,
        })
    }
}

fn random_start(kind: GarchKind, var: f64, rng: &mut impl Rng) -> UnivariateModel {
    let nu = (kind.innovation() == Innovation::StudentT).then(|| rng.random_range(3.0..20.0));
    if kind.is_egarch() {
        let beta = rng.random_range(0.5..0.98);
        UnivariateModel::Egarch(EgarchParams {
            omega: (1.0 - beta) * var.ln() + rng.random_range(-0.1..0.1),
            alpha: rng.random_range(0.0..0.3),
            gamma_lev: rng.random_range(-0.15..0.05),
            beta,
            nu,
        })
    } else {
        let pers = rng.random_range(0.5..0.99);
        let share = rng.random_range(0.02..0.4);
        UnivariateModel::Garch(GarchParams {
            omega: var * (1.0 - pers) * rng.random_range(0.5..2.0),
            alpha: pers * share,
            beta: pers * (1.0 - share),
            nu,
        })
    }
}

/// Maximum likelihood by BFGS in unconstrained coordinates, from the
/// baseline start plus `n_starts − 1` random starts.
pub fn fit_mle(kind: GarchKind, train: &[f64], opts: &FitOptions) -> Result<GarchFit> {
    if train.len() < MIN_FIT_LEN {
        return Err(Error::SeriesTooShort {
            needed: MIN_FIT_LEN,
            got: train.len(),
        });
    }
    let sigma0_sq = sample_variance(train);
    if !(sigma0_sq > 0.0) {
        return Err(Error::InvalidParams("training returns have zero variance".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![baseline_start(kind, sigma0_sq)];
    while starts.len() < opts.n_starts.max(1) {
        starts.push(random_start(kind, sigma0_sq, &mut rng));
    }
    // per-observation scaling keeps BFGS tolerances independent of T
    let scale = 1.0 / train.len() as f64;
    let runs: Vec<(f64, Option<(f64, Vec<f64>)>)> = starts
        .par_iter()
        .map(|start| {
            let u0 = unconstrain(start);
            debug_assert_eq!(u0.len(), kind.n_unconstrained());
            let init = objective(kind, &u0, train, sigma0_sq).map(|(f, _)| f).unwrap_or(f64::NEG_INFINITY);
            let res = bfgs(
                |u| objective(kind, u, train, sigma0_sq).map(|(f, g)| (-f * scale, g.iter().map(|x| -x * scale).collect())),
                &u0,
                &BfgsConfig::default(),
            )
            .ok()
            .map(|m| (-m.f / scale, m.x));
            (init, res)
        })
        .collect();

    let start_logliks: Vec<f64> = runs.iter().map(|(i, _)| *i).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (_, res) in runs {
        if let Some((ll, u)) = res {
            if ll.is_finite() && best.as_ref().is_none_or(|(b, _)| ll > *b) {
                best = Some((ll, u));
            }
        }
    }
    let (_, u) = best.ok_or_else(|| Error::OptimizerDiverged(format!("all {} starts failed for {kind}", starts.len())))?;
    let model = model_from_unconstrained(kind, &u);
    // recompute in plain arithmetic so the reported value matches `filter`
    let var = model.filter(train, sigma0_sq)?;
    let loglik = model.score(&var, train)?;
    Ok(GarchFit {
        kind,
        model,
        loglik,
        sigma0_sq,
        start_logliks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate;

    #[test]
    fn constant_variance_when_no_dynamics() {
        let p = GarchParams::new(0.1, 0.0, 0.0);
        let v = garch_filter(&p, &[3.0, -1.0, 0.2, 5.0], 7.0).unwrap();
        assert_eq!(v, vec![0.1; 4]);
    }

    #[test]
    fn one_step_hand_sum() {
        let p = GarchParams::new(0.1, 0.2, 0.7);
        // pre-sample shock at its expectation: r_0² = σ_0² = 1
        let v = garch_filter(&p, &[1.0, 1.0], 1.0).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!((v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_omega_rejected() {
        let p = GarchParams::new(0.0, 0.1, 0.8);
        assert!(matches!(garch_filter(&p, &[1.0], 1.0), Err(Error::InvalidParams(_))));
        let p = EgarchParams {
            omega: 0.0,
            alpha: 0.0,
            gamma_lev: 0.0,
            beta: 1.0,
            nu: None,
        };
        assert!(matches!(egarch_filter(&p, &[1.0], 0.0), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn egarch_constant_and_decay() {
        let p = EgarchParams {
            omega: 0.3,
            alpha: 0.0,
            gamma_lev: 0.0,
            beta: 0.0,
            nu: None,
        };
        let v = egarch_filter(&p, &[1.0, -2.0, 0.5], 4.0).unwrap();
        assert!(v.iter().all(|x| (x - 0.3f64.exp()).abs() < 1e-15));

        let p = EgarchParams {
            omega: 0.0,
            alpha: 0.0,
            gamma_lev: 0.0,
            beta: 0.5,
            nu: None,
        };
        let v = egarch_filter(&p, &[0.7; 6], 1.0).unwrap();
        for (t, x) in v.iter().enumerate() {
            assert!((x.ln() - 0.5f64.powi(t as i32 + 1)).abs() < 1e-15);
        }
    }

    #[test]
    fn egarch_leverage_sign() {
        let p = EgarchParams {
            omega: 0.0,
            alpha: 0.1,
            gamma_lev: -0.08,
            beta: 0.9,
            nu: None,
        };
        let down = egarch_filter(&p, &[-1.5, 0.0], 0.0).unwrap();
        let up = egarch_filter(&p, &[1.5, 0.0], 0.0).unwrap();
        assert!(down[1] > up[1]);
    }

    #[test]
    fn expected_abs_z_values() {
        assert!((expected_abs_z(None) - 0.797_884_560_802_865_4).abs() < 1e-15);
        // large ν approaches the normal value
        assert!((expected_abs_z(Some(1e6)) - expected_abs_z(None)).abs() < 1e-5);
        // ν = 4: √2 · Γ(1.5) / (√π Γ(2)) = √2 / 2
        assert!((expected_abs_z(Some(4.0)) - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn tape_loglik_matches_plain_filter() {
        let r = simulate::simulate_garch(&GarchParams::new(0.05, 0.1, 0.85), Innovation::Normal, 300, 3);
        let s0 = sample_variance(&r);
        let models = [
            (GarchKind::GarchNormal, UnivariateModel::Garch(GarchParams::new(0.07, 0.12, 0.8))),
            (
                GarchKind::GarchT,
                UnivariateModel::Garch(GarchParams {
                    nu: Some(6.0),
                    ..GarchParams::new(0.07, 0.12, 0.8)
                }),
            ),
            (
                GarchKind::EgarchNormal,
                UnivariateModel::Egarch(EgarchParams {
                    omega: 0.01,
                    alpha: 0.15,
                    gamma_lev: -0.05,
                    beta: 0.9,
                    nu: None,
                }),
            ),
            (
                GarchKind::EgarchT,
                UnivariateModel::Egarch(EgarchParams {
                    omega: 0.01,
                    alpha: 0.15,
                    gamma_lev: -0.05,
                    beta: 0.9,
                    nu: Some(7.0),
                }),
            ),
        ];
        for (kind, m) in models {
            let u = unconstrain(&m);
            let back = model_from_unconstrained(kind, &u);
            let (ll, _) = objective(kind, &u, &r, s0).unwrap();
            let plain = back.loglik_range(&r, s0, 0..r.len()).unwrap();
            assert!((ll - plain).abs() < 1e-9 * plain.abs(), "{kind}: {ll} vs {plain}");
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let r = simulate::simulate_garch(&GarchParams::new(0.05, 0.1, 0.85), Innovation::Normal, 200, 4);
        let s0 = sample_variance(&r);
        for kind in GarchKind::ALL {
            let u: Vec<f64> = (0..kind.n_unconstrained()).map(|i| 0.3 - 0.2 * i as f64).collect();
            let (_, g) = objective(kind, &u, &r, s0).unwrap();
            for i in 0..u.len() {
                let h = 1e-6;
                let mut up = u.clone();
                up[i] += h;
                let mut dn = u.clone();
                dn[i] -= h;
                let fd = (objective(kind, &up, &r, s0).unwrap().0 - objective(kind, &dn, &r, s0).unwrap().0) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()), "{kind} coord {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn short_series_rejected() {
        let r = vec![0.1; 10];
        assert!(matches!(
            fit_mle(GarchKind::GarchNormal, &r, &FitOptions::default()),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn mle_beats_every_start() {
        let r = simulate::simulate_garch(&GarchParams::new(0.05, 0.1, 0.85), Innovation::Normal, 1000, 11);
        for kind in GarchKind::ALL {
            let fit = fit_mle(kind, &r, &FitOptions { n_starts: 5, seed: 1 }).unwrap();
            assert_eq!(fit.start_logliks.len(), 5);
            for s in &fit.start_logliks {
                assert!(fit.loglik >= *s - 1e-9, "{kind}: {} < {s}", fit.loglik);
            }
            let base = baseline_start(kind, fit.sigma0_sq).loglik_range(&r, fit.sigma0_sq, 0..r.len()).unwrap();
            assert!(fit.loglik >= base);
        }
    }

    #[test]
    fn iid_data_gives_unit_unconditional_variance() {
        let r = simulate::simulate_garch(&GarchParams::new(1.0, 0.0, 0.0), Innovation::Normal, 5000, 21);
        let fit = fit_mle(GarchKind::GarchNormal, &r, &FitOptions::default()).unwrap();
        let UnivariateModel::Garch(p) = fit.model else { unreachable!() };
        let uv = p.unconditional_variance().unwrap();
        assert!((uv - 1.0).abs() < 0.1, "unconditional variance {uv}");
    }

    #[test]
    fn kind_names_round_trip() {
        for k in GarchKind::ALL {
            assert_eq!(k.to_string().parse::<GarchKind>().unwrap(), k);
        }
        assert!("garch-x".parse::<GarchKind>().is_err());
    }
}
