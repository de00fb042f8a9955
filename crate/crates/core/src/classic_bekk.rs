//! Constant-coefficient diagonal BEKK(1,1):
//! `Σ_t = CᵀC + A r_{t−1} r_{t−1}ᵀ A + B Σ_{t−1} B` with `A`, `B` diagonal and
//! `C` upper triangular. The pre-sample outer product `r_0 r_0ᵀ` is replaced
//! by its expectation `Σ_0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Shape, Tape, Var};
use crate::classic_garch::{FitOptions, Innovation};
use crate::error::{Error, Result};
pub use crate::likelihood::{loglik_mvn, loglik_mvt};
use crate::likelihood::tape as lik;
use crate::linalg::{self, CovMatrix};
use crate::optim::{bfgs, BfgsConfig};

/// Minimum training observations per asset.
pub const MIN_OBS_PER_ASSET: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct BekkParams {
    /// Upper triangle of `C`, row by row: `c11, c12, …, c1n, c22, …, cnn`.
    pub c_upper: Vec<f64>,
    pub a_diag: Vec<f64>,
    pub b_diag: Vec<f64>,
    pub nu: Option<f64>,
}

/// Number of packed upper-triangular entries for `n` assets.
pub fn n_upper(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed index of `C[i][j]`, `i ≤ j`.
pub fn upper_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < n);
    i * n - i * i.saturating_sub(1) / 2 + (j - i)
}

impl BekkParams {
    pub fn dim(&self) -> usize {
        self.a_diag.len()
    }

    /// Free parameter count: `2n + n(n+1)/2`, plus one with ν.
    pub fn n_free(&self) -> usize {
        let n = self.dim();
        2 * n + n_upper(n) + usize::from(self.nu.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 || self.b_diag.len() != n || self.c_upper.len() != n_upper(n) {
            return Err(Error::InvalidParams(format!(
                "inconsistent BEKK sizes: {} A, {} B, {} C entries",
                n,
                self.b_diag.len(),
                self.c_upper.len()
            )));
        }
        let all = self.c_upper.iter().chain(&self.a_diag).chain(&self.b_diag);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite BEKK coefficient".into()));
        }
        for i in 0..n {
            if self.c_upper[diag_index(n, i)] < 0.0 {
                return Err(Error::InvalidParams(format!("C[{i}][{i}] must be non-negative")));
            }
        }
        if self.a_diag.iter().chain(&self.b_diag).any(|v| *v < 0.0) {
            return Err(Error::InvalidParams("A and B diagonals must be non-negative".into()));
        }
        match self.nu {
            Some(v) if !(v > 2.0) => Err(Error::DegreesOfFreedomTooSmall(v)),
            _ => Ok(()),
        }
    }

    /// `C` as a dense row-major matrix.
    pub fn c_matrix(&self) -> Vec<f64> {
        unpack_upper(self.dim(), &self.c_upper)
    }

    /// `CᵀC`.
    pub fn constant_term(&self) -> Vec<f64> {
        linalg::gram(self.dim(), &self.c_matrix())
    }

    /// One step of the recursion on raw row-major matrices.
    pub fn step(&self, sigma_prev: &[f64], r_prev: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let cc = self.constant_term();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = cc[i * n + j]
                    + self.a_diag[i] * self.a_diag[j] * r_prev[i] * r_prev[j]
                    + self.b_diag[i] * self.b_diag[j] * sigma_prev[i * n + j];
            }
        }
        linalg::symmetrize(n, &out)
    }

    /// `Σ` with `Σ_ij (1 − a_i a_j − b_i b_j) = (CᵀC)_ij`, when every
    /// denominator is positive.
    pub fn unconditional_covariance(&self) -> Option<Vec<f64>> {
        let n = self.dim();
        let cc = self.constant_term();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = 1.0 - self.a_diag[i] * self.a_diag[j] - self.b_diag[i] * self.b_diag[j];
                if d <= 0.0 {
                    return None;
                }
                out[i * n + j] = cc[i * n + j] / d;
            }
        }
        Some(out)
    }
}

fn diag_index(n: usize, i: usize) -> usize {
    upper_index(n, i, i)
}

/// Expands a packed upper triangle into a dense row-major matrix.
pub fn unpack_upper(n: usize, packed: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[i * n + j] = packed[k];
            k += 1;
        }
    }
    m
}

/// Packs the upper triangle of a dense row-major matrix.
pub fn pack_upper(n: usize, m: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_upper(n));
    for i in 0..n {
        for j in i..n {
            out.push(m[i * n + j]);
        }
    }
    out
}

/// Conditional covariances `Σ_1..Σ_T`, entry `t` scoring `rows[t]`.
pub fn bekk_filter(params: &BekkParams, rows: &[Vec<f64>], sigma0: &CovMatrix) -> Result<Vec<CovMatrix>> {
    params.validate()?;
    let n = params.dim();
    if sigma0.dim() != n {
        return Err(Error::DimensionMismatch(format!("Σ_0 is {}x{0}, model has {n} assets", sigma0.dim())));
    }
    if !sigma0.is_positive_definite() {
        return Err(Error::NotPositiveDefinite { pivot: 0 });
    }
    let mut out = Vec::with_capacity(rows.len());
    let mut prev = sigma0.entries().to_vec();
    // pre-sample outer product at its expectation
    let mut prev_outer = prev.clone();
    for r in rows {
        if r.len() != n {
            return Err(Error::DimensionMismatch(format!("row of {} values for {n} assets", r.len())));
        }
        let cc = params.constant_term();
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                s[i * n + j] = cc[i * n + j]
                    + params.a_diag[i] * params.a_diag[j] * prev_outer[i * n + j]
                    + params.b_diag[i] * params.b_diag[j] * prev[i * n + j];
            }
        }
        let m = CovMatrix::new(n, s)?;
        prev = m.entries().to_vec();
        prev_outer = outer(r);
        out.push(m);
    }
    Ok(out)
}

pub fn outer(r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = r[i] * r[j];
        }
    }
    m
}

/// Tape pieces shared with the time-varying model.
pub(crate) mod tape {
    use super::*;

    /// Dense `C` (`n×n`) from a packed upper-triangular column.
    pub fn c_matrix<'t>(tape: &'t Tape, n: usize, packed: Var<'t>) -> Result<Var<'t>> {
        let mut parts = Vec::with_capacity(2 * n);
        let mut k = 0;
        for i in 0..n {
            if i > 0 {
                parts.push(tape.zeros(Shape::col(i)));
            }
            parts.push(packed.slice(k, n - i)?);
            k += n - i;
        }
        tape.concat(&parts)?.reshape(Shape::new(n, n))
    }

    /// `CᵀC + (a aᵀ) ⊙ outer + (b bᵀ) ⊙ Σ_prev`, with `a`, `b` columns.
    pub fn step<'t>(cc: Var<'t>, a: Var<'t>, b: Var<'t>, prev_outer: Var<'t>, sigma_prev: Var<'t>) -> Result<Var<'t>> {
        let aa = a.matmul(&a.transpose())?;
        let bb = b.matmul(&b.transpose())?;
        cc.add(&aa.mul(&prev_outer)?)?.add(&bb.mul(&sigma_prev)?)
    }
}

/// Unconstrained layout: packed `C` (log on diagonal), per-asset
/// persistence logits, per-asset ARCH-share logits, then `log(ν − 2)`.
/// `a_i = √(p_i s_i)`, `b_i = √(p_i (1 − s_i))` so `a_i² + b_i² < 1`.
fn constrain<'t>(tape: &'t Tape, n: usize, innovation: Innovation, u: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>, Var<'t>, Option<Var<'t>>)> {
    let nu_count = n_upper(n);
    let mut c_parts = Vec::with_capacity(nu_count);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            c_parts.push(if i == j { u[k].exp() } else { u[k] });
            k += 1;
        }
    }
    let c = tape.concat(&c_parts)?;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let p = u[nu_count + i].sigmoid();
        let s = u[nu_count + n + i].sigmoid();
        let ap = p.mul(&s)?;
        a.push(ap.sqrt()?);
        b.push(p.sub(&ap)?.sqrt()?);
    }
    let nu = (innovation == Innovation::StudentT).then(|| u[u.len() - 1].exp().offset(2.0));
    Ok((c, tape.concat(&a)?, tape.concat(&b)?, nu))
}

fn n_unconstrained(n: usize, innovation: Innovation) -> usize {
    n_upper(n) + 2 * n + usize::from(innovation == Innovation::StudentT)
}

fn unconstrain(p: &BekkParams) -> Vec<f64> {
    let n = p.dim();
    let mut u = Vec::with_capacity(p.n_free());
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let c = p.c_upper[k];
            u.push(if i == j { c.max(1e-12).ln() } else { c });
            k += 1;
        }
    }
    let logit = |x: f64| (x / (1.0 - x)).ln();
    let pers: Vec<f64> = (0..n).map(|i| p.a_diag[i].powi(2) + p.b_diag[i].powi(2)).collect();
    u.extend(pers.iter().map(|q| logit(*q)));
    u.extend((0..n).map(|i| logit(p.a_diag[i].powi(2) / pers[i])));
    if let Some(nu) = p.nu {
        u.push((nu - 2.0).ln());
    }
    u
}

fn params_from_unconstrained(n: usize, innovation: Innovation, u: &[f64]) -> Result<BekkParams> {
    let tape = Tape::new();
    let uv: Vec<Var> = u.iter().map(|x| tape.scalar(*x)).collect();
    let (c, a, b, nu) = constrain(&tape, n, innovation, &uv)?;
    Ok(BekkParams {
        c_upper: c.value(),
        a_diag: a.value(),
        b_diag: b.value(),
        nu: nu.map(|v| v.item()),
    })
}

fn objective(n: usize, innovation: Innovation, u: &[f64], rows: &[Vec<f64>], sigma0: &[f64]) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let uv: Vec<Var> = u.iter().map(|x| tape.scalar(*x)).collect();
    let (c, a, b, nu) = constrain(&tape, n, innovation, &uv)?;
    let cmat = tape::c_matrix(&tape, n, c)?;
    let cc = cmat.transpose().matmul(&cmat)?;
    let sq = Shape::new(n, n);
    let mut sigma = tape.var(sq, sigma0.to_vec())?;
    let mut prev_outer = sigma;
    let mut terms = Vec::with_capacity(rows.len());
    for r in rows {
        sigma = tape::step(cc, a, b, prev_outer, sigma)?;
        let rv = tape.column(r);
        terms.push(match nu {
            None => lik::mvn_term(sigma, rv)?,
            Some(nu) => lik::mvt_term(sigma, rv, nu)?,
        });
        prev_outer = tape.var(sq, outer(r))?;
    }
    let ll = tape.concat(&terms)?.sum();
    let g = ll.backward()?;
    Ok((ll.item(), uv.iter().map(|v| g.wrt(*v)[0]).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BekkFit {
    pub innovation: Innovation,
    pub params: BekkParams,
    pub loglik: f64,
    /// Training-sample covariance, the filter's `Σ_0`.
    pub sigma0: CovMatrix,
    pub start_logliks: Vec<f64>,
}

impl BekkFit {
    pub fn loglik_range(&self, rows: &[Vec<f64>], range: std::ops::Range<usize>) -> Result<f64> {
        score(&self.params, rows, &self.sigma0, range)
    }
}

/// Log-likelihood of `rows[range]` after filtering all of `rows`.
pub fn score(params: &BekkParams, rows: &[Vec<f64>], sigma0: &CovMatrix, range: std::ops::Range<usize>) -> Result<f64> {
    let sig = bekk_filter(params, rows, sigma0)?;
    let offset = range.start;
    let res = match params.nu {
        None => loglik_mvn(&sig[range.clone()], &rows[range]),
        Some(nu) => loglik_mvt(&sig[range.clone()], &rows[range], nu),
    };
    res.map_err(|e| match e {
        Error::NotPositiveDefiniteAt { t } => Error::NotPositiveDefiniteAt { t: t + offset },
        other => other,
    })
}

/// Baseline start: `a_i² = 0.05`, `b_i² = 0.9`, `CᵀC = 0.05 · S`.
pub fn baseline_start(innovation: Innovation, sample_cov: &CovMatrix) -> Result<BekkParams> {
    let n = sample_cov.dim();
    let scaled: Vec<f64> = sample_cov.entries().iter().map(|v| 0.05 * v).collect();
    let l = linalg::factor_with_jitter(n, &scaled).map_err(|pivot| Error::NotPositiveDefinite { pivot })?;
    // C = Lᵀ is upper triangular with CᵀC = L Lᵀ
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = l[j * n + i];
        }
    }
    Ok(BekkParams {
        c_upper: pack_upper(n, &c),
        a_diag: vec![0.05f64.sqrt(); n],
        b_diag: vec![0.9f64.sqrt(); n],
        nu: (innovation == Innovation::StudentT).then_some(8.0),
    })
}

fn random_start(base: &BekkParams, rng: &mut impl Rng) -> BekkParams {
    let n = base.dim();
    let mut p = base.clone();
    for i in 0..n {
        let pers: f64 = rng.random_range(0.6..0.99);
        let share: f64 = rng.random_range(0.02..0.3);
        p.a_diag[i] = (pers * share).sqrt();
        p.b_diag[i] = (pers * (1.0 - share)).sqrt();
    }
    let level: f64 = rng.random_range(0.5..2.0);
    p.c_upper.iter_mut().for_each(|c| *c *= level.sqrt());
    if p.nu.is_some() {
        p.nu = Some(rng.random_range(3.0..20.0));
    }
    p
}

/// Maximum likelihood for diagonal BEKK(1,1), multi-start BFGS as in the
/// univariate estimator.
pub fn fit_mle(innovation: Innovation, train: &[Vec<f64>], opts: &FitOptions) -> Result<BekkFit> {
    let n = train.first().map_or(0, |r| r.len());
    if n == 0 || train.len() < MIN_OBS_PER_ASSET * n {
        return Err(Error::SeriesTooShort {
            needed: MIN_OBS_PER_ASSET * n.max(1),
            got: train.len(),
        });
    }
    let sigma0 = CovMatrix::new(n, linalg::sample_covariance(train, true))?;
    let base = baseline_start(innovation, &sigma0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![base.clone()];
    while starts.len() < opts.n_starts.max(1) {
        starts.push(random_start(&base, &mut rng));
    }
    let s0 = sigma0.entries().to_vec();
    let scale = 1.0 / train.len() as f64;
    let runs: Vec<(f64, Option<(f64, Vec<f64>)>)> = starts
        .par_iter()
        .map(|start| {
            let u0 = unconstrain(start);
            debug_assert_eq!(u0.len(), n_unconstrained(n, innovation));
            let init = objective(n, innovation, &u0, train, &s0).map(|(f, _)| f).unwrap_or(f64::NEG_INFINITY);
            let res = bfgs(
                |u| objective(n, innovation, u, train, &s0).map(|(f, g)| (-f * scale, g.iter().map(|x| -x * scale).collect())),
                &u0,
                &BfgsConfig::default(),
            )
            .ok()
            .map(|m| (-m.f / scale, m.x));
            (init, res)
        })
        .collect();
    let start_logliks = runs.iter().map(|(i, _)| *i).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (_, res) in runs {
        if let Some((ll, u)) = res {
            if ll.is_finite() && best.as_ref().is_none_or(|(b, _)| ll > *b) {
                best = Some((ll, u));
            }
        }
    }
    let (_, u) = best.ok_or_else(|| Error::OptimizerDiverged(format!("all {} BEKK starts failed", starts.len())))?;
    let params = params_from_unconstrained(n, innovation, &u)?;
    let loglik = score(&params, train, &sigma0, 0..train.len())?;
    Ok(BekkFit {
        innovation,
        params,
        loglik,
        sigma0,
        start_logliks,
    })
}
