//! Synthetic return paths for tests, acceptance checks and the bundled
//! `simulate` command.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::classic_bekk::BekkParams;
use crate::classic_garch::{GarchParams, Innovation};
use crate::linalg;

/// Observations discarded before the returned path starts.
pub const BURN_IN: usize = 500;

/// Unit-variance innovation sampler.
struct Shocks {
    rng: ChaCha8Rng,
    t: Option<(StudentT<f64>, f64)>,
}

impl Shocks {
    fn new(seed: u64, nu: Option<f64>) -> Self {
        let t = nu.map(|nu| (StudentT::new(nu).expect("nu > 0"), ((nu - 2.0) / nu).sqrt()));
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            t,
        }
    }

    fn draw(&mut self) -> f64 {
        match &self.t {
            None => StandardNormal.sample(&mut self.rng),
            Some((dist, scale)) => dist.sample(&mut self.rng) * scale,
        }
    }
}

/// GARCH(1,1) returns. With `Innovation::StudentT`, `params.nu` (default 8)
/// sets the degrees of freedom.
pub fn simulate_garch(params: &GarchParams, innovation: Innovation, len: usize, seed: u64) -> Vec<f64> {
    simulate_tv_garch(|_| (params.omega, params.alpha, params.beta), innovation, params.nu, len, seed)
}

/// GARCH(1,1) with coefficients supplied per step by `coef(t)` for the
/// returned indices `t = 0..len` (burn-in uses `coef(0)`).
pub fn simulate_tv_garch(
    coef: impl Fn(usize) -> (f64, f64, f64),
    innovation: Innovation,
    nu: Option<f64>,
    len: usize,
    seed: u64,
) -> Vec<f64> {
    let nu = match innovation {
        Innovation::Normal => None,
        Innovation::StudentT => Some(nu.unwrap_or(8.0)),
    };
    let mut shocks = Shocks::new(seed, nu);
    let (w0, a0, b0) = coef(0);
    let mut var = if a0 + b0 < 1.0 { w0 / (1.0 - a0 - b0) } else { w0 };
    let mut prev_r = var.sqrt();
    let mut out = Vec::with_capacity(len);
    for i in 0..BURN_IN + len {
        let (w, a, b) = if i < BURN_IN { (w0, a0, b0) } else { coef(i - BURN_IN) };
        var = w + a * prev_r * prev_r + b * var;
        let r = var.sqrt() * shocks.draw();
        if i >= BURN_IN {
            out.push(r);
        }
        prev_r = r;
    }
    out
}

/// Diagonal BEKK(1,1) returns, `len` rows of `n` assets. Multivariate t
/// shocks are a normal vector over `√(W/(ν−2))` with `W ~ χ²_ν`-scaled
/// mixing, giving unit covariance.
pub fn simulate_bekk(params: &BekkParams, innovation: Innovation, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = params.dim();
    let nu = match innovation {
        Innovation::Normal => None,
        Innovation::StudentT => Some(params.nu.unwrap_or(8.0)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi = nu.map(|nu| rand_distr::ChiSquared::new(nu).expect("nu > 0"));
    let cc = params.constant_term();
    let mut sigma = params.unconditional_covariance().unwrap_or_else(|| cc.clone());
    let mut prev_r: Vec<f64> = vec![0.0; n];
    let mut out = Vec::with_capacity(len);
    for i in 0..BURN_IN + len {
        sigma = params.step(&sigma, &prev_r);
        let l = linalg::factor_with_jitter(n, &sigma).expect("BEKK covariance is positive definite");
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mix = match (&chi, nu) {
            (Some(c), Some(nu)) => ((nu - 2.0) / c.sample(&mut rng)).sqrt(),
            _ => 1.0,
        };
        let r: Vec<f64> = (0..n)
            .map(|a| mix * (0..=a).map(|k| l[a * n + k] * z[k]).sum::<f64>())
            .collect();
        if i >= BURN_IN {
            out.push(r.clone());
        }
        prev_r = r;
    }
    out
}

/// Price path `p_t = p_0 · exp(Σ r / scale)` with one business-ish day per
/// step starting at `start`. The result has `returns.len() + 1` rows.
pub fn to_prices(returns: &[f64], scale: f64, p0: f64, start: NaiveDate) -> (Vec<NaiveDate>, Vec<f64>) {
    let mut dates = vec![start];
    let mut prices = vec![p0];
    let mut cum = 0.0;
    for (i, r) in returns.iter().enumerate() {
        cum += r / scale;
        dates.push(start + chrono::Days::new(i as u64 + 1));
        prices.push(p0 * cum.exp());
    }
    (dates, prices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_paths_are_reproducible() {
        let p = GarchParams::new(0.05, 0.1, 0.85);
        assert_eq!(
            simulate_garch(&p, Innovation::Normal, 100, 9),
            simulate_garch(&p, Innovation::Normal, 100, 9)
        );
        assert_ne!(
            simulate_garch(&p, Innovation::Normal, 100, 9),
            simulate_garch(&p, Innovation::Normal, 100, 10)
        );
    }

    #[test]
    fn long_run_variance_matches_formula() {
        let p = GarchParams::new(0.05, 0.1, 0.85);
        let r = simulate_garch(&p, Innovation::Normal, 200_000, 5);
        let v = r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
        assert!((v - 1.0).abs() < 0.05, "{v}");
        let rt = simulate_garch(&GarchParams { nu: Some(6.0), ..p }, Innovation::StudentT, 200_000, 6);
        let vt = rt.iter().map(|x| x * x).sum::<f64>() / rt.len() as f64;
        assert!((vt - 1.0).abs() < 0.08, "{vt}");
    }
}
