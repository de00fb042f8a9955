//! Innovation log-likelihoods, in plain `f64` form and as tape expressions.
//!
//! The Student's t densities are standardized so that the scale argument is
//! the conditional variance (covariance), not the t scale matrix.

use std::f64::consts::PI;

use crate::autodiff::{special::lgamma, Var};
use crate::error::{Error, Result};
use crate::linalg::{self, CovMatrix};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Whether pure constants (`−½ log 2π`, `−½ log π`) are included. With
/// `Literal`, the normal likelihood reduces to `−Σ(½ log σ² + r²/2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    Full,
    Literal,
}

impl Normalization {
    fn on(self) -> bool {
        matches!(self, Normalization::Full)
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{a} variances for {b} returns")));
    }
    Ok(())
}

pub fn loglik_normal(sigma_sq: &[f64], r: &[f64], norm: Normalization) -> Result<f64> {
    check_lengths(sigma_sq.len(), r.len())?;
    let mut ll = 0.0;
    for (t, (&s, &x)) in sigma_sq.iter().zip(r).enumerate() {
        if !(s > 0.0) {
            return Err(Error::NonPositiveVariance(t));
        }
        ll -= 0.5 * s.ln() + x * x / (2.0 * s);
    }
    if norm.on() {
        ll -= 0.5 * LN_2PI * r.len() as f64;
    }
    Ok(ll)
}

/// Constant part of the standardized-t log density for dimension `n`:
/// `logΓ((ν+n)/2) − logΓ(ν/2) − (n/2) log(ν−2)`, plus `−(n/2) log π` when
/// normalized.
fn t_constant(nu: f64, n: usize, norm: Normalization) -> f64 {
    let nf = n as f64;
    let mut c = lgamma(0.5 * (nu + nf)) - lgamma(0.5 * nu) - 0.5 * nf * (nu - 2.0).ln();
    if norm.on() {
        c -= 0.5 * nf * PI.ln();
    }
    c
}

pub fn loglik_student_t(sigma_sq: &[f64], r: &[f64], nu: f64, norm: Normalization) -> Result<f64> {
    check_lengths(sigma_sq.len(), r.len())?;
    if !(nu > 2.0) {
        return Err(Error::DegreesOfFreedomTooSmall(nu));
    }
    let c = t_constant(nu, 1, norm);
    let mut ll = 0.0;
    for (t, (&s, &x)) in sigma_sq.iter().zip(r).enumerate() {
        if !(s > 0.0) {
            return Err(Error::NonPositiveVariance(t));
        }
        ll += c - 0.5 * s.ln() - 0.5 * (nu + 1.0) * (x * x / ((nu - 2.0) * s)).ln_1p();
    }
    Ok(ll)
}

fn mv_terms(sigmas: &[CovMatrix], rows: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    check_lengths(sigmas.len(), rows.len())?;
    sigmas
        .iter()
        .zip(rows)
        .enumerate()
        .map(|(t, (s, r))| match linalg::logdet_and_quadform(s, r) {
            Err(Error::NotPositiveDefinite { .. }) => Err(Error::NotPositiveDefiniteAt { t }),
            other => other,
        })
        .collect()
}

/// Multivariate normal log-likelihood, summed over time.
pub fn loglik_mvn(sigmas: &[CovMatrix], rows: &[Vec<f64>]) -> Result<f64> {
    let terms = mv_terms(sigmas, rows)?;
    let n = sigmas.first().map_or(0, |s| s.dim()) as f64;
    Ok(terms
        .iter()
        .map(|(ld, q)| -0.5 * n * LN_2PI - 0.5 * ld - 0.5 * q)
        .sum())
}

/// Standardized multivariate t log-likelihood with `Σ_t` the covariance.
pub fn loglik_mvt(sigmas: &[CovMatrix], rows: &[Vec<f64>], nu: f64) -> Result<f64> {
    if !(nu > 2.0) {
        return Err(Error::DegreesOfFreedomTooSmall(nu));
    }
    let terms = mv_terms(sigmas, rows)?;
    let n = sigmas.first().map_or(0, |s| s.dim());
    let c = t_constant(nu, n, Normalization::Full);
    let nf = n as f64;
    Ok(terms
        .iter()
        .map(|(ld, q)| c - 0.5 * ld - 0.5 * (nu + nf) * (q / (nu - 2.0)).ln_1p())
        .sum())
}

/// Tape forms. Variances and squared returns are column vectors of equal
/// length; `nu` is either `1×1` or one entry per observation.
pub mod tape {
    use super::*;

    /// Per-observation normal log density, as a column vector.
    pub fn normal_terms<'t>(var: Var<'t>, rsq: Var<'t>, norm: Normalization) -> Result<Var<'t>> {
        let core = var.log()?.add(&rsq.div(&var)?)?.scale(-0.5);
        Ok(if norm.on() { core.offset(-0.5 * LN_2PI) } else { core })
    }

    pub fn student_t_terms<'t>(var: Var<'t>, rsq: Var<'t>, nu: Var<'t>, norm: Normalization) -> Result<Var<'t>> {
        let nu_m2 = nu.offset(-2.0);
        let mut c = nu.offset(1.0).scale(0.5).lgamma()?.sub(&nu.scale(0.5).lgamma()?)?.sub(&nu_m2.log()?.scale(0.5))?;
        if norm.on() {
            c = c.offset(-0.5 * PI.ln());
        }
        let z = rsq.div(&nu_m2.mul(&var)?)?.offset(1.0).log()?;
        let tail = nu.offset(1.0).scale(0.5).mul(&z)?;
        c.sub(&var.log()?.scale(0.5))?.sub(&tail)
    }

    /// One multivariate normal observation.
    pub fn mvn_term<'t>(sigma: Var<'t>, r: Var<'t>) -> Result<Var<'t>> {
        let n = sigma.shape().rows as f64;
        Ok(sigma
            .logdet()?
            .add(&sigma.inv_quad(&r)?)?
            .scale(-0.5)
            .offset(-0.5 * n * LN_2PI))
    }

    /// One standardized multivariate t observation.
    pub fn mvt_term<'t>(sigma: Var<'t>, r: Var<'t>, nu: Var<'t>) -> Result<Var<'t>> {
        let nf = sigma.shape().rows as f64;
        let nu_m2 = nu.offset(-2.0);
        let c = nu
            .offset(nf)
            .scale(0.5)
            .lgamma()?
            .sub(&nu.scale(0.5).lgamma()?)?
            .sub(&nu_m2.log()?.scale(0.5 * nf))?
            .offset(-0.5 * nf * PI.ln());
        let q = sigma.inv_quad(&r)?;
        let tail = nu.offset(nf).scale(0.5).mul(&q.div(&nu_m2)?.offset(1.0).log()?)?;
        c.sub(&sigma.logdet()?.scale(0.5))?.sub(&tail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn normal_examples() {
        assert_eq!(loglik_normal(&[1.0], &[0.0], Normalization::Literal).unwrap(), 0.0);
        let full = loglik_normal(&[1.0], &[0.0], Normalization::Full).unwrap();
        assert!((full + 0.918_938_533_2).abs() < 1e-10);
        let v = loglik_normal(&[2.0], &[1.0], Normalization::Literal).unwrap();
        assert!((v + (0.5 * 2f64.ln() + 0.25)).abs() < 1e-15);
        assert_eq!(loglik_normal(&[0.0], &[1.0], Normalization::Full), Err(Error::NonPositiveVariance(0)));
    }

    #[test]
    fn student_t_examples() {
        let big = loglik_student_t(&[1.0], &[0.5], 1e6, Normalization::Full).unwrap();
        let normal = -0.5 * LN_2PI - 0.125;
        assert!((big - normal).abs() < 1e-4);
        let v = loglik_student_t(&[1.0], &[0.0], 4.0, Normalization::Full).unwrap();
        let oracle = statrs::function::gamma::ln_gamma(2.5) - statrs::function::gamma::ln_gamma(2.0) - 0.5 * (2.0 * PI).ln();
        assert!((v - oracle).abs() < 1e-12);
        assert_eq!(
            loglik_student_t(&[1.0], &[0.0], 2.0, Normalization::Full),
            Err(Error::DegreesOfFreedomTooSmall(2.0))
        );
    }

    /// The standardized t density integrates to one and has unit variance.
    #[test]
    fn student_t_is_a_unit_variance_density() {
        let nu = 5.0;
        let h = 1e-3;
        let (mut mass, mut second) = (0.0, 0.0);
        let mut x = -400.0;
        while x < 400.0 {
            let p = loglik_student_t(&[1.0], &[x], nu, Normalization::Full).unwrap().exp();
            mass += p * h;
            second += x * x * p * h;
            x += h;
        }
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
        assert!((second - 1.0).abs() < 1e-2, "{second}");
    }

    #[test]
    fn mvn_examples() {
        let v = loglik_mvn(&[CovMatrix::identity(2)], &[vec![0.0, 0.0]]).unwrap();
        assert!((v + LN_2PI).abs() < 1e-14);
        let v = loglik_mvn(&[CovMatrix::diagonal(&[1.0, 4.0])], &[vec![1.0, 2.0]]).unwrap();
        assert!((v - (-LN_2PI - 0.5 * 4f64.ln() - 1.0)).abs() < 1e-14);
        let bad = CovMatrix::new(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(
            loglik_mvn(&[CovMatrix::identity(2), bad], &[vec![0.0; 2], vec![0.0; 2]]),
            Err(Error::NotPositiveDefiniteAt { t: 1 })
        );
    }

    #[test]
    fn mvt_examples() {
        let v = loglik_mvt(&[CovMatrix::identity(2)], &[vec![0.0, 0.0]], 4.0).unwrap();
        let oracle = statrs::function::gamma::ln_gamma(3.0) - statrs::function::gamma::ln_gamma(2.0) - (2.0 * PI).ln();
        assert!((v - oracle).abs() < 1e-12);
        for (s, r) in [(1.7, 0.3), (0.4, -2.0)] {
            let uni = loglik_student_t(&[s], &[r], 6.5, Normalization::Full).unwrap();
            let multi = loglik_mvt(&[CovMatrix::scalar(s)], &[vec![r]], 6.5).unwrap();
            assert!((uni - multi).abs() < 1e-13);
        }
        let sig = CovMatrix::new(2, vec![1.5, 0.3, 0.3, 0.8]).unwrap();
        let r = vec![vec![0.4, -1.1]];
        let t = loglik_mvt(std::slice::from_ref(&sig), &r, 1e6).unwrap();
        let n = loglik_mvn(&[sig], &r).unwrap();
        assert!((t - n).abs() < 1e-3);
        assert!(loglik_mvt(&[CovMatrix::identity(1)], &[vec![0.0]], 1.5).is_err());
    }

    #[test]
    fn tape_forms_match_plain() {
        let var = [0.7, 1.3, 2.2];
        let r = [0.4, -1.2, 2.5];
        let rsq: Vec<f64> = r.iter().map(|x| x * x).collect();
        let tape = Tape::new();
        let v = tape.column(&var);
        let q = tape.column(&rsq);
        for norm in [Normalization::Full, Normalization::Literal] {
            let a = tape::normal_terms(v, q, norm).unwrap().sum().item();
            assert!((a - loglik_normal(&var, &r, norm).unwrap()).abs() < 1e-12);
            let nu = tape.scalar(5.5);
            let b = tape::student_t_terms(v, q, nu, norm).unwrap().sum().item();
            assert!((b - loglik_student_t(&var, &r, 5.5, norm).unwrap()).abs() < 1e-12);
        }
        let s = CovMatrix::new(2, vec![1.5, 0.3, 0.3, 0.8]).unwrap();
        let sv = tape.var(crate::autodiff::Shape::new(2, 2), s.entries().to_vec()).unwrap();
        let rv = tape.column(&[0.4, -1.1]);
        let rows = vec![vec![0.4, -1.1]];
        let a = tape::mvn_term(sv, rv).unwrap().item();
        assert!((a - loglik_mvn(std::slice::from_ref(&s), &rows).unwrap()).abs() < 1e-12);
        let b = tape::mvt_term(sv, rv, tape.scalar(7.0)).unwrap().item();
        assert!((b - loglik_mvt(&[s], &rows, 7.0).unwrap()).abs() < 1e-12);
    }
}
