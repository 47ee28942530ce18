//! The diffusion nonlinearity `h_p(r) = r + eta r^p` and the entropy density
//! `Psi(r) = r ln r - r + 1 + eta/(p-1) r^p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub eta: f64,
    pub p: f64,
}

impl Nonlinearity {
    pub fn new(eta: f64, p: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {eta}")));
        }
        if !(p >= 4.0) {
            return Err(Error::Config(format!("p must be at least 4, got {p}")));
        }
        Ok(Nonlinearity { eta, p })
    }

    /// `h_p(r)`; callers guarantee `r >= 0` up to rounding.
    #[inline]
    pub fn h(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        r + self.eta * r.powf(self.p)
    }

    #[inline]
    pub fn h_prime(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        1.0 + self.eta * self.p * r.powf(self.p - 1.0)
    }

    /// `Psi(r)` with `0 ln 0 = 0`.
    #[inline]
    pub fn psi(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        let entropy = if r > 0.0 { r * r.ln() } else { 0.0 };
        entropy - r + 1.0 + self.eta / (self.p - 1.0) * r.powf(self.p)
    }
}

fn check_domain(r: f64) -> Result<()> {
    if r < 0.0 || r.is_nan() {
        return Err(Error::Domain(format!(
            "argument must be nonnegative, got {r}"
        )));
    }
    Ok(())
}

pub fn h_p_eval(r: f64, eta: f64, p: f64) -> Result<f64> {
    check_domain(r)?;
    Ok(r + eta * r.powf(p))
}

pub fn h_p_prime(r: f64, eta: f64, p: f64) -> Result<f64> {
    check_domain(r)?;
    Ok(1.0 + eta * p * r.powf(p - 1.0))
}

pub fn psi_eval(r: f64, eta: f64, p: f64) -> Result<f64> {
    check_domain(r)?;
    let entropy = if r > 0.0 { r * r.ln() } else { 0.0 };
    Ok(entropy - r + 1.0 + eta / (p - 1.0) * r.powf(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn h_p_values() {
        assert_eq!(h_p_eval(0.0, 1.0, 4.0).unwrap(), 0.0);
        assert_eq!(h_p_prime(0.0, 1.0, 4.0).unwrap(), 1.0);
        assert_eq!(h_p_eval(1.0, 1.0, 4.0).unwrap(), 2.0);
        assert_eq!(h_p_eval(2.0, 1.0, 4.0).unwrap(), 18.0);
        assert_eq!(h_p_prime(2.0, 1.0, 4.0).unwrap(), 33.0);
        assert!(matches!(h_p_eval(-0.1, 1.0, 4.0), Err(Error::Domain(_))));
        assert!(h_p_prime(-1.0, 1.0, 4.0).is_err());
    }

    #[test]
    fn h_p_derivative_matches_finite_difference() {
        let (eta, p, r, d) = (0.5, 5.0, 1.3, 1e-5);
        let fd = (h_p_eval(r + d, eta, p).unwrap() - h_p_eval(r - d, eta, p).unwrap()) / (2.0 * d);
        let expected_extra = 2.5 * r.powi(4);
        assert!((fd - 1.0 - expected_extra).abs() < 1e-6);
        assert!((h_p_prime(r, eta, p).unwrap() - fd).abs() < 1e-6);
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi_eval(0.0, 1.0, 4.0).unwrap(), 1.0);
        assert!((psi_eval(1.0, 0.3, 5.0).unwrap() - 0.3 / 4.0).abs() < 1e-15);
        // 2 ln 2 - 2 + 1 + 16/3
        let expected = 2.0 * 2f64.ln() - 1.0 + 16.0 / 3.0;
        assert!((psi_eval(2.0, 1.0, 4.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 5.71963).abs() < 1e-5);
        assert!(psi_eval(-1e-3, 1.0, 4.0).is_err());
    }

    #[test]
    fn struct_matches_free_functions() {
        let nl = Nonlinearity::new(0.7, 4.5).unwrap();
        for r in [0.0, 0.3, 1.0, 2.7] {
            assert_eq!(nl.h(r), h_p_eval(r, 0.7, 4.5).unwrap());
            assert_eq!(nl.h_prime(r), h_p_prime(r, 0.7, 4.5).unwrap());
            assert_eq!(nl.psi(r), psi_eval(r, 0.7, 4.5).unwrap());
        }
        assert!(Nonlinearity::new(0.0, 4.0).is_err());
        assert!(Nonlinearity::new(1.0, 3.5).is_err());
    }

    proptest! {
        #[test]
        fn psi_is_nonnegative(r in 0.0f64..50.0, eta in 1e-3f64..5.0, p in 4.0f64..8.0) {
            prop_assert!(psi_eval(r, eta, p).unwrap() >= 0.0);
        }

        #[test]
        fn h_p_prime_at_least_one(r in 0.0f64..20.0, eta in 1e-3f64..5.0, p in 4.0f64..8.0) {
            prop_assert!(h_p_prime(r, eta, p).unwrap() >= 1.0);
        }
    }
}
