//! Closed-form contraction factors and the tuned step size.
//!
//! Each mixing stage contracts expected consensus distance by a factor that
//! depends only on fan-in and population sizes:
//!
//! ```text
//! beta_hs  = (1/b_hs) * (1 - (b_hs - 1)/(n_s - 1))
//! beta_hh  = (1/b_hh) * (1 - (1 - b_hh/(n_h - 1))^n_h) - 1/(n_h - 1)
//! beta_sh  = (1/b_sh) * (1 - (b_sh - 1)/(n_h - 1))
//! beta_hsl = beta_hs * beta_hh * beta_sh
//! ```
//!
//! `beta_prime = (beta_hsl + (n_s/n_h) * beta_hs * (1 + beta_hh)) / 2`
//! additionally accounts for the random motion of the average model and
//! drives the step-size rule. The power term in `beta_hh` is evaluated as
//! `exp(n_h * ln_1p(-q))`, which stays accurate when `q = b_hh/(n_h - 1)`
//! is tiny (n_h in the millions) where `(1 - q)^n_h` would lose digits.

use crate::topology::TopologyConfig;
use crate::{Error, Result};

/// Per-stage and composed contraction factors for one hub-and-spoke
/// configuration. Only produced by [`beta_bounds`], so the invariants
/// (each factor in [0, 1], `beta_hh <= 1 - 1/e`) hold by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBounds {
    pub beta_hs: f64,
    pub beta_hh: f64,
    pub beta_sh: f64,
    pub beta_hsl: f64,
    pub beta_prime: f64,
}

fn pair_average_factor(n: usize, b: usize) -> f64 {
    // (1/b) * (1 - (b-1)/(n-1)) for sampling b of n without replacement
    (1.0 / b as f64) * (1.0 - (b as f64 - 1.0) / (n as f64 - 1.0))
}

/// `(1/b) * (1 - (1 - b/(n-1))^n) - 1/(n-1)` for the gossip stage over
/// `n` nodes with fan-out `b`.
pub fn beta_gossip(n: usize, b: usize) -> Result<f64> {
    if n < 2 || b < 1 || b > n - 1 {
        return Err(Error::config(format!(
            "beta_gossip: need n >= 2 and 1 <= b <= n - 1 (got n = {n}, b = {b})"
        )));
    }
    let q = b as f64 / (n as f64 - 1.0);
    let pow = if q >= 1.0 {
        0.0
    } else {
        (n as f64 * (-q).ln_1p()).exp()
    };
    Ok((1.0 - pow) / b as f64 - 1.0 / (n as f64 - 1.0))
}

/// Contraction factors for a hub-and-spoke configuration.
pub fn beta_bounds(n_s: usize, n_h: usize, b_hs: usize, b_hh: usize, b_sh: usize) -> Result<BetaBounds> {
    TopologyConfig::Hsl { n_s, n_h, b_hs, b_hh, b_sh }.validate()?;
    let beta_hs = pair_average_factor(n_s, b_hs);
    let beta_hh = beta_gossip(n_h, b_hh)?;
    let beta_sh = pair_average_factor(n_h, b_sh);
    let beta_hsl = beta_hs * beta_hh * beta_sh;
    let beta_prime = 0.5 * (beta_hsl + (n_s as f64 / n_h as f64) * beta_hs * (1.0 + beta_hh));
    Ok(BetaBounds { beta_hs, beta_hh, beta_sh, beta_hsl, beta_prime })
}

/// Problem-level constants feeding the step-size rule: smoothness `L`,
/// per-node gradient noise `sigma^2`, heterogeneity `h_sq` (sup over models
/// of the mean squared node-gradient deviation), initial suboptimality
/// `delta0 = F(x_0) - F*`, round budget `rounds`, and fleet size `n_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    pub l_smooth: f64,
    pub sigma_sq: f64,
    pub h_sq: f64,
    pub delta0: f64,
    pub rounds: usize,
    pub n_s: usize,
}

impl ProblemConstants {
    fn validate(&self) -> Result<()> {
        if !(self.l_smooth.is_finite() && self.l_smooth > 0.0) {
            return Err(Error::config(format!(
                "step size: l_smooth must be finite and > 0 (got {})",
                self.l_smooth
            )));
        }
        for (name, v) in [
            ("sigma_sq", self.sigma_sq),
            ("h_sq", self.h_sq),
            ("delta0", self.delta0),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!(
                    "step size: {name} must be finite and >= 0 (got {v})"
                )));
            }
        }
        if self.rounds == 0 {
            return Err(Error::config("step size: rounds must be >= 1"));
        }
        if self.n_s == 0 {
            return Err(Error::config("step size: n_s must be >= 1"));
        }
        Ok(())
    }
}

/// Tuned step size: the minimum of a noise-limited term, a
/// consensus-limited term, and the smoothness cap `1/(20 L)`:
///
/// ```text
/// min { sqrt( n_s * delta0 / (2 T L ((1 + 663 beta') sigma^2 + 663 beta' H^2)) ),
///       cbrt( delta0 / (250 T L^2 beta_hsl (sigma^2 + H^2)) ),
///       1 / (20 L) }
/// ```
///
/// Terms whose denominator vanishes (noise-free and/or fully contracting
/// cases) drop out as `+inf`, so the cap always keeps the result finite.
pub fn derived_step_size(c: &ProblemConstants, b: &BetaBounds) -> Result<f64> {
    c.validate()?;
    let t = c.rounds as f64;
    let l = c.l_smooth;

    let denom1 = 2.0 * t * l * ((1.0 + 663.0 * b.beta_prime) * c.sigma_sq + 663.0 * b.beta_prime * c.h_sq);
    let term1 = if denom1 > 0.0 {
        (c.n_s as f64 * c.delta0 / denom1).sqrt()
    } else {
        f64::INFINITY
    };

    let denom2 = 250.0 * t * l * l * b.beta_hsl * (c.sigma_sq + c.h_sq);
    let term2 = if denom2 > 0.0 {
        (c.delta0 / denom2).cbrt()
    } else {
        f64::INFINITY
    };

    Ok(term1.min(term2).min(1.0 / (20.0 * l)))
}

/// Steady-state consensus-distance bound under a fixed step size:
/// `20 * (1 + 3 beta_hsl) / (1 - beta_hsl)^2 * beta_hsl * gamma^2 * (sigma^2 + h_sq)`.
pub fn long_run_cd_bound(b: &BetaBounds, gamma: f64, sigma_sq: f64, h_sq: f64) -> Result<f64> {
    if b.beta_hsl >= 1.0 {
        return Err(Error::config(format!(
            "cd bound undefined: beta_hsl must be < 1 (got {})",
            b.beta_hsl
        )));
    }
    if !(gamma.is_finite() && gamma >= 0.0) || !(sigma_sq >= 0.0) || !(h_sq >= 0.0) {
        return Err(Error::config(
            "cd bound: gamma, sigma_sq, h_sq must be finite and >= 0",
        ));
    }
    let beta = b.beta_hsl;
    Ok(20.0 * (1.0 + 3.0 * beta) / ((1.0 - beta) * (1.0 - beta)) * beta * gamma * gamma * (sigma_sq + h_sq))
}

/// Cap on the composed factor: when hubs collectively ingest at
/// least as much as spokes pull back (`n_h * b_hs >= n_s * b_sh`), the
/// composed factor is capped by `(n_h / n_s) * (1 - 1/e)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaCapReport {
    pub premise_holds: bool,
    pub bound: f64,
    pub satisfied: bool,
}

pub fn check_beta_hsl_cap(
    n_s: usize,
    n_h: usize,
    b_hs: usize,
    b_sh: usize,
    beta_hsl: f64,
) -> BetaCapReport {
    let premise_holds = n_h * b_hs >= n_s * b_sh;
    let bound = (n_h as f64 / n_s as f64) * (1.0 - (-1.0f64).exp());
    BetaCapReport {
        premise_holds,
        bound,
        satisfied: !premise_holds || beta_hsl <= bound + 1e-12,
    }
}

pub const ONE_MINUS_INV_E: f64 = 0.6321205588285577;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_hs_closed_form_values() {
        // b_hs = 1: no averaging, factor 1
        let b = beta_bounds(100, 5, 1, 1, 1).unwrap();
        assert_eq!(b.beta_hs, 1.0);
        // b_hs = n_s: full average, factor exactly 0
        let b = beta_bounds(100, 5, 100, 1, 1).unwrap();
        assert_eq!(b.beta_hs, 0.0);
        // hand value: (1/2)(1 - 1/99)
        let b = beta_bounds(100, 5, 2, 2, 2).unwrap();
        assert!((b.beta_hs - 0.5 * (1.0 - 1.0 / 99.0)).abs() < 1e-16);
    }

    #[test]
    fn beta_hh_hand_values() {
        // n_h = 2, b = 1: (1 - 0^2)/1 - 1/1 = 0 exactly
        assert_eq!(beta_gossip(2, 1).unwrap(), 0.0);
        // n_h = 5, b = 1: 1 - (3/4)^5 - 1/4 = 0.5126953125 exactly in f64
        let v = beta_gossip(5, 1).unwrap();
        assert!((v - 0.5126953125).abs() < 1e-15, "{v}");
        // large-fleet limit approaches 1 - 1/e from below
        let v = beta_gossip(1_000_000, 1).unwrap();
        assert!((v - ONE_MINUS_INV_E).abs() < 1e-3, "{v}");
        assert!(v <= ONE_MINUS_INV_E);
    }

    #[test]
    fn beta_hh_monotone_in_fanout_and_capped() {
        for n in [3usize, 5, 9, 17, 33, 101] {
            let mut prev = f64::INFINITY;
            for b in 1..n {
                let v = beta_gossip(n, b).unwrap();
                assert!(v <= prev + 1e-15, "n={n} b={b}: {v} > {prev}");
                assert!((0.0..=ONE_MINUS_INV_E + 1e-12).contains(&v), "n={n} b={b}: {v}");
                prev = v;
            }
        }
    }

    #[test]
    fn composed_factor_is_plain_product() {
        let b = beta_bounds(30, 6, 4, 2, 3).unwrap();
        assert_eq!(b.beta_hsl, b.beta_hs * b.beta_hh * b.beta_sh);
        let expected_prime =
            0.5 * (b.beta_hsl + (30.0 / 6.0) * b.beta_hs * (1.0 + b.beta_hh));
        assert_eq!(b.beta_prime, expected_prime);
    }

    #[test]
    fn step_size_hand_value() {
        // noise-limited branch: sqrt(100 / (1000 * 664)) = 0.012272017...
        let c = ProblemConstants {
            l_smooth: 1.0,
            sigma_sq: 1.0,
            h_sq: 1.0,
            delta0: 1.0,
            rounds: 500,
            n_s: 100,
        };
        let b = BetaBounds {
            beta_hs: 0.5,
            beta_hh: 0.5,
            beta_sh: 0.8,
            beta_hsl: 0.2,
            beta_prime: 0.5,
        };
        let g = derived_step_size(&c, &b).unwrap();
        assert!((g - 0.012272017341845399).abs() < 1e-15, "{g}");
    }

    #[test]
    fn step_size_degenerate_terms_fall_back_to_cap() {
        let c = ProblemConstants {
            l_smooth: 2.0,
            sigma_sq: 0.0,
            h_sq: 0.0,
            delta0: 1.0,
            rounds: 100,
            n_s: 10,
        };
        let b = beta_bounds(10, 4, 2, 2, 2).unwrap();
        assert_eq!(derived_step_size(&c, &b).unwrap(), 1.0 / 40.0);
    }

    #[test]
    fn cd_bound_hand_value_and_domain() {
        let b = BetaBounds {
            beta_hs: 1.0,
            beta_hh: 0.5,
            beta_sh: 1.0,
            beta_hsl: 0.5,
            beta_prime: 0.0,
        };
        // 20 * 2.5 / 0.25 * 0.5 * 0.01 * 2 = 2.0
        let v = long_run_cd_bound(&b, 0.1, 1.0, 1.0).unwrap();
        assert!((v - 2.0).abs() < 1e-14, "{v}");
        let bad = BetaBounds { beta_hsl: 1.0, ..b };
        assert!(long_run_cd_bound(&bad, 0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn composed_cap_example() {
        let b = beta_bounds(100, 5, 40, 2, 1).unwrap();
        let r = check_beta_hsl_cap(100, 5, 40, 1, b.beta_hsl);
        assert!(r.premise_holds, "200 >= 100");
        assert!((r.bound - 0.05 * ONE_MINUS_INV_E).abs() < 1e-15);
        assert!(r.satisfied, "beta_hsl = {} vs bound {}", b.beta_hsl, r.bound);
    }

    #[test]
    fn cap_premise_can_fail_without_flagging() {
        let b = beta_bounds(100, 5, 2, 2, 2).unwrap();
        let r = check_beta_hsl_cap(100, 5, 2, 2, b.beta_hsl);
        assert!(!r.premise_holds, "10 < 200");
        assert!(r.satisfied, "vacuous when the premise fails");
    }
}
