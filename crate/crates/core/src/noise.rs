//! Customer valuation noise.
//!
//! A customer with true value `x` and noise draw `eps` buys at ask `a` when
//! `x + eps >= a`, so every trade likelihood is expressed through the
//! survival function `Phi(y) = P[eps >= y]` and the cdf `Psi(y) = P[eps <= y]`.

use alloc::format;

use rand::distributions::Open01;
use rand::Rng;

use crate::error::{Error, Result};

/// Number of equispaced points used by the grid certificate for `K`.
pub const CONDITION_GRID_POINTS: usize = 10_001;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Logistic with location 0: `Phi(y) = 1 / (1 + exp(y / scale))`.
    Logistic { scale: f64 },
    /// Centered normal with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Centered Laplace (double exponential) with the given scale.
    Laplace { scale: f64 },
    /// `+value` with probability `prob`, `-value` otherwise.
    TwoPoint { value: f64, prob: f64 },
    /// Noise traders: `+inf` (always buy) with probability `buy_prob`,
    /// `-inf` (always sell) otherwise.
    NoiseTraderMix { buy_prob: f64 },
}

impl NoiseModel {
    pub fn logistic(scale: f64) -> Result<Self> {
        let m = NoiseModel::Logistic { scale };
        m.validate()?;
        Ok(m)
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        let m = NoiseModel::Gaussian { sigma };
        m.validate()?;
        Ok(m)
    }

    pub fn laplace(scale: f64) -> Result<Self> {
        let m = NoiseModel::Laplace { scale };
        m.validate()?;
        Ok(m)
    }

    pub fn two_point(value: f64, prob: f64) -> Result<Self> {
        let m = NoiseModel::TwoPoint { value, prob };
        m.validate()?;
        Ok(m)
    }

    pub fn noise_trader_mix(buy_prob: f64) -> Result<Self> {
        let m = NoiseModel::NoiseTraderMix { buy_prob };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )))
            }
        };
        let probability = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {v}"
                )))
            }
        };
        match *self {
            NoiseModel::Logistic { scale } => positive("logistic scale", scale),
            NoiseModel::Gaussian { sigma } => positive("gaussian sigma", sigma),
            NoiseModel::Laplace { scale } => positive("laplace scale", scale),
            NoiseModel::TwoPoint { value, prob } => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "two-point value must be finite and >= 0, got {value}"
                    )));
                }
                probability("two-point prob", prob)
            }
            NoiseModel::NoiseTraderMix { buy_prob } => probability("buy_prob", buy_prob),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::Logistic { .. } => "logistic",
            NoiseModel::Gaussian { .. } => "gaussian",
            NoiseModel::Laplace { .. } => "laplace",
            NoiseModel::TwoPoint { .. } => "two_point",
            NoiseModel::NoiseTraderMix { .. } => "noise_trader_mix",
        }
    }

    /// Families with atoms. They are valid for the static price functions
    /// only; the filter theory needs a density.
    pub fn is_static_only(&self) -> bool {
        matches!(
            self,
            NoiseModel::TwoPoint { .. } | NoiseModel::NoiseTraderMix { .. }
        )
    }

    /// `Phi(y) = P[eps >= y]`.
    pub fn survival(&self, y: f64) -> f64 {
        match *self {
            NoiseModel::Logistic { scale } => 1.0 / (1.0 + libm::exp(y / scale)),
            NoiseModel::Gaussian { sigma } => normal_upper_tail(y / sigma),
            NoiseModel::Laplace { scale } => {
                if y >= 0.0 {
                    0.5 * libm::exp(-y / scale)
                } else {
                    1.0 - 0.5 * libm::exp(y / scale)
                }
            }
            NoiseModel::TwoPoint { value, prob } => {
                let mut p = 0.0;
                if value >= y {
                    p += prob;
                }
                if -value >= y {
                    p += 1.0 - prob;
                }
                p
            }
            NoiseModel::NoiseTraderMix { buy_prob } => {
                if y == f64::NEG_INFINITY {
                    1.0
                } else {
                    buy_prob
                }
            }
        }
    }

    /// `Psi(y) = P[eps <= y]`.
    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            NoiseModel::Logistic { scale } => 1.0 / (1.0 + libm::exp(-y / scale)),
            NoiseModel::Gaussian { sigma } => normal_upper_tail(-y / sigma),
            NoiseModel::Laplace { scale } => {
                if y >= 0.0 {
                    1.0 - 0.5 * libm::exp(-y / scale)
                } else {
                    0.5 * libm::exp(y / scale)
                }
            }
            NoiseModel::TwoPoint { value, prob } => {
                let mut p = 0.0;
                if value <= y {
                    p += prob;
                }
                if -value <= y {
                    p += 1.0 - prob;
                }
                p
            }
            NoiseModel::NoiseTraderMix { buy_prob } => {
                if y == f64::INFINITY {
                    1.0
                } else {
                    1.0 - buy_prob
                }
            }
        }
    }

    /// Density `-Phi'(y)`. Errors for families with atoms.
    pub fn density(&self, y: f64) -> Result<f64> {
        match *self {
            NoiseModel::Logistic { scale } => {
                let z = libm::exp(-libm::fabs(y) / scale);
                Ok(z / (scale * (1.0 + z) * (1.0 + z)))
            }
            NoiseModel::Gaussian { sigma } => {
                let z = y / sigma;
                Ok(libm::exp(-0.5 * z * z) * FRAC_1_SQRT_PI / (sigma * core::f64::consts::SQRT_2))
            }
            NoiseModel::Laplace { scale } => Ok(libm::exp(-libm::fabs(y) / scale) / (2.0 * scale)),
            NoiseModel::TwoPoint { .. } | NoiseModel::NoiseTraderMix { .. } => {
                Err(Error::NotDifferentiable(self.name()))
            }
        }
    }

    /// Closed-form `sup_y -Phi'(y) / min(Phi(y), 1 - Phi(y))` over the whole
    /// real line, where known.
    ///
    /// Logistic: the ratio is `max(Phi, 1 - Phi) / scale`, which tends to
    /// `1 / scale` in both tails. Laplace: the ratio is exactly `1 / scale`.
    pub fn analytic_hazard_sup(&self) -> Option<f64> {
        match *self {
            NoiseModel::Logistic { scale } => Some(1.0 / scale),
            NoiseModel::Laplace { scale } => Some(1.0 / scale),
            _ => None,
        }
    }

    /// One draw of `eps`. May return `+-inf` for [`NoiseModel::NoiseTraderMix`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseModel::Logistic { scale } => {
                let u: f64 = rng.sample(Open01);
                scale * libm::log(u / (1.0 - u))
            }
            NoiseModel::Gaussian { sigma } => {
                // Box-Muller, one variate per pair of uniforms.
                let u1: f64 = rng.sample(Open01);
                let u2: f64 = rng.sample(Open01);
                sigma
                    * libm::sqrt(-2.0 * libm::log(u1))
                    * libm::cos(2.0 * core::f64::consts::PI * u2)
            }
            NoiseModel::Laplace { scale } => {
                let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
                let mag = -scale * libm::log(1.0 - 2.0 * libm::fabs(u));
                if u < 0.0 {
                    -mag
                } else {
                    mag
                }
            }
            NoiseModel::TwoPoint { value, prob } => {
                if rng.gen::<f64>() < prob {
                    value
                } else {
                    -value
                }
            }
            NoiseModel::NoiseTraderMix { buy_prob } => {
                if rng.gen::<f64>() < buy_prob {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Checks the existence/uniqueness hypothesis for price range width `c`:
    /// `-Phi'(y) <= (K / c) min(Phi(y), 1 - Phi(y))` on `[-c, c]` with `K < 1`,
    /// and `0 < Phi(0) < 1`.
    pub fn check_gm_condition(&self, c: f64) -> Result<ConditionReport> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "price range width must be > 0, got {c}"
            )));
        }
        if self.is_static_only() {
            return Err(Error::NotDifferentiable(self.name()));
        }

        let steps = (CONDITION_GRID_POINTS - 1) as f64;
        let mut max_ratio: f64 = 0.0;
        let mut max_density: f64 = 0.0;
        let mut scan = |y: f64| -> Result<()> {
            let d = self.density(y)?;
            let phi = self.survival(y);
            let denom = libm::fmin(phi, 1.0 - phi);
            let ratio = if denom > 0.0 {
                d / denom
            } else if d > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            max_ratio = libm::fmax(max_ratio, ratio);
            max_density = libm::fmax(max_density, d);
            Ok(())
        };
        for i in 0..CONDITION_GRID_POINTS {
            scan(-c + 2.0 * c * (i as f64) / steps)?;
        }
        // The centre is on the grid only up to rounding.
        scan(0.0)?;

        let k_grid = c * max_ratio;
        let k_analytic = self.analytic_hazard_sup().map(|h| c * h);
        let k = match k_analytic {
            Some(ka) => libm::fmax(ka, k_grid),
            None => k_grid,
        };
        let phi_at_c = self.survival(c);
        let phi_at_zero = self.survival(0.0);
        let passes = k < 1.0 && phi_at_zero > 0.0 && phi_at_zero < 1.0;
        let buy_prob_lower_bound = if k < 1.0 {
            (1.0 - k) * phi_at_zero
        } else {
            0.0
        };

        Ok(ConditionReport {
            k,
            k_grid,
            k_analytic,
            phi_at_c,
            phi_at_zero,
            m: max_density,
            passes,
            grid_points: CONDITION_GRID_POINTS,
            buy_prob_lower_bound,
        })
    }
}

/// Outcome of [`NoiseModel::check_gm_condition`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    /// Contraction modulus: the analytic global bound where known, otherwise
    /// the grid certificate.
    pub k: f64,
    /// `c * max` of the hazard ratio over the scan grid.
    pub k_grid: f64,
    pub k_analytic: Option<f64>,
    pub phi_at_c: f64,
    pub phi_at_zero: f64,
    /// Maximum of the density `-Phi'` on `[-c, c]`.
    pub m: f64,
    pub passes: bool,
    pub grid_points: usize,
    /// `(1 - K) Phi(0)`, a lower bound for `Phi(c)` whenever `K < 1`.
    pub buy_prob_lower_bound: f64,
}

impl ConditionReport {
    /// Whether `Phi(c) >= (1 - K) Phi(0)`; vacuous when `K >= 1`.
    pub fn buy_bound_holds(&self) -> bool {
        self.k >= 1.0 || self.phi_at_c >= self.buy_prob_lower_bound
    }
}

/// `P[Z >= z]` for a standard normal `Z`.
pub fn normal_upper_tail(z: f64) -> f64 {
    0.5 * erfc(z * core::f64::consts::FRAC_1_SQRT_2)
}

/// Complementary error function.
///
/// Positive-term series for `erf` below 1.5 and a Lentz-evaluated continued
/// fraction above; relative error stays below 1e-14 on the real line.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 1.5 {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

/// `exp(-x^2)` with the square split so the exponent is exact to working precision.
fn exp_neg_square(x: f64) -> f64 {
    let hi = libm::trunc(x * 16.0) / 16.0;
    let lo = x - hi;
    libm::exp(-hi * hi) * libm::exp(-lo * (x + hi))
}

// erf(x) = 2/sqrt(pi) exp(-x^2) sum_n 2^n x^(2n+1) / (1*3*...*(2n+1))
fn erf_series(x: f64) -> f64 {
    let two_x2 = 2.0 * x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > f64::EPSILON * 1e-2 * sum {
        n += 1.0;
        term *= two_x2 / (2.0 * n + 1.0);
        sum += term;
        if n > 500.0 {
            break;
        }
    }
    2.0 * FRAC_1_SQRT_PI * exp_neg_square(x) * sum
}

// erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for k in 1..10_000 {
        let a = k as f64 * 0.5;
        d = x + a * d;
        if d == 0.0 {
            d = TINY;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c == 0.0 {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if libm::fabs(delta - 1.0) < 1e-16 {
            break;
        }
    }
    exp_neg_square(x) * FRAC_1_SQRT_PI / f
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logistic_survival_basics() {
        let n = NoiseModel::logistic(2.0).unwrap();
        assert_eq!(n.survival(0.0), 0.5);
        assert!(n.survival(1e4) < 1e-300);
        assert_eq!(n.survival(f64::INFINITY), 0.0);
    }

    #[test]
    fn erfc_against_libm() {
        for i in -600..=2600 {
            let x = i as f64 * 0.01;
            let ours = erfc(x);
            let reference = libm::erfc(x);
            if reference > 1e-300 {
                let rel = ((ours - reference) / reference).abs();
                assert!(rel < 1e-13, "x={x} ours={ours} libm={reference} rel={rel}");
            }
        }
    }

    #[test]
    fn gaussian_survival_at_one_sigma() {
        let n = NoiseModel::gaussian(1.0).unwrap();
        // 0.5 * erfc(1/sqrt 2)
        assert!((n.survival(1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
    }

    #[test]
    fn static_only_density_errors() {
        let tp = NoiseModel::two_point(1.0, 0.5).unwrap();
        assert!(tp.is_static_only());
        assert!(matches!(tp.density(0.0), Err(Error::NotDifferentiable(_))));
        assert!(matches!(
            tp.check_gm_condition(1.0),
            Err(Error::NotDifferentiable(_))
        ));
        let mix = NoiseModel::noise_trader_mix(0.3).unwrap();
        assert!(mix.is_static_only());
        assert_eq!(mix.survival(0.7), 0.3);
        assert!((mix.cdf(-4.0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn two_point_atoms() {
        let tp = NoiseModel::two_point(1.0, 0.5).unwrap();
        assert_eq!(tp.survival(0.8), 0.5);
        assert_eq!(tp.survival(-1.2), 1.0);
        assert_eq!(tp.survival(1.0), 0.5);
        assert_eq!(tp.survival(1.0001), 0.0);
        assert_eq!(tp.cdf(-1.0), 0.5);
        assert_eq!(tp.cdf(1.0), 1.0);
    }

    #[test]
    fn invalid_parameters() {
        assert!(NoiseModel::logistic(0.0).is_err());
        assert!(NoiseModel::gaussian(-1.0).is_err());
        assert!(NoiseModel::two_point(1.0, 1.5).is_err());
        assert!(NoiseModel::noise_trader_mix(f64::NAN).is_err());
        let n = NoiseModel::logistic(1.0).unwrap();
        assert!(n.check_gm_condition(0.0).is_err());
    }

    #[test]
    fn logistic_condition() {
        let r = NoiseModel::logistic(2.0).unwrap().check_gm_condition(1.0).unwrap();
        assert!(r.passes);
        assert!((r.k - 0.5).abs() < 1e-12);
        assert!(r.k_grid <= r.k);
        assert!((r.m - 0.125).abs() < 1e-12);
        assert!(r.buy_bound_holds());
        let r = NoiseModel::logistic(0.5).unwrap().check_gm_condition(1.0).unwrap();
        assert!(!r.passes);
        assert!((r.k - 2.0).abs() < 1e-12);
    }

    #[test]
    fn laplace_grid_matches_analytic() {
        let r = NoiseModel::laplace(3.0).unwrap().check_gm_condition(1.5).unwrap();
        assert!((r.k_grid - 0.5).abs() < 1e-12);
        assert!((r.k - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gaussian_condition_uses_endpoint_hazard() {
        let n = NoiseModel::gaussian(2.0).unwrap();
        let r = n.check_gm_condition(1.0).unwrap();
        // The normal hazard is increasing, so the supremum sits at y = C.
        let expected = n.density(1.0).unwrap() / n.survival(1.0);
        assert!((r.k - expected).abs() < 1e-12);
        assert!(r.k_analytic.is_none());
    }

    #[test]
    fn noise_trader_mix_frequencies() {
        let n = NoiseModel::noise_trader_mix(0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 10_000;
        let ups = (0..draws)
            .filter(|_| n.sample(&mut rng) == f64::INFINITY)
            .count() as f64;
        let sd = (0.3f64 * 0.7 / draws as f64).sqrt();
        assert!((ups / draws as f64 - 0.3).abs() < 3.0 * sd);
    }
}
