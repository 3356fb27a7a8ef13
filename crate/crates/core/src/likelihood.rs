//! Observation models: log-densities, derivatives in the linear predictor
//! and CDFs.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::latent::{HyperId, HyperValues};

/// Gaussian precision used to make the predictor (numerically) exact.
pub const EXACT_PRECISION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Identity link; hyperparameter is the log-precision.
    Gaussian { log_precision: HyperId },
    /// Log link.
    Poisson,
    /// Log link, mean μ and size θ with variance μ + μ²/θ; hyperparameter is
    /// log θ.
    NBinomial { log_size: HyperId },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian { .. } => "gaussian",
            Family::Poisson => "poisson",
            Family::NBinomial { .. } => "nbinomial",
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, Family::Gaussian { .. })
    }

    pub fn hyper(&self) -> Option<HyperId> {
        match *self {
            Family::Gaussian { log_precision } => Some(log_precision),
            Family::Poisson => None,
            Family::NBinomial { log_size } => Some(log_size),
        }
    }

    /// Resolves the family at hyperparameter values `h`.
    pub fn at(&self, h: &HyperValues) -> Lik {
        match *self {
            Family::Gaussian { log_precision } => Lik::Gaussian {
                precision: h.natural(log_precision),
            },
            Family::Poisson => Lik::Poisson,
            Family::NBinomial { log_size } => Lik::NBinomial {
                size: h.natural(log_size),
            },
        }
    }
}

/// A family with its hyperparameter resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lik {
    Gaussian { precision: f64 },
    Poisson,
    NBinomial { size: f64 },
}

fn check_count(y: f64) -> Result<()> {
    if y < 0.0 || y.fract() != 0.0 || !y.is_finite() {
        return Err(Error::UnsupportedObservation(y));
    }
    Ok(())
}

/// `lnΓ(y + s) − lnΓ(s)`, summed directly when `y` is small so that large
/// sizes keep full precision.
fn ln_rising(s: f64, y: f64) -> f64 {
    if y < 64.0 {
        (0..y as usize).map(|k| (s + k as f64).ln()).sum()
    } else {
        ln_gamma(y + s) - ln_gamma(s)
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

impl Lik {
    pub fn validate(&self, y: f64) -> Result<()> {
        match self {
            Lik::Gaussian { .. } if !y.is_finite() => Err(Error::UnsupportedObservation(y)),
            Lik::Gaussian { .. } => Ok(()),
            _ => check_count(y),
        }
    }

    pub fn inverse_link(&self, eta: f64) -> f64 {
        match self {
            Lik::Gaussian { .. } => eta,
            _ => eta.exp(),
        }
    }

    /// `log π(y | η)`; `y` must already be validated.
    pub fn log_lik_unchecked(&self, y: f64, eta: f64) -> f64 {
        match *self {
            Lik::Gaussian { precision } => {
                let r = y - eta;
                0.5 * (precision.ln() - (2.0 * PI).ln()) - 0.5 * precision * r * r
            }
            Lik::Poisson => y * eta - eta.exp() - ln_gamma(y + 1.0),
            Lik::NBinomial { size } => {
                let mu = eta.exp();
                let log_s_mu = (size + mu).ln();
                ln_rising(size, y) - ln_gamma(y + 1.0) - size * (mu / size).ln_1p()
                    + y * (eta - log_s_mu)
            }
        }
    }

    pub fn log_lik(&self, y: f64, eta: f64) -> Result<f64> {
        self.validate(y)?;
        Ok(self.log_lik_unchecked(y, eta))
    }

    /// First and second derivative of the log-density in `η`.
    pub fn derivs_unchecked(&self, y: f64, eta: f64) -> (f64, f64) {
        match *self {
            Lik::Gaussian { precision } => (precision * (y - eta), -precision),
            Lik::Poisson => {
                let mu = eta.exp();
                (y - mu, -mu)
            }
            Lik::NBinomial { size } => {
                let mu = eta.exp();
                let frac = mu / (size + mu);
                (y - (y + size) * frac, -(y + size) * frac * size / (size + mu))
            }
        }
    }

    pub fn derivs(&self, y: f64, eta: f64) -> Result<(f64, f64)> {
        self.validate(y)?;
        Ok(self.derivs_unchecked(y, eta))
    }

    /// `P(Y ≤ y | η)`; discrete families use the exact lower-tail sum.
    /// `y = +∞` is accepted as the upper support limit.
    pub fn cdf(&self, y: f64, eta: f64) -> Result<f64> {
        if y == f64::INFINITY {
            return Ok(1.0);
        }
        self.validate(y)?;
        Ok(self.cdf_unchecked(y, eta))
    }

    pub fn cdf_unchecked(&self, y: f64, eta: f64) -> f64 {
        match *self {
            Lik::Gaussian { precision } => 0.5 * erfc(-(y - eta) * (0.5 * precision).sqrt()),
            _ => {
                let lse = log_sum_exp((0..=y as u64).map(|k| self.log_lik_unchecked(k as f64, eta)));
                lse.exp().min(1.0)
            }
        }
    }

    /// Draws one observation with linear predictor `η`.
    pub fn sample<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> f64 {
        match *self {
            Lik::Gaussian { precision } => Normal::new(eta, precision.sqrt().recip())
                .expect("positive sd")
                .sample(rng),
            Lik::Poisson => poisson_draw(eta.exp(), rng),
            Lik::NBinomial { size } => {
                let lambda = Gamma::new(size, eta.exp() / size).expect("positive parameters").sample(rng);
                poisson_draw(lambda, rng)
            }
        }
    }
}

fn poisson_draw<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    Poisson::new(mu).expect("positive mean").sample(rng)
}
