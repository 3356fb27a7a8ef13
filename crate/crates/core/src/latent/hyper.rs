use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Map between the unconstrained internal scale and the natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// natural = exp(internal)
    Log,
    /// natural = 2·expit(internal) − 1, internal = log((1+a)/(1−a))
    Correlation,
    Identity,
}

impl Transform {
    pub fn to_natural(self, internal: f64) -> f64 {
        match self {
            Transform::Log => internal.exp(),
            Transform::Correlation => (0.5 * internal).tanh(),
            Transform::Identity => internal,
        }
    }

    pub fn to_internal(self, natural: f64) -> f64 {
        match self {
            Transform::Log => natural.ln(),
            Transform::Correlation => ((1.0 + natural) / (1.0 - natural)).ln(),
            Transform::Identity => natural,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    /// Gaussian on the internal scale.
    Gaussian { mean: f64, precision: f64 },
    /// Gamma(shape, rate) on the natural (positive) scale of a log-transformed
    /// parameter; the density on the internal scale includes the Jacobian.
    LogGamma { shape: f64, rate: f64 },
}

impl Prior {
    pub fn validate(&self, transform: Transform) -> Result<()> {
        match *self {
            Prior::Gaussian { precision, .. } if !(precision > 0.0) => Err(Error::InvalidModel(
                format!("gaussian prior precision must be > 0, got {precision}"),
            )),
            Prior::LogGamma { shape, rate } if !(shape > 0.0 && rate > 0.0) => Err(
                Error::InvalidModel(format!("loggamma parameters must be > 0, got ({shape}, {rate})")),
            ),
            Prior::LogGamma { .. } if transform != Transform::Log => Err(Error::InvalidModel(
                "loggamma prior requires a log-transformed parameter".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Log-density at `internal` on the internal scale.
    pub fn log_density(&self, internal: f64) -> f64 {
        match *self {
            Prior::Gaussian { mean, precision } => {
                let d = internal - mean;
                0.5 * (precision.ln() - (2.0 * PI).ln()) - 0.5 * precision * d * d
            }
            Prior::LogGamma { shape, rate } => {
                // Gamma density at v = e^θ, times dv/dθ = v
                shape * rate.ln() - ln_gamma(shape) + shape * internal - rate * internal.exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParam {
    pub name: String,
    /// Initial (or fixed) value on the internal scale.
    pub initial: f64,
    pub transform: Transform,
    pub prior: Prior,
    pub fixed: bool,
}

impl HyperParam {
    pub fn new(name: impl Into<String>, initial: f64, transform: Transform, prior: Prior) -> Self {
        Self {
            name: name.into(),
            initial,
            transform,
            prior,
            fixed: false,
        }
    }

    /// Log-precision with the default Gaussian(0, 0.1) prior.
    pub fn log_precision(name: impl Into<String>, initial: f64) -> Self {
        Self::new(
            name,
            initial,
            Transform::Log,
            Prior::Gaussian {
                mean: 0.0,
                precision: 0.1,
            },
        )
    }

    /// Correlation with the default Gaussian(0, 0.15) prior, initial value 2.
    pub fn correlation(name: impl Into<String>) -> Self {
        Self::new(
            name,
            2.0,
            Transform::Correlation,
            Prior::Gaussian {
                mean: 0.0,
                precision: 0.15,
            },
        )
    }

    pub fn fixed(mut self, internal: f64) -> Self {
        self.initial = internal;
        self.fixed = true;
        self
    }
}

/// Handle into a `Hypers` registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HyperId(pub(crate) usize);

impl HyperId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Soft limit on the number of free hyperparameters.
pub const HYPER_SOFT_LIMIT: usize = 10;

/// Registry of all hyperparameters of a model. The free (non-fixed) ones,
/// in registration order, form the vector `θ` explored by the engine.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Hypers {
    params: Vec<HyperParam>,
}

impl Hypers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, p: HyperParam) -> HyperId {
        self.params.push(p);
        HyperId(self.params.len() - 1)
    }

    pub fn get(&self, id: HyperId) -> &HyperParam {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: HyperId) -> &mut HyperParam {
        &mut self.params[id.0]
    }

    pub fn all(&self) -> &[HyperParam] {
        &self.params
    }

    pub fn find(&self, name: &str) -> Option<HyperId> {
        self.params.iter().position(|p| p.name == name).map(HyperId)
    }

    pub fn free(&self) -> impl Iterator<Item = (HyperId, &HyperParam)> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.fixed)
            .map(|(i, p)| (HyperId(i), p))
    }

    /// Number of free hyperparameters.
    pub fn dim(&self) -> usize {
        self.params.iter().filter(|p| !p.fixed).count()
    }

    pub fn initial_theta(&self) -> Vec<f64> {
        self.free().map(|(_, p)| p.initial).collect()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.free().map(|(_, p)| p.name.clone()).collect()
    }

    /// Internal values for every registered hyperparameter.
    pub fn expand(&self, theta: &[f64]) -> Result<HyperValues> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "hyperparameter vector",
                expected: self.dim(),
                found: theta.len(),
            });
        }
        let mut it = theta.iter();
        let internal = self
            .params
            .iter()
            .map(|p| if p.fixed { p.initial } else { *it.next().expect("length checked") })
            .collect::<Vec<_>>();
        let natural = self
            .params
            .iter()
            .zip(&internal)
            .map(|(p, &v)| p.transform.to_natural(v))
            .collect();
        Ok(HyperValues { internal, natural })
    }

    /// `log π(θ)`: sum of the priors of the free hyperparameters.
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        self.free()
            .zip(theta)
            .map(|((_, p), &t)| p.prior.log_density(t))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.params {
            p.prior.validate(p.transform)?;
            if !p.initial.is_finite() {
                return Err(Error::InvalidModel(format!("hyperparameter {} has a non-finite initial value", p.name)));
            }
        }
        if self.dim() > HYPER_SOFT_LIMIT {
            log::warn!(
                "{} free hyperparameters; exploration cost grows quickly beyond {HYPER_SOFT_LIMIT}",
                self.dim()
            );
        }
        Ok(())
    }
}

/// Hyperparameter values resolved for one `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperValues {
    internal: Vec<f64>,
    natural: Vec<f64>,
}

impl HyperValues {
    pub fn internal(&self, id: HyperId) -> f64 {
        self.internal[id.0]
    }

    pub fn natural(&self, id: HyperId) -> f64 {
        self.natural[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_transform_matches_definition() {
        let a = 0.5;
        let t = Transform::Correlation.to_internal(a);
        assert!((t - 3f64.ln()).abs() < 1e-15);
        let expit = 1.0 / (1.0 + (-t).exp());
        assert!((Transform::Correlation.to_natural(t) - (2.0 * expit - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gaussian_prior_at_mean() {
        let p = Prior::Gaussian {
            mean: 0.0,
            precision: 0.15,
        };
        let want = 0.5 * (0.15f64.ln() - (2.0 * PI).ln());
        assert!((p.log_density(0.0) - want).abs() < 1e-15);
    }

    #[test]
    fn loggamma_prior_includes_jacobian() {
        let p = Prior::LogGamma {
            shape: 10.0,
            rate: 1.0,
        };
        // Gamma(10, 1) log-density at 10, evaluated directly
        let v: f64 = 10.0;
        let gamma_ld = 10.0 * 1f64.ln() - ln_gamma(10.0) + 9.0 * v.ln() - v;
        assert!((p.log_density(v.ln()) - (gamma_ld + v.ln())).abs() < 1e-12);
    }

    #[test]
    fn all_fixed_gives_zero_prior_and_empty_theta() {
        let mut h = Hypers::new();
        h.add(HyperParam::log_precision("p", 0.0).fixed(1.0));
        assert_eq!(h.dim(), 0);
        assert_eq!(h.log_prior(&[]), 0.0);
        let v = h.expand(&[]).unwrap();
        assert!((v.natural(HyperId(0)) - 1f64.exp()).abs() < 1e-15);
    }
}
