use serde::{Deserialize, Serialize};

use crate::cascade::TimeframeSchedule;
use crate::error::{Error, Result};
use crate::kernel::KernelParams;

/// Multiplier `alpha(t)` applied to the estimated infectiousness of the baseline model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Correction {
    #[default]
    Identity,
    Constant { factor: f64 },
    /// Piecewise constant: `factors[i]` applies from `times_s[i]` until the next
    /// start time. Before the first start the factor is 1.
    Steps { times_s: Vec<f64>, factors: Vec<f64> },
}

impl Correction {
    pub fn at(&self, t_s: f64) -> f64 {
        match self {
            Correction::Identity => 1.0,
            Correction::Constant { factor } => *factor,
            Correction::Steps { times_s, factors } => {
                let i = times_s.partition_point(|&s| s <= t_s);
                if i == 0 {
                    1.0
                } else {
                    factors[i - 1]
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Correction::Identity => Ok(()),
            Correction::Constant { factor } if *factor >= 0.0 => Ok(()),
            Correction::Constant { factor } => {
                Err(Error::invalid(format!("correction factor must be >= 0, got {factor}")))
            }
            Correction::Steps { times_s, factors } => {
                if times_s.len() != factors.len() {
                    return Err(Error::invalid("correction steps: length mismatch"));
                }
                if times_s.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("correction steps: times must increase"));
                }
                if factors.iter().any(|f| !(*f >= 0.0)) {
                    return Err(Error::invalid("correction steps: factors must be >= 0"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub kernel: KernelParams,
    /// Fixed mean degree used by the baseline model.
    pub n_star_default: f64,
    /// Predictions with `p * n_star >= 1 - eps` are reported as supercritical.
    pub epsilon_subcritical: f64,
    pub correction: Correction,
    pub schedule: TimeframeSchedule,
    pub min_reshares: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            kernel: KernelParams::default(),
            n_star_default: 140.0,
            epsilon_subcritical: 0.01,
            correction: Correction::Identity,
            schedule: TimeframeSchedule::default(),
            min_reshares: 1,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_star_default > 0.0) {
            return Err(Error::invalid("n_star_default must be positive"));
        }
        if !(self.epsilon_subcritical > 0.0 && self.epsilon_subcritical < 1.0) {
            return Err(Error::invalid("epsilon_subcritical must lie in (0, 1)"));
        }
        if self.min_reshares == 0 {
            return Err(Error::invalid("min_reshares must be positive"));
        }
        self.correction.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_lookup() {
        let c = Correction::Steps {
            times_s: vec![100.0, 200.0],
            factors: vec![0.5, 0.25],
        };
        assert_eq!(c.at(0.0), 1.0);
        assert_eq!(c.at(100.0), 0.5);
        assert_eq!(c.at(1e6), 0.25);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn defaults_validate() {
        let p = ModelParams::default();
        assert!(p.validate().is_ok());
        assert_eq!(p.n_star_default, 140.0);
        let bad = ModelParams {
            epsilon_subcritical: 1.0,
            ..ModelParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
