//! Baseline self-exciting model: exposure accounting, the closed-form
//! infectiousness MLE, intensity, likelihood and the branching-process final
//! size.

use serde::{Deserialize, Serialize};

use crate::cascade::Cascade;
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::params::ModelParams;

/// Total exposure `N_t` and kernel-weighted effective exposure `N_t^e`.
/// Both include the root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub n_t: f64,
    pub n_t_eff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Predicted { value: f64 },
    Supercritical,
    InsufficientData,
}

impl Outcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            Outcome::Predicted { value } => Some(*value),
            _ => None,
        }
    }

    pub fn is_predicted(&self) -> bool {
        self.value().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    /// Fixed mean degree, optional `alpha(t)` correction.
    Seismic,
    /// Speed-adjusted infectiousness with the fixed mean degree.
    SpeedAdjusted,
    /// Speed-adjusted infectiousness with the per-timestamp bounded mean degree.
    Weseer,
}

impl ModelTag {
    pub const ALL: [ModelTag; 3] = [ModelTag::Seismic, ModelTag::SpeedAdjusted, ModelTag::Weseer];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Seismic => "seismic",
            ModelTag::SpeedAdjusted => "speed_adjusted",
            ModelTag::Weseer => "weseer",
        }
    }
}

impl std::str::FromStr for ModelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seismic" => Ok(ModelTag::Seismic),
            "speed_adjusted" | "speed-adjusted" | "speed-only" | "speed_only" => {
                Ok(ModelTag::SpeedAdjusted)
            }
            "weseer" => Ok(ModelTag::Weseer),
            _ => Err(Error::invalid(format!("unknown model {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub time_s: f64,
    pub r_t: u64,
    /// Infectiousness fed to the final-size formula (0 when unavailable).
    pub p: f64,
    pub outcome: Outcome,
    pub n_star_used: f64,
    pub model_tag: ModelTag,
}

/// Per-timestamp quantities behind a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfectiousnessRow {
    pub time_s: f64,
    pub r_t: u64,
    pub n_t: f64,
    pub n_t_eff: f64,
    pub p_t: Option<f64>,
    pub lambda_t: Option<f64>,
    pub p_t_adj: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfectiousnessSeries {
    pub rows: Vec<InfectiousnessRow>,
}

pub fn exposure(cascade: &Cascade, t_s: f64, k: &KernelParams) -> Exposure {
    let mut n_t = 0.0;
    let mut n_t_eff = 0.0;
    for e in cascade.events_until(t_s) {
        let n = e.degree as f64;
        n_t += n;
        n_t_eff += n * k.cumulative(t_s - e.time_s);
    }
    Exposure { n_t, n_t_eff }
}

/// `p_t = R_t / N_t^e`.
pub fn estimate_p(cascade: &Cascade, t_s: f64, k: &KernelParams, min_reshares: u64) -> Result<f64> {
    let r_t = cascade.reshare_count(t_s);
    estimate_p_from(r_t, exposure(cascade, t_s, k).n_t_eff, min_reshares)
}

pub(crate) fn estimate_p_from(r_t: u64, n_t_eff: f64, min_reshares: u64) -> Result<f64> {
    if r_t < min_reshares.max(1) {
        return Err(Error::InsufficientData(format!(
            "{r_t} reshares observed, need {}",
            min_reshares.max(1)
        )));
    }
    if !(n_t_eff > 0.0) {
        return Err(Error::InsufficientData("zero effective exposure".into()));
    }
    Ok(r_t as f64 / n_t_eff)
}

/// `lambda_t = p * sum_{t_i <= t} n_i phi(t - t_i)`, per second.
pub fn intensity(cascade: &Cascade, t_s: f64, p: f64, k: &KernelParams) -> Result<f64> {
    if !(p >= 0.0) {
        return Err(Error::invalid(format!("intensity: p must be >= 0, got {p}")));
    }
    let drive: f64 = cascade
        .events_until(t_s)
        .map(|e| e.degree as f64 * k.density(t_s - e.time_s))
        .sum();
    Ok(p * drive)
}

/// Log-likelihood of the reshares in `(0, t]` under constant infectiousness `p`.
/// Each share's intensity is the left limit, driven only by strictly earlier events.
pub fn log_likelihood(cascade: &Cascade, t_s: f64, p: f64, k: &KernelParams) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::invalid(format!("log_likelihood: p must be > 0, got {p}")));
    }
    let observed: Vec<_> = cascade.events_until(t_s).collect();
    if !observed.iter().any(|e| !e.is_root()) {
        return Err(Error::InsufficientData("no reshares in (0, t]".into()));
    }
    let mut ll = 0.0;
    for (i, e) in observed.iter().enumerate() {
        if e.is_root() {
            continue;
        }
        let drive: f64 = observed[..i]
            .iter()
            .filter(|prev| prev.time_s < e.time_s)
            .map(|prev| prev.degree as f64 * k.density(e.time_s - prev.time_s))
            .sum();
        ll += (p * drive).ln();
    }
    let n_t_eff = exposure(cascade, t_s, k).n_t_eff;
    Ok(ll - p * n_t_eff)
}

/// Branching-process final size `R_t + p (N_t - N_t^e) / (1 - p n_star)`,
/// or `Supercritical` once `p n_star >= 1 - eps`.
pub fn predict_final(r_t: u64, n_t: f64, n_t_eff: f64, p: f64, n_star: f64, eps: f64) -> Outcome {
    let branching = p * n_star;
    if branching >= 1.0 - eps {
        return Outcome::Supercritical;
    }
    let future = (n_t - n_t_eff).max(0.0);
    Outcome::Predicted {
        value: r_t as f64 + p * future / (1.0 - branching),
    }
}

/// Baseline predictions at each time with the fixed mean degree.
pub fn seismic_series(cascade: &Cascade, times: &[f64], params: &ModelParams) -> Vec<PredictionPoint> {
    times
        .iter()
        .map(|&t| {
            let r_t = cascade.reshare_count(t);
            let ex = exposure(cascade, t, &params.kernel);
            let n_star = params.n_star_default;
            match estimate_p_from(r_t, ex.n_t_eff, params.min_reshares) {
                Ok(p_hat) => {
                    let p = params.correction.at(t) * p_hat;
                    PredictionPoint {
                        time_s: t,
                        r_t,
                        p,
                        outcome: predict_final(
                            r_t,
                            ex.n_t,
                            ex.n_t_eff,
                            p,
                            n_star,
                            params.epsilon_subcritical,
                        ),
                        n_star_used: n_star,
                        model_tag: ModelTag::Seismic,
                    }
                }
                Err(_) => PredictionPoint {
                    time_s: t,
                    r_t,
                    p: 0.0,
                    outcome: Outcome::InsufficientData,
                    n_star_used: n_star,
                    model_tag: ModelTag::Seismic,
                },
            }
        })
        .collect()
}

/// Exposure, raw infectiousness and intensity at each time. `p_t_adj` is left empty.
pub fn infectiousness_series(cascade: &Cascade, times: &[f64], params: &ModelParams) -> InfectiousnessSeries {
    let rows = times
        .iter()
        .map(|&t| {
            let r_t = cascade.reshare_count(t);
            let ex = exposure(cascade, t, &params.kernel);
            let p_t = estimate_p_from(r_t, ex.n_t_eff, params.min_reshares).ok();
            let lambda_t = p_t.and_then(|p| intensity(cascade, t, p, &params.kernel).ok());
            InfectiousnessRow {
                time_s: t,
                r_t,
                n_t: ex.n_t,
                n_t_eff: ex.n_t_eff,
                p_t,
                lambda_t,
                p_t_adj: None,
            }
        })
        .collect();
    InfectiousnessSeries { rows }
}
