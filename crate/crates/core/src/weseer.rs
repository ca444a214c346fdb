//! Enhanced predictor: infectiousness rescaled by normalized propagation speed,
//! mean degree clamped per timestamp to the subcritical region, mean-degree
//! recommendation over a candidate grid, and per-record what-if analysis.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{Cascade, EventId, ShareEvent, TimeframeSchedule};
use crate::error::{Error, Result};
use crate::evaluation::{ape_outcome, FAILURE};
use crate::params::ModelParams;
use crate::seismic::{
    estimate_p_from, exposure, predict_final, Exposure, InfectiousnessSeries, ModelTag, Outcome,
    PredictionPoint,
};

pub const DEFAULT_BIG_NODE_THRESHOLD: u64 = 1000;

pub const DEFAULT_GRID: [f64; 8] = [10.0, 20.0, 45.0, 100.0, 140.0, 200.0, 500.0, 1000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpeed {
    pub frame: usize,
    /// Reshares gained in the frame (so far, for the current frame).
    pub increment: u64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub frames: Vec<FrameSpeed>,
    pub current_frame: usize,
    /// Normalized speed of the current frame, in `[0, 1]`.
    pub speed_norm: f64,
}

/// Min-max normalization of frame increments. A flat profile maps to 1.
pub fn normalize_increments(increments: &[u64]) -> Vec<f64> {
    let (Some(&min), Some(&max)) = (increments.iter().min(), increments.iter().max()) else {
        return Vec::new();
    };
    if max == min {
        return vec![1.0; increments.len()];
    }
    let span = (max - min) as f64;
    increments.iter().map(|&x| (x - min) as f64 / span).collect()
}

/// Per-frame reshare increments up to `t` and their causal min-max normalization.
/// Frames are right-closed here: a reshare at exactly a boundary closes the
/// earlier frame, so at `t = b_k` the profile covers frames `0..k`.
pub fn speed_profile(cascade: &Cascade, schedule: &TimeframeSchedule, t_s: f64) -> Result<SpeedProfile> {
    let current = schedule.observed_frame(t_s)?;
    let mut increments = vec![0u64; current + 1];
    for e in cascade.events_until(t_s).filter(|e| !e.is_root()) {
        let k = schedule.observed_frame(e.time_s)?;
        increments[k] += 1;
    }
    let norms = normalize_increments(&increments);
    let speed_norm = norms[current];
    let frames = increments
        .into_iter()
        .zip(norms)
        .enumerate()
        .map(|(frame, (increment, norm))| FrameSpeed {
            frame,
            increment,
            norm,
        })
        .collect();
    Ok(SpeedProfile {
        frames,
        current_frame: current,
        speed_norm,
    })
}

/// `p' = speed_norm * p`.
pub fn adjust_p(p_t: f64, speed_norm: f64) -> Result<f64> {
    if !(p_t >= 0.0) {
        return Err(Error::invalid(format!("adjust_p: p must be >= 0, got {p_t}")));
    }
    if !(0.0..=1.0).contains(&speed_norm) {
        return Err(Error::invalid(format!("adjust_p: speed_norm {speed_norm} outside [0, 1]")));
    }
    Ok(speed_norm * p_t)
}

/// Clamps the mean degree into the safe zone: the result `n` satisfies
/// `p_adj * n <= 1 - eps` exactly in floating point.
pub fn bound_degree(n_init: f64, p_adj: f64, eps: f64) -> Result<f64> {
    if !(n_init > 0.0) {
        return Err(Error::invalid(format!("bound_degree: n_init must be > 0, got {n_init}")));
    }
    if !(p_adj >= 0.0) || !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid("bound_degree: need p_adj >= 0 and eps in [0, 1)"));
    }
    if p_adj == 0.0 {
        return Ok(n_init);
    }
    let limit = 1.0 - eps;
    let mut bound = limit / p_adj;
    while p_adj * bound > limit {
        bound = bound.next_down();
    }
    Ok(n_init.min(bound))
}

/// Everything the enhanced models need at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Snapshot {
    pub r_t: u64,
    pub exposure: Exposure,
    pub p_t: Option<f64>,
    pub speed_norm: f64,
    pub p_adj: Option<f64>,
}

pub(crate) fn snapshot(cascade: &Cascade, t_s: f64, params: &ModelParams) -> Result<Snapshot> {
    let speed = speed_profile(cascade, &params.schedule, t_s)?;
    let r_t = cascade.reshare_count(t_s);
    let ex = exposure(cascade, t_s, &params.kernel);
    let p_t = estimate_p_from(r_t, ex.n_t_eff, params.min_reshares).ok();
    let p_adj = p_t.map(|p| adjust_p(p, speed.speed_norm)).transpose()?;
    Ok(Snapshot {
        r_t,
        exposure: ex,
        p_t,
        speed_norm: speed.speed_norm,
        p_adj,
    })
}

impl Snapshot {
    fn weseer_point(&self, t_s: f64, n_init: f64, eps: f64) -> Result<PredictionPoint> {
        let (p, n_star, outcome) = match self.p_adj {
            None => (0.0, n_init, Outcome::InsufficientData),
            Some(pa) => {
                let n_star = bound_degree(n_init, pa, eps)?;
                // The clamp already keeps p' n* <= 1 - eps, so no extra pole guard.
                let outcome = predict_final(self.r_t, self.exposure.n_t, self.exposure.n_t_eff, pa, n_star, 0.0);
                (pa, n_star, outcome)
            }
        };
        Ok(PredictionPoint {
            time_s: t_s,
            r_t: self.r_t,
            p,
            outcome,
            n_star_used: n_star,
            model_tag: ModelTag::Weseer,
        })
    }

    fn speed_adjusted_point(&self, t_s: f64, params: &ModelParams) -> PredictionPoint {
        let n_star = params.n_star_default;
        let (p, outcome) = match self.p_adj {
            None => (0.0, Outcome::InsufficientData),
            Some(pa) => (
                pa,
                predict_final(
                    self.r_t,
                    self.exposure.n_t,
                    self.exposure.n_t_eff,
                    pa,
                    n_star,
                    params.epsilon_subcritical,
                ),
            ),
        };
        PredictionPoint {
            time_s: t_s,
            r_t: self.r_t,
            p,
            outcome,
            n_star_used: n_star,
            model_tag: ModelTag::SpeedAdjusted,
        }
    }
}

/// Speed-adjusted infectiousness with the per-timestamp bounded mean degree.
pub fn weseer_series(
    cascade: &Cascade,
    times: &[f64],
    params: &ModelParams,
    n_init: f64,
) -> Result<Vec<PredictionPoint>> {
    times
        .iter()
        .map(|&t| snapshot(cascade, t, params)?.weseer_point(t, n_init, params.epsilon_subcritical))
        .collect()
}

/// Speed-adjusted infectiousness with the fixed default mean degree.
pub fn speed_adjusted_series(cascade: &Cascade, times: &[f64], params: &ModelParams) -> Result<Vec<PredictionPoint>> {
    times
        .iter()
        .map(|&t| Ok(snapshot(cascade, t, params)?.speed_adjusted_point(t, params)))
        .collect()
}

pub fn predict_series(
    cascade: &Cascade,
    times: &[f64],
    params: &ModelParams,
    model: ModelTag,
    n_init: f64,
) -> Result<Vec<PredictionPoint>> {
    match model {
        ModelTag::Seismic => Ok(crate::seismic::seismic_series(cascade, times, params)),
        ModelTag::SpeedAdjusted => speed_adjusted_series(cascade, times, params),
        ModelTag::Weseer => weseer_series(cascade, times, params, n_init),
    }
}

/// Exposure, infectiousness, intensity and speed-adjusted infectiousness at each time.
pub fn adjusted_infectiousness_series(
    cascade: &Cascade,
    times: &[f64],
    params: &ModelParams,
) -> Result<InfectiousnessSeries> {
    let mut series = crate::seismic::infectiousness_series(cascade, times, params);
    for row in &mut series.rows {
        row.p_t_adj = snapshot(cascade, row.time_s, params)?.p_adj;
    }
    Ok(series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSeries {
    pub n_init: f64,
    pub points: Vec<PredictionPoint>,
    /// Per-time APE against the reference size; `-1` where no prediction was made.
    pub apes: Vec<f64>,
    /// Mean over predicted timestamps only.
    pub mean_ape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub best: f64,
    pub reference_size: f64,
    pub candidates: Vec<CandidateSeries>,
}

/// Runs the enhanced model for every candidate initial mean degree and picks the
/// one with the lowest mean APE. Ties go to the smaller candidate.
pub fn recommend_degree(
    cascade: &Cascade,
    grid: &[f64],
    reference_size: f64,
    times: &[f64],
    params: &ModelParams,
) -> Result<Recommendation> {
    if grid.is_empty() {
        return Err(Error::invalid("recommendation grid is empty"));
    }
    if !(reference_size > 0.0) {
        return Err(Error::invalid("reference size must be positive"));
    }
    if let Some(bad) = grid.iter().find(|n| !(**n > 0.0)) {
        return Err(Error::invalid(format!("grid value {bad} is not positive")));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let candidates = grid
        .par_iter()
        .map(|&n_init| {
            let points = weseer_series(cascade, times, params, n_init)?;
            let apes: Vec<f64> = points
                .iter()
                .map(|pt| ape_outcome(&pt.outcome, reference_size))
                .collect::<Result<_>>()?;
            let predicted: Vec<f64> = apes.iter().copied().filter(|a| *a != FAILURE).collect();
            let mean_ape = (!predicted.is_empty()).then(|| predicted.iter().sum::<f64>() / predicted.len() as f64);
            Ok(CandidateSeries {
                n_init,
                points,
                apes,
                mean_ape,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = candidates
        .iter()
        .filter_map(|c| c.mean_ape.map(|m| (m, c.n_init)))
        .fold(None::<(f64, f64)>, |acc, cur| match acc {
            Some(a) if a.0 <= cur.0 => Some(a),
            _ => Some(cur),
        })
        .map(|(_, n)| n)
        .ok_or_else(|| Error::InsufficientData("no candidate produced a prediction".into()))?;

    Ok(Recommendation {
        best,
        reference_size,
        candidates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
    #[serde(rename = "0")]
    Unchanged,
}

impl Sign {
    pub fn of(delta: f64) -> Sign {
        if delta > 0.0 {
            Sign::Plus
        } else if delta < 0.0 {
            Sign::Minus
        } else {
            Sign::Unchanged
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
            Sign::Unchanged => "0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Effect {
    Computed {
        /// Speed-adjusted infectiousness after the operation.
        p_adj: f64,
        /// Change relative to the reference state (baseline for deletion,
        /// previous step for adding; an empty reference counts as zero).
        delta_p: f64,
        /// Bounded mean degree after the operation.
        n_star: f64,
        sign: Sign,
    },
    InsufficientData,
}

impl Effect {
    pub fn p_adj(&self) -> Option<f64> {
        match self {
            Effect::Computed { p_adj, .. } => Some(*p_adj),
            Effect::InsufficientData => None,
        }
    }

    pub fn sign(&self) -> Option<Sign> {
        match self {
            Effect::Computed { sign, .. } => Some(*sign),
            Effect::InsufficientData => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfEntry {
    pub event_id: EventId,
    pub user_id: String,
    pub degree: u64,
    pub time_s: f64,
    pub big_node: bool,
    pub delete: Effect,
    pub add: Effect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfReport {
    pub article_id: String,
    pub frame: usize,
    pub t_eval_s: f64,
    pub n_init: f64,
    pub big_node_threshold: u64,
    pub baseline_p_adj: Option<f64>,
    pub baseline_n_star: f64,
    /// State before the first addition: the cascade without any of the frame's records.
    pub add_start_p_adj: Option<f64>,
    pub entries: Vec<WhatIfEntry>,
}

/// Keeps the events selected by `keep`, re-attaching each kept event to its
/// nearest kept ancestor. Keeping everything returns an identical cascade.
fn restrict(cascade: &Cascade, removed: &HashSet<EventId>) -> Cascade {
    let parent_of = |id: EventId| cascade.event(id).and_then(|e| e.parent_id);
    let events: Vec<ShareEvent> = cascade
        .events
        .iter()
        .filter(|e| !removed.contains(&e.event_id))
        .map(|e| {
            let mut e = e.clone();
            let mut parent = e.parent_id;
            let mut channel = e.parent_channel;
            while let Some(p) = parent.filter(|p| removed.contains(p)) {
                channel = cascade.event(p).and_then(|pe| pe.parent_channel);
                parent = parent_of(p);
            }
            e.parent_id = parent;
            e.parent_channel = channel;
            e
        })
        .collect();
    Cascade {
        article_id: cascade.article_id.clone(),
        post_time: cascade.post_time,
        events,
        final_size: cascade.final_size,
    }
}

fn effect(snap: &Snapshot, reference: Option<f64>, n_init: f64, eps: f64) -> Result<Effect> {
    match snap.p_adj {
        None => Ok(Effect::InsufficientData),
        Some(pa) => {
            let delta_p = pa - reference.unwrap_or(0.0);
            Ok(Effect::Computed {
                p_adj: pa,
                delta_p,
                n_star: bound_degree(n_init, pa, eps)?,
                sign: Sign::of(delta_p),
            })
        }
    }
}

/// Deletion and adding analysis for the reshares of one frame, evaluated at `t_eval_s`.
pub fn whatif(
    cascade: &Cascade,
    frame: usize,
    t_eval_s: f64,
    params: &ModelParams,
    n_init: f64,
    big_node_threshold: u64,
) -> Result<WhatIfReport> {
    let schedule = &params.schedule;
    if frame >= schedule.frame_count() {
        return Err(Error::invalid(format!(
            "frame {frame} out of range (schedule has {} frames)",
            schedule.frame_count()
        )));
    }
    let eps = params.epsilon_subcritical;
    let in_frame: Vec<&ShareEvent> = cascade
        .reshares()
        .filter(|e| schedule.frame_of(e.time_s).ok() == Some(frame))
        .collect();
    if in_frame.is_empty() {
        return Err(Error::InsufficientData(format!("frame {frame} has no reshares")));
    }

    let baseline = snapshot(cascade, t_eval_s, params)?;
    let baseline_n_star = match baseline.p_adj {
        Some(pa) => bound_degree(n_init, pa, eps)?,
        None => n_init,
    };

    let deletions = in_frame
        .par_iter()
        .map(|e| {
            let removed = HashSet::from([e.event_id]);
            let snap = snapshot(&restrict(cascade, &removed), t_eval_s, params)?;
            match baseline.p_adj {
                Some(_) => effect(&snap, baseline.p_adj, n_init, eps),
                None => Ok(Effect::InsufficientData),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pending: HashSet<EventId> = in_frame.iter().map(|e| e.event_id).collect();
    let start = snapshot(&restrict(cascade, &pending), t_eval_s, params)?;
    let mut previous = start.p_adj;
    let mut additions = Vec::with_capacity(in_frame.len());
    for e in &in_frame {
        pending.remove(&e.event_id);
        let snap = snapshot(&restrict(cascade, &pending), t_eval_s, params)?;
        additions.push(effect(&snap, previous, n_init, eps)?);
        previous = snap.p_adj;
    }

    let entries = in_frame
        .iter()
        .zip(deletions)
        .zip(additions)
        .map(|((e, delete), add)| WhatIfEntry {
            event_id: e.event_id,
            user_id: e.user_id.clone(),
            degree: e.degree,
            time_s: e.time_s,
            big_node: e.degree >= big_node_threshold,
            delete,
            add,
        })
        .collect();

    Ok(WhatIfReport {
        article_id: cascade.article_id.clone(),
        frame,
        t_eval_s,
        n_init,
        big_node_threshold,
        baseline_p_adj: baseline.p_adj,
        baseline_n_star,
        add_start_p_adj: start.p_adj,
        entries,
    })
}

/// Cascade with the given records removed (children re-attached to the nearest
/// surviving ancestor).
pub fn remove_events(cascade: &Cascade, ids: &[EventId]) -> Cascade {
    restrict(cascade, &ids.iter().copied().collect())
}
