//! Cascade popularity prediction with a self-exciting point-process model.
//!
//! The baseline estimates a time-varying infectiousness from observed shares and
//! sharer degrees, then predicts the final reshare count with a branching-process
//! formula. The enhanced model rescales infectiousness by normalized propagation
//! speed and clamps the mean degree per timestamp so every prediction stays in
//! the subcritical regime.

pub mod cascade;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod kernel;
pub mod params;
pub mod seismic;
pub mod simulate;
pub mod weseer;

pub use cascade::{validate_cascade, Cascade, Channel, EventId, Rule, ShareEvent, TimeframeSchedule, Violation};
pub use error::{Error, Result};
pub use evaluation::{ape, ape_outcome, ape_over_time, ape_pair, breakout_coverage, median_accuracy, FAILURE};
pub use kernel::{phi, phi_mass, KernelParams};
pub use params::{Correction, ModelParams};
pub use seismic::{
    estimate_p, exposure, intensity, log_likelihood, predict_final, seismic_series, Exposure, ModelTag, Outcome,
    PredictionPoint,
};
pub use simulate::{mc_final_size, simulate, simulate_corpus, DegreeDist, PProfile, Pattern, SimSpec};
pub use weseer::{
    adjust_p, bound_degree, predict_series, recommend_degree, speed_profile, weseer_series, whatif, WhatIfReport,
};
