//! Estimators reconstructing the observables from time-tag streams.
//!
//! Coincidences are same-trial and threshold-based: a trial with several
//! tags on one detector counts once. Errors are first-order binomial/Poisson.

mod counts;
mod hom;
pub mod report;
mod stats;
mod sweep;

pub use report::Table;
pub use counts::{for_each_trial, Gate, TrialCounts};
pub use hom::{
    bs_imbalance_correction, extract_operating_point, fit_eta, hom_visibility_measured, hom_visibility_pairs, p_sp,
    EtaFitResult, FitPoint, FittedPoint, ImbalanceCorrection, OperatingPointEstimate, VisibilityEstimate,
    MODEL_CURVE_SAMPLES,
};
pub use stats::{coincidence_stats, cross_trial_g2, g2_windowed, gated_stats, CoincidenceStats, CrossTrialPoint};
pub use sweep::{
    place_windows, time_resolved_visibility, window_sweep, HomPair, SweepRow, SweepSettings, TimeBin, WindowPolicy,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    /// |value - target| in units of sigma (infinite for sigma = 0 and a miss).
    pub fn pull(&self, target: f64) -> f64 {
        let d = (self.value - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.sigma
        }
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.value, self.sigma)
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("stream has no trials")]
    EmptyStream,
    #[error("analysis window is empty")]
    EmptyWindow,
    #[error("window [{start_ps}, {end_ps}) ps exceeds the trial period of {period_ps} ps")]
    WindowOutsidePeriod { start_ps: u64, end_ps: u64, period_ps: u64 },
    #[error("no singles in window: P1 * P2 = 0")]
    ZeroSingles,
    #[error("no coincidences in the distinguishable run")]
    ZeroDistinguishable,
    #[error("SP and WCS windows overlap")]
    OverlappingWindows,
    #[error("WCS window must come after the SP window")]
    MisorderedWindows,
    #[error("max offset {max_offset} must be below the number of trials {n_trials}")]
    OffsetTooLarge { max_offset: u64, n_trials: u64 },
    #[error("no fit points")]
    NoPoints,
    #[error("fit point {index} is unusable: {reason}")]
    InvalidPoint { index: usize, reason: String },
    #[error("degenerate fit: every model coefficient is zero")]
    DegenerateFit,
    #[error("detection efficiency {0} outside (0, 1]")]
    ZeroEfficiency(f64),
    #[error("invalid bin width: {0}")]
    InvalidBin(String),
    #[error("streams do not share trial structure: {0}")]
    TrialStructure(String),
}
