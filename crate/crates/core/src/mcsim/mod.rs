//! Trial-level Monte Carlo generator of time-tag streams.

mod config;
pub mod fock;
mod sampler;

pub use config::{
    poisson_tail, ConfigError, DetectionChain, ExperimentConfig, SourceKind, SourceModel, CONFIG_SCHEMA_VERSION,
    MAX_PHOTONS, PHOTON_TAIL_TOL,
};
pub use sampler::{RawTag, Simulator};

use crate::model::{self, HomOperatingPoint, HomPrediction, ModelError};
use crate::timetag::{StreamHeader, StreamWriter, TimeTagError, TimeTagRecord, TimeTagStream};
use crate::waveform::{dephased_eta, dephased_eta_exact, EtaEstimate, TimeWindow, WaveformError};
use rayon::prelude::*;
use std::io::Write;
use thiserror::Error;

/// Trials per parallel work unit. Output order never depends on scheduling.
pub const CHUNK_TRIALS: u64 = 1 << 16;

#[derive(Debug, Error)]
pub enum McError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("writing trials from {trial}: {source}")]
    Io { trial: u64, source: TimeTagError },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

/// Metadata keys written by the generator.
pub mod meta {
    pub const CONFIG: &str = "config";
    pub const SEED: &str = "seed";
    pub const DELAY_NS: &str = "distinguishable_delay_ns";
    pub const GENERATOR: &str = "generator";
}

impl Simulator {
    pub fn header(&self) -> StreamHeader {
        let cfg = self.config();
        let mut h = StreamHeader::new(self.trial_period_ps(), cfg.n_trials)
            .with_meta(meta::CONFIG, serde_json::to_string(cfg).expect("config serializes"))
            .with_meta(meta::SEED, cfg.seed)
            .with_meta(meta::DELAY_NS, cfg.distinguishable_delay)
            .with_meta(meta::GENERATOR, concat!("homsim ", env!("CARGO_PKG_VERSION")));
        h.fingerprint = cfg.fingerprint();
        h
    }

    /// Records of trials `range`, in stream order.
    pub fn run_range(&self, range: std::ops::Range<u64>) -> Vec<TimeTagRecord> {
        let mut out = Vec::new();
        let mut raw = Vec::new();
        for trial in range {
            let mut rng = self.trial_rng(trial);
            self.sample_raw(&mut rng, &mut raw);
            if !raw.is_empty() {
                self.quantize(&raw, |ch, t| out.push(TimeTagRecord::new(trial as u32, ch, t)));
            }
        }
        out
    }

    fn chunk_ranges(&self) -> Vec<std::ops::Range<u64>> {
        let n = self.config().n_trials;
        (0..n.div_ceil(CHUNK_TRIALS))
            .map(|c| c * CHUNK_TRIALS..((c + 1) * CHUNK_TRIALS).min(n))
            .collect()
    }

    /// Simulates every trial in memory, in parallel on the current rayon pool.
    pub fn run(&self) -> TimeTagStream {
        let chunks: Vec<Vec<TimeTagRecord>> = self
            .chunk_ranges()
            .into_par_iter()
            .map(|r| self.run_range(r))
            .collect();
        TimeTagStream::new(self.header(), chunks.concat())
    }

    /// Streams the simulation to `out` in bounded memory, batch by batch.
    pub fn run_to_writer<W: Write>(&self, out: W) -> Result<u64, McError> {
        let mut w = StreamWriter::new(out, &self.header()).map_err(|source| McError::Io { trial: 0, source })?;
        let batch = rayon::current_num_threads().max(1) * 4;
        for group in self.chunk_ranges().chunks(batch) {
            let parts: Vec<Vec<TimeTagRecord>> = group.par_iter().map(|r| self.run_range(r.clone())).collect();
            for (range, part) in group.iter().zip(parts) {
                for r in &part {
                    w.append(r).map_err(|source| McError::Io { trial: range.start, source })?;
                }
            }
        }
        let n = w.records_written();
        w.finish().map_err(|source| McError::Io {
            trial: self.config().n_trials,
            source,
        })?;
        Ok(n)
    }
}

/// Simulates `cfg` (validated first) and returns the stream.
pub fn run(cfg: &ExperimentConfig) -> Result<TimeTagStream, McError> {
    Ok(Simulator::new(cfg)?.run())
}

/// Detections of one trial of `cfg` as (channel, ps).
pub fn sample_trial(cfg: &ExperimentConfig, trial: u64) -> Result<Vec<(u8, u64)>, McError> {
    Ok(Simulator::new(cfg)?.sample_trial(trial))
}

/// Photon-number moments of one port inside a window, after all losses.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PortMoments {
    /// E[n]
    pub mean: f64,
    /// E[n(n-1)]
    pub factorial2: f64,
}

/// Model parameters and predictions implied by a configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AnalyticCheck {
    pub point: HomOperatingPoint,
    pub prediction: HomPrediction,
    pub eta: EtaEstimate,
    pub port_a: PortMoments,
    pub port_b: PortMoments,
    /// Mean tags per trial on detectors 1 and 2 (dark counts excluded).
    pub mean_tags: [f64; 2],
    /// Mean detector-pair count E[N1 N2] per trial at the configured
    /// transmittance, indistinguishable and distinguishable.
    pub pairs_ind: f64,
    pub pairs_dist: f64,
}

/// Samples for the jitter average in [`analytic_check`] when no closed-form
/// relative-jitter law exists.
pub const ETA_SAMPLES: usize = 4000;

fn moments(src: &SourceModel, eps: f64, window: TimeWindow, delay: f64) -> Result<PortMoments, McError> {
    let f1 = src.mode.delayed(delay).profile()?.mass_in(window);
    Ok(match src.kind {
        SourceKind::WeakCoherent => {
            let m = eps * src.mean_n * f1;
            PortMoments { mean: m, factorial2: m * m }
        }
        SourceKind::SinglePhoton => {
            let f2 = src.pair_mode().delayed(delay).profile()?.mass_in(window);
            let (p, q) = src.emission_probs();
            PortMoments {
                mean: eps * (p * f1 + 2.0 * q * f2),
                factorial2: 2.0 * q * eps * eps * f2 * f2,
            }
        }
    })
}

/// Maps a configuration onto (p1, |alpha|^2, g2, eta) for `window` and
/// evaluates the closed-form model.
///
/// p1 and g2 come from the port-a statistics inside the window; |alpha|^2 is
/// the detected port-b mean of the undelayed mode (the distinguishable
/// protocol counts it in its own window); eta is the jitter-averaged windowed
/// overlap with the mode as delayed, so a large delay gives eta = 0.
/// Only photons from single emissions enter eta; two-photon emissions with a
/// distinct `pair_mode` are a higher-order correction that is ignored.
pub fn analytic_check(cfg: &ExperimentConfig, window: TimeWindow) -> Result<AnalyticCheck, McError> {
    cfg.validate()?;
    if cfg.wcs_source.kind != SourceKind::WeakCoherent {
        return Err(McError::Unsupported(
            "the closed-form model needs coherent light in the wcs_source port".into(),
        ));
    }
    let a = moments(&cfg.sp_source, cfg.sp_efficiency(), window, 0.0)?;
    let b = moments(&cfg.wcs_source, cfg.wcs_efficiency(), window, 0.0)?;
    let (sp_mode, wcs_mode) = (&cfg.sp_source.mode, cfg.wcs_mode_delayed());
    let eta = match dephased_eta_exact(sp_mode, &wcs_mode, window) {
        Ok(mean) => Ok(EtaEstimate {
            mean,
            std_err: 0.0,
            n_samples: 0,
        }),
        // mixed jitter laws: fall back to sampling
        Err(WaveformError::InvalidMode(_)) => dephased_eta(sp_mode, &wcs_mode, window, ETA_SAMPLES, cfg.seed ^ 0x5eed),
        Err(e) => Err(e),
    };
    let eta = match eta {
        Ok(e) => e,
        Err(WaveformError::EmptyOverlap { .. }) => EtaEstimate {
            mean: 0.0,
            std_err: 0.0,
            n_samples: 0,
        },
        Err(e) => return Err(e.into()),
    };
    let p1 = 0.5 * a.mean;
    let g2 = if a.mean > 0.0 { a.factorial2 / (a.mean * a.mean) } else { 0.0 };
    let point = HomOperatingPoint::new(p1, b.mean, g2, eta.mean.clamp(0.0, 1.0))?;
    let prediction = model::predict(&point)?;

    // The distinguishable run places port b in its own window; its moments
    // there equal the undelayed in-window moments used above.
    let t = cfg.chain.bs_transmittance;
    let r = 1.0 - t;
    let self_terms = t * r * (a.factorial2 + b.factorial2);
    let cross = a.mean * b.mean;
    let b_here = if cfg.distinguishable_delay == 0.0 {
        b
    } else {
        moments(&cfg.wcs_source, cfg.wcs_efficiency(), window, cfg.distinguishable_delay)?
    };
    Ok(AnalyticCheck {
        point,
        prediction,
        eta,
        port_a: a,
        port_b: b,
        mean_tags: [t * a.mean + r * b_here.mean, r * a.mean + t * b_here.mean],
        pairs_ind: self_terms + (t * t + r * r - 2.0 * t * r * point.eta) * cross,
        pairs_dist: self_terms + (t * t + r * r) * cross,
    })
}
