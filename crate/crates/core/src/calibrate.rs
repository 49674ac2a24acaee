//! Solves the temporal-mode and source parameters of the two operating points
//! (off-resonant "OR" and stored-light "EIT" photons) from the measured
//! overlaps, indistinguishabilities and g2 values, and builds the bundled presets.

use crate::mcsim::{DetectionChain, ExperimentConfig, SourceModel, CONFIG_SCHEMA_VERSION};
use crate::waveform::{dephased_eta_exact, windowed_overlap, JitterLaw, TemporalMode, TimeWindow, WaveformError};
use serde::{Deserialize, Serialize};

/// Measured values the calibration reproduces.
pub mod targets {
    pub const OR_ETA_500: f64 = 0.89;
    pub const OR_ETA_100: f64 = 0.98;
    pub const OR_G2_500: f64 = 0.23;
    pub const OR_P_SP: f64 = 0.18;
    /// Per-detector detection efficiency, source to one detector.
    pub const OR_EPS_DET: f64 = 0.068;
    pub const OR_TRANSMITTANCE: f64 = 0.53;
    /// 178 kHz repetition.
    pub const OR_PERIOD_NS: f64 = 5618.0;

    pub const EIT_OVERLAP: f64 = 0.97;
    pub const EIT_OVERLAP_SHIFTED: f64 = 0.94;
    pub const EIT_SHIFT_KHZ: f64 = 380.0;
    pub const EIT_ETA_FULL: f64 = 0.72;
    pub const EIT_FULL_WINDOW_NS: f64 = 600.0;
    pub const EIT_G2: f64 = 0.17;
    /// Shift of the input-photon-number series.
    pub const EIT_SERIES_SHIFT_KHZ: f64 = 320.0;
}

pub const PULSE_CENTER_NS: f64 = 1000.0;
/// Extra delay of port b in distinguishable runs.
pub const DIST_DELAY_NS: f64 = 1500.0;
pub const EIT_PERIOD_NS: f64 = 10_000.0;
/// Spatial path efficiency giving the per-detector efficiency with a 0.43
/// detector: 2 * 0.068 / 0.43.
pub const PATH_EFFICIENCY: f64 = 2.0 * targets::OR_EPS_DET / SPD_EFFICIENCY;
pub const SPD_EFFICIENCY: f64 = 0.43;
pub const DETECTOR_JITTER_NS: f64 = 0.5;
/// Width ratios of the OR WCS and two-photon modes to the photon mode.
pub const OR_WCS_WIDTH_RATIO: f64 = 1.15;
pub const OR_PAIR_WIDTH_RATIO: f64 = 1.5;

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error("{what}: target {target} not bracketed on [{lo}, {hi}] (values {f_lo}, {f_hi})")]
    NotBracketed {
        what: &'static str,
        target: f64,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
}

/// Root of f(x) = target on [lo, hi] for monotone f.
fn solve(
    what: &'static str,
    target: f64,
    lo: f64,
    hi: f64,
    mut f: impl FnMut(f64) -> Result<f64, CalibrationError>,
) -> Result<f64, CalibrationError> {
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (f(a)? - target, f(b)? - target);
    if fa * fb > 0.0 {
        return Err(CalibrationError::NotBracketed {
            what,
            target,
            lo,
            hi,
            f_lo: fa + target,
            f_hi: fb + target,
        });
    }
    let rising = fb > fa;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if b - a <= 1e-12 * m.abs().max(1.0) {
            break;
        }
        let above = f(m)? > target;
        if above == rising {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(0.5 * (a + b))
}

fn centered(width: f64) -> TimeWindow {
    TimeWindow::centered(PULSE_CENTER_NS, width)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrCalibration {
    pub photon: TemporalMode,
    pub pair_mode: TemporalMode,
    pub wcs: TemporalMode,
    /// g2 of the emitted field (full pulse).
    pub g2_target: f64,
    pub eta_500: f64,
    pub eta_100: f64,
    pub g2_500: f64,
    pub g2_100: f64,
}

fn or_modes(sigma: f64, linewidth: f64) -> (TemporalMode, TemporalMode, TemporalMode) {
    let photon = TemporalMode::gaussian(PULSE_CENTER_NS, sigma).with_linewidth(linewidth, JitterLaw::Gaussian);
    let pair = TemporalMode::gaussian(PULSE_CENTER_NS, OR_PAIR_WIDTH_RATIO * sigma).with_linewidth(linewidth, JitterLaw::Gaussian);
    let wcs = TemporalMode::gaussian(PULSE_CENTER_NS, OR_WCS_WIDTH_RATIO * sigma);
    (photon, pair, wcs)
}

/// Windowed g2 of a source with at most two photons per trial: photons of
/// one-photon emissions follow `mode`, pairs follow `pair`.
pub fn windowed_source_g2(mean_n: f64, g2_target: f64, mode: &TemporalMode, pair: &TemporalMode, window: TimeWindow) -> Result<f64, WaveformError> {
    let f1 = mode.profile()?.mass_in(window);
    let f2 = pair.profile()?.mass_in(window);
    let q = 0.5 * g2_target * mean_n * mean_n;
    let p = mean_n - 2.0 * q;
    Ok(2.0 * q * f2 * f2 / (p * f1 + 2.0 * q * f2).powi(2))
}

fn or_linewidth_for(sigma: f64) -> Result<f64, CalibrationError> {
    solve("OR linewidth", targets::OR_ETA_500, 0.0, 5000.0, |lw| {
        let (p, _, w) = or_modes(sigma, lw);
        Ok(dephased_eta_exact(&p, &w, centered(500.0))?)
    })
}

pub fn calibrate_or() -> Result<OrCalibration, CalibrationError> {
    // inner: linewidth for eta(500 ns); outer: envelope width for eta(100 ns)
    let sigma = solve("OR envelope sigma", targets::OR_ETA_100, 30.0, 200.0, |s| {
        let lw = or_linewidth_for(s)?;
        let (p, _, w) = or_modes(s, lw);
        Ok(dephased_eta_exact(&p, &w, centered(100.0))?)
    })?;
    let lw = or_linewidth_for(sigma)?;
    let (photon, pair_mode, wcs) = or_modes(sigma, lw);
    let m = targets::OR_P_SP;
    let g_of = |g: f64, width: f64| windowed_source_g2(m, g, &photon, &pair_mode, centered(width));
    let g2_target = solve("OR g2", targets::OR_G2_500, 0.0, 1.0, |g| Ok(g_of(g, 500.0)?))?;
    Ok(OrCalibration {
        eta_500: dephased_eta_exact(&photon, &wcs, centered(500.0))?,
        eta_100: dephased_eta_exact(&photon, &wcs, centered(100.0))?,
        g2_500: g_of(g2_target, 500.0)?,
        g2_100: g_of(g2_target, 100.0)?,
        photon,
        pair_mode,
        wcs,
        g2_target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EitCalibration {
    pub photon: TemporalMode,
    /// Moment-matched Gaussian, unshifted.
    pub wcs: TemporalMode,
    pub overlap: f64,
    pub overlap_shifted: f64,
    /// Start of the max-count window of `EIT_FULL_WINDOW_NS`.
    pub full_window_start: f64,
    pub eta_full: f64,
    pub eta_100: f64,
    pub g2_target: f64,
}

/// Mean and standard deviation of a mode's intensity.
pub fn intensity_moments(mode: &TemporalMode) -> Result<(f64, f64), WaveformError> {
    let p = mode.profile()?;
    let (lo, hi) = p.support();
    let cfg = crate::quad::QuadConfig {
        abs_tol: 1e-13,
        rel_tol: 1e-12,
        max_intervals: 2000,
    };
    let bps = p.breakpoints();
    let m1 = crate::quad::integrate(|t| t * p.intensity(t), lo, hi, &bps, cfg).0;
    let m2 = crate::quad::integrate(|t| (t - m1).powi(2) * p.intensity(t), lo, hi, &bps, cfg).0;
    Ok((m1, m2.sqrt()))
}

fn moment_matched(mode: &TemporalMode) -> Result<TemporalMode, WaveformError> {
    let (m, s) = intensity_moments(mode)?;
    Ok(TemporalMode::gaussian(m, s))
}

/// Start of the `width` window holding the most intensity of `mode`.
pub fn max_mass_window(mode: &TemporalMode, width: f64) -> Result<TimeWindow, WaveformError> {
    let p = mode.profile()?;
    let (lo, hi) = p.support();
    let mass = |s: f64| p.mass_in(TimeWindow::centered(s + 0.5 * width, width));
    // unimodal intensity: golden-section search on the start
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo - width, hi);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (mass(c), mass(d));
    while b - a > 1e-6 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = mass(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = mass(d);
        }
    }
    let s = 0.5 * (a + b);
    Ok(TimeWindow::centered(s + 0.5 * width, width))
}

fn eit_photon(sigma: f64, skew: f64) -> TemporalMode {
    TemporalMode::asymmetric(PULSE_CENTER_NS, sigma, skew)
}

pub fn calibrate_eit() -> Result<EitCalibration, CalibrationError> {
    let full = TimeWindow::full();
    // the overlap with the moment-matched Gaussian does not depend on the width
    let skew = solve("EIT skew", targets::EIT_OVERLAP, 0.0, 5.0, |k| {
        let p = eit_photon(50.0, k);
        Ok(windowed_overlap(&p, &moment_matched(&p)?, full)?.overlap)
    })?;
    let sigma = solve("EIT sigma", targets::EIT_OVERLAP_SHIFTED, 5.0, 500.0, |s| {
        let p = eit_photon(s, skew);
        let w = moment_matched(&p)?.with_freq_offset(targets::EIT_SHIFT_KHZ);
        Ok(windowed_overlap(&p, &w, full)?.overlap)
    })?;
    let bare = eit_photon(sigma, skew);
    let wcs = moment_matched(&bare)?;
    let shifted = wcs.clone().with_freq_offset(targets::EIT_SHIFT_KHZ);
    let win_full = max_mass_window(&bare, targets::EIT_FULL_WINDOW_NS)?;
    let win_100 = max_mass_window(&bare, 100.0)?;
    let lw = solve("EIT linewidth", targets::EIT_ETA_FULL, 0.0, 5000.0, |lw| {
        let p = bare.clone().with_linewidth(lw, JitterLaw::Gaussian);
        Ok(dephased_eta_exact(&p, &shifted, win_full)?)
    })?;
    let photon = bare.clone().with_linewidth(lw, JitterLaw::Gaussian);
    Ok(EitCalibration {
        overlap: windowed_overlap(&bare, &wcs, full)?.overlap,
        overlap_shifted: windowed_overlap(&bare, &shifted, full)?.overlap,
        full_window_start: win_full.start,
        eta_full: dephased_eta_exact(&photon, &shifted, win_full)?,
        eta_100: dephased_eta_exact(&photon, &shifted, win_100)?,
        g2_target: targets::EIT_G2,
        photon,
        wcs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub or: OrCalibration,
    pub eit: EitCalibration,
}

pub fn calibrate() -> Result<Calibration, CalibrationError> {
    Ok(Calibration {
        or: calibrate_or()?,
        eit: calibrate_eit()?,
    })
}

/// One row of the EIT input-photon-number series. The P_SP and g2 values
/// are a smooth model of the reported trend, not fitted data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EitSeriesPoint {
    pub n_in: u32,
    pub p_sp: f64,
    pub g2: f64,
}

pub mod bundled {
    pub const CALIBRATION: &str = include_str!("../presets/calibration.json");
    pub const PAPER_OR: &str = include_str!("../presets/paper_or.json");
    pub const PAPER_EIT: &str = include_str!("../presets/paper_eit.json");
    pub const EIT_SERIES: &str = include_str!("../presets/eit_series.json");
}

pub fn bundled_calibration() -> Calibration {
    serde_json::from_str(bundled::CALIBRATION).expect("bundled calibration parses")
}

pub fn paper_or() -> ExperimentConfig {
    ExperimentConfig::from_json(bundled::PAPER_OR).expect("bundled OR preset validates")
}

pub fn paper_eit() -> ExperimentConfig {
    ExperimentConfig::from_json(bundled::PAPER_EIT).expect("bundled EIT preset validates")
}

pub fn eit_series() -> Vec<EitSeriesPoint> {
    serde_json::from_str(bundled::EIT_SERIES).expect("bundled EIT series parses")
}

fn chain(t: f64) -> DetectionChain {
    DetectionChain {
        bs_transmittance: t,
        spd_efficiency: SPD_EFFICIENCY,
        dark_rate: 0.0,
        timing_jitter_sigma: DETECTOR_JITTER_NS,
    }
}

/// |alpha|^2 at the visibility maximum for the source statistics inside a
/// centered window, converted to the WCS mean photon number before losses.
fn optimal_wcs_mean(sp: &SourceModel, wcs: &TemporalMode, window: TimeWindow) -> Result<f64, WaveformError> {
    let eps = PATH_EFFICIENCY * SPD_EFFICIENCY;
    let (p, q) = sp.emission_probs();
    let f1 = sp.mode.profile()?.mass_in(window);
    let f2 = sp.pair_mode().profile()?.mass_in(window);
    let mean = eps * (p * f1 + 2.0 * q * f2);
    let g = 2.0 * q * f2 * f2 / (p * f1 + 2.0 * q * f2).powi(2);
    let alpha2 = 2.0 * (0.5 * mean) * g.sqrt();
    Ok(alpha2 / (eps * wcs.profile()?.mass_in(window)))
}

/// Indistinguishable OR HOM run at the 500 ns visibility optimum.
pub fn build_paper_or(cal: &OrCalibration) -> Result<ExperimentConfig, WaveformError> {
    let mut sp = SourceModel::single_photon(targets::OR_P_SP, cal.g2_target, PATH_EFFICIENCY, cal.photon.clone());
    sp.pair_mode = Some(cal.pair_mode.clone());
    let wcs_mean = optimal_wcs_mean(&sp, &cal.wcs, centered(500.0))?;
    Ok(ExperimentConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        sp_source: sp,
        wcs_source: SourceModel::weak_coherent(wcs_mean, PATH_EFFICIENCY, cal.wcs.clone()),
        chain: chain(targets::OR_TRANSMITTANCE),
        n_trials: 10_000_000,
        trial_period: targets::OR_PERIOD_NS,
        distinguishable_delay: 0.0,
        seed: 1,
    })
}

/// Indistinguishable EIT HOM run, WCS shifted by the measured 380 kHz.
pub fn build_paper_eit(cal: &EitCalibration, p_sp: f64) -> Result<ExperimentConfig, WaveformError> {
    let sp = SourceModel::single_photon(p_sp, cal.g2_target, PATH_EFFICIENCY, cal.photon.clone());
    let wcs = cal.wcs.clone().with_freq_offset(targets::EIT_SHIFT_KHZ);
    let window = TimeWindow::new(cal.full_window_start, cal.full_window_start + targets::EIT_FULL_WINDOW_NS)?;
    let wcs_mean = optimal_wcs_mean(&sp, &wcs, window)?;
    Ok(ExperimentConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        sp_source: sp,
        wcs_source: SourceModel::weak_coherent(wcs_mean, PATH_EFFICIENCY, wcs),
        chain: chain(targets::OR_TRANSMITTANCE),
        n_trials: 10_000_000,
        trial_period: EIT_PERIOD_NS,
        distinguishable_delay: 0.0,
        seed: 2,
    })
}

/// Default EIT series: P_SP falling and g2 rising with the input photon
/// number, g2 = 0.17 at one input photon and 0.63 at twenty.
pub fn default_eit_series() -> Vec<EitSeriesPoint> {
    [(1, 0.10, 0.17), (3, 0.12, 0.22), (5, 0.12, 0.28), (10, 0.11, 0.40), (15, 0.08, 0.52), (20, 0.06, 0.63)]
        .into_iter()
        .map(|(n_in, p_sp, g2)| EitSeriesPoint { n_in, p_sp, g2 })
        .collect()
}

/// All preset files as (file name, pretty JSON).
pub fn render_presets(cal: &Calibration) -> Result<Vec<(&'static str, String)>, CalibrationError> {
    let series = default_eit_series();
    Ok(vec![
        ("calibration.json", pretty(cal)),
        ("paper_or.json", build_paper_or(&cal.or)?.to_json_pretty()),
        ("paper_eit.json", build_paper_eit(&cal.eit, series[0].p_sp)?.to_json_pretty()),
        ("eit_series.json", pretty(&series)),
    ])
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes") + "\n"
}
