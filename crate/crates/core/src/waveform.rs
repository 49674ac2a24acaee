//! Photon temporal modes, windowed overlap integrals and frequency-jitter
//! dephasing.
//!
//! Times are in nanoseconds and frequencies in kilohertz, so the phase of a
//! mode at time `t` is `2*pi*f*t*1e-6`.

use crate::quad::{self, QuadConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Exp1, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

/// Radians per (kHz * ns).
pub const PHASE_PER_KHZ_NS: f64 = 2.0 * PI * 1e-6;

/// Half-width of the integration support, in width parameters.
pub const SUPPORT_WIDTHS: f64 = 8.0;

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveformError {
    #[error("invalid temporal mode: {0}")]
    InvalidMode(String),
    #[error("empty overlap: in-window norms {norm_a:e} and {norm_b:e} (need > 1e-12)")]
    EmptyOverlap { norm_a: f64, norm_b: f64 },
    #[error("invalid window [{start}, {end})")]
    InvalidWindow { start: f64, end: f64 },
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("beamsplitter transmittance {0} outside (0, 1)")]
    Transmittance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Gaussian,
    /// Gaussian rise joined (C1) to an exponential tail starting `width/skew`
    /// after the peak; `skew = 0` is a plain Gaussian.
    AsymmetricExpGaussian,
    Square,
}

/// Lineshape of the per-trial frequency jitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterLaw {
    #[default]
    Lorentzian,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalMode {
    pub shape: Shape,
    /// Peak position (ns from trial start).
    pub center: f64,
    /// Gaussian sigma of the intensity, or the full duration for `square` (ns).
    pub width: f64,
    #[serde(default)]
    pub skew: f64,
    /// Central frequency detuning (kHz).
    #[serde(default)]
    pub freq_offset: f64,
    /// FWHM of the per-trial frequency jitter (kHz).
    #[serde(default)]
    pub linewidth: f64,
    #[serde(default)]
    pub jitter: JitterLaw,
}

impl TemporalMode {
    pub fn gaussian(center: f64, sigma: f64) -> Self {
        Self {
            shape: Shape::Gaussian,
            center,
            width: sigma,
            skew: 0.0,
            freq_offset: 0.0,
            linewidth: 0.0,
            jitter: JitterLaw::Lorentzian,
        }
    }

    pub fn square(center: f64, duration: f64) -> Self {
        Self {
            shape: Shape::Square,
            width: duration,
            ..Self::gaussian(center, duration)
        }
    }

    pub fn asymmetric(center: f64, sigma: f64, skew: f64) -> Self {
        Self {
            shape: Shape::AsymmetricExpGaussian,
            skew,
            ..Self::gaussian(center, sigma)
        }
    }

    pub fn with_freq_offset(mut self, khz: f64) -> Self {
        self.freq_offset = khz;
        self
    }

    pub fn with_linewidth(mut self, fwhm_khz: f64, law: JitterLaw) -> Self {
        self.linewidth = fwhm_khz;
        self.jitter = law;
        self
    }

    pub fn delayed(&self, delay_ns: f64) -> Self {
        let mut m = self.clone();
        m.center += delay_ns;
        m
    }

    pub fn validate(&self) -> Result<(), WaveformError> {
        let bad = |msg: String| Err(WaveformError::InvalidMode(msg));
        if !(self.width.is_finite() && self.width > 0.0) {
            return bad(format!("width must be > 0, got {}", self.width));
        }
        if !self.center.is_finite() || !self.freq_offset.is_finite() {
            return bad("center and freq_offset must be finite".into());
        }
        if !(self.linewidth.is_finite() && self.linewidth >= 0.0) {
            return bad(format!("linewidth must be >= 0, got {}", self.linewidth));
        }
        if !(self.skew.is_finite() && self.skew >= 0.0) {
            return bad(format!("skew must be >= 0, got {}", self.skew));
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<ModeProfile, WaveformError> {
        self.validate()?;
        Ok(ModeProfile::new(self))
    }

    /// Normalized complex amplitude including the deterministic phase factor.
    pub fn amplitude(&self, t: f64) -> Complex64 {
        ModeProfile::new(self).amplitude(t)
    }

    /// Draws one trial's frequency excursion (kHz) from the jitter law.
    pub fn draw_jitter<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        draw_jitter(self.linewidth, self.jitter, rng)
    }
}

pub fn draw_jitter<R: Rng + ?Sized>(fwhm: f64, law: JitterLaw, rng: &mut R) -> f64 {
    if fwhm <= 0.0 {
        return 0.0;
    }
    match law {
        JitterLaw::Lorentzian => Cauchy::new(0.0, 0.5 * fwhm).expect("positive scale").sample(rng),
        JitterLaw::Gaussian => {
            let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
            Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
        }
    }
}

/// Precomputed evaluation constants for a validated [`TemporalMode`].
#[derive(Debug, Clone)]
pub struct ModeProfile {
    shape: Shape,
    center: f64,
    width: f64,
    freq_offset: f64,
    /// 1/skew, infinite for symmetric modes.
    tail_start: f64,
    /// Peak intensity normalization.
    norm: f64,
    /// Probability of the Gaussian part (asymmetric shape only).
    gauss_mass: f64,
}

impl ModeProfile {
    fn new(mode: &TemporalMode) -> Self {
        let sigma = mode.width;
        let (norm, tail_start, gauss_mass) = match mode.shape {
            Shape::Gaussian => (1.0 / (sigma * (2.0 * PI).sqrt()), f64::INFINITY, 1.0),
            Shape::AsymmetricExpGaussian if mode.skew == 0.0 => {
                (1.0 / (sigma * (2.0 * PI).sqrt()), f64::INFINITY, 1.0)
            }
            Shape::AsymmetricExpGaussian => {
                let k = 1.0 / mode.skew;
                let gauss = (PI / 2.0).sqrt() * (1.0 + libm::erf(k / SQRT_2));
                let tail = (-0.5 * k * k).exp() / k;
                (1.0 / (sigma * (gauss + tail)), k, gauss / (gauss + tail))
            }
            Shape::Square => (1.0 / sigma, f64::INFINITY, 1.0),
        };
        Self {
            shape: mode.shape,
            center: mode.center,
            width: sigma,
            freq_offset: mode.freq_offset,
            tail_start,
            norm,
            gauss_mass,
        }
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn freq_offset(&self) -> f64 {
        self.freq_offset
    }

    /// Same envelope with `extra_khz` added to the carrier.
    pub fn detuned(&self, extra_khz: f64) -> Self {
        let mut p = self.clone();
        p.freq_offset += extra_khz;
        p
    }

    /// |psi(t)|^2, integrating to one.
    #[inline]
    pub fn intensity(&self, t: f64) -> f64 {
        match self.shape {
            Shape::Gaussian | Shape::AsymmetricExpGaussian => {
                let u = (t - self.center) / self.width;
                if u <= self.tail_start {
                    self.norm * (-0.5 * u * u).exp()
                } else {
                    let k = self.tail_start;
                    self.norm * (0.5 * k * k - k * u).exp()
                }
            }
            Shape::Square => {
                let half = 0.5 * self.width;
                if t >= self.center - half && t < self.center + half {
                    self.norm
                } else {
                    0.0
                }
            }
        }
    }

    /// Real, non-negative envelope sqrt(|psi|^2).
    #[inline]
    pub fn envelope(&self, t: f64) -> f64 {
        self.intensity(t).sqrt()
    }

    pub fn amplitude(&self, t: f64) -> Complex64 {
        Complex64::from_polar(self.envelope(t), PHASE_PER_KHZ_NS * self.freq_offset * t)
    }

    /// Interval outside of which the intensity is below e^-32 of its peak
    /// (exactly zero for square modes).
    pub fn support(&self) -> (f64, f64) {
        match self.shape {
            Shape::Square => (self.center - 0.5 * self.width, self.center + 0.5 * self.width),
            _ => {
                let lo = self.center - SUPPORT_WIDTHS * self.width;
                let hi = if self.tail_start.is_finite() {
                    let k = self.tail_start;
                    let reach = ((32.0 + 0.5 * k * k) / k).max(SUPPORT_WIDTHS);
                    self.center + reach * self.width
                } else {
                    self.center + SUPPORT_WIDTHS * self.width
                };
                (lo, hi)
            }
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match self.shape {
            Shape::Square => {
                let (lo, hi) = self.support();
                vec![lo, hi]
            }
            _ if self.tail_start.is_finite() => vec![self.center, self.center + self.tail_start * self.width],
            _ => vec![self.center],
        }
    }

    /// Samples a detection time from |psi(t)|^2.
    pub fn sample_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.shape {
            Shape::Square => self.center + self.width * (rng.random::<f64>() - 0.5),
            _ if !self.tail_start.is_finite() => {
                let z: f64 = StandardNormal.sample(rng);
                self.center + self.width * z
            }
            _ => {
                let k = self.tail_start;
                let u = if rng.random::<f64>() < self.gauss_mass {
                    loop {
                        let z: f64 = StandardNormal.sample(rng);
                        if z <= k {
                            break z;
                        }
                    }
                } else {
                    let e: f64 = Exp1.sample(rng);
                    k + e / k
                };
                self.center + self.width * u
            }
        }
    }

    /// Intensity mass inside the window.
    pub fn mass_in(&self, window: TimeWindow) -> f64 {
        let (lo, hi) = self.support();
        let (a, b) = (window.start.max(lo), window.end.min(hi));
        if b <= a {
            return 0.0;
        }
        quad::integrate(|t| self.intensity(t), a, b, &self.breakpoints(), tight()).0
    }
}

fn tight() -> QuadConfig {
    QuadConfig {
        abs_tol: 1e-15,
        rel_tol: 1e-11,
        max_intervals: 4000,
    }
}

/// Half-open time interval `[start, end)` in ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn new(start: f64, end: f64) -> Result<Self, WaveformError> {
        if start.is_nan() || end.is_nan() || !(end > start) {
            return Err(WaveformError::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn full() -> Self {
        Self {
            start: f64::NEG_INFINITY,
            end: f64::INFINITY,
        }
    }

    pub fn centered(center: f64, width: f64) -> Self {
        Self {
            start: center - 0.5 * width,
            end: center + 0.5 * width,
        }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        !(self.end > self.start)
    }

    pub fn shifted(&self, by: f64) -> Self {
        Self {
            start: self.start + by,
            end: self.end + by,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowedOverlap {
    pub overlap: f64,
    pub window: TimeWindow,
    pub norm_a: f64,
    pub norm_b: f64,
}

/// Normalized modulus-squared overlap of two modes restricted to `window`.
pub fn windowed_overlap(a: &TemporalMode, b: &TemporalMode, window: TimeWindow) -> Result<WindowedOverlap, WaveformError> {
    let pa = a.profile()?;
    let pb = b.profile()?;
    overlap_profiles(&pa, &pb, 0.0, window)
}

/// Overlap with an extra relative detuning `extra_khz` added to `b`.
pub(crate) fn overlap_profiles(
    pa: &ModeProfile,
    pb: &ModeProfile,
    extra_khz: f64,
    window: TimeWindow,
) -> Result<WindowedOverlap, WaveformError> {
    if window.is_empty() {
        return Err(WaveformError::InvalidWindow {
            start: window.start,
            end: window.end,
        });
    }
    let norm_a = pa.mass_in(window);
    let norm_b = pb.mass_in(window);
    if norm_a < NORM_FLOOR || norm_b < NORM_FLOOR {
        return Err(WaveformError::EmptyOverlap { norm_a, norm_b });
    }
    let (la, ha) = pa.support();
    let (lb, hb) = pb.support();
    let lo = window.start.max(la).max(lb);
    let hi = window.end.min(ha).min(hb);
    if hi <= lo {
        return Ok(WindowedOverlap { overlap: 0.0, window, norm_a, norm_b });
    }
    let omega = PHASE_PER_KHZ_NS * (pb.freq_offset + extra_khz - pa.freq_offset);
    // Beyond ~2e4 oscillations across the support the overlap is numerically zero.
    if (omega * (hi - lo)).abs() > 2.0 * PI * 2e4 {
        return Ok(WindowedOverlap { overlap: 0.0, window, norm_a, norm_b });
    }
    let mut cuts = pa.breakpoints();
    cuts.extend(pb.breakpoints());
    let r = quad::integrate_complex(
        |t| Complex64::from_polar(pa.envelope(t) * pb.envelope(t), omega * t),
        lo,
        hi,
        &cuts,
        tight(),
    );
    let overlap = (r.value.norm_sqr() / (norm_a * norm_b)).clamp(0.0, 1.0);
    Ok(WindowedOverlap { overlap, window, norm_a, norm_b })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

/// Windowed overlap averaged over independent per-trial frequency jitters of
/// the two modes. Deterministic for a given seed.
pub fn dephased_eta(
    a: &TemporalMode,
    b: &TemporalMode,
    window: TimeWindow,
    n_samples: usize,
    seed: u64,
) -> Result<EtaEstimate, WaveformError> {
    if n_samples == 0 {
        return Err(WaveformError::NoSamples);
    }
    let pa = a.profile()?;
    let pb = b.profile()?;
    if a.linewidth == 0.0 && b.linewidth == 0.0 {
        let ov = overlap_profiles(&pa, &pb, 0.0, window)?;
        return Ok(EtaEstimate {
            mean: ov.overlap,
            std_err: 0.0,
            n_samples,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let detunings: Vec<f64> = (0..n_samples)
        .map(|_| {
            let ja = a.draw_jitter(&mut rng);
            let jb = b.draw_jitter(&mut rng);
            jb - ja
        })
        .collect();
    let overlaps = detunings
        .par_iter()
        .map(|&d| overlap_profiles(&pa, &pb, d, window).map(|o| o.overlap))
        .collect::<Result<Vec<f64>, _>>()?;
    let n = overlaps.len() as f64;
    let mean = overlaps.iter().sum::<f64>() / n;
    let var = if overlaps.len() > 1 {
        overlaps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(EtaEstimate {
        mean,
        std_err: (var / n).sqrt(),
        n_samples,
    })
}

/// Jitter-averaged windowed overlap computed by quadrature over the relative
/// detuning instead of sampling. Needs a closed-form law for the difference of
/// the two jitters: both Gaussian, both Lorentzian, or either linewidth zero.
pub fn dephased_eta_exact(a: &TemporalMode, b: &TemporalMode, window: TimeWindow) -> Result<f64, WaveformError> {
    let pa = a.profile()?;
    let pb = b.profile()?;
    let ov = |d: f64| overlap_profiles(&pa, &pb, d, window).map(|o| o.overlap);
    let base = ov(0.0)?;
    let active: Vec<&TemporalMode> = [a, b].into_iter().filter(|m| m.linewidth > 0.0).collect();
    if active.is_empty() {
        return Ok(base);
    }
    let law = active[0].jitter;
    if active.iter().any(|m| m.jitter != law) {
        return Err(WaveformError::InvalidMode(
            "exact dephasing needs one jitter law for both modes".into(),
        ));
    }
    let cfg = QuadConfig {
        abs_tol: 1e-12,
        rel_tol: 1e-9,
        max_intervals: 400,
    };
    let f = |d: f64| ov(d).unwrap_or(0.0);
    let eta = match law {
        JitterLaw::Gaussian => {
            let fwhm_to_sigma = 1.0 / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
            let s = active.iter().map(|m| (m.linewidth * fwhm_to_sigma).powi(2)).sum::<f64>().sqrt();
            let norm = 1.0 / (2.0 * PI).sqrt();
            quad::integrate(|z| norm * (-0.5 * z * z).exp() * f(s * z), -9.0, 9.0, &[0.0], cfg).0
        }
        JitterLaw::Lorentzian => {
            let gamma = active.iter().map(|m| 0.5 * m.linewidth).sum::<f64>();
            let edge = 0.5 * PI - 1e-9;
            quad::integrate(|th: f64| f(gamma * th.tan()) / PI, -edge, edge, &[0.0], cfg).0
        }
    };
    Ok(eta.clamp(0.0, 1.0))
}

/// Relative detuning (kHz) that reduces the overlap of two identical
/// Gaussians of intensity sigma `sigma_ns` to `eta`.
pub fn gaussian_detuning_for_overlap(sigma_ns: f64, eta: f64) -> f64 {
    // |<a|b>|^2 = exp(-(2 pi df sigma)^2) with df in GHz*1e-6 units
    (-eta.ln()).sqrt() / (PHASE_PER_KHZ_NS * sigma_ns)
}

/// Two-photon detection density for one photon in each input port of a
/// beamsplitter with transmittance `T`.
///
/// Port a reaches detector 1 with amplitude sqrt(T), port b with sqrt(R);
/// detector 2 gets sqrt(R) from a and -sqrt(T) from b.
#[derive(Debug, Clone)]
pub struct CoincidenceDensity {
    a: ModeProfile,
    b: ModeProfile,
    transmittance: f64,
}

impl CoincidenceDensity {
    /// `offsets` are this trial's frequency excursions (kHz) of a and b.
    pub fn new(a: &TemporalMode, b: &TemporalMode, transmittance: f64, offsets: (f64, f64)) -> Result<Self, WaveformError> {
        if !(transmittance > 0.0 && transmittance < 1.0) {
            return Err(WaveformError::Transmittance(transmittance));
        }
        let mut pa = a.profile()?;
        let mut pb = b.profile()?;
        pa.freq_offset += offsets.0;
        pb.freq_offset += offsets.1;
        Ok(Self { a: pa, b: pb, transmittance })
    }

    /// Density of (detector 1 at t1, detector 2 at t2):
    /// |T psi_a(t1) psi_b(t2) - R psi_b(t1) psi_a(t2)|^2.
    pub fn coincidence(&self, t1: f64, t2: f64) -> f64 {
        let t = self.transmittance;
        let r = 1.0 - t;
        let amp = self.a.amplitude(t1) * self.b.amplitude(t2) * t - self.b.amplitude(t1) * self.a.amplitude(t2) * r;
        amp.norm_sqr()
    }

    /// Density of both photons at one given detector, symmetric in (t1, t2);
    /// integrates to T R (1 + |<a|b>|^2) over the full plane.
    pub fn bunched(&self, t1: f64, t2: f64) -> f64 {
        let tr = self.transmittance * (1.0 - self.transmittance);
        let amp = self.a.amplitude(t1) * self.b.amplitude(t2) + self.b.amplitude(t1) * self.a.amplitude(t2);
        0.5 * tr * amp.norm_sqr()
    }

    /// Full-plane coincidence probability T^2 + R^2 - 2 T R |<a|b>|^2.
    pub fn total_coincidence(&self) -> f64 {
        let t = self.transmittance;
        let r = 1.0 - t;
        let ov = overlap_profiles(&self.a, &self.b, 0.0, TimeWindow::full())
            .map(|o| o.overlap)
            .unwrap_or(0.0);
        t * t + r * r - 2.0 * t * r * ov
    }

    /// 2-D quadrature of `coincidence` over `w1 x w2`.
    pub fn integrate_coincidence(&self, w1: TimeWindow, w2: TimeWindow, tol: f64) -> f64 {
        let (la, ha) = self.a.support();
        let (lb, hb) = self.b.support();
        let lo = la.min(lb);
        let hi = ha.max(hb);
        let (a1, b1) = (w1.start.max(lo), w1.end.min(hi));
        let (a2, b2) = (w2.start.max(lo), w2.end.min(hi));
        let mut cuts = self.a.breakpoints();
        cuts.extend(self.b.breakpoints());
        let cfg = QuadConfig {
            abs_tol: tol * 1e-2,
            rel_tol: tol,
            max_intervals: 2000,
        };
        quad::integrate(
            |t1| quad::integrate(|t2| self.coincidence(t1, t2), a2, b2, &cuts, cfg).0,
            a1,
            b1,
            &cuts,
            cfg,
        )
        .0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_norm(m: &TemporalMode) -> f64 {
        let p = m.profile().unwrap();
        let (lo, hi) = p.support();
        quad::integrate(|t| p.intensity(t), lo - 50.0, hi + 50.0, &p.breakpoints(), tight()).0
    }

    #[test]
    fn modes_are_normalized() {
        for m in [
            TemporalMode::gaussian(500.0, 70.0),
            TemporalMode::asymmetric(500.0, 55.0, 1.19),
            TemporalMode::asymmetric(500.0, 40.0, 0.2),
            TemporalMode::asymmetric(500.0, 40.0, 3.0),
            TemporalMode::square(500.0, 300.0),
        ] {
            assert!((full_norm(&m) - 1.0).abs() < 1e-9, "{m:?}");
        }
    }

    #[test]
    fn gaussian_peak_amplitude() {
        let sigma = 70.0;
        let m = TemporalMode::gaussian(300.0, sigma);
        let peak = m.amplitude(300.0).norm();
        assert!((peak - (2.0 * PI * sigma * sigma).powf(-0.25)).abs() < 1e-15);
        assert!(m.amplitude(1e6).norm() < 1e-300);
        assert!(m.amplitude(-1e6).norm() < 1e-300);
    }

    #[test]
    fn zero_skew_is_gaussian() {
        let g = TemporalMode::gaussian(300.0, 50.0).with_freq_offset(120.0);
        let a = TemporalMode::asymmetric(300.0, 50.0, 0.0).with_freq_offset(120.0);
        for i in 0..200 {
            let t = i as f64 * 3.0;
            assert!((g.amplitude(t) - a.amplitude(t)).norm() < 1e-12);
        }
    }

    #[test]
    fn amplitude_carries_phase() {
        let m = TemporalMode::gaussian(0.0, 2000.0).with_freq_offset(250.0);
        let t = 1000.0; // 250 kHz * 1 us = quarter turn
        let arg = m.amplitude(t).arg();
        assert!((arg - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_modes_rejected() {
        assert!(TemporalMode::gaussian(0.0, 0.0).validate().is_err());
        assert!(TemporalMode::gaussian(0.0, 1.0).with_linewidth(-1.0, JitterLaw::Gaussian).validate().is_err());
        assert!(TemporalMode::asymmetric(0.0, 1.0, -0.5).validate().is_err());
    }

    #[test]
    fn identical_modes_overlap_one() {
        let m = TemporalMode::asymmetric(400.0, 55.0, 1.2).with_freq_offset(300.0);
        for w in [TimeWindow::full(), TimeWindow::centered(400.0, 100.0), TimeWindow::new(420.0, 800.0).unwrap()] {
            let o = windowed_overlap(&m, &m, w).unwrap();
            assert!((o.overlap - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_detuning_closed_form() {
        // |<a|b>|^2 = exp(-(2 pi df sigma)^2) for equal Gaussians
        let sigma = 80.0;
        let df = 500.0;
        let a = TemporalMode::gaussian(600.0, sigma);
        let b = a.clone().with_freq_offset(df);
        let o = windowed_overlap(&a, &b, TimeWindow::full()).unwrap();
        let x = PHASE_PER_KHZ_NS * df * sigma;
        assert!((o.overlap - (-x * x).exp()).abs() < 1e-9);
        let d = gaussian_detuning_for_overlap(sigma, 0.98);
        let o2 = windowed_overlap(&a, &a.clone().with_freq_offset(d), TimeWindow::full()).unwrap();
        assert!((o2.overlap - 0.98).abs() < 1e-9);
    }

    #[test]
    fn gaussian_width_mismatch_closed_form() {
        let (s1, s2) = (60.0, 75.0);
        let o = windowed_overlap(&TemporalMode::gaussian(0.0, s1), &TemporalMode::gaussian(0.0, s2), TimeWindow::full()).unwrap();
        assert!((o.overlap - 2.0 * s1 * s2 / (s1 * s1 + s2 * s2)).abs() < 1e-9);
    }

    #[test]
    fn overlap_is_symmetric() {
        let a = TemporalMode::asymmetric(500.0, 55.0, 1.1).with_freq_offset(40.0);
        let b = TemporalMode::gaussian(540.0, 70.0).with_freq_offset(410.0);
        for w in [TimeWindow::full(), TimeWindow::centered(520.0, 150.0)] {
            let ab = windowed_overlap(&a, &b, w).unwrap().overlap;
            let ba = windowed_overlap(&b, &a, w).unwrap().overlap;
            assert!((ab - ba).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn empty_window_errors() {
        let m = TemporalMode::square(100.0, 50.0);
        let far = TimeWindow::new(1000.0, 1100.0).unwrap();
        assert!(matches!(windowed_overlap(&m, &m, far), Err(WaveformError::EmptyOverlap { .. })));
        assert!(TimeWindow::new(5.0, 5.0).is_err());
    }

    #[test]
    fn overlap_non_increasing_with_window_for_pure_detuning() {
        let a = TemporalMode::gaussian(500.0, 70.0);
        let b = a.clone().with_freq_offset(900.0);
        let mut last = 1.0 + 1e-12;
        for w in [10.0, 20.0, 50.0, 100.0, 200.0, 300.0, 500.0, 800.0, 1200.0] {
            let o = windowed_overlap(&a, &b, TimeWindow::centered(500.0, w)).unwrap().overlap;
            assert!(o <= last + 1e-12, "window {w}: {o} > {last}");
            last = o;
        }
    }

    #[test]
    fn dephased_without_linewidth_is_exact() {
        let a = TemporalMode::gaussian(500.0, 70.0);
        let b = TemporalMode::gaussian(510.0, 80.0).with_freq_offset(200.0);
        let w = TimeWindow::centered(500.0, 300.0);
        let d = dephased_eta(&a, &b, w, 10, 3).unwrap();
        let o = windowed_overlap(&a, &b, w).unwrap();
        assert!((d.mean - o.overlap).abs() < 1e-12);
        assert_eq!(d.std_err, 0.0);
        assert!(matches!(dephased_eta(&a, &b, w, 0, 3), Err(WaveformError::NoSamples)));
    }

    #[test]
    fn exact_dephasing_matches_sampling() {
        let w = TimeWindow::centered(1000.0, 500.0);
        for law in [JitterLaw::Gaussian, JitterLaw::Lorentzian] {
            let a = TemporalMode::gaussian(1000.0, 70.0).with_linewidth(1400.0, law);
            let b = TemporalMode::gaussian(1000.0, 80.0).with_linewidth(1400.0, law).with_freq_offset(100.0);
            let exact = dephased_eta_exact(&a, &b, w).unwrap();
            let mc = dephased_eta(&a, &b, w, 20_000, 5).unwrap();
            assert!((exact - mc.mean).abs() < 4.0 * mc.std_err, "{law:?}: {exact} vs {mc:?}");
        }
    }

    #[test]
    fn exact_dephasing_gaussian_closed_form() {
        // identical Gaussians, Gaussian relative detuning of std s:
        // E[exp(-(2 pi d sigma)^2)] = 1 / sqrt(1 + 2 (2 pi s sigma)^2)
        let sigma = 60.0;
        let fwhm = 900.0;
        let a = TemporalMode::gaussian(1000.0, sigma).with_linewidth(fwhm, JitterLaw::Gaussian);
        let eta = dephased_eta_exact(&a, &a, TimeWindow::full()).unwrap();
        let s = (2.0f64).sqrt() * fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        let k = PHASE_PER_KHZ_NS * s * sigma;
        assert!((eta - 1.0 / (1.0 + 2.0 * k * k).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn exact_dephasing_rejects_mixed_laws() {
        let a = TemporalMode::gaussian(0.0, 10.0).with_linewidth(10.0, JitterLaw::Gaussian);
        let b = TemporalMode::gaussian(0.0, 10.0).with_linewidth(10.0, JitterLaw::Lorentzian);
        assert!(dephased_eta_exact(&a, &b, TimeWindow::full()).is_err());
    }

    #[test]
    fn dephased_is_seeded() {
        let a = TemporalMode::gaussian(500.0, 70.0).with_linewidth(600.0, JitterLaw::Lorentzian);
        let b = a.clone();
        let w = TimeWindow::centered(500.0, 500.0);
        let x = dephased_eta(&a, &b, w, 500, 11).unwrap();
        let y = dephased_eta(&a, &b, w, 500, 11).unwrap();
        assert_eq!(x, y);
        assert!(x.mean < 1.0 && x.std_err > 0.0);
    }

    #[test]
    fn shrinking_window_restores_eta() {
        let a = TemporalMode::gaussian(500.0, 70.0).with_linewidth(1000.0, JitterLaw::Gaussian);
        let b = a.clone();
        let mut prev = 0.0;
        for w in [500.0, 50.0, 20.0, 10.0] {
            let e = dephased_eta(&a, &b, TimeWindow::centered(500.0, w), 2000, 5).unwrap().mean;
            assert!(e > prev, "window {w}: {e} <= {prev}");
            prev = e;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn coincidence_density_identical_modes_vanishes() {
        let m = TemporalMode::gaussian(300.0, 40.0);
        let d = CoincidenceDensity::new(&m, &m, 0.5, (0.0, 0.0)).unwrap();
        for (t1, t2) in [(300.0, 300.0), (250.0, 340.0), (200.0, 410.0)] {
            assert!(d.coincidence(t1, t2) < 1e-30);
        }
        assert!(d.total_coincidence().abs() < 1e-9);
    }

    #[test]
    fn coincidence_density_orthogonal_modes_half() {
        let a = TemporalMode::square(200.0, 100.0);
        let b = TemporalMode::square(400.0, 100.0);
        let d = CoincidenceDensity::new(&a, &b, 0.5, (0.0, 0.0)).unwrap();
        let total = d.integrate_coincidence(TimeWindow::new(0.0, 600.0).unwrap(), TimeWindow::new(0.0, 600.0).unwrap(), 1e-9);
        assert!((total - 0.5).abs() < 1e-6);
        assert!((d.total_coincidence() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coincidence_density_integral_matches_overlap() {
        let a = TemporalMode::gaussian(500.0, 60.0);
        let b = TemporalMode::gaussian(520.0, 70.0);
        for t in [0.5, 0.53] {
            let d = CoincidenceDensity::new(&a, &b, t, (0.0, 350.0)).unwrap();
            let w = TimeWindow::new(0.0, 1100.0).unwrap();
            let quad2 = d.integrate_coincidence(w, w, 1e-9);
            assert!((quad2 - d.total_coincidence()).abs() < 1e-6, "T={t}: {quad2} vs {}", d.total_coincidence());
        }
        let d = CoincidenceDensity::new(&a, &b, 0.5, (0.0, 350.0)).unwrap();
        let ov = overlap_profiles(&d.a, &d.b, 0.0, TimeWindow::full()).unwrap().overlap;
        assert!((d.total_coincidence() - 0.5 * (1.0 - ov)).abs() < 1e-12);
        // symmetric and non-negative at T = 1/2
        for (t1, t2) in [(480.0, 530.0), (400.0, 610.0), (520.0, 505.0)] {
            assert!((d.coincidence(t1, t2) - d.coincidence(t2, t1)).abs() < 1e-18);
            assert!(d.coincidence(t1, t2) >= 0.0);
        }
        assert!(CoincidenceDensity::new(&a, &b, 1.0, (0.0, 0.0)).is_err());
    }

    #[test]
    fn coincidence_and_bunching_sum_to_one() {
        let a = TemporalMode::asymmetric(500.0, 50.0, 1.0);
        let b = TemporalMode::gaussian(540.0, 65.0).with_freq_offset(200.0);
        let d = CoincidenceDensity::new(&a, &b, 0.53, (0.0, 0.0)).unwrap();
        let w = TimeWindow::new(0.0, 2500.0).unwrap();
        let c = d.integrate_coincidence(w, w, 1e-9);
        let (lo, hi) = (0.0, 2500.0);
        let cfg = QuadConfig { abs_tol: 1e-11, rel_tol: 1e-9, max_intervals: 2000 };
        let cuts = [500.0, 540.0, 550.0];
        let bunched = quad::integrate(|t1| quad::integrate(|t2| d.bunched(t1, t2), lo, hi, &cuts, cfg).0, lo, hi, &cuts, cfg).0;
        // both detectors bunch with equal probability
        assert!((c + 2.0 * bunched - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampled_times_follow_intensity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for m in [TemporalMode::asymmetric(500.0, 50.0, 1.2), TemporalMode::square(480.0, 200.0)] {
            let p = m.profile().unwrap();
            let n = 200_000;
            let w = TimeWindow::new(450.0, 560.0).unwrap();
            let hits = (0..n).filter(|_| w.contains(p.sample_time(&mut rng))).count() as f64 / n as f64;
            let expected = p.mass_in(w);
            let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
            assert!((hits - expected).abs() < 5.0 * sigma, "{m:?}: {hits} vs {expected}");
        }
    }
}
