use super::counts::Gate;
use super::stats::{gated_stats, CoincidenceStats};
use super::{AnalysisError, Estimate};
use crate::timetag::{TagWindow, TimeTagStream};
use serde::{Deserialize, Serialize};

/// (p1, |alpha|^2, g2) read off a distinguishable run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPointEstimate {
    pub p1: Estimate,
    pub alpha2: Estimate,
    pub g2zero: Estimate,
    pub sp: CoincidenceStats,
    pub wcs: CoincidenceStats,
}

/// Counts in the SP window give p1 (per-detector average) and g2; counts in
/// the later WCS window give |alpha|^2 summed over both detectors.
pub fn extract_operating_point(
    dist: &TimeTagStream,
    sp_window: TagWindow,
    wcs_window: TagWindow,
) -> Result<OperatingPointEstimate, AnalysisError> {
    if sp_window.overlaps(&wcs_window) {
        return Err(AnalysisError::OverlappingWindows);
    }
    if wcs_window.start_ps < sp_window.end_ps {
        return Err(AnalysisError::MisorderedWindows);
    }
    let sp = gated_stats(dist, &Gate::plain(sp_window))?;
    let wcs = gated_stats(dist, &Gate::plain(wcs_window))?;
    Ok(OperatingPointEstimate {
        p1: sp.p1_average(),
        alpha2: wcs.mean_tags(),
        g2zero: sp.g2()?,
        sp,
        wcs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VisibilityEstimate {
    pub v: Estimate,
    pub pc_ind: Estimate,
    pub pc_dist: Estimate,
}

fn ratio_visibility(a: Estimate, b: Estimate) -> Result<VisibilityEstimate, AnalysisError> {
    if b.value <= 0.0 {
        return Err(AnalysisError::ZeroDistinguishable);
    }
    let r = a.value / b.value;
    let sigma = ((a.sigma / b.value).powi(2) + (r * b.sigma / b.value).powi(2)).sqrt();
    Ok(VisibilityEstimate {
        v: Estimate::new(1.0 - r, sigma),
        pc_ind: a,
        pc_dist: b,
    })
}

/// V = 1 - Pc_ind / Pc_dist with threshold coincidences. The distinguishable
/// stream is folded by `fold_delay_ps` (0 when it needs no folding).
pub fn hom_visibility_measured(
    ind: &TimeTagStream,
    dist: &TimeTagStream,
    window: TagWindow,
    fold_delay_ps: u64,
) -> Result<VisibilityEstimate, AnalysisError> {
    check_same_structure(ind, dist)?;
    let i = gated_stats(ind, &Gate::plain(window))?;
    let d = gated_stats(dist, &Gate::folded(window, fold_delay_ps))?;
    ratio_visibility(Estimate::new(i.pc, i.sigma_pc), Estimate::new(d.pc, d.sigma_pc))
}

/// Same as [`hom_visibility_measured`] but from mean detector-pair counts
/// E[n1 n2], the quantity the closed-form model describes exactly.
pub fn hom_visibility_pairs(
    ind: &TimeTagStream,
    dist: &TimeTagStream,
    window: TagWindow,
    fold_delay_ps: u64,
) -> Result<VisibilityEstimate, AnalysisError> {
    check_same_structure(ind, dist)?;
    let i = gated_stats(ind, &Gate::plain(window))?;
    let d = gated_stats(dist, &Gate::folded(window, fold_delay_ps))?;
    ratio_visibility(i.mean_pairs(), d.mean_pairs())
}

pub(crate) fn check_same_structure(a: &TimeTagStream, b: &TimeTagStream) -> Result<(), AnalysisError> {
    if a.header.trial_period_ps != b.header.trial_period_ps {
        return Err(AnalysisError::TrialStructure(format!(
            "trial periods differ: {} ps vs {} ps",
            a.header.trial_period_ps, b.header.trial_period_ps
        )));
    }
    Ok(())
}

/// One measured visibility with the operating point it was taken at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub p1: f64,
    pub alpha2: f64,
    pub g2zero: f64,
    pub v: f64,
    pub sigma_v: f64,
}

impl FitPoint {
    /// V / eta predicted by the model at this point.
    pub fn coefficient(&self) -> f64 {
        let (p1, a2) = (self.p1, self.alpha2);
        let den = p1 * p1 * self.g2zero + 0.25 * a2 * a2 + p1 * a2;
        if den > 0.0 {
            p1 * a2 / den
        } else {
            0.0
        }
    }

    pub fn x(&self) -> f64 {
        if self.p1 > 0.0 {
            self.alpha2 / (2.0 * self.p1)
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FittedPoint {
    pub alpha2_over_2p1: f64,
    pub v: f64,
    pub sigma_v: f64,
    pub c: f64,
    pub model_v: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaFitResult {
    pub eta_hat: f64,
    pub sigma_eta: f64,
    /// eta_hat > 1; reported raw, not clamped.
    pub super_physical: bool,
    pub chi2: f64,
    pub dof: usize,
    pub points: Vec<FittedPoint>,
    /// Model visibility against |alpha|^2/2p1 at the weighted mean g2.
    pub model_curve: Vec<(f64, f64)>,
}

pub const MODEL_CURVE_SAMPLES: usize = 120;

/// Weighted least squares of V_i = eta c_i; closed form.
pub fn fit_eta(points: &[FitPoint]) -> Result<EtaFitResult, AnalysisError> {
    if points.is_empty() {
        return Err(AnalysisError::NoPoints);
    }
    for (index, p) in points.iter().enumerate() {
        let ok = p.sigma_v > 0.0
            && p.sigma_v.is_finite()
            && p.v.is_finite()
            && p.p1 >= 0.0
            && p.alpha2 >= 0.0
            && p.g2zero >= 0.0
            && p.g2zero.is_finite();
        if !ok {
            return Err(AnalysisError::InvalidPoint {
                index,
                reason: format!("{p:?}"),
            });
        }
    }
    let (mut swcc, mut swcv, mut sw, mut swg) = (0.0, 0.0, 0.0, 0.0);
    for p in points {
        let w = p.sigma_v.powi(-2);
        let c = p.coefficient();
        swcc += w * c * c;
        swcv += w * c * p.v;
        sw += w;
        swg += w * p.g2zero;
    }
    if swcc <= 0.0 {
        return Err(AnalysisError::DegenerateFit);
    }
    let eta = swcv / swcc;
    let fitted: Vec<FittedPoint> = points
        .iter()
        .map(|p| {
            let c = p.coefficient();
            FittedPoint {
                alpha2_over_2p1: p.x(),
                v: p.v,
                sigma_v: p.sigma_v,
                c,
                model_v: eta * c,
                residual: p.v - eta * c,
            }
        })
        .collect();
    let chi2 = fitted.iter().map(|f| (f.residual / f.sigma_v).powi(2)).sum();
    // at fixed p1 the model depends on x and g2 only: c = 1 / (1 + g/(2x) + x/2)
    let g = swg / sw;
    let xmax = fitted
        .iter()
        .map(|f| f.alpha2_over_2p1)
        .filter(|x| x.is_finite())
        .fold(2.0, f64::max)
        * 1.2;
    let xmin = 1e-3;
    let model_curve = (0..MODEL_CURVE_SAMPLES)
        .map(|i| {
            let x = xmin * (xmax / xmin).powf(i as f64 / (MODEL_CURVE_SAMPLES - 1) as f64);
            (x, eta / (1.0 + g / (2.0 * x) + 0.5 * x))
        })
        .collect();
    Ok(EtaFitResult {
        eta_hat: eta,
        sigma_eta: swcc.powf(-0.5),
        super_physical: eta > 1.0,
        chi2,
        dof: points.len() - 1,
        points: fitted,
        model_curve,
    })
}

/// P_SP = p1 / eps_det.
pub fn p_sp(p1: Estimate, eps_det: f64) -> Result<Estimate, AnalysisError> {
    if !(eps_det > 0.0 && eps_det <= 1.0) {
        return Err(AnalysisError::ZeroEfficiency(eps_det));
    }
    Ok(Estimate::new(p1.value / eps_det, p1.sigma / eps_det))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImbalanceCorrection {
    pub eta_corrected: Estimate,
    pub delta: f64,
    /// 1 / (4 T R)
    pub factor: f64,
    /// False when no interference term exists (T at 0 or 1) or the
    /// corrected value exceeds one.
    pub physical: bool,
}

/// Rescales eta for the 2TR interference prefactor of an unbalanced splitter
/// relative to the balanced 1/2 the model assumes.
pub fn bs_imbalance_correction(eta: Estimate, transmittance: f64) -> ImbalanceCorrection {
    let tr4 = 4.0 * transmittance * (1.0 - transmittance);
    let factor = if tr4 > 0.0 { 1.0 / tr4 } else { f64::INFINITY };
    let corrected = Estimate::new(eta.value * factor, eta.sigma * factor);
    ImbalanceCorrection {
        eta_corrected: corrected,
        delta: corrected.value - eta.value,
        factor,
        physical: factor.is_finite() && corrected.value <= 1.0,
    }
}
