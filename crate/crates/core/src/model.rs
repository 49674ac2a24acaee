//! Closed-form HOM statistics for a single-photon source interfering with a
//! weak coherent state.
//!
//! With `p1` the per-detector single-photon detection probability, `alpha2`
//! the total detected WCS mean photon number, `g2` the source's
//! autocorrelation and `eta` the indistinguishability factor:
//!
//! ```text
//! p_ind = p1^2 g2 + alpha2^2 / 4 + (1 - eta) p1 alpha2
//! p_d   = p1^2 g2 + alpha2^2 / 4 + p1 alpha2
//! V     = 1 - p_ind / p_d = eta p1 alpha2 / p_d
//! ```
//!
//! These are exact for the mean number of detector-pair coincidences per
//! trial at a balanced beamsplitter (normal-ordered second moment), and the
//! leading-order coincidence probability for threshold detectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute slack on closed-interval probability checks.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{field} = {value} is outside its valid range {range}")]
    Domain {
        field: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("visibility is undefined: distinguishable coincidence probability is zero")]
    UndefinedPoint,
    #[error("cannot invert for eta: p1 * alpha2 = 0")]
    DivisionByZero,
}

fn check(field: &'static str, value: f64, lo: f64, hi: f64, range: &'static str) -> Result<(), ModelError> {
    if value.is_finite() && value >= lo - PROB_TOL && value <= hi + PROB_TOL {
        Ok(())
    } else {
        Err(ModelError::Domain { field, value, range })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomOperatingPoint {
    pub p1: f64,
    pub alpha2: f64,
    pub g2zero: f64,
    pub eta: f64,
}

impl HomOperatingPoint {
    pub fn new(p1: f64, alpha2: f64, g2zero: f64, eta: f64) -> Result<Self, ModelError> {
        let pt = Self { p1, alpha2, g2zero, eta };
        pt.validate()?;
        Ok(pt)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check("p1", self.p1, 0.0, 0.5, "[0, 0.5]")?;
        check("alpha2", self.alpha2, 0.0, f64::INFINITY, "[0, inf)")?;
        check("g2zero", self.g2zero, 0.0, f64::INFINITY, "[0, inf)")?;
        check("eta", self.eta, 0.0, 1.0, "[0, 1]")?;
        Ok(())
    }

    fn common_terms(&self) -> f64 {
        self.p1 * self.p1 * self.g2zero + 0.25 * self.alpha2 * self.alpha2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomPrediction {
    pub p_ind: f64,
    pub p_d: f64,
    pub visibility: f64,
}

pub fn p_indistinguishable(pt: &HomOperatingPoint) -> Result<f64, ModelError> {
    pt.validate()?;
    Ok(pt.common_terms() + (1.0 - pt.eta) * pt.p1 * pt.alpha2)
}

/// Coincidence probability with fully distinguishable inputs; `pt.eta` is
/// ignored.
pub fn p_distinguishable(pt: &HomOperatingPoint) -> Result<f64, ModelError> {
    pt.validate()?;
    Ok(pt.common_terms() + pt.p1 * pt.alpha2)
}

pub fn visibility(pt: &HomOperatingPoint) -> Result<f64, ModelError> {
    let p_d = p_distinguishable(pt)?;
    if p_d <= 0.0 {
        return Err(ModelError::UndefinedPoint);
    }
    Ok(pt.eta * pt.p1 * pt.alpha2 / p_d)
}

/// Visibility per unit eta: `V = eta * sensitivity`.
pub fn visibility_sensitivity(p1: f64, alpha2: f64, g2zero: f64) -> Result<f64, ModelError> {
    visibility(&HomOperatingPoint::new(p1, alpha2, g2zero, 1.0)?)
}

pub fn predict(pt: &HomOperatingPoint) -> Result<HomPrediction, ModelError> {
    let p_d = p_distinguishable(pt)?;
    let p_ind = p_indistinguishable(pt)?;
    let visibility = if p_d > 0.0 { 1.0 - p_ind / p_d } else { 0.0 };
    Ok(HomPrediction { p_ind, p_d, visibility })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalPoint {
    pub alpha2: f64,
    pub v_max: f64,
    /// False when `v_max` is only a supremum (g2 = 0: approached as alpha2 -> 0).
    pub attained: bool,
}

/// WCS mean that maximizes the visibility at fixed `p1`, `g2zero`, `eta`.
///
/// Minimizing `p_d / (p1 alpha2)` over `x = alpha2` gives
/// `x = 2 p1 sqrt(g2)` and `V_max = eta / (1 + sqrt(g2))`.
pub fn optimal_operating_point(p1: f64, g2zero: f64, eta: f64) -> Result<OptimalPoint, ModelError> {
    check("p1", p1, 0.0, 0.5, "(0, 0.5]")?;
    if p1 <= 0.0 {
        return Err(ModelError::Domain { field: "p1", value: p1, range: "(0, 0.5]" });
    }
    check("g2zero", g2zero, 0.0, f64::INFINITY, "[0, inf)")?;
    check("eta", eta, 0.0, 1.0, "[0, 1]")?;
    let root = g2zero.max(0.0).sqrt();
    Ok(OptimalPoint {
        alpha2: 2.0 * p1 * root,
        v_max: eta / (1.0 + root),
        attained: g2zero > 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaInversion {
    pub eta: f64,
    /// False when measurement noise pushed the estimate outside [0, 1].
    pub physical: bool,
}

pub fn invert_eta(v_measured: f64, p1: f64, alpha2: f64, g2zero: f64) -> Result<EtaInversion, ModelError> {
    check("p1", p1, 0.0, 0.5, "(0, 0.5]")?;
    check("alpha2", alpha2, 0.0, f64::INFINITY, "(0, inf)")?;
    check("g2zero", g2zero, 0.0, f64::INFINITY, "[0, inf)")?;
    if !v_measured.is_finite() {
        return Err(ModelError::Domain { field: "v_measured", value: v_measured, range: "finite" });
    }
    let cross = p1 * alpha2;
    if cross <= 0.0 {
        return Err(ModelError::DivisionByZero);
    }
    let p_d = p1 * p1 * g2zero + 0.25 * alpha2 * alpha2 + cross;
    let eta = v_measured * p_d / cross;
    Ok(EtaInversion {
        eta,
        physical: (-PROB_TOL..=1.0 + PROB_TOL).contains(&eta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(p1: f64, alpha2: f64, g2: f64, eta: f64) -> HomOperatingPoint {
        HomOperatingPoint::new(p1, alpha2, g2, eta).unwrap()
    }

    #[test]
    fn p_ind_examples() {
        assert!((p_indistinguishable(&pt(0.1, 0.2, 0.0, 1.0)).unwrap() - 0.01).abs() < 1e-15);
        assert!((p_indistinguishable(&pt(0.1, 0.0, 0.23, 0.89)).unwrap() - 0.0023).abs() < 1e-15);
        assert!((p_indistinguishable(&pt(0.05, 0.1, 0.27, 0.98)).unwrap() - 0.003275).abs() < 1e-15);
    }

    #[test]
    fn p_d_examples() {
        let a = pt(0.05, 0.1, 0.27, 0.0);
        assert_eq!(p_distinguishable(&a).unwrap(), p_indistinguishable(&a).unwrap());
        assert!((p_distinguishable(&pt(0.05, 0.1, 0.27, 0.4)).unwrap() - 0.008175).abs() < 1e-15);
        assert!((p_distinguishable(&pt(0.0, 0.2, 7.0, 0.4)).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            HomOperatingPoint::new(0.6, 0.1, 0.0, 1.0),
            Err(ModelError::Domain { field: "p1", .. })
        ));
        assert!(HomOperatingPoint::new(0.1, -0.1, 0.0, 1.0).is_err());
        assert!(HomOperatingPoint::new(0.1, 0.1, -1.0, 1.0).is_err());
        assert!(HomOperatingPoint::new(0.1, 0.1, 0.0, 1.2).is_err());
        // round-off at the boundary is tolerated
        assert!(HomOperatingPoint::new(0.5 + 1e-13, 0.1, 0.0, 1.0 + 1e-13).is_ok());
        let bad = HomOperatingPoint { p1: f64::NAN, alpha2: 0.0, g2zero: 0.0, eta: 0.0 };
        assert!(p_indistinguishable(&bad).is_err());
    }

    #[test]
    fn visibility_examples() {
        for p1 in [0.01, 0.1, 0.3] {
            assert_eq!(visibility(&pt(p1, 0.05, 0.3, 0.0)).unwrap(), 0.0);
            let eta = 0.77;
            let v = visibility(&pt(p1, 2.0 * p1, 0.0, eta)).unwrap();
            assert!((v - 2.0 * eta / 3.0).abs() < 1e-14);
        }
        let p1 = 0.05;
        let v = visibility(&pt(p1, 2.0 * p1 * 0.27f64.sqrt(), 0.27, 0.98)).unwrap();
        assert!((v - 0.98 / (1.0 + 0.27f64.sqrt())).abs() < 1e-14);
        assert!((v - 0.645).abs() < 1e-3);
        assert!((v - 0.66).abs() < 0.07);
    }

    #[test]
    fn visibility_undefined() {
        assert_eq!(visibility(&pt(0.0, 0.0, 0.5, 1.0)), Err(ModelError::UndefinedPoint));
        assert_eq!(visibility(&pt(0.1, 0.0, 0.0, 1.0)), Err(ModelError::UndefinedPoint));
    }

    #[test]
    fn optimal_examples() {
        let o = optimal_operating_point(0.05, 0.27, 0.98).unwrap();
        assert!((o.v_max - 0.98 / 1.519_615_242_270_663).abs() < 1e-12);
        assert!((o.alpha2 - 0.1 * 0.27f64.sqrt()).abs() < 1e-15);
        assert!(o.attained);
        let classical = optimal_operating_point(0.05, 1.0, 1.0).unwrap();
        assert!((classical.v_max - 0.5).abs() < 1e-15);
        let perfect = optimal_operating_point(0.05, 0.0, 1.0).unwrap();
        assert_eq!(perfect.v_max, 1.0);
        assert!(!perfect.attained);
        assert_eq!(perfect.alpha2, 0.0);
        assert!(optimal_operating_point(0.0, 0.2, 1.0).is_err());
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(invert_eta(0.0, 0.05, 0.1, 0.2).unwrap().eta, 0.0);
        assert_eq!(invert_eta(0.5, 0.0, 0.1, 0.2), Err(ModelError::DivisionByZero));
        assert_eq!(invert_eta(0.5, 0.1, 0.0, 0.2), Err(ModelError::DivisionByZero));
        // noise can push the estimate above one; reported, not clamped
        let over = invert_eta(0.7, 0.05, 0.1, 0.0).unwrap();
        assert!(over.eta > 1.0);
        assert!(!over.physical);
    }

    #[test]
    fn published_operating_point_inversion() {
        // 500 ns maximum-visibility point: g2 of the HOM runs (0.27) at the
        // optimal WCS mean; lands inside the +-0.02 band of the fitted 0.89.
        let (p1, g2) = (0.012_f64, 0.27_f64);
        let alpha2 = 2.0 * p1 * g2.sqrt();
        let inv = invert_eta(0.58, p1, alpha2, g2).unwrap();
        assert!((inv.eta - 0.89).abs() < 0.02, "eta = {}", inv.eta);
    }

    proptest! {
        #[test]
        fn round_trip(p1 in 1e-4f64..0.5, alpha2 in 1e-4f64..2.0, g2 in 0.0f64..2.0, eta in 0.0f64..=1.0) {
            let p = pt(p1, alpha2, g2, eta);
            let v = visibility(&p).unwrap();
            let back = invert_eta(v, p1, alpha2, g2).unwrap();
            prop_assert!((back.eta - eta).abs() <= 1e-12 * eta.max(1e-300) || (back.eta - eta).abs() < 1e-15);
        }

        #[test]
        fn ordering_and_bound(p1 in 1e-4f64..0.5, alpha2 in 1e-4f64..2.0, g2 in 1e-6f64..2.0, eta in 0.0f64..=1.0) {
            let p = pt(p1, alpha2, g2, eta);
            let pi = p_indistinguishable(&p).unwrap();
            let pd = p_distinguishable(&p).unwrap();
            prop_assert!(pi <= pd);
            let v = visibility(&p).unwrap();
            prop_assert!(v >= 0.0 && v <= eta + 1e-15);
            let opt = optimal_operating_point(p1, g2, eta).unwrap();
            prop_assert!(v <= opt.v_max * (1.0 + 1e-12) + 1e-15);
            let at_opt = visibility(&pt(p1, opt.alpha2, g2, eta)).unwrap();
            prop_assert!((at_opt - opt.v_max).abs() <= 1e-12);
            let pred = predict(&p).unwrap();
            prop_assert!((pred.visibility - v).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_eta(p1 in 1e-4f64..0.5, alpha2 in 1e-4f64..2.0, g2 in 0.0f64..2.0, e1 in 0.0f64..1.0, de in 1e-6f64..0.5) {
            let e2 = (e1 + de).min(1.0);
            prop_assume!(e2 > e1);
            let v1 = visibility(&pt(p1, alpha2, g2, e1)).unwrap();
            let v2 = visibility(&pt(p1, alpha2, g2, e2)).unwrap();
            prop_assert!(v2 > v1);
        }
    }

    #[test]
    fn limit_to_eta() {
        let eta = 0.83;
        let v = visibility(&pt(0.1, 1e-9, 0.0, eta)).unwrap();
        assert!((v - eta).abs() < 1e-6);
    }
}
