use crate::waveform::{TemporalMode, WaveformError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Largest per-trial detected photon number the sampler is sized for.
pub const MAX_PHOTONS: usize = 16;
/// Tolerated Poisson probability beyond [`MAX_PHOTONS`].
pub const PHOTON_TAIL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Field {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    SinglePhoton,
    WeakCoherent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceModel {
    pub kind: SourceKind,
    /// Mean emitted photon number per trial, before losses.
    pub mean_n: f64,
    /// g2(0) of the emitted field; single-photon sources only.
    #[serde(default)]
    pub g2_target: f64,
    pub path_efficiency: f64,
    pub mode: TemporalMode,
    /// Temporal mode of photons from two-photon emissions (defaults to `mode`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_mode: Option<TemporalMode>,
}

impl SourceModel {
    pub fn single_photon(mean_n: f64, g2_target: f64, path_efficiency: f64, mode: TemporalMode) -> Self {
        Self {
            kind: SourceKind::SinglePhoton,
            mean_n,
            g2_target,
            path_efficiency,
            mode,
            pair_mode: None,
        }
    }

    pub fn weak_coherent(mean_n: f64, path_efficiency: f64, mode: TemporalMode) -> Self {
        Self {
            kind: SourceKind::WeakCoherent,
            mean_n,
            g2_target: 1.0,
            path_efficiency,
            mode,
            pair_mode: None,
        }
    }

    /// Emission probabilities `(p, q)` of one and two photons.
    ///
    /// With mean m = p + 2q and g2 = 2q/m^2 the unique solution is
    /// q = g2 m^2 / 2, p = m - g2 m^2.
    pub fn emission_probs(&self) -> (f64, f64) {
        let m = self.mean_n;
        let q = 0.5 * self.g2_target * m * m;
        (m - 2.0 * q, q)
    }

    pub fn pair_mode(&self) -> &TemporalMode {
        self.pair_mode.as_ref().unwrap_or(&self.mode)
    }

    fn validate(&self, name: &str) -> Result<(), ConfigError> {
        let f = |k: &str| format!("{name}.{k}");
        finite_nonneg(&f("mean_n"), self.mean_n)?;
        unit_interval(&f("path_efficiency"), self.path_efficiency)?;
        let mode_err = |k: &str, e: WaveformError| ConfigError::field(f(k), e.to_string());
        self.mode.validate().map_err(|e| mode_err("mode", e))?;
        if let Some(pm) = &self.pair_mode {
            pm.validate().map_err(|e| mode_err("pair_mode", e))?;
        }
        if self.kind == SourceKind::SinglePhoton {
            finite_nonneg(&f("g2_target"), self.g2_target)?;
            let (p, q) = self.emission_probs();
            if p < -1e-12 || p + q > 1.0 + 1e-12 {
                return Err(ConfigError::field(
                    f("g2_target"),
                    format!(
                        "no n<=2 photon distribution has mean {} and g2 {} (needs g2*mean <= 1 and mean - g2*mean^2/2 <= 1)",
                        self.mean_n, self.g2_target
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionChain {
    /// Probability that a port-a photon reaches detector 1.
    pub bs_transmittance: f64,
    pub spd_efficiency: f64,
    /// Mean dark counts per detector per trial period.
    #[serde(default)]
    pub dark_rate: f64,
    /// Gaussian detection-time blur (ns).
    #[serde(default)]
    pub timing_jitter_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_v1")]
    pub schema_version: u32,
    /// Enters beamsplitter port a.
    pub sp_source: SourceModel,
    /// Enters port b, delayed by `distinguishable_delay`.
    pub wcs_source: SourceModel,
    pub chain: DetectionChain,
    pub n_trials: u64,
    /// ns
    pub trial_period: f64,
    /// ns
    #[serde(default)]
    pub distinguishable_delay: f64,
    #[serde(default)]
    pub seed: u64,
}

fn schema_v1() -> u32 {
    CONFIG_SCHEMA_VERSION
}

fn finite_nonneg(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::field(field, format!("must be finite and >= 0, got {v}")))
    }
}

fn unit_interval(field: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::field(field, format!("must lie in [0, 1], got {v}")))
    }
}

/// P(N > n_max) for N ~ Poisson(mean).
pub fn poisson_tail(mean: f64, n_max: usize) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let mut term = (-mean).exp();
    let mut cdf = term;
    for k in 1..=n_max {
        term *= mean / k as f64;
        cdf += term;
    }
    // Sum the tail directly when the CDF is too close to 1 to subtract.
    let mut tail = 0.0;
    let mut t = term;
    for k in n_max + 1..n_max + 200 {
        t *= mean / k as f64;
        tail += t;
        if t < tail * 1e-17 {
            break;
        }
    }
    if cdf < 0.5 {
        1.0 - cdf
    } else {
        tail
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact canonical JSON form (struct field order).
    pub fn fingerprint(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).into()
    }

    pub fn fingerprint_hex(&self) -> String {
        hex::encode(self.fingerprint())
    }

    pub fn trial_period_ps(&self) -> u64 {
        (self.trial_period * 1e3).round() as u64
    }

    /// Port-b mode including the distinguishability delay.
    pub fn wcs_mode_delayed(&self) -> TemporalMode {
        self.wcs_source.mode.delayed(self.distinguishable_delay)
    }

    pub fn sp_efficiency(&self) -> f64 {
        self.sp_source.path_efficiency * self.chain.spd_efficiency
    }

    pub fn wcs_efficiency(&self) -> f64 {
        self.wcs_source.path_efficiency * self.chain.spd_efficiency
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::field(
                "schema_version",
                format!("unsupported version {} (expected {CONFIG_SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.sp_source.validate("sp_source")?;
        self.wcs_source.validate("wcs_source")?;
        let c = &self.chain;
        let t = c.bs_transmittance;
        if !(t > 0.0 && t < 1.0) {
            return Err(ConfigError::field("chain.bs_transmittance", format!("must lie in (0, 1), got {t}")));
        }
        unit_interval("chain.spd_efficiency", c.spd_efficiency)?;
        finite_nonneg("chain.dark_rate", c.dark_rate)?;
        finite_nonneg("chain.timing_jitter_sigma", c.timing_jitter_sigma)?;
        if self.n_trials > 1u64 << 32 {
            return Err(ConfigError::field("n_trials", "must be <= 2^32 (32-bit trial index)"));
        }
        if !(self.trial_period.is_finite() && self.trial_period > 0.0) {
            return Err(ConfigError::field("trial_period", format!("must be > 0, got {}", self.trial_period)));
        }
        if !self.distinguishable_delay.is_finite() {
            return Err(ConfigError::field("distinguishable_delay", "must be finite"));
        }
        let modes = [
            ("sp_source.mode", self.sp_source.mode.clone()),
            ("sp_source.pair_mode", self.sp_source.pair_mode().clone()),
            ("wcs_source.mode", self.wcs_mode_delayed()),
            ("wcs_source.pair_mode", self.wcs_source.pair_mode().delayed(self.distinguishable_delay)),
        ];
        for (name, m) in modes {
            let (lo, hi) = m.profile().map_err(|e| ConfigError::field(name, e.to_string()))?.support();
            if lo < 0.0 || hi > self.trial_period {
                return Err(ConfigError::field(
                    "trial_period",
                    format!(
                        "{name} (plus delay) spans [{lo:.1}, {hi:.1}] ns, outside the trial period [0, {}] ns",
                        self.trial_period
                    ),
                ));
            }
        }
        for (name, src, eps) in [
            ("sp_source.mean_n", &self.sp_source, self.sp_efficiency()),
            ("wcs_source.mean_n", &self.wcs_source, self.wcs_efficiency()),
        ] {
            if src.kind == SourceKind::WeakCoherent {
                let tail = poisson_tail(eps * src.mean_n, MAX_PHOTONS);
                if tail > PHOTON_TAIL_TOL {
                    return Err(ConfigError::field(
                        name,
                        format!("P(more than {MAX_PHOTONS} detected photons) = {tail:.2e} exceeds {PHOTON_TAIL_TOL:e}"),
                    ));
                }
            }
        }
        Ok(())
    }
}
