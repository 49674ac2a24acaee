use super::config::{ExperimentConfig, SourceKind, SourceModel};
use super::fock::fock_split;
use super::McError;
use crate::waveform::{draw_jitter, overlap_profiles, JitterLaw, ModeProfile, TemporalMode, TimeWindow, PHASE_PER_KHZ_NS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use smallvec::SmallVec;

/// A detection before time quantization: (channel, time in ns).
pub type RawTag = (u8, f64);

#[derive(Debug, Clone)]
struct PreparedMode {
    profile: ModeProfile,
    linewidth: f64,
    law: JitterLaw,
}

impl PreparedMode {
    fn new(m: &TemporalMode) -> Result<Self, McError> {
        Ok(Self {
            profile: m.profile()?,
            linewidth: m.linewidth,
            law: m.jitter,
        })
    }

    fn jittered<R: Rng>(&self, rng: &mut R) -> ModeProfile {
        if self.linewidth > 0.0 {
            self.profile.detuned(draw_jitter(self.linewidth, self.law, rng))
        } else {
            self.profile.clone()
        }
    }
}

/// Inverse-CDF table for a Poisson law.
#[derive(Debug, Clone)]
struct PoissonTable {
    cdf: Vec<f64>,
}

impl PoissonTable {
    fn new(mean: f64) -> Self {
        let mut cdf = Vec::new();
        let mut term = (-mean).exp();
        let mut acc = 0.0;
        for k in 0..64 {
            if k > 0 {
                term *= mean / k as f64;
            }
            acc += term;
            cdf.push(acc);
            if 1.0 - acc < 1e-17 {
                break;
            }
        }
        Self { cdf }
    }

    #[inline]
    fn sample(&self, u: f64) -> usize {
        // Almost always resolved by the first comparison.
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len() - 1)
    }
}

#[derive(Debug, Clone)]
enum Emission {
    /// Probabilities of one and two emitted photons; each survives with `eps`.
    Single { p_one: f64, p_two: f64, eps: f64 },
    /// Detected photon number, already thinned.
    Coherent(PoissonTable),
}

#[derive(Debug, Clone)]
struct PreparedSource {
    emission: Emission,
    mode: PreparedMode,
    pair: PreparedMode,
}

impl PreparedSource {
    fn new(src: &SourceModel, eps: f64, delay: f64) -> Result<Self, McError> {
        let emission = match src.kind {
            SourceKind::SinglePhoton => {
                let (p, q) = src.emission_probs();
                Emission::Single {
                    p_one: p.max(0.0),
                    p_two: q,
                    eps,
                }
            }
            SourceKind::WeakCoherent => Emission::Coherent(PoissonTable::new(eps * src.mean_n)),
        };
        Ok(Self {
            emission,
            mode: PreparedMode::new(&src.mode.delayed(delay))?,
            pair: PreparedMode::new(&src.pair_mode().delayed(delay))?,
        })
    }

    /// Number of detected photons and whether they come from a two-photon emission.
    #[inline]
    fn draw<R: Rng>(&self, rng: &mut R) -> (usize, bool) {
        match &self.emission {
            Emission::Single { p_one, p_two, eps } => {
                let u: f64 = rng.random();
                if u >= p_one + p_two {
                    return (0, false);
                }
                let n = if u < *p_two { 2 } else { 1 };
                let k = (0..n).filter(|_| rng.random::<f64>() < *eps).count();
                (k, n == 2)
            }
            Emission::Coherent(table) => (table.sample(rng.random()), false),
        }
    }

    fn mode_for(&self, from_pair: bool) -> &PreparedMode {
        if from_pair {
            &self.pair
        } else {
            &self.mode
        }
    }
}

/// Per-trial event generator for one validated configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: ExperimentConfig,
    base_rng: ChaCha8Rng,
    a: PreparedSource,
    b: PreparedSource,
    transmittance: f64,
    jitter_sigma: f64,
    darks: Option<PoissonTable>,
    period_ns: f64,
    period_ps: u64,
}

impl Simulator {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, McError> {
        cfg.validate()?;
        let darks = (cfg.chain.dark_rate > 0.0).then(|| PoissonTable::new(cfg.chain.dark_rate));
        Ok(Self {
            cfg: cfg.clone(),
            base_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            a: PreparedSource::new(&cfg.sp_source, cfg.sp_efficiency(), 0.0)?,
            b: PreparedSource::new(&cfg.wcs_source, cfg.wcs_efficiency(), cfg.distinguishable_delay)?,
            transmittance: cfg.chain.bs_transmittance,
            jitter_sigma: cfg.chain.timing_jitter_sigma,
            darks,
            period_ns: cfg.trial_period,
            period_ps: cfg.trial_period_ps(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn trial_period_ps(&self) -> u64 {
        self.period_ps
    }

    /// Independent random stream of trial `trial`: the ChaCha8 keystream
    /// selected by (seed, trial), so any trial can be regenerated alone.
    pub fn trial_rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = self.base_rng.clone();
        rng.set_stream(trial);
        rng
    }

    /// Detections of one trial as (channel, ps from trial start), sorted by time.
    pub fn sample_trial(&self, trial: u64) -> Vec<(u8, u64)> {
        let mut rng = self.trial_rng(trial);
        let mut raw = Vec::new();
        self.sample_raw(&mut rng, &mut raw);
        let mut out = Vec::with_capacity(raw.len());
        self.quantize(&raw, |ch, t| out.push((ch, t)));
        out
    }

    /// Appends the trial's tags, converted to integer ps, via `emit`.
    /// Tags falling outside the trial period are dropped.
    #[inline]
    pub(crate) fn quantize(&self, raw: &[RawTag], mut emit: impl FnMut(u8, u64)) {
        let mut tags: SmallVec<[(u64, u8); 8]> = SmallVec::new();
        for &(ch, t) in raw {
            let ps = (t * 1e3).round();
            if ps >= 0.0 && (ps as u64) < self.period_ps {
                tags.push((ps as u64, ch));
            }
        }
        tags.sort_unstable();
        for (t, ch) in tags {
            emit(ch, t);
        }
    }

    /// Draws one trial's detections (ns, unsorted) into `out`.
    pub fn sample_raw<R: Rng>(&self, rng: &mut R, out: &mut Vec<RawTag>) {
        out.clear();
        let (ka, pair_a) = self.a.draw(rng);
        let (kb, pair_b) = self.b.draw(rng);
        if ka + kb > 0 {
            let ma = self.a.mode_for(pair_a);
            let mb = self.b.mode_for(pair_b);
            if ka == 0 || kb == 0 {
                self.route_independent(&ma.profile, ka, &mb.profile, kb, rng, out);
            } else {
                let pa = ma.jittered(rng);
                let pb = mb.jittered(rng);
                if ka == 1 && kb == 1 {
                    out.extend_from_slice(&self.interfere_pair(&pa, &pb, rng));
                } else {
                    self.route_multi(&pa, ka, &pb, kb, rng, out);
                }
            }
            if self.jitter_sigma > 0.0 {
                for tag in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    tag.1 += self.jitter_sigma * z;
                }
            }
        }
        if let Some(darks) = &self.darks {
            for ch in [1u8, 2] {
                let k = darks.sample(rng.random());
                for _ in 0..k {
                    out.push((ch, rng.random::<f64>() * self.period_ns));
                }
            }
        }
    }

    fn route_independent<R: Rng>(
        &self,
        pa: &ModeProfile,
        ka: usize,
        pb: &ModeProfile,
        kb: usize,
        rng: &mut R,
        out: &mut Vec<RawTag>,
    ) {
        let t = self.transmittance;
        for _ in 0..ka {
            let ch = if rng.random::<f64>() < t { 1 } else { 2 };
            out.push((ch, pa.sample_time(rng)));
        }
        for _ in 0..kb {
            let ch = if rng.random::<f64>() < 1.0 - t { 1 } else { 2 };
            out.push((ch, pb.sample_time(rng)));
        }
    }

    /// One photon per port: exact draw from the two-photon detection density.
    ///
    /// Proposals come from distinguishable photons (independent times and
    /// routes); the quantum density is at most twice the proposal density, so
    /// accepting with probability quantum/(2 proposal) is exact and accepts
    /// half the proposals on average.
    fn interfere_pair<R: Rng>(&self, pa: &ModeProfile, pb: &ModeProfile, rng: &mut R) -> [RawTag; 2] {
        let t = self.transmittance;
        let r = 1.0 - t;
        let domega = PHASE_PER_KHZ_NS * (pa.freq_offset() - pb.freq_offset());
        loop {
            let x = pa.sample_time(rng);
            let y = pb.sample_time(rng);
            let a_to_1 = rng.random::<f64>() < t;
            let b_to_1 = rng.random::<f64>() < r;
            let (ia_x, ib_y) = (pa.intensity(x), pb.intensity(y));
            let (ia_y, ib_x) = (pa.intensity(y), pb.intensity(x));
            // Re[psi_a(x) psi_b(y) psi_b*(x) psi_a*(y)]
            let cross = (ia_x * ib_y * ia_y * ib_x).sqrt() * (domega * (x - y)).cos();
            let (classical, quantum, tags) = match (a_to_1, b_to_1) {
                (true, false) | (false, true) => {
                    let (t1, t2) = if a_to_1 { (x, y) } else { (y, x) };
                    let (ia1, ib2, ib1, ia2) = if a_to_1 { (ia_x, ib_y, ib_x, ia_y) } else { (ia_y, ib_x, ib_y, ia_x) };
                    let c = t * t * ia1 * ib2 + r * r * ib1 * ia2;
                    (c, c - 2.0 * t * r * cross, [(1, t1), (2, t2)])
                }
                (true, true) | (false, false) => {
                    let ch = if a_to_1 { 1 } else { 2 };
                    let c = t * r * (ia_x * ib_y + ia_y * ib_x);
                    (c, c + 2.0 * t * r * cross, [(ch, x), (ch, y)])
                }
            };
            if classical > 0.0 && rng.random::<f64>() * 2.0 * classical < quantum {
                return tags;
            }
        }
    }

    /// Several photons with at least one per port: identical-photon Fock
    /// splitting with probability equal to this trial's full-pulse overlap,
    /// independent routing otherwise. Keeps the mean detector-pair count exact.
    fn route_multi<R: Rng>(
        &self,
        pa: &ModeProfile,
        ka: usize,
        pb: &ModeProfile,
        kb: usize,
        rng: &mut R,
        out: &mut Vec<RawTag>,
    ) {
        let eta = overlap_profiles(pa, pb, 0.0, TimeWindow::full())
            .map(|o| o.overlap)
            .unwrap_or(0.0);
        if rng.random::<f64>() >= eta {
            self.route_independent(pa, ka, pb, kb, rng, out);
            return;
        }
        let probs = fock_split(ka, kb, self.transmittance);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k1 = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                k1 = k;
                break;
            }
        }
        // photons 0..ka from port a, the rest from port b; a uniform subset of
        // size k1 goes to detector 1
        let total = ka + kb;
        let mut idx: Vec<usize> = (0..total).collect();
        for i in 0..k1 {
            let j = rng.random_range(i..total);
            idx.swap(i, j);
        }
        for (pos, &photon) in idx.iter().enumerate() {
            let ch = if pos < k1 { 1 } else { 2 };
            let p = if photon < ka { pa } else { pb };
            out.push((ch, p.sample_time(rng)));
        }
    }
}
