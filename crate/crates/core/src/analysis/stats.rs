use super::counts::{for_each_trial, Gate};
use super::{AnalysisError, Estimate};
use crate::timetag::{TagWindow, TimeTagStream};
use serde::Serialize;

/// Windowed singles and coincidences of one stream.
///
/// `c1`, `c2`, `cc` count trials (threshold detection: several tags on one
/// channel count once). The tag totals and detector-pair sums keep the
/// photon-number-resolved information as well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoincidenceStats {
    pub n_trials: u64,
    pub c1: u64,
    pub c2: u64,
    pub cc: u64,
    pub p1: f64,
    pub p2: f64,
    pub pc: f64,
    pub sigma_p1: f64,
    pub sigma_p2: f64,
    pub sigma_pc: f64,
    pub tags1: u64,
    pub tags2: u64,
    /// Sum over trials of n1 * n2.
    pub pair_sum: u64,
    /// Sum over trials of (n1 * n2)^2.
    pub pair_sq_sum: u64,
}

fn binomial(k: u64, n: u64) -> (f64, f64) {
    let p = k as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

impl CoincidenceStats {
    fn from_counts(n_trials: u64, c1: u64, c2: u64, cc: u64, tags: [u64; 2], pair_sum: u64, pair_sq_sum: u64) -> Self {
        let (p1, sigma_p1) = binomial(c1, n_trials);
        let (p2, sigma_p2) = binomial(c2, n_trials);
        let (pc, sigma_pc) = binomial(cc, n_trials);
        Self {
            n_trials,
            c1,
            c2,
            cc,
            p1,
            p2,
            pc,
            sigma_p1,
            sigma_p2,
            sigma_pc,
            tags1: tags[0],
            tags2: tags[1],
            pair_sum,
            pair_sq_sum,
        }
    }

    /// Mean detector-pair count E[n1 n2] per trial with its standard error.
    pub fn mean_pairs(&self) -> Estimate {
        let n = self.n_trials as f64;
        let m = self.pair_sum as f64 / n;
        let var = (self.pair_sq_sum as f64 / n - m * m).max(0.0);
        Estimate::new(m, (var / n).sqrt())
    }

    /// Mean number of tags per trial on both detectors together.
    pub fn mean_tags(&self) -> Estimate {
        let n = self.n_trials as f64;
        let m = (self.tags1 + self.tags2) as f64 / n;
        Estimate::new(m, (m / n).sqrt())
    }

    /// Per-detector single-detection probability averaged over both detectors.
    pub fn p1_average(&self) -> Estimate {
        Estimate::new(
            0.5 * (self.p1 + self.p2),
            0.5 * (self.sigma_p1.powi(2) + self.sigma_p2.powi(2)).sqrt(),
        )
    }

    /// Sums two sets of counts (e.g. several runs at one operating point).
    pub fn merge(&self, o: &Self) -> Self {
        Self::from_counts(
            self.n_trials + o.n_trials,
            self.c1 + o.c1,
            self.c2 + o.c2,
            self.cc + o.cc,
            [self.tags1 + o.tags1, self.tags2 + o.tags2],
            self.pair_sum + o.pair_sum,
            self.pair_sq_sum + o.pair_sq_sum,
        )
    }

    /// g2 = Pc / (P1 P2) with first-order propagation of the binomial errors.
    pub fn g2(&self) -> Result<Estimate, AnalysisError> {
        let norm = self.p1 * self.p2;
        if norm <= 0.0 {
            return Err(AnalysisError::ZeroSingles);
        }
        let g = self.pc / norm;
        let rel = (self.sigma_p1 / self.p1).powi(2) + (self.sigma_p2 / self.p2).powi(2);
        Ok(Estimate::new(g, ((self.sigma_pc / norm).powi(2) + g * g * rel).sqrt()))
    }
}

pub fn gated_stats(stream: &TimeTagStream, gate: &Gate) -> Result<CoincidenceStats, AnalysisError> {
    gate.check(stream)?;
    let (mut c1, mut c2, mut cc) = (0u64, 0u64, 0u64);
    let mut tags = [0u64; 2];
    let (mut pair_sum, mut pair_sq_sum) = (0u64, 0u64);
    for_each_trial(stream, gate, |t| {
        c1 += u64::from(t.n1 > 0);
        c2 += u64::from(t.n2 > 0);
        cc += u64::from(t.n1 > 0 && t.n2 > 0);
        tags[0] += u64::from(t.n1);
        tags[1] += u64::from(t.n2);
        let p = u64::from(t.n1) * u64::from(t.n2);
        pair_sum += p;
        pair_sq_sum += p * p;
    });
    Ok(CoincidenceStats::from_counts(
        stream.n_trials(),
        c1,
        c2,
        cc,
        tags,
        pair_sum,
        pair_sq_sum,
    ))
}

/// Singles and same-trial coincidences inside `window`.
pub fn coincidence_stats(stream: &TimeTagStream, window: TagWindow) -> Result<CoincidenceStats, AnalysisError> {
    gated_stats(stream, &Gate::plain(window))
}

/// Normalized same-trial coincidences Pc / (P1 P2) inside `window`.
pub fn g2_windowed(stream: &TimeTagStream, window: TagWindow) -> Result<Estimate, AnalysisError> {
    coincidence_stats(stream, window)?.g2()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossTrialPoint {
    pub offset: u64,
    pub g2: f64,
    pub sigma: f64,
    /// Symmetrized coincidence count (both channel orders).
    pub coincidences: u64,
}

fn count_offset_pairs(a: &[u64], b: &[u64], k: u64) -> u64 {
    // |{i in a : i + k in b}| by a merge walk over sorted, deduplicated lists
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        let want = a[i] + k;
        match want.cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Coincidences between trial i on one detector and trial i + k on the
/// other, symmetrized over the two channel orders and normalized by P1 P2.
/// The k = 0 entry equals [`g2_windowed`].
pub fn cross_trial_g2(stream: &TimeTagStream, window: TagWindow, max_offset: u64) -> Result<Vec<CrossTrialPoint>, AnalysisError> {
    let n = stream.n_trials();
    if max_offset >= n {
        return Err(AnalysisError::OffsetTooLarge { max_offset, n_trials: n });
    }
    let gate = Gate::plain(window);
    gate.check(stream)?;
    let (mut ch1, mut ch2) = (Vec::new(), Vec::new());
    for_each_trial(stream, &gate, |t| {
        if t.n1 > 0 {
            ch1.push(u64::from(t.trial));
        }
        if t.n2 > 0 {
            ch2.push(u64::from(t.trial));
        }
    });
    let stats = gated_stats(stream, &gate)?;
    let norm = stats.p1 * stats.p2;
    if norm <= 0.0 {
        return Err(AnalysisError::ZeroSingles);
    }
    let rel = (stats.sigma_p1 / stats.p1).powi(2) + (stats.sigma_p2 / stats.p2).powi(2);
    Ok((0..=max_offset)
        .map(|k| {
            let pairs = count_offset_pairs(&ch1, &ch2, k) + count_offset_pairs(&ch2, &ch1, k);
            let opportunities = 2.0 * (n - k) as f64;
            let p = pairs as f64 / opportunities;
            let g = p / norm;
            let sigma_p = (p * (1.0 - p) / opportunities).sqrt();
            // k = 0 counts each coincidence twice; its binomial error uses n trials
            let sigma_p = if k == 0 { stats.sigma_pc } else { sigma_p };
            CrossTrialPoint {
                offset: k,
                g2: g,
                sigma: ((sigma_p / norm).powi(2) + g * g * rel).sqrt(),
                coincidences: pairs,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timetag::{StreamHeader, TimeTagRecord};

    fn stream(n: u64, recs: Vec<TimeTagRecord>) -> TimeTagStream {
        TimeTagStream::new(StreamHeader::new(10_000, n), recs)
    }

    #[test]
    fn all_trials_coincident() {
        let recs = (0..100u32)
            .flat_map(|i| [TimeTagRecord::new(i, 1, 100), TimeTagRecord::new(i, 2, 200)])
            .collect();
        let s = coincidence_stats(&stream(100, recs), TagWindow::new(0, 1000)).unwrap();
        assert_eq!((s.p1, s.p2, s.pc), (1.0, 1.0, 1.0));
        assert_eq!(s.sigma_pc, 0.0);
    }

    #[test]
    fn multi_tags_count_once() {
        let recs = vec![
            TimeTagRecord::new(0, 1, 10),
            TimeTagRecord::new(0, 1, 20),
            TimeTagRecord::new(0, 2, 30),
            TimeTagRecord::new(1, 2, 5000),
        ];
        let s = coincidence_stats(&stream(4, recs), TagWindow::new(0, 1000)).unwrap();
        assert_eq!((s.c1, s.c2, s.cc), (1, 1, 1));
        assert_eq!((s.tags1, s.tags2, s.pair_sum), (2, 1, 2));
    }

    #[test]
    fn folding_merges_delayed_window() {
        let recs = vec![TimeTagRecord::new(0, 1, 100), TimeTagRecord::new(0, 2, 3100)];
        let st = stream(1, recs);
        let w = TagWindow::new(0, 1000);
        assert_eq!(coincidence_stats(&st, w).unwrap().cc, 0);
        assert_eq!(gated_stats(&st, &Gate::folded(w, 3000)).unwrap().cc, 1);
        assert!(matches!(
            gated_stats(&st, &Gate::folded(w, 500)),
            Err(AnalysisError::OverlappingWindows)
        ));
    }

    #[test]
    fn errors() {
        let st = stream(0, vec![]);
        assert!(matches!(coincidence_stats(&st, TagWindow::new(0, 10)), Err(AnalysisError::EmptyStream)));
        let st = stream(5, vec![TimeTagRecord::new(0, 1, 1)]);
        assert!(matches!(g2_windowed(&st, TagWindow::new(0, 10)), Err(AnalysisError::ZeroSingles)));
        assert!(matches!(
            coincidence_stats(&st, TagWindow::new(5_000, 10_000)),
            Err(AnalysisError::WindowOutsidePeriod { .. })
        ));
    }

    #[test]
    fn cross_trial_zero_offset_equals_g2() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 50_000u32;
        let mut recs = Vec::new();
        for i in 0..n {
            let mut tr = Vec::new();
            for ch in 1..=2u8 {
                if rng.random::<f64>() < 0.3 {
                    tr.push(TimeTagRecord::new(i, ch, rng.random_range(0..1000)));
                }
            }
            tr.sort_by_key(|r| r.key());
            recs.extend(tr);
        }
        let st = stream(n as u64, recs);
        let w = TagWindow::new(0, 1000);
        let g = g2_windowed(&st, w).unwrap();
        let series = cross_trial_g2(&st, w, 5).unwrap();
        assert!((series[0].g2 - g.value).abs() < 1e-12);
        assert!((series[0].sigma - g.sigma).abs() < 1e-12);
        for p in &series {
            assert!((p.g2 - 1.0).abs() < 4.0 * p.sigma, "{p:?}");
        }
        assert!(cross_trial_g2(&st, w, n as u64).is_err());
    }

    #[test]
    fn offset_pair_counting() {
        assert_eq!(count_offset_pairs(&[1, 2, 5, 9], &[2, 3, 6, 11], 1), 3);
        assert_eq!(count_offset_pairs(&[], &[1], 0), 0);
    }
}
