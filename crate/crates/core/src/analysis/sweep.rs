use super::counts::{for_each_trial, Gate};
use super::hom::{check_same_structure, extract_operating_point, fit_eta, hom_visibility_measured, p_sp, FitPoint};
use super::stats::CoincidenceStats;
use super::{AnalysisError, Estimate};
use crate::timetag::{TagWindow, TimeTagStream};
use rayon::prelude::*;
use serde::Serialize;

/// How a window of a given width is placed inside the trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum WindowPolicy {
    /// Centered on `center_ps` (the pulse peak).
    Centered { center_ps: u64 },
    /// Slid inside `search` to the position holding the most SP-window tags
    /// of the distinguishable runs; ties resolve to the earliest start.
    MaxCounts { search: TagWindow },
}

/// One operating point of a HOM series: an indistinguishable run and its
/// distinguishable counterpart (port b delayed by `fold_delay_ps`).
#[derive(Debug, Clone, Copy)]
pub struct HomPair<'a> {
    pub ind: &'a TimeTagStream,
    pub dist: &'a TimeTagStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSettings {
    pub fold_delay_ps: u64,
    pub eps_det: f64,
}

fn sorted_sp_times(pairs: &[HomPair<'_>], search: TagWindow) -> Vec<u64> {
    let mut t: Vec<u64> = pairs
        .iter()
        .flat_map(|p| p.dist.records.iter().map(|r| r.time))
        .filter(|&t| search.contains(t))
        .collect();
    t.sort_unstable();
    t
}

fn max_count_window(times: &[u64], search: TagWindow, width: u64) -> Option<TagWindow> {
    if width > search.len_ps() || width == 0 {
        return None;
    }
    let last = search.end_ps - width;
    let count = |s: u64| times.partition_point(|&t| t < s + width) - times.partition_point(|&t| t < s);
    // an optimal window can always start at a tag (or at the search end)
    let mut best = (count(search.start_ps), search.start_ps);
    for &s in times.iter().filter(|&&s| s <= last).chain(std::iter::once(&last)) {
        let c = count(s);
        if c > best.0 || (c == best.0 && s < best.1) {
            best = (c, s);
        }
    }
    Some(TagWindow::new(best.1, width))
}

/// Window of each width under `policy`. `None` when it does not fit.
pub fn place_windows(pairs: &[HomPair<'_>], widths_ps: &[u64], policy: WindowPolicy) -> Vec<Option<TagWindow>> {
    match policy {
        WindowPolicy::Centered { center_ps } => widths_ps
            .iter()
            .map(|&w| center_ps.checked_sub(w / 2).map(|s| TagWindow::new(s, w)))
            .collect(),
        WindowPolicy::MaxCounts { search } => {
            let times = sorted_sp_times(pairs, search);
            widths_ps.iter().map(|&w| max_count_window(&times, search, w)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub width_ns: f64,
    pub window: Option<TagWindow>,
    pub eta: Option<Estimate>,
    pub chi2: Option<f64>,
    pub p_sp: Option<Estimate>,
    pub g2: Option<Estimate>,
    /// "ok" or the first error met for this window.
    pub status: String,
}

fn sweep_one(pairs: &[HomPair<'_>], window: TagWindow, set: &SweepSettings) -> Result<SweepRow, AnalysisError> {
    let wcs_window = window.shifted(set.fold_delay_ps as i64);
    let mut points = Vec::with_capacity(pairs.len());
    let mut sp: Option<CoincidenceStats> = None;
    for p in pairs {
        let op = extract_operating_point(p.dist, window, wcs_window)?;
        let v = hom_visibility_measured(p.ind, p.dist, window, set.fold_delay_ps)?;
        points.push(FitPoint {
            p1: op.p1.value,
            alpha2: op.alpha2.value,
            g2zero: op.g2zero.value,
            v: v.v.value,
            sigma_v: v.v.sigma,
        });
        sp = Some(match sp {
            None => op.sp,
            Some(s) => s.merge(&op.sp),
        });
    }
    let sp = sp.ok_or(AnalysisError::NoPoints)?;
    let fit = fit_eta(&points)?;
    Ok(SweepRow {
        width_ns: window.len_ns(),
        window: Some(window),
        eta: Some(Estimate::new(fit.eta_hat, fit.sigma_eta)),
        chi2: Some(fit.chi2),
        p_sp: Some(p_sp(sp.p1_average(), set.eps_det)?),
        g2: Some(sp.g2()?),
        status: "ok".into(),
    })
}

/// eta, P_SP and g2 for each window width. SP statistics are pooled over
/// all distinguishable runs; each pair contributes one fit point. Rows whose
/// estimators fail carry the error in `status` instead of aborting.
pub fn window_sweep(
    pairs: &[HomPair<'_>],
    widths_ps: &[u64],
    policy: WindowPolicy,
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>, AnalysisError> {
    if pairs.is_empty() {
        return Err(AnalysisError::NoPoints);
    }
    for p in pairs {
        check_same_structure(p.ind, p.dist)?;
    }
    let windows = place_windows(pairs, widths_ps, policy);
    Ok(widths_ps
        .par_iter()
        .zip(windows)
        .map(|(&w, win)| {
            let failed = |status: String| SweepRow {
                width_ns: w as f64 * 1e-3,
                window: win,
                eta: None,
                chi2: None,
                p_sp: None,
                g2: None,
                status,
            };
            match win {
                None => failed("window does not fit the placement region".into()),
                Some(win) => sweep_one(pairs, win, settings).unwrap_or_else(|e| failed(e.to_string())),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeBin {
    pub start_ns: f64,
    pub end_ns: f64,
    pub coincidences_ind: u64,
    pub coincidences_dist: u64,
    pub v: Option<Estimate>,
    /// True when the distinguishable run has no coincidence in this bin.
    pub empty: bool,
}

fn bin_coincidences(stream: &TimeTagStream, gate: &Gate, bin_ps: u64, n_bins: usize) -> Vec<u64> {
    let mut bins = vec![0u64; n_bins];
    let start = gate.window.start_ps;
    for_each_trial(stream, gate, |t| {
        if let (Some(a), Some(b)) = (t.first1, t.first2) {
            // mean of two in-window times is in the window
            let mid = (a + b) / 2;
            bins[((mid - start) / bin_ps) as usize] += 1;
        }
    });
    bins
}

/// Coincidences binned by the mean of the two detection times (earliest
/// in-window tag per channel) and the visibility of every bin. The last bin
/// is shorter when the window is not a multiple of `bin_ps`. Bin counts sum
/// to the whole-window coincidence counts.
pub fn time_resolved_visibility(
    ind: &TimeTagStream,
    dist: &TimeTagStream,
    window: TagWindow,
    bin_ps: u64,
    fold_delay_ps: u64,
) -> Result<Vec<TimeBin>, AnalysisError> {
    if bin_ps == 0 {
        return Err(AnalysisError::InvalidBin("bin width must be positive".into()));
    }
    check_same_structure(ind, dist)?;
    let gi = Gate::plain(window);
    let gd = Gate::folded(window, fold_delay_ps);
    gi.check(ind)?;
    gd.check(dist)?;
    let n_bins = window.len_ps().div_ceil(bin_ps) as usize;
    let bi = bin_coincidences(ind, &gi, bin_ps, n_bins);
    let bd = bin_coincidences(dist, &gd, bin_ps, n_bins);
    let (ni, nd) = (ind.n_trials() as f64, dist.n_trials() as f64);
    Ok((0..n_bins)
        .map(|k| {
            let s = window.start_ps + k as u64 * bin_ps;
            let e = (s + bin_ps).min(window.end_ps);
            let (pi, pd) = (bi[k] as f64 / ni, bd[k] as f64 / nd);
            let v = (bd[k] > 0).then(|| {
                let r = pi / pd;
                // Poisson errors on the two counts
                let rel = 1.0 / bd[k] as f64 + if bi[k] > 0 { 1.0 / bi[k] as f64 } else { 0.0 };
                let sigma = if bi[k] > 0 { r * rel.sqrt() } else { 1.0 / (pd * ni) };
                Estimate::new(1.0 - r, sigma)
            });
            TimeBin {
                start_ns: s as f64 * 1e-3,
                end_ns: e as f64 * 1e-3,
                coincidences_ind: bi[k],
                coincidences_dist: bd[k],
                v,
                empty: bd[k] == 0,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::coincidence_stats;
    use crate::analysis::counts::Gate;
    use crate::analysis::stats::gated_stats;
    use crate::timetag::{StreamHeader, TimeTagRecord};
    use rand::{Rng, SeedableRng};

    fn random_stream(seed: u64, n: u32, p: f64) -> TimeTagStream {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut recs = Vec::new();
        for i in 0..n {
            let mut tr: Vec<TimeTagRecord> = Vec::new();
            for ch in 1..=2u8 {
                for base in [0u64, 5_000_000] {
                    if rng.random::<f64>() < p {
                        tr.push(TimeTagRecord::new(i, ch, base + rng.random_range(0..1_000_000)));
                    }
                }
            }
            tr.sort_by_key(|r| r.key());
            recs.extend(tr);
        }
        TimeTagStream::new(StreamHeader::new(10_000_000, n as u64), recs)
    }

    #[test]
    fn time_bins_partition_window_counts() {
        let ind = random_stream(1, 20_000, 0.3);
        let dist = random_stream(2, 20_000, 0.3);
        let w = TagWindow::new(100_000, 730_000);
        let bins = time_resolved_visibility(&ind, &dist, w, 20_000, 5_000_000).unwrap();
        assert_eq!(bins.len(), 37);
        let si: u64 = bins.iter().map(|b| b.coincidences_ind).sum();
        let sd: u64 = bins.iter().map(|b| b.coincidences_dist).sum();
        assert_eq!(si, coincidence_stats(&ind, w).unwrap().cc);
        assert_eq!(sd, gated_stats(&dist, &Gate::folded(w, 5_000_000)).unwrap().cc);
        assert!((bins.last().unwrap().end_ns - 830.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_distinguishable_data_gives_zero_visibility() {
        // the same statistics in both runs: every bin is consistent with V = 0
        let ind = random_stream(3, 50_000, 0.3);
        let dist = random_stream(4, 50_000, 0.3);
        let bins = time_resolved_visibility(&ind, &dist, TagWindow::new(0, 1_000_000), 100_000, 0).unwrap();
        for b in &bins {
            let v = b.v.unwrap();
            assert!(v.value.abs() < 4.0 * v.sigma, "{b:?}");
        }
    }

    #[test]
    fn empty_bins_are_flagged() {
        let s = TimeTagStream::new(
            StreamHeader::new(10_000, 2),
            vec![TimeTagRecord::new(0, 1, 100), TimeTagRecord::new(0, 2, 120)],
        );
        let bins = time_resolved_visibility(&s, &s, TagWindow::new(0, 1000), 100, 0).unwrap();
        assert_eq!(bins.len(), 10);
        assert!(!bins[1].empty && bins[1].v.unwrap().value == 0.0);
        assert!(bins[0].empty && bins[0].v.is_none());
        assert!(time_resolved_visibility(&s, &s, TagWindow::new(0, 1000), 0, 0).is_err());
    }

    #[test]
    fn max_count_placement() {
        let times = [10, 500, 510, 520, 900];
        let s = TagWindow::new(0, 1000);
        assert_eq!(max_count_window(&times, s, 30), Some(TagWindow::new(500, 30)));
        assert_eq!(max_count_window(&times, s, 1000), Some(TagWindow::new(0, 1000)));
        assert_eq!(max_count_window(&times, s, 1001), None);
        assert_eq!(max_count_window(&[], s, 10), Some(TagWindow::new(0, 10)));
    }

    #[test]
    fn sweep_rows_keep_errors() {
        let ind = random_stream(5, 5000, 0.3);
        let dist = random_stream(6, 5000, 0.3);
        let pairs = [HomPair { ind: &ind, dist: &dist }];
        let set = SweepSettings {
            fold_delay_ps: 5_000_000,
            eps_det: 0.5,
        };
        let rows = window_sweep(
            &pairs,
            &[200_000, 1_000_000, 3_000_000],
            WindowPolicy::Centered { center_ps: 500_000 },
            &set,
        )
        .unwrap();
        assert_eq!(rows[0].status, "ok");
        assert!(rows[0].eta.is_some() && rows[0].g2.is_some());
        assert!(rows[1].p_sp.unwrap().value >= rows[0].p_sp.unwrap().value);
        assert_ne!(rows[2].status, "ok");
        assert!(rows[2].eta.is_none());
    }
}
