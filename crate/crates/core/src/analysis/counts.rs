//! Per-trial in-window counting shared by all estimators.

use super::AnalysisError;
use crate::timetag::{TagWindow, TimeTagStream};
use serde::Serialize;

/// Where a stream's counts are taken from. A distinguishable stream is
/// folded: tags in `window + delay` are shifted back by `delay` and merged with
/// those in `window`, so the delayed pulse is counted as if it had arrived on
/// time but in an orthogonal temporal mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Gate {
    pub window: TagWindow,
    pub fold_delay_ps: u64,
}

impl Gate {
    pub fn plain(window: TagWindow) -> Self {
        Self { window, fold_delay_ps: 0 }
    }

    pub fn folded(window: TagWindow, delay_ps: u64) -> Self {
        Self {
            window,
            fold_delay_ps: delay_ps,
        }
    }

    pub(crate) fn check(&self, stream: &TimeTagStream) -> Result<(), AnalysisError> {
        let period = stream.header.trial_period_ps;
        if self.window.is_empty() {
            return Err(AnalysisError::EmptyWindow);
        }
        let last = self.window.shifted(self.fold_delay_ps as i64);
        if !self.window.within(period) || !last.within(period) {
            return Err(AnalysisError::WindowOutsidePeriod {
                start_ps: self.window.start_ps,
                end_ps: last.end_ps,
                period_ps: period,
            });
        }
        if self.fold_delay_ps > 0 && self.fold_delay_ps < self.window.len_ps() {
            return Err(AnalysisError::OverlappingWindows);
        }
        if stream.n_trials() == 0 {
            return Err(AnalysisError::EmptyStream);
        }
        Ok(())
    }

    /// Trial-relative time mapped into the primary window, if gated in.
    #[inline]
    pub fn map(&self, t: u64) -> Option<u64> {
        if self.window.contains(t) {
            Some(t)
        } else if self.fold_delay_ps > 0 && t >= self.fold_delay_ps && self.window.contains(t - self.fold_delay_ps) {
            Some(t - self.fold_delay_ps)
        } else {
            None
        }
    }
}

/// Gated counts of one trial with at least one gated tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialCounts {
    pub trial: u32,
    pub n1: u32,
    pub n2: u32,
    /// Earliest gated time per channel (ps, mapped into the primary window).
    pub first1: Option<u64>,
    pub first2: Option<u64>,
}

/// Calls `f` for every trial that has gated tags, in trial order.
pub fn for_each_trial(stream: &TimeTagStream, gate: &Gate, mut f: impl FnMut(&TrialCounts)) {
    let mut cur: Option<TrialCounts> = None;
    for r in &stream.records {
        let Some(t) = gate.map(r.time) else { continue };
        let c = match &mut cur {
            Some(c) if c.trial == r.trial => c,
            slot => {
                if let Some(done) = slot.take() {
                    f(&done);
                }
                slot.insert(TrialCounts {
                    trial: r.trial,
                    n1: 0,
                    n2: 0,
                    first1: None,
                    first2: None,
                })
            }
        };
        if r.channel == 1 {
            c.n1 += 1;
            c.first1 = Some(c.first1.map_or(t, |x| x.min(t)));
        } else {
            c.n2 += 1;
            c.first2 = Some(c.first2.map_or(t, |x| x.min(t)));
        }
    }
    if let Some(done) = cur {
        f(&done);
    }
}
