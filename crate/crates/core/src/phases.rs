//! Segmentation of a trajectory into training periods and their phases.
//!
//! A period ends with a destabilization episode. Inside it the phases come in
//! the order
//!
//! * A: the norm grows while the loss is still high,
//! * B: the norm shrinks while the loss sits near its floor,
//! * C: the jump itself and the recovery, where loss and norm rise together.
//!
//! Phase C starts at the jump (or at the norm minimum if that comes first)
//! and ends at the loss peak of the episode; the next period starts right
//! after it.

use serde::{Deserialize, Serialize};

use crate::dynamics::{TraceRecord, Trajectory};
use crate::jumps::{detect_jumps_with, JumpEvent, DEBOUNCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
    Unclassified,
}

/// Inclusive step range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub phase: Phase,
    pub start: usize,
    pub end: usize,
}

impl PhaseSpan {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSummary {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    /// `[A, B, C]` with A omitted when empty, or a single unclassified span.
    pub phases: Vec<PhaseSpan>,
    /// The jump that ends the period; it lies inside phase C.
    pub jump: JumpEvent,
    pub min_rho_sq: f64,
    pub max_rho_sq: f64,
    pub min_loss: f64,
    /// Steps by which the loss minimum precedes the norm minimum.
    pub onset_lag: Option<i64>,
}

impl PeriodSummary {
    pub fn classified(&self) -> bool {
        self.phases.iter().all(|p| p.phase != Phase::Unclassified)
    }

    pub fn span(&self, phase: Phase) -> Option<PhaseSpan> {
        self.phases.iter().copied().find(|p| p.phase == phase)
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    pub delta: f64,
    pub debounce: usize,
    /// Moving-average width as a fraction of the typical period length.
    pub smoothing: f64,
    /// "Near-zero" train error for labeled objectives.
    pub error_threshold: f64,
    /// Loss quantile used as the low-loss threshold without labels.
    pub loss_quantile: f64,
}

impl SegmentOptions {
    pub fn new(delta: f64) -> Self {
        SegmentOptions {
            delta,
            debounce: DEBOUNCE,
            smoothing: 0.02,
            error_threshold: 0.005,
            loss_quantile: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub jumps: Vec<JumpEvent>,
    pub periods: Vec<PeriodSummary>,
    /// Steps after the last complete period (the whole run if no jump).
    pub tail: Option<(usize, usize)>,
    pub smoothing_window: usize,
}

impl Segmentation {
    pub fn classified(&self) -> impl Iterator<Item = &PeriodSummary> {
        self.periods.iter().filter(|p| p.classified())
    }

    /// Periods whose terminating jump happens at or after `step`.
    pub fn periods_after(&self, step: usize) -> impl Iterator<Item = &PeriodSummary> {
        self.periods.iter().filter(move |p| p.jump.step >= step)
    }

    /// Mean gap between consecutive jumps at or after `from`.
    pub fn mean_jump_interval(&self, from: usize) -> Option<f64> {
        let steps: Vec<usize> = self.jumps.iter().map(|j| j.step).filter(|&s| s >= from).collect();
        if steps.len() < 2 {
            return None;
        }
        Some((steps[steps.len() - 1] - steps[0]) as f64 / (steps.len() - 1) as f64)
    }
}

/// Centered moving average with `half` points on each side, truncated at the
/// ends.
pub fn moving_average(xs: &[f64], half: usize) -> Vec<f64> {
    if half == 0 {
        return xs.to_vec();
    }
    let mut prefix = Vec::with_capacity(xs.len() + 1);
    prefix.push(0.0);
    for x in xs {
        prefix.push(prefix.last().unwrap() + x);
    }
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(xs.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - frac) + v[i + 1] * frac
    } else {
        v[i]
    }
}

fn median(xs: &[usize]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] as f64 } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) as f64 })
}

fn argmin(xs: &[f64], lo: usize, hi: usize) -> usize {
    (lo..=hi).min_by(|&a, &b| xs[a].total_cmp(&xs[b])).unwrap()
}

/// Splits the records (dense, starting at index 0) into periods.
pub fn segment_phases(records: &[TraceRecord], opts: &SegmentOptions) -> Segmentation {
    let jumps = detect_jumps_with(records, opts.delta, opts.debounce);
    let n = records.len();
    let gaps: Vec<usize> = jumps.windows(2).map(|w| w[1].step - w[0].step).collect();
    let typical = median(&gaps).or_else(|| jumps.first().map(|j| j.step as f64)).unwrap_or(n as f64);
    let width = ((opts.smoothing * typical).round() as usize).max(1);
    let half = width / 2;
    let rho: Vec<f64> = moving_average(&records.iter().map(TraceRecord::rho_sq).collect::<Vec<_>>(), half);
    let loss: Vec<f64> = moving_average(&records.iter().map(|r| r.loss).collect::<Vec<_>>(), half);
    let base = records.first().map_or(0, |r| r.step);

    let mut periods = Vec::new();
    let mut start = 0usize;
    for (k, jump) in jumps.iter().enumerate() {
        let j = jump.step - base;
        if j < start {
            continue;
        }
        let limit = jumps.get(k + 1).map_or(n - 1, |nj| nj.step - base - 1).max(j);

        // Episode end: the loss peak between the jump and the end of the
        // norm's recovery.
        let mut e = j;
        while e < limit && rho[e + 1] < rho[e] {
            e += 1;
        }
        while e < limit && rho[e + 1] >= rho[e] {
            e += 1;
        }
        let peak = (j..=e).max_by(|&a, &b| loss[a].total_cmp(&loss[b])).unwrap();
        if e == n - 1 && peak == n - 1 {
            // The episode runs past the end of the data.
            break;
        }

        // Norm minimum preceding the peak.
        let mut rho_min = peak;
        while rho_min > start && rho[rho_min - 1] < rho[rho_min] {
            rho_min -= 1;
        }
        let c_start = rho_min.min(j).max(start);

        // Rising run right after the previous episode: phase A.
        let mut a_end: Option<usize> = None;
        let mut t = start;
        while t + 1 < c_start && rho[t + 1] > rho[t] {
            a_end = Some(t + 1);
            t += 1;
        }
        if start > 0 && a_end.is_none() && start < c_start && rho[start] > rho[start - 1] {
            a_end = Some(start);
        }
        let b_start = a_end.map_or(start, |e| e + 1);

        let window_loss: Vec<f64> = records[start..=peak].iter().map(|r| r.loss).collect();
        let low = quantile(&window_loss, opts.loss_quantile);
        let labeled = records[start..=peak].iter().all(|r| r.train_error.is_some());

        let raw = |i: usize| records[i].loss;
        let mut ok = b_start < c_start;
        if ok {
            let b_end = c_start - 1;
            ok &= rho[b_end] < rho[b_start];
            let b_low = if labeled {
                (b_start..=b_end).any(|i| records[i].train_error.unwrap() <= opts.error_threshold)
            } else {
                (b_start..=b_end).any(|i| raw(i) <= low)
            };
            ok &= b_low;
            if let Some(ae) = a_end {
                ok &= (start..=ae).any(|i| raw(i) > low);
            }
        }
        ok &= peak > c_start && rho[peak] > rho[c_start] && loss[peak] > loss[c_start];

        let phases = if ok {
            let mut v = Vec::with_capacity(3);
            if let Some(ae) = a_end {
                v.push(PhaseSpan { phase: Phase::A, start: start + base, end: ae + base });
            }
            v.push(PhaseSpan { phase: Phase::B, start: b_start + base, end: c_start - 1 + base });
            v.push(PhaseSpan { phase: Phase::C, start: c_start + base, end: peak + base });
            v
        } else {
            vec![PhaseSpan { phase: Phase::Unclassified, start: start + base, end: peak + base }]
        };

        let slice = &records[start..=peak];
        let rho_raw: Vec<f64> = slice.iter().map(TraceRecord::rho_sq).collect();
        let loss_raw: Vec<f64> = slice.iter().map(|r| r.loss).collect();
        let onset_lag = (c_start > start).then(|| {
            let loss_min = argmin(&loss, start, c_start);
            let norm_min = argmin(&rho, start, peak);
            norm_min as i64 - loss_min as i64
        });
        periods.push(PeriodSummary {
            index: periods.len(),
            start: start + base,
            end: peak + base,
            phases,
            jump: *jump,
            min_rho_sq: rho_raw.iter().copied().fold(f64::INFINITY, f64::min),
            max_rho_sq: rho_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_loss: loss_raw.iter().copied().fold(f64::INFINITY, f64::min),
            onset_lag,
        });
        start = peak + 1;
    }
    let tail = (start < n).then(|| (start + base, n - 1 + base));
    Segmentation { jumps, periods, tail, smoothing_window: 2 * half + 1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub eta: f64,
    pub lambda: f64,
    pub eta_lambda: f64,
    pub jumps: usize,
    pub mean_period: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub delta: f64,
    pub rows: Vec<FrequencyRow>,
    /// Whether mean period length strictly decreases with ηλ over the
    /// included rows; `None` with fewer than three of them.
    pub strictly_decreasing: Option<bool>,
}

/// Mean jump interval per trajectory, ignoring jumps before `transient`.
pub fn period_frequency_report(trajectories: &[&Trajectory], delta: f64, transient: usize) -> FrequencyReport {
    let mut rows: Vec<FrequencyRow> = trajectories
        .iter()
        .map(|traj| {
            let seg = segment_phases(&traj.records, &SegmentOptions::new(delta));
            let jumps = seg.jumps.iter().filter(|j| j.step >= transient).count();
            let complete = jumps.saturating_sub(1);
            let (mean_period, note) = if complete >= 2 {
                (seg.mean_jump_interval(transient), None)
            } else {
                (None, Some(format!("excluded: {complete} complete period(s), need 2")))
            };
            FrequencyRow {
                eta: traj.config.eta,
                lambda: traj.config.lambda,
                eta_lambda: traj.config.eta_lambda(),
                jumps,
                mean_period,
                note,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.eta_lambda.total_cmp(&b.eta_lambda));
    let included: Vec<f64> = rows.iter().filter_map(|r| r.mean_period).collect();
    let strictly_decreasing = (included.len() >= 3).then(|| included.windows(2).all(|w| w[1] < w[0]));
    FrequencyReport { delta, rows, strictly_decreasing }
}

impl FrequencyReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>12} {:>12} {:>12} {:>7} {:>12}\n", "eta*lambda", "eta", "lambda", "jumps", "mean_period");
        for r in &self.rows {
            let mean = r.mean_period.map_or_else(|| "-".to_string(), |m| format!("{m:.3}"));
            out.push_str(&format!(
                "{:>12.4e} {:>12.4e} {:>12.4e} {:>7} {:>12}",
                r.eta_lambda, r.eta, r.lambda, r.jumps, mean
            ));
            if let Some(note) = &r.note {
                out.push_str(&format!("  ({note})"));
            }
            out.push('\n');
        }
        let verdict = match self.strictly_decreasing {
            Some(true) => "strictly decreasing",
            Some(false) => "NOT strictly decreasing",
            None => "undetermined (fewer than 3 usable configs)",
        };
        out.push_str(&format!("verdict: {verdict}\n"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Sawtooth-like synthetic periods: norm decays linearly, then jumps.
    fn synthetic(periods: usize, len: usize) -> Vec<TraceRecord> {
        let mut out = Vec::new();
        for p in 0..periods {
            for i in 0..len {
                let t = p * len + i;
                // A: 0..3 rising, B: 3..len-4 falling, C: last 4 rising with loss.
                let (rho_sq, loss, cos_dist) = if i < 3 {
                    (1.0 + 0.1 * i as f64, 0.5 - 0.1 * i as f64, 0.001)
                } else if i < len - 4 {
                    (1.3 - 0.5 * (i - 3) as f64 / (len - 7) as f64, 1e-3, 0.001)
                } else {
                    let k = (i - (len - 4)) as f64;
                    (0.8 + 0.05 * k, 0.1 + 0.1 * k, if k == 0.0 { 0.2 } else { 0.05 })
                };
                out.push(TraceRecord {
                    step: t,
                    loss,
                    rho: rho_sq.sqrt(),
                    grad_norm: 0.0,
                    eff_grad_norm: 0.0,
                    eff_lr: 1.0 / rho_sq,
                    cos_dist,
                    train_error: None,
                });
            }
        }
        out
    }

    #[test]
    fn moving_average_truncates_at_edges() {
        let m = moving_average(&[1.0, 2.0, 3.0, 4.0], 1);
        assert_eq!(m, vec![1.5, 2.0, 3.0, 3.5]);
        assert_eq!(moving_average(&[1.0, 5.0], 0), vec![1.0, 5.0]);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 10.0], 0.1), 1.0);
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
    }

    #[test]
    fn no_jump_gives_single_tail() {
        let recs: Vec<_> = synthetic(3, 30).into_iter().map(|mut r| {
            r.cos_dist = 0.0;
            r
        }).collect();
        let seg = segment_phases(&recs, &SegmentOptions::new(0.1));
        assert!(seg.periods.is_empty());
        assert_eq!(seg.tail, Some((0, 89)));
    }

    #[test]
    fn synthetic_periods_are_ordered() {
        let recs = synthetic(5, 30);
        let seg = segment_phases(&recs, &SegmentOptions::new(0.1));
        assert_eq!(seg.jumps.len(), 5);
        // The last episode reaches the end of the data and stays in the tail.
        assert_eq!(seg.periods.len(), 4);
        assert_eq!(seg.tail, Some((seg.periods[3].end + 1, 149)));
        for p in &seg.periods {
            assert!(p.classified(), "{p:?}");
            let order: Vec<Phase> = p.phases.iter().map(|s| s.phase).collect();
            assert_eq!(order, vec![Phase::A, Phase::B, Phase::C]);
            for w in p.phases.windows(2) {
                assert_eq!(w[0].end + 1, w[1].start);
            }
            let c = p.span(Phase::C).unwrap();
            assert!(c.start <= p.jump.step && p.jump.step <= c.end);
            assert_eq!(p.phases.first().unwrap().start, p.start);
            assert_eq!(p.phases.last().unwrap().end, p.end);
        }
        for w in seg.periods.windows(2) {
            assert_eq!(w[0].end + 1, w[1].start);
        }
        assert_eq!(seg.mean_jump_interval(0), Some(30.0));
    }

    #[test]
    fn flat_norm_is_unclassified() {
        let mut recs = synthetic(3, 30);
        for r in &mut recs {
            r.rho = 1.0;
        }
        let seg = segment_phases(&recs, &SegmentOptions::new(0.1));
        assert!(!seg.periods.is_empty());
        assert!(seg.periods.iter().all(|p| !p.classified()));
    }
}
