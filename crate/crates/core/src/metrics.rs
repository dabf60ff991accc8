//! Clip-level average precision and event-level F1 scores.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};

/// Average precision of one class: mean over positives of precision at the
/// positive's rank. Ranks are by descending score with ties kept in input
/// order. `None` when there is no positive.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps tied scores in input order.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

/// Ground truth and scores for `n_clips × n_classes`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipLabelMatrix {
    n_clips: usize,
    n_classes: usize,
    labels: Vec<bool>,
    scores: Vec<f64>,
}

impl ClipLabelMatrix {
    pub fn new(n_clips: usize, n_classes: usize, labels: Vec<bool>, scores: Vec<f64>) -> Result<Self> {
        if labels.len() != n_clips * n_classes || scores.len() != labels.len() {
            return Err(Error::Shape {
                what: "clip label matrix".into(),
                expected: format!("{n_clips}x{n_classes}"),
                got: format!("{} labels, {} scores", labels.len(), scores.len()),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores".into()));
        }
        Ok(Self { n_clips, n_classes, labels, scores })
    }

    pub fn n_clips(&self) -> usize {
        self.n_clips
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn class_column(&self, c: usize) -> (Vec<f64>, Vec<bool>) {
        let scores = (0..self.n_clips).map(|i| self.scores[i * self.n_classes + c]).collect();
        let labels = (0..self.n_clips).map(|i| self.labels[i * self.n_classes + c]).collect();
        (scores, labels)
    }

    /// AP per class; `None` for classes without positives.
    pub fn per_class_ap(&self) -> Vec<Option<f64>> {
        (0..self.n_classes)
            .map(|c| {
                let (s, l) = self.class_column(c);
                average_precision(&s, &l)
            })
            .collect()
    }
}

/// Unweighted mean of per-class AP over classes with at least one positive.
pub fn mean_ap(m: &ClipLabelMatrix) -> Result<f64> {
    let aps: Vec<f64> = m.per_class_ap().into_iter().flatten().collect();
    if aps.is_empty() {
        return Err(Error::NoPositives);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// A labelled interval `[onset, offset)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub class_id: usize,
    pub onset_s: f64,
    pub offset_s: f64,
}

impl Event {
    pub fn new(class_id: usize, onset_s: f64, offset_s: f64) -> Result<Self> {
        if !(onset_s >= 0.0 && onset_s < offset_s && offset_s.is_finite()) {
            return Err(Error::Event(format!(
                "class {class_id}: need 0 <= onset < offset, got [{onset_s}, {offset_s})"
            )));
        }
        Ok(Self { class_id, onset_s, offset_s })
    }

    fn overlaps(&self, start: f64, end: f64) -> bool {
        self.onset_s < end && self.offset_s > start
    }
}

/// Segment decisions on a fixed grid, used to count TP/FP/FN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// `2TP / (2TP + FP + FN)`, 1 when nothing was expected or predicted.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

impl core::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl core::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        *self = *self + o;
    }
}

/// Micro-averaged segment counts. `pred[k][c]` is the score of class `c`
/// in the `k`-th segment of length `chunk_s`; a cell is predicted when its
/// score is at least `threshold`, and active when a truth event of that
/// class overlaps the segment. The grid extends past the predictions to
/// cover every truth event.
pub fn segment_counts(pred: &[Vec<f32>], truth: &[Event], chunk_s: f64, threshold: f32) -> Result<Counts> {
    if !(chunk_s > 0.0) {
        return Err(Error::Event(format!("segment length must be positive, got {chunk_s}")));
    }
    let n_classes = pred.first().map_or(0, Vec::len);
    if pred.iter().any(|r| r.len() != n_classes) {
        return Err(Error::Shape {
            what: "segment scores".into(),
            expected: format!("{n_classes} classes per row"),
            got: "ragged rows".into(),
        });
    }
    let n_classes = truth.iter().map(|e| e.class_id + 1).fold(n_classes, usize::max);
    let last = truth.iter().map(|e| libm::ceil(e.offset_s / chunk_s) as usize).max().unwrap_or(0);
    let n_seg = pred.len().max(last);

    let mut c = Counts::default();
    let mut active = vec![false; n_classes];
    for k in 0..n_seg {
        let (start, end) = (k as f64 * chunk_s, (k + 1) as f64 * chunk_s);
        active.fill(false);
        for e in truth.iter().filter(|e| e.overlaps(start, end)) {
            active[e.class_id] = true;
        }
        for (cls, &is_active) in active.iter().enumerate() {
            let predicted = pred.get(k).and_then(|r| r.get(cls)).is_some_and(|&s| s >= threshold);
            match (predicted, is_active) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(c)
}

pub fn segment_f1(pred: &[Vec<f32>], truth: &[Event], chunk_s: f64, threshold: f32) -> Result<f64> {
    segment_counts(pred, truth, chunk_s, threshold).map(|c| c.f1())
}

/// Turns per-chunk scores into events by merging consecutive chunks whose
/// score reaches `threshold`, per class.
pub fn events_from_chunks(pred: &[Vec<f32>], chunk_s: f64, threshold: f32) -> Vec<Event> {
    let n_classes = pred.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    for cls in 0..n_classes {
        let mut open: Option<usize> = None;
        for k in 0..=pred.len() {
            let on = pred.get(k).is_some_and(|r| r[cls] >= threshold);
            match (on, open) {
                (true, None) => open = Some(k),
                (false, Some(s)) => {
                    out.push(Event { class_id: cls, onset_s: s as f64 * chunk_s, offset_s: k as f64 * chunk_s });
                    open = None;
                }
                _ => {}
            }
        }
    }
    out.sort_by(|a, b| a.onset_s.partial_cmp(&b.onset_s).unwrap_or(Ordering::Equal).then(a.class_id.cmp(&b.class_id)));
    out
}

/// Onset counts: predictions are visited in onset order and each takes the
/// closest unmatched truth event of its class whose onset is within
/// `collar_s`.
pub fn onset_counts(pred: &[Event], truth: &[Event], collar_s: f64) -> Counts {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| {
        pred[a].onset_s.partial_cmp(&pred[b].onset_s).unwrap_or(Ordering::Equal).then(pred[a].class_id.cmp(&pred[b].class_id))
    });
    let mut used = vec![false; truth.len()];
    let mut tp = 0;
    for &i in &order {
        let p = &pred[i];
        let best = truth
            .iter()
            .enumerate()
            .filter(|(j, t)| !used[*j] && t.class_id == p.class_id)
            .map(|(j, t)| (j, libm::fabs(t.onset_s - p.onset_s)))
            .filter(|&(_, dist)| dist <= collar_s + 1e-9)
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal));
        if let Some((j, _)) = best {
            used[j] = true;
            tp += 1;
        }
    }
    Counts { tp, fp: pred.len() - tp, fn_: truth.len() - tp }
}

pub fn onset_f1(pred: &[Event], truth: &[Event], collar_s: f64) -> f64 {
    onset_counts(pred, truth, collar_s).f1()
}

/// Collar used for onset matching.
pub const DEFAULT_COLLAR_S: f64 = 0.2;
/// Decision threshold on sigmoid scores.
pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    /// Precision at each positive, found by counting for every positive
    /// how many items outrank it (ties resolved by index).
    fn brute_force_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let n = scores.len();
        let outranks = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
        let mut total = 0.0;
        let mut n_pos = 0;
        for i in (0..n).filter(|&i| labels[i]) {
            n_pos += 1;
            let above = (0..n).filter(|&j| j != i && outranks(j, i)).count();
            let pos_above = (0..n).filter(|&j| j != i && labels[j] && outranks(j, i)).count();
            total += (pos_above + 1) as f64 / (above + 1) as f64;
        }
        (n_pos > 0).then(|| total / n_pos as f64)
    }

    #[test]
    fn hand_example() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[false, true, true]).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.1, 0.9, 0.8], &[false, true, true]), Some(1.0));
        assert_eq!(average_precision(&[0.1, 0.2], &[false, false]), None);
    }

    #[test]
    fn ties_follow_input_order() {
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]), Some(1.0));
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(0.5));
    }

    #[test]
    fn ap_matches_brute_force() {
        let mut r = SplitMix64::new(17);
        let (n, c) = (100, 10);
        let labels: Vec<bool> = (0..n * c).map(|_| r.next_uniform() < 0.2).collect();
        let scores: Vec<f64> = (0..n * c).map(|_| (r.next_uniform() * 20.0).floor() / 20.0).collect();
        let m = ClipLabelMatrix::new(n, c, labels, scores).unwrap();
        for k in 0..c {
            let (s, l) = m.class_column(k);
            match (average_precision(&s, &l), brute_force_ap(&s, &l)) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn mean_ap_examples() {
        // Class 0 perfect, class 1 AP 0.5, class 2 without positives.
        let labels = vec![true, false, false, false, true, false];
        let scores = vec![0.9, 0.9, 0.1, 0.1, 0.2, 0.5];
        let m = ClipLabelMatrix::new(2, 3, labels, scores).unwrap();
        assert_eq!(m.per_class_ap()[2], None);
        assert!((mean_ap(&m).unwrap() - 0.75).abs() < 1e-15);

        let none = ClipLabelMatrix::new(2, 1, vec![false, false], vec![0.1, 0.2]).unwrap();
        assert_eq!(mean_ap(&none), Err(Error::NoPositives));
        assert!(ClipLabelMatrix::new(1, 1, vec![true], vec![f64::NAN]).is_err());
    }

    #[test]
    fn segment_f1_examples() {
        let truth = [Event::new(0, 0.0, 4.0).unwrap()];
        let pred = vec![vec![0.9, 0.0], vec![0.1, 0.0]];
        let c = segment_counts(&pred, &truth, 2.0, 0.5).unwrap();
        assert_eq!(c, Counts { tp: 1, fp: 0, fn_: 1 });
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);

        let perfect = vec![vec![0.9, 0.0], vec![0.6, 0.0]];
        assert_eq!(segment_f1(&perfect, &truth, 2.0, 0.5).unwrap(), 1.0);
        let silent = vec![vec![0.1, 0.4], vec![0.2, 0.0]];
        assert_eq!(segment_f1(&silent, &truth, 2.0, 0.5).unwrap(), 0.0);
        assert_eq!(segment_f1(&[vec![0.0; 3]], &[], 2.0, 0.5).unwrap(), 1.0);
        assert!(segment_f1(&pred, &truth, 0.0, 0.5).is_err());
    }

    #[test]
    fn truth_past_the_last_prediction_counts_as_missed() {
        let truth = [Event::new(1, 5.0, 7.0).unwrap()];
        let pred = vec![vec![0.0, 0.0]];
        let c = segment_counts(&pred, &truth, 2.0, 0.5).unwrap();
        assert_eq!(c, Counts { tp: 0, fp: 0, fn_: 2 });
    }

    #[test]
    fn onset_examples() {
        let truth = [Event::new(3, 3.0, 5.0).unwrap()];
        let same = truth;
        assert_eq!(onset_f1(&same, &truth, DEFAULT_COLLAR_S), 1.0);
        let near = [Event::new(3, 3.15, 4.0).unwrap()];
        assert_eq!(onset_f1(&near, &truth, DEFAULT_COLLAR_S), 1.0);
        let far = [Event::new(3, 3.5, 4.0).unwrap()];
        assert_eq!(onset_f1(&far, &truth, DEFAULT_COLLAR_S), 0.0);
        let wrong_class = [Event::new(2, 3.0, 4.0).unwrap()];
        assert_eq!(onset_f1(&wrong_class, &truth, DEFAULT_COLLAR_S), 0.0);
        assert_eq!(onset_f1(&[], &[], DEFAULT_COLLAR_S), 1.0);
    }

    #[test]
    fn a_truth_event_matches_at_most_once() {
        let truth = [Event::new(0, 1.0, 2.0).unwrap()];
        let pred = [Event::new(0, 1.0, 1.5).unwrap(), Event::new(0, 1.1, 2.0).unwrap()];
        assert_eq!(onset_counts(&pred, &truth, 0.2), Counts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn chunk_events_merge_runs() {
        let pred = vec![vec![0.9, 0.1], vec![0.8, 0.6], vec![0.2, 0.7], vec![0.9, 0.1]];
        let ev = events_from_chunks(&pred, 2.0, 0.5);
        assert_eq!(
            ev,
            vec![
                Event { class_id: 0, onset_s: 0.0, offset_s: 4.0 },
                Event { class_id: 1, onset_s: 2.0, offset_s: 6.0 },
                Event { class_id: 0, onset_s: 6.0, offset_s: 8.0 },
            ]
        );
    }

    #[test]
    fn malformed_events_are_rejected() {
        assert!(Event::new(0, 2.0, 2.0).is_err());
        assert!(Event::new(0, -1.0, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn ap_is_invariant_under_monotone_maps(
            data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..60)
        ) {
            let (s, l): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
            let mapped: Vec<f64> = s.iter().map(|x| libm::exp(3.0 * x) - 7.0).collect();
            prop_assert_eq!(average_precision(&s, &l), average_precision(&mapped, &l));
            if let Some(ap) = average_precision(&s, &l) {
                prop_assert!((0.0..=1.0).contains(&ap));
            }
        }

        #[test]
        fn mean_ap_ignores_class_order(seed in any::<u64>()) {
            let mut r = SplitMix64::new(seed);
            let (n, c) = (20, 6);
            let labels: Vec<bool> = (0..n * c).map(|_| r.next_uniform() < 0.3).collect();
            let scores: Vec<f64> = (0..n * c).map(|_| r.next_uniform()).collect();
            let perm = [3usize, 0, 5, 1, 4, 2];
            let pl: Vec<bool> = (0..n).flat_map(|i| perm.iter().map(move |&p| (i, p))).map(|(i, p)| labels[i * c + p]).collect();
            let ps: Vec<f64> = (0..n).flat_map(|i| perm.iter().map(move |&p| (i, p))).map(|(i, p)| scores[i * c + p]).collect();
            let a = mean_ap(&ClipLabelMatrix::new(n, c, labels, scores).unwrap());
            let b = mean_ap(&ClipLabelMatrix::new(n, c, pl, ps).unwrap());
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn segment_f1_bounds_and_perfection(
            cells in prop::collection::vec(prop::collection::vec(any::<bool>(), 3), 1..8)
        ) {
            let chunk = 2.0;
            let truth: Vec<Event> = cells.iter().enumerate().flat_map(|(k, row)| {
                row.iter().enumerate().filter(|(_, &on)| on)
                    .map(move |(c, _)| Event::new(c, k as f64 * chunk + 0.1, (k + 1) as f64 * chunk - 0.1).unwrap())
            }).collect();
            let mirror: Vec<Vec<f32>> = cells.iter().map(|r| r.iter().map(|&b| if b { 0.9 } else { 0.1 }).collect()).collect();
            prop_assert_eq!(segment_f1(&mirror, &truth, chunk, 0.5).unwrap(), 1.0);
            let flipped: Vec<Vec<f32>> = mirror.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect();
            let f = segment_f1(&flipped, &truth, chunk, 0.5).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            // Every cell is wrong, so the score cannot be perfect.
            prop_assert!(f < 1.0);
        }

        #[test]
        fn longer_events_never_lose_true_positives(
            events in prop::collection::vec((0usize..3, 0.0f64..10.0, 0.1f64..3.0), 0..6),
            seed in any::<u64>(),
        ) {
            let mut r = SplitMix64::new(seed);
            let pred: Vec<Vec<f32>> = (0..8).map(|_| (0..3).map(|_| r.next_uniform() as f32).collect()).collect();
            let truth: Vec<Event> = events.iter().map(|&(c, on, len)| Event::new(c, on, on + len).unwrap()).collect();
            let doubled: Vec<Event> = events.iter().map(|&(c, on, len)| Event::new(c, on, on + 2.0 * len).unwrap()).collect();
            let a = segment_counts(&pred, &truth, 2.0, 0.5).unwrap();
            let b = segment_counts(&pred, &doubled, 2.0, 0.5).unwrap();
            prop_assert!(b.tp >= a.tp);
        }
    }
}
