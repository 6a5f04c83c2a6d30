//! Centroid matching and precision / recall / F1.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// (prediction index, truth index, distance in px)
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.unmatched_predictions.len()
    }

    pub fn fn_(&self) -> usize {
        self.unmatched_truths.len()
    }
}

/// One-to-one matching of predictions to truths within `radius`.
///
/// Candidate pairs are first taken greedily in ascending distance, ties broken
/// by (prediction index, truth index). Greedy alone can leave a prediction and
/// a truth unmatched when both could be paired by re-routing an earlier pair,
/// so augmenting paths (neighbours tried nearest first) are then applied until
/// the number of pairs is maximal. When greedy is already maximal its pairs are
/// returned unchanged.
pub fn match_detections(
    predictions: &[(f64, f64)],
    truths: &[(f64, f64)],
    radius: f64,
) -> MatchResult {
    let dist = |i: usize, j: usize| {
        let (p, t) = (predictions[i], truths[j]);
        ((p.0 - t.0).powi(2) + (p.1 - t.1).powi(2)).sqrt()
    };
    let mut candidates = Vec::new();
    let mut adjacency = vec![Vec::new(); predictions.len()];
    for i in 0..predictions.len() {
        for j in 0..truths.len() {
            let d = dist(i, j);
            if d <= radius {
                candidates.push((d, i, j));
                adjacency[i].push((d, j));
            }
        }
    }
    let by_distance = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    candidates.sort_by(by_distance);
    for adj in &mut adjacency {
        adj.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }

    let mut truth_of: Vec<Option<usize>> = vec![None; predictions.len()];
    let mut pred_of: Vec<Option<usize>> = vec![None; truths.len()];
    for &(_, i, j) in &candidates {
        if truth_of[i].is_none() && pred_of[j].is_none() {
            truth_of[i] = Some(j);
            pred_of[j] = Some(i);
        }
    }

    fn augment(
        i: usize,
        adjacency: &[Vec<(f64, usize)>],
        visited: &mut [bool],
        truth_of: &mut [Option<usize>],
        pred_of: &mut [Option<usize>],
    ) -> bool {
        for &(_, j) in &adjacency[i] {
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let free = match pred_of[j] {
                None => true,
                Some(k) => augment(k, adjacency, visited, truth_of, pred_of),
            };
            if free {
                truth_of[i] = Some(j);
                pred_of[j] = Some(i);
                return true;
            }
        }
        false
    }
    for i in 0..predictions.len() {
        if truth_of[i].is_none() && !adjacency[i].is_empty() {
            let mut visited = vec![false; truths.len()];
            augment(i, &adjacency, &mut visited, &mut truth_of, &mut pred_of);
        }
    }

    let mut pairs: Vec<(usize, usize, f64)> = truth_of
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j, dist(i, j))))
        .collect();
    pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    MatchResult {
        pairs,
        unmatched_predictions: (0..predictions.len())
            .filter(|&i| truth_of[i].is_none())
            .collect(),
        unmatched_truths: (0..truths.len())
            .filter(|&j| pred_of[j].is_none())
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricsReport {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    /// Checks the formula relations between the counts and the rates.
    pub fn is_consistent(&self, tol: f64) -> bool {
        let r = MetricsReport::from_counts(self.tp, self.fp, self.fn_);
        (r.precision - self.precision).abs() <= tol
            && (r.recall - self.recall).abs() <= tol
            && (r.f1 - self.f1).abs() <= tol
    }
}

/// Micro aggregation: counts are summed over images before the rates are formed.
pub fn compute_metrics<'a>(matches: impl IntoIterator<Item = &'a MatchResult>) -> MetricsReport {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for m in matches {
        tp += m.tp();
        fp += m.fp();
        fn_ += m.fn_();
    }
    MetricsReport::from_counts(tp, fp, fn_)
}

/// Per-image mean of precision, recall and F1 (macro aggregation); counts are summed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroReport {
    pub images: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn compute_macro_metrics<'a>(
    matches: impl IntoIterator<Item = &'a MatchResult>,
) -> MacroReport {
    let (mut n, mut p, mut r, mut f) = (0usize, 0.0, 0.0, 0.0);
    for m in matches {
        let rep = MetricsReport::from_counts(m.tp(), m.fp(), m.fn_());
        n += 1;
        p += rep.precision;
        r += rep.recall;
        f += rep.f1;
    }
    let d = n.max(1) as f64;
    MacroReport {
        images: n,
        precision: p / d,
        recall: r / d,
        f1: f / d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_match() {
        let m = match_detections(&[(10.0, 10.0)], &[(12.0, 10.0)], 30.0);
        assert_eq!((m.tp(), m.fp(), m.fn_()), (1, 0, 0));
        assert_eq!(m.pairs[0], (0, 0, 2.0));
    }

    #[test]
    fn closer_prediction_wins() {
        // two assignments: pred 0 (d=5) or pred 1 (d=1); greedy picks the minimum
        let m = match_detections(&[(15.0, 10.0), (11.0, 10.0)], &[(10.0, 10.0)], 30.0);
        assert_eq!(m.pairs, vec![(1, 0, 1.0)]);
        assert_eq!(m.unmatched_predictions, vec![0]);
    }

    #[test]
    fn no_predictions() {
        let m = match_detections(&[], &[(1.0, 1.0), (5.0, 5.0), (9.0, 9.0)], 30.0);
        assert_eq!((m.tp(), m.fp(), m.fn_()), (0, 0, 3));
    }

    #[test]
    fn out_of_radius_is_unmatched() {
        let m = match_detections(&[(0.0, 0.0)], &[(30.0, 0.1)], 30.0);
        assert_eq!((m.tp(), m.fp(), m.fn_()), (0, 1, 1));
    }

    #[test]
    fn greedy_shortfall_is_repaired() {
        // greedy would take (0, 0) at 1.5 and strand both remaining points
        let m = match_detections(&[(0.0, 0.0), (3.5, 0.0)], &[(1.5, 0.0), (-2.5, 0.0)], 3.0);
        assert_eq!(m.tp(), 2);
        assert_eq!(m.pairs, vec![(1, 0, 2.0), (0, 1, 2.5)]);
    }

    #[test]
    fn equal_distance_ties_use_indices() {
        let m = match_detections(&[(0.0, 0.0), (2.0, 0.0)], &[(1.0, 0.0)], 5.0);
        assert_eq!(m.pairs, vec![(0, 0, 1.0)]);
    }

    #[test]
    fn formula_values() {
        let r = MetricsReport::from_counts(100, 47, 48);
        assert!((r.precision - 100.0 / 147.0).abs() < 1e-15);
        assert_eq!(format!("{:.4}", r.precision), "0.6803");
        assert_eq!(format!("{:.4}", r.recall), "0.6757");
        assert_eq!(format!("{:.4}", r.f1), "0.6780");
        let perfect = MetricsReport::from_counts(7, 0, 0);
        assert_eq!(
            (perfect.precision, perfect.recall, perfect.f1),
            (1.0, 1.0, 1.0)
        );
        let none = MetricsReport::from_counts(0, 0, 5);
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn micro_and_macro_aggregation() {
        let a = match_detections(&[(0.0, 0.0)], &[(0.0, 0.0)], 1.0);
        let b = match_detections(&[(0.0, 0.0), (50.0, 50.0)], &[(90.0, 90.0)], 1.0);
        let micro = compute_metrics([&a, &b]);
        assert_eq!((micro.tp, micro.fp, micro.fn_), (1, 2, 1));
        let mac = compute_macro_metrics([&a, &b]);
        assert_eq!(mac.images, 2);
        assert!((mac.precision - 0.5).abs() < 1e-15);
        assert!((mac.f1 - 0.5).abs() < 1e-15);
    }
}
