use crate::channel::LinkState;

/// Binary classification metrics with NLOS as the positive class.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub roc_auc: f64,
    /// `confusion[true][predicted]`, index 0 = LOS, 1 = NLOS.
    pub confusion: [[usize; 2]; 2],
}

fn class(s: LinkState) -> usize {
    match s {
        LinkState::Los => 0,
        LinkState::Nlos => 1,
    }
}

impl Metrics {
    /// Metrics for `p_NLOS` scores thresholded at `threshold`.
    pub fn from_scores(scores: &[f64], labels: &[LinkState], threshold: f64) -> Self {
        let mut confusion = [[0usize; 2]; 2];
        for (s, l) in scores.iter().zip(labels) {
            let pred = usize::from(*s >= threshold);
            confusion[class(*l)][pred] += 1;
        }
        let n = scores.len().max(1) as f64;
        let positives: Vec<bool> = labels.iter().map(|l| *l == LinkState::Nlos).collect();
        Self {
            accuracy: (confusion[0][0] + confusion[1][1]) as f64 / n,
            roc_auc: roc_auc(scores, &positives),
            confusion,
        }
    }

    /// Each row divided by its total; an empty row stays zero.
    pub fn row_normalized(&self) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for (r, row) in self.confusion.iter().enumerate() {
            let total = (row[0] + row[1]) as f64;
            if total > 0.0 {
                out[r] = [row[0] as f64 / total, row[1] as f64 / total];
            }
        }
        out
    }

    pub fn los_recall(&self) -> f64 {
        self.row_normalized()[0][0]
    }

    pub fn nlos_recall(&self) -> f64 {
        self.row_normalized()[1][1]
    }
}

/// Area under the ROC curve by trapezoidal integration over every distinct
/// score threshold. Tied scores form one step. NaN when either class is
/// absent.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let p = positive.iter().filter(|&&b| b).count() as f64;
    let n = positive.len() as f64 - p;
    if p == 0.0 || n == 0.0 {
        return f64::NAN;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - fp0) / n * (tp + tp0) / (2.0 * p);
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn perfect_predictor() {
        let labels = [LinkState::Los, LinkState::Nlos, LinkState::Nlos, LinkState::Los];
        let m = Metrics::from_scores(&[0.1, 0.9, 0.7, 0.2], &labels, 0.5);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.roc_auc, 1.0);
        assert_eq!(m.confusion, [[2, 0], [0, 2]]);
    }

    #[test]
    fn coin_flip_auc() {
        let mut rng = substream(11, 0);
        let scores: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let pos: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        assert!((roc_auc(&scores, &pos) - 0.5).abs() < 0.05);
    }

    #[test]
    fn ties_count_half() {
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]), 0.5);
        assert_eq!(roc_auc(&[0.2, 0.8], &[true, false]), 0.0);
        assert!(roc_auc(&[0.2], &[true]).is_nan());
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut rng = substream(12, 0);
        let scores: Vec<f64> = (0..300).map(|_| (rng.random::<f64>() * 20.0).round() / 20.0).collect();
        let pos: Vec<bool> = scores.iter().map(|s| rng.random::<f64>() < *s).collect();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..300 {
            for j in 0..300 {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((roc_auc(&scores, &pos) - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn rows_sum_to_one() {
        let labels = [LinkState::Los, LinkState::Nlos, LinkState::Nlos, LinkState::Los, LinkState::Los];
        let m = Metrics::from_scores(&[0.6, 0.9, 0.2, 0.1, 0.3], &labels, 0.5);
        for row in m.row_normalized() {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
        assert!((m.los_recall() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.nlos_recall(), 0.5);
    }
}
