//! Task losses and evaluation metrics: binary cross-entropy, discrete-time
//! survival likelihood, accuracy/F1/AUC, and the concordance index.
//!
//! Everything here is a pure `f64` function used for evaluation and as the
//! reference the in-graph loss builders are tested against.

use crate::tensor::{sigmoid, softplus};
use thiserror::Error;

/// Hazard probabilities are clamped to this range inside the likelihood.
pub const HAZARD_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("label must be 0 or 1, got {0}")]
    BadLabel(f64),
    #[error("bin index {bin} out of range for {bins} bins")]
    BinOutOfRange { bin: usize, bins: usize },
    #[error("time binning needs at least one uncensored record")]
    NoUncensored,
    #[error("degenerate time bins: {0}")]
    DegenerateBins(String),
    #[error("need at least {need} bins, got {got}")]
    TooFewBins { need: usize, got: usize },
    #[error("no comparable pairs for the concordance index")]
    NoComparablePairs,
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

/// One survival observation; `bin` is assigned by [`time_bins`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalRecord {
    pub time: f64,
    /// true = event observed, false = censored.
    pub event: bool,
    pub bin: Option<usize>,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool) -> Self {
        Self { time, event, bin: None }
    }
}

/// Interval cut points for discrete-time survival: `J - 1` strictly
/// increasing edges.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    edges: Vec<f64>,
}

impl BinEdges {
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bins(&self) -> usize {
        self.edges.len() + 1
    }

    /// Bin containing `t`: interval `j` is `(edge[j-1], edge[j]]`, with the
    /// last bin closed above.
    pub fn assign(&self, t: f64) -> usize {
        self.edges.partition_point(|&e| e < t)
    }
}

/// Binary cross-entropy from a raw logit, in nats, in the stable
/// softplus form.
pub fn bce(logit: f64, y: f64) -> Result<f64, MetricsError> {
    if y != 0.0 && y != 1.0 {
        return Err(MetricsError::BadLabel(y));
    }
    Ok(softplus(logit) - y * logit)
}

/// Discrete-time survival negative log-likelihood for one record.
///
/// With hazards `h_j = sigmoid(logit_j)` and survival `S(j) = prod_{k<=j}
/// (1 - h_k)`, an observed event in bin `j*` costs `-log S(j*-1) - log
/// h_{j*}`; a censored record costs `-log S(j*)`. Hazards are clamped away
/// from 0 and 1.
pub fn survival_nll(hazard_logits: &[f64], bin: usize, event: bool) -> Result<f64, MetricsError> {
    let j = hazard_logits.len();
    if bin >= j {
        return Err(MetricsError::BinOutOfRange { bin, bins: j });
    }
    let h = |k: usize| sigmoid(hazard_logits[k]).clamp(HAZARD_CLAMP, 1.0 - HAZARD_CLAMP);
    let mut loss = 0.0;
    if event {
        for k in 0..bin {
            loss -= (1.0 - h(k)).ln();
        }
        loss -= h(bin).ln();
    } else {
        for k in 0..=bin {
            loss -= (1.0 - h(k)).ln();
        }
    }
    Ok(loss)
}

/// Quantile bin edges over the uncensored times (linear interpolation), and
/// the bin assigned to every record.
pub fn time_bins(
    records: &[SurvivalRecord],
    bins: usize,
) -> Result<(BinEdges, Vec<usize>), MetricsError> {
    if bins < 2 {
        return Err(MetricsError::TooFewBins { need: 2, got: bins });
    }
    let mut uncensored: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    if uncensored.is_empty() {
        return Err(MetricsError::NoUncensored);
    }
    uncensored.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = uncensored.len();
    let mut edges = Vec::with_capacity(bins - 1);
    for k in 1..bins {
        let p = k as f64 / bins as f64;
        let h = (n - 1) as f64 * p;
        let lo = h.floor() as usize;
        let frac = h - lo as f64;
        let q = if lo + 1 < n {
            uncensored[lo] + frac * (uncensored[lo + 1] - uncensored[lo])
        } else {
            uncensored[lo]
        };
        edges.push(q);
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::DegenerateBins(format!(
            "quantile edges are not strictly increasing: {edges:?}"
        )));
    }
    let binning = BinEdges { edges };
    let assigned = records.iter().map(|r| binning.assign(r.time)).collect();
    Ok((binning, assigned))
}

/// Concordance index: a pair `(i, k)` is comparable when `t_i < t_k` and the
/// earlier record is an observed event; it counts 1 when `risk_i > risk_k`,
/// 0.5 on risk ties.
pub fn c_index(risks: &[f64], records: &[SurvivalRecord]) -> Result<f64, MetricsError> {
    if risks.len() != records.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} risks vs {} records",
            risks.len(),
            records.len()
        )));
    }
    let mut concordant = 0.0f64;
    let mut comparable = 0usize;
    for i in 0..records.len() {
        if !records[i].event {
            continue;
        }
        for k in 0..records.len() {
            if records[i].time < records[k].time {
                comparable += 1;
                if risks[i] > risks[k] {
                    concordant += 1.0;
                } else if risks[i] == risks[k] {
                    concordant += 0.5;
                }
            }
        }
    }
    if comparable == 0 {
        return Err(MetricsError::NoComparablePairs);
    }
    Ok(concordant / comparable as f64)
}

/// Scalar risk from discrete hazards: the negative expected number of
/// survived intervals, `-sum_j S(j)`. Monotone in every hazard.
pub fn risk_score(hazard_logits: &[f64]) -> f64 {
    let mut surv = 1.0;
    let mut total = 0.0;
    for &z in hazard_logits {
        let h = sigmoid(z).clamp(HAZARD_CLAMP, 1.0 - HAZARD_CLAMP);
        surv *= 1.0 - h;
        total += surv;
    }
    -total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub f1: f64,
    /// Absent when the labels contain a single class.
    pub auc: Option<f64>,
}

/// Rank-statistic AUC with tie correction; rejects single-class labels.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tied groups (1-based)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Accuracy and F1 at threshold 0.5 on probability scores, plus AUC.
pub fn binary_metrics(scores: &[f64], labels: &[u8]) -> Result<BinaryMetrics, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(MetricsError::LengthMismatch("empty metric inputs".into()));
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= 0.5;
        match (pred, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / scores.len() as f64;
    let f1_den = 2 * tp + fp + fneg;
    let f1 = if f1_den == 0 { 1.0 } else { 2.0 * tp as f64 / f1_den as f64 };
    Ok(BinaryMetrics { accuracy, f1, auc: auc(scores, labels).ok() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_reference_values() {
        assert!((bce(0.0, 0.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((bce(0.0, 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(bce(30.0, 1.0).unwrap() < 1e-12); // saturation
        assert!((bce(0.5, 1.0).unwrap() - 0.474077).abs() < 1e-6);
        assert!(bce(0.0, 0.5).is_err());
    }

    #[test]
    fn survival_nll_reference_values() {
        // J=2, event in bin 1, h = (0.2, 0.5): -[ln 0.8 + ln 0.5]
        let logit = |h: f64| (h / (1.0 - h)).ln();
        let z = [logit(0.2), logit(0.5)];
        let loss = survival_nll(&z, 1, true).unwrap();
        assert!((loss - 0.91629).abs() < 1e-5);

        // perfectly predicted event in bin 0
        let loss = survival_nll(&[40.0, 0.0], 0, true).unwrap();
        assert!(loss < 1e-6, "{loss}");
        // censored survivor with all hazards tiny
        let loss = survival_nll(&[-40.0, -40.0], 1, false).unwrap();
        assert!(loss < 1e-6, "{loss}");
        assert!(survival_nll(&[0.0, 0.0], 2, true).is_err());
    }

    #[test]
    fn survival_nll_monotonicity_by_perturbation() {
        let base = [0.3, -0.2, 0.8, 0.1];
        let eps = 1e-4;
        // event: loss nonincreasing in the event-bin hazard
        let l0 = survival_nll(&base, 2, true).unwrap();
        let mut up = base;
        up[2] += eps;
        assert!(survival_nll(&up, 2, true).unwrap() <= l0);
        // censored: loss nondecreasing in every hazard up to the bin
        for k in 0..=2 {
            let l0 = survival_nll(&base, 2, false).unwrap();
            let mut up = base;
            up[k] += eps;
            assert!(survival_nll(&up, 2, false).unwrap() >= l0);
        }
    }

    #[test]
    fn time_bins_median_and_edges() {
        let recs: Vec<SurvivalRecord> =
            [1.0, 2.0, 3.0, 4.0].iter().map(|&t| SurvivalRecord::new(t, true)).collect();
        let (edges, assigned) = time_bins(&recs, 2).unwrap();
        assert_eq!(edges.edges(), &[2.5]);
        assert_eq!(assigned, vec![0, 0, 1, 1]);
        // beyond the last edge falls in the last bin
        assert_eq!(edges.assign(100.0), 1);

        // all times identical: degenerate
        let recs: Vec<SurvivalRecord> = (0..5).map(|_| SurvivalRecord::new(2.0, true)).collect();
        assert!(matches!(time_bins(&recs, 3), Err(MetricsError::DegenerateBins(_))));

        // zero uncensored records rejected
        let recs = vec![SurvivalRecord::new(1.0, false)];
        assert!(matches!(time_bins(&recs, 2), Err(MetricsError::NoUncensored)));
    }

    #[test]
    fn c_index_extremes_and_hand_case() {
        let recs: Vec<SurvivalRecord> =
            [1.0, 2.0, 3.0, 4.0].iter().map(|&t| SurvivalRecord::new(t, true)).collect();
        // risks perfectly anti-ordered with time
        assert_eq!(c_index(&[4.0, 3.0, 2.0, 1.0], &recs).unwrap(), 1.0);
        assert_eq!(c_index(&[1.0, 2.0, 3.0, 4.0], &recs).unwrap(), 0.0);

        // one censored record: enumerate comparable pairs by hand.
        // records: (t=1,e=1), (t=2,e=0), (t=3,e=1), (t=4,e=1)
        // comparable: (0,1) (0,2) (0,3) (2,3) — the censored record can only
        // appear as the later element.
        let recs = vec![
            SurvivalRecord::new(1.0, true),
            SurvivalRecord::new(2.0, false),
            SurvivalRecord::new(3.0, true),
            SurvivalRecord::new(4.0, true),
        ];
        let risks = [9.0, 1.0, 2.0, 3.0];
        // concordant: (0,1)=1, (0,2)=1, (0,3)=1, (2,3): 2<3 -> 0
        assert!((c_index(&risks, &recs).unwrap() - 0.75).abs() < 1e-12);

        // zero comparable pairs
        let recs = vec![SurvivalRecord::new(1.0, false), SurvivalRecord::new(2.0, false)];
        assert!(matches!(c_index(&[0.1, 0.2], &recs), Err(MetricsError::NoComparablePairs)));
    }

    #[test]
    fn risk_score_reference_values() {
        assert!(risk_score(&[40.0, 40.0]).abs() < 1e-5); // hazards -> 1
        assert!((risk_score(&[-40.0, -40.0]) + 2.0).abs() < 1e-5); // hazards -> 0
        assert!((risk_score(&[0.0, 0.0]) + 0.75).abs() < 1e-12); // h = (.5,.5)
    }

    #[test]
    fn binary_metrics_reference_cases() {
        // perfectly separated
        let m = binary_metrics(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap();
        assert_eq!((m.accuracy, m.f1, m.auc.unwrap()), (1.0, 1.0, 1.0));
        // complete ties
        let m = binary_metrics(&[0.6, 0.6], &[1, 0]).unwrap();
        assert_eq!(m.auc.unwrap(), 0.5);
        // single class: AUC rejected, the rest still returned
        let m = binary_metrics(&[0.6, 0.7], &[1, 1]).unwrap();
        assert!(m.auc.is_none());
        assert_eq!(m.accuracy, 1.0);
        assert!(matches!(auc(&[0.6, 0.7], &[1, 1]), Err(MetricsError::SingleClass)));
    }

    #[test]
    fn auc_matches_exhaustive_pair_oracle() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.65, 0.35];
        let labels = [0u8, 0, 1, 1, 1, 0];
        // oracle: over all (pos, neg) pairs count wins + half-ties
        let mut wins = 0.0;
        let mut total = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if labels[i] == 1 && labels[j] == 0 {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        let expect = wins / total;
        assert!((auc(&scores, &labels).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.65, 0.2, 0.9];
        let labels = [0u8, 0, 1, 1, 1, 0, 1];
        let base = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| (5.0 * s).tanh()).collect();
        let shifted: Vec<f64> = scores.iter().map(|&s| 3.0 * s + 11.0).collect();
        assert!((auc(&squashed, &labels).unwrap() - base).abs() < 1e-12);
        assert!((auc(&shifted, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn random_risks_give_chance_level_c_index() {
        let mut rng = crate::rng::stream(99, &[crate::rng::tag::VERIFY, 7]);
        use rand::Rng;
        let records: Vec<SurvivalRecord> = (0..10_000)
            .map(|_| SurvivalRecord::new(rng.random_range(0.0..100.0), rng.random_bool(0.7)))
            .collect();
        let risks: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = c_index(&risks, &records).unwrap();
        assert!((0.45..=0.55).contains(&c), "c-index {c}");
    }
}
