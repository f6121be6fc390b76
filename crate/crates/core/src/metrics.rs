//! Evaluation machinery: flat and level-wise micro/macro F1, the
//! prefix-divergence label distance, and the wrong-case breakdown.
//!
//! All metrics compare per-level label sets; stop markers never count as
//! labels.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::taxonomy::{DisciplineTaxonomy, NodeId, TaxonomyError, TopicPath};

/// Penalty by remaining steps below the divergence level.
pub const DISTANCE_PENALTIES: [u32; 4] = [1, 10, 30, 50];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction/truth length mismatch: {preds} vs {truths}")]
    LengthMismatch { preds: usize, truths: usize },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Per-class confusion counts with derived precision/recall/F1.
#[derive(Debug, Clone, Serialize)]
pub struct ClassStat {
    pub level: u8,
    pub code: String,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Flat and level-wise F1 summary.
#[derive(Debug, Clone, Serialize)]
pub struct F1Report {
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Index 0 holds level 1.
    pub per_level_micro: Vec<f64>,
    pub per_level_macro: Vec<f64>,
    pub per_class: Vec<ClassStat>,
}

fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        // no decisions and no mismatches: vacuously perfect
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

/// Flat micro/macro F1 over all `(level, label)` decisions plus level-wise
/// breakdowns. Macro averages only over classes present in truth or
/// prediction.
pub fn f1_report(
    preds: &[TopicPath],
    truths: &[TopicPath],
    t: &DisciplineTaxonomy,
) -> Result<F1Report, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    let depth = t.depth() as usize;
    let mut counts: BTreeMap<(u8, NodeId), (u64, u64, u64)> = BTreeMap::new();
    for (pred, truth) in preds.iter().zip(truths) {
        for k in 1..=depth {
            let p = pred.level_labels(k);
            let y = truth.level_labels(k);
            for id in p.union(&y) {
                let entry = counts.entry((k as u8, *id)).or_default();
                match (p.contains(id), y.contains(id)) {
                    (true, true) => entry.0 += 1,
                    (true, false) => entry.1 += 1,
                    (false, true) => entry.2 += 1,
                    (false, false) => unreachable!(),
                }
            }
        }
    }

    let mut per_class = Vec::with_capacity(counts.len());
    let (mut tp_all, mut fp_all, mut fn_all) = (0u64, 0u64, 0u64);
    let mut level_counts = vec![(0u64, 0u64, 0u64); depth];
    let mut level_f1s: Vec<Vec<f64>> = vec![Vec::new(); depth];
    for ((level, id), (tp, fp, fn_)) in &counts {
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        let lc = &mut level_counts[*level as usize - 1];
        lc.0 += tp;
        lc.1 += fp;
        lc.2 += fn_;
        let f1 = f1_from_counts(*tp, *fp, *fn_);
        level_f1s[*level as usize - 1].push(f1);
        per_class.push(ClassStat {
            level: *level,
            code: t.by_id(*id).code.clone(),
            tp: *tp,
            fp: *fp,
            fn_: *fn_,
            precision: ratio(*tp, tp + fp),
            recall: ratio(*tp, tp + fn_),
            f1,
        });
    }

    let macro_f1 = if per_class.is_empty() {
        1.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
    };
    Ok(F1Report {
        micro_f1: f1_from_counts(tp_all, fp_all, fn_all),
        macro_f1,
        per_level_micro: level_counts
            .iter()
            .map(|(tp, fp, fn_)| f1_from_counts(*tp, *fp, *fn_))
            .collect(),
        per_level_macro: level_f1s
            .iter()
            .map(|f1s| {
                if f1s.is_empty() {
                    1.0
                } else {
                    f1s.iter().sum::<f64>() / f1s.len() as f64
                }
            })
            .collect(),
        per_class,
    })
}

/// Prefix-divergence distance between two codes: find the first level where
/// their prefixes differ and return the penalty indexed by the number of
/// levels remaining below the divergence in the truth code. Identical codes
/// have distance zero.
pub fn code_distance(
    truth: &str,
    pred: &str,
    t: &DisciplineTaxonomy,
) -> Result<u32, MetricsError> {
    let truth_node = t.resolve(truth)?;
    let pred_node = t.resolve(pred)?;
    if truth == pred {
        return Ok(0);
    }
    let common = truth_node.level.min(pred_node.level);
    let mut divergence = common + 1;
    for k in 1..=common {
        let span = 1 + 2 * (k as usize - 1);
        if truth[..span] != pred[..span] {
            divergence = k;
            break;
        }
    }
    let remaining = (truth_node.level as i32 - divergence as i32)
        .clamp(0, DISTANCE_PENALTIES.len() as i32 - 1) as usize;
    Ok(DISTANCE_PENALTIES[remaining])
}

/// Set distance at level `k`: the sum over truth labels of the minimum code
/// distance to any predicted label. When exactly one side is empty the
/// distance is `k`; two empty sides agree perfectly.
pub fn level_distance(
    truth: &BTreeSet<String>,
    pred: &BTreeSet<String>,
    k: usize,
    t: &DisciplineTaxonomy,
) -> Result<f64, MetricsError> {
    match (truth.is_empty(), pred.is_empty()) {
        (true, true) => Ok(0.0),
        (true, false) | (false, true) => Ok(k as f64),
        (false, false) => {
            let mut total = 0u64;
            for l in truth {
                let mut best = u32::MAX;
                for l_hat in pred {
                    best = best.min(code_distance(l, l_hat, t)?);
                }
                total += u64::from(best);
            }
            Ok(total as f64)
        }
    }
}

/// Mean per-level distance over an evaluation set.
#[derive(Debug, Clone, Serialize)]
pub struct DistanceReport {
    /// Index 0 holds level 1.
    pub per_level_mean: Vec<f64>,
    pub penalties: [u32; 4],
}

pub fn distance_report(
    preds: &[TopicPath],
    truths: &[TopicPath],
    t: &DisciplineTaxonomy,
) -> Result<DistanceReport, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    let depth = t.depth() as usize;
    let mut sums = vec![0.0; depth];
    for (pred, truth) in preds.iter().zip(truths) {
        for k in 1..=depth {
            let p: BTreeSet<String> = pred
                .level_labels(k)
                .iter()
                .map(|id| t.by_id(*id).code.clone())
                .collect();
            let y: BTreeSet<String> = truth
                .level_labels(k)
                .iter()
                .map(|id| t.by_id(*id).code.clone())
                .collect();
            sums[k - 1] += level_distance(&y, &p, k, t)?;
        }
    }
    let n = preds.len().max(1) as f64;
    Ok(DistanceReport {
        per_level_mean: sums.into_iter().map(|s| s / n).collect(),
        penalties: DISTANCE_PENALTIES,
    })
}

/// Mismatch categories, in priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WrongCase {
    /// Prediction stopped early: the level is empty but the truth is not.
    Lack,
    /// Prediction went too deep: the truth level is empty.
    TooMuch,
    /// Some predicted label's parent is missing from the previous predicted
    /// level.
    Wrong,
    Other,
}

impl WrongCase {
    pub const ALL: [WrongCase; 4] = [
        WrongCase::Lack,
        WrongCase::TooMuch,
        WrongCase::Wrong,
        WrongCase::Other,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WrongCase::Lack => "lack",
            WrongCase::TooMuch => "too_much",
            WrongCase::Wrong => "wrong",
            WrongCase::Other => "other",
        }
    }

    fn index(&self) -> usize {
        match self {
            WrongCase::Lack => 0,
            WrongCase::TooMuch => 1,
            WrongCase::Wrong => 2,
            WrongCase::Other => 3,
        }
    }
}

/// Categorize each level of one prediction: `None` when the level matches
/// the truth exactly. Hierarchy coherence is judged against the model's own
/// previous-level prediction.
pub fn wrong_cases(
    pred: &TopicPath,
    truth: &TopicPath,
    t: &DisciplineTaxonomy,
) -> Vec<Option<WrongCase>> {
    let depth = t.depth() as usize;
    let mut out = Vec::with_capacity(depth);
    for k in 1..=depth {
        let p = pred.level_labels(k);
        let y = truth.level_labels(k);
        if p == y {
            out.push(None);
            continue;
        }
        let case = if p.is_empty() && !y.is_empty() {
            WrongCase::Lack
        } else if y.is_empty() && !p.is_empty() {
            WrongCase::TooMuch
        } else if k > 1 && {
            let prev = pred.level_labels(k - 1);
            p.iter().any(|id| !prev.contains(&t.by_id(*id).parent))
        } {
            WrongCase::Wrong
        } else {
            WrongCase::Other
        };
        out.push(Some(case));
    }
    out
}

/// Wrong-case counts per level; the four categories partition all
/// mismatching `(sample, level)` pairs.
#[derive(Debug, Clone, Serialize)]
pub struct WrongCaseReport {
    /// `per_level[k-1][c]` counts category `c` at level `k`.
    pub per_level: Vec<[u64; 4]>,
    pub totals: [u64; 4],
    pub mismatch_total: u64,
}

impl WrongCaseReport {
    pub fn total_of(&self, case: WrongCase) -> u64 {
        self.totals[case.index()]
    }
}

pub fn wrong_case_report(
    preds: &[TopicPath],
    truths: &[TopicPath],
    t: &DisciplineTaxonomy,
) -> Result<WrongCaseReport, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    let depth = t.depth() as usize;
    let mut per_level = vec![[0u64; 4]; depth];
    let mut totals = [0u64; 4];
    let mut mismatch_total = 0;
    for (pred, truth) in preds.iter().zip(truths) {
        for (k, case) in wrong_cases(pred, truth, t).into_iter().enumerate() {
            if let Some(case) = case {
                per_level[k][case.index()] += 1;
                totals[case.index()] += 1;
                mismatch_total += 1;
            }
        }
    }
    Ok(WrongCaseReport {
        per_level,
        totals,
        mismatch_total,
    })
}

/// Fraction of samples whose predicted label set at `level` equals the
/// truth set exactly.
pub fn exact_set_accuracy(preds: &[TopicPath], truths: &[TopicPath], level: usize) -> f64 {
    if preds.is_empty() {
        return 1.0;
    }
    let hits = preds
        .iter()
        .zip(truths)
        .filter(|(p, y)| p.level_labels(level) == y.level_labels(level))
        .count();
    hits as f64 / preds.len() as f64
}
