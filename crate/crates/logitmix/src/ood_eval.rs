//! OOD scoring, the threshold decision rule, and the detection metrics:
//! AUROC (rank-based with half-credit ties), FPR at 95% TPR over discrete
//! observed thresholds, and ID classification accuracy.

use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::model::{softmax_probs, MlpParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Msp,
    MaxLogit,
    LogitL2,
    Energy,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 4] = [
        ScoreKind::Msp,
        ScoreKind::MaxLogit,
        ScoreKind::LogitL2,
        ScoreKind::Energy,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "msp" => Ok(ScoreKind::Msp),
            "max_logit" => Ok(ScoreKind::MaxLogit),
            "logit_l2" => Ok(ScoreKind::LogitL2),
            "energy" => Ok(ScoreKind::Energy),
            other => Err(Error::invalid(format!("unknown score kind {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreKind::Msp => "msp",
            ScoreKind::MaxLogit => "max_logit",
            ScoreKind::LogitL2 => "logit_l2",
            ScoreKind::Energy => "energy",
        }
    }
}

/// Higher score means more ID-like, for every kind.
pub fn score(logits: &[f64], kind: ScoreKind) -> Result<f64> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("score requires non-empty finite logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(match kind {
        ScoreKind::Msp => {
            let probs = softmax_probs(&Tensor::vector(logits.to_vec()))?;
            probs.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        }
        ScoreKind::MaxLogit => max,
        ScoreKind::LogitL2 => logits.iter().map(|v| v * v).sum::<f64>().sqrt(),
        // stabilized logsumexp
        ScoreKind::Energy => max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    In,
    Out,
}

/// Boundary inclusive: a score equal to the threshold is ruled in.
pub fn decide(score: f64, tau: f64) -> Decision {
    if score >= tau {
        Decision::In
    } else {
        Decision::Out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
    pub score_kind: ScoreKind,
}

impl ScoreSet {
    fn validate(&self) -> Result<()> {
        if self.id_scores.is_empty() || self.ood_scores.is_empty() {
            return Err(Error::invalid("both score sides must be non-empty"));
        }
        if self
            .id_scores
            .iter()
            .chain(&self.ood_scores)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("scores must be finite"));
        }
        Ok(())
    }
}

/// Mann-Whitney AUROC: (pairs with id > ood + half the ties) / (n_id * n_ood),
/// computed via average ranks in O(n log n).
pub fn auroc(scores: &ScoreSet) -> Result<f64> {
    scores.validate()?;
    let n_id = scores.id_scores.len();
    let n_ood = scores.ood_scores.len();
    let mut all: Vec<(f64, bool)> = scores
        .id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(scores.ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // average rank over tie groups; ranks are 1-based
    let mut id_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                id_rank_sum += avg_rank;
            }
        }
        i = j;
    }
    let u = id_rank_sum - (n_id * (n_id + 1)) as f64 / 2.0;
    Ok(u / (n_id as f64 * n_ood as f64))
}

/// FPR at the largest discrete threshold reaching TPR >= 0.95. Candidate
/// thresholds are the observed scores plus an accept-everything fallback;
/// no interpolation.
pub fn fpr_at_95_tpr(scores: &ScoreSet) -> Result<f64> {
    scores.validate()?;
    let mut candidates: Vec<f64> = scores
        .id_scores
        .iter()
        .chain(&scores.ood_scores)
        .copied()
        .collect();
    candidates.sort_by(|a, b| b.partial_cmp(a).unwrap());
    candidates.dedup();

    let n_id = scores.id_scores.len() as f64;
    let n_ood = scores.ood_scores.len() as f64;
    let tpr = |tau: f64| scores.id_scores.iter().filter(|&&s| s >= tau).count() as f64 / n_id;
    let fpr = |tau: f64| scores.ood_scores.iter().filter(|&&s| s >= tau).count() as f64 / n_ood;

    for tau in candidates {
        if tpr(tau) >= 0.95 {
            return Ok(fpr(tau));
        }
    }
    // below every score: everything is ruled in
    Ok(1.0)
}

/// Fraction of rows whose argmax logit equals the label; argmax ties break
/// toward the lowest class index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.shape().len() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "accuracy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| argmax(logits.row(i)) == label)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Model accuracy over a labeled set.
pub fn accuracy_of(params: &MlpParams, set: &LabeledSet) -> Result<f64> {
    let logits = params.forward(&set.to_tensor()?)?;
    accuracy(&logits, &set.labels)
}

/// Score every row of a logit dump.
pub fn scores_from_logits(logit_rows: &[Vec<f64>], kind: ScoreKind) -> Result<Vec<f64>> {
    logit_rows.iter().map(|r| score(r, kind)).collect()
}

/// Build a score set from a model and raw ID / OOD inputs.
pub fn score_set(
    params: &MlpParams,
    id_inputs: &[Vec<f64>],
    ood_inputs: &[Vec<f64>],
    kind: ScoreKind,
) -> Result<ScoreSet> {
    let one_side = |inputs: &[Vec<f64>]| -> Result<Vec<f64>> {
        inputs
            .iter()
            .map(|x| score(&params.forward_one(x)?, kind))
            .collect()
    };
    Ok(ScoreSet {
        id_scores: one_side(id_inputs)?,
        ood_scores: one_side(ood_inputs)?,
        score_kind: kind,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMetrics {
    pub score_kind: ScoreKind,
    pub auroc: f64,
    pub fpr95: f64,
    pub id_mean: f64,
    pub id_std: f64,
    pub ood_mean: f64,
    pub ood_std: f64,
}

/// Per-run metrics: ID accuracy plus detection metrics for each score kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub accuracy: f64,
    pub per_kind: Vec<ScoreMetrics>,
}

impl MetricsReport {
    pub fn compute(
        method: &str,
        acc: f64,
        score_sets: &[ScoreSet],
    ) -> Result<MetricsReport> {
        let per_kind = score_sets
            .iter()
            .map(|s| {
                let (id_mean, id_std) = mean_std(&s.id_scores);
                let (ood_mean, ood_std) = mean_std(&s.ood_scores);
                Ok(ScoreMetrics {
                    score_kind: s.score_kind,
                    auroc: auroc(s)?,
                    fpr95: fpr_at_95_tpr(s)?,
                    id_mean,
                    id_std,
                    ood_mean,
                    ood_std,
                })
            })
            .collect::<Result<_>>()?;
        Ok(MetricsReport {
            method: method.to_string(),
            accuracy: acc,
            per_kind,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,score_kind,accuracy,auroc_x100,fpr95_x100,id_mean,id_std,ood_mean,ood_std\n",
        );
        for m in &self.per_kind {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                self.method,
                m.score_kind.name(),
                self.accuracy,
                m.auroc * 100.0,
                m.fpr95 * 100.0,
                m.id_mean,
                m.id_std,
                m.ood_mean,
                m.ood_std
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics report serializes")
    }
}
