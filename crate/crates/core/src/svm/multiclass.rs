use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binary::{label_of, train_binary, BinarySvmModel};
use super::kernel::KernelSpec;
use super::smo::SolverOptions;
use super::{prepare_input, TrainingSet};
use crate::features::{FeatureVector, Normalizer};
use crate::{Error, Result};

/// Identifier stored in model files for the vote tie-break.
pub const TIE_BREAK_RULE: &str = "max-summed-abs-decision-then-lowest-label";

/// Binary sub-model separating `negative` (decision < 0) from `positive`
/// (decision ≥ 0). `negative < positive` always.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub negative: i64,
    pub positive: i64,
    pub model: BinarySvmModel,
}

/// One-vs-one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiClassModel {
    /// Ascending class labels.
    pub classes: Vec<i64>,
    /// Sub-models in lexicographic `(negative, positive)` order.
    pub pairs: Vec<PairModel>,
    pub tie_break: String,
    pub normalizer: Option<Normalizer>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDecision {
    pub negative: i64,
    pub positive: i64,
    pub decision: f64,
    pub winner: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiClassPrediction {
    pub label: i64,
    /// Votes per class, in `classes` order.
    pub votes: Vec<(i64, usize)>,
    /// Every pairwise contest; each class takes part in `K − 1` of them.
    pub contests: Vec<PairDecision>,
}

impl MultiClassModel {
    /// Assembles a model from trained sub-models, checking that every
    /// unordered class pair is covered exactly once.
    pub fn from_pairs(classes: Vec<i64>, mut pairs: Vec<PairModel>) -> Result<Self> {
        let mut sorted = classes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != classes.len() || sorted.len() < 2 {
            return Err(Error::invalid("need at least 2 distinct classes"));
        }
        pairs.sort_by_key(|p| (p.negative, p.positive));
        let expected: Vec<(i64, i64)> = sorted
            .iter()
            .enumerate()
            .flat_map(|(i, &a)| sorted[i + 1..].iter().map(move |&b| (a, b)))
            .collect();
        let got: Vec<(i64, i64)> = pairs.iter().map(|p| (p.negative, p.positive)).collect();
        if got != expected {
            return Err(Error::invalid(format!(
                "expected {} sub-models for {} classes, got pairs {got:?}",
                expected.len(),
                sorted.len()
            )));
        }
        Ok(MultiClassModel {
            classes: sorted,
            pairs,
            tie_break: TIE_BREAK_RULE.to_string(),
            normalizer: None,
        })
    }

    pub fn with_normalizer(mut self, normalizer: Normalizer) -> Self {
        self.normalizer = Some(normalizer);
        self
    }

    pub fn dim(&self) -> Option<usize> {
        self.normalizer
            .as_ref()
            .map(Normalizer::dim)
            .or_else(|| self.pairs.iter().find_map(|p| p.model.support_vectors.first().map(Vec::len)))
    }
}

pub fn train_multiclass(
    set: &TrainingSet<i64>,
    c: f64,
    kernel: &KernelSpec,
    opts: &SolverOptions,
) -> Result<MultiClassModel> {
    let mut classes = set.targets.clone();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid(format!(
            "multi-class training needs at least 2 classes, found {}",
            classes.len()
        )));
    }
    let jobs: Vec<(i64, i64)> = classes
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| classes[i + 1..].iter().map(move |&b| (a, b)))
        .collect();
    let pairs = jobs
        .par_iter()
        .map(|&(neg, pos)| {
            let idx: Vec<usize> = (0..set.len())
                .filter(|&i| set.targets[i] == neg || set.targets[i] == pos)
                .collect();
            let sub = TrainingSet {
                vectors: idx.iter().map(|&i| set.vectors[i].clone()).collect(),
                targets: idx.iter().map(|&i| if set.targets[i] == pos { 1 } else { -1 }).collect(),
            };
            let mut model = train_binary(&sub, c, kernel, opts)?;
            for s in &mut model.support_indices {
                *s = idx[*s];
            }
            Ok(PairModel {
                negative: neg,
                positive: pos,
                model,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MultiClassModel::from_pairs(classes, pairs)
}

pub fn predict_multiclass(model: &MultiClassModel, x: &FeatureVector) -> Result<MultiClassPrediction> {
    let dim = model.dim().unwrap_or(x.dim());
    let input = prepare_input(model.normalizer.as_ref(), dim, x)?;
    let contests: Vec<PairDecision> = model
        .pairs
        .iter()
        .map(|p| {
            let decision = p.model.decision_raw(&input);
            PairDecision {
                negative: p.negative,
                positive: p.positive,
                decision,
                winner: if label_of(decision) > 0 { p.positive } else { p.negative },
            }
        })
        .collect();
    let (label, votes) = resolve_votes(&model.classes, &contests);
    Ok(MultiClassPrediction { label, votes, contests })
}

/// Majority vote. Ties go to the class with the largest summed |decision|
/// over the contests it won, then to the lowest label.
pub fn resolve_votes(classes: &[i64], contests: &[PairDecision]) -> (i64, Vec<(i64, usize)>) {
    let mut tally: BTreeMap<i64, (usize, f64)> = classes.iter().map(|&c| (c, (0, 0.0))).collect();
    for c in contests {
        let entry = tally.entry(c.winner).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += c.decision.abs();
    }
    let mut best: Option<(i64, usize, f64)> = None;
    // BTreeMap iterates labels ascending, so strict comparisons keep the lowest.
    for (&label, &(votes, strength)) in &tally {
        let better = match best {
            None => true,
            Some((_, bv, bs)) => votes > bv || (votes == bv && strength > bs),
        };
        if better {
            best = Some((label, votes, strength));
        }
    }
    let votes = tally.iter().map(|(&l, &(v, _))| (l, v)).collect();
    (best.map_or(classes[0], |b| b.0), votes)
}
