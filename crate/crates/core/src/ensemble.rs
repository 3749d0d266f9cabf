//! Combined classifiers: M same-family members differing by seed, fused at
//! score, rank and decision level.
//!
//! Fusion rules, with all tie-breaks pinned down:
//!
//! - MV: each member votes its argmax; most votes wins; ties broken by the
//!   highest summed member score among the tied classes, then by label.
//! - WSUM: per-class weighted sum of member scores; ties by label.
//! - PROD: per-class product of scores floored at 1e-12, renormalized;
//!   ties by label.
//! - BORDA: each member ranks classes by score (ties by label); rank r
//!   from the top earns C-1-r points; most points wins; ties by the WSUM
//!   value, then by label.

use rayon::prelude::*;

use crate::classifiers::{train_family, ClassifierModel, Family, ScoreVector, TrainConfig, TrainingData};
use crate::error::{Error, Result};
use crate::template::{split_indices, SplitSpec, TemplateSet};

pub const PROD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionRule {
    Mv,
    WSum,
    Prod,
    Borda,
}

impl FusionRule {
    pub const ALL: [FusionRule; 4] = [
        FusionRule::Mv,
        FusionRule::WSum,
        FusionRule::Prod,
        FusionRule::Borda,
    ];

    /// Stable identifier used in CSV output.
    pub fn label(&self) -> &'static str {
        match self {
            FusionRule::Mv => "MV",
            FusionRule::WSum => "WSUM",
            FusionRule::Prod => "PROD",
            FusionRule::Borda => "BORDA",
        }
    }

    /// Column header used in printed tables.
    pub fn table_header(&self) -> &'static str {
        match self {
            FusionRule::Mv => "MV",
            FusionRule::WSum => "W.Sum",
            FusionRule::Prod => "Prod",
            FusionRule::Borda => "B.Count",
        }
    }

    pub fn parse(s: &str) -> Option<FusionRule> {
        match s {
            "MV" => Some(FusionRule::Mv),
            "WSUM" => Some(FusionRule::WSum),
            "PROD" => Some(FusionRule::Prod),
            "BORDA" => Some(FusionRule::Borda),
            _ => None,
        }
    }
}

/// How member weights are chosen when training an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    #[default]
    Uniform,
    /// Weights proportional to member accuracy on a held-out 20% of the
    /// training data; members then train on the remaining 80%.
    HeldOutAccuracy,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub family: Family,
    pub members: Vec<ClassifierModel>,
    /// Non-negative, summing to 1.
    pub member_weights: Vec<f64>,
    /// Class labels aligned with score indices.
    pub classes: Vec<String>,
}

impl Ensemble {
    /// Per-member scores for one probe, in member-index order.
    pub fn member_scores(&self, features: &[f64]) -> Result<Vec<ScoreVector>> {
        self.members.iter().map(|m| m.predict(features)).collect()
    }

    pub fn decide(&self, features: &[f64], rule: FusionRule) -> Result<Decision> {
        let scores = self.member_scores(features)?;
        fuse(&scores, &self.classes, rule, &self.member_weights)
    }
}

/// Pairwise disagreement rates between members: symmetric, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityMatrix {
    m: usize,
    values: Vec<f64>,
}

impl DiversityMatrix {
    pub fn size(&self) -> usize {
        self.m
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub predicted_class: String,
    pub fused_scores: ScoreVector,
    pub rule: FusionRule,
}

/// Trains M members with seeds `cfg.seed + i`, so each member sees its own
/// weight initialization and sample order. Members train concurrently;
/// each one is internally sequential, so the result does not depend on the
/// thread count.
pub fn train_ensemble(
    family: Family,
    train: &TemplateSet,
    cfg: &TrainConfig,
    members: usize,
    weighting: WeightScheme,
) -> Result<Ensemble> {
    if members == 0 {
        return Err(Error::EmptyEnsemble);
    }

    let (fit_set, holdout) = match weighting {
        WeightScheme::Uniform => (train.clone(), None),
        WeightScheme::HeldOutAccuracy => {
            let spec = SplitSpec {
                train_fraction: 0.8,
                seed: cfg.seed,
                stratified: true,
            };
            let (fit_idx, hold_idx) = split_indices(train, &spec)?;
            (train.select(&fit_idx), Some(train.select(&hold_idx)))
        }
    };
    let data = TrainingData::from_template_set(&fit_set)?;

    let trained: Vec<Result<ClassifierModel>> = (0..members)
        .into_par_iter()
        .map(|i| {
            let member_cfg = TrainConfig {
                seed: cfg.seed + i as u64,
                ..*cfg
            };
            train_family(family, &data, &member_cfg)
        })
        .collect();
    let mut models = Vec::with_capacity(members);
    for (i, res) in trained.into_iter().enumerate() {
        models.push(res.map_err(|e| Error::MemberTraining {
            index: i,
            source: Box::new(e),
        })?);
    }

    let member_weights = match holdout {
        None => vec![1.0 / members as f64; members],
        Some(hold) => {
            let hold_data = TrainingData::from_template_set(&hold)?;
            let mut acc: Vec<f64> = models
                .iter()
                .map(|m| {
                    let correct = hold_data
                        .features
                        .iter()
                        .zip(&hold_data.labels)
                        .filter(|(x, &y)| {
                            m.predict(x).map(|s| s.argmax() == y).unwrap_or(false)
                        })
                        .count();
                    correct as f64 / hold_data.features.len() as f64
                })
                .collect();
            let total: f64 = acc.iter().sum();
            if total <= 0.0 {
                acc = vec![1.0 / members as f64; members];
            } else {
                for a in &mut acc {
                    *a /= total;
                }
            }
            acc
        }
    };

    Ok(Ensemble {
        family,
        members: models,
        member_weights,
        classes: train.subjects.clone(),
    })
}

/// Entry (i,j) is the fraction of validation templates on which members i
/// and j predict different classes.
pub fn diversity(e: &Ensemble, validation: &TemplateSet) -> Result<DiversityMatrix> {
    if validation.templates.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let m = e.members.len();
    let mut votes = Vec::with_capacity(validation.templates.len());
    for t in &validation.templates {
        let features = t.features_f64();
        let per_member: Vec<usize> = e
            .members
            .iter()
            .map(|model| model.predict(&features).map(|s| s.argmax()))
            .collect::<Result<_>>()?;
        votes.push(per_member);
    }
    let n = votes.len() as f64;
    let mut values = vec![0.0; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let disagreements = votes.iter().filter(|v| v[i] != v[j]).count() as f64;
            values[i * m + j] = disagreements / n;
            values[j * m + i] = values[i * m + j];
        }
    }
    Ok(DiversityMatrix { m, values })
}

fn check_fusion_inputs(
    member_scores: &[ScoreVector],
    classes: &[String],
    weights: &[f64],
) -> Result<()> {
    if member_scores.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    for s in member_scores {
        if s.scores.len() != classes.len() {
            return Err(Error::MismatchedClasses(s.scores.len(), classes.len()));
        }
    }
    let sum: f64 = weights.iter().sum();
    if weights.len() != member_scores.len()
        || weights.iter().any(|&w| w < 0.0)
        || (sum - 1.0).abs() > 1e-6
    {
        return Err(Error::BadWeights);
    }
    Ok(())
}

/// Smallest label among the candidate class indices.
fn lexicographic_pick(candidates: &[usize], classes: &[String]) -> usize {
    *candidates
        .iter()
        .min_by_key(|&&i| &classes[i])
        .expect("candidate list is non-empty")
}

fn weighted_sum(member_scores: &[ScoreVector], weights: &[f64], classes: usize) -> Vec<f64> {
    let mut fused = vec![0.0; classes];
    for (s, &w) in member_scores.iter().zip(weights) {
        for (f, &v) in fused.iter_mut().zip(&s.scores) {
            *f += w * v;
        }
    }
    fused
}

/// Indices with the maximal value (within exact equality).
fn argmax_set(values: &[f64]) -> Vec<usize> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..values.len()).filter(|&i| values[i] == max).collect()
}

/// Member's class ranking: score descending, ties by label ascending.
fn member_ranking(scores: &[f64], classes: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| classes[a].cmp(&classes[b]))
    });
    order
}

/// Applies one fusion rule to M member score vectors.
pub fn fuse(
    member_scores: &[ScoreVector],
    classes: &[String],
    rule: FusionRule,
    weights: &[f64],
) -> Result<Decision> {
    check_fusion_inputs(member_scores, classes, weights)?;
    let c = classes.len();
    let (fused, winner) = match rule {
        FusionRule::Mv => {
            let mut votes = vec![0.0; c];
            for s in member_scores {
                votes[s.argmax()] += 1.0;
            }
            let tied = argmax_set(&votes);
            let winner = if tied.len() == 1 {
                tied[0]
            } else {
                // highest total member score among the tied classes
                let sums: Vec<f64> = tied
                    .iter()
                    .map(|&i| member_scores.iter().map(|s| s.scores[i]).sum())
                    .collect();
                let best_sum = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let finalists: Vec<usize> = tied
                    .iter()
                    .zip(&sums)
                    .filter(|(_, &s)| s == best_sum)
                    .map(|(&i, _)| i)
                    .collect();
                lexicographic_pick(&finalists, classes)
            };
            let total: f64 = votes.iter().sum();
            (votes.iter().map(|&v| v / total).collect::<Vec<_>>(), winner)
        }
        FusionRule::WSum => {
            let fused = weighted_sum(member_scores, weights, c);
            let winner = lexicographic_pick(&argmax_set(&fused), classes);
            (fused, winner)
        }
        FusionRule::Prod => {
            let mut fused = vec![1.0; c];
            for s in member_scores {
                for (f, &v) in fused.iter_mut().zip(&s.scores) {
                    *f *= v.max(PROD_FLOOR);
                }
            }
            let total: f64 = fused.iter().sum();
            for f in &mut fused {
                *f /= total;
            }
            let winner = lexicographic_pick(&argmax_set(&fused), classes);
            (fused, winner)
        }
        FusionRule::Borda => {
            let mut points = vec![0.0; c];
            for s in member_scores {
                for (rank, &class) in member_ranking(&s.scores, classes).iter().enumerate() {
                    points[class] += (c - 1 - rank) as f64;
                }
            }
            let tied = argmax_set(&points);
            let winner = if tied.len() == 1 {
                tied[0]
            } else {
                let wsum = weighted_sum(member_scores, weights, c);
                let best = tied
                    .iter()
                    .map(|&i| wsum[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                let finalists: Vec<usize> =
                    tied.iter().filter(|&&i| wsum[i] == best).copied().collect();
                lexicographic_pick(&finalists, classes)
            };
            let total: f64 = points.iter().sum();
            let fused = if total > 0.0 {
                points.iter().map(|&p| p / total).collect()
            } else {
                vec![1.0 / c as f64; c]
            };
            (fused, winner)
        }
    };
    Ok(Decision {
        predicted_class: classes[winner].clone(),
        fused_scores: ScoreVector { scores: fused },
        rule,
    })
}

/// Parallel cross-view fusion: every member of every view is pooled into
/// one flat member list with uniform weights, then fused with `rule`.
pub fn fuse_views(
    per_view: &[(i16, Vec<ScoreVector>)],
    classes: &[String],
    rule: FusionRule,
) -> Result<Decision> {
    if per_view.is_empty() {
        return Err(Error::NoViews);
    }
    let pooled: Vec<ScoreVector> = per_view
        .iter()
        .flat_map(|(_, scores)| scores.iter().cloned())
        .collect();
    let weights = vec![1.0 / pooled.len() as f64; pooled.len()];
    fuse(&pooled, classes, rule, &weights)
}
