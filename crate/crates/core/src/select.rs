//! Distance scoring against a representative subset and the two-stage cascade.
//!
//! A source sample's score is the mean optimal-transport cost from its
//! gradient feature to the features of every subset member. Lower scores mark
//! samples whose training signal looks like the target's.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PreferenceSample};
use crate::error::{Error, Result};
use crate::gradfeat::{batch_extract, default_target_dim, with_jobs, GradientFeature, ProjectionMatrix};
use crate::losses::LossKind;
use crate::model::{RewardModel, Scorer};
use crate::num::{dot, l2_distance, l2_norm, Scalar};
use crate::ot::{featurize, OtConfig, PointCloud};
use crate::seed::{derive_named, rng};
use crate::train::{warmup_train, WarmupConfig};

/// Uniform sample of `size` ids without replacement, returned in dataset order.
pub fn pick_representative_subset<T: Scalar>(target: &Dataset<T>, size: usize, seed: u64) -> Result<Vec<String>> {
    if size > target.len() {
        return Err(Error::SubsetTooLarge {
            requested: size,
            available: target.len(),
        });
    }
    let mut idx = sample_indices(&mut rng(seed), target.len(), size).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| target.samples()[i].id().to_string()).collect())
}

/// How source features are compared with subset features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    #[default]
    Ot,
    /// Mean `1 - cos` between projected features. Diagnostic.
    Cosine,
    /// Mean Euclidean distance between projected features. Diagnostic.
    L2,
    /// Seeded uniform scores. Diagnostic.
    Random,
}

impl std::str::FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ot" => Ok(Selector::Ot),
            "cosine" => Ok(Selector::Cosine),
            "l2" => Ok(Selector::L2),
            "random" => Ok(Selector::Random),
            other => Err(Error::InvalidArgument(format!("unknown selector {other:?}"))),
        }
    }
}

/// Mean OT cost from each source feature to every subset feature.
pub fn distance_scores<T: Scalar>(
    source: &[GradientFeature<T>],
    subset: &[GradientFeature<T>],
    ot: &OtConfig,
    jobs: Option<usize>,
) -> Result<BTreeMap<String, T>> {
    score_with(Selector::Ot, source, subset, ot, 0, jobs)
}

/// Scores under any [`Selector`]. `seed` only matters for [`Selector::Random`].
pub fn score_with<T: Scalar>(
    selector: Selector,
    source: &[GradientFeature<T>],
    subset: &[GradientFeature<T>],
    ot: &OtConfig,
    seed: u64,
    jobs: Option<usize>,
) -> Result<BTreeMap<String, T>> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    ot.validate()?;
    let dim = subset[0].dim();
    for f in source.iter().chain(subset) {
        if f.dim() != dim {
            return Err(Error::dim(dim, f.dim(), format!("feature of {}", f.sample_id)));
        }
    }
    if selector == Selector::Random {
        use rand::Rng;
        let mut r = rng(seed);
        return Ok(source
            .iter()
            .map(|f| (f.sample_id.clone(), T::lit(r.random::<f64>())))
            .collect());
    }
    let clouds: Vec<PointCloud<T>> = match selector {
        Selector::Ot => subset.iter().map(|g| featurize(g, ot.block_size)).collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    let n = T::lit(subset.len() as f64);
    let score_one = |f: &GradientFeature<T>| -> Result<T> {
        let mut total = T::zero();
        match selector {
            Selector::Ot => {
                let cloud = featurize(f, ot.block_size)?;
                for c in &clouds {
                    total += ot.distance(&cloud, c)?;
                }
            }
            Selector::Cosine => {
                let nf = l2_norm(&f.values);
                for g in subset {
                    let denom = nf * l2_norm(&g.values);
                    let cos = if denom > T::zero() { dot(&f.values, &g.values) / denom } else { T::zero() };
                    total += T::one() - cos;
                }
            }
            Selector::L2 => {
                for g in subset {
                    total += l2_distance(&f.values, &g.values);
                }
            }
            Selector::Random => unreachable!(),
        }
        Ok(total / n)
    };
    let results: Vec<Result<T>> = with_jobs(jobs, || source.par_iter().map(score_one).collect())?;
    let mut out = BTreeMap::new();
    let mut failures = Vec::new();
    for (f, r) in source.iter().zip(results) {
        match r {
            Ok(v) if v.is_finite() => {
                out.insert(f.sample_id.clone(), v);
            }
            Ok(_) => failures.push(Error::NonFinite("score".into()).for_sample(&f.sample_id)),
            Err(e) => failures.push(e.for_sample(&f.sample_id)),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(Error::Batch(failures))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionSnapshot {
    pub subset_size: usize,
    pub budget: usize,
    pub seed: u64,
    pub block_size: usize,
    pub selector: Selector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub scores: BTreeMap<String, f64>,
    /// Ascending score, ties by id.
    pub selected_ids: Vec<String>,
    pub subset_ids: Vec<String>,
    pub config: SelectionSnapshot,
}

/// The `budget` lowest-scoring ids, ascending, ties broken by id.
pub fn select_lowest<T: Scalar>(scores: &BTreeMap<String, T>, budget: usize) -> Result<SelectionReport> {
    if budget > scores.len() {
        return Err(Error::BudgetTooLarge {
            requested: budget,
            available: scores.len(),
        });
    }
    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(k, v)| (k, v.to_f64_lossy())).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(SelectionReport {
        scores: ranked.iter().map(|(k, v)| ((*k).clone(), *v)).collect(),
        selected_ids: ranked[..budget].iter().map(|(k, _)| (*k).clone()).collect(),
        subset_ids: Vec::new(),
        config: SelectionSnapshot {
            budget,
            ..Default::default()
        },
    })
}

/// Settings shared by both cascade stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub caption_budget: usize,
    pub text_budget: usize,
    pub subset_size: usize,
    /// Warmup samples drawn from the dataset being selected.
    pub warmup_source: usize,
    /// Warmup samples drawn from the stage's target dataset.
    pub warmup_target: usize,
    pub warmup: WarmupConfig,
    /// Projected feature dimension; `None` picks [`default_target_dim`].
    pub projection_dim: Option<usize>,
    pub feature_loss: LossKind,
    pub ot: OtConfig,
    pub selector: Selector,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            caption_budget: 60,
            text_budget: 100,
            subset_size: 30,
            warmup_source: 20,
            warmup_target: 30,
            warmup: WarmupConfig::default(),
            projection_dim: None,
            feature_loss: LossKind::PlackettLuce,
            ot: OtConfig::default(),
            selector: Selector::Ot,
            seed: 0,
        }
    }
}

fn random_samples<T: Scalar>(d: &Dataset<T>, n: usize, seed: u64) -> Vec<PreferenceSample<T>> {
    let n = n.min(d.len());
    let mut idx = sample_indices(&mut rng(seed), d.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| d.samples()[i].clone()).collect()
}

/// Everything one stage produced, for inspection.
#[derive(Debug, Clone)]
pub struct StageOutcome<T> {
    pub report: SelectionReport,
    pub warm_model: RewardModel<T>,
    pub warmup_loss: Vec<f64>,
}

/// Scores `source` against a representative subset of `target` and keeps `budget` samples.
///
/// The stage warms its own adapter on a mix of `warmup_source` samples of
/// `source` and `warmup_target` samples of `target`.
pub fn select_stage<T: Scalar>(
    label: &str,
    source: &Dataset<T>,
    target: &Dataset<T>,
    base: &RewardModel<T>,
    budget: usize,
    cfg: &CascadeConfig,
    jobs: Option<usize>,
) -> Result<StageOutcome<T>> {
    let seed_for = |what: &str| derive_named(cfg.seed, &format!("{label}/{what}"));
    let mut mix = random_samples(source, cfg.warmup_source, seed_for("warmup-source"));
    mix.extend(random_samples(target, cfg.warmup_target, seed_for("warmup-target")));
    let warm_cfg = WarmupConfig {
        seed: seed_for("warmup"),
        ..cfg.warmup.clone()
    };
    let warmed = warmup_train(base, &mix, &warm_cfg)?;
    let d = warmed.model.trainable_count();
    let k = cfg.projection_dim.unwrap_or_else(|| default_target_dim(d));
    let proj = ProjectionMatrix::gaussian(seed_for("projection"), d, k)?;

    let subset_seed = seed_for("subset");
    let subset_ids = pick_representative_subset(target, cfg.subset_size, subset_seed)?;
    let subset = target.subset(format!("{}-subset", target.name()), &subset_ids)?;
    let source_feats = batch_extract(&warmed.model, source.samples(), &proj, cfg.feature_loss, jobs)?;
    let subset_feats = batch_extract(&warmed.model, subset.samples(), &proj, cfg.feature_loss, jobs)?;
    let scores = score_with(cfg.selector, &source_feats, &subset_feats, &cfg.ot, seed_for("random-scores"), jobs)?;
    let mut report = select_lowest(&scores, budget)?;
    report.subset_ids = subset_ids;
    report.config = SelectionSnapshot {
        subset_size: cfg.subset_size,
        budget,
        seed: subset_seed,
        block_size: cfg.ot.block_size,
        selector: cfg.selector,
    };
    Ok(StageOutcome {
        report,
        warm_model: warmed.model,
        warmup_loss: warmed.loss_trace,
    })
}

#[derive(Debug, Clone)]
pub struct CascadeOutcome<T> {
    pub caption: StageOutcome<T>,
    pub text: StageOutcome<T>,
}

/// Selects caption data against the visual set, then text data against the
/// selected caption data.
pub fn cascade_select<T: Scalar>(
    d_text: &Dataset<T>,
    d_caption: &Dataset<T>,
    d_visual: &Dataset<T>,
    base: &RewardModel<T>,
    cfg: &CascadeConfig,
    jobs: Option<usize>,
) -> Result<CascadeOutcome<T>> {
    let caption = select_stage("stage1", d_caption, d_visual, base, cfg.caption_budget, cfg, jobs)
        .map_err(|e| e.in_stage("stage 1 (caption vs visual)"))?;
    let chosen = d_caption.subset(format!("{}-selected", d_caption.name()), &caption.report.selected_ids)?;
    let text = select_stage("stage2", d_text, &chosen, base, cfg.text_budget, cfg, jobs)
        .map_err(|e| e.in_stage("stage 2 (text vs selected caption)"))?;
    Ok(CascadeOutcome { caption, text })
}

/// Scores text directly against the visual set, skipping the caption stage.
pub fn direct_select<T: Scalar>(
    d_text: &Dataset<T>,
    d_visual: &Dataset<T>,
    base: &RewardModel<T>,
    cfg: &CascadeConfig,
    jobs: Option<usize>,
) -> Result<StageOutcome<T>> {
    select_stage("direct", d_text, d_visual, base, cfg.text_budget, cfg, jobs).map_err(|e| e.in_stage("direct (text vs visual)"))
}

/// Fraction of `wanted` that appears in `selected`.
pub fn recall(selected: &[String], wanted: &[String]) -> f64 {
    if wanted.is_empty() {
        return 1.0;
    }
    let set: std::collections::HashSet<&str> = selected.iter().map(String::as_str).collect();
    wanted.iter().filter(|w| set.contains(w.as_str())).count() as f64 / wanted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;

    fn feat(id: &str, v: &[f64]) -> GradientFeature<f64> {
        GradientFeature {
            sample_id: id.into(),
            seed: 0,
            source_dim: v.len(),
            values: v.to_vec(),
        }
    }

    fn dataset(n: usize) -> Dataset<f64> {
        let samples = (0..n)
            .map(|i| {
                PreferenceSample::from_raw(format!("s{i:02}"), vec![i as f64], vec![vec![1.0], vec![0.0]], Modality::Visual).unwrap()
            })
            .collect();
        Dataset::new("d", Modality::Visual, samples).unwrap()
    }

    #[test]
    fn subset_edges() {
        let d = dataset(5);
        assert_eq!(pick_representative_subset(&d, 5, 1).unwrap().len(), 5);
        assert_eq!(pick_representative_subset(&dataset(1), 1, 9).unwrap(), vec!["s00"]);
        assert_eq!(pick_representative_subset(&d, 3, 4).unwrap(), pick_representative_subset(&d, 3, 4).unwrap());
        assert!(matches!(pick_representative_subset(&d, 6, 0), Err(Error::SubsetTooLarge { .. })));
    }

    #[test]
    fn self_score_is_zero_and_mean_is_mean() {
        let ot = OtConfig {
            block_size: 1,
            ..Default::default()
        };
        let a = feat("a", &[0.0]);
        let s = distance_scores(&[a.clone()], &[a.clone()], &ot, None).unwrap();
        assert_eq!(s["a"], 0.0);
        let s = distance_scores(&[a], &[feat("b", &[1.0]), feat("c", &[3.0])], &ot, None).unwrap();
        assert!((s["a"] - 2.0).abs() < 1e-12);
        assert!(matches!(distance_scores::<f64>(&[], &[], &ot, None), Err(Error::EmptySubset)));
    }

    #[test]
    fn lowest_with_ties() {
        let scores: BTreeMap<String, f64> = [("a", 2.0), ("b", 1.0), ("c", 3.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert_eq!(select_lowest(&scores, 2).unwrap().selected_ids, vec!["b", "a"]);
        assert_eq!(select_lowest(&scores, 3).unwrap().selected_ids, vec!["b", "a", "c"]);
        let tied: BTreeMap<String, f64> = [("z", 1.0), ("m", 1.0), ("a", 1.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert_eq!(select_lowest(&tied, 2).unwrap().selected_ids, vec!["a", "m"]);
        assert!(matches!(select_lowest(&tied, 4), Err(Error::BudgetTooLarge { .. })));
    }

    #[test]
    fn recall_counts_hits() {
        let s = vec!["a".to_string(), "b".to_string()];
        assert_eq!(recall(&s, &["a".to_string(), "c".to_string()]), 0.5);
    }
}
