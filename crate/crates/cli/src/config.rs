//! Flat key-value pipeline configuration.

use std::path::{Path, PathBuf};

use prefsel::ot::{OtConfig, OtSolver};
use prefsel::select::{CascadeConfig, Selector};
use prefsel::train::WarmupConfig;
use prefsel::{LossKind, Modality, PhaseConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,

    pub text_path: Option<PathBuf>,
    pub caption_path: Option<PathBuf>,
    pub visual_path: Option<PathBuf>,
    pub heldout_path: Option<PathBuf>,
    pub heldout_modality: Modality,
    pub candidates_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub ground_truth_path: Option<PathBuf>,
    pub run_record_path: Option<PathBuf>,

    pub hidden: usize,

    pub caption_budget: usize,
    pub text_budget: usize,
    pub subset_size: usize,
    pub warmup_source: usize,
    pub warmup_target: usize,
    pub warmup_rank: usize,
    pub warmup_lr: f64,
    pub warmup_epochs: usize,
    pub warmup_batch_size: usize,
    /// 0 picks min(256, trainable parameters).
    pub projection_dim: usize,
    pub block_size: usize,
    pub ot_solver: OtSolver,
    pub ot_epsilon: Option<f64>,
    pub selector: Selector,
    pub feature_loss: LossKind,

    pub phase1_lr: f64,
    pub phase2_lr: f64,
    pub phase3_lr: f64,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub phase3_epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub phase_order: Vec<u8>,
    /// Share of the visual set used in phase 3.
    pub visual_fraction: f64,
    /// Also train a visual-only model for the same number of steps.
    pub visual_only_baseline: bool,

    pub win_a: Option<u64>,
    pub win_b: Option<u64>,
    pub win_tie: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let cascade = CascadeConfig::default();
        let warm = WarmupConfig::default();
        let ot = OtConfig::default();
        let [p1, p2, p3] = [1, 2, 3].map(PhaseConfig::desk_scale);
        Self {
            seed: 0,
            text_path: None,
            caption_path: None,
            visual_path: None,
            heldout_path: None,
            heldout_modality: Modality::Visual,
            candidates_path: None,
            checkpoint_path: None,
            ground_truth_path: None,
            run_record_path: None,
            hidden: 16,
            caption_budget: cascade.caption_budget,
            text_budget: cascade.text_budget,
            subset_size: cascade.subset_size,
            warmup_source: cascade.warmup_source,
            warmup_target: cascade.warmup_target,
            warmup_rank: warm.rank,
            warmup_lr: warm.learning_rate,
            warmup_epochs: warm.epochs,
            warmup_batch_size: warm.batch_size,
            projection_dim: 0,
            block_size: ot.block_size,
            ot_solver: ot.solver,
            ot_epsilon: ot.epsilon,
            selector: Selector::Ot,
            feature_loss: cascade.feature_loss,
            phase1_lr: p1.learning_rate,
            phase2_lr: p2.learning_rate,
            phase3_lr: p3.learning_rate,
            phase1_epochs: p1.epochs,
            phase2_epochs: p2.epochs,
            phase3_epochs: p3.epochs,
            batch_size: p1.batch_size,
            loss: p1.loss_kind,
            phase_order: vec![1, 2, 3],
            visual_fraction: 1.0,
            visual_only_baseline: false,
            win_a: None,
            win_b: None,
            win_tie: None,
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {msg}"))
}

/// Reads a TOML file. Relative paths inside it resolve against its directory.
pub fn load<C: for<'de> Deserialize<'de>>(path: &Path) -> Result<C, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

impl PipelineConfig {
    pub fn from_file(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let mut cfg: Self = load(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.paths_mut().into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn paths_mut(&mut self) -> [&mut Option<PathBuf>; 8] {
        [
            &mut self.text_path,
            &mut self.caption_path,
            &mut self.visual_path,
            &mut self.heldout_path,
            &mut self.candidates_path,
            &mut self.checkpoint_path,
            &mut self.ground_truth_path,
            &mut self.run_record_path,
        ]
    }

    /// Existing file named by `field`, or a validation error.
    pub fn require<'a>(&self, field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
        match value {
            None => Err(invalid(field, "required for this command")),
            Some(p) if !p.is_file() => Err(invalid(field, format!("no such file {}", p.display()))),
            Some(p) => Ok(p),
        }
    }

    pub fn optional<'a>(&self, field: &str, value: &'a Option<PathBuf>) -> Result<Option<&'a Path>, CliError> {
        match value {
            None => Ok(None),
            Some(_) => self.require(field, value).map(Some),
        }
    }

    /// Checks every non-path field.
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("hidden", self.hidden),
            ("caption_budget", self.caption_budget),
            ("text_budget", self.text_budget),
            ("subset_size", self.subset_size),
            ("warmup_rank", self.warmup_rank),
            ("warmup_batch_size", self.warmup_batch_size),
            ("block_size", self.block_size),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(name, "must be positive"));
            }
        }
        let rates = [
            ("warmup_lr", self.warmup_lr),
            ("phase1_lr", self.phase1_lr),
            ("phase2_lr", self.phase2_lr),
            ("phase3_lr", self.phase3_lr),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be finite and >= 0"));
            }
        }
        if let Some(e) = self.ot_epsilon {
            if !(e.is_finite() && e > 0.0) {
                return Err(invalid("ot_epsilon", "must be positive"));
            }
        }
        if !(self.visual_fraction > 0.0 && self.visual_fraction <= 1.0) {
            return Err(invalid("visual_fraction", "must lie in (0, 1]"));
        }
        if self.win_a.is_some() != self.win_b.is_some() || (self.win_tie.is_some() && self.win_a.is_none()) {
            return Err(invalid("win_a, win_b", "both are required when counts are given"));
        }
        let mut order = self.phase_order.clone();
        order.sort_unstable();
        if order != [1, 2, 3] {
            return Err(invalid("phase_order", "must be a permutation of [1, 2, 3]"));
        }
        Ok(())
    }

    pub fn cascade(&self, seed: u64) -> CascadeConfig {
        CascadeConfig {
            caption_budget: self.caption_budget,
            text_budget: self.text_budget,
            subset_size: self.subset_size,
            warmup_source: self.warmup_source,
            warmup_target: self.warmup_target,
            warmup: WarmupConfig {
                rank: self.warmup_rank,
                learning_rate: self.warmup_lr,
                epochs: self.warmup_epochs,
                batch_size: self.warmup_batch_size,
                loss_kind: self.feature_loss,
                seed: 0,
            },
            projection_dim: (self.projection_dim > 0).then_some(self.projection_dim),
            feature_loss: self.feature_loss,
            ot: OtConfig {
                block_size: self.block_size,
                solver: self.ot_solver,
                epsilon: self.ot_epsilon,
                ..OtConfig::default()
            },
            selector: self.selector,
            seed,
        }
    }

    /// Phase settings in execution order.
    pub fn phases(&self, seed: u64) -> [PhaseConfig; 3] {
        let rates = [self.phase1_lr, self.phase2_lr, self.phase3_lr];
        let epochs = [self.phase1_epochs, self.phase2_epochs, self.phase3_epochs];
        let mut out = [1u8, 2, 3].map(PhaseConfig::default_for);
        for (slot, &p) in out.iter_mut().zip(&self.phase_order) {
            let i = usize::from(p - 1);
            *slot = PhaseConfig {
                phase_index: p,
                learning_rate: rates[i],
                epochs: epochs[i],
                batch_size: self.batch_size,
                loss_kind: self.loss,
                seed: prefsel::seed::derive_named(seed, &format!("train/phase{p}")),
            };
        }
        out
    }

    /// Non-path settings as JSON, for summaries that must not depend on where files live.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.retain(|k, _| !k.ends_with("_path"));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_fields_by_name() {
        let cfg = PipelineConfig {
            block_size: 0,
            ..Default::default()
        };
        match cfg.validate() {
            Err(CliError::Validation(m)) => assert!(m.starts_with("block_size")),
            other => panic!("{other:?}"),
        }
        let cfg = PipelineConfig {
            phase_order: vec![1, 1, 3],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parses_flat_toml_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 4\ntext_path = \"data/t.jsonl\"\nselector = \"cosine\"\nloss = \"bradley_terry\"\nphase_order = [3, 2, 1]\n").unwrap();
        let cfg = PipelineConfig::from_file(Some(&path)).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.text_path.as_deref(), Some(dir.path().join("data/t.jsonl").as_path()));
        assert_eq!(cfg.selector, Selector::Cosine);
        assert_eq!(cfg.phases(0)[0].phase_index, 3);

        std::fs::write(&path, "sed = 4\n").unwrap();
        assert!(matches!(PipelineConfig::from_file(Some(&path)), Err(CliError::Validation(_))));
    }
}
