//! Warmup training, three-phase progressive training and the reward-side
//! utilities an RL loop consumes.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Modality, PhaseConfig, PreferenceSample};
use crate::error::{Error, Result};
use crate::losses::{ranked_loss_grad, sample_rewards, LossKind};
use crate::model::{grad_params, sgd_step, ParamVector, RewardModel, Scorer};
use crate::num::Scalar;
use crate::seed::{derive_seed, rng};

pub const REWARD_QUEUE_LEN: usize = 1000;
pub const COLD_START_STEPS: usize = 30;
pub const PPO_BATCH_SIZE: usize = 32;
pub const PPO_STEPS: usize = 15_000;

/// Sample order for one epoch, seeded from `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(derive_seed(seed, epoch as u64)));
    order
}

/// One SGD step on the weighted mean loss of `batch`. Returns the mean loss before the step.
pub fn minibatch_step<T, M>(model: &mut M, batch: &[&PreferenceSample<T>], lr: T, kind: LossKind) -> Result<T>
where
    T: Scalar,
    M: Scorer<T> + ?Sized,
{
    let mut total = ParamVector::zeros(model.param_count());
    let mut loss = T::zero();
    for s in batch {
        let (value, mut g) = grad_params(&*model, s.prompt(), s.responses(), |r| ranked_loss_grad(kind, r))
            .map_err(|e| e.for_sample(s.id()))?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(format!("sample {}", s.id())));
        }
        g.scale(s.weight());
        total.add_assign(&g);
        loss += value;
    }
    let n = T::lit(batch.len() as f64);
    total.scale(T::one() / n);
    sgd_step(model, &total, lr)?;
    Ok(loss / n)
}

/// Runs `epochs` shuffled passes, stopping early once `max_steps` minibatch
/// steps have been taken. Returns the per-epoch mean loss and the step count.
fn run_epochs<T, M>(
    model: &mut M,
    samples: &[PreferenceSample<T>],
    epochs: usize,
    batch_size: usize,
    lr: T,
    kind: LossKind,
    seed: u64,
    max_steps: Option<usize>,
) -> Result<(Vec<f64>, usize)>
where
    T: Scalar,
    M: Scorer<T> + ?Sized,
{
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut trace = Vec::with_capacity(epochs);
    let mut steps = 0;
    'outer: for epoch in 0..epochs {
        let order = epoch_order(samples.len(), seed, epoch);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(batch_size) {
            if max_steps.is_some_and(|m| steps >= m) {
                if count > 0 {
                    trace.push(sum / count as f64);
                }
                break 'outer;
            }
            let batch: Vec<&PreferenceSample<T>> = chunk.iter().map(|&i| &samples[i]).collect();
            let loss = minibatch_step(model, &batch, lr, kind)?;
            sum += loss.to_f64_lossy() * batch.len() as f64;
            count += batch.len();
            steps += 1;
        }
        trace.push(sum / count.max(1) as f64);
    }
    Ok((trace, steps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupConfig {
    pub rank: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_kind: LossKind,
    pub seed: u64,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            learning_rate: 0.2,
            epochs: 10,
            batch_size: 8,
            loss_kind: LossKind::PlackettLuce,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Warmed<T> {
    pub model: RewardModel<T>,
    /// Mean loss per epoch, measured before each step.
    pub loss_trace: Vec<f64>,
}

/// Attaches a fresh adapter to `base` and trains only the adapter on `samples`.
pub fn warmup_train<T: Scalar>(base: &RewardModel<T>, samples: &[PreferenceSample<T>], cfg: &WarmupConfig) -> Result<Warmed<T>> {
    let mut model = base.clone().with_adapter(cfg.rank, derive_seed(cfg.seed, 0))?;
    if cfg.epochs > 0 && samples.is_empty() {
        return Err(Error::InvalidArgument("warmup set is empty".into()));
    }
    let (loss_trace, _) = run_epochs(
        &mut model,
        samples,
        cfg.epochs,
        cfg.batch_size,
        T::lit(cfg.learning_rate),
        cfg.loss_kind,
        derive_seed(cfg.seed, 1),
        None,
    )?;
    Ok(Warmed { model, loss_trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase_index: u8,
    pub dataset: String,
    pub modality: Modality,
    pub config: PhaseConfig,
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainingRun<T> {
    pub phases: Vec<PhaseRecord>,
    pub warnings: Vec<String>,
    pub total_steps: usize,
    pub model: RewardModel<T>,
}

fn phase_modality(p: u8) -> Modality {
    match p {
        1 => Modality::Text,
        2 => Modality::Caption,
        _ => Modality::Visual,
    }
}

/// Trains on text, then caption, then visual data, each phase continuing from
/// the last. Phases run in `configs` order; an order other than 1, 2, 3 is
/// accepted and reported in `warnings`. With `checkpoint_dir` set, the model
/// is saved as `phase{p}.json` after each phase.
pub fn run_three_phase<T: Scalar>(
    model: RewardModel<T>,
    selected_text: &Dataset<T>,
    selected_caption: &Dataset<T>,
    visual: &Dataset<T>,
    configs: &[PhaseConfig; 3],
    checkpoint_dir: Option<&Path>,
) -> Result<TrainingRun<T>> {
    for (d, m) in [
        (selected_text, Modality::Text),
        (selected_caption, Modality::Caption),
        (visual, Modality::Visual),
    ] {
        if d.modality() != m {
            return Err(Error::ModalityMismatch {
                expected: m,
                found: d.modality(),
                context: format!("dataset {}", d.name()),
            });
        }
    }
    for c in configs {
        c.validate()?;
    }
    let order: Vec<u8> = configs.iter().map(|c| c.phase_index).collect();
    let mut warnings = Vec::new();
    if order != [1, 2, 3] {
        warnings.push(format!("phase order violation: ran {order:?}, expected [1, 2, 3]"));
    }

    let mut model = model;
    let mut phases = Vec::with_capacity(3);
    let mut total_steps = 0;
    for cfg in configs {
        let p = cfg.phase_index;
        let data = match p {
            1 => selected_text,
            2 => selected_caption,
            _ => visual,
        };
        let stage = format!("phase {p}");
        if cfg.epochs > 0 && data.is_empty() {
            return Err(Error::InvalidArgument(format!("dataset {} is empty", data.name())).in_stage(stage));
        }
        let (epoch_losses, steps) = run_epochs(
            &mut model,
            data.samples(),
            cfg.epochs,
            cfg.batch_size,
            T::lit(cfg.learning_rate),
            cfg.loss_kind,
            cfg.seed,
            None,
        )
        .map_err(|e| e.in_stage(stage.clone()))?;
        total_steps += steps;
        let checkpoint = match checkpoint_dir {
            Some(dir) => {
                let path = dir.join(format!("phase{p}.json"));
                model.save_checkpoint(&path).map_err(|e| e.in_stage(stage.clone()))?;
                Some(PathBuf::from(format!("phase{p}.json")))
            }
            None => None,
        };
        phases.push(PhaseRecord {
            phase_index: p,
            dataset: data.name().to_string(),
            modality: phase_modality(p),
            config: cfg.clone(),
            epoch_losses,
            steps,
            checkpoint,
        });
    }
    Ok(TrainingRun {
        phases,
        warnings,
        total_steps,
        model,
    })
}

/// Minibatch SGD on one dataset for exactly `total_steps` steps, cycling
/// through reshuffled epochs. Used for single-dataset baselines.
pub fn train_steps<T: Scalar, M: Scorer<T> + ?Sized>(
    model: &mut M,
    data: &Dataset<T>,
    total_steps: usize,
    batch_size: usize,
    lr: f64,
    kind: LossKind,
    seed: u64,
) -> Result<Vec<f64>> {
    if total_steps == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() || batch_size == 0 {
        return Err(Error::InvalidArgument("baseline needs data and a positive batch size".into()));
    }
    let per_epoch = data.len().div_ceil(batch_size);
    let epochs = total_steps.div_ceil(per_epoch);
    let (trace, _) = run_epochs(model, data.samples(), epochs, batch_size, T::lit(lr), kind, seed, Some(total_steps))?;
    Ok(trace)
}

/// Fraction of ordered response pairs the model ranks correctly; exact ties count one half.
pub fn pairwise_accuracy<T: Scalar, M: Scorer<T> + ?Sized>(model: &M, data: &Dataset<T>) -> Result<f64> {
    let (mut correct, mut total) = (0.0, 0usize);
    for s in data.samples() {
        let r = sample_rewards(model, s)?;
        for i in 0..r.len() {
            for j in i + 1..r.len() {
                total += 1;
                if r[i] > r[j] {
                    correct += 1.0;
                } else if r[i] == r[j] {
                    correct += 0.5;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument(format!("dataset {} has no pairs", data.name())));
    }
    Ok(correct / total as f64)
}

/// Sliding window of the most recent rewards with running mean and population variance.
#[derive(Debug, Clone)]
pub struct RewardQueue {
    capacity: usize,
    buf: VecDeque<f64>,
    mean: f64,
    m2: f64,
    since_refresh: usize,
}

impl Default for RewardQueue {
    fn default() -> Self {
        Self::new(REWARD_QUEUE_LEN)
    }
}

impl RewardQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            capacity,
            buf: VecDeque::with_capacity(capacity),
            mean: 0.0,
            m2: 0.0,
            since_refresh: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.buf.iter().copied()
    }

    pub fn push(&mut self, r: f64) {
        if self.buf.len() == self.capacity {
            let old = self.buf.pop_front().expect("full queue");
            self.remove_stat(old);
        }
        self.buf.push_back(r);
        let n = self.buf.len() as f64;
        let delta = r - self.mean;
        self.mean += delta / n;
        self.m2 += delta * (r - self.mean);
        self.since_refresh += 1;
        // Removal updates drift slowly; recompute once per window.
        if self.since_refresh >= self.capacity {
            self.refresh();
        }
    }

    fn remove_stat(&mut self, x: f64) {
        let n = self.buf.len() as f64;
        if n == 0.0 {
            self.mean = 0.0;
            self.m2 = 0.0;
            return;
        }
        let old_mean = self.mean;
        self.mean = (old_mean * (n + 1.0) - x) / n;
        self.m2 = (self.m2 - (x - old_mean) * (x - self.mean)).max(0.0);
    }

    fn refresh(&mut self) {
        let n = self.buf.len() as f64;
        self.mean = if n > 0.0 { self.buf.iter().sum::<f64>() / n } else { 0.0 };
        self.m2 = self.buf.iter().map(|x| (x - self.mean).powi(2)).sum();
        self.since_refresh = 0;
    }

    pub fn clear(&mut self) {
        self.buf.clear();
        self.mean = 0.0;
        self.m2 = 0.0;
        self.since_refresh = 0;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.buf.is_empty() {
            0.0
        } else {
            self.m2 / self.buf.len() as f64
        }
    }
}

/// Pushes `r`, then standardizes it against the window. Returns 0 while the
/// window holds fewer than two rewards.
pub fn reward_standardize(q: &mut RewardQueue, r: f64) -> f64 {
    q.push(r);
    if q.len() < 2 {
        return 0.0;
    }
    (r - q.mean()) / (q.variance().sqrt() + 1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    pub policy: bool,
    pub value: bool,
}

/// Per-step trainability: the policy stays frozen for the first `freeze_steps` steps.
pub fn cold_start_schedule(total_steps: usize, freeze_steps: usize) -> Vec<StepFlags> {
    (0..total_steps)
        .map(|step| StepFlags {
            policy: step >= freeze_steps,
            value: true,
        })
        .collect()
}
