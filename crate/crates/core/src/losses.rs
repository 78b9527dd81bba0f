//! Preference losses over scalar rewards and their analytic gradients.
//!
//! | Loss | Operands | Form |
//! |------|----------|------|
//! | [`bt_loss`] | chosen/rejected rewards | `-ln σ(r_w - r_l)` |
//! | [`pl_loss`] | `k` rewards, best first | `-Σ_i ln( e^{r_i} / Σ_{j≥i} e^{r_j} )` |
//! | [`dpo_loss`] | policy and reference log-probs | `-ln σ(β(Δ_w - Δ_l))` |
//!
//! Everything goes through softplus / log-sum-exp, so any finite input gives
//! a finite loss.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureVector, PreferenceSample};
use crate::error::{Error, Result};
use crate::model::Scorer;
use crate::num::{log_sum_exp_offsets, sigmoid, softplus, Scalar};

/// Which reward loss a training stage optimizes on a ranked sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Pairwise loss on the best and worst response of each sample.
    BradleyTerry,
    /// Listwise loss over the full ranking; identical to Bradley-Terry when `k = 2`.
    PlackettLuce,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bradley_terry" | "bt" => Ok(LossKind::BradleyTerry),
            "plackett_luce" | "pl" => Ok(LossKind::PlackettLuce),
            other => Err(Error::InvalidArgument(format!("unknown loss kind {other:?}"))),
        }
    }
}

pub fn bt_loss<T: Scalar>(r_w: T, r_l: T) -> T {
    softplus(-(r_w - r_l))
}

/// `(∂/∂r_w, ∂/∂r_l)` of [`bt_loss`].
pub fn bt_grad<T: Scalar>(r_w: T, r_l: T) -> (T, T) {
    let s = sigmoid(-(r_w - r_l));
    (-s, s)
}

pub fn pl_loss<T: Scalar>(rewards: &[T]) -> Result<T> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::ListTooShort(k));
    }
    let mut offsets = Vec::with_capacity(k);
    let mut total = T::zero();
    for i in 0..k {
        // ln Σ_{j≥i} e^{r_j - r_i}; the i = k-1 term is ln 1 = 0.
        offsets.clear();
        offsets.extend(rewards[i..].iter().map(|&r| r - rewards[i]));
        total += log_sum_exp_offsets(&offsets);
    }
    Ok(total)
}

/// Gradient of [`pl_loss`] with respect to each reward.
pub fn pl_grad<T: Scalar>(rewards: &[T]) -> Result<Vec<T>> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::ListTooShort(k));
    }
    let mut grad = vec![T::zero(); k];
    for i in 0..k {
        let tail = &rewards[i..];
        let max = tail.iter().copied().fold(T::neg_infinity(), T::max);
        let weights: Vec<T> = tail.iter().map(|&r| (r - max).exp()).collect();
        let z: T = weights.iter().copied().sum();
        for (j, w) in weights.into_iter().enumerate() {
            grad[i + j] += w / z;
        }
        grad[i] -= T::one();
    }
    Ok(grad)
}

/// DPO margin `β((logp_w - ref_w) - (logp_l - ref_l))`.
pub fn dpo_margin<T: Scalar>(logp_w: T, logp_l: T, ref_logp_w: T, ref_logp_l: T, beta: T) -> T {
    beta * (logp_w - ref_logp_w) - beta * (logp_l - ref_logp_l)
}

pub fn dpo_loss<T: Scalar>(logp_w: T, logp_l: T, ref_logp_w: T, ref_logp_l: T, beta: T) -> T {
    softplus(-dpo_margin(logp_w, logp_l, ref_logp_w, ref_logp_l, beta))
}

/// Gradient of [`dpo_loss`] in argument order `(logp_w, logp_l, ref_logp_w, ref_logp_l)`.
pub fn dpo_grad<T: Scalar>(logp_w: T, logp_l: T, ref_logp_w: T, ref_logp_l: T, beta: T) -> [T; 4] {
    let s = sigmoid(-dpo_margin(logp_w, logp_l, ref_logp_w, ref_logp_l, beta)) * beta;
    [-s, s, s, -s]
}

/// Loss and reward-gradient of a ranked list of rewards under `kind`.
///
/// For [`LossKind::BradleyTerry`] only the first and last rewards receive
/// gradient.
pub fn ranked_loss_grad<T: Scalar>(kind: LossKind, rewards: &[T]) -> Result<(T, Vec<T>)> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::ListTooShort(k));
    }
    match kind {
        LossKind::PlackettLuce => Ok((pl_loss(rewards)?, pl_grad(rewards)?)),
        LossKind::BradleyTerry => {
            let (w, l) = (rewards[0], rewards[k - 1]);
            let (gw, gl) = bt_grad(w, l);
            let mut g = vec![T::zero(); k];
            g[0] = gw;
            g[k - 1] += gl;
            Ok((bt_loss(w, l), g))
        }
    }
}

pub fn ranked_loss<T: Scalar>(kind: LossKind, rewards: &[T]) -> Result<T> {
    match kind {
        LossKind::PlackettLuce => pl_loss(rewards),
        LossKind::BradleyTerry => {
            let k = rewards.len();
            if k < 2 {
                return Err(Error::ListTooShort(k));
            }
            Ok(bt_loss(rewards[0], rewards[k - 1]))
        }
    }
}

/// Rewards assigned by `model` to each response of `sample`, in rank order.
pub fn sample_rewards<T: Scalar, M: Scorer<T> + ?Sized>(model: &M, sample: &PreferenceSample<T>) -> Result<Vec<T>> {
    sample
        .responses()
        .iter()
        .map(|r| model.score(sample.prompt(), r))
        .collect()
}

/// Reward loss of one sample under `model`.
pub fn sample_loss<T: Scalar, M: Scorer<T> + ?Sized>(model: &M, sample: &PreferenceSample<T>, kind: LossKind) -> Result<T> {
    ranked_loss(kind, &sample_rewards(model, sample)?)
}

/// Chosen-versus-rejected triples for the pairwise loss.
#[derive(Debug, Clone)]
pub struct PairwiseBatch<T> {
    items: Vec<(FeatureVector<T>, FeatureVector<T>, FeatureVector<T>)>,
}

impl<T: Scalar> PairwiseBatch<T> {
    pub fn new(items: Vec<(FeatureVector<T>, FeatureVector<T>, FeatureVector<T>)>) -> Result<Self> {
        let Some((x0, w0, _)) = items.first() else {
            return Err(Error::InvalidArgument("pairwise batch is empty".into()));
        };
        let (px, py) = (x0.dim(), w0.dim());
        for (x, w, l) in &items {
            if x.dim() != px {
                return Err(Error::dim(px, x.dim(), "batch prompt"));
            }
            for y in [w, l] {
                if y.dim() != py {
                    return Err(Error::dim(py, y.dim(), "batch response"));
                }
            }
        }
        Ok(Self { items })
    }

    /// Best-versus-worst view of ranked samples.
    pub fn from_samples(samples: &[PreferenceSample<T>]) -> Result<Self> {
        Self::new(
            samples
                .iter()
                .map(|s| {
                    let (w, l) = s.extreme_pair();
                    (s.prompt().clone(), w.clone(), l.clone())
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn mean_loss<M: Scorer<T>>(&self, model: &M) -> Result<T> {
        let mut total = T::zero();
        for (x, w, l) in &self.items {
            total += bt_loss(model.score(x, w)?, model.score(x, l)?);
        }
        Ok(total / T::lit(self.items.len() as f64))
    }
}

/// Prompts with full rankings for the listwise loss.
#[derive(Debug, Clone)]
pub struct RankedBatch<T> {
    items: Vec<(FeatureVector<T>, Vec<FeatureVector<T>>)>,
}

impl<T: Scalar> RankedBatch<T> {
    pub fn new(items: Vec<(FeatureVector<T>, Vec<FeatureVector<T>>)>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("ranked batch is empty".into()));
        }
        for (_, ys) in &items {
            if ys.len() < 2 {
                return Err(Error::ListTooShort(ys.len()));
            }
        }
        Ok(Self { items })
    }

    pub fn from_samples(samples: &[PreferenceSample<T>]) -> Result<Self> {
        Self::new(
            samples
                .iter()
                .map(|s| (s.prompt().clone(), s.responses().to_vec()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn mean_loss<M: Scorer<T>>(&self, model: &M) -> Result<T> {
        let mut total = T::zero();
        for (x, ys) in &self.items {
            let rewards = ys.iter().map(|y| model.score(x, y)).collect::<Result<Vec<_>>>()?;
            total += pl_loss(&rewards)?;
        }
        Ok(total / T::lit(self.items.len() as f64))
    }
}
