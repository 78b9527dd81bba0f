//! Reward scorers over `(prompt, response)` feature pairs.
//!
//! [`RewardModel`] is a two-layer tanh perceptron over the concatenation
//! `[prompt; response]`:
//!
//! ```text
//! r(x, y) = W2 · tanh(W1 · [x; y] + b1) + b2
//! ```
//!
//! A [`LowRankAdapter`] replaces `W1` by `W1 + A1·B1` and `W2` by `W2 + A2·B2`
//! and freezes every base parameter while attached.
//!
//! # Parameter order
//!
//! The flat [`ParamVector`] layout is fixed:
//!
//! ```text
//! W1 (hidden × input, row-major) | b1 (hidden) | W2 (hidden) | b2 (1)
//!   [adapter only] A1 (hidden × r) | B1 (r × input) | A2 (1 × r) | B2 (r × hidden)
//! ```
//!
//! where `input = prompt_dim + response_dim`.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::FeatureVector;
use crate::error::{Error, Result};
use crate::num::{all_finite, Scalar};

/// Flat view of every parameter of a scorer, in the scorer's documented order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T>(Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.0 {
            *v *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &ParamVector<T>) {
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

/// A differentiable scalar reward `r(prompt, response)`.
pub trait Scorer<T: Scalar> {
    fn prompt_dim(&self) -> usize;
    fn response_dim(&self) -> usize;

    /// Forward pass on slices whose lengths are already known to match.
    fn forward(&self, prompt: &[T], response: &[T]) -> T;

    /// Length of the full [`ParamVector`], frozen slots included.
    fn param_count(&self) -> usize;

    /// Slots of the [`ParamVector`] updated by training.
    fn trainable_range(&self) -> Range<usize>;

    /// Adds `upstream · ∂r/∂θ` into `grad` (full layout). Frozen slots are
    /// left untouched.
    fn accumulate_grad(&self, prompt: &[T], response: &[T], upstream: T, grad: &mut [T]);

    fn params(&self) -> ParamVector<T>;

    fn set_params(&mut self, params: &ParamVector<T>) -> Result<()>;

    fn trainable_count(&self) -> usize {
        self.trainable_range().len()
    }

    fn check_dims(&self, prompt: &FeatureVector<T>, response: &FeatureVector<T>) -> Result<()> {
        if prompt.dim() != self.prompt_dim() {
            return Err(Error::dim(self.prompt_dim(), prompt.dim(), "prompt"));
        }
        if response.dim() != self.response_dim() {
            return Err(Error::dim(self.response_dim(), response.dim(), "response"));
        }
        Ok(())
    }

    fn score(&self, prompt: &FeatureVector<T>, response: &FeatureVector<T>) -> Result<T> {
        self.check_dims(prompt, response)?;
        Ok(self.forward(prompt.values(), response.values()))
    }
}

/// Low-rank factors for both weight matrices of a [`RewardModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankAdapter<T> {
    rank: usize,
    a1: Vec<T>,
    b1: Vec<T>,
    a2: Vec<T>,
    b2: Vec<T>,
}

impl<T: Scalar> LowRankAdapter<T> {
    pub const INIT_STD: f64 = 0.01;

    /// `A ~ N(0, 0.01²)`, `B = 0`: the adapted model starts equal to the base.
    fn init(rank: usize, hidden: usize, input: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, Self::INIT_STD).expect("valid std");
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect() };
        let a1 = draw(hidden * rank);
        let a2 = draw(rank);
        Self {
            rank,
            a1,
            b1: vec![T::zero(); rank * input],
            a2,
            b2: vec![T::zero(); rank * hidden],
        }
    }

    fn zeros(rank: usize, hidden: usize, input: usize) -> Self {
        Self {
            rank,
            a1: vec![T::zero(); hidden * rank],
            b1: vec![T::zero(); rank * input],
            a2: vec![T::zero(); rank],
            b2: vec![T::zero(); rank * hidden],
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn len(&self) -> usize {
        self.a1.len() + self.b1.len() + self.a2.len() + self.b2.len()
    }
}

/// `out[i][c] += Σ_a left[i][a] · right[a][c]` for row-major matrices.
fn add_product<T: Scalar>(out: &mut [T], left: &[T], right: &[T], rows: usize, rank: usize, cols: usize) {
    for i in 0..rows {
        for a in 0..rank {
            let l = left[i * rank + a];
            if l == T::zero() {
                continue;
            }
            let row = &right[a * cols..(a + 1) * cols];
            for (o, &r) in out[i * cols..(i + 1) * cols].iter_mut().zip(row) {
                *o += l * r;
            }
        }
    }
}

/// Two-layer tanh perceptron reward model with an optional low-rank adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel<T> {
    prompt_dim: usize,
    response_dim: usize,
    hidden: usize,
    seed: u64,
    w1: Vec<T>,
    b1: Vec<T>,
    w2: Vec<T>,
    b2: T,
    adapter: Option<LowRankAdapter<T>>,
}

impl<T: Scalar> RewardModel<T> {
    /// Seeded initialization: `W1 ~ N(0, 1/input)`, `W2 ~ N(0, 1/hidden)`, zero biases.
    pub fn new(prompt_dim: usize, response_dim: usize, hidden: usize, seed: u64) -> Self {
        assert!(prompt_dim > 0 && response_dim > 0 && hidden > 0, "model dims must be positive");
        let input = prompt_dim + response_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, 1.0 / (input as f64).sqrt()).expect("valid std");
        let w1 = (0..hidden * input).map(|_| T::lit(n1.sample(&mut rng))).collect();
        let n2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("valid std");
        let w2 = (0..hidden).map(|_| T::lit(n2.sample(&mut rng))).collect();
        Self {
            prompt_dim,
            response_dim,
            hidden,
            seed,
            w1,
            b1: vec![T::zero(); hidden],
            w2,
            b2: T::zero(),
            adapter: None,
        }
    }

    pub fn zeros(prompt_dim: usize, response_dim: usize, hidden: usize) -> Self {
        let input = prompt_dim + response_dim;
        Self {
            prompt_dim,
            response_dim,
            hidden,
            seed: 0,
            w1: vec![T::zero(); hidden * input],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); hidden],
            b2: T::zero(),
            adapter: None,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.prompt_dim + self.response_dim
    }

    pub fn adapter(&self) -> Option<&LowRankAdapter<T>> {
        self.adapter.as_ref()
    }

    pub fn adapter_rank(&self) -> Option<usize> {
        self.adapter.as_ref().map(|a| a.rank)
    }

    fn base_len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Attaches a fresh adapter and freezes the base weights. An existing
    /// adapter is merged first.
    pub fn attach_adapter(&mut self, rank: usize, seed: u64) -> Result<()> {
        if rank == 0 {
            return Err(Error::InvalidArgument("adapter rank must be >= 1".into()));
        }
        self.merge_adapter();
        self.adapter = Some(LowRankAdapter::init(rank, self.hidden, self.input_dim(), seed));
        Ok(())
    }

    pub fn with_adapter(mut self, rank: usize, seed: u64) -> Result<Self> {
        self.attach_adapter(rank, seed)?;
        Ok(self)
    }

    /// Folds `A·B` into the base weights and detaches the adapter.
    pub fn merge_adapter(&mut self) {
        if let Some(ad) = self.adapter.take() {
            let (h, n, r) = (self.hidden, self.input_dim(), ad.rank);
            add_product(&mut self.w1, &ad.a1, &ad.b1, h, r, n);
            add_product(&mut self.w2, &ad.a2, &ad.b2, 1, r, h);
        }
    }

    /// Base model with the adapter dropped (not merged).
    pub fn without_adapter(&self) -> Self {
        Self {
            adapter: None,
            ..self.clone()
        }
    }

    fn effective_weights(&self) -> (std::borrow::Cow<'_, [T]>, std::borrow::Cow<'_, [T]>) {
        use std::borrow::Cow;
        match &self.adapter {
            None => (Cow::Borrowed(&self.w1[..]), Cow::Borrowed(&self.w2[..])),
            Some(ad) => {
                let (h, n, r) = (self.hidden, self.input_dim(), ad.rank);
                let mut w1 = self.w1.clone();
                add_product(&mut w1, &ad.a1, &ad.b1, h, r, n);
                let mut w2 = self.w2.clone();
                add_product(&mut w2, &ad.a2, &ad.b2, 1, r, h);
                (Cow::Owned(w1), Cow::Owned(w2))
            }
        }
    }

    fn hidden_activations(&self, w1: &[T], prompt: &[T], response: &[T]) -> Vec<T> {
        let n = self.input_dim();
        (0..self.hidden)
            .map(|i| {
                let row = &w1[i * n..(i + 1) * n];
                let (rx, ry) = row.split_at(self.prompt_dim);
                let z = crate::num::dot(rx, prompt) + crate::num::dot(ry, response) + self.b1[i];
                z.tanh()
            })
            .collect()
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            prompt_dim: self.prompt_dim,
            response_dim: self.response_dim,
            hidden: self.hidden,
            adapter_rank: self.adapter_rank(),
            seed: self.seed,
            params: self.params().as_slice().iter().map(|v| v.to_f64_lossy()).collect(),
        };
        let mut text = serde_json::to_string(&ck).expect("checkpoint serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message,
        };
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(parse_err(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.prompt_dim == 0 || ck.response_dim == 0 || ck.hidden == 0 {
            return Err(parse_err("checkpoint dims must be positive".into()));
        }
        let mut model = Self::zeros(ck.prompt_dim, ck.response_dim, ck.hidden);
        model.seed = ck.seed;
        if let Some(rank) = ck.adapter_rank {
            if rank == 0 {
                return Err(parse_err("adapter rank must be >= 1".into()));
            }
            model.adapter = Some(LowRankAdapter::zeros(rank, ck.hidden, model.input_dim()));
        }
        let params = ParamVector::new(ck.params.into_iter().map(T::lit).collect());
        model.set_params(&params).map_err(|e| parse_err(e.to_string()))?;
        Ok(model)
    }
}

const CHECKPOINT_FORMAT: &str = "prefsel-reward-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    prompt_dim: usize,
    response_dim: usize,
    hidden: usize,
    adapter_rank: Option<usize>,
    seed: u64,
    params: Vec<f64>,
}

impl<T: Scalar> Scorer<T> for RewardModel<T> {
    fn prompt_dim(&self) -> usize {
        self.prompt_dim
    }

    fn response_dim(&self) -> usize {
        self.response_dim
    }

    fn forward(&self, prompt: &[T], response: &[T]) -> T {
        let (w1, w2) = self.effective_weights();
        let h = self.hidden_activations(&w1, prompt, response);
        crate::num::dot(&w2, &h) + self.b2
    }

    fn param_count(&self) -> usize {
        self.base_len() + self.adapter.as_ref().map_or(0, LowRankAdapter::len)
    }

    fn trainable_range(&self) -> Range<usize> {
        match &self.adapter {
            None => 0..self.base_len(),
            Some(ad) => self.base_len()..self.base_len() + ad.len(),
        }
    }

    fn accumulate_grad(&self, prompt: &[T], response: &[T], upstream: T, grad: &mut [T]) {
        let (h_dim, n) = (self.hidden, self.input_dim());
        let (w1, w2) = self.effective_weights();
        let h = self.hidden_activations(&w1, prompt, response);
        // ∂r/∂z_i = W2_i (1 - h_i²)
        let dz: Vec<T> = h
            .iter()
            .zip(w2.iter())
            .map(|(&hi, &wi)| upstream * wi * (T::one() - hi * hi))
            .collect();
        let input = |c: usize| if c < self.prompt_dim { prompt[c] } else { response[c - self.prompt_dim] };

        match &self.adapter {
            None => {
                let (gw1, rest) = grad.split_at_mut(h_dim * n);
                let (gb1, rest) = rest.split_at_mut(h_dim);
                let (gw2, gb2) = rest.split_at_mut(h_dim);
                for i in 0..h_dim {
                    for c in 0..n {
                        gw1[i * n + c] += dz[i] * input(c);
                    }
                    gb1[i] += dz[i];
                    gw2[i] += upstream * h[i];
                }
                gb2[0] += upstream;
            }
            Some(ad) => {
                let r = ad.rank;
                let grad = &mut grad[self.base_len()..];
                let (ga1, rest) = grad.split_at_mut(h_dim * r);
                let (gb1, rest) = rest.split_at_mut(r * n);
                let (ga2, gb2) = rest.split_at_mut(r);
                // dW1_eff[i][c] = dz_i · in_c;  dA1 = dW1·B1ᵀ,  dB1 = A1ᵀ·dW1
                for i in 0..h_dim {
                    for a in 0..r {
                        let b_row = &ad.b1[a * n..(a + 1) * n];
                        let s: T = (0..n).map(|c| b_row[c] * input(c)).sum();
                        ga1[i * r + a] += dz[i] * s;
                    }
                }
                for a in 0..r {
                    let s: T = (0..h_dim).map(|i| ad.a1[i * r + a] * dz[i]).sum();
                    for c in 0..n {
                        gb1[a * n + c] += s * input(c);
                    }
                }
                // dW2_eff[j] = upstream · h_j
                for a in 0..r {
                    let b_row = &ad.b2[a * h_dim..(a + 1) * h_dim];
                    let s: T = (0..h_dim).map(|j| b_row[j] * h[j]).sum();
                    ga2[a] += upstream * s;
                    for j in 0..h_dim {
                        gb2[a * h_dim + j] += ad.a2[a] * upstream * h[j];
                    }
                }
            }
        }
    }

    fn params(&self) -> ParamVector<T> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        if let Some(ad) = &self.adapter {
            v.extend_from_slice(&ad.a1);
            v.extend_from_slice(&ad.b1);
            v.extend_from_slice(&ad.a2);
            v.extend_from_slice(&ad.b2);
        }
        ParamVector(v)
    }

    fn set_params(&mut self, params: &ParamVector<T>) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(self.param_count(), params.len(), "parameter vector"));
        }
        if !all_finite(params.as_slice()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        let mut rest = params.as_slice();
        let mut take = |dst: &mut [T]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(&mut self.w1);
        take(&mut self.b1);
        take(&mut self.w2);
        let mut b2 = [T::zero()];
        take(&mut b2);
        self.b2 = b2[0];
        if let Some(ad) = &mut self.adapter {
            take(&mut ad.a1);
            take(&mut ad.b1);
            take(&mut ad.a2);
            take(&mut ad.b2);
        }
        Ok(())
    }
}

/// `r(x, y) = w · [x; y]` with no bias. Every weight is trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer<T> {
    prompt_dim: usize,
    response_dim: usize,
    weights: Vec<T>,
}

impl<T: Scalar> LinearScorer<T> {
    pub fn new(prompt_dim: usize, response_dim: usize, weights: Vec<T>) -> Result<Self> {
        if weights.len() != prompt_dim + response_dim {
            return Err(Error::dim(prompt_dim + response_dim, weights.len(), "linear weights"));
        }
        Ok(Self {
            prompt_dim,
            response_dim,
            weights,
        })
    }

    pub fn zeros(prompt_dim: usize, response_dim: usize) -> Self {
        Self {
            prompt_dim,
            response_dim,
            weights: vec![T::zero(); prompt_dim + response_dim],
        }
    }
}

impl<T: Scalar> Scorer<T> for LinearScorer<T> {
    fn prompt_dim(&self) -> usize {
        self.prompt_dim
    }

    fn response_dim(&self) -> usize {
        self.response_dim
    }

    fn forward(&self, prompt: &[T], response: &[T]) -> T {
        let (wx, wy) = self.weights.split_at(self.prompt_dim);
        crate::num::dot(wx, prompt) + crate::num::dot(wy, response)
    }

    fn param_count(&self) -> usize {
        self.weights.len()
    }

    fn trainable_range(&self) -> Range<usize> {
        0..self.weights.len()
    }

    fn accumulate_grad(&self, prompt: &[T], response: &[T], upstream: T, grad: &mut [T]) {
        for (g, &v) in grad.iter_mut().zip(prompt.iter().chain(response)) {
            *g += upstream * v;
        }
    }

    fn params(&self) -> ParamVector<T> {
        ParamVector(self.weights.clone())
    }

    fn set_params(&mut self, params: &ParamVector<T>) -> Result<()> {
        if params.len() != self.weights.len() {
            return Err(Error::dim(self.weights.len(), params.len(), "parameter vector"));
        }
        self.weights.copy_from_slice(params.as_slice());
        Ok(())
    }
}

/// Exact gradient of a loss defined on the rewards of `responses` under one prompt.
///
/// `loss` maps the reward vector to `(value, ∂value/∂rewards)`. The returned
/// gradient has the scorer's full [`ParamVector`] layout with zeros in frozen
/// slots.
pub fn grad_params<T, M, F>(
    model: &M,
    prompt: &FeatureVector<T>,
    responses: &[FeatureVector<T>],
    loss: F,
) -> Result<(T, ParamVector<T>)>
where
    T: Scalar,
    M: Scorer<T> + ?Sized,
    F: FnOnce(&[T]) -> Result<(T, Vec<T>)>,
{
    let rewards = responses
        .iter()
        .map(|y| model.score(prompt, y))
        .collect::<Result<Vec<_>>>()?;
    let (value, upstream) = loss(&rewards)?;
    if upstream.len() != responses.len() {
        return Err(Error::dim(responses.len(), upstream.len(), "loss gradient"));
    }
    let mut grad = vec![T::zero(); model.param_count()];
    for (y, &u) in responses.iter().zip(&upstream) {
        if u != T::zero() {
            model.accumulate_grad(prompt.values(), y.values(), u, &mut grad);
        }
    }
    if !all_finite(&grad) {
        return Err(Error::NonFiniteGradient(format!("loss value {value}")));
    }
    Ok((value, ParamVector(grad)))
}

/// `θ ← θ − lr·g` on the trainable slots.
pub fn sgd_step<T: Scalar, M: Scorer<T> + ?Sized>(model: &mut M, grads: &ParamVector<T>, lr: T) -> Result<()> {
    if grads.len() != model.param_count() {
        return Err(Error::dim(model.param_count(), grads.len(), "gradient vector"));
    }
    if lr == T::zero() {
        return Ok(());
    }
    let mut params = model.params();
    let p = params.as_mut_slice();
    for i in model.trainable_range() {
        p[i] -= lr * grads.as_slice()[i];
    }
    model.set_params(&params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureVector;

    fn fv(v: &[f64]) -> FeatureVector<f64> {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    /// Forward pass written out from the raw parameter vector.
    fn reference_forward(m: &RewardModel<f64>, x: &[f64], y: &[f64]) -> f64 {
        let p = m.params().into_inner();
        let (h, n) = (m.hidden(), m.input_dim());
        let input: Vec<f64> = x.iter().chain(y).copied().collect();
        let w1 = &p[..h * n];
        let b1 = &p[h * n..h * n + h];
        let w2 = &p[h * n + h..h * n + 2 * h];
        let b2 = p[h * n + 2 * h];
        let mut out = b2;
        for i in 0..h {
            let mut z = b1[i];
            for c in 0..n {
                z += w1[i * n + c] * input[c];
            }
            out += w2[i] * z.tanh();
        }
        out
    }

    #[test]
    fn zero_model_scores_zero() {
        let m = RewardModel::<f64>::zeros(3, 2, 4);
        assert_eq!(m.score(&fv(&[1.0, -2.0, 3.0]), &fv(&[0.5, 9.0])).unwrap(), 0.0);
    }

    #[test]
    fn forward_matches_reference() {
        let m = RewardModel::<f64>::new(3, 2, 5, 0);
        let x = [0.3, -1.1, 0.7];
        let y = [2.0, -0.25];
        let a = m.score(&fv(&x), &fv(&y)).unwrap();
        assert!((a - reference_forward(&m, &x, &y)).abs() < 1e-12);
    }

    #[test]
    fn fresh_adapter_is_exact_identity() {
        let base = RewardModel::<f64>::new(4, 4, 8, 11);
        let adapted = base.clone().with_adapter(3, 5).unwrap();
        let x = fv(&[0.1, 0.2, -0.3, 0.4]);
        let y = fv(&[1.0, -1.0, 0.5, 0.0]);
        assert_eq!(base.score(&x, &y).unwrap(), adapted.score(&x, &y).unwrap());
    }

    #[test]
    fn dimension_checks() {
        let m = RewardModel::<f64>::new(2, 2, 3, 0);
        assert!(matches!(
            m.score(&fv(&[1.0]), &fv(&[1.0, 2.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            m.score(&fv(&[1.0, 2.0]), &fv(&[1.0, 2.0, 3.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flatten_round_trip() {
        let mut m = RewardModel::<f64>::new(3, 2, 4, 3).with_adapter(2, 9).unwrap();
        let p = m.params();
        assert_eq!(p.len(), m.param_count());
        m.set_params(&p).unwrap();
        assert_eq!(m.params(), p);
        let short = ParamVector::new(vec![0.0; p.len() - 1]);
        assert!(m.set_params(&short).is_err());
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let m = RewardModel::<f64>::new(2, 2, 3, 1);
        let (_, g) = grad_params(&m, &fv(&[1.0, 2.0]), &[fv(&[0.1, 0.2]), fv(&[0.3, 0.4])], |r| {
            Ok((7.0, vec![0.0; r.len()]))
        })
        .unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adapter_gradient_leaves_base_slots_zero() {
        let m = RewardModel::<f64>::new(2, 2, 3, 1).with_adapter(2, 2).unwrap();
        let (_, g) = grad_params(&m, &fv(&[1.0, 2.0]), &[fv(&[0.1, 0.2]), fv(&[0.3, 0.4])], |r| {
            crate::losses::ranked_loss_grad(crate::losses::LossKind::PlackettLuce, r)
        })
        .unwrap();
        let base = m.trainable_range().start;
        assert!(g.as_slice()[..base].iter().all(|&v| v == 0.0));
        assert!(g.as_slice()[base..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn sgd_arithmetic() {
        let mut s = LinearScorer::new(1, 1, vec![3.0, 1.0]).unwrap();
        sgd_step(&mut s, &ParamVector::new(vec![2.0, 0.0]), 0.5).unwrap();
        assert_eq!(s.params().as_slice(), &[2.0, 1.0]);
        let before = s.clone();
        sgd_step(&mut s, &ParamVector::new(vec![5.0, 5.0]), 0.0).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn sgd_only_touches_adapter_when_attached() {
        let mut m = RewardModel::<f64>::new(2, 2, 3, 1).with_adapter(1, 2).unwrap();
        let before = m.params();
        let ones = ParamVector::new(vec![1.0; m.param_count()]);
        sgd_step(&mut m, &ones, 0.1).unwrap();
        let after = m.params();
        let start = m.trainable_range().start;
        assert_eq!(&after.as_slice()[..start], &before.as_slice()[..start]);
        assert!(after.as_slice()[start..]
            .iter()
            .zip(&before.as_slice()[start..])
            .all(|(a, b)| (a - (b - 0.1)).abs() < 1e-15));
    }

    #[test]
    fn merge_preserves_scores() {
        let mut m = RewardModel::<f64>::new(2, 3, 4, 7).with_adapter(2, 8).unwrap();
        let mut p = m.params();
        for (i, v) in p.as_mut_slice().iter_mut().enumerate().skip(m.trainable_range().start) {
            *v += 0.01 * (i as f64).sin();
        }
        m.set_params(&p).unwrap();
        let x = fv(&[0.2, -0.4]);
        let y = fv(&[1.0, 0.0, -1.0]);
        let before = m.score(&x, &y).unwrap();
        m.merge_adapter();
        assert!(m.adapter().is_none());
        assert!((m.score(&x, &y).unwrap() - before).abs() < 1e-12);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = RewardModel::<f64>::new(3, 3, 6, 42).with_adapter(2, 1).unwrap();
        let b = RewardModel::<f64>::new(3, 3, 6, 42).with_adapter(2, 1).unwrap();
        assert_eq!(a, b);
        let c = RewardModel::<f64>::new(3, 3, 6, 43);
        assert_ne!(a.without_adapter(), c);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = RewardModel::<f64>::new(3, 2, 4, 17).with_adapter(2, 3).unwrap();
        m.save_checkpoint(&path).unwrap();
        let back = RewardModel::<f64>::load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
    }
}
