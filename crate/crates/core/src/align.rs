//! Consumers of a trained reward model: best-of-n reranking, DPO steps and
//! win-rate arithmetic.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureVector, PreferenceSample};
use crate::error::{Error, Result};
use crate::losses::{dpo_grad, dpo_loss, dpo_margin};
use crate::model::{grad_params, sgd_step, Scorer};
use crate::num::Scalar;

/// Sampling settings of the candidate generator. Metadata only; generation is external.
pub const BEST_OF_N: usize = 8;
pub const TOP_P: f64 = 0.95;
pub const TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet<T> {
    pub id: String,
    pub prompt: FeatureVector<T>,
    pub candidates: Vec<FeatureVector<T>>,
    pub policy_logps: Option<Vec<T>>,
    pub reference_logps: Option<Vec<T>>,
    /// Index of the known best candidate, for planted fixtures.
    pub planted_best: Option<usize>,
}

impl<T: Scalar> CandidateSet<T> {
    pub fn new(id: impl Into<String>, prompt: FeatureVector<T>, candidates: Vec<FeatureVector<T>>) -> Result<Self> {
        let Some(first) = candidates.first() else {
            return Err(Error::EmptyCandidates);
        };
        let dim = first.dim();
        if let Some(bad) = candidates.iter().find(|c| c.dim() != dim) {
            return Err(Error::dim(dim, bad.dim(), "candidates within a set"));
        }
        Ok(Self {
            id: id.into(),
            prompt,
            candidates,
            policy_logps: None,
            reference_logps: None,
            planted_best: None,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Index of the highest-scoring candidate (lowest index on ties) and all scores.
pub fn best_of_n<T: Scalar, M: Scorer<T> + ?Sized>(model: &M, cs: &CandidateSet<T>) -> Result<(usize, Vec<T>)> {
    if cs.candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let scores = cs
        .candidates
        .iter()
        .map(|y| model.score(&cs.prompt, y))
        .collect::<Result<Vec<_>>>()?;
    Ok((argmax(&scores), scores))
}

pub(crate) fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpoStep<T> {
    pub loss_before: T,
    pub margin_before: T,
}

/// One SGD step on the DPO loss of `sample`'s best-versus-worst pair.
///
/// A scorer's raw output stands in for `log π(y|x)`. `reference` is only read.
pub fn dpo_step<T, M>(policy: &mut M, reference: &M, sample: &PreferenceSample<T>, beta: T, lr: T) -> Result<DpoStep<T>>
where
    T: Scalar,
    M: Scorer<T> + ?Sized,
{
    let (w, l) = sample.extreme_pair();
    let (ref_w, ref_l) = (reference.score(sample.prompt(), w)?, reference.score(sample.prompt(), l)?);
    let pair = [w.clone(), l.clone()];
    let mut margin = T::zero();
    let (loss, grad) = grad_params(&*policy, sample.prompt(), &pair, |r| {
        margin = dpo_margin(r[0], r[1], ref_w, ref_l, beta);
        let g = dpo_grad(r[0], r[1], ref_w, ref_l, beta);
        Ok((dpo_loss(r[0], r[1], ref_w, ref_l, beta), vec![g[0], g[1]]))
    })?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("dpo loss on {}", sample.id())));
    }
    sgd_step(policy, &grad, lr)?;
    Ok(DpoStep {
        loss_before: loss,
        margin_before: margin,
    })
}

/// DPO margin of `sample`'s best-versus-worst pair.
pub fn dpo_pair_margin<T: Scalar, M: Scorer<T> + ?Sized>(policy: &M, reference: &M, sample: &PreferenceSample<T>, beta: T) -> Result<T> {
    let (w, l) = sample.extreme_pair();
    let x = sample.prompt();
    Ok(dpo_margin(
        policy.score(x, w)?,
        policy.score(x, l)?,
        reference.score(x, w)?,
        reference.score(x, l)?,
        beta,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PreferenceCount {
    pub count_a: u64,
    pub count_b: u64,
    pub count_tie: u64,
}

impl PreferenceCount {
    pub fn total(&self) -> u64 {
        self.count_a + self.count_b + self.count_tie
    }
}

/// `(Count(a), Count(b)) / (T - Count(tie))`.
pub fn win_rate(c: PreferenceCount) -> Result<(f64, f64)> {
    let decided = c.total() - c.count_tie;
    if decided == 0 {
        return Err(Error::AllTies);
    }
    let rate_a = c.count_a as f64 / decided as f64;
    Ok((rate_a, c.count_b as f64 / decided as f64))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateRecord {
    id: String,
    prompt: Vec<f64>,
    candidates: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy_logps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_logps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    planted_best: Option<usize>,
}

fn wire<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn unwire<T: Scalar>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(T::lit).collect()
}

pub fn save_candidates<T: Scalar>(sets: &[CandidateSet<T>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for cs in sets {
        let rec = CandidateRecord {
            id: cs.id.clone(),
            prompt: wire(cs.prompt.values()),
            candidates: cs.candidates.iter().map(|c| wire(c.values())).collect(),
            policy_logps: cs.policy_logps.as_deref().map(wire),
            reference_logps: cs.reference_logps.as_deref().map(wire),
            planted_best: cs.planted_best,
        };
        let line = serde_json::to_string(&rec).expect("candidate record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_candidates<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<CandidateSet<T>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let rec: CandidateRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let n = rec.candidates.len();
        let build = || -> Result<CandidateSet<T>> {
            let candidates = rec
                .candidates
                .into_iter()
                .map(|c| FeatureVector::new(unwire(c)))
                .collect::<Result<Vec<_>>>()?;
            let mut cs = CandidateSet::new(rec.id, FeatureVector::new(unwire(rec.prompt))?, candidates)?;
            for (name, logps) in [("policy_logps", &rec.policy_logps), ("reference_logps", &rec.reference_logps)] {
                if let Some(v) = logps {
                    if v.len() != n {
                        return Err(Error::dim(n, v.len(), name));
                    }
                }
            }
            cs.policy_logps = rec.policy_logps.map(unwire);
            cs.reference_logps = rec.reference_logps.map(unwire);
            if let Some(b) = rec.planted_best {
                if b >= n {
                    return Err(Error::InvalidArgument(format!("planted_best {b} out of range for {n} candidates")));
                }
            }
            cs.planted_best = rec.planted_best;
            Ok(cs)
        };
        out.push(build().map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;
    use crate::model::{LinearScorer, RewardModel};

    fn fv(v: &[f64]) -> FeatureVector<f64> {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn argmax_picks_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.9, 0.5]), 1);
        assert_eq!(argmax(&[0.3]), 0);
        assert_eq!(argmax(&[2.0, 1.0, 2.0]), 0);
    }

    #[test]
    fn best_of_n_with_linear_scorer() {
        let m = LinearScorer::new(1, 2, vec![0.0, 1.0, 0.0]).unwrap();
        let cs = CandidateSet::new("c", fv(&[1.0]), vec![fv(&[0.1, 5.0]), fv(&[0.9, 0.0]), fv(&[0.5, 0.0])]).unwrap();
        let (i, scores) = best_of_n(&m, &cs).unwrap();
        assert_eq!(i, 1);
        assert_eq!(scores.len(), 3);
        let single = CandidateSet::new("s", fv(&[1.0]), vec![fv(&[0.1, 0.0])]).unwrap();
        assert_eq!(best_of_n(&m, &single).unwrap().0, 0);
        assert!(matches!(CandidateSet::<f64>::new("e", fv(&[1.0]), vec![]), Err(Error::EmptyCandidates)));
    }

    #[test]
    fn win_rate_examples() {
        let (a, b) = win_rate(PreferenceCount { count_a: 27, count_b: 12, count_tie: 21 }).unwrap();
        assert!((a - 27.0 / 39.0).abs() < 1e-12);
        assert!((a + b - 1.0).abs() < 1e-12);
        assert_eq!(win_rate(PreferenceCount { count_a: 4, count_b: 4, count_tie: 0 }).unwrap(), (0.5, 0.5));
        assert_eq!(win_rate(PreferenceCount { count_a: 5, count_b: 0, count_tie: 3 }).unwrap(), (1.0, 0.0));
        assert!(matches!(win_rate(PreferenceCount { count_a: 0, count_b: 0, count_tie: 3 }), Err(Error::AllTies)));
    }

    fn pair() -> PreferenceSample<f64> {
        PreferenceSample::from_raw("p", vec![0.3, -0.2], vec![vec![1.0, 0.5], vec![-0.4, 0.2]], Modality::Visual).unwrap()
    }

    #[test]
    fn dpo_at_reference_is_ln2_and_margin_grows() {
        let reference = RewardModel::<f64>::new(2, 2, 6, 4);
        let mut policy = reference.clone();
        let step = dpo_step(&mut policy, &reference, &pair(), 0.1, 1e-4).unwrap();
        assert_eq!(step.loss_before, std::f64::consts::LN_2);
        assert_eq!(step.margin_before, 0.0);
        assert!(dpo_pair_margin(&policy, &reference, &pair(), 0.1).unwrap() > 0.0);

        let mut frozen = reference.clone();
        dpo_step(&mut frozen, &reference, &pair(), 0.1, 0.0).unwrap();
        assert_eq!(frozen, reference);
    }

    #[test]
    fn dpo_gradient_at_reference_is_scaled_bt_gradient() {
        let reference = RewardModel::<f64>::new(2, 2, 5, 9);
        let s = pair();
        let beta = 0.3;
        let (w, l) = s.extreme_pair();
        let pr = [w.clone(), l.clone()];
        let (_, g_dpo) = grad_params(&reference, s.prompt(), &pr, |r| {
            let g = dpo_grad(r[0], r[1], r[0], r[1], beta);
            Ok((0.0, vec![g[0], g[1]]))
        })
        .unwrap();
        // BT at zero margin: ∂/∂r_w = -1/2, ∂/∂r_l = 1/2.
        let (_, g_bt) = grad_params(&reference, s.prompt(), &pr, |_| Ok((0.0, vec![-0.5, 0.5]))).unwrap();
        for (a, b) in g_dpo.as_slice().iter().zip(g_bt.as_slice()) {
            assert!((a - beta * b).abs() < 1e-8);
        }
    }

    #[test]
    fn candidates_round_trip_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut cs = CandidateSet::new("a", fv(&[0.25]), vec![fv(&[1.0, 2.0]), fv(&[0.1, 1e-300])]).unwrap();
        cs.planted_best = Some(1);
        save_candidates(&[cs.clone()], &path).unwrap();
        assert_eq!(load_candidates::<f64>(&path).unwrap(), vec![cs]);

        std::fs::write(&path, "{\"id\":\"a\",\"prompt\":[1],\"candidates\":[[1]]}\n{\"id\":\"b\",\"prompt\":[1]}\n").unwrap();
        match load_candidates::<f64>(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
