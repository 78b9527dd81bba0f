//! Planted synthetic preference data.
//!
//! All modalities share one latent direction `w*`: the true reward of a
//! response is `w* · y`. Rankings are drawn from the Plackett-Luce model with
//! utilities `w* · y / noise` by sorting `w* · y + noise · G` with Gumbel `G`,
//! so a pair is ordered correctly with probability `σ(w* · Δ / noise)`.
//! `noise == 0` sorts deterministically.
//!
//! The text set has two clusters. Aligned prompts sit near the caption and
//! visual prompt centre and are ranked by `w*`. Conflicting prompts sit at the
//! opposite centre and are ranked by `-w*`. Membership goes to the ground-truth
//! sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::align::{save_candidates, CandidateSet};
use crate::data::{save_dataset, Dataset, FeatureVector, Modality, PreferenceSample};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::seed::{derive_named, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub prompt_dim: usize,
    /// Dimension of responses and of `w*`.
    pub latent_dim: usize,
    /// Norm of `w*`.
    pub signal: f64,
    /// Distance between the two text prompt centres.
    pub separation: f64,
    /// Per-coordinate standard deviation of prompts around their centre.
    pub spread: f64,
    /// Offset of visual prompts from the shared centre.
    pub modality_shift: f64,
    /// Standard deviation of responses off the `w*` axis.
    pub off_axis: f64,
    /// Training responses of a k-list sit at evenly spaced quality levels in
    /// `[-1, 1]` along the `w*` axis, each jittered by this standard deviation.
    /// Held-out and candidate responses draw their quality from `N(0, 1)`.
    pub quality_jitter: f64,
    pub text_count: usize,
    /// Fraction of text samples in the aligned cluster.
    pub aligned_fraction: f64,
    pub caption_count: usize,
    pub visual_count: usize,
    pub heldout_count: usize,
    pub text_k: usize,
    pub caption_k: usize,
    pub visual_k: usize,
    /// Gumbel scale for text and caption rankings.
    pub noise: f64,
    /// Gumbel scale for visual training rankings. Held-out rankings are noiseless.
    pub visual_noise: f64,
    pub candidate_sets: usize,
    pub candidates_per_set: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            prompt_dim: 6,
            latent_dim: 8,
            signal: 2.0,
            separation: 4.0,
            spread: 0.5,
            modality_shift: 0.5,
            off_axis: 0.15,
            quality_jitter: 0.3,
            text_count: 200,
            aligned_fraction: 0.5,
            caption_count: 100,
            visual_count: 40,
            heldout_count: 500,
            text_k: 4,
            caption_k: 4,
            visual_k: 2,
            noise: 0.25,
            visual_noise: 2.0,
            candidate_sets: 500,
            candidates_per_set: 8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.prompt_dim == 0 || self.latent_dim == 0 {
            return bad("prompt_dim and latent_dim must be positive");
        }
        if self.text_k < 2 || self.caption_k < 2 || self.visual_k < 2 {
            return bad("every k must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.aligned_fraction) {
            return bad("aligned_fraction must lie in [0, 1]");
        }
        for (name, v) in [
            ("signal", self.signal),
            ("separation", self.separation),
            ("spread", self.spread),
            ("modality_shift", self.modality_shift),
            ("off_axis", self.off_axis),
            ("quality_jitter", self.quality_jitter),
            ("noise", self.noise),
            ("visual_noise", self.visual_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0")));
            }
        }
        if self.candidate_sets > 0 && self.candidates_per_set == 0 {
            return bad("candidates_per_set must be positive");
        }
        Ok(())
    }
}

/// Which text samples were planted where, plus `w*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub w_star: Vec<f64>,
    pub aligned_ids: Vec<String>,
    pub conflicting_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticSuite<T> {
    pub text: Dataset<T>,
    pub caption: Dataset<T>,
    pub visual: Dataset<T>,
    pub visual_heldout: Dataset<T>,
    pub candidates: Vec<CandidateSet<T>>,
    pub truth: GroundTruth,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, n, 1.0);
        let norm = crate::num::l2_norm(&v);
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::num::dot(a, b)
}

/// Orders `responses` best first under utilities `direction · y` with Gumbel noise.
pub fn rank_responses(rng: &mut ChaCha8Rng, direction: &[f64], responses: Vec<Vec<f64>>, noise: f64) -> Vec<Vec<f64>> {
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
    let mut keyed: Vec<(f64, Vec<f64>)> = responses
        .into_iter()
        .map(|y| {
            let g: f64 = if noise > 0.0 { gumbel.sample(rng) } else { 0.0 };
            (dot(direction, &y) + noise * g, y)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
    keyed.into_iter().map(|(_, y)| y).collect()
}

#[derive(Clone)]
struct Generator<'a> {
    spec: &'a SyntheticSpec,
    jitter: Option<f64>,
    w_star: Vec<f64>,
    axis: Vec<f64>,
    reversed: Vec<f64>,
    centre: Vec<f64>,
    visual_centre: Vec<f64>,
}

impl Generator<'_> {
    /// Response whose component along `w*` is `z`.
    fn response(&self, rng: &mut ChaCha8Rng, z: f64) -> Vec<f64> {
        let perp = gaussian(rng, self.spec.latent_dim, self.spec.off_axis);
        let along = dot(&perp, &self.axis);
        perp.iter()
            .zip(&self.axis)
            .map(|(p, a)| p + (z - along) * a)
            .collect()
    }

    fn sample<T: Scalar>(
        &self,
        rng: &mut ChaCha8Rng,
        id: String,
        centre: &[f64],
        direction: &[f64],
        k: usize,
        noise: f64,
        modality: Modality,
    ) -> Result<PreferenceSample<T>> {
        let spec = self.spec;
        let prompt: Vec<f64> = centre
            .iter()
            .zip(gaussian(rng, spec.prompt_dim, spec.spread))
            .map(|(c, e)| c + e)
            .collect();
        let responses = (0..k)
            .map(|j| {
                let z = match self.jitter {
                    Some(jitter) => {
                        let e: f64 = StandardNormal.sample(rng);
                        2.0 * j as f64 / (k - 1) as f64 - 1.0 + jitter * e
                    }
                    None => StandardNormal.sample(rng),
                };
                self.response(rng, z)
            })
            .collect();
        let ranked = rank_responses(rng, direction, responses, noise);
        PreferenceSample::from_raw(id, lit(&prompt), ranked.iter().map(|y| lit(y)).collect(), modality)
    }
}

fn lit<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

pub fn generate<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticSuite<T>> {
    spec.validate()?;
    let mut r = rng(derive_named(spec.seed, "synthetic/latent"));
    let axis = unit(&mut r, spec.latent_dim);
    let w_star: Vec<f64> = axis.iter().map(|x| x * spec.signal).collect();
    let reversed = w_star.iter().map(|x| -x).collect();
    let centre: Vec<f64> = unit(&mut r, spec.prompt_dim)
        .into_iter()
        .map(|x| x * spec.separation / 2.0)
        .collect();
    let visual_centre = centre
        .iter()
        .zip(unit(&mut r, spec.prompt_dim))
        .map(|(c, e)| c + spec.modality_shift * e)
        .collect();
    let g = Generator {
        spec,
        jitter: Some(spec.quality_jitter),
        w_star,
        axis,
        reversed,
        centre,
        visual_centre,
    };

    // Text: shuffled cluster labels so ids carry no membership signal.
    let mut r = rng(derive_named(spec.seed, "synthetic/text"));
    let n_aligned = (spec.aligned_fraction * spec.text_count as f64).round() as usize;
    let mut aligned_flags: Vec<bool> = (0..spec.text_count).map(|i| i < n_aligned).collect();
    aligned_flags.shuffle(&mut r);
    let conflict_centre: Vec<f64> = g.centre.iter().map(|c| -c).collect();
    let mut text = Vec::with_capacity(spec.text_count);
    let (mut aligned_ids, mut conflicting_ids) = (Vec::new(), Vec::new());
    for (i, &aligned) in aligned_flags.iter().enumerate() {
        let id = format!("text-{i:04}");
        let (c, dir) = if aligned {
            aligned_ids.push(id.clone());
            (&g.centre, &g.w_star)
        } else {
            conflicting_ids.push(id.clone());
            (&conflict_centre, &g.reversed)
        };
        text.push(g.sample(&mut r, id, c, dir, spec.text_k, spec.noise, Modality::Text)?);
    }

    let mut r = rng(derive_named(spec.seed, "synthetic/caption"));
    let caption = (0..spec.caption_count)
        .map(|i| {
            g.sample(&mut r, format!("caption-{i:04}"), &g.centre, &g.w_star, spec.caption_k, spec.noise, Modality::Caption)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut r = rng(derive_named(spec.seed, "synthetic/visual"));
    let visual = (0..spec.visual_count)
        .map(|i| {
            g.sample(
                &mut r,
                format!("visual-{i:04}"),
                &g.visual_centre,
                &g.w_star,
                spec.visual_k,
                spec.visual_noise,
                Modality::Visual,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let plain = Generator { jitter: None, ..g.clone() };
    let mut r = rng(derive_named(spec.seed, "synthetic/heldout"));
    let heldout = (0..spec.heldout_count)
        .map(|i| {
            plain.sample(&mut r, format!("heldout-{i:04}"), &g.visual_centre, &g.w_star, spec.visual_k, 0.0, Modality::Visual)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut r = rng(derive_named(spec.seed, "synthetic/candidates"));
    let mut candidates = Vec::with_capacity(spec.candidate_sets);
    for i in 0..spec.candidate_sets {
        let prompt: Vec<f64> = g
            .visual_centre
            .iter()
            .zip(gaussian(&mut r, spec.prompt_dim, spec.spread))
            .map(|(c, e)| c + e)
            .collect();
        let ys: Vec<Vec<f64>> = (0..spec.candidates_per_set).map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                g.response(&mut r, z)
            })
            .collect();
        let best = ys
            .iter()
            .enumerate()
            .max_by(|a, b| dot(&g.w_star, a.1).total_cmp(&dot(&g.w_star, b.1)).then(b.0.cmp(&a.0)))
            .map(|(j, _)| j);
        let mut cs = CandidateSet::new(
            format!("cand-{i:04}"),
            FeatureVector::new(lit(&prompt))?,
            ys.iter().map(|y| FeatureVector::new(lit(y))).collect::<Result<Vec<_>>>()?,
        )?;
        cs.planted_best = best;
        candidates.push(cs);
    }
    Ok(SyntheticSuite {
        text: Dataset::new("text", Modality::Text, text)?,
        caption: Dataset::new("caption", Modality::Caption, caption)?,
        visual: Dataset::new("visual", Modality::Visual, visual)?,
        visual_heldout: Dataset::new("visual_heldout", Modality::Visual, heldout)?,
        candidates,
        truth: GroundTruth {
            w_star: g.w_star,
            aligned_ids,
            conflicting_ids,
        },
    })
}

/// File names written by [`write_suite`], in write order.
pub const SUITE_FILES: [&str; 6] = [
    "text.jsonl",
    "caption.jsonl",
    "visual.jsonl",
    "visual_heldout.jsonl",
    "candidates.jsonl",
    "ground_truth.json",
];

pub fn write_suite<T: Scalar>(suite: &SyntheticSuite<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_dataset(&suite.text, dir.join(SUITE_FILES[0]))?;
    save_dataset(&suite.caption, dir.join(SUITE_FILES[1]))?;
    save_dataset(&suite.visual, dir.join(SUITE_FILES[2]))?;
    save_dataset(&suite.visual_heldout, dir.join(SUITE_FILES[3]))?;
    save_candidates(&suite.candidates, dir.join(SUITE_FILES[4]))?;
    let path = dir.join(SUITE_FILES[5]);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &suite.truth).expect("ground truth serializes");
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            text_count: 20,
            caption_count: 10,
            visual_count: 6,
            heldout_count: 10,
            candidate_sets: 5,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_rankings_follow_direction() {
        let spec = SyntheticSpec {
            noise: 0.0,
            text_k: 2,
            ..small()
        };
        let s = generate::<f64>(&spec).unwrap();
        let w = &s.truth.w_star;
        for sample in s.caption.samples() {
            let r: Vec<f64> = sample.responses().iter().map(|y| dot(w, y.values())).collect();
            assert!(r[0] >= r[1]);
        }
        for sample in s.text.samples() {
            let sign = if s.truth.aligned_ids.iter().any(|id| id == sample.id()) { 1.0 } else { -1.0 };
            let r: Vec<f64> = sample.responses().iter().map(|y| sign * dot(w, y.values())).collect();
            assert!(r[0] >= r[1]);
        }
    }

    #[test]
    fn same_seed_same_suite() {
        let a = generate::<f64>(&small()).unwrap();
        let b = generate::<f64>(&small()).unwrap();
        assert_eq!(a.text, b.text);
        assert_eq!(a.visual_heldout, b.visual_heldout);
        assert_eq!(a.truth, b.truth);
        let c = generate::<f64>(&SyntheticSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.text, c.text);
    }

    #[test]
    fn clusters_partition_text() {
        let s = generate::<f64>(&small()).unwrap();
        assert_eq!(s.truth.aligned_ids.len(), 10);
        assert_eq!(s.truth.aligned_ids.len() + s.truth.conflicting_ids.len(), s.text.len());
    }

    #[test]
    fn pairwise_frequency_matches_logistic() {
        // P(first ≻ second) for a fixed pair under Gumbel-sorted ranking.
        let mut r = rng(3);
        let dir = [1.0, 0.0];
        let (a, b) = (vec![0.7, 0.0], vec![0.0, 0.0]);
        let trials = 10_000;
        let wins = (0..trials)
            .filter(|_| rank_responses(&mut r, &dir, vec![a.clone(), b.clone()], 1.0)[0] == a)
            .count();
        let p = wins as f64 / trials as f64;
        assert!((p - crate::num::sigmoid(0.7)).abs() < 0.03, "{p}");
    }
}
