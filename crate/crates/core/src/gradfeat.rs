//! Per-sample gradient features: the reward-loss gradient of a warmed-up
//! model over its trainable parameters, randomly projected to `k` dimensions.
//!
//! The projection matrix is regenerated from `(seed, d, k)` whenever it is
//! needed and never written to disk; feature records carry the seed instead.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PreferenceSample;
use crate::error::{Error, Result};
use crate::losses::{ranked_loss_grad, LossKind};
use crate::model::{grad_params, Scorer};
use crate::num::{all_finite, Scalar};

/// Feature dimension used at full scale.
pub const FULL_SCALE_DIM: usize = 8192;
/// Default feature dimension for small models, capped at the parameter count.
pub const DESK_SCALE_DIM: usize = 256;

/// Target dimension for a model with `d` trainable parameters.
pub fn default_target_dim(d: usize) -> usize {
    DESK_SCALE_DIM.min(d)
}

/// `d × k` random matrix with i.i.d. `N(0, 1)` entries scaled by `1/√k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix<T> {
    seed: u64,
    d: usize,
    k: usize,
    /// Row-major `d × k`.
    entries: Vec<T>,
}

impl<T: Scalar> ProjectionMatrix<T> {
    pub fn gaussian(seed: u64, d: usize, k: usize) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!(
                "projection target dim must satisfy 1 <= k <= d (k={k}, d={d})"
            )));
        }
        let mut rng = crate::seed::rng(seed);
        let scale = 1.0 / (k as f64).sqrt();
        let entries = (0..d * k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(z * scale)
            })
            .collect();
        Ok(Self { seed, d, k, entries })
    }

    /// `d × d` identity, for checking the projection path in isolation.
    pub fn identity(d: usize) -> Self {
        let mut entries = vec![T::zero(); d * d];
        for i in 0..d {
            entries[i * d + i] = T::one();
        }
        Self {
            seed: 0,
            d,
            k: d,
            entries,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source_dim(&self) -> usize {
        self.d
    }

    pub fn target_dim(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }
}

/// Row vector times matrix: `g (1×d) · R (d×k)`.
pub fn project<T: Scalar>(g: &[T], proj: &ProjectionMatrix<T>) -> Result<Vec<T>> {
    if g.len() != proj.d {
        return Err(Error::dim(proj.d, g.len(), "projection input"));
    }
    let mut out = vec![T::zero(); proj.k];
    for (i, &gi) in g.iter().enumerate() {
        if gi == T::zero() {
            continue;
        }
        for (o, &r) in out.iter_mut().zip(proj.row(i)) {
            *o += gi * r;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientFeature<T> {
    pub sample_id: String,
    /// Seed of the projection that produced `values`.
    pub seed: u64,
    /// Unprojected gradient length (trainable parameter count).
    pub source_dim: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> GradientFeature<T> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Trainable-slot gradient of the reward loss on one sample.
pub fn raw_gradient<T: Scalar, M: Scorer<T> + ?Sized>(
    model: &M,
    sample: &PreferenceSample<T>,
    loss: LossKind,
) -> Result<Vec<T>> {
    let (_, grad) = grad_params(model, sample.prompt(), sample.responses(), |r| ranked_loss_grad(loss, r))?;
    Ok(grad.as_slice()[model.trainable_range()].to_vec())
}

pub fn extract_gradient_feature<T: Scalar, M: Scorer<T> + ?Sized>(
    warm_model: &M,
    sample: &PreferenceSample<T>,
    proj: &ProjectionMatrix<T>,
    loss: LossKind,
) -> Result<GradientFeature<T>> {
    let d = warm_model.trainable_count();
    if d != proj.source_dim() {
        return Err(Error::dim(proj.source_dim(), d, "trainable parameters vs projection rows"));
    }
    let g = raw_gradient(warm_model, sample, loss)?;
    let values = project(&g, proj)?;
    if !all_finite(&values) {
        return Err(Error::NonFiniteGradient(format!("projected feature of {}", sample.id())));
    }
    Ok(GradientFeature {
        sample_id: sample.id().to_string(),
        seed: proj.seed(),
        source_dim: d,
        values,
    })
}

/// Extracts features for every sample, in input order.
///
/// `jobs` caps the worker count (`None` uses the global pool). Each sample is
/// computed independently, so results are bitwise identical for any `jobs`.
pub fn batch_extract<T, M>(
    warm_model: &M,
    samples: &[PreferenceSample<T>],
    proj: &ProjectionMatrix<T>,
    loss: LossKind,
    jobs: Option<usize>,
) -> Result<Vec<GradientFeature<T>>>
where
    T: Scalar,
    M: Scorer<T> + Sync + ?Sized,
{
    let run = || -> Vec<Result<GradientFeature<T>>> {
        samples
            .par_iter()
            .map(|s| extract_gradient_feature(warm_model, s, proj, loss).map_err(|e| e.for_sample(s.id())))
            .collect()
    };
    let results = with_jobs(jobs, run)?;
    let mut out = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(f) => out.push(f),
            Err(e) => failures.push(e),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(Error::Batch(failures))
    }
}

/// Runs `f` on a dedicated pool of `jobs` threads, or the global pool.
pub(crate) fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRecord {
    sample_id: String,
    seed: u64,
    d: usize,
    k: usize,
    values: Vec<f64>,
}

pub fn save_features<T: Scalar>(features: &[GradientFeature<T>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for f in features {
        let rec = FeatureRecord {
            sample_id: f.sample_id.clone(),
            seed: f.seed,
            d: f.source_dim,
            k: f.values.len(),
            values: f.values.iter().map(|v| v.to_f64_lossy()).collect(),
        };
        let line = serde_json::to_string(&rec).expect("feature serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_features<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<GradientFeature<T>>> {
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
        let rec: FeatureRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if rec.values.len() != rec.k {
            return Err(parse_err(format!("k = {} but {} values", rec.k, rec.values.len())));
        }
        out.push(GradientFeature {
            sample_id: rec.sample_id,
            seed: rec.seed,
            source_dim: rec.d,
            values: rec.values.into_iter().map(T::lit).collect(),
        });
    }
    Ok(out)
}
