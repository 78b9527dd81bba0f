//! Preference samples, datasets and their line-delimited JSON file format.
//!
//! Each line of a dataset file is one record:
//!
//! ```text
//! {"id":"t-0","modality":"text","prompt":[0.1,...],"responses":[[...],[...]]}
//! ```
//!
//! Response order encodes the ranking, best first. Numbers are written with
//! shortest round-trip precision, so `f64` values survive a save/load cycle
//! bit for bit.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Caption,
    Visual,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Caption => "caption",
            Modality::Visual => "visual",
        }
    }

    /// Progressive-training phase that consumes this modality.
    pub fn phase(self) -> u8 {
        match self {
            Modality::Text => 1,
            Modality::Caption => 2,
            Modality::Visual => 3,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "caption" => Ok(Modality::Caption),
            "visual" => Ok(Modality::Visual),
            other => Err(Error::InvalidArgument(format!("unknown modality {other:?}"))),
        }
    }
}

/// A finite, non-empty embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("feature vector must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature vector coordinate {i}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "feature vector must be non-empty");
        Self {
            values: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

impl<T> AsRef<[T]> for FeatureVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

/// A prompt with `k >= 2` responses ordered best to worst.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceSample<T> {
    id: String,
    prompt: FeatureVector<T>,
    responses: Vec<FeatureVector<T>>,
    modality: Modality,
    weight: T,
}

impl<T: Scalar> PreferenceSample<T> {
    pub fn new(
        id: impl Into<String>,
        prompt: FeatureVector<T>,
        responses: Vec<FeatureVector<T>>,
        modality: Modality,
    ) -> Result<Self> {
        if responses.len() < 2 {
            return Err(Error::ListTooShort(responses.len()));
        }
        let dim = responses[0].dim();
        if let Some(bad) = responses.iter().find(|r| r.dim() != dim) {
            return Err(Error::dim(dim, bad.dim(), "responses within a sample"));
        }
        Ok(Self {
            id: id.into(),
            prompt,
            responses,
            modality,
            weight: T::one(),
        })
    }

    /// Builds a sample from raw vectors, checking finiteness of every entry.
    pub fn from_raw(
        id: impl Into<String>,
        prompt: Vec<T>,
        responses: Vec<Vec<T>>,
        modality: Modality,
    ) -> Result<Self> {
        let prompt = FeatureVector::new(prompt)?;
        let responses = responses
            .into_iter()
            .map(FeatureVector::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(id, prompt, responses, modality)
    }

    pub fn with_weight(mut self, weight: T) -> Result<Self> {
        if !(weight.is_finite() && weight >= T::zero()) {
            return Err(Error::InvalidArgument("sample weight must be finite and >= 0".into()));
        }
        self.weight = weight;
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn prompt(&self) -> &FeatureVector<T> {
        &self.prompt
    }

    pub fn responses(&self) -> &[FeatureVector<T>] {
        &self.responses
    }

    /// Number of ranked responses `k`.
    pub fn k(&self) -> usize {
        self.responses.len()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn weight(&self) -> T {
        self.weight
    }

    pub fn prompt_dim(&self) -> usize {
        self.prompt.dim()
    }

    pub fn response_dim(&self) -> usize {
        self.responses[0].dim()
    }

    /// Pairwise view: the best response against the worst.
    pub fn extreme_pair(&self) -> (&FeatureVector<T>, &FeatureVector<T>) {
        (&self.responses[0], &self.responses[self.k() - 1])
    }
}

/// A named collection of samples that all share one modality and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    name: String,
    modality: Modality,
    samples: Vec<PreferenceSample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        name: impl Into<String>,
        modality: Modality,
        samples: Vec<PreferenceSample<T>>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        let mut shape: Option<(usize, usize)> = None;
        for s in &samples {
            if s.modality() != modality {
                return Err(Error::ModalityMismatch {
                    expected: modality,
                    found: s.modality(),
                    context: format!("sample {}", s.id()),
                });
            }
            if !seen.insert(s.id()) {
                return Err(Error::DuplicateId(s.id().to_string()));
            }
            check_shape(&mut shape, s, || format!("sample {}", s.id()))?;
        }
        Ok(Self {
            name: name.into(),
            modality,
            samples,
        })
    }

    pub fn empty(name: impl Into<String>, modality: Modality) -> Self {
        Self {
            name: name.into(),
            modality,
            samples: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn samples(&self) -> &[PreferenceSample<T>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id())
    }

    /// `(prompt_dim, response_dim)` shared by all samples, if any.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.samples
            .first()
            .map(|s| (s.prompt_dim(), s.response_dim()))
    }

    pub fn get(&self, id: &str) -> Option<&PreferenceSample<T>> {
        self.samples.iter().find(|s| s.id() == id)
    }

    /// New dataset holding the samples whose ids appear in `ids`, in `ids` order.
    pub fn subset<S: AsRef<str>>(&self, name: impl Into<String>, ids: &[S]) -> Result<Self> {
        let index: std::collections::HashMap<&str, &PreferenceSample<T>> =
            self.samples.iter().map(|s| (s.id(), s)).collect();
        let samples = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_ref())
                    .map(|s| (*s).clone())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown sample id {:?}", id.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(name, self.modality, samples)
    }

    /// Subset by position, in the given order.
    pub fn select_indices(&self, name: impl Into<String>, indices: &[usize]) -> Self {
        Self {
            name: name.into(),
            modality: self.modality,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

fn check_shape<T: Scalar>(
    shape: &mut Option<(usize, usize)>,
    s: &PreferenceSample<T>,
    context: impl Fn() -> String,
) -> Result<()> {
    match *shape {
        None => *shape = Some((s.prompt_dim(), s.response_dim())),
        Some((p, r)) => {
            if s.prompt_dim() != p {
                return Err(Error::dim(p, s.prompt_dim(), format!("prompt, {}", context())));
            }
            if s.response_dim() != r {
                return Err(Error::dim(r, s.response_dim(), format!("response, {}", context())));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    modality: Modality,
    prompt: Vec<f64>,
    responses: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
}

fn to_wire<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.to_f64_lossy()).collect()
}

fn from_wire<T: Scalar>(xs: Vec<f64>) -> Vec<T> {
    xs.into_iter().map(T::lit).collect()
}

impl SampleRecord {
    fn from_sample<T: Scalar>(s: &PreferenceSample<T>) -> Self {
        let weight = s.weight().to_f64_lossy();
        Self {
            id: s.id().to_string(),
            modality: s.modality(),
            prompt: to_wire(s.prompt().values()),
            responses: s.responses().iter().map(|r| to_wire(r.values())).collect(),
            weight: (weight != 1.0).then_some(weight),
        }
    }

    fn into_sample<T: Scalar>(self) -> Result<PreferenceSample<T>> {
        let sample = PreferenceSample::from_raw(
            self.id,
            from_wire(self.prompt),
            self.responses.into_iter().map(from_wire).collect(),
            self.modality,
        )?;
        match self.weight {
            Some(w) => sample.with_weight(T::lit(w)),
            None => Ok(sample),
        }
    }
}

/// Serializes one sample as a single JSON line (no trailing newline).
pub fn sample_to_line<T: Scalar>(s: &PreferenceSample<T>) -> String {
    serde_json::to_string(&SampleRecord::from_sample(s)).expect("record serializes")
}

/// Reads a dataset file, checking every invariant. The dataset takes its name
/// from the file stem.
pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>, expected: Modality) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    let mut shape = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let record: SampleRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let sample: PreferenceSample<T> = match record.into_sample() {
            Ok(s) => s,
            Err(Error::DimensionMismatch {
                expected, found, context,
            }) => {
                return Err(Error::dim(expected, found, format!("{context}, line {lineno}")));
            }
            Err(e) => return Err(parse_err(e.to_string())),
        };
        if sample.modality() != expected {
            return Err(Error::ModalityMismatch {
                expected,
                found: sample.modality(),
                context: format!("line {lineno}"),
            });
        }
        check_shape(&mut shape, &sample, || format!("line {lineno}"))?;
        if !seen.insert(sample.id().to_string()) {
            return Err(parse_err(format!("duplicate sample id {:?}", sample.id())));
        }
        samples.push(sample);
    }
    Ok(Dataset {
        name,
        modality: expected,
        samples,
    })
}

pub fn save_dataset<T: Scalar>(d: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in d.samples() {
        writeln!(w, "{}", sample_to_line(s)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Training settings for one progressive-training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phase_index: u8,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_kind: LossKind,
    pub seed: u64,
}

impl PhaseConfig {
    pub const PHASE_ONE_LR: f64 = 2e-5;
    pub const LATER_PHASE_LR: f64 = 1e-6;

    /// Defaults for phase 1, 2 or 3: one epoch, batch size 8, listwise loss.
    pub fn default_for(phase_index: u8) -> Self {
        let learning_rate = if phase_index == 1 {
            Self::PHASE_ONE_LR
        } else {
            Self::LATER_PHASE_LR
        };
        Self {
            phase_index,
            learning_rate,
            epochs: 1,
            batch_size: 8,
            loss_kind: LossKind::PlackettLuce,
            seed: u64::from(phase_index),
        }
    }

    /// Rates for the small synthetic models: 0.05, 0.02 and 0.01 over ten
    /// epochs, still decreasing from phase to phase.
    pub fn desk_scale(phase_index: u8) -> Self {
        let learning_rate = match phase_index {
            1 => 0.05,
            2 => 0.02,
            _ => 0.01,
        };
        Self {
            learning_rate,
            epochs: 10,
            ..Self::default_for(phase_index)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.phase_index) {
            return Err(Error::InvalidArgument(format!(
                "phase_index must be 1, 2 or 3, got {}",
                self.phase_index
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(())
    }
}
