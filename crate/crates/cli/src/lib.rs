//! Pipeline commands behind the `prefsel` binary.
//!
//! Each command reads a flat TOML config, writes its artifacts into an output
//! directory, and finishes with `summary.json` (config, seed, input and output
//! hashes, metrics) and a plain-text `log.txt`.

pub mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use prefsel::align::{best_of_n, load_candidates, win_rate, PreferenceCount};
use prefsel::data::{load_dataset, save_dataset};
use prefsel::seed::{derive_named, rng};
use prefsel::select::{cascade_select, recall, SelectionReport};
use prefsel::synthetic::{generate, load_ground_truth, write_suite, SyntheticSpec, SUITE_FILES};
use prefsel::train::{pairwise_accuracy, run_three_phase, train_steps, PhaseRecord};
use prefsel::{Dataset64, Modality, RewardModel64, Scorer};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use config::PipelineConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad config, missing or malformed input. Exit code 1.
    Validation(String),
    /// Failure after validation passed. Exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn validation(e: impl fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

/// Flags shared by every verb.
#[derive(Debug, Clone, Default)]
pub struct CommonArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: PathBuf,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects what a command read and wrote, then emits the summary and log.
struct Run {
    command: &'static str,
    out: PathBuf,
    seed: u64,
    config: Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    metrics: serde_json::Map<String, Value>,
    log: Vec<String>,
}

impl Run {
    fn start(command: &'static str, out: &Path, seed: u64, config: Value) -> Result<Self, CliError> {
        fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            metrics: serde_json::Map::new(),
            log: vec![format!("{command}: seed {seed}")],
        })
    }

    fn input(&mut self, field: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(field.to_string(), sha256_file(path)?);
        self.log(format!("read {field} {}", path.display()));
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn wrote(&mut self, name: &str) {
        self.outputs.push(name.to_string());
        self.log(format!("wrote {name}"));
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
        text.push('\n');
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        self.wrote(name);
        Ok(())
    }

    fn write_lines(&mut self, name: &str, lines: &[Value]) -> Result<(), CliError> {
        let mut text = String::new();
        for l in lines {
            text.push_str(&serde_json::to_string(l).map_err(runtime)?);
            text.push('\n');
        }
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        self.wrote(name);
        Ok(())
    }

    fn metric(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("metric serializes");
        self.log(format!("{key} = {v}"));
        self.metrics.insert(key.to_string(), v);
    }

    fn log(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }

    fn finish(mut self) -> Result<Value, CliError> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), sha256_file(&self.out.join(name))?);
        }
        let summary = json!({
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": outputs,
            "metrics": self.metrics,
        });
        let mut text = serde_json::to_string_pretty(&summary).map_err(runtime)?;
        text.push('\n');
        fs::write(self.out.join("summary.json"), text).map_err(runtime)?;
        self.log.push("done".into());
        let mut f = fs::File::create(self.out.join("log.txt")).map_err(runtime)?;
        for l in &self.log {
            writeln!(f, "{l}").map_err(runtime)?;
        }
        Ok(summary)
    }
}

fn pipeline_config(args: &CommonArgs) -> Result<(PipelineConfig, u64), CliError> {
    let mut cfg = PipelineConfig::from_file(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.jobs == Some(0) {
        return Err(validation("jobs: must be positive"));
    }
    cfg.validate()?;
    let seed = cfg.seed;
    Ok((cfg, seed))
}

fn load(run: &mut Run, field: &str, path: &Path, modality: Modality) -> Result<Dataset64, CliError> {
    run.input(field, path)?;
    load_dataset(path, modality).map_err(validation)
}

fn load_model(run: &mut Run, path: &Path) -> Result<RewardModel64, CliError> {
    run.input("checkpoint_path", path)?;
    RewardModel64::load_checkpoint(path).map_err(validation)
}

fn check_budget(field: &str, budget: usize, available: usize) -> Result<(), CliError> {
    if budget > available {
        return Err(validation(format!("{field}: {budget} exceeds {available} available samples")));
    }
    Ok(())
}

fn base_model(cfg: &PipelineConfig, data: &Dataset64, seed: u64) -> Result<RewardModel64, CliError> {
    let (p, r) = data
        .shape()
        .ok_or_else(|| validation(format!("dataset {} is empty", data.name())))?;
    Ok(RewardModel64::new(p, r, cfg.hidden, derive_named(seed, "model/init")))
}

/// Writes a synthetic suite. The config holds [`SyntheticSpec`] keys.
pub fn cmd_generate(args: &CommonArgs) -> Result<Value, CliError> {
    let mut spec: SyntheticSpec = match &args.config {
        Some(p) => config::load(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate().map_err(validation)?;
    let mut run = Run::start("generate", &args.out, spec.seed, serde_json::to_value(&spec).map_err(runtime)?)?;
    let suite = generate::<f64>(&spec).map_err(runtime)?;
    write_suite(&suite, &args.out).map_err(runtime)?;
    for name in SUITE_FILES {
        run.wrote(name);
    }
    run.metric("text", suite.text.len());
    run.metric("caption", suite.caption.len());
    run.metric("visual", suite.visual.len());
    run.metric("visual_heldout", suite.visual_heldout.len());
    run.metric("candidate_sets", suite.candidates.len());
    run.metric("aligned", suite.truth.aligned_ids.len());
    run.finish()
}

fn quantiles(report: &SelectionReport) -> Value {
    let mut v: Vec<f64> = report.scores.values().copied().collect();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
    json!({"min": q(0.0), "q25": q(0.25), "median": q(0.5), "q75": q(0.75), "max": q(1.0)})
}

/// One record per scored sample, ascending score, then a summary record.
fn report_lines(report: &SelectionReport) -> Vec<Value> {
    let chosen: std::collections::HashSet<&str> = report.selected_ids.iter().map(String::as_str).collect();
    let mut ranked: Vec<(&String, f64)> = report.scores.iter().map(|(k, v)| (k, *v)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let mut lines: Vec<Value> = ranked
        .iter()
        .enumerate()
        .map(|(rank, (id, s))| json!({"id": id, "rank": rank, "score": s, "selected": chosen.contains(id.as_str())}))
        .collect();
    lines.push(json!({"summary": {
        "scored": report.scores.len(),
        "selected": report.selected_ids.len(),
        "subset_ids": report.subset_ids,
        "config": report.config,
        "quantiles": quantiles(report),
    }}));
    lines
}

/// Caption-then-text selection.
pub fn cmd_select(args: &CommonArgs) -> Result<Value, CliError> {
    let (cfg, seed) = pipeline_config(args)?;
    let text_path = cfg.require("text_path", &cfg.text_path)?;
    let caption_path = cfg.require("caption_path", &cfg.caption_path)?;
    let visual_path = cfg.require("visual_path", &cfg.visual_path)?;
    let truth_path = cfg.optional("ground_truth_path", &cfg.ground_truth_path)?;

    let mut run = Run::start("select", &args.out, seed, cfg.snapshot())?;
    let text = load(&mut run, "text_path", text_path, Modality::Text)?;
    let caption = load(&mut run, "caption_path", caption_path, Modality::Caption)?;
    let visual = load(&mut run, "visual_path", visual_path, Modality::Visual)?;
    let truth = match truth_path {
        Some(p) => {
            run.input("ground_truth_path", p)?;
            Some(load_ground_truth(p).map_err(validation)?)
        }
        None => None,
    };
    check_budget("caption_budget", cfg.caption_budget, caption.len())?;
    check_budget("text_budget", cfg.text_budget, text.len())?;
    check_budget("subset_size", cfg.subset_size, visual.len())?;
    check_budget("subset_size", cfg.subset_size, cfg.caption_budget)?;

    let base = base_model(&cfg, &visual, seed)?;
    let outcome = cascade_select(&text, &caption, &visual, &base, &cfg.cascade(seed), args.jobs).map_err(runtime)?;

    run.write_lines("caption_report.jsonl", &report_lines(&outcome.caption.report))?;
    run.write_lines("text_report.jsonl", &report_lines(&outcome.text.report))?;
    for (name, data, report) in [
        ("selected_caption.jsonl", &caption, &outcome.caption.report),
        ("selected_text.jsonl", &text, &outcome.text.report),
    ] {
        let mut ids = report.selected_ids.clone();
        ids.sort_unstable_by_key(|id| data.samples().iter().position(|s| s.id() == id));
        let chosen = data.subset(format!("{}-selected", data.name()), &ids).map_err(runtime)?;
        save_dataset(&chosen, run.path(name)).map_err(runtime)?;
        run.wrote(name);
    }
    run.metric("caption_selected", outcome.caption.report.selected_ids.len());
    run.metric("text_selected", outcome.text.report.selected_ids.len());
    run.metric("stage1_warmup_final_loss", outcome.caption.warmup_loss.last());
    run.metric("stage2_warmup_final_loss", outcome.text.warmup_loss.last());
    if let Some(t) = truth {
        run.metric("text_recall", recall(&outcome.text.report.selected_ids, &t.aligned_ids));
    }
    run.finish()
}

#[derive(Serialize)]
struct RunRecord<'a> {
    phases: &'a [PhaseRecord],
    warnings: &'a [String],
    total_steps: usize,
    visual_samples: usize,
}

/// Three-phase training on text, caption and visual data.
pub fn cmd_train(args: &CommonArgs) -> Result<Value, CliError> {
    let (cfg, seed) = pipeline_config(args)?;
    let text_path = cfg.require("text_path", &cfg.text_path)?;
    let caption_path = cfg.require("caption_path", &cfg.caption_path)?;
    let visual_path = cfg.require("visual_path", &cfg.visual_path)?;
    let heldout_path = cfg.optional("heldout_path", &cfg.heldout_path)?;
    let init_path = cfg.optional("checkpoint_path", &cfg.checkpoint_path)?;

    let mut run = Run::start("train", &args.out, seed, cfg.snapshot())?;
    let text = load(&mut run, "text_path", text_path, Modality::Text)?;
    let caption = load(&mut run, "caption_path", caption_path, Modality::Caption)?;
    let visual = load(&mut run, "visual_path", visual_path, Modality::Visual)?;
    let heldout = match heldout_path {
        Some(p) => Some(load(&mut run, "heldout_path", p, cfg.heldout_modality)?),
        None => None,
    };
    let init = match init_path {
        Some(p) => load_model(&mut run, p)?,
        None => base_model(&cfg, &visual, seed)?,
    };

    let visual = if cfg.visual_fraction < 1.0 {
        let n = ((visual.len() as f64 * cfg.visual_fraction).ceil() as usize).max(1);
        let mut idx = rand::seq::index::sample(&mut rng(derive_named(seed, "train/visual-fraction")), visual.len(), n).into_vec();
        idx.sort_unstable();
        visual.select_indices(format!("{}-{n}", visual.name()), &idx)
    } else {
        visual
    };
    run.log(format!("visual samples: {}", visual.len()));

    let phases = cfg.phases(seed);
    let result = run_three_phase(init.clone(), &text, &caption, &visual, &phases, Some(&args.out)).map_err(runtime)?;
    for w in &result.warnings {
        run.log(format!("warning: {w}"));
    }
    for p in &result.phases {
        run.wrote(&format!("phase{}.json", p.phase_index));
    }
    result.model.save_checkpoint(run.path("model.json")).map_err(runtime)?;
    run.wrote("model.json");
    run.write_json(
        "run.json",
        &RunRecord {
            phases: &result.phases,
            warnings: &result.warnings,
            total_steps: result.total_steps,
            visual_samples: visual.len(),
        },
    )?;
    run.metric("total_steps", result.total_steps);
    run.metric("warnings", &result.warnings);
    for p in &result.phases {
        run.metric(&format!("phase{}_epoch_losses", p.phase_index), &p.epoch_losses);
    }
    if let Some(h) = &heldout {
        run.metric("heldout_accuracy", pairwise_accuracy(&result.model, h).map_err(runtime)?);
    }

    if cfg.visual_only_baseline {
        let mut baseline = init;
        let trace = train_steps(
            &mut baseline,
            &visual,
            result.total_steps,
            cfg.batch_size,
            cfg.phase1_lr,
            cfg.loss,
            derive_named(seed, "train/baseline"),
        )
        .map_err(runtime)?;
        baseline.save_checkpoint(run.path("baseline.json")).map_err(runtime)?;
        run.wrote("baseline.json");
        run.metric("baseline_epoch_losses", trace);
        if let Some(h) = &heldout {
            run.metric("baseline_heldout_accuracy", pairwise_accuracy(&baseline, h).map_err(runtime)?);
        }
    }
    run.finish()
}

/// Best-of-n choice for every candidate set.
pub fn cmd_rerank(args: &CommonArgs) -> Result<Value, CliError> {
    let (cfg, seed) = pipeline_config(args)?;
    let model_path = cfg.require("checkpoint_path", &cfg.checkpoint_path)?;
    let cand_path = cfg.require("candidates_path", &cfg.candidates_path)?;

    let mut run = Run::start("rerank", &args.out, seed, cfg.snapshot())?;
    let model = load_model(&mut run, model_path)?;
    run.input("candidates_path", cand_path)?;
    let sets = load_candidates::<f64>(cand_path).map_err(validation)?;
    for cs in &sets {
        if cs.prompt.dim() != model.prompt_dim() || cs.candidates.iter().any(|c| c.dim() != model.response_dim()) {
            return Err(validation(format!("candidates_path: set {} does not match the model dimensions", cs.id)));
        }
    }

    let (mut hits, mut planted) = (0usize, 0usize);
    let mut lines = Vec::with_capacity(sets.len());
    for cs in &sets {
        let (best, scores) = best_of_n(&model, cs).map_err(|e| runtime(e.for_sample(cs.id.clone())))?;
        if let Some(p) = cs.planted_best {
            planted += 1;
            hits += usize::from(p == best);
        }
        lines.push(json!({"id": cs.id, "chosen": best, "scores": scores, "planted_best": cs.planted_best}));
    }
    run.write_lines("rerank.jsonl", &lines)?;
    run.metric("sets", sets.len());
    if planted > 0 {
        run.metric("planted_hit_rate", hits as f64 / planted as f64);
    }
    run.finish()
}

/// Accuracy on a held-out set, loss curves from a run record and win rates from counts.
pub fn cmd_eval(args: &CommonArgs) -> Result<Value, CliError> {
    let (cfg, seed) = pipeline_config(args)?;
    let model_path = cfg.require("checkpoint_path", &cfg.checkpoint_path)?;
    let heldout_path = cfg.require("heldout_path", &cfg.heldout_path)?;
    let record_path = cfg.optional("run_record_path", &cfg.run_record_path)?;
    let counts = match (cfg.win_a, cfg.win_b) {
        (Some(a), Some(b)) => Some(PreferenceCount {
            count_a: a,
            count_b: b,
            count_tie: cfg.win_tie.unwrap_or(0),
        }),
        _ => None,
    };

    let mut run = Run::start("eval", &args.out, seed, cfg.snapshot())?;
    let model = load_model(&mut run, model_path)?;
    let heldout = load(&mut run, "heldout_path", heldout_path, cfg.heldout_modality)?;
    if heldout.shape() != Some((model.prompt_dim(), model.response_dim())) {
        return Err(validation("heldout_path: dimensions do not match the model"));
    }
    let curves = match record_path {
        Some(p) => {
            run.input("run_record_path", p)?;
            let text = fs::read_to_string(p).map_err(validation)?;
            let v: Value = serde_json::from_str(&text).map_err(|e| validation(format!("{}: {e}", p.display())))?;
            let phases = v.get("phases").and_then(Value::as_array).cloned().unwrap_or_default();
            let curves: BTreeMap<String, Value> = phases
                .iter()
                .filter_map(|ph| {
                    let i = ph.get("phase_index")?;
                    Some((format!("phase{i}"), ph.get("epoch_losses")?.clone()))
                })
                .collect();
            Some(curves)
        }
        None => None,
    };

    let accuracy = pairwise_accuracy(&model, &heldout).map_err(runtime)?;
    let mut metrics = json!({"accuracy": accuracy, "samples": heldout.len()});
    if let Some(c) = curves {
        metrics["loss_curves"] = json!(c);
    }
    if let Some(c) = counts {
        let (a, b) = win_rate(c).map_err(validation)?;
        metrics["win_rate"] = json!({"a": a, "b": b, "counts": [c.count_a, c.count_b, c.count_tie]});
    }
    run.write_json("metrics.json", &metrics)?;
    for (k, v) in metrics.as_object().expect("object") {
        run.metric(k, v);
    }
    run.finish()
}
