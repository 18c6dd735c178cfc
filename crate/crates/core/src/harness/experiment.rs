use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{DecodeConfig, DecodeRecord, Decoder, StepDiagnostics, Strategy, Termination};
use crate::dist::compensated_sum;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::lm::NGramLm;
use crate::metrics::{evaluate, MetricReport, Sample};
use crate::vocab::{read_lines, Corpus, Vocabulary};
use crate::TokenId;

use super::config::{load_prompts, ExperimentConfig, StrategySpec};
use super::report::{emit_report, Report};
use super::write_atomic;

/// A prompt mapped to ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPrompt {
    pub pieces: Vec<Vec<TokenId>>,
    pub references: Vec<Vec<TokenId>>,
    pub prefix: Vec<TokenId>,
}

/// Everything an experiment decodes with: the model, optional embeddings and
/// the encoded prompts.
pub struct Workspace {
    pub vocab: Vocabulary,
    pub lm: NGramLm,
    pub embeddings: Option<EmbeddingTable>,
    pub corpus: Corpus,
    pub prompts: Vec<EncodedPrompt>,
}

impl Workspace {
    /// Trains or loads the model, builds embeddings when a strategy needs
    /// them, and encodes the prompts. Unknown prompt tokens map to UNK.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let lm = match &cfg.lm.path {
            Some(path) => NGramLm::load(path)?,
            None => {
                let lines = read_lines(&cfg.train)?;
                let vocab = Vocabulary::build(&lines, cfg.tokenizer, cfg.min_count)?;
                let corpus = Corpus::from_lines(&lines, &vocab, cfg.tokenizer);
                NGramLm::train(&corpus, vocab, cfg.lm.order, cfg.lm.smoothing.clone())?
            }
        };
        let vocab = lm.vocab().clone();
        let corpus = Corpus::load(&cfg.train, &vocab, cfg.tokenizer)?;
        let embeddings = if cfg.needs_embeddings() {
            Some(Self::embeddings(cfg, &corpus, &vocab)?)
        } else {
            None
        };
        let prompts = load_prompts(&cfg.prompts, cfg.tokenizer)?
            .into_iter()
            .map(|p| EncodedPrompt {
                pieces: p.pieces.iter().map(|x| vocab.encode(x)).collect(),
                references: p.references.iter().map(|x| vocab.encode(x)).collect(),
                prefix: vocab.encode(&p.prefix),
            })
            .collect();
        Ok(Workspace {
            vocab,
            lm,
            embeddings,
            corpus,
            prompts,
        })
    }

    pub fn embeddings(cfg: &ExperimentConfig, corpus: &Corpus, vocab: &Vocabulary) -> Result<EmbeddingTable> {
        match &cfg.embeddings.path {
            Some(path) => Ok(EmbeddingTable::load_text_vectors(path, vocab)?.0),
            None => EmbeddingTable::train_cooccurrence(
                corpus,
                vocab.len(),
                cfg.embeddings.window,
                cfg.embeddings.dim.min(vocab.len()),
            ),
        }
    }

    pub fn decoder(&self) -> Decoder<'_, NGramLm> {
        let d = Decoder::new(&self.lm, &self.vocab);
        match &self.embeddings {
            Some(e) => d.with_embeddings(e),
            None => d,
        }
    }
}

/// Identifies one decoded sequence within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Job {
    pub prompt_id: usize,
    pub seed: u64,
    pub sample: usize,
}

/// All jobs of a run, ordered by prompt, then seed, then sample.
pub fn jobs(cfg: &ExperimentConfig, prompts: usize) -> Vec<Job> {
    let mut out = Vec::with_capacity(prompts * cfg.seeds.len() * cfg.samples_per_prompt);
    for prompt_id in 0..prompts {
        for &seed in &cfg.seeds {
            for sample in 0..cfg.samples_per_prompt {
                out.push(Job {
                    prompt_id,
                    seed,
                    sample,
                });
            }
        }
    }
    out
}

/// The decode settings for `job`. The random stream depends on the seed,
/// prompt and sample index only, so all strategies see the same uniforms.
pub fn decode_config(
    cfg: &ExperimentConfig,
    spec: &StrategySpec,
    prompt: &EncodedPrompt,
    job: Job,
    max_length: usize,
) -> DecodeConfig {
    DecodeConfig {
        strategy: spec.decoder.clone(),
        max_length,
        seed: job.seed,
        stream: (job.prompt_id * cfg.samples_per_prompt + job.sample) as u64,
        prompt: prompt.prefix.clone(),
        input_pieces: prompt.pieces.clone(),
        clamp: spec.clamp.or(cfg.decoding.clamp),
        extremeness: cfg.extremeness(),
        selection: spec.selection.unwrap_or(cfg.decoding.selection),
        terminal_extra: cfg.decoding.terminal_extra.clone(),
    }
}

/// Decodes every job for one strategy, in parallel, returning records in job
/// order.
pub fn decode_all(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    spec: &StrategySpec,
    jobs: &[Job],
    max_length: usize,
) -> Result<Vec<DecodeRecord>> {
    let decoder = ws.decoder();
    jobs.par_iter()
        .map(|&job| decoder.decode(&decode_config(cfg, spec, &ws.prompts[job.prompt_id], job, max_length)))
        .collect()
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub prompt_id: usize,
    pub seed: u64,
    pub sample: usize,
    pub strategy: String,
    pub tokens: Vec<String>,
    pub termination: Termination,
    pub per_step: Vec<StepDiagnostics>,
}

impl RecordLine {
    pub fn new(job: Job, strategy: &str, record: &DecodeRecord, vocab: &Vocabulary) -> Self {
        RecordLine {
            prompt_id: job.prompt_id,
            seed: job.seed,
            sample: job.sample,
            strategy: strategy.to_owned(),
            tokens: vocab.decode(&record.tokens),
            termination: record.termination,
            per_step: record.steps.clone(),
        }
    }
}

pub fn sample_for(prompt: &EncodedPrompt, record: &DecodeRecord) -> Sample {
    Sample {
        hypothesis: record.content().to_vec(),
        emitted: record.tokens.clone(),
        prefix: prompt.prefix.clone(),
        references: prompt.references.clone(),
        pieces: prompt.pieces.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub corpus: BTreeMap<String, f64>,
}

/// Contents of a strategy's `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyMetrics {
    pub strategy: String,
    /// Scores per seed; corpus metrics such as Dist are computed within a
    /// seed.
    pub per_seed: Vec<SeedMetrics>,
    /// Mean over seeds.
    pub mean: BTreeMap<String, f64>,
    /// Sample standard deviation over seeds; 0 with a single seed.
    pub std: BTreeMap<String, f64>,
    /// All seeds pooled, with per-sample values in job order.
    pub pooled: MetricReport,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Scores one strategy's records (in job order) per seed and pooled.
pub fn score(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    strategy: &str,
    jobs: &[Job],
    records: &[DecodeRecord],
) -> Result<StrategyMetrics> {
    let samples: Vec<Sample> = jobs
        .iter()
        .zip(records)
        .map(|(j, r)| sample_for(&ws.prompts[j.prompt_id], r))
        .collect();
    let pooled = evaluate(&samples, &cfg.metrics, Some(&ws.lm))?;
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let subset: Vec<Sample> = jobs
            .iter()
            .zip(&samples)
            .filter(|(j, _)| j.seed == seed)
            .map(|(_, s)| s.clone())
            .collect();
        per_seed.push(SeedMetrics {
            seed,
            corpus: evaluate(&subset, &cfg.metrics, Some(&ws.lm))?.corpus,
        });
    }
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    for key in pooled.corpus.keys() {
        let values: Vec<f64> = per_seed.iter().filter_map(|s| s.corpus.get(key).copied()).collect();
        let (m, s) = mean_std(&values);
        mean.insert(key.clone(), m);
        std.insert(key.clone(), s);
    }
    Ok(StrategyMetrics {
        strategy: strategy.to_owned(),
        per_seed,
        mean,
        std,
        pooled,
    })
}

/// What one strategy produced.
#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub name: String,
    pub records: Vec<DecodeRecord>,
    pub metrics: StrategyMetrics,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub jobs: Vec<Job>,
    pub strategies: Vec<StrategyOutcome>,
    pub report: Report,
    /// Files written, in write order.
    pub written: Vec<PathBuf>,
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// Decodes and scores every strategy without touching the file system.
pub fn compute_experiment(cfg: &ExperimentConfig, ws: &Workspace) -> Result<(Vec<Job>, Vec<StrategyOutcome>)> {
    let jobs = jobs(cfg, ws.prompts.len());
    let mut outcomes = Vec::with_capacity(cfg.strategies.len());
    for spec in &cfg.strategies {
        if matches!(spec.decoder, Strategy::IfdidSimi { .. }) && ws.embeddings.is_none() {
            return Err(Error::Config(format!("strategy {} needs embeddings", spec.label())));
        }
        let records = decode_all(ws, cfg, spec, &jobs, cfg.max_length)?;
        let metrics = score(ws, cfg, spec.label(), &jobs, &records)?;
        outcomes.push(StrategyOutcome {
            name: spec.label().to_owned(),
            records,
            metrics,
        });
    }
    Ok((jobs, outcomes))
}

/// Runs every strategy and writes `<strategy>/records.jsonl`,
/// `<strategy>/metrics.json` and `report.{txt,json}` under the experiment
/// directory. Nothing is written unless every strategy succeeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let ws = Workspace::prepare(cfg)?;
    run_experiment_in(cfg, &ws)
}

pub fn run_experiment_in(cfg: &ExperimentConfig, ws: &Workspace) -> Result<ExperimentOutcome> {
    let (jobs, strategies) = compute_experiment(cfg, ws)?;
    let metrics: Vec<StrategyMetrics> = strategies.iter().map(|s| s.metrics.clone()).collect();
    let report = emit_report(&metrics, &cfg.metrics)?;

    let dir = cfg.experiment_dir();
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    for s in &strategies {
        let mut jsonl = Vec::new();
        for (job, record) in jobs.iter().zip(&s.records) {
            serde_json::to_writer(&mut jsonl, &RecordLine::new(*job, &s.name, record, &ws.vocab))?;
            jsonl.push(b'\n');
        }
        files.push((dir.join(&s.name).join("records.jsonl"), jsonl));
        files.push((dir.join(&s.name).join("metrics.json"), to_json(&s.metrics)?));
    }
    files.push((dir.join("report.txt"), report.text.clone().into_bytes()));
    files.push((dir.join("report.json"), to_json(&report.table)?));
    let mut written = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(ExperimentOutcome {
        jobs,
        strategies,
        report,
        written,
    })
}
