//! JSON experiment configuration and the prompts file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::{Selection, Strategy};
use crate::dist::ExtremenessPolicy;
use crate::error::{Error, Result};
use crate::lm::{Smoothing, DEFAULT_ORDER};
use crate::metrics::{Metric, DEFAULT_METRICS};
use crate::vocab::{read_lines, tokenize, TokenizeMode};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSettings {
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub smoothing: Smoothing,
    /// Load a saved model instead of training one.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_order() -> usize {
    DEFAULT_ORDER
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            order: DEFAULT_ORDER,
            smoothing: Smoothing::default(),
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSettings {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Load `word v1 v2 ...` vectors instead of training.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_window() -> usize {
    2
}

fn default_dim() -> usize {
    32
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        EmbeddingSettings {
            window: default_window(),
            dim: default_dim(),
            path: None,
        }
    }
}

/// Decoding options shared by every strategy unless a strategy overrides
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingSettings {
    /// `None`: clamp for the gamma family only.
    #[serde(default)]
    pub clamp: Option<bool>,
    #[serde(default = "default_threshold")]
    pub extremeness_threshold: f64,
    #[serde(default)]
    pub selection: Selection,
    /// Tokens added to the terminal set besides `.`, `!`, `?` and EOS.
    #[serde(default)]
    pub terminal_extra: Vec<String>,
}

fn default_threshold() -> f64 {
    ExtremenessPolicy::DEFAULT_THRESHOLD
}

impl Default for DecodingSettings {
    fn default() -> Self {
        DecodingSettings {
            clamp: None,
            extremeness_threshold: default_threshold(),
            selection: Selection::default(),
            terminal_extra: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    /// Output directory and report label; defaults to the strategy kind.
    #[serde(default)]
    pub name: Option<String>,
    pub decoder: Strategy,
    #[serde(default)]
    pub clamp: Option<bool>,
    #[serde(default)]
    pub selection: Option<Selection>,
}

impl StrategySpec {
    pub fn new(decoder: Strategy) -> Self {
        StrategySpec {
            name: None,
            decoder,
            clamp: None,
            selection: None,
        }
    }

    pub fn named(name: &str, decoder: Strategy) -> Self {
        StrategySpec {
            name: Some(name.to_owned()),
            ..Self::new(decoder)
        }
    }

    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(self.decoder.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    /// Strictly increasing truncation limits.
    pub grid: Vec<usize>,
    #[serde(default = "default_rep_n")]
    pub rep_n: usize,
}

fn default_rep_n() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    /// Training corpus, one document per line.
    pub train: PathBuf,
    /// Tab-separated prompts: `pieces<TAB>references[<TAB>prefix]`.
    pub prompts: PathBuf,
    #[serde(default)]
    pub tokenizer: TokenizeMode,
    #[serde(default = "one")]
    pub min_count: usize,
    #[serde(default)]
    pub lm: LmSettings,
    #[serde(default)]
    pub embeddings: EmbeddingSettings,
    pub strategies: Vec<StrategySpec>,
    pub max_length: usize,
    #[serde(default = "one")]
    pub samples_per_prompt: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub decoding: DecodingSettings,
    #[serde(default)]
    pub sweep: Option<SweepSettings>,
}

fn one() -> usize {
    1
}

fn default_metrics() -> Vec<Metric> {
    DEFAULT_METRICS.to_vec()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn is_safe_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl ExperimentConfig {
    /// Parses, resolves relative paths against the config file's directory
    /// and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train);
        fix(&mut self.prompts);
        fix(&mut self.output_dir);
        if let Some(p) = self.lm.path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.embeddings.path.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        if !is_safe_name(&self.name) {
            return bad(format!("experiment name {:?} is not a plain file name", self.name));
        }
        for p in [
            Some(&self.train),
            Some(&self.prompts),
            self.lm.path.as_ref(),
            self.embeddings.path.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            if !p.is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.strategies.is_empty() {
            return bad("strategies must not be empty".into());
        }
        if self.metrics.is_empty() {
            return bad("metrics must not be empty".into());
        }
        if self.max_length < 1 || self.samples_per_prompt < 1 || self.min_count < 1 || self.lm.order < 1 {
            return bad("max_length, samples_per_prompt, min_count and lm.order must be at least 1".into());
        }
        ExtremenessPolicy::new(self.decoding.extremeness_threshold)?;
        let mut names = HashSet::new();
        for s in &self.strategies {
            let label = s.label();
            if !is_safe_name(label) {
                return bad(format!("strategy name {label:?} is not a plain file name"));
            }
            if !names.insert(label) {
                return bad(format!("duplicate strategy name {label:?}"));
            }
            // k is checked against the vocabulary at decode time
            s.decoder.validate(usize::MAX)?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.grid.is_empty() || sweep.grid[0] == 0 || sweep.grid.windows(2).any(|w| w[0] >= w[1]) {
                return bad("sweep grid must be positive and strictly increasing".into());
            }
            if sweep.rep_n < 1 {
                return bad("sweep rep_n must be at least 1".into());
            }
        }
        Ok(())
    }

    pub fn extremeness(&self) -> ExtremenessPolicy {
        ExtremenessPolicy::new(self.decoding.extremeness_threshold).expect("validated")
    }

    pub fn needs_embeddings(&self) -> bool {
        self.strategies
            .iter()
            .any(|s| matches!(s.decoder, Strategy::IfdidSimi { .. }))
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }

    /// Keeps only the named strategy.
    pub fn select_strategy(&mut self, name: &str) -> Result<()> {
        self.strategies.retain(|s| s.label() == name);
        if self.strategies.is_empty() {
            return Err(Error::Config(format!("no strategy named {name:?}")));
        }
        Ok(())
    }
}

/// One line of the prompts file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    /// Input pieces as token strings. Comma-separated in the file when a
    /// piece spans several tokens; otherwise every token is its own piece.
    pub pieces: Vec<Vec<String>>,
    pub references: Vec<Vec<String>>,
    pub prefix: Vec<String>,
}

pub const REFERENCE_SEPARATOR: &str = "|||";

pub fn parse_prompt(line: &str, mode: TokenizeMode) -> std::result::Result<Prompt, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() > 3 {
        return Err(format!("expected at most 3 tab-separated fields, got {}", fields.len()));
    }
    let pieces_field = fields[0];
    let pieces: Vec<Vec<String>> = if pieces_field.contains(',') {
        pieces_field
            .split(',')
            .map(|p| tokenize(p.trim(), mode))
            .filter(|p| !p.is_empty())
            .collect()
    } else {
        tokenize(pieces_field, TokenizeMode::Whitespace)
            .into_iter()
            .map(|w| tokenize(&w, mode))
            .collect()
    };
    let references = fields
        .get(1)
        .map(|r| {
            r.split(REFERENCE_SEPARATOR)
                .map(|r| tokenize(r.trim(), mode))
                .filter(|r| !r.is_empty())
                .collect()
        })
        .unwrap_or_default();
    let prefix = fields.get(2).map(|p| tokenize(p, mode)).unwrap_or_default();
    Ok(Prompt {
        pieces,
        references,
        prefix,
    })
}

/// Blank lines are skipped; prompt ids count the remaining lines from 0.
pub fn load_prompts(path: &Path, mode: TokenizeMode) -> Result<Vec<Prompt>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_prompt(line, mode).map_err(|m| Error::parse(path, i + 1, m))?);
    }
    if out.is_empty() {
        return Err(Error::Config(format!("{} holds no prompts", path.display())));
    }
    Ok(out)
}
