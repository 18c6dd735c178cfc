use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ifdid::decode::DecodeRecord;
use ifdid::harness::config::{parse_prompt, ExperimentConfig};
use ifdid::harness::experiment::{decode_config, sample_for, EncodedPrompt, Job, RecordLine, Workspace};
use ifdid::harness::{run_experiment, run_sweep, write_atomic};
use ifdid::metrics::{evaluate, Sample};
use ifdid::vocab::{detokenize, read_lines};

#[derive(Parser)]
#[command(name = "ifdid", version, about = "Decoding-strategy laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Use this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep only the strategy with this name.
    #[arg(long)]
    strategy: Option<String>,
    /// Override the generation limit (for `sweep`: a one-point grid).
    #[arg(long)]
    max_length: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(name) = &self.strategy {
            cfg.select_strategy(name)?;
        }
        if let Some(n) = self.max_length {
            cfg.max_length = n;
            if let Some(sweep) = cfg.sweep.as_mut() {
                sweep.grid = vec![n];
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the n-gram model and save it.
    TrainLm {
        #[command(flatten)]
        common: Common,
        /// Defaults to <experiment dir>/lm.txt.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train co-occurrence embeddings and save them as text vectors.
    TrainEmb {
        #[command(flatten)]
        common: Common,
        /// Defaults to <experiment dir>/embeddings.txt.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Decode one prompt with one strategy and print the text.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Index into the prompts file.
        #[arg(long, conflicts_with = "input")]
        prompt_id: Option<usize>,
        /// An ad-hoc prompt line: `pieces[<TAB>references[<TAB>prefix]]`.
        #[arg(long)]
        input: Option<String>,
        /// Print the records as JSON lines instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Score an existing records.jsonl file.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: PathBuf,
    },
    /// Decode every prompt with every strategy and write records, metrics
    /// and the report.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Mean repetition per strategy and truncation limit, as CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::TrainLm { common, output } => {
            let cfg = common.load()?;
            let ws = Workspace::prepare(&cfg)?;
            let path = output.unwrap_or_else(|| cfg.experiment_dir().join("lm.txt"));
            write_atomic(&path, ws.lm.to_text().as_bytes())?;
            println!("{}", path.display());
        }
        Command::TrainEmb { common, output } => {
            let cfg = common.load()?;
            let ws = Workspace::prepare(&cfg)?;
            let table = Workspace::embeddings(&cfg, &ws.corpus, &ws.vocab)?;
            let path = output.unwrap_or_else(|| cfg.experiment_dir().join("embeddings.txt"));
            write_atomic(&path, table.to_text(&ws.vocab).as_bytes())?;
            println!("{}", path.display());
        }
        Command::Decode {
            common,
            prompt_id,
            input,
            json,
        } => decode(&common, prompt_id, input, json)?,
        Command::Metrics { common, records } => metrics(&common, &records)?,
        Command::Run { common } => {
            let cfg = common.load()?;
            let outcome = run_experiment(&cfg)?;
            print!("{}", outcome.report.text);
        }
        Command::Sweep { common } => {
            let cfg = common.load()?;
            let (_, path) = run_sweep(&cfg)?;
            print!("{}", std::fs::read_to_string(&path)?);
        }
    }
    Ok(())
}

fn decode(common: &Common, prompt_id: Option<usize>, input: Option<String>, json: bool) -> Result<()> {
    let cfg = common.load()?;
    let ws = Workspace::prepare(&cfg)?;
    let (prompt, id) = match input {
        Some(line) => {
            let p = parse_prompt(&line, cfg.tokenizer).map_err(anyhow::Error::msg)?;
            let enc = EncodedPrompt {
                pieces: p.pieces.iter().map(|x| ws.vocab.encode(x)).collect(),
                references: p.references.iter().map(|x| ws.vocab.encode(x)).collect(),
                prefix: ws.vocab.encode(&p.prefix),
            };
            (enc, 0)
        }
        None => {
            let id = prompt_id.unwrap_or(0);
            let p = ws
                .prompts
                .get(id)
                .with_context(|| format!("prompt {id} out of range ({} prompts)", ws.prompts.len()))?;
            (p.clone(), id)
        }
    };
    let decoder = ws.decoder();
    for spec in &cfg.strategies {
        for &seed in &cfg.seeds {
            for sample in 0..cfg.samples_per_prompt {
                let job = Job {
                    prompt_id: id,
                    seed,
                    sample,
                };
                let rec = decoder.decode(&decode_config(&cfg, spec, &prompt, job, cfg.max_length))?;
                if json {
                    println!(
                        "{}",
                        serde_json::to_string(&RecordLine::new(job, spec.label(), &rec, &ws.vocab))?
                    );
                } else {
                    let text = detokenize(&ws.vocab.decode(rec.content()), cfg.tokenizer);
                    println!("{}\t{}\t{}", spec.label(), seed, text);
                }
            }
        }
    }
    Ok(())
}

fn metrics(common: &Common, records: &Path) -> Result<()> {
    let cfg = common.load()?;
    let ws = Workspace::prepare(&cfg)?;
    let mut samples: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for (i, line) in read_lines(records)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RecordLine = serde_json::from_str(line).with_context(|| format!("{}:{}", records.display(), i + 1))?;
        let Some(prompt) = ws.prompts.get(r.prompt_id) else {
            bail!("{}:{}: prompt {} out of range", records.display(), i + 1, r.prompt_id);
        };
        let rec = DecodeRecord {
            tokens: ws.vocab.encode(&r.tokens),
            steps: r.per_step,
            termination: r.termination,
        };
        samples.entry(r.strategy).or_default().push(sample_for(prompt, &rec));
    }
    let mut out = BTreeMap::new();
    for (name, s) in samples {
        out.insert(name, evaluate(&s, &cfg.metrics, Some(&ws.lm))?);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
