use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use kbpi_core::augment::{augment_dataset, read_data_records};
use kbpi_core::decoder::{
    beam_search, enumerate_candidates_with, BeamConfig, OracleScorer, PartialHypothesis,
    RemoteScorer, Scorer, TopicSpec, UniformScorer,
};
use kbpi_core::eval::{read_eval_records, run_eval, EvalConfig, EvalScorer, Metric};
use kbpi_core::kopl::{execute_with, ExecOptions, Program};
use kbpi_core::schema_data::{build_pairs, emit_corpus, SamplingConfig};
use kbpi_core::{load_kb, parse_program, KnowledgeBase};

/// Program induction over knowledge bases.
#[derive(Parser)]
#[command(name = "kbpi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a KB and check it for consistency.
    Validate(KbArg),
    /// Print entity, schema and triple counts.
    Stats(KbArg),
    /// Execute a program and print its denotation.
    Exec {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long)]
        program: String,
        #[command(flatten)]
        exec: ExecFlags,
    },
    /// List the admissible next chunks of a prefix, one per line.
    Enumerate {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long, default_value = "")]
        prefix: String,
        #[command(flatten)]
        topics: TopicArgs,
        #[command(flatten)]
        exec: ExecFlags,
    },
    /// Generate renamed source KBs and rewrite a program dataset.
    Augment {
        #[command(flatten)]
        kb: KbArg,
        /// JSON lines of {"question", "program"}.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the triple-completion corpus for a KB.
    SchemaData {
        #[command(flatten)]
        kb: KbArg,
        /// Triples sampled per concept and per relation.
        #[arg(short = 'K', value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search for programs answering a question.
    Induce {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long)]
        question: String,
        #[command(flatten)]
        topics: TopicArgs,
        /// `uniform` or the URL of a scoring service.
        #[arg(
            long,
            conflicts_with = "mock_oracle",
            required_unless_present = "mock_oracle"
        )]
        scorer: Option<String>,
        /// Score with an oracle that knows this gold program.
        #[arg(long)]
        mock_oracle: Option<String>,
        #[command(flatten)]
        search: SearchFlags,
    },
    /// Evaluate induction on a dataset of questions.
    Eval {
        #[command(flatten)]
        kb: KbArg,
        /// JSON lines of {"question", "topic_entities", "gold_answers", "gold_program"?}.
        #[arg(long)]
        dataset: PathBuf,
        /// `oracle` (uses each record's gold program), `uniform`, or a URL.
        #[arg(long)]
        scorer: String,
        #[arg(long, default_value = "f1")]
        metric: Metric,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Per-record time limit in seconds.
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
        #[command(flatten)]
        search: SearchFlags,
    },
}

#[derive(Args)]
struct KbArg {
    #[arg(long)]
    kb: PathBuf,
}

impl KbArg {
    fn load(&self) -> Result<KnowledgeBase> {
        load_kb(&self.kb).with_context(|| format!("loading {}", self.kb.display()))
    }
}

#[derive(Args)]
struct TopicArgs {
    /// Comma-separated topic entity names.
    #[arg(long, value_delimiter = ',')]
    topics: Vec<String>,
    /// Comma-separated topic concepts, used when no topic entity is given.
    #[arg(long, value_delimiter = ',')]
    concepts: Vec<String>,
}

impl TopicArgs {
    fn spec(&self) -> TopicSpec {
        let clean = |xs: &[String]| {
            xs.iter()
                .map(|s| s.trim().to_owned())
                .filter(|s| !s.is_empty())
                .collect()
        };
        TopicSpec {
            topic_entities: clean(&self.topics),
            topic_concepts: clean(&self.concepts),
        }
    }
}

#[derive(Args, Clone, Copy)]
struct ExecFlags {
    /// FilterConcept keeps direct instances only.
    #[arg(long)]
    direct_concepts: bool,
}

impl ExecFlags {
    fn options(self) -> ExecOptions {
        ExecOptions {
            transitive_concepts: !self.direct_concepts,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct SearchFlags {
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 20)]
    max_steps: usize,
    #[command(flatten)]
    exec: ExecFlags,
}

impl SearchFlags {
    fn config(self) -> Result<BeamConfig> {
        if self.beam == 0 || self.max_steps == 0 {
            bail!("--beam and --max-steps must be at least 1");
        }
        Ok(BeamConfig {
            beam: self.beam,
            max_steps: self.max_steps,
            exec: self.exec.options(),
        })
    }
}

fn shared_scorer(spec: &str) -> Result<Arc<dyn Scorer>> {
    if spec == "uniform" {
        Ok(Arc::new(UniformScorer))
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Arc::new(RemoteScorer::new(spec)))
    } else {
        bail!("unknown scorer {spec:?}: expected `uniform` or an http(s) URL")
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    run(Cli::parse().command)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Validate(kb) => validate(&kb.kb),
        Command::Stats(kb) => {
            print_json(&serde_json::to_value(kb.load()?.stats())?)?;
            Ok(())
        }
        Command::Exec { kb, program, exec } => {
            let kb = kb.load()?;
            let p = parse_program(&program).context("parsing --program")?;
            let d = execute_with(&kb, &p, &exec.options()).context("executing program")?;
            print_json(&d.to_json(&kb))?;
            Ok(())
        }
        Command::Enumerate {
            kb,
            prefix,
            topics,
            exec,
        } => {
            let kb = kb.load()?;
            let opts = exec.options();
            let p = Program::parse_prefix(&prefix).context("parsing --prefix")?;
            let hyp =
                PartialHypothesis::from_program(&kb, p, &opts).context("executing --prefix")?;
            let mut out = io::stdout().lock();
            for c in enumerate_candidates_with(&kb, &hyp, &topics.spec(), &opts)? {
                writeln!(out, "{c}")?;
            }
            Ok(())
        }
        Command::Augment {
            kb,
            data,
            n,
            seed,
            out,
        } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            let kb = kb.load()?;
            let records = read_data_records(&data)?;
            let manifest = augment_dataset(&kb, &records, n, seed, &out)?;
            eprintln!(
                "{} records, {} programs verified, {} violations",
                manifest.records_out,
                manifest.programs_verified,
                manifest.violations.len()
            );
            print_json(&serde_json::to_value(&manifest)?)?;
            Ok(())
        }
        Command::SchemaData { kb, k, out } => {
            let kb = kb.load()?;
            let cfg = SamplingConfig::new(k as usize)?;
            let summary = emit_corpus(&kb, &build_pairs(&kb, &cfg), &out)?;
            print_json(&json!({
                "k": k,
                "out": out.display().to_string(),
                "summary": summary,
            }))?;
            Ok(())
        }
        Command::Induce {
            kb,
            question,
            topics,
            scorer,
            mock_oracle,
            search,
        } => {
            let kb = kb.load()?;
            let cfg = search.config()?;
            let scorer: Arc<dyn Scorer> = match (scorer, mock_oracle) {
                (_, Some(gold)) => Arc::new(OracleScorer::new(
                    parse_program(&gold).context("parsing --mock-oracle")?,
                )),
                (Some(s), None) => shared_scorer(&s)?,
                (None, None) => bail!("one of --scorer or --mock-oracle is required"),
            };
            let results = beam_search(&kb, &question, &topics.spec(), scorer.as_ref(), &cfg)?;
            let items: Vec<_> = results
                .iter()
                .map(|r| {
                    json!({
                        "program": r.program.serialize(),
                        "score": r.score,
                        "answers": r.denotation.answers(&kb),
                        "denotation": r.denotation.to_json(&kb),
                    })
                })
                .collect();
            print_json(&json!({ "question": question, "results": items }))?;
            Ok(())
        }
        Command::Eval {
            kb,
            dataset,
            scorer,
            metric,
            parallel,
            timeout,
            search,
        } => {
            if parallel == 0 {
                bail!("--parallel must be at least 1");
            }
            if !(timeout > 0.0 && timeout.is_finite()) {
                bail!("--timeout must be a positive number of seconds");
            }
            let kb = Arc::new(kb.load()?);
            let records = read_eval_records(&dataset)?;
            let scorer = if scorer == "oracle" {
                EvalScorer::Oracle
            } else {
                EvalScorer::Shared(shared_scorer(&scorer)?)
            };
            let cfg = EvalConfig {
                metric,
                beam: search.config()?,
                timeout: Duration::from_secs_f64(timeout),
                parallel,
            };
            let report = run_eval(kb, records, scorer, &cfg)?;
            eprintln!(
                "{} = {:.4} over {} records",
                metric,
                report.score,
                report.records.len()
            );
            print_json(&serde_json::to_value(&report)?)?;
            Ok(())
        }
    }
}

fn validate(path: &Path) -> Result<()> {
    match load_kb(path) {
        Ok(kb) => {
            if let Err(e) = kb.check_indexes() {
                print_json(&json!({ "valid": false, "error": e }))?;
                bail!("index check failed: {e}");
            }
            print_json(&json!({ "valid": true, "stats": kb.stats() }))?;
            Ok(())
        }
        Err(e) => {
            print_json(&json!({ "valid": false, "error": e.to_string() }))?;
            Err(e).with_context(|| format!("validating {}", path.display()))
        }
    }
}
