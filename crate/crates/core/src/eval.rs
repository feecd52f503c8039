//! Answer-set metrics and the batch evaluation harness.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::augment::{read_jsonl, AugmentError};
use crate::decoder::{beam_search, BeamConfig, OracleScorer, Scorer, TopicSpec};
use crate::kb::KnowledgeBase;
use crate::kopl::{execute_with, parse_program};

/// Collapses runs of whitespace and trims; case is kept.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn answer_set<S: AsRef<str>>(xs: &[S]) -> BTreeSet<String> {
    xs.iter().map(|x| normalize_answer(x.as_ref())).collect()
}

/// Harmonic mean of precision and recall; 0 when either set is empty.
/// Computed as 2·tp / (|P| + |G|), which avoids intermediate rounding.
pub fn f1<S: AsRef<str>, T: AsRef<str>>(predicted: &[S], gold: &[T]) -> f64 {
    let p = answer_set(predicted);
    let g = answer_set(gold);
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let tp = p.intersection(&g).count();
    (2 * tp) as f64 / (p.len() + g.len()) as f64
}

/// 1 if any answer of the top prediction is a gold answer.
pub fn hit1<S: AsRef<str>, T: AsRef<str>>(predicted: &[S], gold: &[T]) -> f64 {
    let g = answer_set(gold);
    let hit = answer_set(predicted).iter().any(|a| g.contains(a));
    if hit {
        1.0
    } else {
        0.0
    }
}

/// 1 if the answer sets are equal (and non-empty).
pub fn accuracy<S: AsRef<str>, T: AsRef<str>>(predicted: &[S], gold: &[T]) -> f64 {
    let p = answer_set(predicted);
    if !p.is_empty() && p == answer_set(gold) {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    F1,
    Hit1,
    Accuracy,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::F1 => "f1",
            Metric::Hit1 => "hit1",
            Metric::Accuracy => "accuracy",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f1" => Ok(Metric::F1),
            "hit1" | "hit@1" => Ok(Metric::Hit1),
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            other => Err(format!(
                "unknown metric {other:?} (expected f1, hit1 or accuracy)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question: String,
    #[serde(default)]
    pub topic_entities: Vec<String>,
    /// Used only when there are no topic entities.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub topic_concepts: Vec<String>,
    #[serde(default)]
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_program: Option<String>,
}

pub fn read_eval_records(path: &Path) -> Result<Vec<EvalRecord>, AugmentError> {
    read_jsonl(path)
}

/// Where candidate scores come from during evaluation.
#[derive(Clone)]
pub enum EvalScorer {
    /// Oracle on each record's own gold program.
    Oracle,
    Shared(Arc<dyn Scorer>),
}

impl fmt::Debug for EvalScorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalScorer::Oracle => f.write_str("Oracle"),
            EvalScorer::Shared(_) => f.write_str("Shared(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub metric: Metric,
    pub beam: BeamConfig,
    pub timeout: Duration,
    pub parallel: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metric: Metric::F1,
            beam: BeamConfig::default(),
            timeout: Duration::from_secs(30),
            parallel: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub index: usize,
    pub question: String,
    pub program: Option<String>,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
    pub f1: f64,
    pub hit1: f64,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timed_out: bool,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub f1: f64,
    pub hit1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub records: usize,
    pub failures: usize,
    pub timeouts: usize,
    pub total_ms: u64,
    pub mean_record_ms: f64,
    pub max_record_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    /// Aggregate value of the selected metric.
    pub score: f64,
    pub aggregate: Aggregate,
    pub runtime: RuntimeStats,
    pub records: Vec<RecordResult>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("parallelism must be at least 1")]
    ZeroParallel,
}

struct Outcome {
    program: Option<String>,
    predicted: Vec<String>,
    gold: Vec<String>,
    error: Option<String>,
}

fn run_record(
    kb: &KnowledgeBase,
    rec: &EvalRecord,
    scorer: &EvalScorer,
    cfg: &BeamConfig,
) -> Outcome {
    let mut out = Outcome {
        program: None,
        predicted: Vec::new(),
        gold: rec.gold_answers.clone(),
        error: None,
    };
    let gold_program = match rec.gold_program.as_deref().map(parse_program).transpose() {
        Ok(p) => p,
        Err(e) => {
            out.error = Some(format!("gold program: {e}"));
            return out;
        }
    };
    if out.gold.is_empty() {
        match gold_program
            .as_ref()
            .map(|p| execute_with(kb, p, &cfg.exec))
        {
            Some(Ok(d)) => out.gold = d.answers(kb),
            Some(Err(e)) => {
                out.error = Some(format!("gold program: {e}"));
                return out;
            }
            None => {
                out.error = Some("record has neither gold answers nor a gold program".into());
                return out;
            }
        }
    }
    let oracle;
    let scorer: &dyn Scorer = match scorer {
        EvalScorer::Shared(s) => s.as_ref(),
        EvalScorer::Oracle => match gold_program {
            Some(p) => {
                oracle = OracleScorer::new(p);
                &oracle
            }
            None => {
                out.error = Some("oracle scoring needs a gold program".into());
                return out;
            }
        },
    };
    let topics = TopicSpec {
        topic_entities: rec.topic_entities.clone(),
        topic_concepts: rec.topic_concepts.clone(),
    };
    match beam_search(kb, &rec.question, &topics, scorer, cfg) {
        Ok(results) => {
            let top = &results[0];
            out.program = Some(top.program.serialize());
            out.predicted = top.denotation.answers(kb);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

/// Runs induction on every record and scores the top program's answers.
/// Failures and timeouts score 0 and never stop the run; results keep input
/// order.
pub fn run_eval(
    kb: Arc<KnowledgeBase>,
    records: Vec<EvalRecord>,
    scorer: EvalScorer,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if cfg.parallel == 0 {
        return Err(EvalError::ZeroParallel);
    }
    let started = Instant::now();
    let records = Arc::new(records);
    let n = records.len();
    let next = Arc::new(Mutex::new(0usize));
    let results: Arc<Mutex<Vec<Option<RecordResult>>>> = Arc::new(Mutex::new(vec![None; n]));

    let workers: Vec<_> = (0..cfg.parallel.min(n.max(1)))
        .map(|_| {
            let (kb, records, next, results, scorer, cfg) = (
                kb.clone(),
                records.clone(),
                next.clone(),
                results.clone(),
                scorer.clone(),
                *cfg,
            );
            thread::spawn(move || loop {
                let i = {
                    let mut g = next.lock().expect("index lock");
                    let i = *g;
                    *g += 1;
                    i
                };
                if i >= n {
                    break;
                }
                let t0 = Instant::now();
                let (tx, rx) = mpsc::channel();
                {
                    let (kb, records, scorer) = (kb.clone(), records.clone(), scorer.clone());
                    thread::spawn(move || {
                        let _ = tx.send(run_record(&kb, &records[i], &scorer, &cfg.beam));
                    });
                }
                let rec = &records[i];
                let (outcome, timed_out) = match rx.recv_timeout(cfg.timeout) {
                    Ok(o) => (o, false),
                    Err(_) => (
                        Outcome {
                            program: None,
                            predicted: Vec::new(),
                            gold: rec.gold_answers.clone(),
                            error: Some(format!("timed out after {:?}", cfg.timeout)),
                        },
                        true,
                    ),
                };
                if let Some(e) = &outcome.error {
                    warn!(record = i + 1, error = %e, "record failed");
                }
                let r = RecordResult {
                    index: i,
                    question: rec.question.clone(),
                    f1: f1(&outcome.predicted, &outcome.gold),
                    hit1: hit1(&outcome.predicted, &outcome.gold),
                    accuracy: accuracy(&outcome.predicted, &outcome.gold),
                    program: outcome.program,
                    predicted: outcome.predicted,
                    gold: outcome.gold,
                    error: outcome.error,
                    timed_out,
                    elapsed_ms: t0.elapsed().as_millis() as u64,
                };
                results.lock().expect("results lock")[i] = Some(r);
            })
        })
        .collect();
    for w in workers {
        w.join().expect("evaluation worker panicked");
    }

    let records: Vec<RecordResult> = Arc::try_unwrap(results)
        .expect("workers joined")
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every record evaluated"))
        .collect();
    let mean = |f: fn(&RecordResult) -> f64| {
        if records.is_empty() {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / records.len() as f64
        }
    };
    let aggregate = Aggregate {
        f1: mean(|r| r.f1),
        hit1: mean(|r| r.hit1),
        accuracy: mean(|r| r.accuracy),
    };
    let score = match cfg.metric {
        Metric::F1 => aggregate.f1,
        Metric::Hit1 => aggregate.hit1,
        Metric::Accuracy => aggregate.accuracy,
    };
    let runtime = RuntimeStats {
        records: n,
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        timeouts: records.iter().filter(|r| r.timed_out).count(),
        total_ms: started.elapsed().as_millis() as u64,
        mean_record_ms: mean(|r| r.elapsed_ms as f64),
        max_record_ms: records.iter().map(|r| r.elapsed_ms).max().unwrap_or(0),
    };
    Ok(EvalReport {
        metric: cfg.metric,
        score,
        aggregate,
        runtime,
        records,
    })
}
