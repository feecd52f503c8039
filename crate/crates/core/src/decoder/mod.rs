//! Constrained decoding: admissible next chunks and beam search.
//!
//! A hypothesis is only ever extended by chunks that execute without error
//! and leave a non-empty denotation on the branch they touch, so every
//! finished program has a non-empty answer.

mod scorer;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{KnowledgeBase, Tail};
use crate::kopl::{
    execute_prefix_with, Denotation, ExecError, ExecOptions, ExecState, Function, FunctionCall,
    Program, MAX_PROGRAM_LEN,
};

pub use scorer::{
    OracleScorer, RemoteScorer, ScoreRequest, ScoreResponse, Scorer, ScorerError, UniformScorer,
    DEFAULT_FLOOR,
};

/// Candidate text used for the end-of-program marker.
pub const END: &str = "END";

/// Linked starting points of a search.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSpec {
    #[serde(default)]
    pub topic_entities: Vec<String>,
    /// Only consulted when `topic_entities` is empty.
    #[serde(default)]
    pub topic_concepts: Vec<String>,
}

impl TopicSpec {
    pub fn entities<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        TopicSpec {
            topic_entities: names.into_iter().map(Into::into).collect(),
            topic_concepts: Vec::new(),
        }
    }

    pub fn concepts<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        TopicSpec {
            topic_entities: Vec::new(),
            topic_concepts: names.into_iter().map(Into::into).collect(),
        }
    }
}

/// One admissible continuation. The no-topic-entity seed is a single
/// two-call candidate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Candidate {
    Calls(Vec<FunctionCall>),
    End,
}

impl Candidate {
    pub fn call(call: FunctionCall) -> Self {
        Candidate::Calls(vec![call])
    }

    pub fn is_end(&self) -> bool {
        matches!(self, Candidate::End)
    }

    pub fn text(&self) -> String {
        self.to_string()
    }

    fn sort_key(&self) -> (u8, Vec<(&'static str, &str)>) {
        match self {
            Candidate::Calls(calls) => (
                0,
                calls.iter().map(|c| (c.function.name(), c.arg())).collect(),
            ),
            Candidate::End => (1, Vec::new()),
        }
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Candidate::Calls(calls) => {
                for (i, c) in calls.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{c}")?;
                }
                Ok(())
            }
            Candidate::End => f.write_str(END),
        }
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A program prefix together with its cached execution state.
#[derive(Debug, Clone)]
pub struct PartialHypothesis {
    pub program: Program,
    pub state: ExecState,
    pub score: f64,
    pub finished: bool,
}

impl PartialHypothesis {
    pub fn root() -> Self {
        PartialHypothesis {
            program: Program::default(),
            state: ExecState::default(),
            score: 0.0,
            finished: false,
        }
    }

    pub fn from_program(
        kb: &KnowledgeBase,
        program: Program,
        opts: &ExecOptions,
    ) -> Result<Self, ExecError> {
        let state = execute_prefix_with(kb, &program, opts)?;
        Ok(PartialHypothesis {
            program,
            state,
            score: 0.0,
            finished: false,
        })
    }

    /// Extends by a non-END candidate, or `None` if it fails to execute.
    fn extend(
        &self,
        kb: &KnowledgeBase,
        opts: &ExecOptions,
        calls: &[FunctionCall],
    ) -> Option<PartialHypothesis> {
        let mut state = self.state.clone();
        let mut program = self.program.clone();
        for call in calls {
            state.apply(kb, opts, call).ok()?;
            program.calls.push(call.clone());
        }
        Some(PartialHypothesis {
            program,
            state,
            score: self.score,
            finished: false,
        })
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("no seed possible: {0}")]
    NoSeed(String),
    #[error("hypothesis is already finished")]
    Finished,
    #[error("beam width and max steps must be at least 1")]
    BadConfig,
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("no hypothesis finished within {0} steps")]
    NoFinished(usize),
}

/// Is `call` an admissible next chunk for a prefix in `state`?
///
/// Trial-executes the call and requires a non-empty result on the touched
/// branch; Count additionally needs a non-empty operand and a single branch
/// because nothing but END may follow it.
pub fn admissible(
    kb: &KnowledgeBase,
    opts: &ExecOptions,
    state: &ExecState,
    call: &FunctionCall,
) -> bool {
    if call.function == Function::Count {
        match state.top() {
            Some(Denotation::Entities(s)) if !s.is_empty() && state.depth() == 1 => {}
            _ => return false,
        }
    }
    let mut trial = state.clone();
    trial.apply(kb, opts, call).is_ok() && !trial.top().is_some_and(Denotation::is_empty)
}

/// Admissible continuations of `hyp` in canonical order, END last.
pub fn enumerate_candidates(
    kb: &KnowledgeBase,
    hyp: &PartialHypothesis,
    topics: &TopicSpec,
) -> Result<Vec<Candidate>, DecodeError> {
    enumerate_candidates_with(kb, hyp, topics, &ExecOptions::default())
}

pub fn enumerate_candidates_with(
    kb: &KnowledgeBase,
    hyp: &PartialHypothesis,
    topics: &TopicSpec,
    opts: &ExecOptions,
) -> Result<Vec<Candidate>, DecodeError> {
    if hyp.finished {
        return Err(DecodeError::Finished);
    }
    if hyp.program.is_empty() {
        return seed_candidates(kb, topics, opts);
    }
    let state = &hyp.state;
    let can_end = state.depth() == 1;
    let terminal = hyp.program.len() >= MAX_PROGRAM_LEN
        || hyp.program.calls.last().map(|c| c.function) == Some(Function::Count);
    if terminal {
        return Ok(if can_end {
            vec![Candidate::End]
        } else {
            Vec::new()
        });
    }

    let mut proposals: BTreeSet<FunctionCall> = BTreeSet::new();
    let mut propose = |f: Function, arg: Option<&str>| {
        if let Ok(call) = FunctionCall::new(f, arg) {
            proposals.insert(call);
        }
    };

    match state.top() {
        Some(Denotation::Entities(src)) => {
            let mut concepts = BTreeSet::new();
            let mut out_rels = BTreeSet::new();
            let mut in_rels = BTreeSet::new();
            let mut numeric_rels = BTreeSet::new();
            for &e in src {
                for &c in kb.concepts_of(e) {
                    concepts.insert(c);
                    if opts.transitive_concepts {
                        concepts.extend(kb.ancestors(c));
                    }
                }
                for r in kb.out_relations(e) {
                    out_rels.insert(r);
                    let numeric = kb
                        .forward_tails(e, r)
                        .iter()
                        .any(|t| matches!(t, Tail::Value(v) if v.is_numeric()));
                    if numeric {
                        numeric_rels.insert(r);
                    }
                }
                in_rels.extend(kb.in_relations(e));
            }
            for c in concepts {
                propose(Function::FilterConcept, Some(&kb.concept(c).name));
            }
            for r in out_rels {
                propose(Function::Relate, Some(&kb.relation(r).name));
            }
            for r in in_rels {
                propose(Function::ReverseRelate, Some(&kb.relation(r).name));
            }
            for r in numeric_rels {
                propose(Function::Argmax, Some(&kb.relation(r).name));
                propose(Function::Argmin, Some(&kb.relation(r).name));
            }
            propose(Function::Count, None);
            if matches!(state.below_top(), Some(Denotation::Entities(_))) {
                propose(Function::And, None);
                propose(Function::Or, None);
            }
        }
        Some(Denotation::Values(vals)) => {
            if let Some(pivot) = vals
                .iter()
                .next()
                .filter(|v| vals.len() == 1 && v.is_numeric())
            {
                for r in kb.relation_ixs() {
                    let has_comparable = kb
                        .triples_of(r)
                        .any(|t| matches!(&t.tail, Tail::Value(v) if v.comparable_with(pivot)));
                    if has_comparable {
                        for f in [Function::LT, Function::LE, Function::GT, Function::GE] {
                            propose(f, Some(&kb.relation(r).name));
                        }
                    }
                }
            }
        }
        Some(Denotation::Count(_)) | None => {}
    }

    let used: BTreeSet<&str> = hyp
        .program
        .calls
        .iter()
        .filter(|c| c.function == Function::Find)
        .map(|c| c.arg())
        .collect();
    for name in &topics.topic_entities {
        if !used.contains(name.trim()) {
            propose(Function::Find, Some(name));
        }
    }

    let mut out: Vec<Candidate> = proposals
        .into_iter()
        .filter(|call| admissible(kb, opts, state, call))
        .map(Candidate::call)
        .collect();
    out.sort();
    if can_end {
        out.push(Candidate::End);
    }
    Ok(out)
}

fn seed_candidates(
    kb: &KnowledgeBase,
    topics: &TopicSpec,
    opts: &ExecOptions,
) -> Result<Vec<Candidate>, DecodeError> {
    let root = ExecState::default();
    let mut out = BTreeSet::new();
    if !topics.topic_entities.is_empty() {
        for name in &topics.topic_entities {
            if let Ok(call) = FunctionCall::new(Function::Find, Some(name)) {
                if admissible(kb, opts, &root, &call) {
                    out.insert(Candidate::call(call));
                }
            }
        }
        if out.is_empty() {
            return Err(DecodeError::NoSeed(format!(
                "none of the topic entities {:?} resolve",
                topics.topic_entities
            )));
        }
    } else {
        let find_all =
            FunctionCall::new(Function::FindAll, None).expect("FindAll takes no argument");
        let mut after_all = root.clone();
        after_all
            .apply(kb, opts, &find_all)
            .expect("FindAll cannot fail");
        for name in &topics.topic_concepts {
            if let Ok(call) = FunctionCall::new(Function::FilterConcept, Some(name)) {
                if admissible(kb, opts, &after_all, &call) {
                    out.insert(Candidate::Calls(vec![find_all.clone(), call]));
                }
            }
        }
        if out.is_empty() {
            return Err(DecodeError::NoSeed(if topics.topic_concepts.is_empty() {
                "no topic entities or concepts given".to_owned()
            } else {
                format!(
                    "none of the topic concepts {:?} has instances",
                    topics.topic_concepts
                )
            }));
        }
    }
    Ok(out.into_iter().collect())
}

#[derive(Debug, Clone, Copy)]
pub struct BeamConfig {
    pub beam: usize,
    /// Chunk-adding rounds; one END-only round follows the last.
    pub max_steps: usize,
    pub exec: ExecOptions,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam: 5,
            max_steps: 20,
            exec: ExecOptions::default(),
        }
    }
}

/// A finished program with its answer and cumulative log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Induced {
    pub program: Program,
    pub denotation: Denotation,
    pub score: f64,
}

struct Expansion {
    hyp: PartialHypothesis,
    end: bool,
    text: String,
}

fn rank(a: &Expansion, b: &Expansion) -> Ordering {
    b.hyp
        .score
        .total_cmp(&a.hyp.score)
        .then_with(|| a.text.cmp(&b.text))
        .then_with(|| b.end.cmp(&a.end))
}

/// Beam search from the empty program. Returns at most `beam` finished
/// programs, sorted by score descending, then by program text.
pub fn beam_search(
    kb: &KnowledgeBase,
    question: &str,
    topics: &TopicSpec,
    scorer: &dyn Scorer,
    config: &BeamConfig,
) -> Result<Vec<Induced>, DecodeError> {
    if config.beam == 0 || config.max_steps == 0 {
        return Err(DecodeError::BadConfig);
    }
    let mut live = vec![PartialHypothesis::root()];
    let mut finished: Vec<Expansion> = Vec::new();

    for step in 0..=config.max_steps {
        let end_only = step == config.max_steps;
        let mut requests = Vec::with_capacity(live.len());
        let mut cand_lists = Vec::with_capacity(live.len());
        for hyp in &live {
            let mut cands = enumerate_candidates_with(kb, hyp, topics, &config.exec)?;
            if end_only {
                cands.retain(Candidate::is_end);
            }
            if cands.is_empty() {
                continue;
            }
            requests.push(ScoreRequest {
                question: question.to_owned(),
                prefix: hyp.program.serialize(),
                candidates: cands.iter().map(Candidate::text).collect(),
            });
            cand_lists.push((hyp, cands));
        }
        if requests.is_empty() {
            break;
        }
        let scores = scorer.score(&requests)?;
        if scores.len() != requests.len() {
            return Err(ScorerError::LengthMismatch {
                expected: requests.len(),
                got: scores.len(),
            }
            .into());
        }

        let mut pool = Vec::new();
        for ((hyp, cands), lps) in cand_lists.into_iter().zip(scores) {
            if lps.len() != cands.len() {
                return Err(ScorerError::LengthMismatch {
                    expected: cands.len(),
                    got: lps.len(),
                }
                .into());
            }
            for (cand, lp) in cands.into_iter().zip(lps) {
                let next = match &cand {
                    Candidate::End => {
                        let mut h = hyp.clone();
                        h.finished = true;
                        h
                    }
                    Candidate::Calls(calls) => match hyp.extend(kb, &config.exec, calls) {
                        Some(h) => h,
                        None => continue,
                    },
                };
                let mut next = next;
                next.score = hyp.score + lp;
                pool.push(Expansion {
                    text: next.program.serialize(),
                    end: cand.is_end(),
                    hyp: next,
                });
            }
        }
        pool.sort_by(rank);
        pool.truncate(config.beam);

        live = Vec::new();
        for e in pool {
            if e.end {
                finished.push(e);
            } else {
                live.push(e.hyp);
            }
        }
        if live.is_empty() {
            break;
        }
    }

    if finished.is_empty() {
        return Err(DecodeError::NoFinished(config.max_steps));
    }
    finished.sort_by(rank);
    finished.truncate(config.beam);
    Ok(finished
        .into_iter()
        .map(|mut e| Induced {
            denotation: e.hyp.state.stack.pop().expect("END requires one branch"),
            program: e.hyp.program,
            score: e.hyp.score,
        })
        .collect())
}
