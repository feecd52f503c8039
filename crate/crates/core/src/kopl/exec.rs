//! Stack-machine execution of KoPL programs.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;
use thiserror::Error;

use super::{Function, FunctionCall, Program, MAX_PROGRAM_LEN};
use crate::kb::{ComparableClass, EntityIx, KnowledgeBase, LiteralValue, RelationIx, Tail};

/// Value of a (partial) program.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Denotation {
    Entities(BTreeSet<EntityIx>),
    Values(BTreeSet<LiteralValue>),
    Count(usize),
}

impl Denotation {
    pub fn type_name(&self) -> &'static str {
        match self {
            Denotation::Entities(_) => "entity set",
            Denotation::Values(_) => "value set",
            Denotation::Count(_) => "count",
        }
    }

    /// True for an empty entity or value set. Counts are never empty.
    pub fn is_empty(&self) -> bool {
        match self {
            Denotation::Entities(s) => s.is_empty(),
            Denotation::Values(s) => s.is_empty(),
            Denotation::Count(_) => false,
        }
    }

    /// Answer strings: entity names, rendered literals, or the count.
    pub fn answers(&self, kb: &KnowledgeBase) -> Vec<String> {
        match self {
            Denotation::Entities(s) => s.iter().map(|&e| kb.entity(e).name.clone()).collect(),
            Denotation::Values(s) => s.iter().map(LiteralValue::render).collect(),
            Denotation::Count(n) => vec![n.to_string()],
        }
    }

    pub fn to_json(&self, kb: &KnowledgeBase) -> serde_json::Value {
        match self {
            Denotation::Entities(s) => json!({
                "entities": s.iter().map(|&e| {
                    let ent = kb.entity(e);
                    json!({"id": ent.id, "name": ent.name})
                }).collect::<Vec<_>>()
            }),
            Denotation::Values(s) => json!({
                "values": s.iter().map(LiteralValue::render).collect::<Vec<_>>()
            }),
            Denotation::Count(n) => json!({ "count": n }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("no entity named {0:?}")]
    UnknownEntity(String),
    #[error("no relation named {0:?}")]
    UnknownRelation(String),
    #[error("no concept named {0:?}")]
    UnknownConcept(String),
    #[error("{function} needs {needed} branch(es) on the stack, found {found}")]
    StackUnderflow {
        function: Function,
        needed: usize,
        found: usize,
    },
    #[error("{function} expects {expected}, found {found}")]
    TypeError {
        function: Function,
        expected: &'static str,
        found: &'static str,
    },
    #[error("{function} needs exactly one comparable value, found {count}")]
    NonSingletonValue { function: Function, count: usize },
    #[error("{function} needs a quantity, date or year, found a string")]
    NotNumeric { function: Function },
    #[error("program must end with exactly one branch, found {0}")]
    UnfinishedBranches(usize),
    #[error("program exceeds {MAX_PROGRAM_LEN} calls")]
    TooLong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    /// FilterConcept also keeps instances of sub-concepts.
    pub transitive_concepts: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            transitive_concepts: true,
        }
    }
}

/// Branch stack after executing a program prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecState {
    pub stack: Vec<Denotation>,
}

impl ExecState {
    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn top(&self) -> Option<&Denotation> {
        self.stack.last()
    }

    /// Second-from-top branch.
    pub fn below_top(&self) -> Option<&Denotation> {
        self.stack.len().checked_sub(2).map(|i| &self.stack[i])
    }

    /// Executes one more call. On error the state is left unchanged.
    pub fn apply(
        &mut self,
        kb: &KnowledgeBase,
        opts: &ExecOptions,
        call: &FunctionCall,
    ) -> Result<(), ExecError> {
        let f = call.function;
        let needed = f.pops();
        if self.stack.len() < needed {
            return Err(ExecError::StackUnderflow {
                function: f,
                needed,
                found: self.stack.len(),
            });
        }
        let result = match f {
            Function::Find => {
                let found = kb.resolve_entity_name(call.arg());
                if found.is_empty() {
                    return Err(ExecError::UnknownEntity(call.arg().to_owned()));
                }
                Denotation::Entities(found.iter().copied().collect())
            }
            Function::FindAll => Denotation::Entities(kb.entity_ixs().collect()),
            Function::Relate | Function::ReverseRelate => {
                let r = relation(kb, call)?;
                let src = self.top_entities(f)?;
                hop(kb, src, r, f == Function::Relate)
            }
            Function::FilterConcept => {
                let c = kb
                    .concept_by_name(call.arg())
                    .ok_or_else(|| ExecError::UnknownConcept(call.arg().to_owned()))?;
                let src = self.top_entities(f)?;
                let keep = kb.concept_instances(c, opts.transitive_concepts);
                Denotation::Entities(src.intersection(&keep).copied().collect())
            }
            Function::And | Function::Or => {
                let b = self.top_entities(f)?;
                let a = match &self.stack[self.stack.len() - 2] {
                    Denotation::Entities(s) => s,
                    other => {
                        return Err(ExecError::TypeError {
                            function: f,
                            expected: "an entity set",
                            found: other.type_name(),
                        })
                    }
                };
                let merged = if f == Function::And {
                    a.intersection(b).copied().collect()
                } else {
                    a.union(b).copied().collect()
                };
                Denotation::Entities(merged)
            }
            Function::Argmax | Function::Argmin => {
                let r = relation(kb, call)?;
                let src = self.top_entities(f)?;
                Denotation::Entities(superlative(kb, src, r, f == Function::Argmax))
            }
            Function::LT | Function::LE | Function::GT | Function::GE => {
                let r = relation(kb, call)?;
                let v = match self.stack.last() {
                    Some(Denotation::Values(s)) if s.len() == 1 => s.iter().next().unwrap(),
                    Some(Denotation::Values(s)) => {
                        return Err(ExecError::NonSingletonValue {
                            function: f,
                            count: s.len(),
                        })
                    }
                    Some(other) => {
                        return Err(ExecError::TypeError {
                            function: f,
                            expected: "a value set",
                            found: other.type_name(),
                        })
                    }
                    None => unreachable!("arity checked above"),
                };
                if !v.is_numeric() {
                    return Err(ExecError::NotNumeric { function: f });
                }
                Denotation::Entities(compare(kb, r, f, v))
            }
            Function::Count => Denotation::Count(self.top_entities(f)?.len()),
        };
        self.stack.truncate(self.stack.len() - needed);
        self.stack.push(result);
        Ok(())
    }

    fn top_entities(&self, f: Function) -> Result<&BTreeSet<EntityIx>, ExecError> {
        match self.stack.last() {
            Some(Denotation::Entities(s)) => Ok(s),
            Some(other) => Err(ExecError::TypeError {
                function: f,
                expected: "an entity set",
                found: other.type_name(),
            }),
            None => Err(ExecError::StackUnderflow {
                function: f,
                needed: 1,
                found: 0,
            }),
        }
    }
}

fn relation(kb: &KnowledgeBase, call: &FunctionCall) -> Result<RelationIx, ExecError> {
    kb.relation_by_name(call.arg())
        .ok_or_else(|| ExecError::UnknownRelation(call.arg().to_owned()))
}

/// Entity targets win; a hop reaching only literals becomes a value set.
fn hop(kb: &KnowledgeBase, src: &BTreeSet<EntityIx>, r: RelationIx, forward: bool) -> Denotation {
    let mut entities = BTreeSet::new();
    let mut values = BTreeSet::new();
    for tail in kb.neighbors(
        src.iter().copied(),
        r,
        if forward {
            crate::kb::Direction::Forward
        } else {
            crate::kb::Direction::Backward
        },
    ) {
        match tail {
            Tail::Entity(e) => {
                entities.insert(e);
            }
            Tail::Value(v) => {
                values.insert(v);
            }
        }
    }
    if entities.is_empty() && !values.is_empty() {
        Denotation::Values(values)
    } else {
        Denotation::Entities(entities)
    }
}

/// Comparable class used by superlatives over `values`: the most frequent
/// numeric class, ties going to the smallest class.
pub(crate) fn reference_class<'a>(
    values: impl IntoIterator<Item = &'a LiteralValue>,
) -> Option<ComparableClass> {
    let mut counts: BTreeMap<ComparableClass, usize> = BTreeMap::new();
    for v in values {
        if v.is_numeric() {
            *counts.entry(v.class()).or_default() += 1;
        }
    }
    let mut best: Option<(ComparableClass, usize)> = None;
    for (class, n) in counts {
        if best.as_ref().is_none_or(|(_, m)| n > *m) {
            best = Some((class, n));
        }
    }
    best.map(|(c, _)| c)
}

fn superlative(
    kb: &KnowledgeBase,
    src: &BTreeSet<EntityIx>,
    r: RelationIx,
    max: bool,
) -> BTreeSet<EntityIx> {
    let pairs: Vec<(EntityIx, &LiteralValue)> = src
        .iter()
        .flat_map(|&e| {
            kb.forward_tails(e, r).iter().filter_map(move |t| match t {
                Tail::Value(v) if v.is_numeric() => Some((e, v)),
                _ => None,
            })
        })
        .collect();
    let Some(class) = reference_class(pairs.iter().map(|(_, v)| *v)) else {
        return BTreeSet::new();
    };
    let in_class: Vec<_> = pairs
        .into_iter()
        .filter(|(_, v)| v.class() == class)
        .collect();
    let best = in_class
        .iter()
        .map(|(_, v)| *v)
        .reduce(|a, b| {
            let b_wins = if max { b > a } else { b < a };
            if b_wins {
                b
            } else {
                a
            }
        })
        .expect("class has at least one value");
    in_class
        .iter()
        .filter(|(_, v)| *v == best)
        .map(|(e, _)| *e)
        .collect()
}

fn compare(
    kb: &KnowledgeBase,
    r: RelationIx,
    f: Function,
    pivot: &LiteralValue,
) -> BTreeSet<EntityIx> {
    use std::cmp::Ordering::*;
    kb.triples_of(r)
        .filter_map(|t| match &t.tail {
            Tail::Value(v) => {
                let ord = v.compare(pivot)?;
                let keep = match f {
                    Function::LT => ord == Less,
                    Function::LE => ord != Greater,
                    Function::GT => ord == Greater,
                    Function::GE => ord != Less,
                    _ => unreachable!(),
                };
                keep.then_some(t.head)
            }
            Tail::Entity(_) => None,
        })
        .collect()
}

/// Runs every call of `p` and returns the whole branch stack.
pub fn execute_prefix_with(
    kb: &KnowledgeBase,
    p: &Program,
    opts: &ExecOptions,
) -> Result<ExecState, ExecError> {
    if p.len() > MAX_PROGRAM_LEN {
        return Err(ExecError::TooLong);
    }
    let mut state = ExecState::default();
    for call in &p.calls {
        state.apply(kb, opts, call)?;
    }
    Ok(state)
}

pub fn execute_prefix(kb: &KnowledgeBase, p: &Program) -> Result<ExecState, ExecError> {
    execute_prefix_with(kb, p, &ExecOptions::default())
}

/// Executes a complete program; exactly one branch must remain.
pub fn execute_with(
    kb: &KnowledgeBase,
    p: &Program,
    opts: &ExecOptions,
) -> Result<Denotation, ExecError> {
    let mut state = execute_prefix_with(kb, p, opts)?;
    if state.depth() != 1 {
        return Err(ExecError::UnfinishedBranches(state.depth()));
    }
    Ok(state.stack.pop().unwrap())
}

pub fn execute(kb: &KnowledgeBase, p: &Program) -> Result<Denotation, ExecError> {
    execute_with(kb, p, &ExecOptions::default())
}
