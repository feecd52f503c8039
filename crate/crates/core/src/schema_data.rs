//! Triple-completion corpus for learning a KB schema.
//!
//! Every concept and relation is taught through question/answer pairs built
//! from a popularity-ranked sample of its triples.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::kb::{ConceptIx, EntityIx, KbError, KnowledgeBase, RelationIx, Tail, Triple};

#[derive(Debug, Error)]
pub enum SchemaDataError {
    #[error("sample size K must be at least 1")]
    ZeroK,
    #[error("entity {0:?} has no concept")]
    NoConcept(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    InstFwd,
    InstBwd,
    SubFwd,
    SubBwd,
    RelFwd,
    RelBwd,
    RelWhat,
}

impl Template {
    pub const ALL: [Template; 7] = [
        Template::InstFwd,
        Template::InstBwd,
        Template::SubFwd,
        Template::SubBwd,
        Template::RelFwd,
        Template::RelBwd,
        Template::RelWhat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Template::InstFwd => "inst_fwd",
            Template::InstBwd => "inst_bwd",
            Template::SubFwd => "sub_fwd",
            Template::SubBwd => "sub_bwd",
            Template::RelFwd => "rel_fwd",
            Template::RelBwd => "rel_bwd",
            Template::RelWhat => "rel_what",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub query: String,
    pub answer: String,
    /// Schema item the pair teaches. For subclass pairs this is the concept
    /// named in the query.
    pub item_id: String,
    pub template: Template,
    /// The other concept of a subclass pair.
    #[serde(skip)]
    pub partner_id: Option<String>,
}

impl QaPair {
    /// Ids of every schema item the pair involves.
    pub fn items(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.item_id.as_str()).chain(self.partner_id.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingConfig {
    k: usize,
}

impl SamplingConfig {
    pub fn new(k: usize) -> Result<Self, SchemaDataError> {
        if k == 0 {
            return Err(SchemaDataError::ZeroK);
        }
        Ok(SamplingConfig { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Up to `k` instances of `c`, most popular first, ties by entity id.
pub fn sample_instance_triples(kb: &KnowledgeBase, c: ConceptIx, k: usize) -> Vec<EntityIx> {
    let mut es: Vec<EntityIx> = kb.direct_instances(c).iter().copied().collect();
    es.sort_by(|&a, &b| {
        kb.popularity(b)
            .cmp(&kb.popularity(a))
            .then_with(|| kb.entity(a).id.cmp(&kb.entity(b).id))
    });
    es.truncate(k);
    es
}

pub fn sample_instance_triples_by_id(
    kb: &KnowledgeBase,
    concept_id: &str,
    k: usize,
) -> Result<Vec<String>, SchemaDataError> {
    let c = kb.concept_by_id(concept_id)?;
    Ok(sample_instance_triples(kb, c, k)
        .into_iter()
        .map(|e| kb.entity(e).id.clone())
        .collect())
}

/// Can `t` be rendered, i.e. do its entity endpoints have a concept?
fn eligible(kb: &KnowledgeBase, t: &Triple) -> bool {
    !kb.concepts_of(t.head).is_empty()
        && match t.tail {
            Tail::Entity(e) => !kb.concepts_of(e).is_empty(),
            Tail::Value(_) => true,
        }
}

fn rank_key(kb: &KnowledgeBase, t: &Triple) -> usize {
    match t.tail {
        Tail::Entity(e) => kb.popularity(t.head).min(kb.popularity(e)),
        Tail::Value(_) => kb.popularity(t.head),
    }
}

fn tail_cmp(kb: &KnowledgeBase, a: &Tail, b: &Tail) -> Ordering {
    match (a, b) {
        (Tail::Entity(x), Tail::Entity(y)) => kb.entity(*x).id.cmp(&kb.entity(*y).id),
        (Tail::Entity(_), Tail::Value(_)) => Ordering::Less,
        (Tail::Value(_), Tail::Entity(_)) => Ordering::Greater,
        (Tail::Value(x), Tail::Value(y)) => x.cmp(y),
    }
}

/// Up to `k` renderable triples of `r`, ranked by the smaller endpoint
/// popularity (head popularity for literal tails) descending, then by
/// head id and tail. Triples with a concept-less entity endpoint are
/// dropped before the cap is applied.
pub fn sample_relational_triples(kb: &KnowledgeBase, r: RelationIx, k: usize) -> Vec<&Triple> {
    let mut ts: Vec<&Triple> = kb.triples_of(r).filter(|t| eligible(kb, t)).collect();
    ts.sort_by(|a, b| {
        rank_key(kb, b)
            .cmp(&rank_key(kb, a))
            .then_with(|| kb.entity(a.head).id.cmp(&kb.entity(b.head).id))
            .then_with(|| tail_cmp(kb, &a.tail, &b.tail))
    });
    ts.truncate(k);
    ts
}

/// Most specific concept of `e`: the one with the fewest (transitive)
/// instances, ties by concept id.
pub fn pick_concept(kb: &KnowledgeBase, e: EntityIx) -> Option<ConceptIx> {
    kb.concepts_of(e).iter().copied().min_by_key(|&c| {
        (
            kb.concept_instances(c, true).len(),
            kb.concept(c).id.clone(),
        )
    })
}

pub fn pick_concept_by_id(kb: &KnowledgeBase, entity_id: &str) -> Result<String, SchemaDataError> {
    let e = kb.entity_by_id(entity_id)?;
    pick_concept(kb, e)
        .map(|c| kb.concept(c).id.clone())
        .ok_or_else(|| SchemaDataError::NoConcept(entity_id.to_owned()))
}

/// All pairs: concepts by id, then subclass triples, then relations by id.
pub fn build_pairs(kb: &KnowledgeBase, cfg: &SamplingConfig) -> Vec<QaPair> {
    let mut out = Vec::new();
    let pair = |query: String, answer: String, item: &str, template| QaPair {
        query,
        answer,
        item_id: item.to_owned(),
        template,
        partner_id: None,
    };

    let mut concepts: Vec<ConceptIx> = kb.concept_ixs().collect();
    concepts.sort_by(|&a, &b| kb.concept(a).id.cmp(&kb.concept(b).id));
    for &c in &concepts {
        let item = kb.concept(c);
        for e in sample_instance_triples(kb, c, cfg.k) {
            let ent = &kb.entity(e).name;
            out.push(pair(
                format!("{ent} || instance of"),
                item.name.clone(),
                &item.id,
                Template::InstFwd,
            ));
            out.push(pair(
                format!("{} || contains instance", item.name),
                ent.clone(),
                &item.id,
                Template::InstBwd,
            ));
        }
    }

    let mut subs: Vec<(ConceptIx, ConceptIx)> = kb.subclass_of_triples().to_vec();
    subs.sort_by(|a, b| {
        (&kb.concept(a.0).id, &kb.concept(a.1).id).cmp(&(&kb.concept(b.0).id, &kb.concept(b.1).id))
    });
    for (ci, cj) in subs {
        let (ci, cj) = (kb.concept(ci), kb.concept(cj));
        out.push(QaPair {
            partner_id: Some(cj.id.clone()),
            ..pair(
                format!("{} || subclass of", ci.name),
                cj.name.clone(),
                &ci.id,
                Template::SubFwd,
            )
        });
        out.push(QaPair {
            partner_id: Some(ci.id.clone()),
            ..pair(
                format!("{} || contains subclass", cj.name),
                ci.name.clone(),
                &cj.id,
                Template::SubBwd,
            )
        });
    }

    let mut relations: Vec<RelationIx> = kb.relation_ixs().collect();
    relations.sort_by(|&a, &b| kb.relation(a).id.cmp(&kb.relation(b).id));
    for &r in &relations {
        let rel = kb.relation(r);
        let skipped = kb.triples_of(r).filter(|t| !eligible(kb, t)).count();
        if skipped > 0 {
            warn!(relation = %rel.id, skipped, "triples with a concept-less endpoint skipped");
        }
        for t in sample_relational_triples(kb, r, cfg.k) {
            let ei = &kb.entity(t.head).name;
            let ci = &kb
                .concept(pick_concept(kb, t.head).expect("eligible head"))
                .name;
            match &t.tail {
                Tail::Entity(e) => {
                    let ej = &kb.entity(*e).name;
                    let cj = &kb
                        .concept(pick_concept(kb, *e).expect("eligible tail"))
                        .name;
                    out.push(pair(
                        format!("{ei} | {ci} || {} | forward", rel.name),
                        format!("{cj} | {ej}"),
                        &rel.id,
                        Template::RelFwd,
                    ));
                    out.push(pair(
                        format!("{ej} | {cj} || {} | backward", rel.name),
                        format!("{ci} | {ei}"),
                        &rel.id,
                        Template::RelBwd,
                    ));
                    out.push(pair(
                        format!("{ei} | {ci} || what relation || {cj} | {ej}"),
                        rel.name.clone(),
                        &rel.id,
                        Template::RelWhat,
                    ));
                }
                Tail::Value(v) => {
                    out.push(pair(
                        format!("{ei} | {ci} || {} | forward", rel.name),
                        format!("{} | {}", v.kind().as_str(), v.render()),
                        &rel.id,
                        Template::RelFwd,
                    ));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub pairs: usize,
    pub per_template: BTreeMap<String, usize>,
    /// Pairs involving each schema item id; subclass pairs count for both
    /// concepts.
    pub per_item: BTreeMap<String, usize>,
    pub zero_coverage: Vec<String>,
}

pub fn summarize(kb: &KnowledgeBase, pairs: &[QaPair]) -> CorpusSummary {
    let mut per_template: BTreeMap<String, usize> = Template::ALL
        .iter()
        .map(|t| (t.as_str().to_owned(), 0))
        .collect();
    let mut per_item: BTreeMap<String, usize> = kb
        .concepts()
        .iter()
        .chain(kb.relations())
        .map(|it| (it.id.clone(), 0))
        .collect();
    for p in pairs {
        *per_template
            .get_mut(p.template.as_str())
            .expect("all templates") += 1;
        for id in p.items() {
            *per_item.entry(id.to_owned()).or_default() += 1;
        }
    }
    let zero_coverage = per_item
        .iter()
        .filter(|(_, &n)| n == 0)
        .map(|(id, _)| id.clone())
        .collect();
    CorpusSummary {
        pairs: pairs.len(),
        per_template,
        per_item,
        zero_coverage,
    }
}

/// Writes one JSON object per line and returns the summary.
pub fn emit_corpus(
    kb: &KnowledgeBase,
    pairs: &[QaPair],
    out: &Path,
) -> Result<CorpusSummary, SchemaDataError> {
    let mut buf = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut buf, p).expect("pair serializes");
        buf.push(b'\n');
    }
    fs::write(out, buf).map_err(|source| SchemaDataError::Io {
        path: out.display().to_string(),
        source,
    })?;
    Ok(summarize(kb, pairs))
}

/// Entities of `c` that were left out yet are more popular than some
/// selected one. Always empty for a correct sampler.
pub fn popularity_order_violations(kb: &KnowledgeBase, c: ConceptIx, k: usize) -> usize {
    let chosen = sample_instance_triples(kb, c, k);
    let Some(min_chosen) = chosen.iter().map(|&e| kb.popularity(e)).min() else {
        return 0;
    };
    kb.direct_instances(c)
        .iter()
        .filter(|e| !chosen.contains(e) && kb.popularity(**e) > min_chosen)
        .count()
}
