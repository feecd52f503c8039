//! JSON KB file format.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{
    ConceptIx, Entity, EntityIx, KbError, KnowledgeBase, RawLiteral, RelationIx, SchemaItem,
    SchemaKind, Tail, Triple, INSTANCE_OF, SUBCLASS_OF,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbFile {
    #[serde(default)]
    pub concepts: Vec<ItemRecord>,
    #[serde(default)]
    pub relations: Vec<ItemRecord>,
    #[serde(default)]
    pub entities: Vec<ItemRecord>,
    #[serde(default)]
    pub instance_of: Vec<(String, String)>,
    #[serde(default)]
    pub subclass_of: Vec<(String, String)>,
    #[serde(default)]
    pub relational: Vec<(String, String, TailRecord)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TailRecord {
    Entity(String),
    Literal(RawLiteral),
}

impl PartialEq for RawLiteral {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.value == other.value && self.unit == other.unit
    }
}

impl KbFile {
    pub fn from_json(text: &str) -> Result<KbFile, KbError> {
        serde_json::from_str(text).map_err(|e| KbError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("KB file serializes");
        s.push('\n');
        s
    }
}

/// Read, validate and index a KB file.
pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase, KbError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    KnowledgeBase::from_file_data(KbFile::from_json(&text)?)
}

impl KnowledgeBase {
    pub fn from_json(text: &str) -> Result<KnowledgeBase, KbError> {
        Self::from_file_data(KbFile::from_json(text)?)
    }

    pub fn to_json(&self) -> String {
        self.to_file_data().to_json()
    }
}

fn record_text<T: Serialize>(rec: &T) -> String {
    serde_json::to_string(rec).unwrap_or_default()
}

fn items<T>(
    records: Vec<ItemRecord>,
    kind: &'static str,
    make: impl Fn(ItemRecord) -> T,
    ix: impl Fn(usize) -> u32,
) -> Result<(Vec<T>, HashMap<String, u32>), KbError> {
    let mut ids = HashMap::with_capacity(records.len());
    let mut out = Vec::with_capacity(records.len());
    for (i, mut rec) in records.into_iter().enumerate() {
        if rec.name.is_empty() {
            return Err(KbError::EmptyName { kind, id: rec.id });
        }
        if ids.insert(rec.id.clone(), ix(i)).is_some() {
            return Err(KbError::DuplicateId { kind, id: rec.id });
        }
        let mut seen = HashSet::new();
        let before = rec.aliases.len();
        let name = rec.name.clone();
        rec.aliases.retain(|a| a != &name && seen.insert(a.clone()));
        if rec.aliases.len() != before {
            warn!(kind, id = %rec.id, "dropped aliases duplicating the name or each other");
        }
        out.push(make(rec));
    }
    Ok((out, ids))
}

pub(super) fn build(data: KbFile) -> Result<KnowledgeBase, KbError> {
    for r in &data.relations {
        if r.name == INSTANCE_OF || r.name == SUBCLASS_OF {
            return Err(KbError::ReservedDeclared(r.name.clone()));
        }
    }

    let schema = |kind: SchemaKind| {
        move |r: ItemRecord| SchemaItem {
            id: r.id,
            name: r.name,
            aliases: r.aliases,
            kind,
        }
    };
    let (concepts, concept_ids) =
        items(data.concepts, "concept", schema(SchemaKind::Concept), |i| {
            i as u32
        })?;
    let (relations, relation_ids) = items(
        data.relations,
        "relation",
        schema(SchemaKind::Relation),
        |i| i as u32,
    )?;
    let (entities, entity_ids) = items(
        data.entities,
        "entity",
        |r| Entity {
            id: r.id,
            name: r.name,
            aliases: r.aliases,
        },
        |i| i as u32,
    )?;

    let unknown = |kind: &'static str, id: &str, record: String| KbError::UnknownReference {
        kind,
        id: id.to_owned(),
        record,
    };

    let mut instance_of = Vec::with_capacity(data.instance_of.len());
    let mut seen = HashSet::new();
    for rec in &data.instance_of {
        let e = *entity_ids
            .get(&rec.0)
            .ok_or_else(|| unknown("entity", &rec.0, record_text(rec)))?;
        let c = *concept_ids
            .get(&rec.1)
            .ok_or_else(|| unknown("concept", &rec.1, record_text(rec)))?;
        if seen.insert((e, c)) {
            instance_of.push((EntityIx(e), ConceptIx(c)));
        } else {
            warn!(record = %record_text(rec), "duplicate instance_of triple dropped");
        }
    }

    let mut subclass_of = Vec::with_capacity(data.subclass_of.len());
    let mut seen = HashSet::new();
    for rec in &data.subclass_of {
        let a = *concept_ids
            .get(&rec.0)
            .ok_or_else(|| unknown("concept", &rec.0, record_text(rec)))?;
        let b = *concept_ids
            .get(&rec.1)
            .ok_or_else(|| unknown("concept", &rec.1, record_text(rec)))?;
        if seen.insert((a, b)) {
            subclass_of.push((ConceptIx(a), ConceptIx(b)));
        } else {
            warn!(record = %record_text(rec), "duplicate subclass_of triple dropped");
        }
    }

    let mut relational = Vec::with_capacity(data.relational.len());
    let mut seen = HashSet::new();
    for rec in &data.relational {
        let (h, r, t) = rec;
        if r == INSTANCE_OF || r == SUBCLASS_OF {
            return Err(KbError::ReservedRelation(r.clone()));
        }
        let head = *entity_ids
            .get(h)
            .ok_or_else(|| unknown("entity", h, record_text(rec)))?;
        let relation = *relation_ids
            .get(r)
            .ok_or_else(|| unknown("relation", r, record_text(rec)))?;
        let tail = match t {
            TailRecord::Entity(id) => Tail::Entity(EntityIx(
                *entity_ids
                    .get(id)
                    .ok_or_else(|| unknown("entity", id, record_text(rec)))?,
            )),
            TailRecord::Literal(raw) => {
                Tail::Value(raw.clone().into_literal().map_err(|message| {
                    KbError::InvalidLiteral {
                        record: record_text(rec),
                        message,
                    }
                })?)
            }
        };
        let triple = Triple {
            head: EntityIx(head),
            relation: RelationIx(relation),
            tail,
        };
        if seen.insert(triple.clone()) {
            relational.push(triple);
        } else {
            warn!(record = %record_text(rec), "duplicate relational triple dropped");
        }
    }

    KnowledgeBase::assemble(
        concepts,
        relations,
        entities,
        instance_of,
        subclass_of,
        relational,
        entity_ids
            .into_iter()
            .map(|(k, v)| (k, EntityIx(v)))
            .collect(),
        concept_ids
            .into_iter()
            .map(|(k, v)| (k, ConceptIx(v)))
            .collect(),
        relation_ids
            .into_iter()
            .map(|(k, v)| (k, RelationIx(v)))
            .collect(),
    )
}

pub(super) fn dump(kb: &KnowledgeBase) -> KbFile {
    let item = |s: &SchemaItem| ItemRecord {
        id: s.id.clone(),
        name: s.name.clone(),
        aliases: s.aliases.clone(),
    };
    KbFile {
        concepts: kb.concepts.iter().map(item).collect(),
        relations: kb.relations.iter().map(item).collect(),
        entities: kb
            .entities
            .iter()
            .map(|e| ItemRecord {
                id: e.id.clone(),
                name: e.name.clone(),
                aliases: e.aliases.clone(),
            })
            .collect(),
        instance_of: kb
            .instance_of
            .iter()
            .map(|&(e, c)| (kb.entity(e).id.clone(), kb.concept(c).id.clone()))
            .collect(),
        subclass_of: kb
            .subclass_of
            .iter()
            .map(|&(a, b)| (kb.concept(a).id.clone(), kb.concept(b).id.clone()))
            .collect(),
        relational: kb
            .relational
            .iter()
            .map(|t| {
                let tail = match &t.tail {
                    Tail::Entity(x) => TailRecord::Entity(kb.entity(*x).id.clone()),
                    Tail::Value(v) => TailRecord::Literal(RawLiteral::from_literal(v)),
                };
                (
                    kb.entity(t.head).id.clone(),
                    kb.relation(t.relation).id.clone(),
                    tail,
                )
            })
            .collect(),
    }
}
