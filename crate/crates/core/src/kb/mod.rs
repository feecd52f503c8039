//! In-memory knowledge base: concepts, entities, relations and the three
//! triple partitions (`instance of`, `subclass of`, relational facts).
//!
//! A [`KnowledgeBase`] is built once (usually via [`load_kb`]) and never
//! mutated afterwards. All lookups go through dense index newtypes
//! ([`EntityIx`], [`ConceptIx`], [`RelationIx`]); the external string ids
//! from the KB file are kept on the records themselves.

mod file;
mod literal;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

pub use file::{load_kb, ItemRecord, KbFile, TailRecord};
pub use literal::{ComparableClass, LiteralKind, LiteralValue, RawLiteral};

/// Reserved relation between an entity and its concept.
pub const INSTANCE_OF: &str = "instance of";
/// Reserved relation between two concepts.
pub const SUBCLASS_OF: &str = "subclass of";

macro_rules! index_newtype {
    ($name:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn get(self) -> usize {
                self.0 as usize
            }
        }
    };
}

index_newtype!(EntityIx);
index_newtype!(ConceptIx);
index_newtype!(RelationIx);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    Concept,
    Relation,
}

impl SchemaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaKind::Concept => "concept",
            SchemaKind::Relation => "relation",
        }
    }
}

/// A concept or a relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaItem {
    pub id: String,
    pub name: String,
    pub aliases: Vec<String>,
    pub kind: SchemaKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    pub name: String,
    pub aliases: Vec<String>,
}

/// Tail of a relational triple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tail {
    Entity(EntityIx),
    Value(LiteralValue),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityIx,
    pub relation: RelationIx,
    pub tail: Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KbStats {
    pub concepts: usize,
    /// Relations excluding the two reserved ones.
    pub relations: usize,
    /// Relations counting `instance of` and `subclass of`.
    pub relations_with_reserved: usize,
    pub entities: usize,
    pub instance_of_triples: usize,
    pub subclass_of_triples: usize,
    pub relational_triples: usize,
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed KB file: {0}")]
    Parse(String),
    #[error("{record}: unknown {kind} id {id:?}")]
    UnknownReference {
        kind: &'static str,
        id: String,
        record: String,
    },
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("duplicate {kind} name {name:?} shared by ids {first:?} and {second:?}")]
    DuplicateName {
        kind: &'static str,
        name: String,
        first: String,
        second: String,
    },
    #[error("{kind} {id:?} has an empty name")]
    EmptyName { kind: &'static str, id: String },
    #[error("reserved relation {0:?} must not be declared in `relations`")]
    ReservedDeclared(String),
    #[error("subclass_of cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("{record}: {message}")]
    InvalidLiteral { record: String, message: String },
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("relation {0:?} is reserved and cannot be used as a relational hop")]
    ReservedRelation(String),
}

/// Immutable, fully indexed knowledge base.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    concepts: Vec<SchemaItem>,
    relations: Vec<SchemaItem>,
    entities: Vec<Entity>,
    instance_of: Vec<(EntityIx, ConceptIx)>,
    subclass_of: Vec<(ConceptIx, ConceptIx)>,
    relational: Vec<Triple>,

    entity_ids: HashMap<String, EntityIx>,
    concept_ids: HashMap<String, ConceptIx>,
    relation_ids: HashMap<String, RelationIx>,
    entity_names: HashMap<String, Vec<EntityIx>>,
    entity_aliases: HashMap<String, Vec<EntityIx>>,
    concept_names: HashMap<String, ConceptIx>,
    relation_names: HashMap<String, RelationIx>,

    // relation-keyed adjacency, one map per entity
    forward: Vec<BTreeMap<RelationIx, Vec<Tail>>>,
    backward: Vec<BTreeMap<RelationIx, Vec<EntityIx>>>,
    // relational triple indices per relation
    by_relation: Vec<Vec<usize>>,
    instances: Vec<BTreeSet<EntityIx>>,
    concepts_of: Vec<Vec<ConceptIx>>,
    children: Vec<Vec<ConceptIx>>,
    parents: Vec<Vec<ConceptIx>>,
    popularity: Vec<usize>,
}

impl KnowledgeBase {
    /// An empty KB (no schema, no facts).
    pub fn empty() -> Self {
        Self::from_file_data(KbFile::default()).expect("empty KB is valid")
    }

    pub fn stats(&self) -> KbStats {
        KbStats {
            concepts: self.concepts.len(),
            relations: self.relations.len(),
            relations_with_reserved: self.relations.len() + 2,
            entities: self.entities.len(),
            instance_of_triples: self.instance_of.len(),
            subclass_of_triples: self.subclass_of.len(),
            relational_triples: self.relational.len(),
        }
    }

    // ---- accessors -------------------------------------------------------

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn concepts(&self) -> &[SchemaItem] {
        &self.concepts
    }

    pub fn relations(&self) -> &[SchemaItem] {
        &self.relations
    }

    pub fn instance_of_triples(&self) -> &[(EntityIx, ConceptIx)] {
        &self.instance_of
    }

    pub fn subclass_of_triples(&self) -> &[(ConceptIx, ConceptIx)] {
        &self.subclass_of
    }

    pub fn relational_triples(&self) -> &[Triple] {
        &self.relational
    }

    pub fn entity(&self, e: EntityIx) -> &Entity {
        &self.entities[e.get()]
    }

    pub fn concept(&self, c: ConceptIx) -> &SchemaItem {
        &self.concepts[c.get()]
    }

    pub fn relation(&self, r: RelationIx) -> &SchemaItem {
        &self.relations[r.get()]
    }

    pub fn entity_ixs(&self) -> impl Iterator<Item = EntityIx> + '_ {
        (0..self.entities.len() as u32).map(EntityIx)
    }

    pub fn concept_ixs(&self) -> impl Iterator<Item = ConceptIx> + '_ {
        (0..self.concepts.len() as u32).map(ConceptIx)
    }

    pub fn relation_ixs(&self) -> impl Iterator<Item = RelationIx> + '_ {
        (0..self.relations.len() as u32).map(RelationIx)
    }

    pub fn entity_by_id(&self, id: &str) -> Result<EntityIx, KbError> {
        self.entity_ids
            .get(id)
            .copied()
            .ok_or_else(|| KbError::UnknownEntity(id.to_owned()))
    }

    pub fn concept_by_id(&self, id: &str) -> Result<ConceptIx, KbError> {
        self.concept_ids
            .get(id)
            .copied()
            .ok_or_else(|| KbError::UnknownConcept(id.to_owned()))
    }

    pub fn relation_by_id(&self, id: &str) -> Result<RelationIx, KbError> {
        if id == INSTANCE_OF || id == SUBCLASS_OF {
            return Err(KbError::ReservedRelation(id.to_owned()));
        }
        self.relation_ids
            .get(id)
            .copied()
            .ok_or_else(|| KbError::UnknownRelation(id.to_owned()))
    }

    /// Entities whose name equals `name`; if none, entities carrying it as an alias.
    pub fn resolve_entity_name(&self, name: &str) -> &[EntityIx] {
        self.entity_names
            .get(name)
            .or_else(|| self.entity_aliases.get(name))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Concepts and relations resolve by display name only.
    pub fn concept_by_name(&self, name: &str) -> Option<ConceptIx> {
        self.concept_names.get(name).copied()
    }

    pub fn relation_by_name(&self, name: &str) -> Option<RelationIx> {
        self.relation_names.get(name).copied()
    }

    // ---- queries ---------------------------------------------------------

    /// Number of `instance of` and relational triples mentioning `e`.
    pub fn popularity(&self, e: EntityIx) -> usize {
        self.popularity[e.get()]
    }

    pub fn popularity_by_id(&self, id: &str) -> Result<usize, KbError> {
        Ok(self.popularity(self.entity_by_id(id)?))
    }

    /// One hop along `r` from every source. Backward hops only follow
    /// entity tails.
    pub fn neighbors<I>(&self, sources: I, r: RelationIx, dir: Direction) -> BTreeSet<Tail>
    where
        I: IntoIterator<Item = EntityIx>,
    {
        let mut out = BTreeSet::new();
        for s in sources {
            match dir {
                Direction::Forward => {
                    if let Some(tails) = self.forward[s.get()].get(&r) {
                        out.extend(tails.iter().cloned());
                    }
                }
                Direction::Backward => {
                    if let Some(heads) = self.backward[s.get()].get(&r) {
                        out.extend(heads.iter().map(|&h| Tail::Entity(h)));
                    }
                }
            }
        }
        out
    }

    pub fn neighbors_by_id(
        &self,
        sources: &[&str],
        relation_id: &str,
        dir: Direction,
    ) -> Result<BTreeSet<Tail>, KbError> {
        let r = self.relation_by_id(relation_id)?;
        let sources = sources
            .iter()
            .map(|id| self.entity_by_id(id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.neighbors(sources, r, dir))
    }

    /// Tails of `e` along `r` (entity and literal).
    pub fn forward_tails(&self, e: EntityIx, r: RelationIx) -> &[Tail] {
        self.forward[e.get()]
            .get(&r)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Relations leaving `e`.
    pub fn out_relations(&self, e: EntityIx) -> impl Iterator<Item = RelationIx> + '_ {
        self.forward[e.get()].keys().copied()
    }

    /// Relations entering `e` from an entity head.
    pub fn in_relations(&self, e: EntityIx) -> impl Iterator<Item = RelationIx> + '_ {
        self.backward[e.get()].keys().copied()
    }

    /// Relational triples of `r`, in file order.
    pub fn triples_of(&self, r: RelationIx) -> impl Iterator<Item = &Triple> + '_ {
        self.by_relation[r.get()]
            .iter()
            .map(move |&i| &self.relational[i])
    }

    /// Direct concepts of `e`.
    pub fn concepts_of(&self, e: EntityIx) -> &[ConceptIx] {
        &self.concepts_of[e.get()]
    }

    /// Direct instances of `c`.
    pub fn direct_instances(&self, c: ConceptIx) -> &BTreeSet<EntityIx> {
        &self.instances[c.get()]
    }

    pub fn subclasses(&self, c: ConceptIx) -> &[ConceptIx] {
        &self.children[c.get()]
    }

    pub fn superclasses(&self, c: ConceptIx) -> &[ConceptIx] {
        &self.parents[c.get()]
    }

    /// `c` together with every concept below it in the subclass hierarchy.
    pub fn descendants(&self, c: ConceptIx) -> BTreeSet<ConceptIx> {
        self.closure(c, &self.children)
    }

    /// `c` together with every concept above it.
    pub fn ancestors(&self, c: ConceptIx) -> BTreeSet<ConceptIx> {
        self.closure(c, &self.parents)
    }

    fn closure(&self, c: ConceptIx, edges: &[Vec<ConceptIx>]) -> BTreeSet<ConceptIx> {
        let mut seen = BTreeSet::from([c]);
        let mut stack = vec![c];
        while let Some(x) = stack.pop() {
            for &y in &edges[x.get()] {
                if seen.insert(y) {
                    stack.push(y);
                }
            }
        }
        seen
    }

    pub fn concept_instances(&self, c: ConceptIx, transitive: bool) -> BTreeSet<EntityIx> {
        if !transitive {
            return self.instances[c.get()].clone();
        }
        let mut out = BTreeSet::new();
        for d in self.descendants(c) {
            out.extend(self.instances[d.get()].iter().copied());
        }
        out
    }

    pub fn concept_instances_by_id(
        &self,
        id: &str,
        transitive: bool,
    ) -> Result<BTreeSet<EntityIx>, KbError> {
        Ok(self.concept_instances(self.concept_by_id(id)?, transitive))
    }

    /// Same ids and triples, new display names for concepts and relations.
    ///
    /// The previous name joins the alias list and the new name leaves it.
    pub fn with_schema_names(
        &self,
        concept_names: &[String],
        relation_names: &[String],
    ) -> Result<KnowledgeBase, KbError> {
        assert_eq!(concept_names.len(), self.concepts.len());
        assert_eq!(relation_names.len(), self.relations.len());
        let mut data = self.to_file_data();
        for (rec, new) in data
            .concepts
            .iter_mut()
            .zip(concept_names)
            .chain(data.relations.iter_mut().zip(relation_names))
        {
            if &rec.name != new {
                let old = std::mem::replace(&mut rec.name, new.clone());
                rec.aliases.retain(|a| a != new);
                rec.aliases.insert(0, old);
            }
        }
        Self::from_file_data(data)
    }

    /// Index consistency check used by tests and `validate`.
    pub fn check_indexes(&self) -> Result<(), String> {
        let fwd: usize = self
            .forward
            .iter()
            .flat_map(|m| m.values())
            .map(Vec::len)
            .sum();
        if fwd != self.relational.len() {
            return Err(format!(
                "forward index holds {fwd} edges for {} triples",
                self.relational.len()
            ));
        }
        let entity_tailed = self
            .relational
            .iter()
            .filter(|t| matches!(t.tail, Tail::Entity(_)))
            .count();
        let bwd: usize = self
            .backward
            .iter()
            .flat_map(|m| m.values())
            .map(Vec::len)
            .sum();
        if bwd != entity_tailed {
            return Err(format!(
                "backward index holds {bwd} edges for {entity_tailed} entity-tailed triples"
            ));
        }
        for t in &self.relational {
            if !self.forward_tails(t.head, t.relation).contains(&t.tail) {
                return Err(format!("triple {t:?} missing from forward index"));
            }
            if let Tail::Entity(x) = t.tail {
                let heads = self.backward[x.get()].get(&t.relation);
                if !heads.is_some_and(|h| h.contains(&t.head)) {
                    return Err(format!("triple {t:?} missing from backward index"));
                }
            }
        }
        Ok(())
    }

    // ---- construction ----------------------------------------------------

    /// Validate and index raw file data.
    pub fn from_file_data(data: KbFile) -> Result<KnowledgeBase, KbError> {
        file::build(data)
    }

    /// Inverse of [`KnowledgeBase::from_file_data`], in original record order.
    pub fn to_file_data(&self) -> KbFile {
        file::dump(self)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        concepts: Vec<SchemaItem>,
        relations: Vec<SchemaItem>,
        entities: Vec<Entity>,
        instance_of: Vec<(EntityIx, ConceptIx)>,
        subclass_of: Vec<(ConceptIx, ConceptIx)>,
        relational: Vec<Triple>,
        entity_ids: HashMap<String, EntityIx>,
        concept_ids: HashMap<String, ConceptIx>,
        relation_ids: HashMap<String, RelationIx>,
    ) -> Result<KnowledgeBase, KbError> {
        let n_e = entities.len();
        let n_c = concepts.len();

        let mut entity_names: HashMap<String, Vec<EntityIx>> = HashMap::new();
        let mut entity_aliases: HashMap<String, Vec<EntityIx>> = HashMap::new();
        for (i, e) in entities.iter().enumerate() {
            let ix = EntityIx(i as u32);
            entity_names.entry(e.name.clone()).or_default().push(ix);
            for a in &e.aliases {
                let v = entity_aliases.entry(a.clone()).or_default();
                if !v.contains(&ix) {
                    v.push(ix);
                }
            }
        }
        let concept_names = unique_names(&concepts, |i| ConceptIx(i as u32))?;
        let relation_names = unique_names(&relations, |i| RelationIx(i as u32))?;

        let mut forward = vec![BTreeMap::<RelationIx, Vec<Tail>>::new(); n_e];
        let mut backward = vec![BTreeMap::<RelationIx, Vec<EntityIx>>::new(); n_e];
        let mut by_relation = vec![Vec::new(); relations.len()];
        let mut popularity = vec![0usize; n_e];
        for (i, t) in relational.iter().enumerate() {
            forward[t.head.get()]
                .entry(t.relation)
                .or_default()
                .push(t.tail.clone());
            by_relation[t.relation.get()].push(i);
            popularity[t.head.get()] += 1;
            if let Tail::Entity(x) = t.tail {
                backward[x.get()]
                    .entry(t.relation)
                    .or_default()
                    .push(t.head);
                if x != t.head {
                    popularity[x.get()] += 1;
                }
            }
        }

        let mut instances = vec![BTreeSet::new(); n_c];
        let mut concepts_of = vec![Vec::new(); n_e];
        for &(e, c) in &instance_of {
            instances[c.get()].insert(e);
            concepts_of[e.get()].push(c);
            popularity[e.get()] += 1;
        }
        for cs in &mut concepts_of {
            cs.sort();
        }

        let mut children = vec![Vec::new(); n_c];
        let mut parents = vec![Vec::new(); n_c];
        for &(child, parent) in &subclass_of {
            children[parent.get()].push(child);
            parents[child.get()].push(parent);
        }

        let kb = KnowledgeBase {
            concepts,
            relations,
            entities,
            instance_of,
            subclass_of,
            relational,
            entity_ids,
            concept_ids,
            relation_ids,
            entity_names,
            entity_aliases,
            concept_names,
            relation_names,
            forward,
            backward,
            by_relation,
            instances,
            concepts_of,
            children,
            parents,
            popularity,
        };
        kb.check_acyclic()?;
        Ok(kb)
    }

    fn check_acyclic(&self) -> Result<(), KbError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let n = self.concepts.len();
        let mut mark = vec![Mark::New; n];
        for start in 0..n {
            if mark[start] != Mark::New {
                continue;
            }
            // iterative DFS over parent edges; `path` mirrors the active stack
            let mut path: Vec<(usize, usize)> = vec![(start, 0)];
            mark[start] = Mark::Active;
            while let Some(top) = path.last_mut() {
                let node = top.0;
                if let Some(&p) = self.parents[node].get(top.1) {
                    top.1 += 1;
                    match mark[p.get()] {
                        Mark::New => {
                            mark[p.get()] = Mark::Active;
                            path.push((p.get(), 0));
                        }
                        Mark::Active => {
                            let from = path.iter().position(|&(x, _)| x == p.get()).unwrap();
                            let mut cycle: Vec<String> = path[from..]
                                .iter()
                                .map(|&(x, _)| self.concepts[x].id.clone())
                                .collect();
                            cycle.push(self.concepts[p.get()].id.clone());
                            return Err(KbError::Cycle(cycle));
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[node] = Mark::Done;
                    path.pop();
                }
            }
        }
        Ok(())
    }
}

fn unique_names<T: Copy>(
    items: &[SchemaItem],
    ix: impl Fn(usize) -> T,
) -> Result<HashMap<String, T>, KbError> {
    let mut names: HashMap<String, (T, usize)> = HashMap::new();
    for (i, item) in items.iter().enumerate() {
        if let Some(&(_, j)) = names.get(&item.name) {
            return Err(KbError::DuplicateName {
                kind: item.kind.as_str(),
                name: item.name.clone(),
                first: items[j].id.clone(),
                second: item.id.clone(),
            });
        }
        names.insert(item.name.clone(), (ix(i), i));
    }
    Ok(names.into_iter().map(|(k, (v, _))| (k, v)).collect())
}
