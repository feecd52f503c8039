//! Shared test helpers: fixture loading, a seeded random KB generator and
//! an independent reference interpreter that works directly on the raw
//! JSON of a KB file with linear scans.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use kbpi_core::kb::{LiteralValue, RawLiteral};
use kbpi_core::kopl::{Denotation, Function, FunctionCall, Program};
use kbpi_core::KnowledgeBase;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const FIXTURES: [&str; 3] = ["toy_music", "toy_travel", "toy_film"];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(format!("{name}.json"))
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap()
}

pub fn fixture(name: &str) -> KnowledgeBase {
    kbpi_core::load_kb(fixture_path(name)).unwrap()
}

// ---------------------------------------------------------------------------
// Reference interpreter
// ---------------------------------------------------------------------------

/// A literal as seen by the reference interpreter.
#[derive(Debug, Clone)]
pub struct OVal {
    pub kind: String,
    pub unit: Option<String>,
    /// Numeric key for quantities, dates (yyyymmdd) and years.
    pub num: Option<f64>,
    pub text: String,
}

impl PartialEq for OVal {
    fn eq(&self, o: &OVal) -> bool {
        self.same_class(o)
            && match (self.num, o.num) {
                (Some(a), Some(b)) => a == b,
                _ => self.text == o.text,
            }
    }
}

impl OVal {
    fn from_json(v: &Value) -> OVal {
        let kind = v["kind"].as_str().unwrap().to_owned();
        let unit = v.get("unit").and_then(Value::as_str).map(str::to_owned);
        let (num, text) = match kind.as_str() {
            "quantity" | "year" => (v["value"].as_f64(), v["value"].to_string()),
            "date" => {
                let s = v["value"].as_str().unwrap();
                let parts: Vec<f64> = s.split('-').map(|p| p.parse().unwrap()).collect();
                (
                    Some(parts[0] * 10000.0 + parts[1] * 100.0 + parts[2]),
                    s.to_owned(),
                )
            }
            _ => (None, v["value"].as_str().unwrap().to_owned()),
        };
        OVal {
            kind,
            unit: if matches!(v["kind"].as_str(), Some("quantity")) {
                unit
            } else {
                None
            },
            num,
            text,
        }
    }

    pub fn from_literal(v: &LiteralValue) -> OVal {
        OVal::from_json(&serde_json::to_value(RawLiteral::from_literal(v)).unwrap())
    }

    fn same_class(&self, o: &OVal) -> bool {
        self.kind == o.kind && self.unit == o.unit
    }

    fn numeric(&self) -> bool {
        self.kind != "string"
    }

    fn class_rank(&self) -> (u8, Option<String>) {
        let k = match self.kind.as_str() {
            "quantity" => 0,
            "date" => 1,
            "year" => 2,
            _ => 3,
        };
        (k, self.unit.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ODen {
    /// Bitmask over entity positions in the file.
    Ents(u64),
    Vals(Vec<OVal>),
    Count(usize),
}

pub struct RefKb {
    pub entity_ids: Vec<String>,
    names: Vec<String>,
    aliases: Vec<Vec<String>>,
    concept_names: BTreeMap<String, String>,
    relation_names: BTreeMap<String, String>,
    instance_of: Vec<(usize, String)>,
    subclass_of: Vec<(String, String)>,
    /// (head, relation id, tail): tail is an entity position or a literal.
    triples: Vec<(usize, String, Result<usize, OVal>)>,
}

fn items(v: &Value, key: &str) -> Vec<Value> {
    v.get(key)
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default()
}

impl RefKb {
    pub fn from_json(text: &str) -> RefKb {
        let v: Value = serde_json::from_str(text).unwrap();
        let ents = items(&v, "entities");
        assert!(
            ents.len() <= 64,
            "reference interpreter handles at most 64 entities"
        );
        let entity_ids: Vec<String> = ents
            .iter()
            .map(|e| e["id"].as_str().unwrap().to_owned())
            .collect();
        let pos = |id: &str| entity_ids.iter().position(|x| x == id).unwrap();
        let aliases_of = |e: &Value| -> Vec<String> {
            items(e, "aliases")
                .iter()
                .map(|a| a.as_str().unwrap().to_owned())
                .collect()
        };
        let named = |key: &str| -> BTreeMap<String, String> {
            items(&v, key)
                .iter()
                .map(|c| {
                    (
                        c["name"].as_str().unwrap().to_owned(),
                        c["id"].as_str().unwrap().to_owned(),
                    )
                })
                .collect()
        };
        let pair = |p: &Value| {
            (
                p[0].as_str().unwrap().to_owned(),
                p[1].as_str().unwrap().to_owned(),
            )
        };
        let mut triples = Vec::new();
        for t in items(&v, "relational") {
            let head = pos(t[0].as_str().unwrap());
            let tail = match &t[2] {
                Value::String(id) => Ok(pos(id)),
                lit => Err(OVal::from_json(lit)),
            };
            let triple = (head, t[1].as_str().unwrap().to_owned(), tail);
            if !triples.contains(&triple) {
                triples.push(triple);
            }
        }
        RefKb {
            names: ents
                .iter()
                .map(|e| e["name"].as_str().unwrap().to_owned())
                .collect(),
            aliases: ents.iter().map(aliases_of).collect(),
            concept_names: named("concepts"),
            relation_names: named("relations"),
            instance_of: items(&v, "instance_of")
                .iter()
                .map(|p| {
                    let (e, c) = pair(p);
                    (pos(&e), c)
                })
                .collect(),
            subclass_of: items(&v, "subclass_of").iter().map(pair).collect(),
            triples,
            entity_ids,
        }
    }

    pub fn all_mask(&self) -> u64 {
        if self.entity_ids.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.entity_ids.len()) - 1
        }
    }

    pub fn entity_names(&self) -> Vec<String> {
        let set: BTreeSet<_> = self.names.iter().cloned().collect();
        set.into_iter().collect()
    }

    pub fn concept_names(&self) -> Vec<String> {
        self.concept_names.keys().cloned().collect()
    }

    pub fn relation_names(&self) -> Vec<String> {
        self.relation_names.keys().cloned().collect()
    }

    fn find(&self, name: &str) -> u64 {
        let mut m = 0;
        for (i, n) in self.names.iter().enumerate() {
            if n == name {
                m |= 1 << i;
            }
        }
        if m == 0 {
            for (i, al) in self.aliases.iter().enumerate() {
                if al.iter().any(|a| a == name) {
                    m |= 1 << i;
                }
            }
        }
        m
    }

    /// Instances of concept `cid`, following subclass links downwards.
    fn concept_members(&self, cid: &str, transitive: bool) -> u64 {
        let mut cs: BTreeSet<String> = BTreeSet::from([cid.to_owned()]);
        if transitive {
            loop {
                let before = cs.len();
                for (child, parent) in &self.subclass_of {
                    if cs.contains(parent) {
                        cs.insert(child.clone());
                    }
                }
                if cs.len() == before {
                    break;
                }
            }
        }
        self.instance_of
            .iter()
            .filter(|(_, c)| cs.contains(c))
            .fold(0, |m, (e, _)| m | 1 << e)
    }

    /// Applies one call; `Err(())` on any execution error.
    pub fn apply(
        &self,
        stack: &mut Vec<ODen>,
        f: Function,
        arg: &str,
        transitive: bool,
    ) -> Result<(), ()> {
        let rel = |name: &str| self.relation_names.get(name).cloned().ok_or(());
        let top_ents = |stack: &Vec<ODen>| match stack.last() {
            Some(ODen::Ents(m)) => Ok(*m),
            _ => Err(()),
        };
        let out = match f {
            Function::Find => {
                let m = self.find(arg);
                if m == 0 {
                    return Err(());
                }
                stack.push(ODen::Ents(m));
                return Ok(());
            }
            Function::FindAll => {
                stack.push(ODen::Ents(self.all_mask()));
                return Ok(());
            }
            Function::Relate => {
                let r = rel(arg)?;
                let src = top_ents(stack)?;
                let mut ents = 0u64;
                let mut vals: Vec<OVal> = Vec::new();
                for (h, tr, t) in &self.triples {
                    if *tr == r && src >> h & 1 == 1 {
                        match t {
                            Ok(e) => ents |= 1 << e,
                            Err(v) => {
                                if !vals.contains(v) {
                                    vals.push(v.clone())
                                }
                            }
                        }
                    }
                }
                if ents == 0 && !vals.is_empty() {
                    ODen::Vals(vals)
                } else {
                    ODen::Ents(ents)
                }
            }
            Function::ReverseRelate => {
                let r = rel(arg)?;
                let src = top_ents(stack)?;
                let mut ents = 0u64;
                for (h, tr, t) in &self.triples {
                    if *tr == r && matches!(t, Ok(e) if src >> e & 1 == 1) {
                        ents |= 1 << h;
                    }
                }
                ODen::Ents(ents)
            }
            Function::FilterConcept => {
                let c = self.concept_names.get(arg).ok_or(())?;
                let src = top_ents(stack)?;
                ODen::Ents(src & self.concept_members(c, transitive))
            }
            Function::And | Function::Or => {
                if stack.len() < 2 {
                    return Err(());
                }
                let b = top_ents(stack)?;
                let a = match &stack[stack.len() - 2] {
                    ODen::Ents(m) => *m,
                    _ => return Err(()),
                };
                stack.pop();
                ODen::Ents(if f == Function::And { a & b } else { a | b })
            }
            Function::Argmax | Function::Argmin => {
                let r = rel(arg)?;
                let src = top_ents(stack)?;
                let pairs: Vec<(usize, &OVal)> = self
                    .triples
                    .iter()
                    .filter(|(h, tr, _)| *tr == r && src >> h & 1 == 1)
                    .filter_map(|(h, _, t)| match t {
                        Err(v) if v.numeric() => Some((*h, v)),
                        _ => None,
                    })
                    .collect();
                let mut counts: Vec<((u8, Option<String>), usize)> = Vec::new();
                for (_, v) in &pairs {
                    let k = v.class_rank();
                    match counts.iter_mut().find(|(c, _)| *c == k) {
                        Some((_, n)) => *n += 1,
                        None => counts.push((k, 1)),
                    }
                }
                // most values wins; among equals the smallest class
                counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                let mut m = 0u64;
                if let Some((class, _)) = counts.first() {
                    let in_class: Vec<_> = pairs
                        .iter()
                        .filter(|(_, v)| &v.class_rank() == class)
                        .collect();
                    let nums = in_class.iter().map(|(_, v)| v.num.unwrap());
                    let best = if f == Function::Argmax {
                        nums.fold(f64::NEG_INFINITY, f64::max)
                    } else {
                        nums.fold(f64::INFINITY, f64::min)
                    };
                    for (e, v) in in_class {
                        if v.num.unwrap() == best {
                            m |= 1 << e;
                        }
                    }
                }
                ODen::Ents(m)
            }
            Function::LT | Function::LE | Function::GT | Function::GE => {
                let r = rel(arg)?;
                let pivot = match stack.last() {
                    Some(ODen::Vals(vs)) if vs.len() == 1 && vs[0].numeric() => vs[0].clone(),
                    _ => return Err(()),
                };
                let p = pivot.num.unwrap();
                let mut m = 0u64;
                for (h, tr, t) in &self.triples {
                    if let Err(v) = t {
                        if *tr == r && v.same_class(&pivot) {
                            let x = v.num.unwrap();
                            let keep = match f {
                                Function::LT => x < p,
                                Function::LE => x <= p,
                                Function::GT => x > p,
                                _ => x >= p,
                            };
                            if keep {
                                m |= 1 << h;
                            }
                        }
                    }
                }
                ODen::Ents(m)
            }
            Function::Count => ODen::Count(top_ents(stack)?.count_ones() as usize),
        };
        *stack.last_mut().ok_or(())? = out;
        Ok(())
    }

    pub fn run(&self, calls: &[(Function, String)], transitive: bool) -> Result<ODen, ()> {
        if calls.len() > 20 {
            return Err(());
        }
        let mut st = Vec::new();
        for (f, a) in calls {
            self.apply(&mut st, *f, a, transitive)?;
        }
        if st.len() != 1 {
            return Err(());
        }
        Ok(st.pop().unwrap())
    }

    pub fn run_program(&self, p: &Program) -> Result<ODen, ()> {
        let calls: Vec<_> = p
            .calls
            .iter()
            .map(|c| (c.function, c.arg().to_owned()))
            .collect();
        self.run(&calls, true)
    }

    pub fn is_empty(d: &ODen) -> bool {
        match d {
            ODen::Ents(m) => *m == 0,
            ODen::Vals(v) => v.is_empty(),
            ODen::Count(_) => false,
        }
    }
}

/// Position of each crate entity index in the reference entity order.
pub fn entity_positions(kb: &KnowledgeBase, r: &RefKb) -> Vec<usize> {
    kb.entities()
        .iter()
        .map(|e| r.entity_ids.iter().position(|x| *x == e.id).unwrap())
        .collect()
}

/// Does a denotation from the crate equal the reference one?
pub fn same_denotation(pos: &[usize], d: &Denotation, o: &ODen) -> bool {
    match (d, o) {
        (Denotation::Entities(s), ODen::Ents(m)) => {
            s.iter().fold(0u64, |acc, e| acc | 1 << pos[e.get()]) == *m
        }
        (Denotation::Values(vs), ODen::Vals(ovs)) => {
            vs.len() == ovs.len() && vs.iter().all(|v| ovs.contains(&OVal::from_literal(v)))
        }
        (Denotation::Count(a), ODen::Count(b)) => a == b,
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Call vocabulary
// ---------------------------------------------------------------------------

/// Every call the grammar can form over a KB's names.
pub fn vocabulary(r: &RefKb) -> Vec<FunctionCall> {
    let mut out = Vec::new();
    for f in Function::ALL {
        match f {
            Function::Find => {
                for n in r.entity_names() {
                    out.push(FunctionCall::of(f, &n));
                }
            }
            Function::FilterConcept => {
                for n in r.concept_names() {
                    out.push(FunctionCall::of(f, &n));
                }
            }
            Function::FindAll | Function::And | Function::Or | Function::Count => {
                out.push(FunctionCall::of(f, ""))
            }
            _ => {
                for n in r.relation_names() {
                    out.push(FunctionCall::of(f, &n));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Random KBs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct KbShape {
    pub entities: usize,
    pub concepts: usize,
    pub relations: usize,
    pub entity_triples: usize,
    pub literal_triples: usize,
}

impl KbShape {
    pub fn small() -> Self {
        KbShape {
            entities: 8,
            concepts: 4,
            relations: 3,
            entity_triples: 12,
            literal_triples: 8,
        }
    }
}

fn random_literal(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..5) {
        0 | 1 => {
            let unit = ["kg", "m", ""][rng.gen_range(0..3)];
            let v = rng.gen_range(0..6) as f64 * 1.5;
            if unit.is_empty() {
                json!({"kind": "quantity", "value": v})
            } else {
                json!({"kind": "quantity", "value": v, "unit": unit})
            }
        }
        2 => {
            json!({"kind": "date", "value": format!("{}-0{}-1{}", rng.gen_range(1990..1994), rng.gen_range(1..4), rng.gen_range(0..3))})
        }
        3 => json!({"kind": "year", "value": rng.gen_range(1995..1999)}),
        _ => {
            let colour = ["red", "blue", "green"][rng.gen_range(0..3)];
            json!({"kind": "string", "value": colour})
        }
    }
}

/// A random, valid KB file with unique names and occasional shared aliases.
pub fn random_kb_json(seed: u64, shape: KbShape) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let concepts: Vec<Value> = (0..shape.concepts)
        .map(|i| {
            let mut aliases = vec![format!("kind {i}")];
            if rng.gen_bool(0.3) {
                aliases.push("sort".into());
            }
            json!({"id": format!("c{i}"), "name": format!("concept {i}"), "aliases": aliases})
        })
        .collect();
    let relations: Vec<Value> = (0..shape.relations)
        .map(|i| {
            let mut aliases = vec![format!("link {i}"), format!("rel {i} alt")];
            if rng.gen_bool(0.3) {
                aliases.push("related".into());
            }
            json!({"id": format!("r{i}"), "name": format!("relation {i}"), "aliases": aliases})
        })
        .collect();
    let entities: Vec<Value> = (0..shape.entities)
        .map(|i| {
            let aliases: Vec<String> = if rng.gen_bool(0.3) {
                vec!["someone".into()]
            } else {
                vec![]
            };
            json!({"id": format!("e{i:02}"), "name": format!("Entity {i}"), "aliases": aliases})
        })
        .collect();
    let mut subclass = Vec::new();
    for child in 0..shape.concepts {
        for parent in child + 1..shape.concepts {
            if rng.gen_bool(0.3) {
                subclass.push(json!([format!("c{child}"), format!("c{parent}")]));
            }
        }
    }
    let mut instance_of = BTreeSet::new();
    if shape.concepts > 0 {
        for e in 0..shape.entities {
            // some entities stay concept-less
            let n = [0, 1, 1, 1, 2][rng.gen_range(0..5)];
            for _ in 0..n {
                instance_of.insert((e, rng.gen_range(0..shape.concepts)));
            }
        }
    }
    let mut relational = Vec::new();
    if shape.relations > 0 && shape.entities > 0 {
        for _ in 0..shape.entity_triples {
            let h = rng.gen_range(0..shape.entities);
            let t = rng.gen_range(0..shape.entities);
            let r = rng.gen_range(0..shape.relations);
            relational.push(json!([
                format!("e{h:02}"),
                format!("r{r}"),
                format!("e{t:02}")
            ]));
        }
        for _ in 0..shape.literal_triples {
            let h = rng.gen_range(0..shape.entities);
            let r = rng.gen_range(0..shape.relations);
            relational.push(json!([
                format!("e{h:02}"),
                format!("r{r}"),
                random_literal(&mut rng)
            ]));
        }
    }
    relational.shuffle(&mut rng);
    serde_json::to_string_pretty(&json!({
        "concepts": concepts,
        "relations": relations,
        "entities": entities,
        "instance_of": instance_of.iter().map(|(e, c)| json!([format!("e{e:02}"), format!("c{c}")])).collect::<Vec<_>>(),
        "subclass_of": subclass,
        "relational": relational,
    }))
    .unwrap()
}

// ---------------------------------------------------------------------------
// Exhaustive executor comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Clone)]
pub struct ExhaustiveReport {
    /// Structurally valid programs covered (executed, or inside a prefix on
    /// which both interpreters already failed).
    pub programs: u64,
    /// Programs actually run to completion by both interpreters.
    pub executed: u64,
    /// Programs decided by a shared failing prefix.
    pub failed_prefix: u64,
    pub mismatches: Vec<String>,
}

struct Counts {
    pushes: u64,
    unary: u64,
    binary: u64,
}

/// Structurally valid completions of a prefix at branch depth `d` using at
/// most `rem` further calls (the prefix itself counts when `d == 1`).
fn completions(c: &Counts, memo: &mut BTreeMap<(usize, usize), u64>, rem: usize, d: usize) -> u64 {
    if let Some(&v) = memo.get(&(rem, d)) {
        return v;
    }
    let mut n = u64::from(d == 1);
    if rem > 0 && d <= rem + 1 {
        n += c.pushes * completions(c, memo, rem - 1, d + 1);
        if d >= 1 {
            n += c.unary * completions(c, memo, rem - 1, d);
        }
        if d >= 2 {
            n += c.binary * completions(c, memo, rem - 1, d - 1);
        }
    }
    memo.insert((rem, d), n);
    n
}

/// Enumerates every arity-correct program of at most `max_len` calls over
/// the KB's names, executing it with both the crate and the reference
/// interpreter.
pub fn exhaustive_compare(kb_text: &str, max_len: usize) -> ExhaustiveReport {
    use kbpi_core::kopl::{ExecOptions, ExecState};

    let kb = KnowledgeBase::from_json(kb_text).unwrap();
    let r = RefKb::from_json(kb_text);
    let pos = entity_positions(&kb, &r);
    let vocab = vocabulary(&r);
    let counts = Counts {
        pushes: vocab
            .iter()
            .filter(|c| matches!(c.function, Function::Find | Function::FindAll))
            .count() as u64,
        unary: vocab.iter().filter(|c| c.function.pops() == 1).count() as u64,
        binary: vocab.iter().filter(|c| c.function.pops() == 2).count() as u64,
    };
    let mut memo = BTreeMap::new();
    let mut report = ExhaustiveReport::default();
    let opts = ExecOptions::default();

    struct Frame<'a> {
        kb: &'a KnowledgeBase,
        r: &'a RefKb,
        pos: &'a [usize],
        vocab: &'a [FunctionCall],
        counts: &'a Counts,
        opts: ExecOptions,
        max_len: usize,
    }

    fn dfs(
        fr: &Frame,
        memo: &mut BTreeMap<(usize, usize), u64>,
        report: &mut ExhaustiveReport,
        st: &ExecState,
        ost: &[ODen],
        prefix: &mut Vec<FunctionCall>,
    ) {
        let depth = st.depth();
        for call in fr.vocab {
            let pops = call.function.pops();
            if pops > depth {
                continue;
            }
            let new_depth = depth - pops + 1;
            let rem = fr.max_len - prefix.len() - 1;
            if new_depth > rem + 1 {
                continue;
            }
            let mut st2 = st.clone();
            let mut ost2 = ost.to_vec();
            let a = st2.apply(fr.kb, &fr.opts, call).is_ok();
            let b =
                fr.r.apply(&mut ost2, call.function, call.arg(), true)
                    .is_ok();
            prefix.push(call.clone());
            match (a, b) {
                (false, false) => {
                    let n = completions(fr.counts, memo, rem, new_depth);
                    report.programs += n;
                    report.failed_prefix += n;
                }
                (true, true) => {
                    if new_depth == 1 {
                        report.programs += 1;
                        report.executed += 1;
                        let ok = same_denotation(fr.pos, st2.top().unwrap(), ost2.last().unwrap());
                        if !ok && report.mismatches.len() < 20 {
                            report
                                .mismatches
                                .push(Program::new(prefix.clone()).serialize());
                        }
                    }
                    if rem > 0 {
                        dfs(fr, memo, report, &st2, &ost2, prefix);
                    }
                }
                _ => {
                    let n = completions(fr.counts, memo, rem, new_depth);
                    report.programs += n;
                    if report.mismatches.len() < 20 {
                        report.mismatches.push(format!(
                            "{} (crate ok: {a}, reference ok: {b})",
                            Program::new(prefix.clone()).serialize()
                        ));
                    }
                }
            }
            prefix.pop();
        }
    }

    let fr = Frame {
        kb: &kb,
        r: &r,
        pos: &pos,
        vocab: &vocab,
        counts: &counts,
        opts,
        max_len,
    };
    dfs(
        &fr,
        &mut memo,
        &mut report,
        &ExecState::default(),
        &[],
        &mut Vec::new(),
    );
    report
}

/// Number of arity-correct programs of at most `max_len` calls.
pub fn structural_program_count(kb_text: &str, max_len: usize) -> u64 {
    let vocab = vocabulary(&RefKb::from_json(kb_text));
    let counts = Counts {
        pushes: vocab
            .iter()
            .filter(|c| matches!(c.function, Function::Find | Function::FindAll))
            .count() as u64,
        unary: vocab.iter().filter(|c| c.function.pops() == 1).count() as u64,
        binary: vocab.iter().filter(|c| c.function.pops() == 2).count() as u64,
    };
    completions(&counts, &mut BTreeMap::new(), max_len, 0)
}

// ---------------------------------------------------------------------------
// Decoder brute force
// ---------------------------------------------------------------------------

pub const END_TEXT: &str = "END";

/// Admissible next chunks by trying every call of the vocabulary on the
/// reference interpreter. Texts are returned sorted, END (if any) last.
pub fn brute_force_candidates(
    r: &RefKb,
    prefix: &[FunctionCall],
    topic_entities: &[String],
    topic_concepts: &[String],
) -> Vec<String> {
    let mut out = BTreeSet::new();
    if prefix.is_empty() {
        if !topic_entities.is_empty() {
            for t in topic_entities {
                let mut st = Vec::new();
                if r.apply(&mut st, Function::Find, t.trim(), true).is_ok() {
                    out.insert(format!("Find({})", t.trim()));
                }
            }
        } else {
            for c in topic_concepts {
                let mut st = Vec::new();
                r.apply(&mut st, Function::FindAll, "", true).unwrap();
                if r.apply(&mut st, Function::FilterConcept, c.trim(), true)
                    .is_ok()
                    && !RefKb::is_empty(st.last().unwrap())
                {
                    out.insert(format!("FindAll() FilterConcept({})", c.trim()));
                }
            }
        }
        return out.into_iter().collect();
    }

    let mut st = Vec::new();
    for c in prefix {
        r.apply(&mut st, c.function, c.arg(), true)
            .expect("prefix must execute");
    }
    let can_end = st.len() == 1;
    let terminal = prefix.len() >= 20 || prefix.last().unwrap().function == Function::Count;
    let mut sorted: Vec<String> = Vec::new();
    if !terminal {
        let mut found: BTreeSet<(&str, String)> = BTreeSet::new();
        let used: BTreeSet<&str> = prefix
            .iter()
            .filter(|c| c.function == Function::Find)
            .map(|c| c.arg())
            .collect();
        // FindAll only ever appears inside the no-topic seed
        let mut calls: Vec<FunctionCall> = vocabulary(r)
            .into_iter()
            .filter(|c| !matches!(c.function, Function::Find | Function::FindAll))
            .collect();
        for t in topic_entities {
            if !used.contains(t.trim()) {
                calls.push(FunctionCall::of(Function::Find, t.trim()));
            }
        }
        for c in calls {
            if c.function == Function::Count
                && !(st.len() == 1 && matches!(st.last(), Some(ODen::Ents(m)) if *m != 0))
            {
                continue;
            }
            let mut trial = st.clone();
            if r.apply(&mut trial, c.function, c.arg(), true).is_ok()
                && !RefKb::is_empty(trial.last().unwrap())
            {
                found.insert((c.function.name(), c.arg().to_owned()));
            }
        }
        sorted = found
            .into_iter()
            .map(|(f, a)| FunctionCall::of(Function::from_name(f).unwrap(), &a).to_string())
            .collect();
    }
    if can_end {
        sorted.push(END_TEXT.to_owned());
    }
    sorted
}

/// Soundness violations among `candidates` for `prefix`, judged by the
/// reference interpreter.
pub fn soundness_violations(
    r: &RefKb,
    prefix: &[FunctionCall],
    candidates: &[String],
) -> Vec<String> {
    let mut bad = Vec::new();
    let mut st = Vec::new();
    for c in prefix {
        if r.apply(&mut st, c.function, c.arg(), true).is_err() {
            return vec![format!(
                "prefix {} fails to execute",
                Program::new(prefix.to_vec())
            )];
        }
    }
    for cand in candidates {
        if cand == END_TEXT {
            if st.len() != 1 {
                bad.push(format!("END offered at depth {}", st.len()));
            }
            continue;
        }
        let chunk = Program::parse_prefix(cand).expect("candidate parses").calls;
        let mut trial = st.clone();
        let ok = chunk
            .iter()
            .all(|c| r.apply(&mut trial, c.function, c.arg(), true).is_ok());
        if !ok {
            bad.push(format!("{cand}: execution error"));
        } else if RefKb::is_empty(trial.last().unwrap()) {
            bad.push(format!("{cand}: empty denotation"));
        } else if chunk.last().unwrap().function == Function::Count && trial.len() != 1 {
            bad.push(format!("{cand}: Count with open branches"));
        } else if prefix.len() + chunk.len() > 20 {
            bad.push(format!("{cand}: exceeds length cap"));
        }
    }
    bad
}

#[derive(Debug, Clone)]
pub struct PrefixCase {
    pub kb: usize,
    pub topic_entities: Vec<String>,
    pub topic_concepts: Vec<String>,
    pub prefix: Vec<FunctionCall>,
}

/// The three fixtures followed by `extra` random KBs.
pub fn decoder_kbs(extra: u64) -> Vec<String> {
    let mut out: Vec<String> = FIXTURES.iter().map(|n| fixture_text(n)).collect();
    out.extend((0..extra).map(|s| random_kb_json(1000 + s, KbShape::small())));
    out
}

/// Distinct prefixes reached by random walks through the crate's decoder.
pub fn random_prefixes(kbs: &[String], count: usize, seed: u64) -> Vec<PrefixCase> {
    use kbpi_core::decoder::{enumerate_candidates, Candidate, PartialHypothesis, TopicSpec};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loaded: Vec<_> = kbs
        .iter()
        .map(|t| (KnowledgeBase::from_json(t).unwrap(), RefKb::from_json(t)))
        .collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        assert!(
            attempts < count * 50,
            "random walks stopped producing new prefixes"
        );
        let ki = rng.gen_range(0..loaded.len());
        let (kb, r) = &loaded[ki];
        let (topic_entities, topic_concepts) = if rng.gen_bool(0.8) {
            let mut pool = r.entity_names();
            pool.push("Nobody In Particular".into());
            let n = rng.gen_range(1..=3);
            (
                pool.choose_multiple(&mut rng, n).cloned().collect(),
                Vec::new(),
            )
        } else {
            let n = rng.gen_range(1..=2);
            (
                Vec::new(),
                r.concept_names()
                    .choose_multiple(&mut rng, n)
                    .cloned()
                    .collect::<Vec<_>>(),
            )
        };
        let topics = TopicSpec {
            topic_entities: topic_entities.clone(),
            topic_concepts: topic_concepts.clone(),
        };
        let mut hyp = PartialHypothesis::root();
        loop {
            let key = (
                ki,
                topic_entities.clone(),
                topic_concepts.clone(),
                hyp.program.serialize(),
            );
            if seen.insert(key) {
                out.push(PrefixCase {
                    kb: ki,
                    topic_entities: topic_entities.clone(),
                    topic_concepts: topic_concepts.clone(),
                    prefix: hyp.program.calls.clone(),
                });
                if out.len() == count {
                    break;
                }
            }
            let Ok(cands) = enumerate_candidates(kb, &hyp, &topics) else {
                break;
            };
            let calls: Vec<&Candidate> = cands.iter().filter(|c| !c.is_end()).collect();
            let has_end = calls.len() < cands.len();
            if calls.is_empty() || (has_end && rng.gen_bool(0.15)) {
                break;
            }
            let Candidate::Calls(chunk) = calls[rng.gen_range(0..calls.len())] else {
                unreachable!()
            };
            let mut all = hyp.program.calls.clone();
            all.extend(chunk.iter().cloned());
            hyp = PartialHypothesis::from_program(kb, Program::new(all), &Default::default())
                .unwrap();
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Schema corpus laws
// ---------------------------------------------------------------------------

/// Counts and ordering facts about one schema corpus, computed from the raw
/// KB JSON independently of the crate.
#[derive(Debug, Default)]
pub struct SchemaLawReport {
    pub items_checked: usize,
    pub count_failures: Vec<String>,
    pub order_violations: usize,
    /// Relations without literal tails, where the plain closed form applies.
    pub closed_form_relations: usize,
}

/// Popularity from a raw KB file: the number of distinct instance_of and
/// relational triples an entity occurs in.
pub fn raw_popularity(text: &str) -> BTreeMap<String, usize> {
    let v: Value = serde_json::from_str(text).unwrap();
    let mut pop: BTreeMap<String, usize> = items(&v, "entities")
        .iter()
        .map(|e| (e["id"].as_str().unwrap().to_owned(), 0))
        .collect();
    let mut seen = BTreeSet::new();
    for t in items(&v, "instance_of") {
        if seen.insert(t.to_string()) {
            *pop.get_mut(t[0].as_str().unwrap()).unwrap() += 1;
        }
    }
    for t in items(&v, "relational") {
        if !seen.insert(t.to_string()) {
            continue;
        }
        let h = t[0].as_str().unwrap();
        *pop.get_mut(h).unwrap() += 1;
        if let Some(tail) = t[2].as_str() {
            if tail != h {
                *pop.get_mut(tail).unwrap() += 1;
            }
        }
    }
    pop
}

pub fn check_schema_laws(
    text: &str,
    pairs: &[kbpi_core::schema_data::QaPair],
    k: usize,
) -> SchemaLawReport {
    use kbpi_core::schema_data::Template;

    let v: Value = serde_json::from_str(text).unwrap();
    let pop = raw_popularity(text);
    let name_of: BTreeMap<String, String> = items(&v, "entities")
        .iter()
        .map(|e| {
            (
                e["name"].as_str().unwrap().to_owned(),
                e["id"].as_str().unwrap().to_owned(),
            )
        })
        .collect();
    let inst: BTreeSet<(String, String)> = items(&v, "instance_of")
        .iter()
        .map(|p| {
            (
                p[0].as_str().unwrap().to_owned(),
                p[1].as_str().unwrap().to_owned(),
            )
        })
        .collect();
    let subs: BTreeSet<(String, String)> = items(&v, "subclass_of")
        .iter()
        .map(|p| {
            (
                p[0].as_str().unwrap().to_owned(),
                p[1].as_str().unwrap().to_owned(),
            )
        })
        .collect();
    let has_concept = |e: &str| inst.iter().any(|(x, _)| x == e);
    let mut rep = SchemaLawReport::default();

    for c in items(&v, "concepts") {
        let cid = c["id"].as_str().unwrap();
        let members: Vec<&String> = inst
            .iter()
            .filter(|(_, x)| x == cid)
            .map(|(e, _)| e)
            .collect();
        let touching = subs.iter().filter(|(a, b)| a == cid || b == cid).count();
        let expected = 2 * k.min(members.len()) + 2 * touching;
        let got = pairs
            .iter()
            .filter(|p| match p.template {
                Template::InstFwd | Template::InstBwd => p.item_id == cid,
                Template::SubFwd | Template::SubBwd => {
                    p.item_id == cid || p.partner_id.as_deref() == Some(cid)
                }
                _ => false,
            })
            .count();
        rep.items_checked += 1;
        if got != expected {
            rep.count_failures
                .push(format!("concept {cid}: {got} pairs, expected {expected}"));
        }
        // order law over the selected instances
        let selected: BTreeSet<&String> = pairs
            .iter()
            .filter(|p| p.template == Template::InstBwd && p.item_id == cid)
            .map(|p| &name_of[&p.answer])
            .collect();
        let min_sel = selected.iter().map(|e| pop[*e]).min();
        let max_rest = members
            .iter()
            .filter(|e| !selected.contains(*e))
            .map(|e| pop[*e])
            .max();
        if let (Some(a), Some(b)) = (min_sel, max_rest) {
            if a < b {
                rep.order_violations += 1;
            }
        }
    }

    let relational: BTreeSet<String> = items(&v, "relational")
        .iter()
        .map(|t| t.to_string())
        .collect();
    for r in items(&v, "relations") {
        let rid = r["id"].as_str().unwrap();
        let mut ent_ranks = Vec::new();
        let mut lit_ranks = Vec::new();
        for t in &relational {
            let t: Value = serde_json::from_str(t).unwrap();
            if t[1] != rid {
                continue;
            }
            let h = t[0].as_str().unwrap();
            if !has_concept(h) {
                continue;
            }
            match t[2].as_str() {
                Some(tail) if has_concept(tail) => ent_ranks.push(pop[h].min(pop[tail])),
                Some(_) => {}
                None => lit_ranks.push(pop[h]),
            }
        }
        let of = |tpl: Template| {
            pairs
                .iter()
                .filter(move |p| p.template == tpl && p.item_id == rid)
        };
        let a = of(Template::RelWhat).count();
        let fwd = of(Template::RelFwd).count();
        let got = pairs.iter().filter(|p| p.item_id == rid).count();
        rep.items_checked += 1;
        let eligible = ent_ranks.len() + lit_ranks.len();
        let b = fwd.saturating_sub(a);
        if got != 3 * a + b
            || a + b != k.min(eligible)
            || a > ent_ranks.len()
            || b > lit_ranks.len()
        {
            rep.count_failures.push(format!(
                "relation {rid}: {got} pairs ({a} entity, {b} literal) for {eligible} eligible, k = {k}"
            ));
        }
        if lit_ranks.is_empty() {
            rep.closed_form_relations += 1;
            if got != 3 * k.min(ent_ranks.len()) {
                rep.count_failures.push(format!(
                    "relation {rid}: {got} pairs, closed form {}",
                    3 * k.min(ent_ranks.len())
                ));
            }
        }
        // ranks of the selected triples must be the top of the eligible ranks
        let mut sel: Vec<usize> = Vec::new();
        for p in of(Template::RelWhat) {
            let q: Vec<&str> = p.query.split(" || ").collect();
            let head = q[0].split(" | ").next().unwrap();
            let tail = q[2].split(" | ").nth(1).unwrap();
            sel.push(pop[&name_of[head]].min(pop[&name_of[tail]]));
        }
        for p in of(Template::RelFwd) {
            let kind = p.answer.split(" | ").next().unwrap();
            if ["quantity", "date", "year", "string"].contains(&kind) {
                let head = p.query.split(" | ").next().unwrap();
                sel.push(pop[&name_of[head]]);
            }
        }
        let mut all: Vec<usize> = ent_ranks.iter().chain(&lit_ranks).copied().collect();
        all.sort_unstable_by(|a, b| b.cmp(a));
        sel.sort_unstable_by(|a, b| b.cmp(a));
        if sel.len() > all.len() || sel[..] != all[..sel.len()] {
            rep.order_violations += 1;
        }
    }
    rep
}

// ---------------------------------------------------------------------------
// Gold programs and denotation comparison across KB files
// ---------------------------------------------------------------------------

/// `count` distinct complete programs drawn by random walks through the
/// crate's candidate enumerator, each with the topic entities it used.
pub fn random_gold_programs(text: &str, count: usize, seed: u64) -> Vec<(Program, Vec<String>)> {
    use kbpi_core::decoder::{enumerate_candidates, Candidate, PartialHypothesis, TopicSpec};

    let kb = KnowledgeBase::from_json(text).unwrap();
    let r = RefKb::from_json(text);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        assert!(
            attempts < count * 200,
            "only {} distinct programs found",
            out.len()
        );
        let n = rng.gen_range(1..=2);
        let topics: Vec<String> = r
            .entity_names()
            .choose_multiple(&mut rng, n)
            .cloned()
            .collect();
        let spec = TopicSpec::entities(topics.clone());
        let mut hyp = PartialHypothesis::root();
        let target = rng.gen_range(1..=8);
        while let Ok(cands) = enumerate_candidates(&kb, &hyp, &spec) {
            let calls: Vec<&Candidate> = cands.iter().filter(|c| !c.is_end()).collect();
            let can_end = calls.len() < cands.len();
            if can_end && (calls.is_empty() || hyp.program.len() >= target) {
                if seen.insert(hyp.program.serialize()) {
                    out.push((hyp.program.clone(), topics.clone()));
                }
                break;
            }
            if calls.is_empty() {
                break;
            }
            let Candidate::Calls(chunk) = calls[rng.gen_range(0..calls.len())] else {
                unreachable!()
            };
            let mut all = hyp.program.calls.clone();
            all.extend(chunk.iter().cloned());
            hyp = PartialHypothesis::from_program(&kb, Program::new(all), &Default::default())
                .unwrap();
        }
    }
    out
}

/// A denotation rendered with entity ids so results from different KB files
/// can be compared.
pub fn canonical(r: &RefKb, d: &ODen) -> String {
    match d {
        ODen::Ents(m) => {
            let ids: Vec<&str> = (0..r.entity_ids.len())
                .filter(|i| m >> i & 1 == 1)
                .map(|i| r.entity_ids[i].as_str())
                .collect();
            format!("entities {ids:?}")
        }
        ODen::Vals(vs) => {
            let mut keys: Vec<String> = vs
                .iter()
                .map(|v| {
                    format!(
                        "{} {:?} {:?} {}",
                        v.kind,
                        v.unit,
                        v.num,
                        if v.num.is_some() { "" } else { &v.text }
                    )
                })
                .collect();
            keys.sort();
            format!("values {keys:?}")
        }
        ODen::Count(n) => format!("count {n}"),
    }
}
