//! Source-KB generation by alias replacement.
//!
//! Each generated KB keeps the ids and triples of the source and renames
//! every concept and relation to one of its known surface forms. Gold
//! programs are rewritten with the same renaming, and every rewritten
//! program is re-executed to check that its answer did not change.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

use crate::kb::{KbError, KnowledgeBase, SchemaItem, SchemaKind, INSTANCE_OF, SUBCLASS_OF};
use crate::kopl::{execute, parse_program, ArgKind, Program};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("alias map index must be at least 1")]
    BadIndex,
    #[error("alias map has no image for {kind} {id:?}")]
    Coverage { kind: &'static str, id: String },
    #[error("{kind} {name:?} is not in the alias map")]
    Unresolved { kind: &'static str, name: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Data {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Kb(#[from] KbError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AugmentError + '_ {
    move |source| AugmentError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Chosen surface name of one schema item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasImage {
    pub source: String,
    pub image: String,
}

/// Renaming of every concept and relation for one generated KB, keyed by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasMap {
    pub index: usize,
    pub concepts: BTreeMap<String, AliasImage>,
    pub relations: BTreeMap<String, AliasImage>,
}

impl AliasMap {
    pub fn identity(kb: &KnowledgeBase) -> Self {
        let ident = |items: &[SchemaItem]| {
            items
                .iter()
                .map(|it| {
                    (
                        it.id.clone(),
                        AliasImage {
                            source: it.name.clone(),
                            image: it.name.clone(),
                        },
                    )
                })
                .collect()
        };
        AliasMap {
            index: 1,
            concepts: ident(kb.concepts()),
            relations: ident(kb.relations()),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.concepts
            .values()
            .chain(self.relations.values())
            .all(|a| a.source == a.image)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("alias map serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Number of schema items whose images differ between two maps.
    pub fn name_differences(&self, other: &AliasMap) -> usize {
        let diff = |a: &BTreeMap<String, AliasImage>, b: &BTreeMap<String, AliasImage>| {
            a.iter()
                .filter(|(id, x)| b.get(*id).is_none_or(|y| y.image != x.image))
                .count()
        };
        diff(&self.concepts, &other.concepts) + diff(&self.relations, &other.relations)
    }
}

/// Surface forms an item may take: its name, then every alias that is not
/// claimed by another item of the same kind.
fn alias_pool<'a>(item: &'a SchemaItem, claimed: &HashMap<&str, usize>) -> Vec<&'a str> {
    let mut pool = vec![item.name.as_str()];
    for a in &item.aliases {
        let usable = !a.is_empty()
            && a.trim() == a
            && !a.contains(['(', ')'])
            && a != INSTANCE_OF
            && a != SUBCLASS_OF
            && claimed.get(a.as_str()).copied().unwrap_or(0) <= 1
            && !pool.contains(&a.as_str());
        if usable {
            pool.push(a);
        }
    }
    pool
}

/// How many items of one kind list each string as name or alias.
fn claims(items: &[SchemaItem]) -> HashMap<&str, usize> {
    let mut out: HashMap<&str, usize> = HashMap::new();
    for it in items {
        let forms: BTreeSet<&str> = std::iter::once(it.name.as_str())
            .chain(it.aliases.iter().map(String::as_str))
            .collect();
        for f in forms {
            *out.entry(f).or_default() += 1;
        }
    }
    out
}

fn item_rng(seed: u64, index: usize, kind: SchemaKind, id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    h.update(kind.as_str().as_bytes());
    h.update([0u8]);
    h.update(id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Draws the renaming for generated KB number `index` (1-based). Index 1 is
/// the source KB itself.
pub fn sample_alias_map(
    kb: &KnowledgeBase,
    index: usize,
    seed: u64,
) -> Result<AliasMap, AugmentError> {
    if index == 0 {
        return Err(AugmentError::BadIndex);
    }
    if index == 1 {
        return Ok(AliasMap::identity(kb));
    }
    let draw = |items: &[SchemaItem], kind: SchemaKind| {
        let claimed = claims(items);
        items
            .iter()
            .map(|it| {
                let pool = alias_pool(it, &claimed);
                let pick = item_rng(seed, index, kind, &it.id).gen_range(0..pool.len());
                (
                    it.id.clone(),
                    AliasImage {
                        source: it.name.clone(),
                        image: pool[pick].to_owned(),
                    },
                )
            })
            .collect()
    };
    Ok(AliasMap {
        index,
        concepts: draw(kb.concepts(), SchemaKind::Concept),
        relations: draw(kb.relations(), SchemaKind::Relation),
    })
}

/// The same KB with concepts and relations renamed; entities are untouched.
pub fn apply_alias_map(kb: &KnowledgeBase, m: &AliasMap) -> Result<KnowledgeBase, AugmentError> {
    let images = |items: &[SchemaItem], map: &BTreeMap<String, AliasImage>, kind| {
        items
            .iter()
            .map(|it| {
                map.get(&it.id)
                    .map(|a| a.image.clone())
                    .ok_or_else(|| AugmentError::Coverage {
                        kind,
                        id: it.id.clone(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let concepts = images(kb.concepts(), &m.concepts, "concept")?;
    let relations = images(kb.relations(), &m.relations, "relation")?;
    Ok(kb.with_schema_names(&concepts, &relations)?)
}

/// Replaces concept and relation arguments by their images; Find arguments
/// are entity names and stay as they are.
pub fn rewrite_program(p: &Program, m: &AliasMap) -> Result<Program, AugmentError> {
    let by_name = |map: &BTreeMap<String, AliasImage>| -> HashMap<String, String> {
        map.values()
            .map(|a| (a.source.clone(), a.image.clone()))
            .collect()
    };
    let concepts = by_name(&m.concepts);
    let relations = by_name(&m.relations);
    let mut out = p.clone();
    for call in &mut out.calls {
        let (table, kind) = match call.function.arg_kind() {
            ArgKind::Concept => (&concepts, "concept"),
            ArgKind::Relation => (&relations, "relation"),
            ArgKind::Entity | ArgKind::None => continue,
        };
        let image = table
            .get(call.arg())
            .ok_or_else(|| AugmentError::Unresolved {
                kind,
                name: call.arg().to_owned(),
            })?;
        call.arg = Some(image.clone());
    }
    Ok(out)
}

/// Input record: a question with its gold program on the source KB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub question: String,
    pub program: String,
}

/// Output record: one rewritten program per generated KB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub question: String,
    pub programs: Vec<String>,
}

pub fn read_data_records(path: &Path) -> Result<Vec<DataRecord>, AugmentError> {
    read_jsonl(path)
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<Vec<T>, AugmentError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AugmentError::Data {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    /// 1-based position in the input data.
    pub record: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerViolation {
    pub record: usize,
    pub kb_index: usize,
    pub program: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDifference {
    pub a: usize,
    pub b: usize,
    pub differing_names: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub seed: u64,
    pub n: usize,
    pub kb_files: Vec<String>,
    pub alias_map_digests: Vec<String>,
    pub alias_maps_file: String,
    pub data_file: String,
    pub records_in: usize,
    pub records_out: usize,
    pub programs_verified: usize,
    pub skipped: Vec<SkippedRecord>,
    pub violations: Vec<AnswerViolation>,
    pub pairwise_name_differences: Vec<PairDifference>,
}

pub const AUGMENTED_FILE: &str = "augmented.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ALIAS_MAPS_FILE: &str = "alias_maps.json";

pub fn kb_file_name(index: usize) -> String {
    format!("kb_{index:02}.json")
}

/// In-memory result of augmentation.
#[derive(Debug, Clone)]
pub struct Augmentation {
    pub maps: Vec<AliasMap>,
    pub kbs: Vec<KnowledgeBase>,
    pub records: Vec<AugmentedRecord>,
    pub skipped: Vec<SkippedRecord>,
    pub violations: Vec<AnswerViolation>,
    pub programs_verified: usize,
}

/// Builds `n` renamed KBs and rewrites every record, checking that each
/// rewritten program has the same answer on its KB as the original.
/// Records whose gold program does not run on `kb`, or whose answer
/// changes under some renaming, are left out and reported.
pub fn augment(
    kb: &KnowledgeBase,
    data: &[DataRecord],
    n: usize,
    seed: u64,
) -> Result<Augmentation, AugmentError> {
    if n == 0 {
        return Err(AugmentError::BadIndex);
    }
    let maps = (1..=n)
        .map(|i| sample_alias_map(kb, i, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let kbs = maps
        .iter()
        .map(|m| apply_alias_map(kb, m))
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut violations = Vec::new();
    let mut verified = 0;
    'records: for (ri, rec) in data.iter().enumerate() {
        let skip = |reason: String| {
            warn!(record = ri + 1, %reason, "skipping record");
            SkippedRecord {
                record: ri + 1,
                reason,
            }
        };
        let gold = match parse_program(&rec.program) {
            Ok(p) => p,
            Err(e) => {
                skipped.push(skip(format!("syntax error: {e}")));
                continue;
            }
        };
        let answer = match execute(kb, &gold) {
            Ok(d) => d,
            Err(e) => {
                skipped.push(skip(format!("execution error: {e}")));
                continue;
            }
        };
        let mut programs = Vec::with_capacity(n);
        let mut bad = false;
        for (m, kb_i) in maps.iter().zip(&kbs) {
            let p_i = match rewrite_program(&gold, m) {
                Ok(p) => p,
                Err(e) => {
                    skipped.push(skip(format!("rewrite failed: {e}")));
                    continue 'records;
                }
            };
            verified += 1;
            if execute(kb_i, &p_i).as_ref() != Ok(&answer) {
                violations.push(AnswerViolation {
                    record: ri + 1,
                    kb_index: m.index,
                    program: p_i.serialize(),
                });
                bad = true;
            }
            programs.push(p_i.serialize());
        }
        if bad {
            skipped.push(skip("answer changed under renaming".into()));
            continue;
        }
        records.push(AugmentedRecord {
            question: rec.question.clone(),
            programs,
        });
    }
    Ok(Augmentation {
        maps,
        kbs,
        records,
        skipped,
        violations,
        programs_verified: verified,
    })
}

/// Runs [`augment`] and writes the KB files, the augmented data, the alias
/// maps and a manifest into `out`.
pub fn augment_dataset(
    kb: &KnowledgeBase,
    data: &[DataRecord],
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<AugmentManifest, AugmentError> {
    let aug = augment(kb, data, n, seed)?;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let mut kb_files = Vec::with_capacity(n);
    for (i, kb_i) in aug.kbs.iter().enumerate() {
        let name = kb_file_name(i + 1);
        let path = out.join(&name);
        fs::write(&path, kb_i.to_json()).map_err(io_err(&path))?;
        kb_files.push(name);
    }

    let path = out.join(AUGMENTED_FILE);
    let mut buf = Vec::new();
    for rec in &aug.records {
        serde_json::to_writer(&mut buf, rec).expect("record serializes");
        buf.push(b'\n');
    }
    fs::write(&path, &buf).map_err(io_err(&path))?;

    let path = out.join(ALIAS_MAPS_FILE);
    let mut maps_json = serde_json::to_string_pretty(&aug.maps).expect("maps serialize");
    maps_json.push('\n');
    fs::write(&path, maps_json).map_err(io_err(&path))?;

    let mut pairs = Vec::new();
    for a in 0..aug.maps.len() {
        for b in a + 1..aug.maps.len() {
            pairs.push(PairDifference {
                a: a + 1,
                b: b + 1,
                differing_names: aug.maps[a].name_differences(&aug.maps[b]),
            });
        }
    }
    let manifest = AugmentManifest {
        seed,
        n,
        kb_files,
        alias_map_digests: aug.maps.iter().map(AliasMap::digest).collect(),
        alias_maps_file: ALIAS_MAPS_FILE.into(),
        data_file: AUGMENTED_FILE.into(),
        records_in: data.len(),
        records_out: aug.records.len(),
        programs_verified: aug.programs_verified,
        skipped: aug.skipped,
        violations: aug.violations,
        pairwise_name_differences: pairs,
    };
    let path = out.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(&mut f, &manifest).expect("manifest serializes");
    f.write_all(b"\n").map_err(io_err(&path))?;
    Ok(manifest)
}
