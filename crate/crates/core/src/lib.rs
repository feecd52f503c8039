//! Program induction over knowledge bases.
//!
//! The crate covers everything around the scoring model:
//!
//! * [`kb`]: loading and indexing a knowledge base of concepts, entities,
//!   relations and triples.
//! * [`kopl`]: the KoPL program language (parse, print, execute).
//! * [`decoder`]: enumeration of admissible next function chunks and beam
//!   search over a pluggable [`decoder::Scorer`].
//! * [`augment`]: generation of alias-renamed source KBs and rewritten
//!   programs.
//! * [`schema_data`]: the triple-completion corpus used to train a
//!   schema adapter.
//! * [`eval`]: F1 / Hit@1 / accuracy and the evaluation harness.

pub mod augment;
pub mod decoder;
pub mod eval;
pub mod kb;
pub mod kopl;
pub mod schema_data;

pub use kb::{load_kb, KnowledgeBase};
pub use kopl::{execute, parse_program, Denotation, Program};
