//! KoPL programs: a flat sequence of function chunks such as
//! `Find(Beatles) Relate(member) Count()`, executed on a branch stack.

mod exec;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use exec::{
    execute, execute_prefix, execute_prefix_with, execute_with, Denotation, ExecError, ExecOptions,
    ExecState,
};

/// Longest program accepted by the parser and grown by the decoder.
pub const MAX_PROGRAM_LEN: usize = 20;

/// What kind of argument a function takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArgKind {
    Entity,
    Relation,
    Concept,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Function {
    Find,
    FindAll,
    Relate,
    ReverseRelate,
    FilterConcept,
    And,
    Or,
    Argmax,
    Argmin,
    LT,
    LE,
    GT,
    GE,
    Count,
}

impl Function {
    pub const ALL: [Function; 14] = [
        Function::Find,
        Function::FindAll,
        Function::Relate,
        Function::ReverseRelate,
        Function::FilterConcept,
        Function::And,
        Function::Or,
        Function::Argmax,
        Function::Argmin,
        Function::LT,
        Function::LE,
        Function::GT,
        Function::GE,
        Function::Count,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Function::Find => "Find",
            Function::FindAll => "FindAll",
            Function::Relate => "Relate",
            Function::ReverseRelate => "ReverseRelate",
            Function::FilterConcept => "FilterConcept",
            Function::And => "And",
            Function::Or => "Or",
            Function::Argmax => "Argmax",
            Function::Argmin => "Argmin",
            Function::LT => "LT",
            Function::LE => "LE",
            Function::GT => "GT",
            Function::GE => "GE",
            Function::Count => "Count",
        }
    }

    pub fn from_name(name: &str) -> Option<Function> {
        Function::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn arg_kind(self) -> ArgKind {
        use Function::*;
        match self {
            Find => ArgKind::Entity,
            Relate | ReverseRelate | Argmax | Argmin | LT | LE | GT | GE => ArgKind::Relation,
            FilterConcept => ArgKind::Concept,
            FindAll | And | Or | Count => ArgKind::None,
        }
    }

    /// Number of branches consumed from the stack.
    pub fn pops(self) -> usize {
        use Function::*;
        match self {
            Find | FindAll => 0,
            And | Or => 2,
            _ => 1,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            Function::LT | Function::LE | Function::GT | Function::GE
        )
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error("empty program")]
    Empty,
    #[error("expected a function name at byte {0}")]
    ExpectedFunction(usize),
    #[error("unknown function {name:?} at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("expected '(' after {name} at byte {offset}")]
    ExpectedOpenParen { name: String, offset: usize },
    #[error("unbalanced parentheses: {name}( at byte {offset} is never closed")]
    Unclosed { name: String, offset: usize },
    #[error("nested '(' inside the argument of {name} at byte {offset}")]
    Nested { name: String, offset: usize },
    #[error("{0} requires {1} argument")]
    MissingArgument(Function, &'static str),
    #[error("{0} takes no argument, got {1:?}")]
    UnexpectedArgument(Function, String),
    #[error("argument {0:?} contains a parenthesis")]
    BadArgument(String),
    #[error("program has {0} calls, more than the maximum of {MAX_PROGRAM_LEN}")]
    TooLong(usize),
}

/// One function chunk, e.g. `Relate(member)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FunctionCall {
    pub function: Function,
    pub arg: Option<String>,
}

impl FunctionCall {
    /// Checks the argument against the function signature.
    pub fn new(function: Function, arg: Option<&str>) -> Result<Self, SyntaxError> {
        let arg = arg.map(str::trim).filter(|a| !a.is_empty());
        match (function.arg_kind(), arg) {
            (ArgKind::None, None) => Ok(FunctionCall {
                function,
                arg: None,
            }),
            (ArgKind::None, Some(a)) => Err(SyntaxError::UnexpectedArgument(function, a.into())),
            (kind, None) => Err(SyntaxError::MissingArgument(
                function,
                match kind {
                    ArgKind::Entity => "an entity",
                    ArgKind::Concept => "a concept",
                    _ => "a relation",
                },
            )),
            (_, Some(a)) if a.contains(['(', ')']) => Err(SyntaxError::BadArgument(a.into())),
            (_, Some(a)) => Ok(FunctionCall {
                function,
                arg: Some(a.to_owned()),
            }),
        }
    }

    /// Shorthand for tests and builders; panics on a signature mismatch.
    pub fn of(function: Function, arg: &str) -> Self {
        let arg = (!arg.is_empty()).then_some(arg);
        Self::new(function, arg).expect("valid function call")
    }

    pub fn arg(&self) -> &str {
        self.arg.as_deref().unwrap_or("")
    }
}

impl fmt::Display for FunctionCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.function, self.arg())
    }
}

/// A KoPL program.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Program {
    pub calls: Vec<FunctionCall>,
}

impl Program {
    pub fn new(calls: Vec<FunctionCall>) -> Self {
        Program { calls }
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    /// Like [`parse_program`] but accepts the empty prefix.
    pub fn parse_prefix(text: &str) -> Result<Program, SyntaxError> {
        if text.trim().is_empty() {
            return Ok(Program::default());
        }
        parse_program(text)
    }

    pub fn with(&self, call: FunctionCall) -> Program {
        let mut calls = Vec::with_capacity(self.calls.len() + 1);
        calls.extend_from_slice(&self.calls);
        calls.push(call);
        Program { calls }
    }

    /// Canonical text: chunks separated by single spaces.
    pub fn serialize(&self) -> String {
        self.to_string()
    }

    pub fn is_prefix_of(&self, other: &Program) -> bool {
        other.calls.starts_with(&self.calls)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, call) in self.calls.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{call}")?;
        }
        Ok(())
    }
}

impl FromStr for Program {
    type Err = SyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_program(s)
    }
}

impl Serialize for Program {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Program {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_program(&text).map_err(serde::de::Error::custom)
    }
}

/// Parse program text of the form `Func(arg) Func() ...`.
///
/// Whitespace between chunks and around arguments is not significant;
/// arguments may hold any character except parentheses.
pub fn parse_program(text: &str) -> Result<Program, SyntaxError> {
    let bytes = text.as_bytes();
    let mut calls = Vec::new();
    let mut i = 0;
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i == bytes.len() {
            break;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
            i += 1;
        }
        if i == start {
            return Err(SyntaxError::ExpectedFunction(start));
        }
        let name = &text[start..i];
        let function = Function::from_name(name).ok_or_else(|| SyntaxError::UnknownFunction {
            name: name.to_owned(),
            offset: start,
        })?;
        if bytes.get(i) != Some(&b'(') {
            return Err(SyntaxError::ExpectedOpenParen {
                name: name.to_owned(),
                offset: i,
            });
        }
        let open = i;
        i += 1;
        let arg_start = i;
        loop {
            match bytes.get(i) {
                None => {
                    return Err(SyntaxError::Unclosed {
                        name: name.to_owned(),
                        offset: open,
                    })
                }
                Some(b')') => break,
                Some(b'(') => {
                    return Err(SyntaxError::Nested {
                        name: name.to_owned(),
                        offset: i,
                    })
                }
                Some(_) => i += 1,
            }
        }
        let arg = &text[arg_start..i];
        i += 1;
        calls.push(FunctionCall::new(function, Some(arg))?);
    }
    if calls.is_empty() {
        return Err(SyntaxError::Empty);
    }
    if calls.len() > MAX_PROGRAM_LEN {
        return Err(SyntaxError::TooLong(calls.len()));
    }
    Ok(Program { calls })
}
