//! The program language: a query over one simulator run with up to three
//! parameter clauses.
//!
//! ```text
//! program := query "(" "four_box_model" "(" [clause {"," clause}] ")" "," variable ")"
//! query   := "FinalValue" | "ChangeSign" | "IncreaseOf"
//! clause  := ("SetTo" | "IncreaseBy") "(" param "," number ")"
//! ```
//!
//! Names are case-sensitive. The canonical printed form has no whitespace.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const RUN_FUNCTION: &str = "four_box_model";
pub const MAX_CLAUSES: usize = 3;

macro_rules! closed_names {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn names() -> Vec<String> {
                Self::ALL.iter().map(|v| v.name().to_string()).collect()
            }
        }

        impl FromStr for $name {
            type Err = ();

            fn from_str(s: &str) -> Result<Self, ()> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(()),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(|_| {
                    serde::de::Error::custom(format!(
                        "unknown {} `{s}`",
                        stringify!($name).to_lowercase()
                    ))
                })
            }
        }
    };
}

closed_names!(
    /// Query function applied to a run.
    Query {
        FinalValue => "FinalValue",
        ChangeSign => "ChangeSign",
        IncreaseOf => "IncreaseOf",
    }
);

closed_names!(
    /// Output series a query can read.
    Variable {
        MN => "M_n",
        SNorth => "S_north",
        SSouth => "S_south",
        SLow => "S_low",
        SDeep => "S_deep",
        TLow => "T_low",
        DLow => "D_low",
    }
);

closed_names!(
    /// Overridable simulator parameter.
    Param {
        N => "N",
        Fwn => "Fwn",
        Fws => "Fws",
        MEk => "M_ek",
        DLow0 => "D_low0",
        Epsilon => "epsilon",
    }
);

closed_names!(
    ClauseKind {
        SetTo => "SetTo",
        IncreaseBy => "IncreaseBy",
    }
);

impl Variable {
    pub fn unit(self) -> &'static str {
        match self {
            Variable::MN => "m³/s",
            Variable::SNorth | Variable::SSouth | Variable::SLow | Variable::SDeep => "psu",
            Variable::TLow => "°C",
            Variable::DLow => "m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub kind: ClauseKind,
    pub param: Param,
    pub value: f64,
}

impl Clause {
    pub fn set_to(param: Param, value: f64) -> Self {
        Clause {
            kind: ClauseKind::SetTo,
            param,
            value,
        }
    }

    pub fn increase_by(param: Param, value: f64) -> Self {
        Clause {
            kind: ClauseKind::IncreaseBy,
            param,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunExpr {
    pub clauses: Vec<Clause>,
}

/// A parsed program. Serializes as its canonical text.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub query: Query,
    pub run: RunExpr,
    pub variable: Variable,
}

impl Program {
    pub fn new(query: Query, clauses: Vec<Clause>, variable: Variable) -> Self {
        Program {
            query,
            run: RunExpr { clauses },
            variable,
        }
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.run.clauses
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_program(self))
    }
}

impl FromStr for Program {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, ParseError> {
        parse(s)
    }
}

impl Serialize for Program {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&print_program(self))
    }
}

impl<'de> Deserialize<'de> for Program {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A broken program invariant.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "rule", content = "detail")]
pub enum Violation {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("{0} clauses given, at most {MAX_CLAUSES} allowed")]
    TooManyClauses(usize),
    #[error("parameter {0} appears in more than one clause")]
    DuplicateParam(Param),
    #[error("N must be a positive integer, got {0}")]
    NonIntegerSteps(f64),
    #[error("value for {0} is not finite")]
    NonFiniteValue(Param),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: expected {}, found {found}", .expected.join(" | "))]
    Syntax {
        position: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("invalid program at position {position}: {violation}")]
    Validation {
        position: usize,
        violation: Violation,
        expected: Vec<String>,
    },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { position, .. } | ParseError::Validation { position, .. } => {
                *position
            }
        }
    }

    pub fn expected(&self) -> &[String] {
        match self {
            ParseError::Syntax { expected, .. } | ParseError::Validation { expected, .. } => {
                expected
            }
        }
    }
}

/// Shortest text that parses back to exactly `value`: the plain decimal or
/// the exponent form, whichever is shorter (plain on ties).
/// Shortest round-trippable rendering. Magnitudes in [1e-3, 1e6) always
/// print positionally so step counts and fluxes read naturally; outside that
/// band the shorter of positional and scientific wins.
pub fn format_number(value: f64) -> String {
    let plain = format!("{value}");
    let magnitude = value.abs();
    if value == 0.0 || (1e-3..1e6).contains(&magnitude) {
        return plain;
    }
    let exp = format!("{value:e}");
    if exp.len() < plain.len() {
        exp
    } else {
        plain
    }
}

pub fn print_program(p: &Program) -> String {
    let clauses: Vec<String> = p
        .run
        .clauses
        .iter()
        .map(|c| format!("{}({},{})", c.kind, c.param, format_number(c.value)))
        .collect();
    format!(
        "{}({RUN_FUNCTION}({}),{})",
        p.query,
        clauses.join(","),
        p.variable
    )
}

pub fn validate(p: &Program) -> Vec<Violation> {
    let mut out = Vec::new();
    let clauses = &p.run.clauses;
    if clauses.len() > MAX_CLAUSES {
        out.push(Violation::TooManyClauses(clauses.len()));
    }
    for (i, c) in clauses.iter().enumerate() {
        if let Some(v) = clause_violation(c) {
            out.push(v);
        }
        if clauses[..i].iter().any(|prev| prev.param == c.param)
            && !out.contains(&Violation::DuplicateParam(c.param))
        {
            out.push(Violation::DuplicateParam(c.param));
        }
    }
    out
}

fn clause_violation(c: &Clause) -> Option<Violation> {
    if !c.value.is_finite() {
        return Some(Violation::NonFiniteValue(c.param));
    }
    // IncreaseBy(N, d) only needs to land on a valid step count once
    // resolved; SetTo(N, v) must itself be one.
    if c.param == Param::N {
        let integral = c.value.fract() == 0.0;
        let ok = match c.kind {
            ClauseKind::SetTo => integral && c.value >= 1.0,
            ClauseKind::IncreaseBy => integral,
        };
        if !ok {
            return Some(Violation::NonIntegerSteps(c.value));
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LParen,
    RParen,
    Comma,
    Invalid(char),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(n) => format!("number {n}"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Invalid(c) => format!("character `{c}`"),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Vec<(usize, Tok)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        match c {
            b'(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            b',' => {
                out.push((start, Tok::Comma));
                i += 1;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
            }
            c if c.is_ascii_digit() || c == b'.' || c == b'-' || c == b'+' => {
                let end = scan_number(bytes, i);
                match (end > i).then(|| text[i..end].parse::<f64>()) {
                    Some(Ok(v)) => {
                        out.push((start, Tok::Number(v)));
                        i = end;
                    }
                    _ => {
                        out.push((start, Tok::Invalid(c as char)));
                        return out;
                    }
                }
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                out.push((start, Tok::Invalid(ch)));
                return out;
            }
        }
    }
    out.push((text.len(), Tok::End));
    out
}

/// End of the numeric literal starting at `i`, or `i` if none.
fn scan_number(b: &[u8], mut i: usize) -> usize {
    let start = i;
    if i < b.len() && (b[i] == b'-' || b[i] == b'+') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i > int_start;
    if i < b.len() && b[i] == b'.' {
        let frac_start = i + 1;
        let mut j = frac_start;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        if digits || j > frac_start {
            digits = true;
            i = j;
        }
    }
    if !digits {
        return start;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'-' || b[j] == b'+') {
            j += 1;
        }
        let exp_start = j;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            i = j;
        }
    }
    i
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &(usize, Tok) {
        &self.toks[self.pos.min(self.toks.len() - 1)]
    }

    fn bump(&mut self) -> (usize, Tok) {
        let t = self.peek().clone();
        if self.pos < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax(&self, expected: &[&str]) -> ParseError {
        let (position, tok) = self.peek();
        ParseError::Syntax {
            position: *position,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, shown: &str) -> Result<usize, ParseError> {
        if self.peek().1 == tok {
            Ok(self.bump().0)
        } else {
            Err(self.syntax(&[shown]))
        }
    }

    fn ident(&mut self, expected: &[String]) -> Result<(usize, String), ParseError> {
        match self.peek().clone() {
            (at, Tok::Ident(name)) => {
                self.bump();
                Ok((at, name))
            }
            _ => {
                let shown: Vec<&str> = expected.iter().map(String::as_str).collect();
                Err(self.syntax(&shown))
            }
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        match self.peek().1 {
            Tok::Number(v) => {
                self.bump();
                Ok(v)
            }
            _ => Err(self.syntax(&["number"])),
        }
    }

    fn named<T: FromStr>(
        &mut self,
        expected: Vec<String>,
        violation: fn(String) -> Violation,
    ) -> Result<(usize, T), ParseError> {
        let (at, name) = self.ident(&expected)?;
        name.parse()
            .map(|v| (at, v))
            .map_err(|_| ParseError::Validation {
                position: at,
                violation: violation(name),
                expected,
            })
    }

    fn program(&mut self) -> Result<(Program, Vec<usize>), ParseError> {
        let (_, query) = self.named::<Query>(Query::names(), Violation::UnknownFunction)?;
        self.expect(Tok::LParen, "(")?;
        let run_expected = vec![RUN_FUNCTION.to_string()];
        let (at, name) = self.ident(&run_expected)?;
        if name != RUN_FUNCTION {
            return Err(ParseError::Validation {
                position: at,
                violation: Violation::UnknownFunction(name),
                expected: run_expected,
            });
        }
        self.expect(Tok::LParen, "(")?;
        let mut clauses = Vec::new();
        let mut positions = Vec::new();
        if self.peek().1 != Tok::RParen {
            loop {
                let (at, clause) = self.clause(clauses.is_empty())?;
                positions.push(at);
                clauses.push(clause);
                match self.peek().1 {
                    Tok::Comma => {
                        self.bump();
                    }
                    Tok::RParen => break,
                    _ => return Err(self.syntax(&[",", ")"])),
                }
            }
        }
        self.expect(Tok::RParen, ")")?;
        self.expect(Tok::Comma, ",")?;
        let (_, variable) =
            self.named::<Variable>(Variable::names(), Violation::UnknownVariable)?;
        self.expect(Tok::RParen, ")")?;
        if self.peek().1 != Tok::End {
            return Err(self.syntax(&["end of input"]));
        }
        Ok((Program::new(query, clauses, variable), positions))
    }

    fn clause(&mut self, first: bool) -> Result<(usize, Clause), ParseError> {
        let mut expected = ClauseKind::names();
        if first {
            expected.push(")".into());
        }
        let (at, kind) = self.named::<ClauseKind>(expected, Violation::UnknownFunction)?;
        self.expect(Tok::LParen, "(")?;
        let (_, param) = self.named::<Param>(Param::names(), Violation::UnknownParam)?;
        self.expect(Tok::Comma, ",")?;
        let value = self.number()?;
        self.expect(Tok::RParen, ")")?;
        Ok((at, Clause { kind, param, value }))
    }
}

/// Parses and validates program text.
pub fn parse(text: &str) -> Result<Program, ParseError> {
    let mut parser = Parser {
        toks: lex(text),
        pos: 0,
    };
    let (program, positions) = parser.program()?;
    for (i, clause) in program.run.clauses.iter().enumerate() {
        let position = positions[i];
        if i == MAX_CLAUSES {
            return Err(ParseError::Validation {
                position,
                violation: Violation::TooManyClauses(program.run.clauses.len()),
                expected: vec![")".into()],
            });
        }
        if program.run.clauses[..i]
            .iter()
            .any(|c| c.param == clause.param)
        {
            let used: Vec<Param> = program.run.clauses[..i].iter().map(|c| c.param).collect();
            return Err(ParseError::Validation {
                position,
                violation: Violation::DuplicateParam(clause.param),
                expected: Param::ALL
                    .iter()
                    .filter(|p| !used.contains(p))
                    .map(|p| p.name().to_string())
                    .collect(),
            });
        }
        if let Some(violation) = clause_violation(clause) {
            return Err(ParseError::Validation {
                position,
                violation,
                expected: vec!["positive integer".into()],
            });
        }
    }
    Ok(program)
}
