//! Question forms: templates with parameter, number and variable slots, the
//! synonym groups they admit, and the programs they build.
//!
//! [`Registry::instantiate`] renders a question and its program from a
//! binding; [`Registry::match_question`] inverts it (case-insensitive on
//! words, exact on numbers); [`Registry::canonical_question`] renders a
//! program with every synonym at index 0.
//!
//! The forms are pairwise disjoint as text languages, so a question matches
//! at most one form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use regex::{Regex, RegexBuilder};
use serde::Serialize;
use thiserror::Error;

use crate::dsl::{format_number, Clause, ClauseKind, Param, Program, Query, Variable, MAX_CLAUSES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QformError {
    #[error("unknown question form {0}")]
    UnknownForm(u8),
    #[error("invalid binding for form {form}: {reason}")]
    InvalidBinding { form: u8, reason: String },
    #[error("question does not match any known form")]
    NoMatch,
    #[error("no question form expresses `{0}`")]
    NotExpressible(String),
}

/// Clause-level parameters (everything except the step count).
pub const CLAUSE_PARAMS: &[Param] = &[
    Param::Fwn,
    Param::Fws,
    Param::MEk,
    Param::DLow0,
    Param::Epsilon,
];

/// Interchangeable phrasings of each parameter; index 0 is the symbol.
pub fn param_phrases(param: Param) -> &'static [&'static str] {
    match param {
        Param::N => &["N"],
        Param::Fwn => &[
            "Fwn",
            "the freshwater flux in the northern ocean",
            "the northern freshwater flux",
        ],
        Param::Fws => &[
            "Fws",
            "the freshwater flux in the southern ocean",
            "the southern freshwater flux",
        ],
        Param::MEk => &["M_ek", "the Ekman transport", "the wind-driven Ekman flow"],
        Param::DLow0 => &[
            "D_low0",
            "the initial depth of the low latitude box",
            "the starting low box depth",
        ],
        Param::Epsilon => &[
            "epsilon",
            "the overturning friction",
            "the friction coefficient",
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    Text(&'static str),
    /// Synonym group; index 0 is canonical.
    Synonyms(&'static [&'static str]),
    /// Phrase of the bound variable.
    Variable,
    /// Step-count number slot.
    Steps,
    /// The clause list, joined as `A`, `A and B` or `A, B, and C`.
    Clauses,
}

/// One question template.
#[derive(Debug, Clone)]
pub struct QuestionForm {
    pub id: u8,
    pub query: Query,
    pub clause_kind: ClauseKind,
    /// Clause phrasing with `{p}` and `{v}` placeholders.
    pub clause_template: &'static str,
    pub clause_counts: RangeInclusive<usize>,
    /// Whether the program starts with `SetTo(N, steps)` from the step slot.
    pub leading_steps: bool,
    pub params: &'static [Param],
    /// How many entries of [`param_phrases`] the clauses may use.
    pub param_variants: usize,
    /// Admissible variables with their phrase in this form.
    pub variables: &'static [(Variable, &'static str)],
    pub pieces: &'static [Piece],
}

impl QuestionForm {
    pub fn max_clauses(&self) -> usize {
        *self.clause_counts.end() + usize::from(self.leading_steps)
    }

    /// Forms whose clause count varies from question to question.
    pub fn is_multi_clause(&self) -> bool {
        self.clause_counts.start() != self.clause_counts.end()
    }

    pub fn synonym_groups(&self) -> Vec<&'static [&'static str]> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Synonyms(g) => Some(*g),
                _ => None,
            })
            .collect()
    }

    /// Number of distinct question shapes ignoring numeric values: synonym
    /// choices × parameter phrasings × ordered parameter selections ×
    /// variable choices, summed over clause counts.
    pub fn variant_count(&self) -> u64 {
        let groups: u64 = self
            .synonym_groups()
            .iter()
            .map(|g| g.len() as u64)
            .product();
        let vars = self.variables.len() as u64;
        let n = self.params.len() as u64;
        let phr = self.param_variants as u64;
        self.clause_counts
            .clone()
            .map(|k| {
                let ordered: u64 = (0..k as u64).map(|i| n.saturating_sub(i)).product();
                ordered * phr.pow(k as u32)
            })
            .sum::<u64>()
            * groups
            * vars
    }

    fn phrase_for(&self, variable: Variable) -> Option<&'static str> {
        self.variables
            .iter()
            .find(|(v, _)| *v == variable)
            .map(|(_, p)| *p)
    }
}

/// Slot values for one instantiation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Binding {
    pub steps: Option<f64>,
    pub clauses: Vec<(Param, f64)>,
    pub variable: Variable,
}

/// Index into every synonym group (in template order) and, per clause, into
/// that parameter's phrasings. Empty vectors mean "all canonical".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SynonymChoice {
    pub groups: Vec<usize>,
    pub param_phrases: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionMatch {
    pub form_id: u8,
    pub binding: Binding,
    pub choice: SynonymChoice,
    pub program: Program,
}

use Piece::*;

const IF_I_SET: &[&str] = &["If I set", "Setting", "Suppose I set"];
const IF_I_SET_SHORT: &[&str] = &["If I set", "Setting"];

fn registry_forms() -> Vec<QuestionForm> {
    let m_n: &'static [(Variable, &'static str)] = &[(Variable::MN, "M_n")];
    vec![
        QuestionForm {
            id: 1,
            query: Query::FinalValue,
            clause_kind: ClauseKind::SetTo,
            clause_template: "{p} is {v}",
            clause_counts: 1..=1,
            leading_steps: true,
            params: CLAUSE_PARAMS,
            param_variants: 1,
            variables: m_n,
            pieces: &[
                Text("What is the value of M_n at time step "),
                Steps,
                Text(" if "),
                Clauses,
                Text("?"),
            ],
        },
        QuestionForm {
            id: 2,
            query: Query::ChangeSign,
            clause_kind: ClauseKind::SetTo,
            clause_template: "{p} is {v}",
            clause_counts: 2..=2,
            leading_steps: false,
            params: CLAUSE_PARAMS,
            param_variants: 1,
            variables: m_n,
            pieces: &[Text("If "), Clauses, Text(", does the AMOC collapse?")],
        },
        QuestionForm {
            id: 3,
            query: Query::FinalValue,
            clause_kind: ClauseKind::SetTo,
            clause_template: "{p} is {v}",
            clause_counts: 1..=1,
            leading_steps: false,
            params: CLAUSE_PARAMS,
            param_variants: 1,
            variables: m_n,
            pieces: &[
                Text("What is the final value of the AMOC when "),
                Clauses,
                Text("?"),
            ],
        },
        QuestionForm {
            id: 4,
            query: Query::ChangeSign,
            clause_kind: ClauseKind::SetTo,
            clause_template: "{p} collapse the AMOC at {v}",
            clause_counts: 1..=1,
            leading_steps: false,
            params: CLAUSE_PARAMS,
            param_variants: 1,
            variables: m_n,
            pieces: &[Text("Does "), Clauses, Text("?")],
        },
        QuestionForm {
            id: 5,
            query: Query::IncreaseOf,
            clause_kind: ClauseKind::SetTo,
            clause_template: "{p} is {v}",
            clause_counts: 1..=1,
            leading_steps: false,
            params: CLAUSE_PARAMS,
            param_variants: 1,
            variables: &[
                (Variable::SSouth, "salinity in the southern box"),
                (Variable::SLow, "salinity in the low latitude box"),
                (Variable::SDeep, "salinity in the deep box"),
                (Variable::DLow, "the depth of the low latitude box"),
            ],
            pieces: &[
                Text("If "),
                Clauses,
                Text(", will "),
                Variable,
                Text(" increase?"),
            ],
        },
        QuestionForm {
            id: 6,
            query: Query::IncreaseOf,
            clause_kind: ClauseKind::IncreaseBy,
            clause_template: "{p} by {v}",
            clause_counts: 1..=1,
            leading_steps: false,
            params: CLAUSE_PARAMS,
            param_variants: 1,
            variables: m_n,
            pieces: &[
                Text("If I increase "),
                Clauses,
                Text(", will M_n increase?"),
            ],
        },
        QuestionForm {
            id: 7,
            query: Query::IncreaseOf,
            clause_kind: ClauseKind::IncreaseBy,
            clause_template: "{p} by {v}",
            clause_counts: 1..=1,
            leading_steps: false,
            params: CLAUSE_PARAMS,
            param_variants: 1,
            variables: &[(Variable::SNorth, "salinity in the northern box")],
            pieces: &[
                Text("If I increase "),
                Clauses,
                Text(", will salinity in the northern box increase?"),
            ],
        },
        QuestionForm {
            id: 8,
            query: Query::IncreaseOf,
            clause_kind: ClauseKind::SetTo,
            clause_template: "{p} to {v}",
            clause_counts: 1..=MAX_CLAUSES,
            leading_steps: false,
            params: CLAUSE_PARAMS,
            param_variants: 3,
            variables: m_n,
            pieces: &[
                Synonyms(IF_I_SET),
                Text(" "),
                Clauses,
                Text(", "),
                Synonyms(&[
                    "will M_n increase?",
                    "will the AMOC increase?",
                    "will the AMOC strengthen?",
                    "does M_n increase?",
                ]),
            ],
        },
        QuestionForm {
            id: 9,
            query: Query::IncreaseOf,
            clause_kind: ClauseKind::IncreaseBy,
            clause_template: "{p} by {v}",
            clause_counts: 1..=MAX_CLAUSES,
            leading_steps: false,
            params: CLAUSE_PARAMS,
            param_variants: 1,
            variables: &[
                (Variable::MN, "the AMOC"),
                (Variable::SNorth, "the salinity of the northern box"),
                (Variable::TLow, "temperature in the low latitude box"),
            ],
            pieces: &[
                Synonyms(&["By increasing", "If I increase"]),
                Text(" "),
                Clauses,
                Text(", will "),
                Variable,
                Text(" increase?"),
            ],
        },
        QuestionForm {
            id: 10,
            query: Query::ChangeSign,
            clause_kind: ClauseKind::SetTo,
            clause_template: "{p} to {v}",
            clause_counts: 1..=MAX_CLAUSES,
            leading_steps: false,
            params: CLAUSE_PARAMS,
            param_variants: 2,
            variables: m_n,
            pieces: &[
                Synonyms(IF_I_SET_SHORT),
                Text(" "),
                Clauses,
                Text(", does the AMOC collapse?"),
            ],
        },
    ]
}

fn join_clauses(parts: &[String]) -> String {
    match parts {
        [] => String::new(),
        [a] => a.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

const NUMBER_RE: &str = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?";

struct FormMatcher {
    form_idx: usize,
    clause_count: usize,
    regex: Regex,
}

/// The immutable form registry.
pub struct Registry {
    forms: Vec<QuestionForm>,
    matchers: Vec<FormMatcher>,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::new()
    }
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("forms", &self.forms.len())
            .finish()
    }
}

fn alternation<'a>(phrases: impl IntoIterator<Item = &'a str>) -> String {
    let mut v: Vec<&str> = phrases.into_iter().collect();
    v.sort_by_key(|p| std::cmp::Reverse(p.len()));
    v.iter()
        .map(|p| regex::escape(p))
        .collect::<Vec<_>>()
        .join("|")
}

impl Registry {
    pub fn new() -> Self {
        let forms = registry_forms();
        let mut matchers = Vec::new();
        for (form_idx, form) in forms.iter().enumerate() {
            for clause_count in form.clause_counts.clone() {
                matchers.push(FormMatcher {
                    form_idx,
                    clause_count,
                    regex: build_regex(form, clause_count),
                });
            }
        }
        Registry { forms, matchers }
    }

    pub fn forms(&self) -> &[QuestionForm] {
        &self.forms
    }

    pub fn form(&self, id: u8) -> Result<&QuestionForm, QformError> {
        self.forms
            .iter()
            .find(|f| f.id == id)
            .ok_or(QformError::UnknownForm(id))
    }

    pub fn instantiate(
        &self,
        form_id: u8,
        binding: &Binding,
        choice: &SynonymChoice,
    ) -> Result<(String, Program), QformError> {
        render(self.form(form_id)?, binding, choice)
    }

    pub fn match_question(&self, question: &str) -> Result<QuestionMatch, QformError> {
        let normalized = question.split_whitespace().collect::<Vec<_>>().join(" ");
        for m in &self.matchers {
            let Some(caps) = m.regex.captures(&normalized) else {
                continue;
            };
            let form = &self.forms[m.form_idx];
            if let Some(found) = decode_captures(form, m.clause_count, &caps) {
                return Ok(found);
            }
        }
        Err(QformError::NoMatch)
    }

    /// Binding that makes `form` build exactly `program`, if any.
    pub fn binding_for(&self, form: &QuestionForm, program: &Program) -> Option<Binding> {
        if program.query != form.query || form.phrase_for(program.variable).is_none() {
            return None;
        }
        let mut clauses = program.clauses();
        let mut steps = None;
        if form.leading_steps {
            let (first, rest) = clauses.split_first()?;
            if first.kind != ClauseKind::SetTo || first.param != Param::N {
                return None;
            }
            steps = Some(first.value);
            clauses = rest;
        }
        if clauses.iter().any(|c| c.kind != form.clause_kind) {
            return None;
        }
        let binding = Binding {
            steps,
            clauses: clauses.iter().map(|c| (c.param, c.value)).collect(),
            variable: program.variable,
        };
        check_binding(form, &binding).ok()?;
        Some(binding)
    }

    pub fn canonical_question(&self, program: &Program) -> Result<String, QformError> {
        for form in &self.forms {
            if let Some(binding) = self.binding_for(form, program) {
                return self
                    .instantiate(form.id, &binding, &SynonymChoice::default())
                    .map(|(q, _)| q);
            }
        }
        Err(QformError::NotExpressible(program.to_string()))
    }

    /// JSON description of every form.
    pub fn export(&self) -> Vec<FormExport> {
        self.forms.iter().map(export_form).collect()
    }
}

/// Renders `binding` through `form` with the chosen synonyms.
pub fn render(
    form: &QuestionForm,
    binding: &Binding,
    choice: &SynonymChoice,
) -> Result<(String, Program), QformError> {
    check_binding(form, binding)?;
    let invalid = |reason: String| QformError::InvalidBinding {
        form: form.id,
        reason,
    };
    let groups = form.synonym_groups();
    let group_choice = |i: usize| choice.groups.get(i).copied().unwrap_or(0);
    if !choice.groups.is_empty() && choice.groups.len() != groups.len() {
        return Err(invalid(format!(
            "{} synonym indices given, form has {} groups",
            choice.groups.len(),
            groups.len()
        )));
    }
    if !choice.param_phrases.is_empty() && choice.param_phrases.len() != binding.clauses.len() {
        return Err(invalid(
            "one parameter phrasing index per clause required".into(),
        ));
    }

    let mut question = String::new();
    let mut group = 0;
    for piece in form.pieces {
        match piece {
            Text(t) => question.push_str(t),
            Synonyms(g) => {
                let i = group_choice(group);
                let phrase = g
                    .get(i)
                    .ok_or_else(|| invalid(format!("synonym index {i} out of range")))?;
                question.push_str(phrase);
                group += 1;
            }
            Variable => question.push_str(form.phrase_for(binding.variable).expect("checked")),
            Steps => question.push_str(&format_number(binding.steps.expect("checked"))),
            Clauses => {
                let mut parts = Vec::with_capacity(binding.clauses.len());
                for (i, (param, value)) in binding.clauses.iter().enumerate() {
                    let k = choice.param_phrases.get(i).copied().unwrap_or(0);
                    if k >= form.param_variants {
                        return Err(invalid(format!(
                            "phrasing index {k} out of range for {param}"
                        )));
                    }
                    let phrase = param_phrases(*param)[k];
                    parts.push(
                        form.clause_template
                            .replace("{p}", phrase)
                            .replace("{v}", &format_number(*value)),
                    );
                }
                question.push_str(&join_clauses(&parts));
            }
        }
    }
    Ok((question, build_program(form, binding)))
}

fn value_ok(kind: ClauseKind, v: f64) -> bool {
    v.is_finite()
        && match kind {
            ClauseKind::SetTo => v >= 0.0,
            ClauseKind::IncreaseBy => v > 0.0,
        }
}

fn check_binding(form: &QuestionForm, b: &Binding) -> Result<(), QformError> {
    let invalid = |reason: String| {
        Err(QformError::InvalidBinding {
            form: form.id,
            reason,
        })
    };
    match (form.leading_steps, b.steps) {
        (true, None) => return invalid("step count slot is required".into()),
        (false, Some(_)) => return invalid("form has no step count slot".into()),
        (true, Some(n)) if !(n >= 1.0 && n.fract() == 0.0) => {
            return invalid(format!("step count must be a positive integer, got {n}"))
        }
        _ => {}
    }
    if !form.clause_counts.contains(&b.clauses.len()) {
        return invalid(format!(
            "{} clauses given, form takes {}..={}",
            b.clauses.len(),
            form.clause_counts.start(),
            form.clause_counts.end()
        ));
    }
    for (i, (param, value)) in b.clauses.iter().enumerate() {
        if !form.params.contains(param) {
            return invalid(format!("parameter {param} not admissible"));
        }
        if b.clauses[..i].iter().any(|(p, _)| p == param) {
            return invalid(format!("parameter {param} bound twice"));
        }
        if !value_ok(form.clause_kind, *value) {
            return invalid(format!("value {value} not admissible for {param}"));
        }
    }
    if form.phrase_for(b.variable).is_none() {
        return invalid(format!("variable {} not admissible", b.variable));
    }
    Ok(())
}

fn build_program(form: &QuestionForm, b: &Binding) -> Program {
    let mut clauses = Vec::with_capacity(form.max_clauses());
    if let Some(n) = b.steps {
        clauses.push(Clause::set_to(Param::N, n));
    }
    clauses.extend(b.clauses.iter().map(|&(param, value)| Clause {
        kind: form.clause_kind,
        param,
        value,
    }));
    Program::new(form.query, clauses, b.variable)
}

fn build_regex(form: &QuestionForm, clause_count: usize) -> Regex {
    let params = alternation(
        form.params
            .iter()
            .flat_map(|p| param_phrases(*p)[..form.param_variants].iter().copied()),
    );
    let clause = |i: usize| {
        let t = regex::escape(form.clause_template);
        t.replace(r"\{p\}", &format!("(?P<p{i}>{params})"))
            .replace(r"\{v\}", &format!("(?P<v{i}>{NUMBER_RE})"))
    };
    let mut re = String::from("^");
    let mut group = 0;
    for piece in form.pieces {
        match piece {
            Text(t) => re.push_str(&regex::escape(t)),
            Synonyms(g) => {
                let _ = write!(re, "(?P<s{group}>{})", alternation(g.iter().copied()));
                group += 1;
            }
            Variable => {
                let _ = write!(
                    re,
                    "(?P<var>{})",
                    alternation(form.variables.iter().map(|(_, p)| *p))
                );
            }
            Steps => {
                let _ = write!(re, "(?P<steps>{NUMBER_RE})");
            }
            Clauses => {
                let parts: Vec<String> = (0..clause_count).map(clause).collect();
                re.push_str(&match parts.as_slice() {
                    [a] => a.clone(),
                    [a, b] => format!("{a} and {b}"),
                    [init @ .., last] => format!("{}, and {last}", init.join(", ")),
                    [] => String::new(),
                });
            }
        }
    }
    re.push('$');
    RegexBuilder::new(&re)
        .case_insensitive(true)
        .build()
        .expect("form regex compiles")
}

fn index_ci(options: &[&str], found: &str) -> Option<usize> {
    options.iter().position(|o| o.eq_ignore_ascii_case(found))
}

fn decode_captures(
    form: &QuestionForm,
    clause_count: usize,
    caps: &regex::Captures<'_>,
) -> Option<QuestionMatch> {
    let mut choice = SynonymChoice::default();
    for (i, g) in form.synonym_groups().iter().enumerate() {
        choice
            .groups
            .push(index_ci(g, caps.name(&format!("s{i}"))?.as_str())?);
    }
    let variable = match caps.name("var") {
        Some(m) => {
            let phrases: Vec<&str> = form.variables.iter().map(|(_, p)| *p).collect();
            form.variables[index_ci(&phrases, m.as_str())?].0
        }
        None => form.variables[0].0,
    };
    let steps = match caps.name("steps") {
        Some(m) => Some(m.as_str().parse::<f64>().ok()?),
        None => None,
    };
    let mut clauses = Vec::with_capacity(clause_count);
    for i in 0..clause_count {
        let phrase = caps.name(&format!("p{i}"))?.as_str();
        let (param, k) = form.params.iter().find_map(|p| {
            index_ci(&param_phrases(*p)[..form.param_variants], phrase).map(|k| (*p, k))
        })?;
        let value: f64 = caps.name(&format!("v{i}"))?.as_str().parse().ok()?;
        clauses.push((param, value));
        choice.param_phrases.push(k);
    }
    let binding = Binding {
        steps,
        clauses,
        variable,
    };
    check_binding(form, &binding).ok()?;
    let program = build_program(form, &binding);
    Some(QuestionMatch {
        form_id: form.id,
        binding,
        choice,
        program,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SlotExport {
    pub slot: usize,
    pub kind: &'static str,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FormExport {
    pub form_id: u8,
    pub template: String,
    pub clause_template: String,
    pub clause_counts: [usize; 2],
    pub query: Query,
    pub clause_kind: ClauseKind,
    pub slots: Vec<SlotExport>,
    pub synonyms: Vec<Vec<String>>,
    pub param_phrases: BTreeMap<String, Vec<String>>,
    pub example: String,
    pub program_example: String,
}

fn export_form(form: &QuestionForm) -> FormExport {
    let mut slots = Vec::new();
    let mut template = String::new();
    let mut next = 1;
    let mut push_slot = |template: &mut String, kind: &'static str, values: Vec<String>| {
        let _ = write!(template, "{{{next}}}");
        slots.push(SlotExport {
            slot: next,
            kind,
            values,
        });
        next += 1;
    };
    for piece in form.pieces {
        match piece {
            Text(t) => template.push_str(t),
            Synonyms(g) => template.push_str(g[0]),
            Variable => {
                if form.variables.len() == 1 {
                    template.push_str(form.variables[0].1);
                } else {
                    let values = form.variables.iter().map(|(_, p)| p.to_string()).collect();
                    push_slot(&mut template, "variable-phrase", values);
                }
            }
            Steps => push_slot(&mut template, "number", vec![Param::N.name().into()]),
            Clauses => {
                let mut parts = Vec::new();
                for _ in 0..*form.clause_counts.start() {
                    let mut part = String::new();
                    let (before, after) = form.clause_template.split_once("{p}").expect("{p}");
                    let (middle, tail) = after.split_once("{v}").expect("{v}");
                    part.push_str(before);
                    push_slot(
                        &mut part,
                        "param-name",
                        form.params.iter().map(|p| p.name().into()).collect(),
                    );
                    part.push_str(middle);
                    push_slot(&mut part, "number", vec![]);
                    part.push_str(tail);
                    parts.push(part);
                }
                template.push_str(&join_clauses(&parts));
            }
        }
    }
    let param_phrases_map = form
        .params
        .iter()
        .map(|p| {
            (
                p.name().to_string(),
                param_phrases(*p)[..form.param_variants]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            )
        })
        .collect();
    let example_binding = Binding {
        steps: form.leading_steps.then_some(4000.0),
        clauses: form.params[..*form.clause_counts.start()]
            .iter()
            .map(|p| (*p, crate::executor::default_value(*p)))
            .collect(),
        variable: form.variables[0].0,
    };
    let (example, program) = render(form, &example_binding, &SynonymChoice::default())
        .expect("example binding is valid");
    FormExport {
        form_id: form.id,
        template,
        clause_template: form.clause_template.to_string(),
        clause_counts: [*form.clause_counts.start(), *form.clause_counts.end()],
        query: form.query,
        clause_kind: form.clause_kind,
        slots,
        synonyms: form
            .synonym_groups()
            .iter()
            .map(|g| g.iter().map(|s| s.to_string()).collect())
            .collect(),
        param_phrases: param_phrases_map,
        example,
        program_example: program.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    fn reg() -> Registry {
        Registry::new()
    }

    #[test]
    fn worked_example_form_1() {
        let b = Binding {
            steps: Some(4000.0),
            clauses: vec![(Param::Fwn, 5000.0)],
            variable: Variable::MN,
        };
        let (q, p) = reg().instantiate(1, &b, &SynonymChoice::default()).unwrap();
        assert_eq!(
            q,
            "What is the value of M_n at time step 4000 if Fwn is 5000?"
        );
        assert_eq!(
            p.to_string(),
            "FinalValue(four_box_model(SetTo(N,4000),SetTo(Fwn,5000)),M_n)"
        );
    }

    #[test]
    fn three_clause_set_form() {
        let b = Binding {
            steps: None,
            clauses: vec![
                (Param::Fwn, 5.8e4),
                (Param::MEk, 2.6e7),
                (Param::DLow0, 439.0),
            ],
            variable: Variable::MN,
        };
        let r = reg();
        let (q, p) = r.instantiate(8, &b, &SynonymChoice::default()).unwrap();
        // 5.8e4 prints as its shortest form, 58000.
        assert_eq!(
            q,
            "If I set Fwn to 58000, M_ek to 2.6e7, and D_low0 to 439, will M_n increase?"
        );
        assert_eq!(
            p,
            parse("IncreaseOf(four_box_model(SetTo(Fwn,5.8e4),SetTo(M_ek,2.6e7),SetTo(D_low0,439)),M_n)").unwrap()
        );
        let m = r
            .match_question(
                "If I set Fwn to 5.8e4, M_ek to 2.6e7, and D_low0 to 439, will M_n increase?",
            )
            .unwrap();
        assert_eq!(m.form_id, 8);
        assert_eq!(m.program, p);

        let choice = SynonymChoice {
            groups: vec![1, 0],
            param_phrases: vec![1, 0, 0],
        };
        let (q2, p2) = r.instantiate(8, &b, &choice).unwrap();
        assert!(
            q2.starts_with("Setting the freshwater flux in the northern ocean to 58000"),
            "{q2}"
        );
        assert_ne!(q2, q);
        assert_eq!(p2, p);
    }

    #[test]
    fn table_questions_match() {
        let r = reg();
        let cases = [
            ("What is the value of M_n at time step 4000 if Fwn is 5000?", 1, "FinalValue(four_box_model(SetTo(N,4000),SetTo(Fwn,5000)),M_n)"),
            ("If Fwn is 45113 and M_ek is 2.7e7, does the AMOC collapse?", 2, "ChangeSign(four_box_model(SetTo(Fwn,45113),SetTo(M_ek,2.7e7)),M_n)"),
            ("What is the final value of the AMOC when Fwn is 49243?", 3, "FinalValue(four_box_model(SetTo(Fwn,49243)),M_n)"),
            ("Does Fwn collapse the AMOC at 49483?", 4, "ChangeSign(four_box_model(SetTo(Fwn,49483)),M_n)"),
            ("If I increase Fwn by 2052, will M_n increase?", 6, "IncreaseOf(four_box_model(IncreaseBy(Fwn,2052)),M_n)"),
            ("If I increase Fwn by 720, will salinity in the northern box increase?", 7, "IncreaseOf(four_box_model(IncreaseBy(Fwn,720)),S_north)"),
            ("by increasing epsilon by 4.24e-06, will temperature in the low latitude box increase?", 9, "IncreaseOf(four_box_model(IncreaseBy(epsilon,4.24e-6)),T_low)"),
            ("if i increase epsilon by 4.24e-06, will temperature in the low latitude box increase?", 9, "IncreaseOf(four_box_model(IncreaseBy(epsilon,4.24e-6)),T_low)"),
        ];
        for (q, form, program) in cases {
            let m = r.match_question(q).unwrap_or_else(|e| panic!("{q}: {e}"));
            assert_eq!(m.form_id, form, "{q}");
            assert_eq!(m.program, parse(program).unwrap(), "{q}");
        }
    }

    #[test]
    fn matching_is_case_and_space_insensitive() {
        let r = reg();
        let m = r
            .match_question("  does FWN   collapse the amoc at 49483? ")
            .unwrap();
        assert_eq!(
            m.program.to_string(),
            "ChangeSign(four_box_model(SetTo(Fwn,49483)),M_n)"
        );
    }

    #[test]
    fn rejects_outside_language() {
        let r = reg();
        for q in [
            "What is the weather tomorrow?",
            "what's for lunch",
            "",
            "If Fwn is 1 and Fwn is 2, does the AMOC collapse?",
            "If I set Fwn to 1, Fws to 2, M_ek to 3, and D_low0 to 4, will M_n increase?",
        ] {
            assert_eq!(r.match_question(q), Err(QformError::NoMatch), "{q}");
        }
    }

    #[test]
    fn canonical_questions() {
        let r = reg();
        let p = parse("FinalValue(four_box_model(SetTo(Fwn,49243)),M_n)").unwrap();
        assert_eq!(
            r.canonical_question(&p).unwrap(),
            "What is the final value of the AMOC when Fwn is 49243?"
        );
        let p = parse("IncreaseOf(four_box_model(IncreaseBy(epsilon,4.24e-6)),T_low)").unwrap();
        let q = r.canonical_question(&p).unwrap();
        assert!(
            q.ends_with("will temperature in the low latitude box increase?"),
            "{q}"
        );
        assert_eq!(r.match_question(&q).unwrap().program, p);
        let p = parse("FinalValue(four_box_model(SetTo(Fwn,1),SetTo(N,5)),M_n)").unwrap();
        assert!(matches!(
            r.canonical_question(&p),
            Err(QformError::NotExpressible(_))
        ));
    }

    #[test]
    fn bad_bindings() {
        let r = reg();
        let b = Binding {
            steps: None,
            clauses: vec![(Param::Fwn, 1.0)],
            variable: Variable::MN,
        };
        assert!(matches!(
            r.instantiate(1, &b, &SynonymChoice::default()),
            Err(QformError::InvalidBinding { .. })
        ));
        assert!(matches!(
            r.instantiate(11, &b, &SynonymChoice::default()),
            Err(QformError::UnknownForm(11))
        ));
        let too_many = Binding {
            steps: None,
            clauses: vec![
                (Param::Fwn, 1.0),
                (Param::Fws, 1.0),
                (Param::MEk, 1.0),
                (Param::DLow0, 1.0),
            ],
            variable: Variable::MN,
        };
        assert!(r
            .instantiate(8, &too_many, &SynonymChoice::default())
            .is_err());
        let bad_choice = SynonymChoice {
            groups: vec![9, 0],
            param_phrases: vec![0],
        };
        assert!(r.instantiate(8, &b, &bad_choice).is_err());
    }

    #[test]
    fn dominant_form_variant_count() {
        let r = reg();
        let f8 = r.form(8).unwrap().variant_count();
        for f in r.forms().iter().filter(|f| f.id != 8) {
            assert!(
                f8 >= 10 * f.variant_count(),
                "form {} has {}",
                f.id,
                f.variant_count()
            );
        }
        assert!(r.forms().iter().all(|f| f.max_clauses() <= MAX_CLAUSES));
    }

    #[test]
    fn export_lists_every_form() {
        let ex = reg().export();
        assert_eq!(ex.len(), 10);
        assert_eq!(
            ex[0].template,
            "What is the value of M_n at time step {1} if {2} is {3}?"
        );
        let json = serde_json::to_value(&ex).unwrap();
        assert_eq!(json[7]["synonyms"][0][1], "Setting");
    }
}
