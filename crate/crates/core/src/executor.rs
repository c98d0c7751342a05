//! Operational semantics: clauses resolve against the default parameters,
//! the simulator runs once, and the query reads the requested series.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxmodel::{default_params, BoxModelError, BoxModelParams, RunOutput, Simulator};
use crate::dsl::{validate, ClauseKind, Param, Program, Query, RunExpr, Variable, Violation};

/// Relative tolerance for `IncreaseOf`.
pub const INCREASE_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("invalid program: {0}")]
    Invalid(Violation),
    #[error(transparent)]
    BoxModel(#[from] BoxModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Number(f64),
    Bool(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Number,
    Bool,
}

/// Result of executing a program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub kind: AnswerKind,
    pub value: AnswerValue,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Answer {
    pub fn as_bool(&self) -> Option<bool> {
        match self.value {
            AnswerValue::Bool(b) => Some(b),
            AnswerValue::Number(_) => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self.value {
            AnswerValue::Number(v) => Some(v),
            AnswerValue::Bool(_) => None,
        }
    }
}

fn slot(params: &mut BoxModelParams, param: Param) -> Option<&mut f64> {
    Some(match param {
        Param::Fwn => &mut params.fwn,
        Param::Fws => &mut params.fws,
        Param::MEk => &mut params.m_ek,
        Param::DLow0 => &mut params.d_low0,
        Param::Epsilon => &mut params.epsilon,
        Param::N => return None,
    })
}

pub fn default_value(param: Param) -> f64 {
    let mut d = default_params();
    match slot(&mut d, param) {
        Some(v) => *v,
        None => d.n as f64,
    }
}

/// Resolves clauses against `default_params()`. `IncreaseBy` always adds to
/// the default, never to another clause's value.
pub fn resolve(run: &RunExpr) -> Result<BoxModelParams, BoxModelError> {
    let defaults = default_params();
    let mut params = defaults;
    for clause in &run.clauses {
        let base = match clause.kind {
            ClauseKind::SetTo => 0.0,
            ClauseKind::IncreaseBy => default_value(clause.param),
        };
        let value = base + clause.value;
        match slot(&mut params, clause.param) {
            Some(v) => *v = value,
            None => {
                if !(value.fract() == 0.0 && value >= 1.0 && value <= u32::MAX as f64) {
                    return Err(BoxModelError::InvalidParams(format!(
                        "N must resolve to a positive integer, got {value}"
                    )));
                }
                params.n = value as u32;
            }
        }
    }
    Ok(params)
}

pub fn series(run: &RunOutput, variable: Variable) -> &[f64] {
    match variable {
        Variable::MN => &run.m_n,
        Variable::SNorth => &run.s_north,
        Variable::SSouth => &run.s_south,
        Variable::SLow => &run.s_low,
        Variable::SDeep => &run.s_deep,
        Variable::TLow => &run.t_low,
        Variable::DLow => &run.d_low,
    }
}

/// True iff some step has a strictly opposite sign to step 0. Zero matches
/// either sign.
pub fn changes_sign(series: &[f64]) -> bool {
    let Some(&first) = series.first() else {
        return false;
    };
    series
        .iter()
        .any(|&x| (first > 0.0 && x < 0.0) || (first < 0.0 && x > 0.0))
}

pub fn increases(series: &[f64]) -> bool {
    match (series.first(), series.last()) {
        (Some(&a), Some(&b)) => b - a > INCREASE_REL_TOL * a.abs(),
        _ => false,
    }
}

pub fn evaluate_query(query: Query, values: &[f64]) -> AnswerValue {
    match query {
        Query::FinalValue => AnswerValue::Number(*values.last().expect("non-empty series")),
        Query::ChangeSign => AnswerValue::Bool(changes_sign(values)),
        Query::IncreaseOf => AnswerValue::Bool(increases(values)),
    }
}

/// Executes programs against one simulator configuration.
#[derive(Debug, Clone, Default)]
pub struct Executor {
    simulator: Simulator,
}

impl Executor {
    pub fn new(simulator: Simulator) -> Self {
        Executor { simulator }
    }

    pub fn simulator(&self) -> &Simulator {
        &self.simulator
    }

    /// Runs the program and returns the answer with the full run.
    pub fn execute_with_run(&self, program: &Program) -> Result<(Answer, RunOutput), ExecError> {
        if let Some(v) = validate(program).into_iter().next() {
            return Err(ExecError::Invalid(v));
        }
        let params = resolve(&program.run)?;
        let run = self.simulator.run(&params)?;
        let value = evaluate_query(program.query, series(&run, program.variable));
        let kind = match value {
            AnswerValue::Number(_) => AnswerKind::Number,
            AnswerValue::Bool(_) => AnswerKind::Bool,
        };
        let answer = Answer {
            kind,
            value,
            unit: program.variable.unit().to_string(),
            warnings: run.warnings.clone(),
        };
        Ok((answer, run))
    }

    pub fn execute(&self, program: &Program) -> Result<Answer, ExecError> {
        self.execute_with_run(program).map(|(a, _)| a)
    }
}

/// Executes with the built-in constants.
pub fn execute(program: &Program) -> Result<Answer, ExecError> {
    Executor::default().execute(program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse, Clause};

    #[test]
    fn resolve_examples() {
        let run = RunExpr {
            clauses: vec![
                Clause::set_to(Param::N, 4000.0),
                Clause::set_to(Param::Fwn, 5000.0),
            ],
        };
        let p = resolve(&run).unwrap();
        assert_eq!(
            p,
            BoxModelParams {
                n: 4000,
                fwn: 5000.0,
                ..default_params()
            }
        );
        assert_eq!(resolve(&RunExpr::default()).unwrap(), default_params());
        let p = resolve(&RunExpr {
            clauses: vec![Clause::increase_by(Param::Fwn, 2052.0)],
        })
        .unwrap();
        assert_eq!(p.fwn, 47052.0);
        let p = resolve(&RunExpr {
            clauses: vec![Clause::increase_by(Param::N, -3000.0)],
        })
        .unwrap();
        assert_eq!(p.n, 1000);
    }

    #[test]
    fn resolve_order_irrelevant() {
        let a = RunExpr {
            clauses: vec![
                Clause::set_to(Param::Fwn, 1.0),
                Clause::increase_by(Param::MEk, 2.0),
            ],
        };
        let b = RunExpr {
            clauses: a.clauses.iter().rev().copied().collect(),
        };
        assert_eq!(resolve(&a).unwrap(), resolve(&b).unwrap());
    }

    #[test]
    fn resolve_rejects_invalid_values() {
        let run = RunExpr {
            clauses: vec![Clause::increase_by(Param::Epsilon, -1.0)],
        };
        let err = execute(&Program::new(Query::FinalValue, run.clauses, Variable::MN)).unwrap_err();
        assert!(matches!(
            err,
            ExecError::BoxModel(BoxModelError::InvalidParams(_))
        ));
        assert!(resolve(&RunExpr {
            clauses: vec![Clause::increase_by(Param::N, -4000.0)]
        })
        .is_err());
    }

    #[test]
    fn query_predicates() {
        assert!(!changes_sign(&[3.0, 3.0, 3.0]));
        assert!(!changes_sign(&[3.0, 0.0, 2.0]));
        assert!(changes_sign(&[3.0, 1.0, -0.5, 2.0]));
        assert!(changes_sign(&[-1.0, 0.0, 0.1]));
        assert!(!changes_sign(&[0.0, -1.0, 1.0]));
        assert!(increases(&[1.0, 0.0, 1.5]));
        assert!(!increases(&[1.0, 2.0, 1.0]));
        assert!(!increases(&[1.0, 1.0 + 1e-12]));
        assert!(!increases(&[5.0]));
    }

    #[test]
    fn answer_kinds_and_units() {
        let a = execute(&parse("FinalValue(four_box_model(SetTo(N,10)),M_n)").unwrap()).unwrap();
        assert_eq!(a.kind, AnswerKind::Number);
        assert_eq!(a.unit, "m³/s");
        let a =
            execute(&parse("IncreaseOf(four_box_model(SetTo(N,10)),S_north)").unwrap()).unwrap();
        assert_eq!(a.kind, AnswerKind::Bool);
        assert_eq!(a.unit, "psu");
        let json = serde_json::to_value(&a).unwrap();
        assert_eq!(json["kind"], "bool");
        assert!(json["value"].is_boolean());
    }

    #[test]
    fn final_value_is_last_element() {
        let p = parse("FinalValue(four_box_model(SetTo(N,250)),S_deep)").unwrap();
        let (a, run) = Executor::default().execute_with_run(&p).unwrap();
        assert_eq!(a.as_number().unwrap(), *run.s_deep.last().unwrap());
    }

    #[test]
    fn constant_series_never_changes_sign() {
        let p = parse("ChangeSign(four_box_model(SetTo(N,100)),T_low)").unwrap();
        assert_eq!(execute(&p).unwrap().as_bool(), Some(false));
    }
}
