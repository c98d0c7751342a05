//! Normalized Levenshtein scoring and evaluation reports.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textcodec::lexical_tokens;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no prediction records to evaluate")]
    EmptyInput,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Edit distance with unit-cost insertion, deletion and substitution.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `100·(1 − d / max(|a|, |b|, 1))`.
    #[default]
    MaxLength,
    /// Yujian–Bo: `100·(1 − 2d / (|a| + |b| + d))`.
    YujianBo,
}

pub fn normalized_score(d: usize, len_a: usize, len_b: usize, normalization: Normalization) -> f64 {
    let ratio = match normalization {
        Normalization::MaxLength => d as f64 / len_a.max(len_b).max(1) as f64,
        Normalization::YujianBo => {
            let denom = len_a + len_b + d;
            if denom == 0 {
                0.0
            } else {
                2.0 * d as f64 / denom as f64
            }
        }
    };
    100.0 * (1.0 - ratio)
}

/// Normalized Levenshtein similarity in [0, 100]; 100 means identical.
pub fn nld<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    normalized_score(
        levenshtein(a, b),
        a.len(),
        b.len(),
        Normalization::MaxLength,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// Codec tokens, numbers kept as literals.
    #[default]
    Token,
    #[serde(alias = "char")]
    Character,
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "token" => Ok(Granularity::Token),
            "char" | "character" => Ok(Granularity::Character),
            other => Err(format!(
                "unknown granularity `{other}` (expected token or char)"
            )),
        }
    }
}

/// Scores one prediction against its target.
pub fn score_text(
    prediction: &str,
    target: &str,
    granularity: Granularity,
    normalization: Normalization,
) -> f64 {
    match granularity {
        Granularity::Token => {
            let (a, b) = (lexical_tokens(prediction), lexical_tokens(target));
            normalized_score(levenshtein(&a, &b), a.len(), b.len(), normalization)
        }
        Granularity::Character => {
            let a: Vec<char> = prediction.chars().collect();
            let b: Vec<char> = target.chars().collect();
            normalized_score(levenshtein(&a, &b), a.len(), b.len(), normalization)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "QTQ")]
    Qtq,
    #[serde(rename = "QTP")]
    Qtp,
    #[serde(rename = "PTQ")]
    Ptq,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Qtq, Direction::Qtp, Direction::Ptq];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Qtq => "QTQ",
            Direction::Qtp => "QTP",
            Direction::Ptq => "PTQ",
        }
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u64,
    pub direction: Direction,
    pub prediction: String,
    pub target: String,
    pub form_id: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(scores: &[f64]) -> Summary {
        let n = scores.len();
        if n == 0 {
            return Summary {
                count: 0,
                mean: 0.0,
                std: 0.0,
            };
        }
        let mean = scores.iter().sum::<f64>() / n as f64;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        Summary {
            count: n,
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub score: f64,
    /// Fraction of records scoring at most `score`.
    pub fraction: f64,
}

/// Empirical CDF with one point per distinct score.
pub fn cdf(scores: &[f64]) -> Vec<CdfPoint> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<CdfPoint> = Vec::new();
    for (i, &s) in sorted.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.score == s => last.fraction = fraction,
            _ => out.push(CdfPoint { score: s, fraction }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub overall: Summary,
    pub per_form: BTreeMap<u8, Summary>,
    /// Mean of the per-form means, each form counted once.
    pub unweighted_form_mean: f64,
    pub cdf: Vec<CdfPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub granularity: Granularity,
    pub normalization: Normalization,
    pub records: usize,
    pub directions: BTreeMap<Direction, DirectionReport>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub granularity: Granularity,
    pub normalization: Normalization,
}

pub fn evaluate(
    records: &[PredictionRecord],
    options: EvalOptions,
) -> Result<EvalReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let scores: Vec<f64> = records
        .par_iter()
        .map(|r| {
            score_text(
                &r.prediction,
                &r.target,
                options.granularity,
                options.normalization,
            )
        })
        .collect();

    let mut grouped: BTreeMap<Direction, BTreeMap<u8, Vec<f64>>> = BTreeMap::new();
    for (r, &s) in records.iter().zip(&scores) {
        grouped
            .entry(r.direction)
            .or_default()
            .entry(r.form_id)
            .or_default()
            .push(s);
    }
    let directions = grouped
        .into_iter()
        .map(|(dir, forms)| {
            let all: Vec<f64> = forms.values().flatten().copied().collect();
            let per_form: BTreeMap<u8, Summary> =
                forms.iter().map(|(f, s)| (*f, Summary::of(s))).collect();
            let unweighted_form_mean =
                per_form.values().map(|s| s.mean).sum::<f64>() / per_form.len() as f64;
            let report = DirectionReport {
                overall: Summary::of(&all),
                per_form,
                unweighted_form_mean,
                cdf: cdf(&all),
            };
            (dir, report)
        })
        .collect();
    Ok(EvalReport {
        granularity: options.granularity,
        normalization: options.normalization,
        records: records.len(),
        directions,
    })
}

/// `direction,score,fraction` rows.
pub fn write_cdf_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["direction", "score", "fraction"])?;
    for (dir, r) in &report.directions {
        for p in &r.cdf {
            w.write_record([
                dir.name().to_string(),
                p.score.to_string(),
                p.fraction.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `direction,form_id,count,mean,std` rows.
pub fn write_forms_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["direction", "form_id", "count", "mean", "std"])?;
    for (dir, r) in &report.directions {
        for (form, s) in &r.per_form {
            w.write_record([
                dir.name().to_string(),
                form.to_string(),
                s.count.to_string(),
                s.mean.to_string(),
                s.std.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
