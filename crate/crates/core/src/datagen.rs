//! Seeded generation of question/program/answer records and the
//! deduplicated train/test split.
//!
//! Every example index draws from its own ChaCha stream derived from the
//! seed, so generation parallelizes without changing the output.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{ClauseKind, Param};
use crate::executor::{default_value, Answer, ExecError, Executor};
use crate::qforms::{render, Binding, QformError, QuestionForm, Registry, SynonymChoice};

pub const NUM_FORMS: usize = 10;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("form {form} has {unique} unique examples, too few to hold out {wanted} while keeping one for training")]
    InsufficientUnique {
        form: u8,
        unique: usize,
        wanted: usize,
    },
    #[error("example {id}: {source}")]
    Execution { id: u64, source: ExecError },
    #[error(transparent)]
    Form(#[from] QformError),
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_examples: usize,
    pub seed: u64,
    /// Relative half-width of the multiplicative value noise.
    pub noise_rel: f64,
    pub execute_answers: bool,
    pub balance: bool,
    /// Values per side of the default on the SetTo grid (`2k+1` points in
    /// total). Zero samples the noise band continuously.
    pub value_levels: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_examples: 1000,
            seed: 42,
            noise_rel: 0.3,
            execute_answers: false,
            balance: true,
            value_levels: 3,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.n_examples < 10 {
            return Err(DatagenError::InvalidConfig(format!(
                "n_examples must be at least 10, got {}",
                self.n_examples
            )));
        }
        if !(self.noise_rel > 0.0 && self.noise_rel < 1.0) {
            return Err(DatagenError::InvalidConfig(format!(
                "noise_rel must lie in (0, 1), got {}",
                self.noise_rel
            )));
        }
        Ok(())
    }
}

/// One generated record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetExample {
    pub id: u64,
    pub form_id: u8,
    pub question: String,
    pub program: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Answer>,
    pub values: Vec<f64>,
}

/// Admissible range for sampled values of `param`.
pub fn valid_range(param: Param) -> (f64, f64) {
    let d = default_value(param);
    match param {
        Param::Fwn | Param::Fws => (0.0, 5.0 * d),
        Param::MEk => (0.5 * d, 1.5 * d),
        Param::DLow0 => (50.0, 3000.0),
        Param::Epsilon => (0.25 * d, 4.0 * d),
        Param::N => (100.0, 20000.0),
    }
}

fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits - 1, x)
        .parse()
        .expect("formatted float parses")
}

fn clamp_to_range(param: Param, x: f64) -> f64 {
    let (lo, hi) = valid_range(param);
    x.clamp(lo, hi)
}

fn sample_steps<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (z.abs() * 1000.0).round() + 1.0
}

/// Continuous draw: `default·(1+u)` with `u ~ U[-noise_rel, noise_rel]`,
/// or `round(|z|·1000)+1` for the step count; clamped to [`valid_range`].
pub fn sample_value<R: Rng + ?Sized>(param: Param, noise_rel: f64, rng: &mut R) -> f64 {
    if param == Param::N {
        return clamp_to_range(param, sample_steps(rng));
    }
    let u = if noise_rel > 0.0 {
        rng.random_range(-noise_rel..=noise_rel)
    } else {
        0.0
    };
    clamp_to_range(param, default_value(param) * (1.0 + u))
}

/// Value for a `SetTo` slot. On the grid, `u = noise_rel·k/levels` for
/// integer `k` in `-levels..=levels`, and step counts keep one significant
/// digit.
pub fn sample_setting<R: Rng + ?Sized>(param: Param, cfg: &GenConfig, rng: &mut R) -> f64 {
    if cfg.value_levels == 0 {
        return sample_value(param, cfg.noise_rel, rng);
    }
    if param == Param::N {
        return clamp_to_range(param, round_sig(sample_steps(rng), 1));
    }
    let levels = cfg.value_levels as i64;
    let k = rng.random_range(-levels..=levels);
    let u = cfg.noise_rel * k as f64 / levels as f64;
    clamp_to_range(param, round_sig(default_value(param) * (1.0 + u), 6))
}

/// Positive increment for an `IncreaseBy` slot, at most `noise_rel` of the
/// default so the perturbed value stays in range.
pub fn sample_increment<R: Rng + ?Sized>(param: Param, cfg: &GenConfig, rng: &mut R) -> f64 {
    let d = default_value(param);
    if cfg.value_levels == 0 {
        let u: f64 = rng.random_range(0.0..1.0);
        return d * cfg.noise_rel * (1.0 - u);
    }
    let steps = 10 * cfg.value_levels as i64;
    let j = rng.random_range(1..=steps);
    round_sig(d * cfg.noise_rel * j as f64 / steps as f64, 6)
}

fn index_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws one (question, program) pair for `form`.
pub fn sample_example<R: Rng + ?Sized>(
    form: &QuestionForm,
    cfg: &GenConfig,
    rng: &mut R,
) -> Result<(String, String, Vec<f64>), QformError> {
    let k = rng.random_range(form.clause_counts.clone());
    let params: Vec<Param> = sample(rng, form.params.len(), k)
        .into_iter()
        .map(|i| form.params[i])
        .collect();
    let steps = form
        .leading_steps
        .then(|| sample_setting(Param::N, cfg, rng));
    let clauses: Vec<(Param, f64)> = params
        .iter()
        .map(|&p| {
            let v = match form.clause_kind {
                ClauseKind::SetTo => sample_setting(p, cfg, rng),
                ClauseKind::IncreaseBy => sample_increment(p, cfg, rng),
            };
            (p, v)
        })
        .collect();
    let variable = form.variables[rng.random_range(0..form.variables.len())].0;
    let choice = SynonymChoice {
        groups: form
            .synonym_groups()
            .iter()
            .map(|g| rng.random_range(0..g.len()))
            .collect(),
        param_phrases: (0..k)
            .map(|_| rng.random_range(0..form.param_variants))
            .collect(),
    };
    let values: Vec<f64> = steps
        .iter()
        .copied()
        .chain(clauses.iter().map(|c| c.1))
        .collect();
    let binding = Binding {
        steps,
        clauses,
        variable,
    };
    let (question, program) = render(form, &binding, &choice)?;
    Ok((question, program.to_string(), values))
}

/// Generates `cfg.n_examples` records. With `balance`, example `i` uses form
/// `i mod 10 + 1`; otherwise forms are drawn in proportion to their number
/// of phrasings.
pub fn generate(cfg: &GenConfig) -> Result<Vec<DatasetExample>, DatagenError> {
    generate_with(cfg, &Registry::new(), &Executor::default())
}

pub fn generate_with(
    cfg: &GenConfig,
    registry: &Registry,
    executor: &Executor,
) -> Result<Vec<DatasetExample>, DatagenError> {
    cfg.validate()?;
    let forms = registry.forms();
    let weights = WeightedIndex::new(forms.iter().map(|f| f.variant_count()))
        .expect("variant counts are positive");
    (0..cfg.n_examples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = index_rng(cfg.seed, i);
            let form = if cfg.balance {
                &forms[i as usize % forms.len()]
            } else {
                &forms[weights.sample(&mut rng)]
            };
            let (question, program, values) = sample_example(form, cfg, &mut rng)?;
            let answer = if cfg.execute_answers {
                let parsed = program.parse().expect("rendered programs parse");
                Some(
                    executor
                        .execute(&parsed)
                        .map_err(|source| DatagenError::Execution { id: i, source })?,
                )
            } else {
                None
            };
            Ok(DatasetExample {
                id: i,
                form_id: form.id,
                question,
                program,
                answer,
                values,
            })
        })
        .collect()
}

/// Number of examples per form id, for every form that occurs.
pub fn counts_by_form(examples: &[DatasetExample]) -> BTreeMap<u8, usize> {
    let mut counts = BTreeMap::new();
    for e in examples {
        *counts.entry(e.form_id).or_insert(0) += 1;
    }
    counts
}

/// Largest-remainder apportionment of `total` over `weights`, each share
/// kept within `[lo[i], hi[i]]`. Returns `None` if the bounds cannot be met.
fn apportion(total: usize, weights: &[usize], lo: &[usize], hi: &[usize]) -> Option<Vec<usize>> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return (total == 0).then(|| vec![0; weights.len()]);
    }
    let quota: Vec<f64> = weights
        .iter()
        .map(|&w| total as f64 * w as f64 / sum as f64)
        .collect();
    let mut alloc: Vec<usize> = quota
        .iter()
        .enumerate()
        .map(|(i, q)| (q.floor() as usize).clamp(lo[i], hi[i]))
        .collect();
    let gap = |alloc: &[usize], i: usize| quota[i] - alloc[i] as f64;
    loop {
        let assigned: usize = alloc.iter().sum();
        if assigned == total {
            return Some(alloc);
        }
        let pick = if assigned < total {
            (0..alloc.len())
                .filter(|&i| alloc[i] < hi[i])
                .max_by(|&a, &b| gap(&alloc, a).total_cmp(&gap(&alloc, b)).then(b.cmp(&a)))
        } else {
            (0..alloc.len())
                .filter(|&i| alloc[i] > lo[i])
                .min_by(|&a, &b| gap(&alloc, a).total_cmp(&gap(&alloc, b)).then(a.cmp(&b)))
        };
        let i = pick?;
        if assigned < total {
            alloc[i] += 1;
        } else {
            alloc[i] -= 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_frac: f64,
    pub seed: u64,
    /// Repeat training examples so every form reaches `(n - n_test)/forms`.
    pub rebalance: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_frac: 0.1,
            seed: 42,
            rebalance: true,
        }
    }
}

/// Holds out `round(test_frac·n)` distinct questions, apportioned over forms
/// by their number of distinct questions, and trains on every example whose
/// question is not held out.
pub fn split(
    examples: &[DatasetExample],
    cfg: &SplitConfig,
) -> Result<(Vec<DatasetExample>, Vec<DatasetExample>), DatagenError> {
    if !(cfg.test_frac > 0.0 && cfg.test_frac < 1.0) {
        return Err(DatagenError::InvalidConfig(format!(
            "test_frac must lie in (0, 1), got {}",
            cfg.test_frac
        )));
    }
    // Unique questions per form, in first-occurrence order.
    let mut first_index: HashMap<&str, usize> = HashMap::new();
    let mut unique: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        if !first_index.contains_key(e.question.as_str()) {
            first_index.insert(&e.question, i);
            unique.entry(e.form_id).or_default().push(i);
        }
    }
    let form_ids: Vec<u8> = unique.keys().copied().collect();
    let sizes: Vec<usize> = unique.values().map(Vec::len).collect();
    let n_test = (cfg.test_frac * examples.len() as f64).round() as usize;
    let min_each = usize::from(n_test >= form_ids.len());
    let lo = vec![min_each; sizes.len()];
    let hi: Vec<usize> = sizes.iter().map(|&u| u.saturating_sub(1)).collect();
    if let Some(i) = (0..sizes.len()).find(|&i| lo[i] > hi[i]) {
        return Err(DatagenError::InsufficientUnique {
            form: form_ids[i],
            unique: sizes[i],
            wanted: min_each,
        });
    }
    let alloc = apportion(n_test, &sizes, &lo, &hi).ok_or_else(|| {
        let (i, _) = sizes
            .iter()
            .enumerate()
            .min_by_key(|(_, &u)| u)
            .expect("non-empty");
        DatagenError::InsufficientUnique {
            form: form_ids[i],
            unique: sizes[i],
            wanted: n_test,
        }
    })?;

    let mut held_out = vec![false; examples.len()];
    let mut test = Vec::with_capacity(n_test);
    for (k, (form, idxs)) in unique.iter().enumerate() {
        let mut rng = index_rng(cfg.seed, *form as u64);
        let mut picked: Vec<usize> = sample(&mut rng, idxs.len(), alloc[k])
            .into_iter()
            .map(|j| idxs[j])
            .collect();
        picked.sort_unstable();
        for i in picked {
            held_out[i] = true;
            test.push(examples[i].clone());
        }
    }
    test.sort_by_key(|e| e.id);

    let is_test = |e: &DatasetExample| held_out[first_index[e.question.as_str()]];
    let mut by_form: BTreeMap<u8, Vec<&DatasetExample>> = BTreeMap::new();
    for e in examples.iter().filter(|e| !is_test(e)) {
        by_form.entry(e.form_id).or_default().push(e);
    }
    let train = if cfg.rebalance {
        let target = (examples.len() - test.len()) / by_form.len().max(1);
        let per_form: Vec<Vec<&DatasetExample>> = by_form
            .values()
            .map(|pool| pool.iter().copied().cycle().take(target).collect())
            .collect();
        // Interleave forms so the file is not sorted by form.
        (0..target)
            .flat_map(|j| per_form.iter().map(move |p| p[j].clone()))
            .collect()
    } else {
        examples.iter().filter(|e| !is_test(e)).cloned().collect()
    };
    Ok((train, test))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Generation settings; absent when an existing file was re-split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<GenConfig>,
    pub split: SplitConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub train_per_form: BTreeMap<u8, usize>,
    pub test_per_form: BTreeMap<u8, usize>,
}

impl Manifest {
    pub fn new(
        config: Option<GenConfig>,
        split: SplitConfig,
        train: &[DatasetExample],
        test: &[DatasetExample],
    ) -> Self {
        Manifest {
            config,
            split,
            n_train: train.len(),
            n_test: test.len(),
            train_per_form: counts_by_form(train),
            test_per_form: counts_by_form(test),
        }
    }
}

pub fn write_jsonl<T: Serialize>(
    path: impl AsRef<Path>,
    records: &[T],
) -> Result<(), DatagenError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: impl AsRef<Path>,
) -> Result<Vec<T>, DatagenError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DatagenError::Format {
                path: path.display().to_string(),
                line: n + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Writes `train.jsonl`, `test.jsonl` and `manifest.json` into `dir`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    manifest: &Manifest,
    train: &[DatasetExample],
    test: &[DatasetExample],
) -> Result<(), DatagenError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_jsonl(dir.join("train.jsonl"), train)?;
    write_jsonl(dir.join("test.jsonl"), test)?;
    let json = serde_json::to_string_pretty(manifest).map_err(std::io::Error::from)?;
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}
