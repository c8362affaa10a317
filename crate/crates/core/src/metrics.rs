//! ROUGE-L scoring and the continual-learning summary metrics (AR, FWT, BWT)
//! computed from a stage-by-task performance matrix.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Instance;
use crate::genbackend::{self, GenError, GenerationParams, Generator};
use crate::synth::eval_prompt;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{metric} is undefined for T = {t}")]
    Undefined { metric: &'static str, t: usize },
    #[error("{metric} needs a({stage},{task}) which is missing")]
    MissingEntry {
        metric: &'static str,
        stage: usize,
        task: usize,
    },
    #[error("cannot aggregate an empty list of runs")]
    EmptyRuns,
    #[error("score {value} at ({stage},{task}) is outside [0, 100]")]
    OutOfRange {
        stage: usize,
        task: usize,
        value: f64,
    },
    #[error("performance matrix is malformed: {0}")]
    Shape(String),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("generation failed on eval instance {id:?}: {source}")]
    Generation {
        id: String,
        #[source]
        source: GenError,
    },
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
}

/// Lowercases, turns every non-alphanumeric, non-whitespace codepoint into a
/// space and splits on Unicode whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F1 of LCS precision and recall over pre-tokenized sequences.
pub fn rouge_l_tokens<T: PartialEq>(reference: &[T], candidate: &[T]) -> f64 {
    let lcs = lcs_len(reference, candidate);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-L F1 in [0, 1]; 0 when either side has no tokens.
pub fn rouge_l(reference: &str, candidate: &str) -> f64 {
    rouge_l_tokens(&tokenize(reference), &tokenize(candidate))
}

/// Mean ROUGE-L (×100) of the model's greedy generations against the
/// reference outputs. Generation runs through `complete_many`, so a remote
/// model may be queried concurrently; scores are summed in instance order.
pub fn evaluate_model(
    model: &dyn Generator,
    eval_set: &[Instance],
    params: &GenerationParams,
) -> Result<f64, MetricError> {
    if eval_set.is_empty() {
        return Err(MetricError::EmptyEvalSet);
    }
    let prompts: Vec<String> = eval_set.iter().map(|i| eval_prompt(&i.input)).collect();
    let results = genbackend::complete_many(model, &prompts, params);
    let mut total = 0.0;
    for (inst, res) in eval_set.iter().zip(results) {
        let generated = res.map_err(|source| MetricError::Generation {
            id: inst.id.clone(),
            source,
        })?;
        total += rouge_l(&inst.output, &generated);
    }
    Ok(100.0 * total / eval_set.len() as f64)
}

/// Scores `a(i, j)` on a 0–100 scale, stage `i` in `0..=T` (row 0 holds
/// optional zero-shot scores of the untrained model), task `j` in `1..=T`.
/// Absent entries stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    pub tasks: Vec<String>,
    /// `scores[i][j - 1]`, `T + 1` rows of `T` columns.
    pub scores: Vec<Vec<Option<f64>>>,
}

impl PerformanceMatrix {
    pub fn new(tasks: Vec<String>) -> Self {
        let t = tasks.len();
        Self {
            tasks,
            scores: vec![vec![None; t]; t + 1],
        }
    }

    /// Builds a matrix from 1-based rows `a(1..=T, 1..=T)`; row 0 is left empty.
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Self {
        let t = rows.len();
        let tasks = (1..=t).map(|j| format!("task{j}")).collect();
        let mut m = Self::new(tasks);
        for (i, row) in rows.into_iter().enumerate() {
            m.scores[i + 1] = row;
        }
        m
    }

    pub fn t(&self) -> usize {
        self.tasks.len()
    }

    pub fn get(&self, stage: usize, task: usize) -> Option<f64> {
        self.scores
            .get(stage)
            .and_then(|row| row.get(task.checked_sub(1)?))
            .copied()
            .flatten()
    }

    pub fn set(&mut self, stage: usize, task: usize, value: f64) -> Result<(), MetricError> {
        if !(value.is_finite() && (0.0..=100.0).contains(&value)) {
            return Err(MetricError::OutOfRange { stage, task, value });
        }
        let t = self.t();
        if stage > t || task == 0 || task > t {
            return Err(MetricError::Shape(format!(
                "entry ({stage},{task}) outside a {t}-task matrix"
            )));
        }
        self.scores[stage][task - 1] = Some(value);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        let t = self.t();
        if t == 0 {
            return Err(MetricError::Shape("no tasks".into()));
        }
        if self.scores.len() != t + 1 || self.scores.iter().any(|r| r.len() != t) {
            return Err(MetricError::Shape(format!(
                "expected {} rows of {t} entries",
                t + 1
            )));
        }
        for (i, row) in self.scores.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    if !(v.is_finite() && (0.0..=100.0).contains(&v)) {
                        return Err(MetricError::OutOfRange {
                            stage: i,
                            task: j + 1,
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn need(&self, metric: &'static str, stage: usize, task: usize) -> Result<f64, MetricError> {
        self.get(stage, task).ok_or(MetricError::MissingEntry {
            metric,
            stage,
            task,
        })
    }

    /// The leading `n`-task block: tasks `1..=n`, stages `0..=n`.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.t());
        Self {
            tasks: self.tasks[..n].to_vec(),
            scores: self.scores[..=n].iter().map(|r| r[..n].to_vec()).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricError> {
        let path = path.as_ref();
        let file_err = |reason: String| MetricError::File {
            path: path.display().to_string(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

/// Average final score over all tasks.
pub fn compute_ar(m: &PerformanceMatrix) -> Result<f64, MetricError> {
    let t = m.t();
    if t == 0 {
        return Err(MetricError::Undefined { metric: "AR", t });
    }
    let mut sum = 0.0;
    for j in 1..=t {
        sum += m.need("AR", t, j)?;
    }
    Ok(sum / t as f64)
}

/// Average zero-shot score on each task right before it is trained.
pub fn compute_fwt(m: &PerformanceMatrix) -> Result<f64, MetricError> {
    let t = m.t();
    if t < 2 {
        return Err(MetricError::Undefined { metric: "FWT", t });
    }
    let mut sum = 0.0;
    for i in 2..=t {
        sum += m.need("FWT", i - 1, i)?;
    }
    Ok(sum / (t - 1) as f64)
}

/// Average change from online to final score on every task but the last.
/// Negative means forgetting.
pub fn compute_bwt(m: &PerformanceMatrix) -> Result<f64, MetricError> {
    let t = m.t();
    if t < 2 {
        return Err(MetricError::Undefined { metric: "BWT", t });
    }
    let mut sum = 0.0;
    for i in 1..t {
        sum += m.need("BWT", t, i)? - m.need("BWT", i, i)?;
    }
    Ok(sum / (t - 1) as f64)
}

/// Unrounded mean of per-run values.
pub fn mean_runs(values: &[f64]) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyRuns);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean over runs, rounded to two decimals as in the summary tables.
pub fn aggregate_runs(values: &[f64]) -> Result<f64, MetricError> {
    Ok(round2(mean_runs(values)?))
}

pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// AR/FWT/BWT, each either a value or the reason it is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub ar: Option<f64>,
    pub fwt: Option<f64>,
    pub bwt: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl MetricSummary {
    pub fn of(m: &PerformanceMatrix) -> Self {
        let mut undefined = Vec::new();
        let mut keep = |r: Result<f64, MetricError>| match r {
            Ok(v) => Some(v),
            Err(e) => {
                undefined.push(e.to_string());
                None
            }
        };
        let ar = keep(compute_ar(m));
        let fwt = keep(compute_fwt(m));
        let bwt = keep(compute_bwt(m));
        Self {
            ar,
            fwt,
            bwt,
            undefined,
        }
    }
}

/// Metrics after each stage `s`, computed on the leading `s`-task block.
pub fn stage_table(m: &PerformanceMatrix) -> Vec<(usize, MetricSummary)> {
    (1..=m.t())
        .map(|s| (s, MetricSummary::of(&m.prefix(s))))
        .collect()
}
