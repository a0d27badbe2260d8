//! Dataset loading, answer normalization, EM / token F1, and run reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::resolve::QueryEngine;

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    static ARTICLES: OnceLock<Regex> = OnceLock::new();
    let articles = ARTICLES.get_or_init(|| Regex::new(r"\b(a|an|the)\b").unwrap());
    let lower = text.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = articles.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn exact_match(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(pred);
    if golds.iter().any(|g| normalize_answer(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn f1_single(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pt.len() as f64;
    let recall = overlap as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token F1 over the gold answers.
pub fn f1(pred: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| f1_single(pred, g)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    #[serde(rename = "id")]
    pub example_id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
}

/// Reads `{"id", "question", "answers"}` JSONL. Golds that normalize to
/// nothing are dropped; an example left with none is an error.
pub fn load_dataset(path: &Path) -> Result<Vec<QAExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{}:{}", path.display(), i + 1);
        let mut ex: QAExample = serde_json::from_str(line).map_err(|e| Error::json(at(), e))?;
        ex.gold_answers.retain(|g| !normalize_answer(g).is_empty());
        if ex.gold_answers.is_empty() {
            return Err(Error::InvalidArgument(format!("{}: no usable gold answer", at())));
        }
        out.push(ex);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub question: String,
    pub prediction: String,
    pub gold_answers: Vec<String>,
    pub em: f64,
    pub f1: f64,
    pub rounds: u32,
    pub fully_resolved: bool,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub weighted_cost: u64,
    pub latency_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub em: f64,
    pub f1: f64,
    pub mean_rounds: f64,
    pub total_cost: u64,
    pub mean_cost: f64,
    pub mean_latency_ms: f64,
    pub errors: usize,
}

impl Aggregate {
    pub fn over<'r>(rows: impl IntoIterator<Item = &'r EvalRow>) -> Self {
        let rows: Vec<&EvalRow> = rows.into_iter().collect();
        let n = rows.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n as f64;
        let total_cost = rows.iter().map(|r| r.weighted_cost).sum();
        Self {
            count: n,
            em: mean(&|r| r.em),
            f1: mean(&|r| r.f1),
            mean_rounds: mean(&|r| f64::from(r.rounds)),
            total_cost,
            mean_cost: total_cost as f64 / n as f64,
            mean_latency_ms: mean(&|r| r.latency_ms),
            errors: rows.iter().filter(|r| r.error.is_some()).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: RunConfig,
    pub overall: Aggregate,
    pub fully_resolved: Aggregate,
    pub unresolved: Aggregate,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn from_rows(config: RunConfig, rows: Vec<EvalRow>) -> Self {
        Self {
            config,
            overall: Aggregate::over(&rows),
            fully_resolved: Aggregate::over(rows.iter().filter(|r| r.fully_resolved)),
            unresolved: Aggregate::over(rows.iter().filter(|r| !r.fully_resolved)),
            rows,
        }
    }

    pub fn error_rate(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.overall.errors as f64 / self.rows.len() as f64
        }
    }

    /// `EM x.x / F1 x.x`, scores scaled by 100.
    pub fn headline(&self) -> String {
        format!("EM {:.1} / F1 {:.1}", self.overall.em * 100.0, self.overall.f1 * 100.0)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>6} {:>6} {:>7} {:>12} {:>7}",
            "split", "n", "EM", "F1", "rounds", "cost", "errors"
        );
        for (name, a) in [
            ("all", &self.overall),
            ("fully_resolved", &self.fully_resolved),
            ("unresolved", &self.unresolved),
        ] {
            let _ = writeln!(
                out,
                "{:<16} {:>6} {:>6.1} {:>6.1} {:>7.2} {:>12} {:>7}",
                name,
                a.count,
                a.em * 100.0,
                a.f1 * 100.0,
                a.mean_rounds,
                a.total_cost,
                a.errors
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record([
            "id", "prediction", "gold_answers", "em", "f1", "rounds", "fully_resolved",
            "input_tokens", "output_tokens", "weighted_cost", "latency_ms", "error",
        ])
        .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                r.prediction.clone(),
                r.gold_answers.join(" || "),
                format!("{}", r.em),
                format!("{:.4}", r.f1),
                r.rounds.to_string(),
                r.fully_resolved.to_string(),
                r.input_tokens.to_string(),
                r.output_tokens.to_string(),
                r.weighted_cost.to_string(),
                format!("{:.1}", r.latency_ms),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn run_one(engine: &QueryEngine<'_>, ex: &QAExample) -> EvalRow {
    let base = |prediction: String| EvalRow {
        id: ex.example_id.clone(),
        question: ex.question.clone(),
        em: exact_match(&prediction, &ex.gold_answers),
        f1: f1(&prediction, &ex.gold_answers),
        prediction,
        gold_answers: ex.gold_answers.clone(),
        rounds: 0,
        fully_resolved: false,
        input_tokens: 0,
        output_tokens: 0,
        weighted_cost: 0,
        latency_ms: 0.0,
        error: None,
    };
    match engine.run_query(&ex.question) {
        Ok(res) => {
            let total = res.usage.total();
            EvalRow {
                rounds: res.rounds_used,
                fully_resolved: res.fully_resolved,
                input_tokens: total.input_tokens,
                output_tokens: total.output_tokens,
                weighted_cost: res.usage.weighted_cost(),
                latency_ms: res.latency.as_secs_f64() * 1000.0,
                ..base(res.answer)
            }
        }
        Err(fail) => {
            tracing::warn!(id = %ex.example_id, error = %fail.error, "example failed");
            let total = fail.usage.total();
            EvalRow {
                em: 0.0,
                f1: 0.0,
                rounds: fail.state.as_ref().map_or(0, |s| s.round()),
                input_tokens: total.input_tokens,
                output_tokens: total.output_tokens,
                weighted_cost: fail.usage.weighted_cost(),
                error: Some(fail.error.to_string()),
                ..base(String::new())
            }
        }
    }
}

/// Runs every example on `engine.config().workers` threads; row order follows
/// the dataset. Per-example failures become tagged zero rows.
pub fn run_eval(dataset: &[QAExample], engine: &QueryEngine<'_>) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(engine.config().workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<EvalRow> = pool.install(|| dataset.par_iter().map(|ex| run_one(engine, ex)).collect());
    Ok(EvalReport::from_rows(engine.config().clone(), rows))
}
