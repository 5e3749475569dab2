//! QA scoring: Rouge-L recall and exact match anywhere in the response.
//!
//! Both metrics compare token sequences produced by [`normalize_text`]:
//! lowercase, Unicode punctuation (`\p{P}`) removed, split on whitespace.
//! Punctuation is deleted rather than replaced, so `"a,b"` becomes `"ab"`.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{P}").expect("valid regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

pub fn normalize_text(s: &str) -> Vec<String> {
    normalize_with(s, NormalizeOptions::default())
}

pub fn normalize_with(s: &str, opts: NormalizeOptions) -> Vec<String> {
    let lowered;
    let mut text = s;
    if opts.lowercase {
        lowered = s.to_lowercase();
        text = &lowered;
    }
    let stripped;
    if opts.strip_punctuation {
        stripped = PUNCT.replace_all(text, "");
        text = &stripped;
    }
    text.split_whitespace().map(str::to_string).collect()
}

/// Length of the longest common subsequence, `O(|a| |b|)` time, `O(|b|)` space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

/// `true` when `needle` occurs as a contiguous run in `haystack`. An empty
/// needle never matches.
pub fn contains_run<T: PartialEq>(haystack: &[T], needle: &[T]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

fn rouge_tokens(reference: &[String], response: &[String]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    lcs_len(reference, response) as f64 / reference.len() as f64
}

/// LCS of the normalized token sequences over the reference length; 0 for a
/// reference with no tokens.
pub fn rouge_l_recall(reference: &str, response: &str) -> f64 {
    rouge_l_recall_with(reference, response, NormalizeOptions::default())
}

pub fn rouge_l_recall_with(reference: &str, response: &str, opts: NormalizeOptions) -> f64 {
    rouge_tokens(&normalize_with(reference, opts), &normalize_with(response, opts))
}

/// 1 when the normalized reference appears contiguously in the normalized
/// response, else 0.
pub fn exact_match_anywhere(reference: &str, response: &str) -> f64 {
    exact_match_with(reference, response, NormalizeOptions::default())
}

pub fn exact_match_with(reference: &str, response: &str, opts: NormalizeOptions) -> f64 {
    let hit = contains_run(&normalize_with(response, opts), &normalize_with(reference, opts));
    if hit {
        1.0
    } else {
        0.0
    }
}

/// Best score over several references for one response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub rouge_l: f64,
    pub exact_match: f64,
}

pub fn score_multi<S: AsRef<str>>(references: &[S], response: &str, opts: NormalizeOptions) -> Scores {
    let resp = normalize_with(response, opts);
    references.iter().fold(
        Scores {
            rouge_l: 0.0,
            exact_match: 0.0,
        },
        |best, r| {
            let r = normalize_with(r.as_ref(), opts);
            Scores {
                rouge_l: best.rouge_l.max(rouge_tokens(&r, &resp)),
                exact_match: if contains_run(&resp, &r) { 1.0 } else { best.exact_match },
            }
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    #[serde(default)]
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, rename = "passage_id", alias = "gold_passage_id")]
    pub gold_passage_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub response: String,
}

/// Reads line-delimited JSON, skipping blank lines. Errors name the line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads references, rejecting duplicate ids and empty answer lists.
pub fn load_references(path: impl AsRef<Path>) -> Result<Vec<QAExample>> {
    let path = path.as_ref();
    let refs: Vec<QAExample> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for r in &refs {
        if r.answers.is_empty() {
            return Err(Error::format(format!("{}: example `{}` has no answers", path.display(), r.id)));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(Error::format(format!("{}: duplicate example id `{}`", path.display(), r.id)));
        }
    }
    Ok(refs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub rouge_l: f64,
    pub exact_match: f64,
    /// No prediction was given for this id; both metrics are 0.
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub missing: usize,
    pub rouge_l_recall_mean: f64,
    pub exact_match_mean: f64,
    pub per_example: Vec<ExampleScore>,
}

impl EvalReport {
    pub fn from_scores(per_example: Vec<ExampleScore>) -> Self {
        let n = per_example.len();
        let mean = |f: fn(&ExampleScore) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_example.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            n,
            missing: per_example.iter().filter(|e| e.missing).count(),
            rouge_l_recall_mean: mean(|e| e.rouge_l),
            exact_match_mean: mean(|e| e.exact_match),
            per_example,
        }
    }

    /// Mean Rouge-L recall in percent, rounded to `decimals`.
    pub fn rouge_l_percent(&self, decimals: u32) -> f64 {
        to_percent(self.rouge_l_recall_mean, decimals)
    }

    pub fn exact_match_percent(&self, decimals: u32) -> f64 {
        to_percent(self.exact_match_mean, decimals)
    }

    /// Summary plus per-example rows, with percentages at `decimals`.
    pub fn to_json(&self, decimals: u32) -> serde_json::Value {
        serde_json::json!({
            "n": self.n,
            "missing": self.missing,
            "rouge_l": self.rouge_l_percent(decimals),
            "exact_match": self.exact_match_percent(decimals),
            "rouge_l_recall_mean": self.rouge_l_recall_mean,
            "exact_match_mean": self.exact_match_mean,
            "per_example": self.per_example,
        })
    }

    /// `id,rouge_l,exact_match,missing` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let to_err = |e: csv::Error| Error::format(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(to_err)?;
        for e in &self.per_example {
            w.serialize(e).map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn to_percent(v: f64, decimals: u32) -> f64 {
    let p = 10f64.powi(decimals as i32);
    (v * 100.0 * p).round() / p
}

/// Scores predictions against references in reference order. Every reference
/// without a prediction scores 0 and is logged.
pub fn score_examples(
    predictions: &[Prediction],
    references: &[QAExample],
    opts: NormalizeOptions,
) -> Result<EvalReport> {
    let ref_ids: HashSet<&str> = references.iter().map(|r| r.id.as_str()).collect();
    let mut by_id: BTreeMap<&str, &str> = BTreeMap::new();
    for p in predictions {
        if !ref_ids.contains(p.id.as_str()) {
            return Err(Error::UnknownId(p.id.clone()));
        }
        if by_id.insert(&p.id, &p.response).is_some() {
            return Err(Error::format(format!("duplicate prediction for `{}`", p.id)));
        }
    }
    let per_example: Vec<ExampleScore> = references
        .par_iter()
        .map(|r| match by_id.get(r.id.as_str()) {
            Some(resp) => {
                let s = score_multi(&r.answers, resp, opts);
                ExampleScore {
                    id: r.id.clone(),
                    rouge_l: s.rouge_l,
                    exact_match: s.exact_match,
                    missing: false,
                }
            }
            None => ExampleScore {
                id: r.id.clone(),
                rouge_l: 0.0,
                exact_match: 0.0,
                missing: true,
            },
        })
        .collect();
    let report = EvalReport::from_scores(per_example);
    if report.missing > 0 {
        log::warn!("{} of {} references have no prediction; scored as 0", report.missing, report.n);
    }
    Ok(report)
}

/// [`score_examples`] over JSONL files.
pub fn score_file(
    predictions: impl AsRef<Path>,
    references: impl AsRef<Path>,
    opts: NormalizeOptions,
) -> Result<EvalReport> {
    let preds: Vec<Prediction> = read_jsonl(predictions)?;
    let refs = load_references(references)?;
    score_examples(&preds, &refs, opts)
}
