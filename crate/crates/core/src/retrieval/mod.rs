//! Passage retrieval for RAG evaluation: a BM25 index, an oracle retriever
//! that returns the labeled gold passage, and prompt rendering.

mod bm25;
mod prompt;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{read_jsonl, QAExample};

pub use bm25::{Bm25Index, Bm25Params, Hit};
pub use prompt::{render_prompt, template_ids, Message, Prompt, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Passages with unique ids, in input order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(passages: Vec<Passage>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate passage id `{}`", p.id)));
            }
        }
        Ok(Self { passages, by_id })
    }

    /// Corpus JSONL: one `{"id", "text"}` object per line.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_jsonl(path)?)
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }
}

/// The gold passage of `example`.
pub fn oracle_retrieve<'c>(example: &QAExample, corpus: &'c Corpus) -> Result<&'c Passage> {
    example
        .gold_passage_id
        .as_deref()
        .and_then(|id| corpus.get(id))
        .ok_or_else(|| Error::MissingGold(example.id.clone()))
}

/// Fraction of examples whose gold id is among the first `at_k` retrieved ids.
pub fn retrieval_accuracy(
    results: &BTreeMap<String, Vec<String>>,
    gold: &BTreeMap<String, String>,
    at_k: usize,
) -> Result<f64> {
    if at_k == 0 {
        return Err(Error::InvalidArgument("at_k must be at least 1".into()));
    }
    let a: BTreeSet<&String> = results.keys().collect();
    let b: BTreeSet<&String> = gold.keys().collect();
    if a != b {
        let only_results: Vec<&str> = a.difference(&b).map(|s| s.as_str()).collect();
        let only_gold: Vec<&str> = b.difference(&a).map(|s| s.as_str()).collect();
        return Err(Error::KeyMismatch(format!(
            "only in results: {only_results:?}; only in gold: {only_gold:?}"
        )));
    }
    if gold.is_empty() {
        return Err(Error::InvalidArgument("no examples to score".into()));
    }
    let hits = gold
        .iter()
        .filter(|(id, g)| results[*id].iter().take(at_k).any(|r| r == *g))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// One line of retrieval output JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub id: String,
    pub retrieved: Vec<String>,
    pub scores: Vec<f64>,
}
