use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Passage;
use crate::error::{Error, Result};
use crate::evalkit::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Inverted index over normalized passage tokens. Documents are stored in id
/// order, so the index does not depend on corpus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lens: Vec<usize>,
    avgdl: f64,
    /// term -> (document index, term frequency), sorted by document index.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn build(corpus: &[Passage], params: Bm25Params) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if !(params.k1 >= 0.0) || !(0.0..=1.0).contains(&params.b) {
            return Err(Error::InvalidArgument(format!(
                "BM25 needs k1 >= 0 and b in [0, 1], got k1 = {}, b = {}",
                params.k1, params.b
            )));
        }
        let mut docs: Vec<&Passage> = corpus.iter().collect();
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = docs.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::format(format!("duplicate passage id `{}`", w[0].id)));
        }
        let tokenized: Vec<Vec<String>> = docs.par_iter().map(|p| normalize_text(&p.text)).collect();
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (i, tokens) in tokenized.iter().enumerate() {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t.to_string()).or_default().push((i as u32, n));
            }
        }
        let doc_lens: Vec<usize> = tokenized.iter().map(Vec::len).collect();
        let avgdl = doc_lens.iter().sum::<usize>() as f64 / doc_lens.len() as f64;
        Ok(Self {
            params,
            doc_ids: docs.iter().map(|p| p.id.clone()).collect(),
            doc_lens,
            avgdl,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    /// Number of documents containing `term` (already normalized).
    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn vocabulary_len(&self) -> usize {
        self.postings.len()
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top `top_k` documents containing at least one query term, by
    /// descending score then ascending id. Repeated query terms count once.
    pub fn query(&self, q: &str, top_k: usize) -> Vec<Hit> {
        let terms: BTreeSet<String> = normalize_text(q).into_iter().collect();
        let Bm25Params { k1, b } = self.params;
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for t in &terms {
            let Some(list) = self.postings.get(t) else {
                continue;
            };
            let idf = self.idf(t);
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let len = self.doc_lens[doc as usize] as f64;
                let norm = if self.avgdl > 0.0 { len / self.avgdl } else { 0.0 };
                *scores.entry(doc).or_default() += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
            }
        }
        let mut hits: Vec<(u32, f64)> = scores.into_iter().collect();
        // Documents are stored in id order, so the index breaks ties by id.
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(top_k);
        hits.into_iter()
            .map(|(doc, score)| Hit {
                id: self.doc_ids[doc as usize].clone(),
                score,
            })
            .collect()
    }

    /// Runs independent queries in parallel.
    pub fn query_batch(&self, queries: &[&str], top_k: usize) -> Vec<Vec<Hit>> {
        queries.par_iter().map(|q| self.query(q, top_k)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let index: Self = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        index.check()?;
        Ok(index)
    }

    fn check(&self) -> Result<()> {
        let n = self.doc_ids.len();
        let unique: HashSet<&String> = self.doc_ids.iter().collect();
        let ok = n > 0
            && self.doc_lens.len() == n
            && unique.len() == n
            && self.postings.values().flatten().all(|&(d, tf)| (d as usize) < n && tf > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::format("inconsistent BM25 index file"))
        }
    }
}
