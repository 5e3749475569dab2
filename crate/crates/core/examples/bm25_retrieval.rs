// BM25 search, the oracle retriever and retrieval accuracy.

use std::collections::BTreeMap;

use readapt::evalkit::QAExample;
use readapt::retrieval::{oracle_retrieve, retrieval_accuracy, Bm25Index, Bm25Params, Corpus, Passage};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Corpus::new(vec![
        Passage::new("p1", "Dragon Ball Z has 291 episodes in the Japanese version."),
        Passage::new("p2", "The Eiffel Tower is in Paris."),
        Passage::new("p3", "Paris hosted the Olympic games in 2024."),
    ])?;
    let index = Bm25Index::build(corpus.passages(), Bm25Params::default())?;
    println!("N = {}, avgdl = {:.3}, df(paris) = {}", index.doc_count(), index.avgdl(), index.df("paris"));

    let questions = [("e1", "how many episodes does dragon ball z have", "p1"), ("e2", "where is the eiffel tower", "p2")];
    let mut results = BTreeMap::new();
    let mut gold = BTreeMap::new();
    for (id, q, g) in questions {
        let hits = index.query(q, 2);
        println!("{q}: {:?}", hits.iter().map(|h| (&h.id, h.score)).collect::<Vec<_>>());
        results.insert(id.to_string(), hits.into_iter().map(|h| h.id).collect());
        gold.insert(id.to_string(), g.to_string());
    }
    println!("accuracy@1 = {}", retrieval_accuracy(&results, &gold, 1)?);

    let example = QAExample {
        id: "e1".into(),
        question: questions[0].1.into(),
        answers: vec!["291".into()],
        gold_passage_id: Some("p1".into()),
    };
    println!("oracle: {}", oracle_retrieve(&example, &corpus)?.text);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
