// Rouge-L recall and exact match over a small prediction set.

use readapt::evalkit::{
    exact_match_anywhere, normalize_text, rouge_l_recall, score_examples, NormalizeOptions, Prediction, QAExample,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:?}", normalize_text("Dragon Ball Z!"));
    let response = "There are a total of 291 episodes in the original Japanese version.";
    println!("R-L {} EM {}", rouge_l_recall("291", response), exact_match_anywhere("291", response));
    println!("R-L {:.3}", rouge_l_recall("alpha beta gamma", "alpha gamma"));

    let refs = vec![
        QAExample { id: "q1".into(), question: "How many episodes?".into(), answers: vec!["291".into()], gold_passage_id: None },
        QAExample { id: "q2".into(), question: "Where?".into(), answers: vec!["new york".into(), "nyc".into()], gold_passage_id: None },
        QAExample { id: "q3".into(), question: "Who?".into(), answers: vec!["ada lovelace".into()], gold_passage_id: None },
    ];
    let preds = vec![
        Prediction { id: "q1".into(), response: response.into() },
        Prediction { id: "q2".into(), response: "New haven, then York.".into() },
    ];
    let report = score_examples(&preds, &refs, NormalizeOptions::default())?;
    println!(
        "n {} missing {}: R-L {} EM {}",
        report.n,
        report.missing,
        report.rouge_l_percent(0),
        report.exact_match_percent(0)
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
