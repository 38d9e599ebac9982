//! Ranking pairs, pairwise agreement of predicted labels with the truth, and
//! concordance with graded human judgments.
//!
//! ```text
//! cargo run -p stepdiff --example ranking_agreement
//! ```

use stepdiff::metrics::{agreement, concordance_accuracy, record_pairs, AgreementMode, EvalRecord};
use stepdiff::pipeline::{make_ranking_pairs, PairLabel};

fn main() {
    let levels: Vec<(String, u32)> = [("a#0", 1), ("a#1", 2), ("b#0", 2), ("b#1", 4), ("c#0", 3)]
        .iter()
        .map(|(id, y)| (id.to_string(), *y))
        .collect();
    println!("ranking pairs:");
    for p in make_ranking_pairs(&levels) {
        println!("  {} vs {}: {:?}", p.a, p.b, p.label);
    }

    let predicted = [1, 3, 2, 4, 3];
    let records = EvalRecord::new(levels.iter().zip(predicted).map(|((_, y), p)| (*y, p)).collect(), 4).unwrap();
    let (model, truth) = record_pairs(&records);
    for mode in [AgreementMode::StrictOnly, AgreementMode::Full] {
        println!("agreement ({mode:?}): {:.3}", agreement(&model, &truth, mode).unwrap());
    }

    // Share of annotators who found `a` easier, per judged pair.
    let r_a_less = [0.8, 0.4, 1.0];
    let source = [PairLabel::ALess, PairLabel::ALess, PairLabel::BLess];
    let reversed: Vec<PairLabel> = source.iter().map(|o| o.swapped()).collect();
    let s = concordance_accuracy(&source, &r_a_less).unwrap();
    let r = concordance_accuracy(&reversed, &r_a_less).unwrap();
    println!("concordance {s:.3}, reversed {r:.3}, sum {:.3}", s + r);
}
