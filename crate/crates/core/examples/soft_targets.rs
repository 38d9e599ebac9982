//! Prints the training targets every ordinal head builds for each label,
//! and shows that decoding a soft target returns its own label.
//!
//! ```text
//! cargo run -p stepdiff --example soft_targets [K]
//! ```

use stepdiff::heads::{binomial_params, nnrank_target, redsvm_sign, softlabel_decode, SoftTargets};

fn show(name: &str, targets: &[Vec<f64>]) {
    println!("{name}:");
    for (y, t) in targets.iter().enumerate() {
        let cells: Vec<String> = t.iter().map(|p| format!("{p:.3}")).collect();
        let decoded = softlabel_decode(t, targets).expect("targets are valid distributions");
        println!("  y={} [{}] decodes to {decoded}", y + 1, cells.join(" "));
    }
}

fn main() {
    let k: u32 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    show("laplace", &SoftTargets::laplace(k).targets);
    show("binomial", &SoftTargets::binomial(k).targets);

    println!("binomial parameters:");
    for y in 1..=k {
        let p = binomial_params(y, k);
        println!("  y={y}: n={} mu={} p1={:.4} p2={:.4}", p.n, p.mu, p.p1, p.p2);
    }
    println!("nnrank cumulative targets:");
    for y in 1..=k {
        println!("  y={y}: {:?}", nnrank_target(y, k));
    }
    println!("red-svm threshold signs:");
    for y in 1..=k {
        let signs: Vec<f64> = (1..k).map(|t| redsvm_sign(t, y)).collect();
        println!("  y={y}: {signs:?}");
    }
}
