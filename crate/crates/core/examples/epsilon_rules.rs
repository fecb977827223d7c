//! Penalized stopping rules: value guarantee, monotonicity in ε and the
//! collapse onto θ* below the gap threshold.
//!
//! cargo run --example epsilon_rules

use optstop::model::{build_binomial, expectation_under_rule, same_stopping_time, ModelKind, StoppingRule};
use optstop::reward::put;
use optstop::scalar::{ratio, Rational, Scalar};
use optstop::snell::compute;
use optstop::stopping::{epsilon_collapse_threshold, epsilon_optimal, minimal_optimal, EpsilonKind, EpsilonMode};

fn main() -> optstop::Result<()> {
    let model = build_binomial(ratio(10, 1), ratio(6, 5), ratio(5, 6), ratio(1, 2), 6, 1.0, ModelKind::ExactTree)?;
    let phi = put(&model, ratio(11, 1))?;
    let result = compute(&model, &phi)?;
    let root = StoppingRule::stop_at_root(&model);
    let star = minimal_optimal(&model, &result, &phi, &root)?;
    let v0 = result.root_value().clone();

    for kind in [EpsilonKind::Multiplicative, EpsilonKind::Additive] {
        let eps0 = epsilon_collapse_threshold(&result, &phi, kind);
        println!("{kind:?}: eps0 = {eps0} (~{:.5})", eps0.to_f64());
        let mut grid: Vec<Rational> = [(9, 10), (1, 2), (1, 10), (1, 100)].iter().map(|&(p, q)| ratio(p, q)).collect();
        grid.push(eps0.clone() / ratio(2, 1));
        for e in grid {
            let rule = epsilon_optimal(&model, &result, &phi, &EpsilonMode::new(kind, e.clone())?, &root)?;
            let value = expectation_under_rule(&model, &rule, phi.values(), &root)?;
            let bound = match kind {
                EpsilonKind::Multiplicative => (ratio(1, 1) - e.clone()) * v0.clone(),
                EpsilonKind::Additive => v0.clone() - e.clone(),
            };
            println!(
                "  eps {:<10} value {:<10.6} bound {:<10.6} equals theta*: {}",
                format!("{e}"),
                value.to_f64(),
                bound.to_f64(),
                same_stopping_time(&model, &rule, &star, &root)?
            );
        }
    }
    Ok(())
}
