//! Snell envelope of a put on a two-step binomial tree, in exact
//! arithmetic, with the minimal and maximal optimal stopping times.
//!
//! cargo run --example price_put

use optstop::model::{build_binomial, ModelKind, StoppingRule};
use optstop::reward::put;
use optstop::scalar::{ratio, Rational};
use optstop::snell::compute;
use optstop::stopping::{evaluate, maximal_optimal, minimal_optimal};

fn main() -> optstop::Result<()> {
    // s0 = 4, up 2, down 1/2, p = 1/2
    let model = build_binomial(ratio(4, 1), ratio(2, 1), ratio(1, 2), ratio(1, 2), 2, 2.0, ModelKind::ExactTree)?;
    let phi = put(&model, ratio(5, 1))?;
    let result = compute(&model, &phi)?;

    println!("node  level  state  phi    v      v+");
    for id in model.node_ids() {
        let n = model.node(id);
        println!(
            "{:<5} {:<6} {:<6} {:<6} {:<6} {}",
            n.label(),
            n.level(),
            n.state(),
            phi.get(id),
            result.v().get(id),
            result.vplus().get(id)
        );
    }

    let root = StoppingRule::stop_at_root(&model);
    for (name, rule) in [
        ("theta*", minimal_optimal(&model, &result, &phi, &root)?),
        ("theta_check", maximal_optimal(&model, &result, &phi, &root)?),
        ("stop at root", StoppingRule::stop_at_root(&model)),
        ("stop at T", StoppingRule::stop_at_horizon(&model)),
    ] {
        let rep = evaluate(&model, &rule, &phi, &result, &root)?;
        let dist: Vec<String> = rep.time_distribution.iter().map(Rational::to_string).collect();
        println!("{name:<13} value {:<5} gap {:<5} P(theta = t) = [{}]", rep.value, rep.gap, dist.join(", "));
    }
    Ok(())
}
