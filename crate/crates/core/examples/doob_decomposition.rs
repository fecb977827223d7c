//! Doob decomposition v = M − A of the envelope, and the maximal optimal
//! time read off as the last instant before A increases.
//!
//! cargo run --example doob_decomposition

use optstop::model::{build_binomial, induced_times, ModelKind, StoppingRule};
use optstop::reward::put;
use optstop::scalar::ratio;
use optstop::snell::{compute, doob_decompose};
use optstop::stopping::maximal_optimal;

fn main() -> optstop::Result<()> {
    let model = build_binomial(ratio(4, 1), ratio(2, 1), ratio(1, 2), ratio(1, 2), 3, 3.0, ModelKind::ExactTree)?;
    let phi = put(&model, ratio(5, 1))?;
    let result = compute(&model, &phi)?;
    let doob = doob_decompose(&model, &result)?;
    println!("{}", if doob.check(&model, result.v())?.holds() { "decomposition verified" } else { "decomposition FAILED" });

    println!("node   level  v       M       A");
    for id in model.node_ids() {
        println!(
            "{:<6} {:<6} {:<7} {:<7} {}",
            model.node(id).label(),
            model.node(id).level(),
            result.v().get(id),
            doob.martingale.get(id),
            doob.compensator.get(id)
        );
    }
    let root = StoppingRule::stop_at_root(&model);
    let check = maximal_optimal(&model, &result, &phi, &root)?;
    println!("theta_check per path: {:?}", induced_times(&model, &check, &root)?);
    Ok(())
}
