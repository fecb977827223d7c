//! Values and optimal times from a random start S, and windows [S, S'].
//!
//! cargo run --example start_rules

use optstop::model::{build_binomial, induced_times, ModelKind, StoppingRule};
use optstop::reward::call;
use optstop::scalar::ratio;
use optstop::snell::compute;
use optstop::stopping::{minimal_optimal, restrict_window, start_value};

fn main() -> optstop::Result<()> {
    let model = build_binomial(ratio(4, 1), ratio(3, 2), ratio(2, 3), ratio(2, 5), 4, 1.0, ModelKind::ExactTree)?;
    let phi = call(&model, ratio(4, 1))?;
    let result = compute(&model, &phi)?;
    let root = StoppingRule::stop_at_root(&model);

    // S: the first time the state drops below 4, or T
    let below = StoppingRule::from_predicate(&model, |id| *model.node(id).state() < ratio(4, 1));
    println!("E[v(0)] = {}, E[v(S)] = {}", result.root_value(), start_value(&model, &result, &below)?);
    let star = minimal_optimal(&model, &result, &phi, &below)?;
    println!("S per path:       {:?}", induced_times(&model, &below, &root)?);
    println!("theta*(S):        {:?}", induced_times(&model, &star, &below)?);

    let at2 = StoppingRule::stop_at_level(&model, 2);
    let at3 = StoppingRule::stop_at_level(&model, 3);
    let free = minimal_optimal(&model, &result, &phi, &root)?;
    println!("theta*(0):        {:?}", induced_times(&model, &free, &root)?);
    let clamped = restrict_window(&model, &free, &at2, &at3, false)?;
    println!("clamped [2,3]:    {:?}", induced_times(&model, &clamped, &root)?);
    let strict = restrict_window(&model, &free, &at2, &StoppingRule::stop_at_horizon(&model), true)?;
    println!("clamped ]2,T]:    {:?}", induced_times(&model, &strict, &root)?);
    Ok(())
}
