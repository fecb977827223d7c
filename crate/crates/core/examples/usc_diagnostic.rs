//! Upper semicontinuity in expectation: along stopping times that decrease
//! to the first time the state reaches K from above, the open-set digital
//! 1{x > K} loses its value in the limit; the closed-set one keeps it.
//!
//! cargo run --example usc_diagnostic

use optstop::model::{build_from_spec, EdgeSpec, GridSpec, IdText, Model, ModelKind, ModelSpec, NodeSpec, NumberText, StoppingRule};
use optstop::reward::{digital_lsc, digital_usc, usc_in_expectation_diagnostic};

fn main() -> optstop::Result<()> {
    // deterministic chain x_t = 1 + 2^-t on a geometric time grid, x_N = 1
    let n = 12;
    let times: Vec<f64> = (0..=n).map(|t| if t < n { 1.0 - 0.5f64.powi(t as i32) } else { 1.0 }).collect();
    let state = |t: usize| if t < n { 1.0 + 0.5f64.powi(t as i32) } else { 1.0 };
    let spec = ModelSpec {
        arithmetic: None,
        kind: Some(ModelKind::ExactTree),
        grid: GridSpec { n_steps: n, horizon: 1.0, times: Some(times) },
        nodes: (0..=n)
            .map(|t| NodeSpec { id: IdText::Int(t as i64), level: t, state: NumberText::Float(state(t)) })
            .collect(),
        edges: (0..n)
            .map(|t| EdgeSpec { from: IdText::Int(t as i64), to: IdText::Int(t as i64 + 1), prob: NumberText::Int(1) })
            .collect(),
    };
    let model: Model<f64> = build_from_spec(&spec)?;
    // θ_k = k increases to T, where the state first sits at K
    let rules: Vec<StoppingRule> = (1..n).map(|k| StoppingRule::stop_at_level(&model, k)).collect();
    let limit = StoppingRule::stop_at_horizon(&model);
    for (name, phi) in [("digital_usc", digital_usc(&model, 1.0)?), ("digital_lsc", digital_lsc(&model, 1.0)?)] {
        let rep = usc_in_expectation_diagnostic(&model, &phi, &rules, &limit)?;
        println!("{name}: tail sup {} vs limit {} -> violation: {}", rep.tail_sup, rep.limit_value, rep.violation);
    }
    println!("({})", optstop::reward::USC_CAVEAT);
    Ok(())
}
