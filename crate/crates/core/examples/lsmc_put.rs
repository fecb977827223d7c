//! Regression Monte Carlo on the American put benchmark, checked against a
//! CRR lattice exercisable on the same dates.
//!
//! cargo run --release --example lsmc_put [paths]

use optstop::lsmc::GbmExperiment;

fn main() -> optstop::Result<()> {
    let mut exp = GbmExperiment::american_put();
    if let Some(n) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        exp.fit_paths = n;
        exp.eval_paths = n;
    }
    let out = exp.run()?;
    let c = &out.comparison;
    println!("paths {} + {}, {} dates, degree {}", exp.fit_paths, exp.eval_paths, exp.exercise_dates, exp.basis_degree);
    println!("policy value {:.5} ± {:.5}", c.estimate, c.standard_error);
    println!("lattice      {:.5}", c.lattice_value);
    println!("gap          {:.5} ({:.2}%), {}", c.gap, 100.0 * c.relative_gap, c.verdict());

    // a policy that exercises too late loses value
    let late = out.policy.clone().shift_continuation(0.5);
    let grid = exp.grid()?;
    let eval = optstop::lsmc::simulate_gbm(exp.s0, exp.rate, exp.volatility, &grid, exp.eval_paths, exp.eval_seed)?;
    let v = optstop::lsmc::policy_value(&eval, &late, |k, x| exp.reward(k, x))?;
    println!("corrupted    {:.5} ± {:.5}", v.estimate, v.standard_error);
    Ok(())
}
