//! Exhaustive oracle on random rational trees: the engine's value equals
//! the best of all 2^k stopping rules, and every optimal rule lies between
//! the minimal and maximal optimal stopping times.
//!
//! cargo run --example oracle_sandwich [count]

use optstop::oracle::{random_corpus, verify_theorems, CORPUS_SEED};

fn main() -> optstop::Result<()> {
    let count = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    for (k, inst) in random_corpus(CORPUS_SEED, count).iter().enumerate() {
        let rep = verify_theorems(&inst.model, &inst.reward)?;
        println!(
            "#{k:<3} depth {} rules {:>6} optimal {:>5} distinct {:>3} v(root) {:<12} {}",
            inst.model.n_steps(),
            rep.rule_count,
            rep.optimal_rule_count,
            rep.distinct_optimal_times,
            rep.engine_value.to_string(),
            rep.failure().unwrap_or_else(|| "ok".into())
        );
    }
    Ok(())
}
