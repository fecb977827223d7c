//! Exhaustive ground truth on small exact trees.
//!
//! Every map interior-node → {STOP, CONTINUE} is enumerated and its
//! expected reward computed path by path in exact arithmetic. No backward
//! induction is involved, so agreement with [`crate::snell::compute`] is an
//! independent check of the envelope and of the optimal stopping rules.

use std::collections::HashSet;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{induced_times, AdaptedFamily, Decision, Model, ModelKind, NodeDraft, NodeId, StoppingRule, TimeGrid};
use crate::reward::RewardFamily;
use crate::scalar::{ratio, Rational, Scalar};
use crate::snell::compute;
use crate::stopping::{maximal_optimal, minimal_optimal};

/// Largest number of interior nodes the oracle accepts (2^24 rules).
pub const ORACLE_INTERIOR_CAP: usize = 24;

/// Seed of the shipped random corpus.
pub const CORPUS_SEED: u64 = 0x5EED_2010;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub max_value: Rational,
    /// Every rule attaining `max_value`, as distinct decision maps.
    pub optimal_rules: Vec<StoppingRule>,
    pub rule_count: u64,
}

fn interior_nodes<S: Scalar>(model: &Model<S>) -> Result<Vec<NodeId>> {
    model.require_tree("rule enumeration")?;
    let interior: Vec<NodeId> = model.node_ids().filter(|&id| !model.is_terminal(id)).collect();
    if interior.len() > ORACLE_INTERIOR_CAP {
        return Err(Error::ModelTooLarge { interior: interior.len(), cap: ORACLE_INTERIOR_CAP });
    }
    Ok(interior)
}

fn rule_from_mask<S: Scalar>(model: &Model<S>, interior: &[NodeId], mask: u64) -> StoppingRule {
    let mut decisions = vec![Decision::Stop; model.len()];
    for (bit, id) in interior.iter().enumerate() {
        if mask >> bit & 1 == 0 {
            decisions[id.index()] = Decision::Continue;
        }
    }
    StoppingRule::from_decisions(decisions)
}

/// Streams all `2^interior` rules; bit `i` of the index set means the
/// `i`-th interior node stops.
pub fn enumerate_rules<S: Scalar>(model: &Model<S>) -> Result<impl Iterator<Item = StoppingRule> + '_> {
    let interior = interior_nodes(model)?;
    let count = 1u64 << interior.len();
    Ok((0..count).map(move |mask| rule_from_mask(model, &interior, mask)))
}

/// One root-to-leaf path: interior bit positions in order, and the exact
/// weight `P(path)·φ(node)` of stopping at each node of the path, scaled to
/// a common denominator.
struct PathTable {
    bits: Vec<Vec<usize>>,
    weights: Vec<Vec<BigInt>>,
    denominator: BigInt,
}

fn path_table(model: &Model<Rational>, interior: &[NodeId], phi: &[Rational]) -> Result<PathTable> {
    let mut bit_of = vec![usize::MAX; model.len()];
    for (b, id) in interior.iter().enumerate() {
        bit_of[id.index()] = b;
    }
    let mut bits = Vec::new();
    let mut raw: Vec<Vec<Rational>> = Vec::new();
    for (path, prob) in model.path_measure()? {
        bits.push(path[..path.len() - 1].iter().map(|id| bit_of[id.index()]).collect());
        raw.push(path.iter().map(|id| prob.clone() * phi[id.index()].clone()).collect());
    }
    let denominator = raw
        .iter()
        .flatten()
        .fold(BigInt::one(), |d, w| d.lcm(w.denom()));
    let weights = raw
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|w| w.numer() * (&denominator / w.denom()))
                .collect()
        })
        .collect();
    Ok(PathTable { bits, weights, denominator })
}

impl PathTable {
    /// Scaled expectation of the rule encoded by `mask`.
    fn value(&self, mask: u64) -> BigInt {
        let mut total = BigInt::zero();
        for (bits, w) in self.bits.iter().zip(&self.weights) {
            let stop = bits.iter().position(|&b| mask >> b & 1 == 1).unwrap_or(bits.len());
            total += &w[stop];
        }
        total
    }

    /// Same, in machine integers when every weight is small enough.
    fn small_weights(&self) -> Option<Vec<Vec<i128>>> {
        let bound = i128::MAX / (self.weights.len() as i128 + 1);
        self.weights
            .iter()
            .map(|row| {
                row.iter()
                    .map(|w| w.to_i128().filter(|x| x.abs() < bound))
                    .collect::<Option<Vec<i128>>>()
            })
            .collect()
    }

    fn times(&self, mask: u64) -> Vec<usize> {
        self.bits
            .iter()
            .map(|bits| bits.iter().position(|&b| mask >> b & 1 == 1).unwrap_or(bits.len()))
            .collect()
    }
}

fn rational_reward<S: Scalar>(model: &Model<S>, reward: &RewardFamily<S>) -> Result<(Model<Rational>, Vec<Rational>)>
where
    S: Scalar,
{
    if S::ARITHMETIC != crate::scalar::Arithmetic::Rational {
        return Err(Error::FloatModeRejected);
    }
    if !reward.belongs_to(model) {
        return Err(Error::ModelRewardMismatch);
    }
    // Rebuild the model over `Rational`; the conversion is exact here.
    let drafts = model
        .nodes()
        .iter()
        .map(|n| NodeDraft {
            label: Some(n.label().to_string()),
            level: n.level(),
            state: n.state().to_rational().expect("rational mode"),
            children: n
                .children()
                .iter()
                .map(|(c, p)| (c.index(), p.to_rational().expect("rational mode")))
                .collect(),
        })
        .collect();
    let exact = Model::assemble(model.grid().clone(), model.kind(), drafts)?;
    let phi = reward
        .values()
        .values()
        .iter()
        .map(|x| x.to_rational().expect("rational mode"))
        .collect();
    Ok((exact, phi))
}

struct Search {
    interior: Vec<NodeId>,
    table: PathTable,
    max_scaled: BigInt,
    optimal_masks: Vec<u64>,
}

fn search<S: Scalar>(model: &Model<S>, reward: &RewardFamily<S>) -> Result<Search> {
    let interior = interior_nodes(model)?;
    let (exact, phi) = rational_reward(model, reward)?;
    let table = path_table(&exact, &interior, &phi)?;
    let count = 1u64 << interior.len();
    let mut optimal_masks = Vec::new();
    let max_scaled = match table.small_weights() {
        Some(w) => {
            let mut best = i128::MIN;
            for mask in 0..count {
                let total: i128 = table
                    .bits
                    .iter()
                    .zip(&w)
                    .map(|(bits, row)| {
                        let stop = bits.iter().position(|&b| mask >> b & 1 == 1).unwrap_or(bits.len());
                        row[stop]
                    })
                    .sum();
                if total > best {
                    best = total;
                    optimal_masks.clear();
                }
                if total == best {
                    optimal_masks.push(mask);
                }
            }
            BigInt::from(best)
        }
        None => {
            let mut best: Option<BigInt> = None;
            for mask in 0..count {
                let total = table.value(mask);
                match &best {
                    Some(b) if total < *b => continue,
                    Some(b) if total == *b => {}
                    _ => {
                        best = Some(total.clone());
                        optimal_masks.clear();
                    }
                }
                optimal_masks.push(mask);
            }
            best.expect("at least one rule")
        }
    };
    Ok(Search { interior, table, max_scaled, optimal_masks })
}

/// `max` over all stopping rules of `E[φ(θ)]` and the exact argmax set.
pub fn brute_force<S: Scalar>(model: &Model<S>, reward: &RewardFamily<S>) -> Result<OracleResult> {
    let s = search(model, reward)?;
    let max_value = BigRational::new(s.max_scaled.clone(), s.table.denominator.clone());
    let optimal_rules = s
        .optimal_masks
        .iter()
        .map(|&mask| rule_from_mask(model, &s.interior, mask))
        .collect();
    Ok(OracleResult { max_value, optimal_rules, rule_count: 1u64 << s.interior.len() })
}

/// A path on which some optimal rule leaves the `[θ*, θ̌]` band.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichViolation {
    /// Leaf (equivalently, path) index in level order.
    pub path: usize,
    pub leaf: NodeId,
    pub minimal: usize,
    pub rule_time: usize,
    pub maximal: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub engine_value: Rational,
    pub oracle_value: Rational,
    pub rule_count: u64,
    pub optimal_rule_count: usize,
    /// Distinct optimal stopping times (rules identified by induced θ).
    pub distinct_optimal_times: usize,
    pub values_agree: bool,
    pub minimal_is_optimal: bool,
    pub maximal_is_optimal: bool,
    pub sandwich_violation: Option<SandwichViolation>,
    /// Induced times of θ* and θ̌ per path.
    pub minimal_times: Vec<usize>,
    pub maximal_times: Vec<usize>,
}

impl TheoremReport {
    pub fn passes(&self) -> bool {
        self.values_agree && self.minimal_is_optimal && self.maximal_is_optimal && self.sandwich_violation.is_none()
    }

    /// Human-readable summary of the first failed assertion.
    pub fn failure(&self) -> Option<String> {
        if !self.values_agree {
            return Some(format!(
                "engine value {} differs from oracle value {}",
                self.engine_value, self.oracle_value
            ));
        }
        if !self.minimal_is_optimal {
            return Some("minimal rule is not in the oracle's optimal set".into());
        }
        if !self.maximal_is_optimal {
            return Some("maximal rule is not in the oracle's optimal set".into());
        }
        self.sandwich_violation.as_ref().map(|v| {
            format!(
                "path {} (leaf {}): optimal rule stops at {} outside [{}, {}]",
                v.path, v.leaf, v.rule_time, v.minimal, v.maximal
            )
        })
    }
}

/// Checks, against the oracle: the engine's root value, membership of θ*
/// and θ̌ in the optimal set, and `θ* ≤ τ ≤ θ̌` for every optimal τ.
pub fn verify_theorems<S: Scalar>(model: &Model<S>, reward: &RewardFamily<S>) -> Result<TheoremReport> {
    let s = search(model, reward)?;
    let oracle_value = BigRational::new(s.max_scaled.clone(), s.table.denominator.clone());
    let result = compute(model, reward)?;
    let engine_value = result.root_value().to_rational().ok_or(Error::FloatModeRejected)?;
    let root = StoppingRule::stop_at_root(model);
    let minimal_times = induced_times(model, &minimal_optimal(model, &result, reward, &root)?, &root)?;
    let maximal_times = induced_times(model, &maximal_optimal(model, &result, reward, &root)?, &root)?;

    let mut optimal_times: HashSet<Vec<usize>> = HashSet::new();
    let mut sandwich_violation = None;
    let leaves = model.level(model.n_steps());
    for &mask in &s.optimal_masks {
        let times = s.table.times(mask);
        if sandwich_violation.is_none() {
            if let Some(path) = (0..times.len())
                .find(|&p| times[p] < minimal_times[p] || times[p] > maximal_times[p])
            {
                sandwich_violation = Some(SandwichViolation {
                    path,
                    leaf: leaves[path],
                    minimal: minimal_times[path],
                    rule_time: times[path],
                    maximal: maximal_times[path],
                });
            }
        }
        optimal_times.insert(times);
    }

    Ok(TheoremReport {
        values_agree: engine_value == oracle_value,
        minimal_is_optimal: optimal_times.contains(&minimal_times),
        maximal_is_optimal: optimal_times.contains(&maximal_times),
        distinct_optimal_times: optimal_times.len(),
        optimal_rule_count: s.optimal_masks.len(),
        rule_count: 1u64 << s.interior.len(),
        engine_value,
        oracle_value,
        sandwich_violation,
        minimal_times,
        maximal_times,
    })
}

/// A random rational instance for the verification corpus.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: Model<Rational>,
    pub reward: RewardFamily<Rational>,
}

/// Binary exact tree of depth 2–4 with up-probabilities `a/q` (`q ≤ 10`)
/// and rewards `a/q` (`q ≤ 10`, `a ≤ 20`). States count up-moves.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let depth = rng.gen_range(2..=4usize);
    let mut drafts: Vec<NodeDraft<Rational>> = Vec::new();
    let mut frontier = vec![0usize];
    drafts.push(NodeDraft { label: None, level: 0, state: ratio(0, 1), children: vec![] });
    for level in 1..=depth {
        let mut next = Vec::new();
        for &parent in &frontier {
            let q = rng.gen_range(2..=10i64);
            let a = rng.gen_range(1..q);
            let up_state = drafts[parent].state.clone() + ratio(1, 1);
            let down_state = drafts[parent].state.clone();
            for (state, prob) in [(up_state, ratio(a, q)), (down_state, ratio(q - a, q))] {
                drafts.push(NodeDraft { label: None, level, state, children: vec![] });
                let child = drafts.len() - 1;
                drafts[parent].children.push((child, prob));
                next.push(child);
            }
        }
        frontier = next;
    }
    let grid = TimeGrid::uniform(depth, depth as f64).expect("valid grid");
    let model = Model::assemble(grid, ModelKind::ExactTree, drafts).expect("valid random tree");
    let values = AdaptedFamily::from_fn(&model, |_| {
        let q = rng.gen_range(1..=10i64);
        ratio(rng.gen_range(0..=20i64), q)
    });
    let reward = RewardFamily::from_values(&model, "random", values).expect("nonnegative");
    Instance { model, reward }
}

/// `count` instances from a ChaCha stream seeded with `seed`.
pub fn random_corpus(seed: u64, count: usize) -> Vec<Instance> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_instance(&mut rng)).collect()
}

/// Supermartingale dominating `φ`, built backward as
/// `u_N = φ_N + ξ_N`, `u_t = max(φ_t, E[u_{t+1}|F_t]) + ξ_t` with random
/// `ξ ≥ 0` (zero about half the time, to produce ties with `v`).
pub fn random_dominating_supermartingale<S: Scalar, R: Rng>(
    model: &Model<S>,
    reward: &RewardFamily<S>,
    rng: &mut R,
) -> AdaptedFamily<S> {
    let mut xi = || -> S {
        if rng.gen_bool(0.5) {
            S::zero()
        } else {
            S::from_usize(rng.gen_range(1..=5usize)) / S::from_usize(rng.gen_range(1..=10usize))
        }
    };
    let phi = reward.values().values();
    let mut u = vec![S::zero(); model.len()];
    for &id in model.level(model.n_steps()) {
        u[id.index()] = phi[id.index()].clone() + xi();
    }
    for t in (0..model.n_steps()).rev() {
        for &id in model.level(t) {
            let cont = model.expect_children(id, &u);
            u[id.index()] = S::max_of(&phi[id.index()], &cont) + xi();
        }
    }
    AdaptedFamily::from_vec(u)
}
