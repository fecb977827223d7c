//! Optimal and ε-optimal stopping rules extracted from a [`SnellResult`].
//!
//! * [`minimal_optimal`]: first node (at or after the start rule) with `v = φ`.
//! * [`maximal_optimal`]: first node where `v` strictly exceeds its
//!   continuation, i.e. the last instant before the Doob compensator moves.
//! * [`epsilon_optimal`]: first node with `φ ≥ (1 − ε)·v` or `φ ≥ v − ε`.
//!
//! Ties `v = φ = continuation` make θ* stop and θ̌ continue.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{activation, expectation_under_rule, time_distribution, Model, NodeId, StoppingRule};
use crate::reward::RewardFamily;
use crate::scalar::Scalar;
use crate::snell::SnellResult;

pub const RULE_CSV_SCHEMA: &str = "optstop.rule.v1";
pub const TIME_DIST_CSV_SCHEMA: &str = "optstop.time_distribution.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsilonKind {
    #[default]
    Multiplicative,
    Additive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonMode<S> {
    kind: EpsilonKind,
    epsilon: S,
}

impl<S: Scalar> EpsilonMode<S> {
    pub fn new(kind: EpsilonKind, epsilon: S) -> Result<Self> {
        if epsilon <= S::zero() || epsilon >= S::one() {
            return Err(Error::EpsilonOutOfRange(epsilon.to_string()));
        }
        Ok(Self { kind, epsilon })
    }

    pub fn multiplicative(epsilon: S) -> Result<Self> {
        Self::new(EpsilonKind::Multiplicative, epsilon)
    }

    pub fn additive(epsilon: S) -> Result<Self> {
        Self::new(EpsilonKind::Additive, epsilon)
    }

    pub fn kind(&self) -> EpsilonKind {
        self.kind
    }

    pub fn epsilon(&self) -> &S {
        &self.epsilon
    }

    /// Whether a node with reward `phi` and value `v` satisfies the
    /// penalized stopping condition.
    fn accepts(&self, phi: &S, v: &S) -> bool {
        // a float tie with v is a stop for θ*, so it must be one here too
        phi.ties(v)
            || match self.kind {
                EpsilonKind::Multiplicative => *phi >= (S::one() - self.epsilon.clone()) * v.clone(),
                EpsilonKind::Additive => *phi >= v.clone() - self.epsilon.clone(),
            }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingReport<S> {
    pub rule: StoppingRule,
    /// `E[φ(θ)]`.
    pub value: S,
    /// `E[v(S)] − E[φ(θ)]` for the start rule `S`.
    pub gap: S,
    /// Mass of `{θ = t}` per level.
    pub time_distribution: Vec<S>,
}

impl<S: Scalar> StoppingReport<S> {
    pub fn is_optimal(&self) -> bool {
        self.gap.ties(&S::zero())
    }

    /// `E[θ]` in grid levels.
    pub fn mean_level(&self) -> f64 {
        self.time_distribution
            .iter()
            .enumerate()
            .map(|(t, m)| t as f64 * m.to_f64())
            .sum()
    }
}

fn first_qualifying<S: Scalar>(
    model: &Model<S>,
    from: &StoppingRule,
    mut qualifies: impl FnMut(NodeId) -> bool,
) -> Result<StoppingRule> {
    let active = activation(model, from)?;
    Ok(StoppingRule::from_predicate(model, |id| active[id.index()] && qualifies(id)))
}

/// Nodes where a float comparison was decided by the tie tolerance rather
/// than bitwise equality, for `v` against `φ` and against the continuation.
pub fn near_ties<S: Scalar>(result: &SnellResult<S>, reward: &RewardFamily<S>) -> Vec<NodeId> {
    result
        .v()
        .iter()
        .filter(|(id, v)| {
            v.is_near_tie(reward.get(*id)) || result.continuation(*id).is_some_and(|c| v.is_near_tie(c))
        })
        .map(|(id, _)| id)
        .collect()
}

fn warn_near_ties<S: Scalar>(result: &SnellResult<S>, reward: &RewardFamily<S>, what: &str) {
    let ties = near_ties(result, reward);
    if !ties.is_empty() {
        let shown = &ties[..ties.len().min(8)];
        tracing::warn!(rule = what, count = ties.len(), first = ?shown, "stopping decision relied on float tie tolerance");
    }
}

/// θ*: stop at the first node, at or after `from`, where `v = φ`.
pub fn minimal_optimal<S: Scalar>(
    model: &Model<S>,
    result: &SnellResult<S>,
    reward: &RewardFamily<S>,
    from: &StoppingRule,
) -> Result<StoppingRule> {
    result.ensure_for(model, reward)?;
    warn_near_ties(result, reward, "minimal_optimal");
    first_qualifying(model, from, |id| result.v().get(id).ties(reward.get(id)))
}

/// θ̌: stop at the first node, at or after `from`, where `v` strictly
/// exceeds the continuation value.
pub fn maximal_optimal<S: Scalar>(
    model: &Model<S>,
    result: &SnellResult<S>,
    reward: &RewardFamily<S>,
    from: &StoppingRule,
) -> Result<StoppingRule> {
    result.ensure_for(model, reward)?;
    warn_near_ties(result, reward, "maximal_optimal");
    first_qualifying(model, from, |id| result.is_strict(id))
}

/// Penalized rule: first node with `φ ≥ (1 − ε)·v` (multiplicative) or
/// `φ ≥ v − ε` (additive).
pub fn epsilon_optimal<S: Scalar>(
    model: &Model<S>,
    result: &SnellResult<S>,
    reward: &RewardFamily<S>,
    mode: &EpsilonMode<S>,
    from: &StoppingRule,
) -> Result<StoppingRule> {
    result.ensure_for(model, reward)?;
    first_qualifying(model, from, |id| mode.accepts(reward.get(id), result.v().get(id)))
}

/// Smallest positive gap `(v − φ)/v` (multiplicative) or `v − φ`
/// (additive) over all nodes, capped at 1. The penalized rule coincides
/// with θ* for every ε strictly below this value.
pub fn epsilon_collapse_threshold<S: Scalar>(result: &SnellResult<S>, reward: &RewardFamily<S>, kind: EpsilonKind) -> S {
    result
        .v()
        .iter()
        .filter(|(id, v)| !v.ties(reward.get(*id)))
        .filter_map(|(id, v)| {
            let diff = v.clone() - reward.get(id).clone();
            match kind {
                EpsilonKind::Multiplicative if *v > S::zero() => Some(diff / v.clone()),
                EpsilonKind::Multiplicative => None,
                EpsilonKind::Additive => Some(diff),
            }
        })
        .filter(|g| *g > S::zero())
        .fold(S::one(), |m, g| if g < m { g } else { m })
}

/// `E[v(S)]` for the start rule `S`.
pub fn start_value<S: Scalar>(model: &Model<S>, result: &SnellResult<S>, from: &StoppingRule) -> Result<S> {
    let root = StoppingRule::stop_at_root(model);
    expectation_under_rule(model, from, result.v(), &root)
}

pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    rule: &StoppingRule,
    reward: &RewardFamily<S>,
    result: &SnellResult<S>,
    from: &StoppingRule,
) -> Result<StoppingReport<S>> {
    result.ensure_for(model, reward)?;
    let value = expectation_under_rule(model, rule, reward.values(), from)?;
    let gap = start_value(model, result, from)? - value.clone();
    let time_distribution = time_distribution(model, rule, from)?;
    Ok(StoppingReport { rule: rule.clone(), value, gap, time_distribution })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalReport {
    /// Nodes inside `[from, θ)` where `v ≠ continuation`.
    pub failures: Vec<NodeId>,
    /// Number of nodes inspected.
    pub checked: usize,
}

impl IntervalReport {
    pub fn passes(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks that the envelope is a martingale on the stochastic interval
/// `[from, θ)`: `v = continuation` at every node reached after `from`
/// fires and before `rule` stops.
pub fn martingale_interval_check<S: Scalar>(
    model: &Model<S>,
    result: &SnellResult<S>,
    from: &StoppingRule,
    rule: &StoppingRule,
) -> Result<IntervalReport> {
    crate::model::require_valid(model, rule, "rule")?;
    let active = activation(model, from)?;
    let mut halted = vec![false; model.len()];
    let mut report = IntervalReport::default();
    for level in model.levels() {
        for &id in level {
            let parents = model.node(id).parents();
            let inherited = !parents.is_empty() && parents.iter().all(|(p, _)| halted[p.index()]);
            halted[id.index()] = inherited || (active[id.index()] && rule.is_stop(id));
            if active[id.index()] && !halted[id.index()] {
                if let Some(c) = result.continuation(id) {
                    report.checked += 1;
                    if !result.v().get(id).ties(c) {
                        report.failures.push(id);
                    }
                }
            }
        }
    }
    Ok(report)
}

/// `{n : v(n) = φ(n)}`.
pub fn exercise_region<S: Scalar>(result: &SnellResult<S>, reward: &RewardFamily<S>) -> Result<Vec<NodeId>> {
    if result.v().len() != reward.values().len() {
        return Err(Error::StaleResult);
    }
    Ok(result
        .v()
        .iter()
        .filter(|(id, v)| v.ties(reward.get(*id)))
        .map(|(id, _)| id)
        .collect())
}

/// Clamps the stopping time of `rule` into the window `[start, end]`
/// (or `]start, end]` when `strict`), i.e. `max(start, min(θ, end))`.
///
/// In the strict variant the lower end is the step after `start` on
/// `{start < T}` and `T` on `{start = T}`.
pub fn restrict_window<S: Scalar>(
    model: &Model<S>,
    rule: &StoppingRule,
    start: &StoppingRule,
    end: &StoppingRule,
    strict: bool,
) -> Result<StoppingRule> {
    let theta = activation(model, rule)?;
    let started = activation(model, start)?;
    let ended = activation(model, end)?;
    let lower: Vec<bool> = if strict {
        let mut lower = vec![false; model.len()];
        for id in model.node_ids() {
            let parents = model.node(id).parents();
            let from_parent = parents.first().is_some_and(|(p, _)| started[p.index()]);
            if parents.iter().any(|(p, _)| started[p.index()] != from_parent) {
                return Err(Error::UnsupportedModelKind(format!(
                    "strict window start is path-dependent at recombining node {id}"
                )));
            }
            lower[id.index()] = from_parent || (model.is_terminal(id) && started[id.index()]);
        }
        lower
    } else {
        started
    };
    // end must not fire before the lower end of the window
    if model.node_ids().any(|id| ended[id.index()] && !lower[id.index()]) {
        return Err(Error::WindowOrderViolation);
    }
    Ok(StoppingRule::from_predicate(model, |id| {
        let i = id.index();
        lower[i] && (theta[i] || ended[i])
    }))
}

/// CSV of `(node, decision)`.
pub fn write_rule_csv<S: Scalar, W: Write>(out: W, model: &Model<S>, rule: &StoppingRule) -> std::io::Result<()> {
    let mut out = out;
    writeln!(out, "# schema: {RULE_CSV_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "level", "decision"])?;
    for id in model.node_ids() {
        let d = if rule.is_stop(id) { "STOP" } else { "CONTINUE" };
        w.write_record([model.node(id).label(), &model.node(id).level().to_string(), d])?;
    }
    w.flush()
}

/// CSV of `(t, time, mass)`.
pub fn write_time_distribution_csv<S: Scalar, W: Write>(out: W, model: &Model<S>, dist: &[S]) -> std::io::Result<()> {
    let mut out = out;
    writeln!(out, "# schema: {TIME_DIST_CSV_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "time", "mass"])?;
    for (t, m) in dist.iter().enumerate() {
        w.write_record([t.to_string(), model.grid().time(t).to_string(), m.to_string()])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_binomial, induced_times, pathwise_le, Decision, ModelKind};
    use crate::reward::{constant, digital_usc, put};
    use crate::scalar::{ratio, Rational};
    use crate::snell::compute;

    fn r(p: i64, q: i64) -> Rational {
        ratio(p, q)
    }

    fn tree() -> Model<Rational> {
        build_binomial(r(4, 1), r(2, 1), r(1, 2), r(1, 2), 2, 1.0, ModelKind::ExactTree).unwrap()
    }

    const ROOT: NodeId = NodeId(0);
    const UP: NodeId = NodeId(1);
    const DOWN: NodeId = NodeId(2);

    fn put_setup() -> (Model<Rational>, RewardFamily<Rational>, SnellResult<Rational>, StoppingRule) {
        let m = tree();
        let phi = put(&m, r(5, 1)).unwrap();
        let res = compute(&m, &phi).unwrap();
        let root = StoppingRule::stop_at_root(&m);
        (m, phi, res, root)
    }

    #[test]
    fn minimal_put() {
        let (m, phi, res, root) = put_setup();
        let star = minimal_optimal(&m, &res, &phi, &root).unwrap();
        // leaves: uu, ud (up branch), du, dd (down branch)
        assert_eq!(induced_times(&m, &star, &root).unwrap(), vec![2, 2, 1, 1]);
        let rep = evaluate(&m, &star, &phi, &res, &root).unwrap();
        assert_eq!(rep.value, r(7, 4));
        assert!(rep.is_optimal());
        assert_eq!(rep.time_distribution, vec![r(0, 1), r(1, 2), r(1, 2)]);
    }

    #[test]
    fn maximal_put() {
        let (m, phi, res, root) = put_setup();
        let check = maximal_optimal(&m, &res, &phi, &root).unwrap();
        assert_eq!(induced_times(&m, &check, &root).unwrap(), vec![2, 2, 1, 1]);
        assert_eq!(evaluate(&m, &check, &phi, &res, &root).unwrap().value, r(7, 4));
    }

    #[test]
    fn constant_extremes() {
        let m = tree();
        let phi = constant(&m, r(2, 1)).unwrap();
        let res = compute(&m, &phi).unwrap();
        let root = StoppingRule::stop_at_root(&m);
        let star = minimal_optimal(&m, &res, &phi, &root).unwrap();
        let check = maximal_optimal(&m, &res, &phi, &root).unwrap();
        assert_eq!(induced_times(&m, &star, &root).unwrap(), vec![0; 4]);
        assert_eq!(induced_times(&m, &check, &root).unwrap(), vec![2; 4]);
        let mid = StoppingRule::stop_at_level(&m, 1);
        assert!(evaluate(&m, &mid, &phi, &res, &root).unwrap().is_optimal());
        let eps = epsilon_optimal(&m, &res, &phi, &EpsilonMode::multiplicative(r(1, 3)).unwrap(), &root).unwrap();
        assert_eq!(induced_times(&m, &eps, &root).unwrap(), vec![0; 4]);
        assert!(martingale_interval_check(&m, &res, &root, &check).unwrap().passes());
        assert_eq!(exercise_region(&res, &phi).unwrap().len(), m.len());
    }

    #[test]
    fn zero_reward_is_all_optimal() {
        let m = tree();
        let phi = constant(&m, r(0, 1)).unwrap();
        let res = compute(&m, &phi).unwrap();
        let root = StoppingRule::stop_at_root(&m);
        let check = maximal_optimal(&m, &res, &phi, &root).unwrap();
        assert_eq!(induced_times(&m, &check, &root).unwrap(), vec![2; 4]);
        assert_eq!(*res.root_value(), r(0, 1));
    }

    #[test]
    fn digital_stops_at_root() {
        let m = tree();
        let phi = digital_usc(&m, r(4, 1)).unwrap();
        let res = compute(&m, &phi).unwrap();
        let root = StoppingRule::stop_at_root(&m);
        let star = minimal_optimal(&m, &res, &phi, &root).unwrap();
        assert_eq!(induced_times(&m, &star, &root).unwrap(), vec![0; 4]);
        // v = φ on root, up node and every terminal (the state-1 leaf has v = φ = 0)
        let region = exercise_region(&res, &phi).unwrap();
        let mut expected = vec![ROOT, UP];
        expected.extend(m.level(2));
        assert_eq!(region, expected);
    }

    #[test]
    fn epsilon_examples() {
        let (m, phi, res, root) = put_setup();
        let mode = EpsilonMode::multiplicative(r(9, 10)).unwrap();
        let rule = epsilon_optimal(&m, &res, &phi, &mode, &root).unwrap();
        assert_eq!(induced_times(&m, &rule, &root).unwrap(), vec![0; 4]);
        let value = evaluate(&m, &rule, &phi, &res, &root).unwrap().value;
        assert_eq!(value, r(1, 1));
        assert!(value >= r(1, 10) * r(7, 4));

        // gaps (v − φ)/v: root 3/7, up 1 → ε₀ = 3/7
        let eps0 = epsilon_collapse_threshold(&res, &phi, EpsilonKind::Multiplicative);
        assert_eq!(eps0, r(3, 7));
        let star = minimal_optimal(&m, &res, &phi, &root).unwrap();
        for eps in [eps0.clone() / r(2, 1), eps0.clone() * r(999, 1000)] {
            let rule = epsilon_optimal(&m, &res, &phi, &EpsilonMode::multiplicative(eps).unwrap(), &root).unwrap();
            assert_eq!(rule, star);
        }
        // at ε₀ itself the root qualifies
        let at = epsilon_optimal(&m, &res, &phi, &EpsilonMode::multiplicative(eps0).unwrap(), &root).unwrap();
        assert!(at.is_stop(ROOT));

        let add0 = epsilon_collapse_threshold(&res, &phi, EpsilonKind::Additive);
        assert_eq!(add0, r(1, 2));
        let add = epsilon_optimal(&m, &res, &phi, &EpsilonMode::additive(r(1, 4)).unwrap(), &root).unwrap();
        assert_eq!(add, star);
    }

    #[test]
    fn epsilon_range() {
        for bad in [r(0, 1), r(1, 1), r(-1, 2), r(3, 2)] {
            assert!(matches!(EpsilonMode::multiplicative(bad), Err(Error::EpsilonOutOfRange(_))));
        }
    }

    #[test]
    fn evaluate_suboptimal_rules() {
        let (m, phi, res, root) = put_setup();
        let now = evaluate(&m, &root, &phi, &res, &root).unwrap();
        assert_eq!((now.value.clone(), now.gap.clone()), (r(1, 1), r(3, 4)));
        let late = evaluate(&m, &StoppingRule::stop_at_horizon(&m), &phi, &res, &root).unwrap();
        assert_eq!((late.value.clone(), late.gap.clone()), (r(3, 2), r(1, 4)));
        assert!(!late.is_optimal());
        assert_eq!(late.mean_level(), 2.0);
    }

    #[test]
    fn interval_check() {
        let (m, phi, res, root) = put_setup();
        let star = minimal_optimal(&m, &res, &phi, &root).unwrap();
        assert!(martingale_interval_check(&m, &res, &root, &star).unwrap().passes());
        let late = StoppingRule::stop_at_horizon(&m);
        let rep = martingale_interval_check(&m, &res, &root, &late).unwrap();
        assert_eq!(rep.failures, vec![DOWN]);
    }

    #[test]
    fn put_exercise_region() {
        let (m, phi, res, _) = put_setup();
        let mut expected = vec![DOWN];
        expected.extend(m.level(2));
        assert_eq!(exercise_region(&res, &phi).unwrap(), expected);
    }

    #[test]
    fn stale_results_rejected() {
        let (m, phi, res, root) = put_setup();
        let other = constant(&m, r(1, 1)).unwrap();
        assert!(matches!(minimal_optimal(&m, &res, &other, &root), Err(Error::StaleResult)));
        assert!(matches!(maximal_optimal(&m, &res, &other, &root), Err(Error::StaleResult)));
        let _ = phi;
    }

    #[test]
    fn start_rules_compose() {
        let (m, phi, res, _) = put_setup();
        let from = StoppingRule::stop_at_level(&m, 1);
        let star = minimal_optimal(&m, &res, &phi, &from).unwrap();
        let check = maximal_optimal(&m, &res, &phi, &from).unwrap();
        assert_eq!(induced_times(&m, &star, &from).unwrap(), vec![2, 2, 1, 1]);
        assert!(pathwise_le(&m, &star, &check, &from).unwrap());
        let rep = evaluate(&m, &star, &phi, &res, &from).unwrap();
        // E[v at level 1] = (1/2 + 3)/2
        assert_eq!(rep.value, r(7, 4));
        assert!(rep.is_optimal());
    }

    #[test]
    fn windows() {
        let (m, _, _, root) = put_setup();
        let horizon = StoppingRule::stop_at_horizon(&m);
        let level1 = StoppingRule::stop_at_level(&m, 1);
        let rule = StoppingRule::from_predicate(&m, |id| id == DOWN);

        let same = restrict_window(&m, &rule, &root, &horizon, false).unwrap();
        assert_eq!(induced_times(&m, &same, &root).unwrap(), induced_times(&m, &rule, &root).unwrap());

        let pinned = restrict_window(&m, &rule, &level1, &level1, false).unwrap();
        assert_eq!(induced_times(&m, &pinned, &root).unwrap(), vec![1; 4]);

        let strict = restrict_window(&m, &root, &root, &horizon, true).unwrap();
        assert_eq!(induced_times(&m, &strict, &root).unwrap(), vec![1; 4]);

        assert!(matches!(
            restrict_window(&m, &rule, &horizon, &level1, false),
            Err(Error::WindowOrderViolation)
        ));
        assert!(matches!(
            restrict_window(&m, &rule, &level1, &level1, true),
            Err(Error::WindowOrderViolation)
        ));
        // {S = T}: strict window collapses to T
        let t = restrict_window(&m, &rule, &horizon, &horizon, true).unwrap();
        assert_eq!(induced_times(&m, &t, &root).unwrap(), vec![2; 4]);
    }

    #[test]
    fn rule_csv() {
        let (m, phi, res, root) = put_setup();
        let star = minimal_optimal(&m, &res, &phi, &root).unwrap();
        let mut buf = Vec::new();
        write_rule_csv(&mut buf, &m, &star).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# schema: optstop.rule.v1\nnode,level,decision\n0,0,CONTINUE\n"));
        assert_eq!(star.decision(DOWN), Some(Decision::Stop));
    }

    #[test]
    fn float_near_ties_are_reported() {
        let m: Model<f64> = build_binomial(4.0, 2.0, 0.5, 0.5, 2, 1.0, ModelKind::ExactTree).unwrap();
        let phi = crate::reward::from_function(&m, "put", |_, x| (5.0 - x).max(0.0)).unwrap();
        let res = compute(&m, &phi).unwrap();
        assert!(near_ties(&res, &phi).is_empty());
        assert_eq!(*res.root_value(), 1.75);
    }
}
