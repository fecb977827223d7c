//! Snell envelope by level-synchronous backward induction, together with
//! the checks that characterize it: supermartingale, dominance,
//! minimality, `v = φ ∨ v⁺`, and the Doob decomposition `v = M − A`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{AdaptedFamily, Model, ModelKind, NodeId};
use crate::reward::RewardFamily;
use crate::scalar::Scalar;

/// Version tag written as the first line of the node-table CSV.
pub const SNELL_CSV_SCHEMA: &str = "optstop.snell.v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SnellResult<S> {
    v: AdaptedFamily<S>,
    vplus: AdaptedFamily<S>,
    model_fingerprint: u64,
    reward_fingerprint: u64,
    n_terminal_from: usize,
}

impl<S: Scalar> SnellResult<S> {
    /// Value function `v(n)`.
    pub fn v(&self) -> &AdaptedFamily<S> {
        &self.v
    }

    /// Strictly-later value `v⁺(n)`: `E[v_{t+1} | F_t]` off the terminal
    /// level, `φ` on it.
    pub fn vplus(&self) -> &AdaptedFamily<S> {
        &self.vplus
    }

    /// Continuation value; `None` on terminal nodes.
    pub fn continuation(&self, id: NodeId) -> Option<&S> {
        (id.index() < self.n_terminal_from).then(|| self.vplus.get(id))
    }

    pub fn root_value(&self) -> &S {
        self.v.get(NodeId(0))
    }

    pub fn is_for(&self, model: &Model<S>, reward: &RewardFamily<S>) -> bool {
        self.model_fingerprint == model.fingerprint() && self.reward_fingerprint == reward.fingerprint()
    }

    pub(crate) fn ensure_for(&self, model: &Model<S>, reward: &RewardFamily<S>) -> Result<()> {
        if self.is_for(model, reward) {
            Ok(())
        } else {
            Err(Error::StaleResult)
        }
    }

    /// Non-terminal nodes where the continuation strictly falls below `v`.
    pub(crate) fn is_strict(&self, id: NodeId) -> bool {
        self.continuation(id).is_some_and(|c| self.v.get(id).strictly_greater(c))
    }
}

/// Backward induction `v_N = φ_N`, `v_t = max(φ_t, E[v_{t+1} | F_t])`.
pub fn compute<S: Scalar>(model: &Model<S>, reward: &RewardFamily<S>) -> Result<SnellResult<S>> {
    if !reward.belongs_to(model) {
        return Err(Error::ModelRewardMismatch);
    }
    let n = model.len();
    let phi = reward.values().values();
    let mut v = phi.to_vec();
    let mut vplus = phi.to_vec();
    for t in (0..model.n_steps()).rev() {
        for &id in model.level(t) {
            let cont = model.expect_children(id, &v);
            v[id.index()] = S::max_of(&phi[id.index()], &cont);
            vplus[id.index()] = cont;
        }
    }
    let n_terminal_from = n - model.level(model.n_steps()).len();
    Ok(SnellResult {
        v: AdaptedFamily::from_vec(v),
        vplus: AdaptedFamily::from_vec(vplus),
        model_fingerprint: model.fingerprint(),
        reward_fingerprint: reward.fingerprint(),
        n_terminal_from,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupermartingaleReport<S> {
    /// `(node, h(node), E[h_{t+1} | F_t](node))` wherever `h < E[h_{t+1}|F_t]`.
    pub violations: Vec<(NodeId, S, S)>,
}

impl<S> SupermartingaleReport<S> {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_supermartingale<S: Scalar>(model: &Model<S>, h: &AdaptedFamily<S>) -> Result<SupermartingaleReport<S>> {
    model.check_family(h)?;
    let mut violations = Vec::new();
    for t in 0..model.n_steps() {
        for &id in model.level(t) {
            let cont = model.expect_children(id, h.values());
            if cont.strictly_greater(h.get(id)) {
                violations.push((id, h.get(id).clone(), cont));
            }
        }
    }
    Ok(SupermartingaleReport { violations })
}

/// Martingale check: `h(n) = E[h_{t+1}|F_t](n)` on every non-terminal node.
pub fn check_martingale<S: Scalar>(model: &Model<S>, h: &AdaptedFamily<S>) -> Result<Vec<NodeId>> {
    model.check_family(h)?;
    Ok((0..model.n_steps())
        .flat_map(|t| model.level(t).iter().copied())
        .filter(|&id| !model.expect_children(id, h.values()).ties(h.get(id)))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    /// Nodes where `h < φ`.
    pub violations: Vec<NodeId>,
}

impl DominanceReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_dominance<S: Scalar>(h: &AdaptedFamily<S>, reward: &RewardFamily<S>) -> Result<DominanceReport> {
    if h.len() != reward.values().len() {
        return Err(Error::ModelRewardMismatch);
    }
    let violations = h
        .iter()
        .filter(|(id, x)| reward.get(*id).strictly_greater(x))
        .map(|(id, _)| id)
        .collect();
    Ok(DominanceReport { violations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallestReport {
    pub is_supermartingale: bool,
    pub dominates: bool,
    /// Nodes with `u < v`. Nonempty only if `u` is a dominating
    /// supermartingale, which would contradict minimality of `v`.
    pub counterexamples: Vec<NodeId>,
}

impl SmallestReport {
    /// True when the minimality claim `u ≥ v` was tested and held.
    pub fn confirms_minimality(&self) -> bool {
        self.is_supermartingale && self.dominates && self.counterexamples.is_empty()
    }
}

/// If `u` is a supermartingale dominating `φ`, checks `u ≥ v` nodewise.
pub fn check_smallest<S: Scalar>(
    model: &Model<S>,
    u: &AdaptedFamily<S>,
    reward: &RewardFamily<S>,
    result: &SnellResult<S>,
) -> Result<SmallestReport> {
    result.ensure_for(model, reward)?;
    let is_supermartingale = check_supermartingale(model, u)?.holds();
    let dominates = check_dominance(u, reward)?.holds();
    let counterexamples = if is_supermartingale && dominates {
        u.iter()
            .filter(|(id, x)| result.v().get(*id).strictly_greater(x))
            .map(|(id, _)| id)
            .collect()
    } else {
        Vec::new()
    };
    Ok(SmallestReport { is_supermartingale, dominates, counterexamples })
}

/// Nodes where `v ≠ max(φ, v⁺)`.
pub fn vplus_identity_check<S: Scalar>(result: &SnellResult<S>, reward: &RewardFamily<S>) -> Result<Vec<NodeId>> {
    if result.reward_fingerprint != reward.fingerprint() {
        return Err(Error::StaleResult);
    }
    Ok(result
        .v()
        .iter()
        .filter(|(id, v)| !S::max_of(reward.get(*id), result.vplus().get(*id)).ties(v))
        .map(|(id, _)| id)
        .collect())
}

/// Raw node sets `{v = v⁺}` and `{v > v⁺}`, for inspection.
pub fn vplus_partition<S: Scalar>(result: &SnellResult<S>) -> (Vec<NodeId>, Vec<NodeId>) {
    result
        .v()
        .iter()
        .map(|(id, _)| id)
        .partition(|&id| result.v().get(id).ties(result.vplus().get(id)))
}

/// `{n non-terminal : v(n) > E[v_{t+1} | F_t](n)}`.
pub fn strict_supermartingale_region<S: Scalar>(result: &SnellResult<S>, reward: &RewardFamily<S>) -> Result<Vec<NodeId>> {
    if result.reward_fingerprint != reward.fingerprint() {
        return Err(Error::StaleResult);
    }
    Ok(result.v().iter().map(|(id, _)| id).filter(|&id| result.is_strict(id)).collect())
}

/// `v = M − A` with `M` a martingale and `A` predictable, nondecreasing,
/// `A(root) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoobDecomposition<S> {
    pub martingale: AdaptedFamily<S>,
    pub compensator: AdaptedFamily<S>,
}

/// Requires an exact tree: on a lattice `A` depends on the path.
pub fn doob_decompose<S: Scalar>(model: &Model<S>, result: &SnellResult<S>) -> Result<DoobDecomposition<S>> {
    if result.model_fingerprint != model.fingerprint() {
        return Err(Error::StaleResult);
    }
    if model.kind() != ModelKind::ExactTree {
        return Err(Error::UnsupportedModelKind(
            "the compensator is path-dependent on a recombining lattice".into(),
        ));
    }
    let mut a = vec![S::zero(); model.len()];
    let mut m = vec![S::zero(); model.len()];
    m[0] = result.root_value().clone();
    for t in 0..model.n_steps() {
        for &id in model.level(t) {
            let cont = result.continuation(id).expect("non-terminal").clone();
            let next_a = a[id.index()].clone() + (result.v().get(id).clone() - cont);
            for (c, _) in model.node(id).children() {
                a[c.index()] = next_a.clone();
                m[c.index()] = result.v().get(*c).clone() + next_a.clone();
            }
        }
    }
    Ok(DoobDecomposition { martingale: AdaptedFamily::from_vec(m), compensator: AdaptedFamily::from_vec(a) })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DoobReport {
    pub root_compensator_nonzero: bool,
    /// Nodes whose children's `A` is below their own.
    pub decreasing_at: Vec<NodeId>,
    /// Nodes whose children disagree on `A`.
    pub not_predictable_at: Vec<NodeId>,
    pub not_martingale_at: Vec<NodeId>,
    /// Nodes with `v ≠ M − A`.
    pub identity_fails_at: Vec<NodeId>,
}

impl DoobReport {
    pub fn holds(&self) -> bool {
        !self.root_compensator_nonzero
            && self.decreasing_at.is_empty()
            && self.not_predictable_at.is_empty()
            && self.not_martingale_at.is_empty()
            && self.identity_fails_at.is_empty()
    }
}

impl<S: Scalar> DoobDecomposition<S> {
    pub fn check(&self, model: &Model<S>, v: &AdaptedFamily<S>) -> Result<DoobReport> {
        model.check_family(v)?;
        let a = &self.compensator;
        let mut report = DoobReport {
            root_compensator_nonzero: !a.get(model.root()).is_zero(),
            not_martingale_at: check_martingale(model, &self.martingale)?,
            ..Default::default()
        };
        for t in 0..model.n_steps() {
            for &id in model.level(t) {
                let kids = model.node(id).children();
                let first = a.get(kids[0].0);
                if kids.iter().any(|(c, _)| !a.get(*c).ties(first)) {
                    report.not_predictable_at.push(id);
                }
                if kids.iter().any(|(c, _)| a.get(id).strictly_greater(a.get(*c))) {
                    report.decreasing_at.push(id);
                }
            }
        }
        report.identity_fails_at = model
            .node_ids()
            .filter(|&id| !(self.martingale.get(id).clone() - a.get(id).clone()).ties(v.get(id)))
            .collect();
        Ok(report)
    }
}

/// Writes one row per node: id, level, state, phi, v, vplus, A, M.
/// `A` and `M` are left empty when no decomposition is given.
pub fn write_csv<S: Scalar, W: Write>(
    out: W,
    model: &Model<S>,
    reward: &RewardFamily<S>,
    result: &SnellResult<S>,
    doob: Option<&DoobDecomposition<S>>,
) -> std::io::Result<()> {
    let mut out = out;
    writeln!(out, "# schema: {SNELL_CSV_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "level", "state", "phi", "v", "vplus", "A", "M"])?;
    for id in model.node_ids() {
        let node = model.node(id);
        let (a, m) = match doob {
            Some(d) => (d.compensator.get(id).to_string(), d.martingale.get(id).to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            node.label().to_string(),
            node.level().to_string(),
            node.state().to_string(),
            reward.get(id).to_string(),
            result.v().get(id).to_string(),
            result.vplus().get(id).to_string(),
            a,
            m,
        ])?;
    }
    w.flush()
}
