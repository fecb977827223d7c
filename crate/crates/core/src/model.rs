//! Finite filtered probability spaces in discrete time.
//!
//! A [`Model`] is a rooted, level-synchronous graph. On an exact tree every
//! node is an atom of `F_t` (node identity encodes the full path history);
//! on a Markov lattice nodes recombine and only `(level, state)` is known.
//! Stopping times are per-node stop/continue maps ([`StoppingRule`]).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Arithmetic, Scalar};

/// Hard cap on exact-tree depth for generated trees (2^depth leaves).
pub const MAX_TREE_STEPS: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ExactTree,
    MarkovLattice,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::ExactTree => f.write_str("exact_tree"),
            ModelKind::MarkovLattice => f.write_str("markov_lattice"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::ParameterOutOfRange(
                "time grid needs at least one step".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::ParameterOutOfRange("time grid must start at 0".into()));
        }
        if !times.iter().all(|t| t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::ParameterOutOfRange(
                "time grid must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { times })
    }

    pub fn uniform(n_steps: usize, horizon: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::ParameterOutOfRange("n_steps must be at least 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let mut times: Vec<f64> = (0..=n_steps)
            .map(|i| horizon * i as f64 / n_steps as f64)
            .collect();
        times[n_steps] = horizon;
        Self::new(times)
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.n_steps()]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, level: usize) -> f64 {
        self.times[level]
    }
}

#[derive(Debug, Clone)]
pub struct Node<S> {
    level: usize,
    state: S,
    children: Vec<(NodeId, S)>,
    parents: Vec<(NodeId, S)>,
    label: String,
}

impl<S> Node<S> {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    /// `(child, transition probability)` pairs.
    pub fn children(&self) -> &[(NodeId, S)] {
        &self.children
    }

    pub fn parents(&self) -> &[(NodeId, S)] {
        &self.parents
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Node under construction; `children` index into the draft list.
#[derive(Debug, Clone)]
pub(crate) struct NodeDraft<S> {
    pub label: Option<String>,
    pub level: usize,
    pub state: S,
    pub children: Vec<(usize, S)>,
}

#[derive(Debug, Clone)]
pub struct Model<S> {
    grid: TimeGrid,
    kind: ModelKind,
    nodes: Vec<Node<S>>,
    levels: Vec<Vec<NodeId>>,
    fingerprint: u64,
}

impl<S: Scalar> PartialEq for Model<S> {
    /// Structural equality; node labels are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.grid == other.grid
            && self.levels == other.levels
            && self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(&other.nodes).all(|(a, b)| {
                a.level == b.level && a.state == b.state && a.children == b.children
            })
    }
}

impl<S: Scalar> Model<S> {
    pub(crate) fn assemble(grid: TimeGrid, kind: ModelKind, drafts: Vec<NodeDraft<S>>) -> Result<Self> {
        if drafts.is_empty() {
            return Err(Error::MalformedSpec("model has no nodes".into()));
        }
        let n_steps = grid.n_steps();
        let label_of = |i: usize| -> String {
            drafts[i].label.clone().unwrap_or_else(|| i.to_string())
        };

        let roots: Vec<usize> = (0..drafts.len()).filter(|&i| drafts[i].level == 0).collect();
        if roots.len() != 1 {
            return Err(Error::MalformedSpec(format!(
                "expected exactly one node at level 0, found {}",
                roots.len()
            )));
        }

        let mut parent_count = vec![0usize; drafts.len()];
        for (i, d) in drafts.iter().enumerate() {
            if d.level > n_steps {
                return Err(Error::MalformedSpec(format!(
                    "node {} has level {} beyond n_steps {}",
                    label_of(i),
                    d.level,
                    n_steps
                )));
            }
            if d.level == n_steps && !d.children.is_empty() {
                return Err(Error::MalformedSpec(format!(
                    "terminal node {} has children",
                    label_of(i)
                )));
            }
            if d.level < n_steps && d.children.is_empty() {
                return Err(Error::MalformedSpec(format!(
                    "non-terminal node {} has no children",
                    label_of(i)
                )));
            }
            let mut seen = HashSet::new();
            let mut sum = S::zero();
            for (c, p) in &d.children {
                if *c >= drafts.len() {
                    return Err(Error::MalformedSpec(format!(
                        "node {} references a missing child",
                        label_of(i)
                    )));
                }
                if !seen.insert(*c) {
                    return Err(Error::MalformedSpec(format!(
                        "duplicate edge {} -> {}",
                        label_of(i),
                        label_of(*c)
                    )));
                }
                if drafts[*c].level != d.level + 1 {
                    return Err(Error::MalformedSpec(format!(
                        "edge {} -> {} does not advance exactly one level",
                        label_of(i),
                        label_of(*c)
                    )));
                }
                if *p <= S::zero() {
                    return Err(Error::MalformedSpec(format!(
                        "edge {} -> {} has non-positive probability {p}",
                        label_of(i),
                        label_of(*c)
                    )));
                }
                sum = sum + p.clone();
                parent_count[*c] += 1;
            }
            if !d.children.is_empty() && !sum.is_unit_sum() {
                return Err(Error::ProbabilitySumViolation {
                    node: label_of(i),
                    sum: sum.to_string(),
                });
            }
        }
        for (i, d) in drafts.iter().enumerate() {
            if d.level > 0 && parent_count[i] == 0 {
                return Err(Error::OrphanNode(label_of(i)));
            }
            if kind == ModelKind::ExactTree && parent_count[i] > 1 {
                return Err(Error::MalformedSpec(format!(
                    "node {} has {} parents in an exact tree",
                    label_of(i),
                    parent_count[i]
                )));
            }
        }

        // Level-ordered, stable renumbering.
        let mut order: Vec<usize> = (0..drafts.len()).collect();
        order.sort_by_key(|&i| drafts[i].level);
        let mut new_id = vec![0usize; drafts.len()];
        for (new, &old) in order.iter().enumerate() {
            new_id[old] = new;
        }

        let mut nodes: Vec<Node<S>> = order
            .iter()
            .map(|&old| {
                let d = &drafts[old];
                Node {
                    level: d.level,
                    state: d.state.clone(),
                    children: d
                        .children
                        .iter()
                        .map(|(c, p)| (NodeId(new_id[*c]), p.clone()))
                        .collect(),
                    parents: Vec::new(),
                    label: d.label.clone().unwrap_or_else(|| new_id[old].to_string()),
                }
            })
            .collect();
        for i in 0..nodes.len() {
            let kids = nodes[i].children.clone();
            for (c, p) in kids {
                nodes[c.0].parents.push((NodeId(i), p));
            }
        }
        let mut levels = vec![Vec::new(); n_steps + 1];
        for (i, n) in nodes.iter().enumerate() {
            levels[n.level].push(NodeId(i));
        }
        if let Some(t) = levels.iter().position(|l| l.is_empty()) {
            return Err(Error::MalformedSpec(format!("level {t} has no nodes")));
        }

        let mut hasher = DefaultHasher::new();
        kind.hash(&mut hasher);
        for t in grid.times() {
            hasher.write_u64(t.to_bits());
        }
        for n in &nodes {
            hasher.write_usize(n.level);
            n.state.hash_into(&mut hasher);
            for (c, p) in &n.children {
                hasher.write_usize(c.0);
                p.hash_into(&mut hasher);
            }
        }
        let fingerprint = hasher.finish();

        Ok(Self { grid, kind, nodes, levels, fingerprint })
    }

    pub fn arithmetic(&self) -> Arithmetic {
        S::ARITHMETIC
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node<S> {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node<S>] {
        &self.nodes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn levels(&self) -> &[Vec<NodeId>] {
        &self.levels
    }

    pub fn level(&self, t: usize) -> &[NodeId] {
        &self.levels[t]
    }

    pub fn is_terminal(&self, id: NodeId) -> bool {
        self.nodes[id.0].level == self.n_steps()
    }

    pub fn interior_count(&self) -> usize {
        self.nodes.len() - self.levels[self.n_steps()].len()
    }

    /// Unique parent on an exact tree; `None` at the root.
    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parents.first().map(|(p, _)| *p)
    }

    pub fn require_tree(&self, what: &str) -> Result<()> {
        match self.kind {
            ModelKind::ExactTree => Ok(()),
            ModelKind::MarkovLattice => Err(Error::UnsupportedModelKind(format!(
                "{what} requires an exact tree"
            ))),
        }
    }

    /// One-step conditional expectation `Σ_c p_c · values[c]` at a node.
    pub(crate) fn expect_children(&self, id: NodeId, values: &[S]) -> S {
        self.nodes[id.0]
            .children
            .iter()
            .fold(S::zero(), |acc, (c, p)| acc + p.clone() * values[c.0].clone())
    }

    /// `E[h_{t+1} | F_t]` on every level-`t` node, in `level(t)` order.
    pub fn conditional_expectation(&self, h: &AdaptedFamily<S>, t: usize) -> Result<Vec<S>> {
        if t >= self.n_steps() {
            return Err(Error::LevelOutOfRange { level: t, n_steps: self.n_steps() });
        }
        self.check_family(h)?;
        Ok(self.levels[t]
            .iter()
            .map(|&id| self.expect_children(id, &h.values))
            .collect())
    }

    pub(crate) fn check_family(&self, h: &AdaptedFamily<S>) -> Result<()> {
        if h.len() != self.len() {
            return Err(Error::ModelRewardMismatch);
        }
        Ok(())
    }

    /// Root-to-leaf paths with their probabilities, one per leaf in level order.
    pub fn path_measure(&self) -> Result<impl Iterator<Item = (Vec<NodeId>, S)> + '_> {
        self.require_tree("path_measure")?;
        Ok(self.levels[self.n_steps()].iter().map(move |&leaf| {
            let mut path = vec![leaf];
            let mut prob = S::one();
            let mut cur = leaf;
            while let Some((p, w)) = self.nodes[cur.0].parents.first() {
                prob = prob * w.clone();
                path.push(*p);
                cur = *p;
            }
            path.reverse();
            (path, prob)
        }))
    }

    /// Probability of reaching each node (unconditional).
    pub fn reach_probabilities(&self) -> Vec<S> {
        let mut reach = vec![S::zero(); self.len()];
        reach[0] = S::one();
        for t in 0..self.n_steps() {
            for &id in &self.levels[t] {
                let r = reach[id.0].clone();
                for (c, p) in &self.nodes[id.0].children {
                    reach[c.0] = reach[c.0].clone() + r.clone() * p.clone();
                }
            }
        }
        reach
    }
}

/// A real value attached to every node: `{h(S), S ∈ T_0}` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedFamily<S> {
    values: Vec<S>,
}

impl<S: Scalar> AdaptedFamily<S> {
    pub fn new(model: &Model<S>, values: Vec<S>) -> Result<Self> {
        if values.len() != model.len() {
            return Err(Error::ModelRewardMismatch);
        }
        Ok(Self { values })
    }

    pub fn from_fn(model: &Model<S>, mut f: impl FnMut(NodeId) -> S) -> Self {
        Self { values: model.node_ids().map(&mut f).collect() }
    }

    pub fn zeros(model: &Model<S>) -> Self {
        Self { values: vec![S::zero(); model.len()] }
    }

    pub(crate) fn from_vec(values: Vec<S>) -> Self {
        Self { values }
    }

    pub fn get(&self, id: NodeId) -> &S {
        &self.values[id.0]
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &S)> {
        self.values.iter().enumerate().map(|(i, v)| (NodeId(i), v))
    }

    pub fn map(&self, f: impl Fn(&S) -> S) -> Self {
        Self { values: self.values.iter().map(f).collect() }
    }
}

impl<S> Index<NodeId> for AdaptedFamily<S> {
    type Output = S;

    fn index(&self, id: NodeId) -> &S {
        &self.values[id.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Stop,
    Continue,
}

/// Per-node stop/continue map. The induced stopping time on a path is the
/// level of the first `Stop` node met at or after the start rule.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StoppingRule {
    decisions: Vec<Decision>,
}

impl StoppingRule {
    pub fn from_decisions(decisions: Vec<Decision>) -> Self {
        Self { decisions }
    }

    /// `Stop` where `pred` holds and on every terminal node.
    pub fn from_predicate<S: Scalar>(model: &Model<S>, mut pred: impl FnMut(NodeId) -> bool) -> Self {
        Self {
            decisions: model
                .node_ids()
                .map(|id| {
                    if model.is_terminal(id) || pred(id) {
                        Decision::Stop
                    } else {
                        Decision::Continue
                    }
                })
                .collect(),
        }
    }

    /// θ = 0.
    pub fn stop_at_root<S: Scalar>(model: &Model<S>) -> Self {
        Self { decisions: vec![Decision::Stop; model.len()] }
    }

    /// θ = T.
    pub fn stop_at_horizon<S: Scalar>(model: &Model<S>) -> Self {
        Self::from_predicate(model, |_| false)
    }

    /// θ = min(level, N).
    pub fn stop_at_level<S: Scalar>(model: &Model<S>, level: usize) -> Self {
        Self::from_predicate(model, |id| model.node(id).level() >= level)
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn decision(&self, id: NodeId) -> Option<Decision> {
        self.decisions.get(id.0).copied()
    }

    pub fn is_stop(&self, id: NodeId) -> bool {
        self.decisions.get(id.0) == Some(&Decision::Stop)
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn stop_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.decisions
            .iter()
            .enumerate()
            .filter(|(_, d)| **d == Decision::Stop)
            .map(|(i, _)| NodeId(i))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleProblem {
    MissingNode(NodeId),
    TerminalContinue(NodeId),
    UnknownNodes { extra: usize },
}

impl fmt::Display for RuleProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleProblem::MissingNode(id) => write!(f, "node {id} has no decision"),
            RuleProblem::TerminalContinue(id) => {
                write!(f, "terminal node {id} is marked CONTINUE")
            }
            RuleProblem::UnknownNodes { extra } => {
                write!(f, "{extra} decisions refer to nodes outside the model")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleDiagnostics {
    pub problems: Vec<RuleProblem>,
}

impl RuleDiagnostics {
    pub fn is_valid(&self) -> bool {
        self.problems.is_empty()
    }
}

pub fn is_valid_rule<S: Scalar>(model: &Model<S>, rule: &StoppingRule) -> RuleDiagnostics {
    let mut problems = Vec::new();
    for id in model.node_ids() {
        match rule.decision(id) {
            None => problems.push(RuleProblem::MissingNode(id)),
            Some(Decision::Continue) if model.is_terminal(id) => {
                problems.push(RuleProblem::TerminalContinue(id))
            }
            _ => {}
        }
    }
    if rule.len() > model.len() {
        problems.push(RuleProblem::UnknownNodes { extra: rule.len() - model.len() });
    }
    RuleDiagnostics { problems }
}

pub(crate) fn require_valid<S: Scalar>(model: &Model<S>, rule: &StoppingRule, name: &str) -> Result<()> {
    let diag = is_valid_rule(model, rule);
    match diag.problems.first() {
        None => Ok(()),
        Some(p) => Err(Error::InvalidRule(format!("{name}: {p}"))),
    }
}

/// For every node, whether the start rule has already fired at or before it.
///
/// On a lattice this must be a function of the node; start rules that make
/// it path-dependent are rejected.
pub fn activation<S: Scalar>(model: &Model<S>, from: &StoppingRule) -> Result<Vec<bool>> {
    require_valid(model, from, "start rule")?;
    let mut active = vec![false; model.len()];
    for level in model.levels() {
        for &id in level {
            let node = model.node(id);
            let mut inherited: Option<bool> = None;
            for (p, _) in node.parents() {
                match inherited {
                    None => inherited = Some(active[p.0]),
                    Some(a) if a != active[p.0] => {
                        return Err(Error::UnsupportedModelKind(format!(
                            "start rule is path-dependent at recombining node {id}"
                        )))
                    }
                    _ => {}
                }
            }
            active[id.0] = inherited.unwrap_or(false) || from.is_stop(id);
        }
    }
    Ok(active)
}

/// Probability that the induced stopping time stops at each node.
pub fn stop_masses<S: Scalar>(model: &Model<S>, rule: &StoppingRule, from: &StoppingRule) -> Result<Vec<S>> {
    require_valid(model, rule, "rule")?;
    require_valid(model, from, "start rule")?;
    let n = model.len();
    // pending: reached, start not yet fired; running: start fired, not stopped
    let mut pending = vec![S::zero(); n];
    let mut running = vec![S::zero(); n];
    let mut stopped = vec![S::zero(); n];
    pending[0] = S::one();
    for level in model.levels() {
        for &id in level {
            let i = id.0;
            if from.is_stop(id) {
                running[i] = running[i].clone() + std::mem::replace(&mut pending[i], S::zero());
            }
            if rule.is_stop(id) {
                stopped[i] = std::mem::replace(&mut running[i], S::zero());
            }
            let (a, b) = (pending[i].clone(), running[i].clone());
            if a.is_zero() && b.is_zero() {
                continue;
            }
            for (c, p) in model.node(id).children() {
                pending[c.0] = pending[c.0].clone() + a.clone() * p.clone();
                running[c.0] = running[c.0].clone() + b.clone() * p.clone();
            }
        }
    }
    Ok(stopped)
}

/// `E[h(θ)]` where θ is the first `Stop` of `rule` at or after `from`.
pub fn expectation_under_rule<S: Scalar>(
    model: &Model<S>,
    rule: &StoppingRule,
    values: &AdaptedFamily<S>,
    from: &StoppingRule,
) -> Result<S> {
    model.check_family(values)?;
    let masses = stop_masses(model, rule, from)?;
    Ok(masses
        .into_iter()
        .zip(values.values())
        .fold(S::zero(), |acc, (m, v)| acc + m * v.clone()))
}

/// Probability mass of `{θ = t}` for every level `t`.
pub fn time_distribution<S: Scalar>(model: &Model<S>, rule: &StoppingRule, from: &StoppingRule) -> Result<Vec<S>> {
    let masses = stop_masses(model, rule, from)?;
    let mut dist = vec![S::zero(); model.n_steps() + 1];
    for (i, m) in masses.into_iter().enumerate() {
        let t = model.nodes[i].level;
        dist[t] = dist[t].clone() + m;
    }
    Ok(dist)
}

/// Induced stopping time (a level) on every root-to-leaf path, leaves in
/// level order. Exact trees only.
pub fn induced_times<S: Scalar>(model: &Model<S>, rule: &StoppingRule, from: &StoppingRule) -> Result<Vec<usize>> {
    model.require_tree("pathwise stopping times")?;
    require_valid(model, rule, "rule")?;
    require_valid(model, from, "start rule")?;
    let times = model
        .path_measure()?
        .map(|(path, _)| {
            let mut started = false;
            for id in &path {
                started |= from.is_stop(*id);
                if started && rule.is_stop(*id) {
                    return model.node(*id).level();
                }
            }
            model.n_steps()
        })
        .collect();
    Ok(times)
}

/// `a ≤ b` on every root-to-leaf path.
///
/// Decided by forward reachability, so it also works on lattices: `a ≤ b`
/// fails iff some node where `b` stops (after `from`) is reachable along a
/// path on which `a` has not stopped yet, that node included.
pub fn pathwise_le<S: Scalar>(model: &Model<S>, a: &StoppingRule, b: &StoppingRule, from: &StoppingRule) -> Result<bool> {
    require_valid(model, a, "rule")?;
    require_valid(model, b, "rule")?;
    let active = activation(model, from)?;
    // open[n]: some path reaches n with `a` not stopped before n
    let mut open = vec![false; model.len()];
    open[model.root().0] = true;
    for level in model.levels() {
        for &id in level {
            let i = id.0;
            if !open[i] {
                continue;
            }
            let a_stops = active[i] && a.is_stop(id);
            if a_stops {
                continue;
            }
            if active[i] && b.is_stop(id) {
                return Ok(false);
            }
            for (c, _) in model.node(id).children() {
                open[c.0] = true;
            }
        }
    }
    Ok(true)
}

/// Two rules are the same stopping time iff they agree on every path.
pub fn same_stopping_time<S: Scalar>(model: &Model<S>, a: &StoppingRule, b: &StoppingRule, from: &StoppingRule) -> Result<bool> {
    Ok(pathwise_le(model, a, b, from)? && pathwise_le(model, b, a, from)?)
}

fn binomial_drafts<S: Scalar>(
    n_steps: usize,
    kind: ModelKind,
    p: &S,
    state_at: impl Fn(usize, usize) -> S,
) -> Vec<NodeDraft<S>> {
    let q = S::one() - p.clone();
    let up_live = *p > S::zero();
    let down_live = q > S::zero();
    let mut drafts: Vec<NodeDraft<S>> = Vec::new();
    // (ups, downs) per draft; frontier holds draft indices of the last level
    let mut frontier: Vec<(usize, usize, usize)> = Vec::new();
    drafts.push(NodeDraft { label: None, level: 0, state: state_at(0, 0), children: vec![] });
    frontier.push((0, 0, 0));
    for t in 0..n_steps {
        let mut next: Vec<(usize, usize, usize)> = Vec::new();
        let mut lattice_index: HashMap<usize, usize> = HashMap::new();
        for &(idx, ups, downs) in &frontier {
            let mut moves = Vec::new();
            if up_live {
                moves.push((ups + 1, downs, p.clone()));
            }
            if down_live {
                moves.push((ups, downs + 1, q.clone()));
            }
            for (u, d, prob) in moves {
                let child = match kind {
                    ModelKind::MarkovLattice => *lattice_index.entry(d).or_insert_with(|| {
                        drafts.push(NodeDraft {
                            label: None,
                            level: t + 1,
                            state: state_at(u, d),
                            children: vec![],
                        });
                        next.push((drafts.len() - 1, u, d));
                        drafts.len() - 1
                    }),
                    ModelKind::ExactTree => {
                        drafts.push(NodeDraft {
                            label: None,
                            level: t + 1,
                            state: state_at(u, d),
                            children: vec![],
                        });
                        next.push((drafts.len() - 1, u, d));
                        drafts.len() - 1
                    }
                };
                drafts[idx].children.push((child, prob));
            }
        }
        frontier = next;
    }
    drafts
}

fn check_steps(n_steps: usize, kind: ModelKind) -> Result<()> {
    if n_steps == 0 {
        return Err(Error::ParameterOutOfRange("n_steps must be at least 1".into()));
    }
    if kind == ModelKind::ExactTree && n_steps > MAX_TREE_STEPS {
        return Err(Error::ParameterOutOfRange(format!(
            "exact binomial trees are capped at {MAX_TREE_STEPS} steps, got {n_steps}"
        )));
    }
    Ok(())
}

/// Binomial model: each step multiplies the state by `up` with probability
/// `p` or by `down` otherwise. Zero-probability branches are omitted.
pub fn build_binomial<S: Scalar>(
    s0: S,
    up: S,
    down: S,
    p: S,
    n_steps: usize,
    horizon: f64,
    kind: ModelKind,
) -> Result<Model<S>> {
    if s0 <= S::zero() {
        return Err(Error::ParameterOutOfRange(format!("s0 must be positive, got {s0}")));
    }
    if up <= S::one() {
        return Err(Error::ParameterOutOfRange(format!("up must exceed 1, got {up}")));
    }
    if !(down > S::zero() && down < S::one()) {
        return Err(Error::ParameterOutOfRange(format!("down must lie in (0,1), got {down}")));
    }
    if p < S::zero() || p > S::one() {
        return Err(Error::ParameterOutOfRange(format!("p must lie in [0,1], got {p}")));
    }
    check_steps(n_steps, kind)?;
    let grid = TimeGrid::uniform(n_steps, horizon)?;
    let drafts = binomial_drafts(n_steps, kind, &p, |u, d| {
        s0.clone() * up.powi(u as i32) * down.powi(d as i32)
    });
    Model::assemble(grid, kind, drafts)
}

/// Cox–Ross–Rubinstein parameters for a GBM with volatility `sigma` and
/// risk-neutral growth `rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrrParams {
    pub up: f64,
    pub down: f64,
    pub p: f64,
    pub dt: f64,
}

impl CrrParams {
    pub fn new(sigma: f64, rate: f64, horizon: f64, n_steps: usize) -> Result<Self> {
        if !(sigma > 0.0 && horizon > 0.0 && n_steps > 0) {
            return Err(Error::ParameterOutOfRange(
                "CRR needs sigma > 0, horizon > 0 and n_steps >= 1".into(),
            ));
        }
        let dt = horizon / n_steps as f64;
        let up = (sigma * dt.sqrt()).exp();
        let down = 1.0 / up;
        let p = ((rate * dt).exp() - down) / (up - down);
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ParameterOutOfRange(format!(
                "CRR probability {p} outside (0,1); refine the grid"
            )));
        }
        Ok(Self { up, down, p, dt })
    }
}

/// CRR model. States are `s0 · up^(ups − downs)` so that recombined nodes
/// with a zero net move carry exactly `s0`.
pub fn build_crr(s0: f64, sigma: f64, rate: f64, horizon: f64, n_steps: usize, kind: ModelKind) -> Result<(Model<f64>, CrrParams)> {
    if !(s0 > 0.0) {
        return Err(Error::ParameterOutOfRange(format!("s0 must be positive, got {s0}")));
    }
    check_steps(n_steps, kind)?;
    let params = CrrParams::new(sigma, rate, horizon, n_steps)?;
    let grid = TimeGrid::uniform(n_steps, horizon)?;
    let drafts = binomial_drafts(n_steps, kind, &params.p, |u, d| {
        s0 * params.up.powi(u as i32 - d as i32)
    });
    Ok((Model::assemble(grid, kind, drafts)?, params))
}

/// Number as written in a spec file: `"1/2"`, `"0.35"`, `0.35` or `2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumberText {
    Int(i64),
    Float(f64),
    Text(String),
}

impl NumberText {
    pub fn to_scalar<S: Scalar>(&self) -> Result<S> {
        match self {
            NumberText::Int(i) => S::parse(&i.to_string()),
            // shortest round-trip repr, so 0.1 parses to 1/10 in exact mode
            NumberText::Float(x) => S::parse(&format!("{x:?}")),
            NumberText::Text(s) => S::parse(s),
        }
    }
}

impl From<&str> for NumberText {
    fn from(s: &str) -> Self {
        NumberText::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IdText {
    Int(i64),
    Text(String),
}

impl IdText {
    fn key(&self) -> String {
        match self {
            IdText::Int(i) => i.to_string(),
            IdText::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_steps: usize,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: IdText,
    pub level: usize,
    pub state: NumberText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: IdText,
    pub to: IdText,
    pub prob: NumberText,
}

/// Structured model description, read from and written to TOML.
///
/// ```toml
/// arithmetic = "rational"     # optional: rational | float
/// kind = "exact_tree"         # optional: exact_tree | markov_lattice
///
/// [grid]
/// n_steps = 1
/// horizon = 1.0
/// # times = [0.0, 1.0]       # optional, defaults to a uniform grid
///
/// [[nodes]]
/// id = "root"
/// level = 0
/// state = "4"
///
/// [[nodes]]
/// id = "u"
/// level = 1
/// state = 8
///
/// [[nodes]]
/// id = "d"
/// level = 1
/// state = "2"
///
/// [[edges]]
/// from = "root"
/// to = "u"
/// prob = "1/2"
///
/// [[edges]]
/// from = "root"
/// to = "d"
/// prob = "0.5"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arithmetic: Option<Arithmetic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ModelKind>,
    pub grid: GridSpec,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
}

impl ModelSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::MalformedSpec(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::MalformedSpec(e.to_string()))
    }

    pub fn from_model<S: Scalar>(model: &Model<S>) -> Self {
        let nodes = model
            .nodes()
            .iter()
            .map(|n| NodeSpec {
                id: IdText::Text(n.label().to_string()),
                level: n.level(),
                state: NumberText::Text(n.state().to_string()),
            })
            .collect();
        let edges = model
            .nodes()
            .iter()
            .flat_map(|n| {
                n.children().iter().map(move |(c, p)| EdgeSpec {
                    from: IdText::Text(n.label().to_string()),
                    to: IdText::Text(model.node(*c).label().to_string()),
                    prob: NumberText::Text(p.to_string()),
                })
            })
            .collect();
        Self {
            arithmetic: Some(S::ARITHMETIC),
            kind: Some(model.kind()),
            grid: GridSpec {
                n_steps: model.n_steps(),
                horizon: model.grid().horizon(),
                times: Some(model.grid().times().to_vec()),
            },
            nodes,
            edges,
        }
    }
}

/// Validates a [`ModelSpec`] into a [`Model`]. The spec's `arithmetic`
/// field is advisory; the scalar type is chosen by the caller.
pub fn build_from_spec<S: Scalar>(spec: &ModelSpec) -> Result<Model<S>> {
    if spec.nodes.is_empty() {
        return Err(Error::MalformedSpec("no nodes listed".into()));
    }
    let grid = match &spec.grid.times {
        Some(times) => {
            let g = TimeGrid::new(times.clone())?;
            if g.n_steps() != spec.grid.n_steps || g.horizon() != spec.grid.horizon {
                return Err(Error::MalformedSpec(
                    "grid.times disagrees with n_steps/horizon".into(),
                ));
            }
            g
        }
        None => TimeGrid::uniform(spec.grid.n_steps, spec.grid.horizon)
            .map_err(|e| Error::MalformedSpec(e.to_string()))?,
    };
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut drafts = Vec::with_capacity(spec.nodes.len());
    for n in &spec.nodes {
        let key = n.id.key();
        if index.insert(key.clone(), drafts.len()).is_some() {
            return Err(Error::MalformedSpec(format!("duplicate node id {key}")));
        }
        let state: S = n
            .state
            .to_scalar()
            .map_err(|e| Error::MalformedSpec(format!("node {key}: {e}")))?;
        drafts.push(NodeDraft { label: Some(key), level: n.level, state, children: vec![] });
    }
    for e in &spec.edges {
        let (from, to) = (e.from.key(), e.to.key());
        let &f = index
            .get(&from)
            .ok_or_else(|| Error::MalformedSpec(format!("edge from unknown node {from}")))?;
        let &t = index
            .get(&to)
            .ok_or_else(|| Error::MalformedSpec(format!("edge to unknown node {to}")))?;
        let p: S = e
            .prob
            .to_scalar()
            .map_err(|err| Error::MalformedSpec(format!("edge {from}->{to}: {err}")))?;
        drafts[f].children.push((t, p));
    }
    Model::assemble(grid, spec.kind.unwrap_or(ModelKind::ExactTree), drafts)
}
