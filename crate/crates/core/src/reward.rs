//! Nonnegative reward families `{φ(θ)}` indexed by nodes.

use std::hash::{DefaultHasher, Hasher};

use crate::error::{Error, Result};
use crate::model::{expectation_under_rule, induced_times, AdaptedFamily, Model, NodeId, StoppingRule};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RewardFamily<S> {
    values: AdaptedFamily<S>,
    label: String,
    model_fingerprint: u64,
    fingerprint: u64,
}

impl<S: Scalar> RewardFamily<S> {
    /// Wraps arbitrary per-node values after checking they are nonnegative.
    pub fn from_values(model: &Model<S>, label: impl Into<String>, values: AdaptedFamily<S>) -> Result<Self> {
        if values.len() != model.len() {
            return Err(Error::ModelRewardMismatch);
        }
        if let Some((id, v)) = values.iter().find(|(_, v)| v.is_negative()) {
            return Err(Error::NegativeReward { node: id, value: v.to_string() });
        }
        let mut h = DefaultHasher::new();
        h.write_u64(model.fingerprint());
        for v in values.values() {
            v.hash_into(&mut h);
        }
        Ok(Self {
            values,
            label: label.into(),
            model_fingerprint: model.fingerprint(),
            fingerprint: h.finish(),
        })
    }

    pub fn values(&self) -> &AdaptedFamily<S> {
        &self.values
    }

    pub fn get(&self, id: NodeId) -> &S {
        self.values.get(id)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn belongs_to(&self, model: &Model<S>) -> bool {
        self.model_fingerprint == model.fingerprint() && self.values.len() == model.len()
    }

    /// Pointwise maximum of two families on the same model.
    pub fn pointwise_max(&self, model: &Model<S>, other: &Self) -> Result<Self> {
        if !self.belongs_to(model) || !other.belongs_to(model) {
            return Err(Error::ModelRewardMismatch);
        }
        let values = AdaptedFamily::from_fn(model, |id| S::max_of(self.get(id), other.get(id)));
        Self::from_values(model, format!("max({}, {})", self.label, other.label), values)
    }
}

/// `φ(n) = f(level(n), state(n))`.
pub fn from_function<S: Scalar>(
    model: &Model<S>,
    label: impl Into<String>,
    f: impl Fn(usize, &S) -> S,
) -> Result<RewardFamily<S>> {
    let values = AdaptedFamily::from_fn(model, |id| {
        let n = model.node(id);
        f(n.level(), n.state())
    });
    RewardFamily::from_values(model, label, values)
}

pub fn constant<S: Scalar>(model: &Model<S>, c: S) -> Result<RewardFamily<S>> {
    let label = format!("constant({c})");
    from_function(model, label, move |_, _| c.clone())
}

/// `max(K − x, 0)`.
pub fn put<S: Scalar>(model: &Model<S>, strike: S) -> Result<RewardFamily<S>> {
    let label = format!("put({strike})");
    from_function(model, label, move |_, x| {
        let k = strike.clone();
        if k > *x {
            k - x.clone()
        } else {
            S::zero()
        }
    })
}

/// `max(x − K, 0)`.
pub fn call<S: Scalar>(model: &Model<S>, strike: S) -> Result<RewardFamily<S>> {
    let label = format!("call({strike})");
    from_function(model, label, move |_, x| {
        if *x > strike {
            x.clone() - strike.clone()
        } else {
            S::zero()
        }
    })
}

/// Indicator of the closed set `{x ≥ K}` (upper-semicontinuous).
pub fn digital_usc<S: Scalar>(model: &Model<S>, strike: S) -> Result<RewardFamily<S>> {
    let label = format!("digital_usc({strike})");
    from_function(model, label, move |_, x| if *x >= strike { S::one() } else { S::zero() })
}

/// Indicator of the open set `{x > K}` (lower-semicontinuous).
pub fn digital_lsc<S: Scalar>(model: &Model<S>, strike: S) -> Result<RewardFamily<S>> {
    let label = format!("digital_lsc({strike})");
    from_function(model, label, move |_, x| if *x > strike { S::one() } else { S::zero() })
}

/// Running maximum of the state along the path to each node.
pub fn path_lookback_max<S: Scalar>(model: &Model<S>) -> Result<RewardFamily<S>> {
    model.require_tree("path_lookback_max")?;
    let mut values: Vec<S> = Vec::with_capacity(model.len());
    for id in model.node_ids() {
        let own = model.node(id).state().clone();
        let v = match model.parent(id) {
            Some(p) => S::max_of(&values[p.index()], &own),
            None => own,
        };
        values.push(v);
    }
    RewardFamily::from_values(model, "lookback_max", AdaptedFamily::new(model, values)?)
}

/// Finite-sample check of upper semicontinuity in expectation along a
/// nondecreasing sequence of stopping times.
#[derive(Debug, Clone, PartialEq)]
pub struct UscReport<S> {
    /// `E[φ(θ_n)]` for each rule of the sequence.
    pub expectations: Vec<S>,
    /// `E[φ(θ)]` at the limit rule.
    pub limit_value: S,
    /// Largest expectation over the tail (last half) of the sequence, the
    /// finite stand-in for `limsup_n E[φ(θ_n)]`.
    pub tail_sup: S,
    /// `tail_sup > limit_value`.
    pub violation: bool,
    pub caveat: &'static str,
}

pub const USC_CAVEAT: &str = "finite-sample diagnostic on a fixed grid: a flagged violation \
exhibits a failure of upper semicontinuity in expectation along this sequence; absence of a flag \
proves nothing about the limit statement";

pub fn usc_in_expectation_diagnostic<S: Scalar>(
    model: &Model<S>,
    reward: &RewardFamily<S>,
    rules: &[StoppingRule],
    limit: &StoppingRule,
) -> Result<UscReport<S>> {
    if !reward.belongs_to(model) {
        return Err(Error::ModelRewardMismatch);
    }
    if rules.is_empty() {
        return Err(Error::ParameterOutOfRange("empty stopping-time sequence".into()));
    }
    let root = StoppingRule::stop_at_root(model);
    let mut times: Vec<Vec<usize>> = Vec::with_capacity(rules.len() + 1);
    for rule in rules.iter().chain(std::iter::once(limit)) {
        times.push(induced_times(model, rule, &root)?);
    }
    for (k, pair) in times.windows(2).enumerate() {
        if pair[0].iter().zip(&pair[1]).any(|(a, b)| a > b) {
            return Err(Error::NonMonotoneSequence(k + 1));
        }
    }
    let expectations = rules
        .iter()
        .map(|r| expectation_under_rule(model, r, reward.values(), &root))
        .collect::<Result<Vec<S>>>()?;
    let limit_value = expectation_under_rule(model, limit, reward.values(), &root)?;
    let tail = &expectations[expectations.len() / 2..];
    let tail_sup = tail.iter().skip(1).fold(tail[0].clone(), |m, x| S::max_of(&m, x));
    let violation = tail_sup.strictly_greater(&limit_value);
    Ok(UscReport { expectations, limit_value, tail_sup, violation, caveat: USC_CAVEAT })
}
