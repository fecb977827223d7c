//! Experiment configuration files (TOML).
//!
//! ```toml
//! [model]
//! builder = "binomial"        # binomial | crr | spec
//! s0 = 4
//! up = 2
//! down = "1/2"
//! p = "1/2"
//! n_steps = 2
//! horizon = 1.0
//! kind = "exact_tree"         # exact_tree | markov_lattice
//!
//! [reward]
//! payoff = "put"              # put | call | digital_usc | digital_lsc | constant | lookback_max
//! strike = 5
//!
//! [run]
//! arithmetic = "rational"
//! start_level = 0
//! epsilons = ["1/2", "1/10", "1/100"]
//! refinements = [10, 20, 40, 80, 160]
//!
//! [output]
//! dir = "out"
//! csv = true
//! ```
//!
//! Numbers may be integers, floats or strings such as `"3/7"`; strings and
//! integers are exact in rational mode.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsmc::GbmExperiment;
use crate::model::{build_binomial, build_crr, build_from_spec, Model, ModelKind, ModelSpec, NumberText};
use crate::reward::{call, constant, digital_lsc, digital_usc, path_lookback_max, put, RewardFamily};
use crate::scalar::{Arithmetic, Scalar};
use crate::stopping::EpsilonKind;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<ModelSection>,
    pub reward: Option<RewardSection>,
    #[serde(default)]
    pub run: RunSection,
    pub lsmc: Option<GbmExperiment>,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory of the config file; spec paths resolve against it.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builder {
    Binomial,
    Crr,
    Spec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub builder: Builder,
    pub s0: Option<NumberText>,
    pub up: Option<NumberText>,
    pub down: Option<NumberText>,
    pub p: Option<NumberText>,
    pub sigma: Option<f64>,
    pub rate: Option<f64>,
    pub n_steps: Option<usize>,
    pub horizon: Option<f64>,
    pub kind: Option<ModelKind>,
    /// Model spec file, for `builder = "spec"`.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payoff {
    Put,
    Call,
    DigitalUsc,
    DigitalLsc,
    Constant,
    LookbackMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    pub payoff: Payoff,
    pub strike: Option<NumberText>,
    /// Level of `constant`.
    pub value: Option<NumberText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub arithmetic: Option<Arithmetic>,
    pub seed: u64,
    /// Start rule `S`: stop at this level.
    pub start_level: usize,
    pub epsilons: Vec<NumberText>,
    pub epsilon_kind: EpsilonKind,
    pub refinements: Vec<usize>,
    /// Random instances checked by `verify` when no model is configured.
    pub corpus_size: usize,
    pub oracle: bool,
    /// Deliberately corrupts the envelope before `verify` checks it.
    pub inject_fault: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            arithmetic: None,
            seed: crate::oracle::CORPUS_SEED,
            start_level: 0,
            epsilons: vec!["1/2".into(), "1/10".into(), "1/100".into()],
            epsilon_kind: EpsilonKind::Multiplicative,
            refinements: vec![10, 20, 40, 80, 160],
            corpus_size: 200,
            oracle: true,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub csv: bool,
    /// Also dump the oracle's optimal rule set.
    pub optimal_set: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: None, csv: true, optimal_set: false }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn model_section(&self) -> Result<&ModelSection> {
        self.model.as_ref().ok_or_else(|| Error::Parse("missing [model] section".into()))
    }

    pub fn reward_section(&self) -> Result<&RewardSection> {
        self.reward.as_ref().ok_or_else(|| Error::Parse("missing [reward] section".into()))
    }

    /// Arithmetic asked for by the file, or the builder's natural one.
    pub fn arithmetic(&self) -> Arithmetic {
        if let Some(a) = self.run.arithmetic {
            return a;
        }
        match self.model.as_ref().map(|m| m.builder) {
            Some(Builder::Crr) => Arithmetic::Float,
            _ => Arithmetic::Rational,
        }
    }

    pub fn build_model<S: Scalar>(&self) -> Result<Model<S>> {
        let m = self.model_section()?;
        let need = |v: &Option<NumberText>, name: &str| -> Result<S> {
            v.as_ref()
                .ok_or_else(|| Error::Parse(format!("model.{name} is required")))?
                .to_scalar()
        };
        let steps = || m.n_steps.ok_or_else(|| Error::Parse("model.n_steps is required".into()));
        let kind = m.kind.unwrap_or(ModelKind::ExactTree);
        match m.builder {
            Builder::Binomial => build_binomial(
                need(&m.s0, "s0")?,
                need(&m.up, "up")?,
                need(&m.down, "down")?,
                need(&m.p, "p")?,
                steps()?,
                m.horizon.unwrap_or(1.0),
                kind,
            ),
            Builder::Crr => {
                if S::ARITHMETIC == Arithmetic::Rational {
                    return Err(Error::ParameterOutOfRange(
                        "crr lattices have irrational moves; use --arithmetic float".into(),
                    ));
                }
                let s0: S = need(&m.s0, "s0")?;
                let sigma = m.sigma.ok_or_else(|| Error::Parse("model.sigma is required".into()))?;
                let (model, _) = build_crr(s0.to_f64(), sigma, m.rate.unwrap_or(0.0), m.horizon.unwrap_or(1.0), steps()?, kind)?;
                // S is f64 here; route through the spec format to stay generic
                build_from_spec(&ModelSpec::from_model(&model))
            }
            Builder::Spec => {
                let path = m.path.as_ref().ok_or_else(|| Error::Parse("model.path is required".into()))?;
                let path = match &self.base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                build_from_spec(&ModelSpec::from_toml_str(&text)?)
            }
        }
    }

    pub fn build_reward<S: Scalar>(&self, model: &Model<S>) -> Result<RewardFamily<S>> {
        let r = self.reward_section()?;
        let strike = || -> Result<S> {
            r.strike
                .as_ref()
                .ok_or_else(|| Error::Parse(format!("reward.strike is required for {:?}", r.payoff)))?
                .to_scalar()
        };
        match r.payoff {
            Payoff::Put => put(model, strike()?),
            Payoff::Call => call(model, strike()?),
            Payoff::DigitalUsc => digital_usc(model, strike()?),
            Payoff::DigitalLsc => digital_lsc(model, strike()?),
            Payoff::Constant => {
                let c = r.value.as_ref().ok_or_else(|| Error::Parse("reward.value is required for constant".into()))?;
                constant(model, c.to_scalar()?)
            }
            Payoff::LookbackMax => path_lookback_max(model),
        }
    }

    pub fn epsilons<S: Scalar>(&self) -> Result<Vec<S>> {
        self.run.epsilons.iter().map(NumberText::to_scalar).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{ratio, Rational};

    const PUT: &str = r#"
[model]
builder = "binomial"
s0 = 4
up = 2
down = "1/2"
p = 0.5
n_steps = 2

[reward]
payoff = "put"
strike = 5
"#;

    #[test]
    fn parses_put_example() {
        let cfg = ExperimentConfig::from_toml_str(PUT).unwrap();
        assert_eq!(cfg.arithmetic(), Arithmetic::Rational);
        let m: Model<Rational> = cfg.build_model().unwrap();
        assert_eq!(m.len(), 7);
        let phi = cfg.build_reward(&m).unwrap();
        assert_eq!(*phi.get(m.root()), ratio(1, 1));
        assert_eq!(cfg.run.refinements, vec![10, 20, 40, 80, 160]);
        let eps: Vec<Rational> = cfg.epsilons().unwrap();
        assert_eq!(eps[2], ratio(1, 100));
    }

    #[test]
    fn rejects_unknown_fields_and_missing_params() {
        assert!(ExperimentConfig::from_toml_str("[model]\nbuilder = \"binomial\"\nfoo = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[reward]\npayoff = \"straddle\"\n").is_err());
        let cfg = ExperimentConfig::from_toml_str("[model]\nbuilder = \"binomial\"\ns0 = 4\n").unwrap();
        assert!(matches!(cfg.build_model::<Rational>(), Err(Error::Parse(_))));
    }

    #[test]
    fn crr_needs_float() {
        let cfg = ExperimentConfig::from_toml_str(
            "[model]\nbuilder = \"crr\"\ns0 = 1\nsigma = 0.2\nn_steps = 4\nkind = \"markov_lattice\"\n",
        )
        .unwrap();
        assert_eq!(cfg.arithmetic(), Arithmetic::Float);
        assert!(cfg.build_model::<Rational>().is_err());
        assert_eq!(cfg.build_model::<f64>().unwrap().len(), 15);
    }

    #[test]
    fn lsmc_section_round_trips() {
        let cfg = ExperimentConfig { lsmc: Some(GbmExperiment::american_put()), ..Default::default() };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap().lsmc, cfg.lsmc);
    }
}
