//! Subcommands behind the `optstop` binary.
//!
//! Every command returns an [`ExitCode`]: 0 pass, 1 invariant failure,
//! 2 configuration error, 3 engine error. Summaries go to standard output
//! (suppressed by `quiet`), diagnostics to standard error. CSV artifacts
//! start with a `# schema:` comment and are written atomically.
//!
//! The output directory is, in order of precedence: `--out`, the config's
//! `[output] dir`, the `OPTSTOP_OUT_DIR` environment variable, `optstop-out`.

use std::collections::HashSet;
use std::fmt::Display;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{Builder, ExperimentConfig};
use crate::error::Error;
use crate::model::{pathwise_le, same_stopping_time, AdaptedFamily, Model, ModelKind, NodeId, StoppingRule};
use crate::oracle::{self, random_corpus, verify_theorems, ORACLE_INTERIOR_CAP};
use crate::reward::{digital_lsc, digital_usc, RewardFamily};
use crate::scalar::{Arithmetic, Rational, Scalar};
use crate::snell::{
    check_dominance, check_supermartingale, compute, doob_decompose, strict_supermartingale_region,
    vplus_identity_check, write_csv, SnellResult,
};
use crate::stopping::{
    epsilon_collapse_threshold, epsilon_optimal, evaluate, exercise_region, martingale_interval_check,
    maximal_optimal, minimal_optimal, start_value, write_rule_csv, write_time_distribution_csv, EpsilonKind,
    EpsilonMode,
};

pub const OUT_DIR_ENV: &str = "OPTSTOP_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "optstop-out";

pub const CONVERGE_CSV_SCHEMA: &str = "optstop.converge.v1";
pub const REGION_COMPARISON_CSV_SCHEMA: &str = "optstop.region_comparison.v1";
pub const EPSILON_CSV_SCHEMA: &str = "optstop.epsilon.v1";
pub const EPSILON_TIMES_CSV_SCHEMA: &str = "optstop.epsilon_times.v1";
pub const REGION_CSV_SCHEMA: &str = "optstop.region.v1";
pub const OPTIMAL_SET_CSV_SCHEMA: &str = "optstop.optimal_set.v1";
pub const VERIFY_CSV_SCHEMA: &str = "optstop.verify.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Pass = 0,
    InvariantFailure = 1,
    ConfigError = 2,
    EngineError = 3,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Price,
    Verify,
    Oracle,
    Converge,
    Epsilon,
    Lsmc,
    Region,
}

/// Global flags.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub arithmetic: Option<Arithmetic>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Engine(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_)
            | Error::MalformedSpec(_)
            | Error::ParameterOutOfRange(_)
            | Error::ProbabilitySumViolation { .. }
            | Error::OrphanNode(_)
            | Error::LevelOutOfRange { .. }
            | Error::EpsilonOutOfRange(_)
            | Error::FloatModeRejected
            | Error::NegativeReward { .. }
            | Error::UnsupportedModelKind(_) => Failure::Config(e.to_string()),
            _ => Failure::Engine(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Engine(format!("i/o: {e}"))
    }
}

type Outcome = std::result::Result<Vec<String>, Failure>;

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, line: impl Display) {
        if !self.quiet {
            println!("{line}");
        }
    }

    fn notice(&self, line: impl Display) {
        if !self.quiet {
            eprintln!("note: {line}");
        }
    }

    /// Writes `name` under the output directory via a temporary file and a
    /// rename, so readers never see a partial file.
    fn write(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), Failure> {
        if !self.cfg.output.csv {
            return Ok(());
        }
        write_atomic(&self.out, name, body)?;
        Ok(())
    }
}

pub fn write_atomic(dir: &Path, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    let target = dir.join(name);
    tmp.persist(&target).map_err(|e| e.error)?;
    Ok(target)
}

pub fn resolve_out_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn run(command: Command, options: &Options) -> ExitCode {
    let cfg = match &options.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::ConfigError;
            }
        },
        None if command == Command::Verify => ExperimentConfig::default(),
        None => {
            eprintln!("error: --config is required for this subcommand");
            return ExitCode::ConfigError;
        }
    };
    run_with_config(command, cfg, options)
}

pub fn run_with_config(command: Command, mut cfg: ExperimentConfig, options: &Options) -> ExitCode {
    if let Some(a) = options.arithmetic {
        cfg.run.arithmetic = Some(a);
    }
    if let Some(seed) = options.seed {
        cfg.run.seed = seed;
        if let Some(l) = cfg.lsmc.as_mut() {
            l.fit_seed = seed;
            l.eval_seed = seed.wrapping_add(1);
        }
    }
    let out = resolve_out_dir(options.out.as_deref(), &cfg);
    let arithmetic = cfg.arithmetic();
    let ctx = Ctx { cfg, out, quiet: options.quiet };
    let outcome = match (command, arithmetic) {
        (Command::Price, Arithmetic::Rational) => price::<Rational>(&ctx),
        (Command::Price, Arithmetic::Float) => price::<f64>(&ctx),
        (Command::Verify, Arithmetic::Rational) => verify::<Rational>(&ctx),
        (Command::Verify, Arithmetic::Float) => verify::<f64>(&ctx),
        (Command::Oracle, Arithmetic::Rational) => oracle_cmd::<Rational>(&ctx),
        (Command::Oracle, Arithmetic::Float) => oracle_cmd::<f64>(&ctx),
        (Command::Epsilon, Arithmetic::Rational) => epsilon::<Rational>(&ctx),
        (Command::Epsilon, Arithmetic::Float) => epsilon::<f64>(&ctx),
        (Command::Region, Arithmetic::Rational) => region::<Rational>(&ctx),
        (Command::Region, Arithmetic::Float) => region::<f64>(&ctx),
        (Command::Converge, _) => converge(&ctx),
        (Command::Lsmc, _) => lsmc(&ctx),
    };
    match outcome {
        Ok(violations) if violations.is_empty() => ExitCode::Pass,
        Ok(violations) => {
            for v in &violations {
                eprintln!("violated invariant: {v}");
            }
            ExitCode::InvariantFailure
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::ConfigError
        }
        Err(Failure::Engine(msg)) => {
            eprintln!("engine error: {msg}");
            ExitCode::EngineError
        }
    }
}

fn start_rule<S: Scalar>(ctx: &Ctx, model: &Model<S>) -> Result<StoppingRule, Failure> {
    let level = ctx.cfg.run.start_level;
    if level > model.n_steps() {
        return Err(Error::LevelOutOfRange { level, n_steps: model.n_steps() }.into());
    }
    Ok(StoppingRule::stop_at_level(model, level))
}

fn mean_time<S: Scalar>(model: &Model<S>, dist: &[S]) -> f64 {
    dist.iter().enumerate().map(|(t, m)| model.grid().time(t) * m.to_f64()).sum()
}

fn price<S: Scalar>(ctx: &Ctx) -> Outcome {
    let model: Model<S> = ctx.cfg.build_model()?;
    let reward = ctx.cfg.build_reward(&model)?;
    let from = start_rule(ctx, &model)?;
    let result = compute(&model, &reward)?;
    let star = minimal_optimal(&model, &result, &reward, &from)?;
    let check = maximal_optimal(&model, &result, &reward, &from)?;
    let rs = evaluate(&model, &star, &reward, &result, &from)?;
    let rc = evaluate(&model, &check, &reward, &result, &from)?;
    let target = start_value(&model, &result, &from)?;

    ctx.say(format_args!("reward        {}", reward.label()));
    ctx.say(format_args!("nodes         {} ({} steps)", model.len(), model.n_steps()));
    ctx.say(format_args!("v(root)       {}", result.root_value()));
    if ctx.cfg.run.start_level > 0 {
        ctx.say(format_args!("E[v(S)]       {target}"));
    }
    ctx.say(format_args!("E[phi(theta*)]      {}", rs.value));
    ctx.say(format_args!("E[phi(theta_check)] {}", rc.value));
    ctx.say("t\ttime\tP(theta*=t)\tP(theta_check=t)");
    for t in 0..=model.n_steps() {
        ctx.say(format_args!(
            "{t}\t{}\t{}\t{}",
            model.grid().time(t),
            rs.time_distribution[t],
            rc.time_distribution[t]
        ));
    }

    let doob = match model.kind() {
        ModelKind::ExactTree => Some(doob_decompose(&model, &result)?),
        ModelKind::MarkovLattice => None,
    };
    ctx.write("snell.csv", |w| write_csv(w, &model, &reward, &result, doob.as_ref()))?;
    ctx.write("theta_star_rule.csv", |w| write_rule_csv(w, &model, &star))?;
    ctx.write("theta_check_rule.csv", |w| write_rule_csv(w, &model, &check))?;
    ctx.write("theta_star_times.csv", |w| write_time_distribution_csv(w, &model, &rs.time_distribution))?;
    ctx.write("theta_check_times.csv", |w| write_time_distribution_csv(w, &model, &rc.time_distribution))?;

    let mut violations = Vec::new();
    if !rs.is_optimal() {
        violations.push(format!("optimality of theta* (gap {})", rs.gap));
    }
    if !rc.is_optimal() {
        violations.push(format!("optimality of theta_check (gap {})", rc.gap));
    }
    Ok(violations)
}

/// Named invariant results for one instance.
struct Checks {
    results: Vec<(&'static str, Option<String>)>,
    notes: Vec<String>,
}

impl Checks {
    fn record(&mut self, name: &'static str, failure: Option<String>) {
        self.results.push((name, failure));
    }
}

fn show(ids: &[NodeId]) -> String {
    let shown: Vec<String> = ids.iter().take(5).map(|id| id.to_string()).collect();
    let more = if ids.len() > 5 { format!(" and {} more", ids.len() - 5) } else { String::new() };
    format!("nodes {}{more}", shown.join(", "))
}

fn fail_if(ids: Vec<NodeId>) -> Option<String> {
    (!ids.is_empty()).then(|| show(&ids))
}

/// Runs the invariant suite on one instance. With `inject_fault` the
/// envelope under test has its root value raised by one.
fn check_instance<S: Scalar>(
    model: &Model<S>,
    reward: &RewardFamily<S>,
    from: &StoppingRule,
    use_oracle: bool,
    inject_fault: bool,
) -> Result<Checks, Failure> {
    let result = compute(model, reward)?;
    let mut values = result.v().values().to_vec();
    if inject_fault {
        values[model.root().index()] = values[model.root().index()].clone() + S::one();
    }
    let v = AdaptedFamily::new(model, values)?;
    let phi = reward.values().values();
    let mut c = Checks { results: Vec::new(), notes: Vec::new() };

    let sm = check_supermartingale(model, &v)?;
    c.record("supermartingale", (!sm.holds()).then(|| show(&sm.violations.iter().map(|x| x.0).collect::<Vec<_>>())));
    let dom = check_dominance(&v, reward)?;
    c.record("dominance", (!dom.holds()).then(|| format!("{dom:?}")));
    let envelope: Vec<NodeId> = model
        .node_ids()
        .filter(|&id| {
            let expected = if model.is_terminal(id) {
                phi[id.index()].clone()
            } else {
                S::max_of(&phi[id.index()], &model.expect_children(id, v.values()))
            };
            !v.get(id).ties(&expected)
        })
        .collect();
    c.record("envelope identity v = max(phi, E[v_next])", fail_if(envelope));
    c.record("v = max(phi, vplus)", fail_if(vplus_identity_check(&result, reward)?));

    let star = minimal_optimal(model, &result, reward, from)?;
    let check = maximal_optimal(model, &result, reward, from)?;
    let target = crate::model::expectation_under_rule(model, from, &v, &StoppingRule::stop_at_root(model))?;
    for (name, rule) in [("optimality of theta*", &star), ("optimality of theta_check", &check)] {
        let value = evaluate(model, rule, reward, &result, from)?.value;
        c.record(name, (!value.ties(&target)).then(|| format!("E[phi(theta)] = {value}, E[v(S)] = {target}")));
    }
    for (name, rule) in [("martingale on [S, theta*)", &star), ("martingale on [S, theta_check)", &check)] {
        c.record(name, fail_if(martingale_interval_check(model, &result, from, rule)?.failures));
    }
    c.record(
        "theta* <= theta_check",
        (!pathwise_le(model, &star, &check, from)?).then(|| "some path stops later under theta*".to_string()),
    );
    let region: HashSet<NodeId> = exercise_region(&result, reward)?.into_iter().collect();
    let strict_outside: Vec<NodeId> = strict_supermartingale_region(&result, reward)?
        .into_iter()
        .filter(|id| !region.contains(id))
        .collect();
    c.record("strict supermartingale nodes lie in the exercise region", fail_if(strict_outside));

    if model.kind() == ModelKind::ExactTree {
        let doob = doob_decompose(model, &result)?;
        let rep = doob.check(model, &v)?;
        c.record("Doob decomposition", (!rep.holds()).then(|| format!("{rep:?}")));
    } else {
        c.notes.push("Doob decomposition skipped: compensator is path-dependent on a lattice".into());
    }

    if use_oracle {
        if S::ARITHMETIC != Arithmetic::Rational {
            c.notes.push("oracle skipped: requires rational arithmetic".into());
        } else if model.kind() != ModelKind::ExactTree {
            c.notes.push("oracle skipped: requires an exact tree".into());
        } else if model.interior_count() > ORACLE_INTERIOR_CAP {
            c.notes.push(format!(
                "oracle skipped: {} interior nodes exceed the cap of {ORACLE_INTERIOR_CAP}",
                model.interior_count()
            ));
        } else {
            let rep = verify_theorems(model, reward)?;
            let root = v.get(model.root()).to_rational().expect("rational mode");
            c.record(
                "oracle value equals v(root)",
                (root != rep.oracle_value).then(|| format!("oracle {} vs v(root) {root}", rep.oracle_value)),
            );
            c.record("oracle sandwich theta* <= tau <= theta_check", rep.failure());
        }
    }
    Ok(c)
}

fn verify<S: Scalar>(ctx: &Ctx) -> Outcome {
    let run = &ctx.cfg.run;
    let mut instances: Vec<(String, Model<S>, RewardFamily<S>)> = Vec::new();
    if ctx.cfg.model.is_some() {
        let model: Model<S> = ctx.cfg.build_model()?;
        let reward = ctx.cfg.build_reward(&model)?;
        instances.push(("configured".into(), model, reward));
    } else {
        if S::ARITHMETIC != Arithmetic::Rational {
            return Err(Failure::Config("the random corpus is rational; drop --arithmetic float".into()));
        }
        ctx.say(format_args!("corpus: {} random exact trees, seed {}", run.corpus_size, run.seed));
        for (k, inst) in random_corpus(run.seed, run.corpus_size).into_iter().enumerate() {
            // S is Rational here; the round trip through the spec format is exact
            let spec = crate::model::ModelSpec::from_model(&inst.model);
            let model: Model<S> = crate::model::build_from_spec(&spec)?;
            let values = inst
                .reward
                .values()
                .values()
                .iter()
                .map(|x| S::parse(&x.to_string()))
                .collect::<crate::Result<Vec<S>>>()?;
            let reward = RewardFamily::from_values(&model, inst.reward.label(), AdaptedFamily::new(&model, values)?)?;
            instances.push((format!("instance {k}"), model, reward));
        }
    }

    let mut violations = Vec::new();
    let mut rows: Vec<[String; 3]> = Vec::new();
    let mut notes: Vec<String> = Vec::new();
    for (name, model, reward) in &instances {
        let from = start_rule(ctx, model)?;
        let checks = check_instance(model, reward, &from, run.oracle, run.inject_fault)?;
        for note in checks.notes {
            if !notes.contains(&note) {
                notes.push(note);
            }
        }
        for (check, failure) in checks.results {
            if let Some(detail) = &failure {
                violations.push(format!("{check} ({name}: {detail})"));
            }
            rows.push([name.clone(), check.to_string(), if failure.is_some() { "FAIL" } else { "PASS" }.to_string()]);
        }
    }
    for note in &notes {
        ctx.notice(note);
    }
    let passed = rows.iter().filter(|r| r[2] == "PASS").count();
    ctx.say(format_args!("{passed}/{} checks passed over {} instance(s)", rows.len(), instances.len()));
    ctx.write("verify.csv", |w| {
        writeln!(w, "# schema: {VERIFY_CSV_SCHEMA}")?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["instance", "check", "verdict"])?;
        for r in &rows {
            csv.write_record(r)?;
        }
        csv.flush()
    })?;
    Ok(violations)
}

fn oracle_cmd<S: Scalar>(ctx: &Ctx) -> Outcome {
    let model: Model<S> = ctx.cfg.build_model()?;
    let reward = ctx.cfg.build_reward(&model)?;
    let res = oracle::brute_force(&model, &reward)?;
    let rep = verify_theorems(&model, &reward)?;
    ctx.say(format_args!("rules enumerated    {}", res.rule_count));
    ctx.say(format_args!("max_value           {}", res.max_value));
    ctx.say(format_args!("|optimal set|       {}", res.optimal_rules.len()));
    ctx.say(format_args!("distinct optimal θ  {}", rep.distinct_optimal_times));
    ctx.say(format_args!("engine v(root)      {}", rep.engine_value));
    ctx.say(format_args!("sandwich verdict    {}", if rep.passes() { "PASS" } else { "FAIL" }));
    if ctx.cfg.output.optimal_set {
        let interior: Vec<NodeId> = model.node_ids().filter(|&id| !model.is_terminal(id)).collect();
        ctx.write("oracle_optimal_set.csv", |w| {
            writeln!(w, "# schema: {OPTIMAL_SET_CSV_SCHEMA}")?;
            let mut csv = csv::Writer::from_writer(w);
            let mut header = vec!["rule".to_string()];
            header.extend(interior.iter().map(|&id| model.node(id).label().to_string()));
            csv.write_record(&header)?;
            for (k, rule) in res.optimal_rules.iter().enumerate() {
                let mut row = vec![k.to_string()];
                row.extend(interior.iter().map(|&id| if rule.is_stop(id) { "STOP" } else { "CONTINUE" }.to_string()));
                csv.write_record(&row)?;
            }
            csv.flush()
        })?;
    }
    Ok(rep.failure().into_iter().collect())
}

fn epsilon<S: Scalar>(ctx: &Ctx) -> Outcome {
    let model: Model<S> = ctx.cfg.build_model()?;
    let reward = ctx.cfg.build_reward(&model)?;
    let from = start_rule(ctx, &model)?;
    let kind = ctx.cfg.run.epsilon_kind;
    let result = compute(&model, &reward)?;
    let target = start_value(&model, &result, &from)?;
    let star = minimal_optimal(&model, &result, &reward, &from)?;
    let eps0 = epsilon_collapse_threshold(&result, &reward, kind);
    ctx.say(format_args!("E[v(S)]   {target}"));
    ctx.say(format_args!("eps0      {eps0} ({kind:?}; collapse onto theta* below this)"));

    let mut eps: Vec<S> = ctx.cfg.epsilons()?;
    let half = eps0.clone() / S::from_usize(2);
    eps.push(half.clone());
    eps.sort_by(|a, b| b.partial_cmp(a).expect("comparable"));
    eps.dedup_by(|a, b| a == b);

    let mut violations = Vec::new();
    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut previous: Option<(S, StoppingRule)> = None;
    ctx.say("epsilon\tvalue\tguarantee\tE[theta]\t= theta*");
    for e in eps {
        let mode = EpsilonMode::new(kind, e.clone())?;
        let rule = epsilon_optimal(&model, &result, &reward, &mode, &from)?;
        let rep = evaluate(&model, &rule, &reward, &result, &from)?;
        let guarantee = match kind {
            EpsilonKind::Multiplicative => (S::one() - e.clone()) * target.clone(),
            EpsilonKind::Additive => target.clone() - e.clone(),
        };
        let ok = rep.value >= guarantee || rep.value.ties(&guarantee);
        let equals_star = same_stopping_time(&model, &rule, &star, &from)?;
        if !ok {
            violations.push(format!("guarantee at epsilon {e}: value {} < {guarantee}", rep.value));
        }
        if e < eps0 && !equals_star {
            violations.push(format!("collapse below eps0: epsilon {e} differs from theta*"));
        }
        if !pathwise_le(&model, &rule, &star, &from)? {
            violations.push(format!("theta^eps <= theta* at epsilon {e}"));
        }
        if let Some((pe, prule)) = &previous {
            if !pathwise_le(&model, prule, &rule, &from)? {
                violations.push(format!("monotonicity between epsilon {pe} and {e}"));
            }
        }
        let mean = mean_time(&model, &rep.time_distribution);
        ctx.say(format_args!("{e}\t{}\t{guarantee}\t{mean:.6}\t{equals_star}", rep.value));
        rows.push([e.to_string(), rep.value.to_string(), guarantee.to_string(), ok.to_string(), mean.to_string(), equals_star.to_string()]);
        for (t, m) in rep.time_distribution.iter().enumerate() {
            times.push([e.to_string(), t.to_string(), m.to_string()]);
        }
        previous = Some((e, rule));
    }
    let star_rep = evaluate(&model, &star, &reward, &result, &from)?;
    for (t, m) in star_rep.time_distribution.iter().enumerate() {
        times.push(["theta*".to_string(), t.to_string(), m.to_string()]);
    }
    ctx.write("epsilon.csv", |w| {
        writeln!(w, "# schema: {EPSILON_CSV_SCHEMA}")?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["epsilon", "value", "guarantee", "guarantee_ok", "mean_time", "equals_theta_star"])?;
        for r in &rows {
            csv.write_record(r)?;
        }
        csv.flush()
    })?;
    ctx.write("epsilon_times.csv", |w| {
        writeln!(w, "# schema: {EPSILON_TIMES_CSV_SCHEMA}")?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["epsilon", "t", "mass"])?;
        for r in &times {
            csv.write_record(r)?;
        }
        csv.flush()
    })?;
    Ok(violations)
}

fn region<S: Scalar>(ctx: &Ctx) -> Outcome {
    let model: Model<S> = ctx.cfg.build_model()?;
    let reward = ctx.cfg.build_reward(&model)?;
    let result = compute(&model, &reward)?;
    let region: HashSet<NodeId> = exercise_region(&result, &reward)?.into_iter().collect();
    ctx.say(format_args!("exercise region: {} of {} nodes", region.len(), model.len()));
    ctx.say("level\tin region\tmin state\tmax state");
    for t in 0..=model.n_steps() {
        let inside: Vec<&S> = model.level(t).iter().filter(|id| region.contains(id)).map(|&id| model.node(id).state()).collect();
        let lo = inside.iter().copied().reduce(|a, b| if b < a { b } else { a });
        let hi = inside.iter().copied().reduce(|a, b| if b > a { b } else { a });
        let show = |x: Option<&S>| x.map_or("-".to_string(), |x| x.to_string());
        ctx.say(format_args!("{t}\t{}/{}\t{}\t{}", inside.len(), model.level(t).len(), show(lo), show(hi)));
    }
    ctx.write("region.csv", |w| {
        writeln!(w, "# schema: {REGION_CSV_SCHEMA}")?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["node", "level", "state", "phi", "v", "in_region"])?;
        for id in model.node_ids() {
            let n = model.node(id);
            csv.write_record([
                n.label().to_string(),
                n.level().to_string(),
                n.state().to_string(),
                reward.get(id).to_string(),
                result.v().get(id).to_string(),
                region.contains(&id).to_string(),
            ])?;
        }
        csv.flush()
    })?;
    Ok(Vec::new())
}

/// USC/LSC digital pair on one lattice, compared node by node.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalComparison {
    pub n_steps: usize,
    pub v_usc: f64,
    pub v_lsc: f64,
    pub mean_theta_star: [f64; 2],
    pub mean_theta_check: [f64; 2],
    pub usc_region: usize,
    pub lsc_region: usize,
    /// Nodes in the LSC exercise region `{v = φ}` but not in the USC one.
    pub lsc_not_in_usc: Vec<NodeId>,
    pub strike_nodes: usize,
    /// Strike nodes in the USC region and not in the LSC region.
    pub strict_at_strike: usize,
    /// Same comparison restricted to in-the-money exercise `{v = φ > 0}`.
    pub itm_lsc_not_in_usc: usize,
    pub itm_strict_at_strike: usize,
    /// Nodes where `v_usc < v_lsc`.
    pub dominance_failures: usize,
}

pub fn compare_digitals(model: &Model<f64>, strike: f64) -> crate::Result<DigitalComparison> {
    let root = StoppingRule::stop_at_root(model);
    let u = digital_usc(model, strike)?;
    let l = digital_lsc(model, strike)?;
    let ru = compute(model, &u)?;
    let rl = compute(model, &l)?;
    let means = |reward: &RewardFamily<f64>, result: &SnellResult<f64>| -> crate::Result<(f64, f64)> {
        let star = minimal_optimal(model, result, reward, &root)?;
        let check = maximal_optimal(model, result, reward, &root)?;
        Ok((
            mean_time(model, &evaluate(model, &star, reward, result, &root)?.time_distribution),
            mean_time(model, &evaluate(model, &check, reward, result, &root)?.time_distribution),
        ))
    };
    let (su, cu) = means(&u, &ru)?;
    let (sl, cl) = means(&l, &rl)?;
    let eu: HashSet<NodeId> = exercise_region(&ru, &u)?.into_iter().collect();
    let el: HashSet<NodeId> = exercise_region(&rl, &l)?.into_iter().collect();
    let itm_u: HashSet<NodeId> = eu.iter().copied().filter(|&id| *u.get(id) > 0.0).collect();
    let itm_l: HashSet<NodeId> = el.iter().copied().filter(|&id| *l.get(id) > 0.0).collect();
    let mut lsc_not_in_usc: Vec<NodeId> = el.iter().copied().filter(|id| !eu.contains(id)).collect();
    lsc_not_in_usc.sort();
    let strike_nodes: Vec<NodeId> = model.node_ids().filter(|&id| model.node(id).state().ties(&strike)).collect();
    Ok(DigitalComparison {
        n_steps: model.n_steps(),
        v_usc: *ru.root_value(),
        v_lsc: *rl.root_value(),
        mean_theta_star: [su, sl],
        mean_theta_check: [cu, cl],
        usc_region: eu.len(),
        lsc_region: el.len(),
        lsc_not_in_usc,
        strike_nodes: strike_nodes.len(),
        strict_at_strike: strike_nodes.iter().filter(|id| eu.contains(id) && !el.contains(id)).count(),
        itm_lsc_not_in_usc: itm_l.iter().filter(|id| !itm_u.contains(id)).count(),
        itm_strict_at_strike: strike_nodes.iter().filter(|id| itm_u.contains(id) && !itm_l.contains(id)).count(),
        dominance_failures: model.node_ids().filter(|&id| ru.v().get(id) < rl.v().get(id)).count(),
    })
}

fn converge(ctx: &Ctx) -> Outcome {
    if ctx.cfg.run.arithmetic == Some(Arithmetic::Rational) {
        return Err(Failure::Config("converge runs on CRR lattices and needs float arithmetic".into()));
    }
    let m = ctx.cfg.model_section()?;
    if m.builder != Builder::Crr {
        return Err(Failure::Config("converge needs model.builder = \"crr\"".into()));
    }
    let s0: f64 = m.s0.as_ref().ok_or_else(|| Failure::Config("model.s0 is required".into()))?.to_scalar()?;
    let sigma = m.sigma.ok_or_else(|| Failure::Config("model.sigma is required".into()))?;
    let strike: f64 = match ctx.cfg.reward.as_ref().and_then(|r| r.strike.as_ref()) {
        Some(k) => k.to_scalar()?,
        None => s0,
    };
    let kind = m.kind.unwrap_or(ModelKind::MarkovLattice);
    let mut rows = Vec::new();
    let mut cmp_rows = Vec::new();
    let mut violations = Vec::new();
    let mut previous: Option<f64> = None;
    ctx.say(format_args!("digital pair at K = {strike}, s0 = {s0}"));
    ctx.say("N\tv_usc\tv_lsc\t|dv_usc|\tLSC ⊆ USC ({v=phi})\tstrict at K\tLSC ⊆ USC ({v=phi>0})\tstrict at K");
    for &n in &ctx.cfg.run.refinements {
        let (model, _) = crate::model::build_crr(s0, sigma, m.rate.unwrap_or(0.0), m.horizon.unwrap_or(1.0), n, kind)?;
        let c = compare_digitals(&model, strike)?;
        let diff = previous.map_or("-".to_string(), |p| format!("{:.3e}", (c.v_usc - p).abs()));
        previous = Some(c.v_usc);
        ctx.say(format_args!(
            "{n}\t{:.6}\t{:.6}\t{diff}\t{}\t{}/{}\t{}\t{}/{}",
            c.v_usc,
            c.v_lsc,
            if c.lsc_not_in_usc.is_empty() { "yes".to_string() } else { format!("no ({} nodes)", c.lsc_not_in_usc.len()) },
            c.strict_at_strike,
            c.strike_nodes,
            if c.itm_lsc_not_in_usc == 0 { "yes".to_string() } else { format!("no ({})", c.itm_lsc_not_in_usc) },
            c.itm_strict_at_strike,
            c.strike_nodes,
        ));
        if c.dominance_failures > 0 {
            violations.push(format!("v_usc >= v_lsc nodewise at N = {n} ({} nodes)", c.dominance_failures));
        }
        for (payoff, k) in [("digital_usc", 0), ("digital_lsc", 1)] {
            let v = if k == 0 { c.v_usc } else { c.v_lsc };
            rows.push([n.to_string(), payoff.to_string(), v.to_string(), c.mean_theta_star[k].to_string(), c.mean_theta_check[k].to_string()]);
        }
        cmp_rows.push([
            n.to_string(),
            c.usc_region.to_string(),
            c.lsc_region.to_string(),
            c.lsc_not_in_usc.len().to_string(),
            c.strike_nodes.to_string(),
            c.strict_at_strike.to_string(),
            c.itm_lsc_not_in_usc.to_string(),
            c.itm_strict_at_strike.to_string(),
        ]);
    }
    ctx.write("converge.csv", |w| {
        writeln!(w, "# schema: {CONVERGE_CSV_SCHEMA}")?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["N", "payoff", "v_root", "e_theta_star", "e_theta_check"])?;
        for r in &rows {
            csv.write_record(r)?;
        }
        csv.flush()
    })?;
    ctx.write("converge_regions.csv", |w| {
        writeln!(w, "# schema: {REGION_COMPARISON_CSV_SCHEMA}")?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "N",
            "usc_region",
            "lsc_region",
            "lsc_not_in_usc",
            "strike_nodes",
            "strict_at_strike",
            "itm_lsc_not_in_usc",
            "itm_strict_at_strike",
        ])?;
        for r in &cmp_rows {
            csv.write_record(r)?;
        }
        csv.flush()
    })?;
    Ok(violations)
}

fn lsmc(ctx: &Ctx) -> Outcome {
    let exp = ctx.cfg.lsmc.as_ref().ok_or_else(|| Failure::Config("missing [lsmc] section".into()))?;
    if ctx.cfg.run.arithmetic == Some(Arithmetic::Rational) {
        ctx.notice("lsmc always runs in float arithmetic");
    }
    let out = exp.run()?;
    let c = &out.comparison;
    ctx.say(format_args!("policy value   {:.6} ± {:.6} (stderr)", c.estimate, c.standard_error));
    ctx.say(format_args!("lattice value  {:.6}", c.lattice_value));
    ctx.say(format_args!("gap            {:.6} ({:.3}%)", c.gap, 100.0 * c.relative_gap));
    ctx.say(format_args!("verdict        {}", c.verdict()));
    ctx.say(format_args!("caveat         {}", c.caveat));
    for w in &out.value.warnings {
        eprintln!("warning: {w}");
    }
    ctx.write("lsmc_coefficients.csv", |w| out.policy.write_coefficients_csv(w))?;
    ctx.write("lsmc_estimate.csv", |w| c.write_csv(w))?;
    Ok(if c.flagged {
        vec![format!("lower bound: estimate {} exceeds lattice {} + 3·stderr", c.estimate, c.lattice_value)]
    } else {
        Vec::new()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dir_precedence() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(resolve_out_dir(Some(Path::new("a")), &cfg), PathBuf::from("a"));
        cfg.output.dir = Some("b".into());
        assert_eq!(resolve_out_dir(None, &cfg), PathBuf::from("b"));
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_atomic(dir.path(), "x.csv", |w| writeln!(w, "# schema: t\n1")).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "# schema: t\n1\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn digital_comparison_on_small_lattice() {
        let (m, _) = crate::model::build_crr(1.0, 0.2, 0.05, 1.0, 10, ModelKind::MarkovLattice).unwrap();
        let c = compare_digitals(&m, 1.0).unwrap();
        assert_eq!(c.dominance_failures, 0);
        assert!(c.v_usc >= c.v_lsc);
        assert_eq!(c.itm_lsc_not_in_usc, 0);
        assert_eq!(c.itm_strict_at_strike, c.strike_nodes);
        // zero-value nodes just below the strike are in the LSC region only
        assert!(!c.lsc_not_in_usc.is_empty());
    }
}
