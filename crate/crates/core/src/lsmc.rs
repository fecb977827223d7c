//! Least-squares Monte Carlo: regression stopping policies on simulated
//! GBM paths, evaluated out of sample as a lower bound on the value.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{build_crr, ModelKind, TimeGrid};
use crate::reward::from_function;
use crate::snell::compute;

pub const COEFFICIENTS_CSV_SCHEMA: &str = "optstop.lsmc_coefficients.v1";
pub const ESTIMATE_CSV_SCHEMA: &str = "optstop.lsmc_estimate.v1";

/// Ridge added to the normal equations (relative to their mean diagonal)
/// when the plain Cholesky solve fails.
pub const RIDGE: f64 = 1e-8;

/// Attached to every report: regression smooths discontinuous payoffs, so
/// only the lower-bound property is meaningful.
pub const LOWER_BOUND_CAVEAT: &str =
    "out-of-sample policy value is a statistical lower bound only; no value equality is claimed";

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    n_paths: usize,
    states: Vec<f64>,
    seed: u64,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row of path `p`: states at levels `0..=N`.
    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.grid.n_steps() + 1;
        &self.states[p * w..(p + 1) * w]
    }

    pub fn state(&self, p: usize, t: usize) -> f64 {
        self.states[p * (self.grid.n_steps() + 1) + t]
    }

    pub fn s0(&self) -> f64 {
        self.states[0]
    }
}

/// Exact lognormal steps, `X_{t+1} = X_t exp((μ − σ²/2)Δ + σ√Δ Z)`.
/// Path `p` draws from ChaCha8 stream `p` of `seed`, so an ensemble is
/// reproducible independently of how paths are scheduled.
pub fn simulate_gbm(s0: f64, drift: f64, volatility: f64, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(Error::ParameterOutOfRange(format!("s0 must be positive, got {s0}")));
    }
    if !(volatility >= 0.0 && volatility.is_finite()) {
        return Err(Error::ParameterOutOfRange(format!("volatility must be >= 0, got {volatility}")));
    }
    if !drift.is_finite() {
        return Err(Error::ParameterOutOfRange("drift must be finite".into()));
    }
    if n_paths == 0 {
        return Err(Error::ParameterOutOfRange("n_paths must be >= 1".into()));
    }
    let n = grid.n_steps();
    let steps: Vec<(f64, f64)> = (0..n)
        .map(|t| {
            let dt = grid.time(t + 1) - grid.time(t);
            ((drift - 0.5 * volatility * volatility) * dt, volatility * dt.sqrt())
        })
        .collect();
    let mut states = Vec::with_capacity(n_paths * (n + 1));
    for p in 0..n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let mut x = s0;
        states.push(x);
        for &(mu, sd) in &steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            x *= (mu + sd * z).exp();
            states.push(x);
        }
    }
    Ok(PathEnsemble { grid: grid.clone(), n_paths, states, seed })
}

/// Continuation fit at one exercise date, in standardized monomials of
/// `x / s0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFit {
    /// Intercept first, then one coefficient per power `1..=degree`
    /// (zero for dropped constant columns).
    pub coefficients: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub in_the_money: usize,
    pub ridge_used: bool,
}

impl StepFit {
    fn continuation(&self, z: f64) -> f64 {
        let mut acc = self.coefficients[0];
        let mut power = 1.0;
        for k in 0..self.means.len() {
            power *= z;
            if self.scales[k] > 0.0 {
                acc += self.coefficients[k + 1] * (power - self.means[k]) / self.scales[k];
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPolicy {
    basis_degree: usize,
    n_steps: usize,
    scale: f64,
    /// Index `t` for `t = 1..N−1`; `None` means never stop at `t`.
    steps: Vec<Option<StepFit>>,
    stop_at_start: bool,
    fit_seed: Option<u64>,
}

impl RegressionPolicy {
    /// Never stops before the horizon.
    pub fn stop_at_horizon(n_steps: usize) -> Self {
        RegressionPolicy {
            basis_degree: 0,
            n_steps,
            scale: 1.0,
            steps: vec![None; n_steps],
            stop_at_start: false,
            fit_seed: None,
        }
    }

    pub fn basis_degree(&self) -> usize {
        self.basis_degree
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn stops_at_start(&self) -> bool {
        self.stop_at_start
    }

    pub fn step(&self, t: usize) -> Option<&StepFit> {
        self.steps.get(t).and_then(|s| s.as_ref())
    }

    /// Fitted continuation value at `(t, x)`, if the policy can stop at `t`.
    pub fn continuation(&self, t: usize, x: f64) -> Option<f64> {
        self.step(t).map(|fit| fit.continuation(x / self.scale))
    }

    /// Exercise predicate: stop iff `φ > 0` and `φ ≥` fitted continuation;
    /// forced at `N`.
    pub fn stops(&self, t: usize, x: f64, payoff: f64) -> bool {
        if t >= self.n_steps {
            return true;
        }
        if t == 0 {
            return self.stop_at_start;
        }
        payoff > 0.0 && self.continuation(t, x).is_some_and(|c| payoff >= c)
    }

    /// Adds `delta` to every fitted continuation value. A positive shift
    /// makes the policy exercise too late; used to corrupt a policy on
    /// purpose.
    pub fn shift_continuation(mut self, delta: f64) -> Self {
        for fit in self.steps.iter_mut().flatten() {
            fit.coefficients[0] += delta;
        }
        self
    }

    pub fn write_coefficients_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# schema: {COEFFICIENTS_CSV_SCHEMA}; basis: standardized monomials of x/{}", self.scale)?;
        let mut w = csv::Writer::from_writer(out);
        let d = self.basis_degree;
        let mut header = vec!["t".to_string(), "in_the_money".to_string(), "ridge".to_string()];
        header.extend((0..=d).map(|k| format!("coef_{k}")));
        header.extend((1..=d).map(|k| format!("mean_{k}")));
        header.extend((1..=d).map(|k| format!("scale_{k}")));
        w.write_record(&header)?;
        for t in 1..self.n_steps {
            let Some(fit) = self.step(t) else { continue };
            let mut row = vec![t.to_string(), fit.in_the_money.to_string(), fit.ridge_used.to_string()];
            row.extend(fit.coefficients.iter().map(|c| format!("{c:e}")));
            row.extend(fit.means.iter().map(|c| format!("{c:e}")));
            row.extend(fit.scales.iter().map(|c| format!("{c:e}")));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

fn regress(xs: &[f64], ys: &[f64], degree: usize, t: usize) -> Result<StepFit> {
    let n = xs.len();
    let mut means = vec![0.0; degree];
    let mut scales = vec![0.0; degree];
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(degree);
    for k in 0..degree {
        let col: Vec<f64> = xs.iter().map(|x| x.powi(k as i32 + 1)).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n as f64;
        means[k] = mean;
        // columns with no spread carry no information beyond the intercept
        scales[k] = if var.sqrt() > 1e-12 * mean.abs().max(1.0) { var.sqrt() } else { 0.0 };
        cols.push(col);
    }
    let active: Vec<usize> = (0..degree).filter(|&k| scales[k] > 0.0).collect();
    let p = active.len() + 1;
    let design = DMatrix::from_fn(n, p, |i, j| {
        if j == 0 {
            1.0
        } else {
            let k = active[j - 1];
            (cols[k][i] - means[k]) / scales[k]
        }
    });
    let y = DVector::from_column_slice(ys);
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * y;
    let (beta, ridge_used) = match gram.clone().cholesky() {
        Some(ch) => (ch.solve(&rhs), false),
        None => {
            let lambda = RIDGE * gram.trace() / p as f64;
            let ridged = gram + DMatrix::identity(p, p) * lambda;
            match ridged.cholesky() {
                Some(ch) => (ch.solve(&rhs), true),
                None => return Err(Error::SingularRegression(t)),
            }
        }
    };
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::SingularRegression(t));
    }
    let mut coefficients = vec![0.0; degree + 1];
    coefficients[0] = beta[0];
    for (j, &k) in active.iter().enumerate() {
        coefficients[k + 1] = beta[j + 1];
    }
    Ok(StepFit { coefficients, means, scales, in_the_money: n, ridge_used })
}

/// Backward regression of realized continuation payoffs on in-the-money
/// paths. `f(t, x)` is the reward at level `t`, already discounted if the
/// problem is discounted.
pub fn fit_policy(ensemble: &PathEnsemble, f: impl Fn(usize, f64) -> f64, basis_degree: usize) -> Result<RegressionPolicy> {
    if basis_degree == 0 {
        return Err(Error::ParameterOutOfRange("basis_degree must be >= 1".into()));
    }
    let n_paths = ensemble.n_paths();
    if n_paths <= 10 * (basis_degree + 1) {
        return Err(Error::ParameterOutOfRange(format!(
            "need more than {} paths for degree {basis_degree}, got {n_paths}",
            10 * (basis_degree + 1)
        )));
    }
    let n = ensemble.grid().n_steps();
    let scale = ensemble.s0();
    let mut cash: Vec<f64> = (0..n_paths).map(|p| f(n, ensemble.state(p, n))).collect();
    let mut steps = vec![None; n];
    for t in (1..n).rev() {
        let payoff: Vec<f64> = (0..n_paths).map(|p| f(t, ensemble.state(p, t))).collect();
        let itm: Vec<usize> = (0..n_paths).filter(|&p| payoff[p] > 0.0).collect();
        if itm.len() <= basis_degree + 1 {
            continue;
        }
        let xs: Vec<f64> = itm.iter().map(|&p| ensemble.state(p, t) / scale).collect();
        let ys: Vec<f64> = itm.iter().map(|&p| cash[p]).collect();
        let fit = regress(&xs, &ys, basis_degree, t)?;
        for (&p, &z) in itm.iter().zip(&xs) {
            if payoff[p] >= fit.continuation(z) {
                cash[p] = payoff[p];
            }
        }
        steps[t] = Some(fit);
    }
    let now = f(0, ensemble.s0());
    let later = cash.iter().sum::<f64>() / n_paths as f64;
    Ok(RegressionPolicy {
        basis_degree,
        n_steps: n,
        scale,
        steps,
        stop_at_start: n == 0 || (now > 0.0 && now >= later),
        fit_seed: Some(ensemble.seed()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    pub estimate: f64,
    pub standard_error: f64,
    pub n_paths: usize,
    pub warnings: Vec<String>,
}

/// Mean reward at the policy's stopping time over an ensemble that should
/// be independent of the fitting one.
pub fn policy_value(ensemble: &PathEnsemble, policy: &RegressionPolicy, f: impl Fn(usize, f64) -> f64) -> Result<PolicyValue> {
    let n = ensemble.grid().n_steps();
    if n != policy.n_steps() {
        return Err(Error::ParameterOutOfRange(format!(
            "policy has {} steps, ensemble {n}",
            policy.n_steps()
        )));
    }
    let mut warnings = Vec::new();
    if policy.fit_seed == Some(ensemble.seed()) {
        let msg = format!("SEED_REUSE_WARNING: evaluation seed {} equals the fitting seed", ensemble.seed());
        tracing::warn!("{msg}");
        warnings.push(msg);
    }
    let values: Vec<f64> = (0..ensemble.n_paths())
        .map(|p| {
            let path = ensemble.path(p);
            (0..=n)
                .find_map(|t| {
                    let payoff = f(t, path[t]);
                    policy.stops(t, path[t], payoff).then_some(payoff)
                })
                .unwrap_or(0.0)
        })
        .collect();
    let m = values.len() as f64;
    let estimate = values.iter().sum::<f64>() / m;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - estimate) * (v - estimate)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    Ok(PolicyValue { estimate, standard_error: (var / m).sqrt(), n_paths: values.len(), warnings })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeComparison {
    pub estimate: f64,
    pub standard_error: f64,
    pub lattice_value: f64,
    /// `lattice_value − estimate`.
    pub gap: f64,
    pub relative_gap: f64,
    /// The estimate exceeds `lattice_value + 3·stderr`.
    pub flagged: bool,
    pub caveat: &'static str,
}

impl LatticeComparison {
    pub fn verdict(&self) -> &'static str {
        if self.flagged {
            "FLAG_ABOVE_LATTICE"
        } else {
            "LOWER_BOUND_OK"
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# schema: {ESTIMATE_CSV_SCHEMA}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["estimate", "stderr", "lattice_ref", "gap", "verdict"])?;
        w.write_record([
            format!("{:e}", self.estimate),
            format!("{:e}", self.standard_error),
            format!("{:e}", self.lattice_value),
            format!("{:e}", self.gap),
            self.verdict().to_string(),
        ])?;
        w.flush()
    }
}

pub fn compare_to_lattice(value: &PolicyValue, lattice_value: f64) -> LatticeComparison {
    let gap = lattice_value - value.estimate;
    LatticeComparison {
        estimate: value.estimate,
        standard_error: value.standard_error,
        lattice_value,
        gap,
        relative_gap: if lattice_value != 0.0 { gap / lattice_value } else { gap },
        flagged: value.estimate > lattice_value + 3.0 * value.standard_error,
        caveat: LOWER_BOUND_CAVEAT,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Vanilla {
    Put,
    Call,
}

/// Discounted vanilla payoff exercisable on a uniform date grid, priced by
/// regression on GBM paths and, for reference, on a CRR lattice whose
/// exercise dates coincide with the simulation grid.
#[derive(Debug, Clone, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct GbmExperiment {
    pub payoff: Vanilla,
    pub s0: f64,
    pub strike: f64,
    pub rate: f64,
    pub volatility: f64,
    pub horizon: f64,
    pub exercise_dates: usize,
    pub fit_paths: usize,
    pub eval_paths: usize,
    pub basis_degree: usize,
    /// Lattice steps per exercise date.
    pub lattice_substeps: usize,
    pub fit_seed: u64,
    pub eval_seed: u64,
}

impl GbmExperiment {
    /// The usual regression benchmark: American put with `S0 = 36`,
    /// `K = 40`, `r = 6%`, `σ = 20%`, `T = 1`, 50 exercise dates.
    pub fn american_put() -> Self {
        GbmExperiment {
            payoff: Vanilla::Put,
            s0: 36.0,
            strike: 40.0,
            rate: 0.06,
            volatility: 0.2,
            horizon: 1.0,
            exercise_dates: 50,
            fit_paths: 100_000,
            eval_paths: 100_000,
            basis_degree: 3,
            lattice_substeps: 20,
            fit_seed: 1,
            eval_seed: 2,
        }
    }

    fn intrinsic(&self, x: f64) -> f64 {
        match self.payoff {
            Vanilla::Put => (self.strike - x).max(0.0),
            Vanilla::Call => (x - self.strike).max(0.0),
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.exercise_dates, self.horizon)
    }

    /// `e^{−r t_k} · payoff(x)` at exercise date `k`.
    pub fn reward(&self, k: usize, x: f64) -> f64 {
        let t = self.horizon * k as f64 / self.exercise_dates as f64;
        (-self.rate * t).exp() * self.intrinsic(x)
    }

    /// Root value on a recombining CRR lattice with
    /// `exercise_dates · lattice_substeps` steps, exercisable only on the
    /// simulation dates.
    pub fn lattice_value(&self) -> Result<f64> {
        if self.lattice_substeps == 0 {
            return Err(Error::ParameterOutOfRange("lattice_substeps must be >= 1".into()));
        }
        let steps = self.exercise_dates * self.lattice_substeps;
        let (model, _) = build_crr(self.s0, self.volatility, self.rate, self.horizon, steps, ModelKind::MarkovLattice)?;
        let m = self.lattice_substeps;
        // the lattice is risk-neutral at rate r, so discounting is the
        // reward's job, as in the simulation
        let reward = from_function(&model, "bermudan", |level, &x| {
            if level % m == 0 {
                self.reward(level / m, x)
            } else {
                0.0
            }
        })?;
        Ok(*compute(&model, &reward)?.root_value())
    }

    pub fn run(&self) -> Result<ExperimentOutcome> {
        let grid = self.grid()?;
        let fit = simulate_gbm(self.s0, self.rate, self.volatility, &grid, self.fit_paths, self.fit_seed)?;
        let policy = fit_policy(&fit, |k, x| self.reward(k, x), self.basis_degree)?;
        drop(fit);
        let eval = simulate_gbm(self.s0, self.rate, self.volatility, &grid, self.eval_paths, self.eval_seed)?;
        let value = policy_value(&eval, &policy, |k, x| self.reward(k, x))?;
        let comparison = compare_to_lattice(&value, self.lattice_value()?);
        Ok(ExperimentOutcome { policy, value, comparison })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub policy: RegressionPolicy,
    pub value: PolicyValue,
    pub comparison: LatticeComparison,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::uniform(n, 1.0).unwrap()
    }

    #[test]
    fn zero_volatility_is_deterministic() {
        let e = simulate_gbm(10.0, 0.0, 0.0, &grid(5), 20, 1).unwrap();
        for p in 0..20 {
            assert!(e.path(p).iter().all(|&x| x == 10.0));
        }
    }

    #[test]
    fn seeds_reproduce() {
        let a = simulate_gbm(10.0, 0.05, 0.3, &grid(4), 50, 9).unwrap();
        let b = simulate_gbm(10.0, 0.05, 0.3, &grid(4), 50, 9).unwrap();
        let c = simulate_gbm(10.0, 0.05, 0.3, &grid(4), 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.path(0), c.path(0));
        // a path does not depend on how many others were drawn
        let short = simulate_gbm(10.0, 0.05, 0.3, &grid(4), 3, 9).unwrap();
        assert_eq!(short.path(2), a.path(2));
    }

    #[test]
    fn terminal_mean_matches_lognormal() {
        let (s0, mu, sigma, n) = (100.0, 0.08, 0.25, 20_000);
        let e = simulate_gbm(s0, mu, sigma, &grid(4), n, 42).unwrap();
        let xs: Vec<f64> = (0..n).map(|p| e.state(p, 4)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let expected = s0 * (mu * 1.0f64).exp();
        assert!((mean - expected).abs() < 4.0 * sd / (n as f64).sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn parameter_checks() {
        assert!(simulate_gbm(10.0, 0.0, -0.1, &grid(2), 5, 0).is_err());
        assert!(simulate_gbm(10.0, 0.0, 0.1, &grid(2), 0, 0).is_err());
        let e = simulate_gbm(10.0, 0.0, 0.1, &grid(2), 20, 0).unwrap();
        assert!(fit_policy(&e, |_, _| 1.0, 0).is_err());
        assert!(fit_policy(&e, |_, _| 1.0, 1).is_err()); // 20 <= 10 * 2
    }

    #[test]
    fn constant_reward_stops_at_start() {
        let e = simulate_gbm(10.0, 0.0, 0.2, &grid(5), 100, 1).unwrap();
        let policy = fit_policy(&e, |_, _| 2.5, 2).unwrap();
        assert!(policy.stops_at_start());
        let out = simulate_gbm(10.0, 0.0, 0.2, &grid(5), 100, 2).unwrap();
        let v = policy_value(&out, &policy, |_, _| 2.5).unwrap();
        assert_eq!(v.estimate, 2.5);
        assert_eq!(v.standard_error, 0.0);
        let cmp = compare_to_lattice(&v, 2.5);
        assert_eq!(cmp.gap, 0.0);
        assert!(!cmp.flagged);
    }

    #[test]
    fn deterministic_ensemble_matches_scalar_program() {
        // single deterministic path with reward peaking at t = 3
        let rewards = [1.0, 2.0, 3.0, 5.0, 4.0, 0.5];
        let f = |t: usize, _x: f64| rewards[t];
        let e = simulate_gbm(10.0, 0.0, 0.0, &grid(5), 40, 3).unwrap();
        let policy = fit_policy(&e, f, 2).unwrap();
        let first_stop = (0..=5).find(|&t| policy.stops(t, 10.0, rewards[t])).unwrap();
        assert_eq!(first_stop, 3);
        let v = policy_value(&simulate_gbm(10.0, 0.0, 0.0, &grid(5), 40, 4).unwrap(), &policy, f).unwrap();
        assert_eq!(v.estimate, 5.0);
    }

    #[test]
    fn stop_at_horizon_policy_is_terminal_mean() {
        let e = simulate_gbm(10.0, 0.0, 0.3, &grid(3), 200, 5).unwrap();
        let f = |_t: usize, x: f64| (11.0 - x).max(0.0);
        let v = policy_value(&e, &RegressionPolicy::stop_at_horizon(3), f).unwrap();
        let mean = (0..200).map(|p| f(3, e.state(p, 3))).sum::<f64>() / 200.0;
        assert!((v.estimate - mean).abs() < 1e-12);
    }

    #[test]
    fn seed_reuse_warns() {
        let e = simulate_gbm(10.0, 0.0, 0.3, &grid(3), 200, 5).unwrap();
        let f = |_t: usize, x: f64| (11.0 - x).max(0.0);
        let policy = fit_policy(&e, f, 2).unwrap();
        let v = policy_value(&e, &policy, f).unwrap();
        assert_eq!(v.warnings.len(), 1);
        assert!(v.warnings[0].starts_with("SEED_REUSE_WARNING"));
    }

    #[test]
    fn corrupted_policy_loses_value() {
        let f = |_t: usize, x: f64| (40.0 - x).max(0.0);
        let g = grid(10);
        let fit = simulate_gbm(36.0, 0.0, 0.3, &g, 5_000, 1).unwrap();
        let eval = simulate_gbm(36.0, 0.0, 0.3, &g, 5_000, 2).unwrap();
        let good = fit_policy(&fit, f, 3).unwrap();
        let bad = good.clone().shift_continuation(-3.0);
        let vg = policy_value(&eval, &good, f).unwrap();
        let vb = policy_value(&eval, &bad, f).unwrap();
        assert!(vb.estimate < vg.estimate);
    }

    #[test]
    fn collinear_columns_fall_back_or_drop() {
        // every in-the-money state equal: all power columns are constant
        let fit = regress(&[0.5; 30], &[1.0; 30], 3, 1).unwrap();
        assert_eq!(fit.scales, vec![0.0; 3]);
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_put_experiment_is_a_lower_bound() {
        let mut e = GbmExperiment::american_put();
        e.exercise_dates = 10;
        e.fit_paths = 4_000;
        e.eval_paths = 4_000;
        e.lattice_substeps = 20;
        let out = e.run().unwrap();
        assert!(!out.comparison.flagged, "{:?}", out.comparison);
        assert!(out.comparison.relative_gap < 0.05, "{:?}", out.comparison);
    }

    #[test]
    fn coefficient_csv_has_schema() {
        let e = simulate_gbm(36.0, 0.06, 0.2, &grid(4), 500, 1).unwrap();
        let policy = fit_policy(&e, |_, x| (40.0 - x).max(0.0), 2).unwrap();
        let mut buf = Vec::new();
        policy.write_coefficients_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# schema: optstop.lsmc_coefficients.v1"));
        assert!(text.lines().nth(1).unwrap().starts_with("t,in_the_money,ridge,coef_0,coef_1,coef_2"));
    }
}
