//! Truncated average-cost semi-Markov decision process over the age at
//! decision epochs, solved by value iteration after data transformation.
//!
//! A decision epoch is a packet generation. In state `a` the controller
//! picks a blocklength `τ`; on success (probability `1-ε`) the next state is
//! `τ + G`, on failure `a + τ + G`, with `G ~ Geom(λ)` on `{0, 1, ...}`.
//! Ages beyond `a_max` are lumped onto `a_max`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::{GenerationModel, PolicySpec, Provenance, Scenario, TradeoffPoint};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;
const STATIONARY_RESIDUAL: f64 = 1e-12;
const STATIONARY_MAX_ITER: usize = 2_000_000;

/// Truncation level used when none is given: `τ_max + ⌈20/λ⌉`.
pub fn default_a_max(scenario: &Scenario) -> u32 {
    scenario.tau_max() + (20.0 / scenario.lambda).ceil() as u32
}

#[derive(Debug, Clone)]
pub struct SmdpModel {
    pub scenario: Scenario,
    pub beta: f64,
    pub a_max: u32,
    actions: Vec<u32>,
    powers: Vec<f64>,
    lambda: f64,
    epsilon: f64,
    idle: f64,
}

impl SmdpModel {
    pub fn build(scenario: &Scenario, beta: f64, a_max: Option<u32>) -> Result<Self> {
        scenario.validate()?;
        if scenario.model != GenerationModel::NP {
            return Err(Error::invalid("model", "the decision process is defined for the NP model"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid("beta", format!("must be finite and non-negative, got {beta}")));
        }
        let a_max = a_max.unwrap_or_else(|| default_a_max(scenario));
        if a_max < scenario.tau_max() + 1 {
            return Err(Error::Construction(format!(
                "a_max = {a_max} must be at least tau_max + 1 = {}",
                scenario.tau_max() + 1
            )));
        }
        Ok(SmdpModel {
            scenario: scenario.clone(),
            beta,
            a_max,
            actions: scenario.channel.actions().to_vec(),
            powers: scenario.channel.powers().to_vec(),
            lambda: scenario.lambda,
            epsilon: scenario.epsilon,
            idle: scenario.mean_idle(),
        })
    }

    pub fn min_age(&self) -> u32 {
        self.actions[0]
    }

    pub fn n_states(&self) -> usize {
        (self.a_max - self.min_age() + 1) as usize
    }

    pub fn actions(&self) -> &[u32] {
        &self.actions
    }

    fn state(&self, age: u32) -> usize {
        (age.min(self.a_max) - self.min_age()) as usize
    }

    /// Expected epoch length `τ + (1-λ)/λ`.
    pub fn epoch_length(&self, tau: u32) -> f64 {
        tau as f64 + self.idle
    }

    /// Expected age accumulated over one epoch.
    pub fn age_cost(&self, age: u32, tau: u32) -> f64 {
        let (a, t, g) = (age as f64, tau as f64, self.idle);
        a * t + t * (t - 1.0) / 2.0 + t * g + g * g + self.epsilon * a * g
    }

    /// Single-stage cost including the weighted energy `β P(τ) τ`.
    pub fn cost(&self, age: u32, tau: u32) -> Result<f64> {
        let p = self.scenario.channel.power(tau)?;
        Ok(self.age_cost(age, tau) + self.beta * p * tau as f64)
    }

    /// Next-state distribution as a dense vector over `min_age..=a_max`.
    pub fn kernel_row(&self, age: u32, tau: u32) -> Vec<f64> {
        let mut row = vec![0.0; self.n_states()];
        self.inject(&mut row, tau, 1.0 - self.epsilon);
        self.inject(&mut row, age.saturating_add(tau), self.epsilon);
        geometric_spread(&mut row, self.lambda);
        row
    }

    fn inject(&self, buf: &mut [f64], start: u32, mass: f64) {
        buf[self.state(start)] += mass;
    }
}

/// Replaces point masses `buf[b]` by geometric distributions starting at
/// `b`, lumping everything past the end onto the last entry.
fn geometric_spread(buf: &mut [f64], lambda: f64) {
    let n = buf.len();
    let mut carry = 0.0;
    for (j, v) in buf.iter_mut().enumerate() {
        carry = carry * (1.0 - lambda) + *v;
        *v = if j + 1 == n { carry } else { lambda * carry };
    }
}

/// Tail sums `S(b) = E[V(min(b + G, a_max))]`.
fn tail_sums(values: &[f64], lambda: f64, out: &mut [f64]) {
    let n = values.len();
    out[n - 1] = values[n - 1];
    for b in (0..n - 1).rev() {
        out[b] = lambda * values[b] + (1.0 - lambda) * out[b + 1];
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SmdpSolution {
    /// Age of the first table entry.
    pub min_age: u32,
    /// Blocklength per age state `min_age..=a_max`.
    pub policy: Vec<u32>,
    /// Average cost per slot, midpoint of the final bounds.
    pub gain: f64,
    pub gain_lower: f64,
    pub gain_upper: f64,
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Width of the gain bracket at termination.
    pub span: f64,
    pub converged: bool,
    pub a_max: u32,
}

impl SmdpSolution {
    pub fn policy_spec(&self) -> PolicySpec {
        PolicySpec::Tabular {
            min_age: self.min_age,
            actions: self.policy.clone(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.policy.windows(2).all(|w| w[0] == w[1])
    }
}

/// Value iteration on the data-transformed process.
///
/// Stops once the gain bracket `[min Δ, max Δ]` of the one-step value
/// differences has width below `tol · max(1, |min Δ|)`. Hitting `max_iter`
/// is reported through `converged = false`, not as an error.
pub fn value_iteration(model: &SmdpModel, tol: f64, max_iter: usize) -> Result<SmdpSolution> {
    let n = model.n_states();
    let k = model.actions.len();
    let (lambda, eps, g) = (model.lambda, model.epsilon, model.idle);
    let eta = 0.5 * model.epoch_length(model.min_age());

    // c(a, τ)/τ̃ = a·slope + intercept
    let mut slope = Vec::with_capacity(k);
    let mut intercept = Vec::with_capacity(k);
    let mut weight = Vec::with_capacity(k);
    for (&tau, &p) in model.actions.iter().zip(&model.powers) {
        let t = tau as f64;
        let len = model.epoch_length(tau);
        slope.push((t + eps * g) / len);
        intercept.push((t * (t - 1.0) / 2.0 + t * g + g * g + model.beta * p * t) / len);
        weight.push(eta / len);
    }
    // success restarts at τ, failure at a + τ
    let offsets: Vec<usize> = model.actions.iter().map(|&t| (t - model.min_age()) as usize).collect();

    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut sums = vec![0.0; n];
    let mut policy = vec![model.actions[0]; n];
    let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        tail_sums(&v, lambda, &mut sums);
        lower = f64::INFINITY;
        upper = f64::NEG_INFINITY;
        for i in 0..n {
            let age = model.min_age() + i as u32;
            let mut best = f64::INFINITY;
            let mut best_j = 0;
            for j in 0..k {
                let ok = offsets[j];
                let fail = (i + model.actions[j] as usize).min(n - 1);
                let expect = (1.0 - eps) * sums[ok] + eps * sums[fail];
                let q = age as f64 * slope[j] + intercept[j] + weight[j] * expect + (1.0 - weight[j]) * v[i];
                if q < best {
                    best = q;
                    best_j = j;
                }
            }
            next[i] = best;
            policy[i] = model.actions[best_j];
            let d = best - v[i];
            lower = lower.min(d);
            upper = upper.max(d);
        }
        let base = next[0];
        for (vi, ni) in v.iter_mut().zip(&next) {
            *vi = ni - base;
        }
        if !(lower.is_finite() && upper.is_finite()) {
            return Err(Error::Numerical("value iteration produced non-finite values".into()));
        }
        if upper - lower < tol * lower.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    Ok(SmdpSolution {
        min_age: model.min_age(),
        policy,
        gain: 0.5 * (lower + upper),
        gain_lower: lower,
        gain_upper: upper,
        values: v,
        iterations,
        span: upper - lower,
        converged,
        a_max: model.a_max,
    })
}

pub fn solve(scenario: &Scenario, beta: f64, a_max: Option<u32>, tol: f64) -> Result<(SmdpModel, SmdpSolution)> {
    let model = SmdpModel::build(scenario, beta, a_max)?;
    let sol = value_iteration(&model, tol, DEFAULT_MAX_ITER)?;
    Ok((model, sol))
}

#[derive(Debug, Clone)]
pub struct TabularEvaluation {
    pub point: TradeoffPoint,
    /// Stationary distribution of the embedded chain over ages.
    pub stationary: Vec<f64>,
    /// Stationary probability of choosing each action, in action-set order.
    pub action_probabilities: Vec<(u32, f64)>,
    /// `Σπc / Σπτ̃` including the weighted power term.
    pub gain: f64,
}

/// Splits a tabular policy's average cost into `(Ā, P̄)` via the stationary
/// distribution of the embedded chain and the renewal-reward ratios.
pub fn evaluate_tabular(model: &SmdpModel, policy: &[u32]) -> Result<TabularEvaluation> {
    let n = model.n_states();
    if policy.len() != n {
        return Err(Error::invalid("policy", format!("expected {n} entries, got {}", policy.len())));
    }
    for &tau in policy {
        if !model.scenario.channel.contains(tau) {
            return Err(Error::invalid("policy", format!("{tau} is not in the action set")));
        }
    }
    let (lambda, eps) = (model.lambda, model.epsilon);
    let step = |pi: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, (&mass, &tau)) in pi.iter().zip(policy).enumerate() {
            let age = model.min_age() + i as u32;
            model.inject(out, tau, (1.0 - eps) * mass);
            model.inject(out, age.saturating_add(tau), eps * mass);
        }
        geometric_spread(out, lambda);
    };

    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    for _ in 0..STATIONARY_MAX_ITER {
        step(&pi, &mut next);
        let residual: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        if residual < STATIONARY_RESIDUAL {
            converged = true;
            break;
        }
        // lazy update removes periodicity
        for (p, q) in pi.iter_mut().zip(&next) {
            *p = 0.5 * (*p + q);
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
    }
    if !converged {
        return Err(Error::Numerical("stationary distribution did not converge".into()));
    }

    let (mut age_num, mut energy_num, mut den) = (0.0, 0.0, 0.0);
    let mut marginals = vec![0.0; model.actions.len()];
    for (i, (&mass, &tau)) in pi.iter().zip(policy).enumerate() {
        let age = model.min_age() + i as u32;
        let idx = model.scenario.channel.index_of(tau).expect("validated");
        age_num += mass * model.age_cost(age, tau);
        energy_num += mass * model.powers[idx] * tau as f64;
        den += mass * model.epoch_length(tau);
        marginals[idx] += mass;
    }
    let (avg_age, avg_power) = (age_num / den, energy_num / den);
    Ok(TabularEvaluation {
        point: TradeoffPoint {
            avg_age,
            avg_power,
            provenance: Provenance::Smdp,
            policy: PolicySpec::Tabular {
                min_age: model.min_age(),
                actions: policy.to_vec(),
            },
            scenario_digest: model.scenario.digest(),
        },
        stationary: pi,
        action_probabilities: model.actions.iter().copied().zip(marginals).collect(),
        gain: avg_age + model.beta * avg_power,
    })
}

#[derive(Debug, Clone)]
pub struct FrontierPoint {
    pub beta: f64,
    pub evaluation: TabularEvaluation,
    pub solution: SmdpSolution,
}

/// Solves one model per `β` (in parallel) and evaluates each optimal policy.
pub fn sweep_beta(scenario: &Scenario, betas: &[f64], a_max: Option<u32>, tol: f64) -> Result<Vec<FrontierPoint>> {
    betas
        .par_iter()
        .map(|&beta| {
            let (model, solution) = solve(scenario, beta, a_max, tol)?;
            let evaluation = evaluate_tabular(&model, &solution.policy)?;
            Ok(FrontierPoint {
                beta,
                evaluation,
                solution,
            })
        })
        .collect()
}
