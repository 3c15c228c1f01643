//! Lower bounds on the optimal average age under an average power budget
//! `p_c`, and caps on the stationary action probabilities near the ends of
//! the power range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{Constraint, LinearProgram, Relation};
use crate::scenario::Scenario;
use crate::special::MonotoneCubic;

const BUDGET_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    CharnesCooper,
    Analytic,
    Cap,
}

/// Which numerator to use in the pair-distribution program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumeratorForm {
    /// `τ'(g + τ) + τ'(τ' - 1)/2 + τ'g + g²`, the renewal-reward cost with
    /// the exact idle-time second moment.
    #[default]
    Proof,
    /// `τ(g + τ') + (g + τ')(g + τ' - 1)/2`.
    Statement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfpOptions {
    /// Keep every `stride`-th blocklength (the endpoints are always kept).
    pub stride: usize,
    pub form: NumeratorForm,
}

impl Default for LfpOptions {
    fn default() -> Self {
        LfpOptions {
            stride: 1,
            form: NumeratorForm::Proof,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundResult {
    /// Bound on the average age, in slots.
    pub value: f64,
    /// `(τ, τ', mass)` triples with positive mass.
    pub support: Vec<(u32, u32, f64)>,
    pub method: BoundMethod,
    /// Continuous minimizer of the analytical bound.
    pub tau_star: Option<f64>,
}

/// Average power of FTT at `τ_max`, the smallest achievable.
pub fn min_avg_power(scenario: &Scenario) -> f64 {
    let t = scenario.tau_max();
    let p = scenario.channel.power(t).expect("tau_max is an action");
    p * t as f64 / (t as f64 + scenario.mean_idle())
}

/// Average power of FTT at `τ_min`, the largest any policy uses.
pub fn max_avg_power(scenario: &Scenario) -> f64 {
    let t = scenario.tau_min();
    let p = scenario.channel.power(t).expect("tau_min is an action");
    p * t as f64 / (t as f64 + scenario.mean_idle())
}

fn check_budget(scenario: &Scenario, p_c: f64) -> Result<()> {
    let floor = min_avg_power(scenario);
    if !(p_c >= floor * (1.0 - BUDGET_RTOL)) {
        return Err(Error::Infeasible(format!(
            "power budget {p_c} mW is below the minimum achievable average power {floor} mW"
        )));
    }
    Ok(())
}

/// Strided copy of the action set that keeps both endpoints.
fn strided(actions: &[u32], stride: usize) -> Vec<u32> {
    let stride = stride.max(1);
    let mut out: Vec<u32> = actions.iter().copied().step_by(stride).collect();
    let last = *actions.last().unwrap();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Coefficients of the pair program: for each `(τ, τ')`, the numerator,
/// denominator and power-constraint weights.
#[derive(Debug, Clone)]
pub struct LfpProblem {
    pub pairs: Vec<(u32, u32)>,
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub power: Vec<f64>,
    pub p_c: f64,
    pub idle: f64,
}

impl LfpProblem {
    pub fn build(scenario: &Scenario, p_c: f64, options: &LfpOptions) -> Result<Self> {
        let grid = strided(scenario.channel.actions(), options.stride);
        let g = scenario.mean_idle();
        let n = grid.len() * grid.len();
        let mut prob = LfpProblem {
            pairs: Vec::with_capacity(n),
            numerator: Vec::with_capacity(n),
            denominator: Vec::with_capacity(n),
            power: Vec::with_capacity(n),
            p_c,
            idle: g,
        };
        for &tau in &grid {
            for &next in &grid {
                let (t, u) = (tau as f64, next as f64);
                let num = match options.form {
                    NumeratorForm::Proof => u * (g + t) + 0.5 * u * (u - 1.0) + u * g + g * g,
                    NumeratorForm::Statement => t * (g + u) + 0.5 * (g + u) * (g + u - 1.0),
                };
                let p = scenario.channel.power(next)?;
                prob.pairs.push((tau, next));
                prob.numerator.push(num);
                prob.denominator.push(u + g);
                prob.power.push(p * u - p_c * u);
            }
        }
        Ok(prob)
    }

    /// Objective of the fractional program at a pair distribution.
    pub fn objective(&self, p: &[f64]) -> f64 {
        let num: f64 = p.iter().zip(&self.numerator).map(|(a, b)| a * b).sum();
        let den: f64 = p.iter().zip(&self.denominator).map(|(a, b)| a * b).sum();
        num / den
    }

    /// Power-constraint slack `p_c g - Σ p (P(τ')τ' - p_c τ')`.
    pub fn slack(&self, p: &[f64]) -> f64 {
        self.p_c * self.idle - p.iter().zip(&self.power).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Charnes–Cooper: with `y = t p`, `t = 1 / Σ p (τ' + g)`, solve
    /// `min Σ n y` s.t. `Σ (τ' + g) y = 1`, `Σ y = t`,
    /// `Σ (P(τ')τ' - p_c τ') y <= p_c g t`.
    pub fn solve(&self) -> Result<(f64, Vec<f64>)> {
        let n = self.pairs.len();
        let mut objective = self.numerator.clone();
        objective.push(0.0);
        let mut norm = self.denominator.clone();
        norm.push(0.0);
        let mut mass = vec![1.0; n];
        mass.push(-1.0);
        let mut power = self.power.clone();
        power.push(-self.p_c * self.idle);
        let lp = LinearProgram {
            objective,
            constraints: vec![
                Constraint {
                    coeffs: norm,
                    relation: Relation::Eq,
                    rhs: 1.0,
                },
                Constraint {
                    coeffs: mass,
                    relation: Relation::Eq,
                    rhs: 0.0,
                },
                Constraint {
                    coeffs: power,
                    relation: Relation::Le,
                    rhs: 0.0,
                },
            ],
        };
        let sol = lp.solve()?;
        let t = sol.x[n];
        if !(t > 0.0) {
            return Err(Error::Numerical("Charnes-Cooper scale came out non-positive".into()));
        }
        let p: Vec<f64> = sol.x[..n].iter().map(|y| y / t).collect();
        Ok((sol.objective, p))
    }
}

/// Optimal value of the pair-distribution fractional program.
pub fn numerical_lower_bound(scenario: &Scenario, p_c: f64, options: &LfpOptions) -> Result<BoundResult> {
    check_budget(scenario, p_c)?;
    let problem = LfpProblem::build(scenario, p_c, options)?;
    let (value, p) = problem.solve()?;
    let support = problem
        .pairs
        .iter()
        .zip(&p)
        .filter(|(_, &m)| m > 1e-12)
        .map(|(&(a, b), &m)| (a, b, m))
        .collect();
    Ok(BoundResult {
        value,
        support,
        method: BoundMethod::CharnesCooper,
        tau_star: None,
    })
}

/// `c_l(τ) = 2τg + τ τ_min + τ(τ-1)/2 + g²`.
fn c_l(tau: f64, tau_min: f64, g: f64) -> f64 {
    2.0 * tau * g + tau * tau_min + tau * (tau - 1.0) / 2.0 + g * g
}

/// Analytical bound `c_l(τ*)/(τ_max + g)`, with `τ*` the smallest real
/// blocklength whose FTT power fits the budget. `P` is extended between
/// grid points by monotone cubic interpolation.
pub fn analytical_lower_bound(scenario: &Scenario, p_c: f64) -> Result<BoundResult> {
    check_budget(scenario, p_c)?;
    let ch = &scenario.channel;
    let (lambda, g) = (scenario.lambda, scenario.mean_idle());
    let (tmin, tmax) = (scenario.tau_min() as f64, scenario.tau_max() as f64);
    let f_at = |tau: f64, p: f64| lambda * tau * p / (1.0 - lambda + lambda * tau);

    let tau_star = if ch.actions().len() == 1 {
        tmin
    } else {
        let xs: Vec<f64> = ch.actions().iter().map(|&t| t as f64).collect();
        let curve = MonotoneCubic::new(xs.clone(), ch.powers().to_vec())
            .ok_or_else(|| Error::Numerical("power table cannot be interpolated".into()))?;
        let f = |tau: f64| f_at(tau, curve.eval(tau));
        if f(tmin) <= p_c {
            tmin
        } else {
            // first grid node that meets the budget, then bisect inside the cell
            let hi_idx = xs.iter().position(|&x| f(x) <= p_c).unwrap_or(xs.len() - 1);
            let (mut lo, mut hi) = (xs[hi_idx.saturating_sub(1)], xs[hi_idx]);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if f(mid) <= p_c {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        }
    };
    Ok(BoundResult {
        value: c_l(tau_star, tmin, g) / (tmax + g),
        support: Vec::new(),
        method: BoundMethod::Analytic,
        tau_star: Some(tau_star),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerRegime {
    /// Budget within `δ` of the minimum average power.
    LowPower,
    /// Average power within `δ` of the maximum.
    HighPower,
}

/// Caps on the stationary probability of using each blocklength when the
/// average power is within `delta` of one end of the range. The extreme
/// blocklength of the regime is excluded; caps are clipped to one.
pub fn stationary_probability_caps(scenario: &Scenario, delta: f64, regime: PowerRegime) -> Result<Vec<(u32, f64)>> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", format!("must be positive, got {delta}")));
    }
    let ch = &scenario.channel;
    let g = scenario.mean_idle();
    let (tmin, tmax) = (scenario.tau_min(), scenario.tau_max());
    let e_min = ch.energy(tmin)?;
    let e_max = ch.energy(tmax)?;
    let mut caps = Vec::new();
    for (tau, p) in ch.iter() {
        let e = p * tau as f64;
        let cap = match regime {
            PowerRegime::LowPower if tau != tmax => delta * (tmax as f64 + g) / (e - e_max),
            PowerRegime::HighPower if tau != tmin => delta * (tmin as f64 + g) / (e_min - e),
            _ => continue,
        };
        // equal energies leave the probability unconstrained
        let cap = if cap.is_finite() && cap >= 0.0 { cap.min(1.0) } else { 1.0 };
        caps.push((tau, cap));
    }
    Ok(caps)
}
