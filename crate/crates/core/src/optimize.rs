//! Differential evolution and Pareto tradeoff curves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    ftt_age_threshold, ftt_age_threshold_values, ftt_np, ftt_np_values, ftt_preemptive, ftt_preemptive_values,
    threshold_errorfree_values,
};
use crate::error::{Error, Result};
use crate::scenario::{GenerationModel, PolicySpec, Provenance, Scenario, TradeoffPoint};
use crate::simulate::{simulate, SimConfig};
use crate::smdp::{sweep_beta, DEFAULT_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub population: usize,
    /// Differential weight.
    pub f: f64,
    /// Crossover rate.
    pub cr: f64,
    pub generations: usize,
    pub seed: u64,
    /// Box `(lo, hi)` per parameter.
    pub bounds: Vec<(f64, f64)>,
    /// Parameters rounded to integers before evaluation.
    pub integer: Vec<bool>,
}

impl DeConfig {
    pub fn new(bounds: Vec<(f64, f64)>, integer: Vec<bool>, seed: u64) -> Self {
        DeConfig {
            population: 30,
            f: 0.7,
            cr: 0.9,
            generations: 300,
            seed,
            bounds,
            integer,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::invalid("population", "must be at least 4"));
        }
        if !(self.f > 0.0 && self.f < 2.0) {
            return Err(Error::invalid("f", format!("must lie in (0, 2), got {}", self.f)));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return Err(Error::invalid("cr", format!("must lie in [0, 1], got {}", self.cr)));
        }
        if self.bounds.is_empty() || self.bounds.len() != self.integer.len() {
            return Err(Error::invalid("bounds", "need one bound and one integer flag per parameter"));
        }
        if self.bounds.iter().any(|&(lo, hi)| !(lo <= hi && lo.is_finite() && hi.is_finite())) {
            return Err(Error::invalid("bounds", "each box must satisfy lo <= hi"));
        }
        Ok(())
    }

    fn coerce(&self, x: &mut [f64]) {
        for ((v, &(lo, hi)), &int) in x.iter_mut().zip(&self.bounds).zip(&self.integer) {
            *v = v.clamp(lo, hi);
            if int {
                *v = v.round().clamp(lo.ceil(), hi.floor());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    /// Best value after each generation (index 0 is the initial population).
    pub history: Vec<f64>,
}

/// `rand/1/bin` differential evolution. Evaluations within a generation run
/// in parallel; trial vectors are drawn sequentially, so the result depends
/// only on the seed. Non-finite objective values count as `+inf`.
pub fn differential_evolution<F>(objective: F, config: &DeConfig) -> Result<DeResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let dim = config.bounds.len();
    let np = config.population;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let score = |x: &Vec<f64>| {
        let v = objective(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            let mut x: Vec<f64> = config.bounds.iter().map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo }).collect();
            config.coerce(&mut x);
            x
        })
        .collect();
    let mut fit: Vec<f64> = pop.par_iter().map(score).collect();
    let best_of = |fit: &[f64]| {
        fit.iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
    };
    let mut history = vec![best_of(&fit).1];

    for _ in 0..config.generations {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let pick = |rng: &mut ChaCha8Rng, taken: &[usize]| loop {
                    let r = rng.gen_range(0..np);
                    if !taken.contains(&r) {
                        return r;
                    }
                };
                let r1 = pick(&mut rng, &[i]);
                let r2 = pick(&mut rng, &[i, r1]);
                let r3 = pick(&mut rng, &[i, r1, r2]);
                let jrand = rng.gen_range(0..dim);
                let mut trial = pop[i].clone();
                for j in 0..dim {
                    if j == jrand || rng.gen::<f64>() < config.cr {
                        trial[j] = pop[r1][j] + config.f * (pop[r2][j] - pop[r3][j]);
                    }
                }
                config.coerce(&mut trial);
                trial
            })
            .collect();
        let scores: Vec<f64> = trials.par_iter().map(score).collect();
        for (i, (trial, s)) in trials.into_iter().zip(scores).enumerate() {
            if s <= fit[i] {
                pop[i] = trial;
                fit[i] = s;
            }
        }
        history.push(best_of(&fit).1);
    }

    let (bi, bv) = best_of(&fit);
    if !bv.is_finite() {
        return Err(Error::Numerical("every candidate evaluated to a non-finite value".into()));
    }
    Ok(DeResult {
        argmin: pop[bi].clone(),
        value: bv,
        history,
    })
}

/// Keeps the points not dominated in (age, power), sorted by power; along
/// the result age strictly decreases as power increases.
pub fn pareto_filter(mut points: Vec<TradeoffPoint>) -> Vec<TradeoffPoint> {
    points.retain(|p| p.avg_age.is_finite() && p.avg_power.is_finite());
    points.sort_by(|a, b| a.avg_power.total_cmp(&b.avg_power).then(a.avg_age.total_cmp(&b.avg_age)));
    let mut out: Vec<TradeoffPoint> = Vec::new();
    for p in points {
        if out.last().is_none_or(|last| p.avg_age < last.avg_age) {
            out.push(p);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFamily {
    /// Every `t_s` in the action set, closed form for the scenario's model.
    FttSweep,
    /// Error-free threshold optimization by DE, then simulation with errors.
    ThresholdDe,
    /// DE over `(λ, t_s)` for the non-preemptive model.
    NpOpt,
    /// DE over `(λ, t_s)` for the preemptive model.
    POpt,
    /// Every `(h_a, t_s)` of the age-threshold model, Pareto filtered.
    AtSweep,
    /// Lagrangian sweep of the decision process.
    SmdpFrontier,
}

/// The logarithmic default grid `{0, 0.1, 1, ..., 10⁶}`.
pub fn default_beta_grid() -> Vec<f64> {
    let mut v = vec![0.0];
    v.extend((-1..=6).map(|k| 10f64.powi(k)));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub betas: Vec<f64>,
    pub seed: u64,
    pub population: usize,
    pub f: f64,
    pub cr: f64,
    pub generations: usize,
    pub sim_horizon: u64,
    pub sim_warmup: u64,
    /// Largest `h_a - t_s` offset in the AT sweep; defaults to `⌈5/λ⌉`.
    pub at_max_offset: Option<u32>,
    pub a_max: Option<u32>,
    pub tol: f64,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions {
            betas: default_beta_grid(),
            seed: 1,
            population: 30,
            f: 0.7,
            cr: 0.9,
            generations: 300,
            sim_horizon: 1_000_000,
            sim_warmup: 100_000,
            at_max_offset: None,
            a_max: None,
            tol: DEFAULT_TOL,
        }
    }
}

impl CurveOptions {
    fn de(&self, bounds: Vec<(f64, f64)>, integer: Vec<bool>, seed: u64) -> DeConfig {
        DeConfig {
            population: self.population,
            f: self.f,
            cr: self.cr,
            generations: self.generations,
            seed,
            bounds,
            integer,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CurveSpec {
    pub family: CurveFamily,
    pub scenario: Scenario,
    pub options: CurveOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    /// Lagrange weight that produced the point, for optimized families.
    pub beta: Option<f64>,
    /// Generation probability the point was evaluated at.
    pub lambda: f64,
    pub point: TradeoffPoint,
}

fn seed_for(base: u64, index: usize) -> u64 {
    base.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index as u64 + 1))
}

fn filtered(points: Vec<CurvePoint>) -> Vec<CurvePoint> {
    let kept = pareto_filter(points.iter().map(|c| c.point.clone()).collect());
    let mut out = Vec::with_capacity(kept.len());
    for k in kept {
        if let Some(c) = points.iter().find(|c| c.point == k) {
            out.push(c.clone());
        }
    }
    out
}

pub fn pareto_curve(spec: &CurveSpec) -> Result<Vec<CurvePoint>> {
    let s = &spec.scenario;
    let o = &spec.options;
    if o.betas.is_empty() && !matches!(spec.family, CurveFamily::FttSweep | CurveFamily::AtSweep) {
        return Err(Error::invalid("betas", "grid is empty"));
    }
    if o.betas.iter().any(|&b| !(b >= 0.0)) {
        return Err(Error::invalid("betas", "weights must be non-negative"));
    }
    match spec.family {
        CurveFamily::FttSweep => ftt_sweep(s),
        CurveFamily::ThresholdDe => threshold_de(s, o).map(filtered),
        CurveFamily::NpOpt => joint_opt(s, o, GenerationModel::NP).map(filtered),
        CurveFamily::POpt => joint_opt(s, o, GenerationModel::P).map(filtered),
        CurveFamily::AtSweep => at_sweep(s, o).map(filtered),
        CurveFamily::SmdpFrontier => {
            let pts = sweep_beta(s, &o.betas, o.a_max, o.tol)?;
            Ok(filtered(
                pts.into_iter()
                    .map(|fp| CurvePoint {
                        beta: Some(fp.beta),
                        lambda: s.lambda,
                        point: fp.evaluation.point,
                    })
                    .collect(),
            ))
        }
    }
}

fn ftt_sweep(s: &Scenario) -> Result<Vec<CurvePoint>> {
    s.channel
        .actions()
        .iter()
        .map(|&t| {
            let point = match s.model {
                GenerationModel::NP => ftt_np(t, s)?,
                GenerationModel::P => ftt_preemptive(t, s)?,
                GenerationModel::AT => ftt_age_threshold(t, t, s)?,
            };
            Ok(CurvePoint {
                beta: None,
                lambda: s.lambda,
                point,
            })
        })
        .collect()
}

fn threshold_de(s: &Scenario, o: &CurveOptions) -> Result<Vec<CurvePoint>> {
    let np = s.with_model(GenerationModel::NP);
    let free = np.error_free();
    let acts = s.channel.actions().to_vec();
    let last = (acts.len() - 1) as f64;
    let h_max = (s.tau_max() as f64 + (10.0 / s.lambda).ceil()).min(1e7);
    let params = |x: &[f64]| {
        let (i, j) = (x[1] as usize, x[2] as usize);
        let (a, b) = (acts[i.max(j)], acts[i.min(j)]);
        (x[0] as u32, a, b)
    };
    o.betas
        .par_iter()
        .enumerate()
        .map(|(k, &beta)| {
            let cfg = o.de(vec![(0.0, h_max), (0.0, last), (0.0, last)], vec![true; 3], seed_for(o.seed, k));
            let res = differential_evolution(
                |x| {
                    let (h, a, b) = params(x);
                    threshold_errorfree_values(h, a, b, &free).map_or(f64::INFINITY, |(age, p)| age + beta * p)
                },
                &cfg,
            )?;
            let (h, tau_a, tau_b) = params(&res.argmin);
            let policy = PolicySpec::Threshold { h, tau_a, tau_b };
            let sim = SimConfig::new(np.clone(), policy.clone(), o.sim_horizon, seed_for(o.seed, k)).with_warmup(o.sim_warmup);
            let est = simulate(&sim)?;
            Ok(CurvePoint {
                beta: Some(beta),
                lambda: s.lambda,
                point: TradeoffPoint {
                    avg_age: est.avg_age,
                    avg_power: est.avg_power,
                    provenance: Provenance::Simulated,
                    policy,
                    scenario_digest: np.digest(),
                },
            })
        })
        .collect()
}

fn joint_opt(s: &Scenario, o: &CurveOptions, model: GenerationModel) -> Result<Vec<CurvePoint>> {
    let base = s.with_model(model);
    let acts = s.channel.actions().to_vec();
    let last = (acts.len() - 1) as f64;
    let eval = |lambda: f64, t: u32| -> Result<(f64, f64)> {
        let sc = base.with_lambda(lambda)?;
        match model {
            GenerationModel::P => ftt_preemptive_values(t, &sc),
            _ => ftt_np_values(t, &sc),
        }
    };
    o.betas
        .par_iter()
        .enumerate()
        .map(|(k, &beta)| {
            let cfg = o.de(vec![(1e-4, 0.999), (0.0, last)], vec![false, true], seed_for(o.seed, k));
            let res = differential_evolution(
                |x| eval(x[0], acts[x[1] as usize]).map_or(f64::INFINITY, |(a, p)| a + beta * p),
                &cfg,
            )?;
            let (lambda, t_s) = (res.argmin[0], acts[res.argmin[1] as usize]);
            let sc = base.with_lambda(lambda)?;
            let point = match model {
                GenerationModel::P => ftt_preemptive(t_s, &sc)?,
                _ => ftt_np(t_s, &sc)?,
            };
            Ok(CurvePoint {
                beta: Some(beta),
                lambda,
                point,
            })
        })
        .collect()
}

fn at_sweep(s: &Scenario, o: &CurveOptions) -> Result<Vec<CurvePoint>> {
    let at = s.with_model(GenerationModel::AT);
    let max_off = o.at_max_offset.unwrap_or((5.0 / s.lambda).ceil() as u32);
    let mut raw = Vec::new();
    for &t in s.channel.actions() {
        let mut local = Vec::with_capacity(max_off as usize + 1);
        for off in 0..=max_off {
            let (a, p) = ftt_age_threshold_values(t + off, t, &at)?;
            local.push((off, a, p));
        }
        raw.extend(local.into_iter().map(|(off, a, p)| (t, off, a, p)));
    }
    // pre-filter on bare numbers, then build points for the survivors only
    raw.sort_by(|x, y| x.3.total_cmp(&y.3).then(x.2.total_cmp(&y.2)));
    let mut kept: Vec<(u32, u32, f64, f64)> = Vec::new();
    for r in raw {
        if kept.last().is_none_or(|k| r.2 < k.2) {
            kept.push(r);
        }
    }
    let digest = at.digest();
    Ok(kept
        .into_iter()
        .map(|(t, off, a, p)| CurvePoint {
            beta: None,
            lambda: s.lambda,
            point: TradeoffPoint {
                avg_age: a,
                avg_power: p,
                provenance: Provenance::Analytic,
                policy: PolicySpec::AtFixed { h_a: t + off, t_s: t },
                scenario_digest: digest.clone(),
            },
        })
        .collect())
}

/// Age of the best curve point whose power does not exceed `power`.
pub fn age_at_power(curve: &[TradeoffPoint], power: f64) -> Option<f64> {
    curve
        .iter()
        .filter(|p| p.avg_power <= power * (1.0 + 1e-12))
        .map(|p| p.avg_age)
        .min_by(f64::total_cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{AwgnParams, ChannelModel, ChannelVariant};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn scen(lambda: f64, eps: f64, model: GenerationModel) -> Scenario {
        let ch = ChannelModel::build(ChannelVariant::NormalApprox(AwgnParams::new(8, 10.0, 0.01)), 24, 138).unwrap();
        Scenario::with_epsilon(Arc::new(ch), lambda, eps, model).unwrap()
    }

    fn pt(age: f64, power: f64) -> TradeoffPoint {
        TradeoffPoint {
            avg_age: age,
            avg_power: power,
            provenance: Provenance::Analytic,
            policy: PolicySpec::Ftt { t_s: 1 },
            scenario_digest: String::new(),
        }
    }

    #[test]
    fn sphere_smoke_test() {
        let cfg = DeConfig {
            generations: 200,
            ..DeConfig::new(vec![(-5.0, 5.0); 3], vec![false; 3], 3)
        };
        let r = differential_evolution(|x| x.iter().map(|v| v * v).sum(), &cfg).unwrap();
        assert!(r.value < 1e-3, "{}", r.value);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r, differential_evolution(|x| x.iter().map(|v| v * v).sum(), &cfg).unwrap());
    }

    #[test]
    fn config_validation_and_penalty() {
        let mut cfg = DeConfig::new(vec![(0.0, 1.0)], vec![false], 1);
        cfg.population = 3;
        assert!(differential_evolution(|_| 0.0, &cfg).is_err());
        let cfg = DeConfig::new(vec![(0.0, 1.0)], vec![false], 1);
        assert!(differential_evolution(|_| f64::NAN, &cfg).is_err());
        let r = differential_evolution(|x| if x[0] < 0.5 { f64::NAN } else { x[0] }, &cfg).unwrap();
        assert!((r.value - 0.5).abs() < 1e-3);
    }

    #[test]
    fn integer_ftt_objective_matches_enumeration() {
        let s = scen(0.1, 0.01, GenerationModel::NP);
        for beta in [0.0, 1.0, 10.0, 50.0, 1e3] {
            let obj = |t: u32| {
                let (a, p) = ftt_np_values(t, &s).unwrap();
                a + beta * p
            };
            let exhaustive = (24..=138).map(obj).fold(f64::INFINITY, f64::min);
            let cfg = DeConfig::new(vec![(24.0, 138.0)], vec![true], 11);
            let r = differential_evolution(|x| obj(x[0] as u32), &cfg).unwrap();
            assert_eq!(r.value, exhaustive, "beta={beta}");
            assert_eq!(r.argmin[0].fract(), 0.0);
        }
    }

    #[test]
    fn threshold_de_beats_ftt() {
        let s = scen(0.1, 0.01, GenerationModel::NP);
        let free = s.error_free();
        let beta = 50.0;
        let best_ftt = (24..=138u32)
            .map(|t| {
                let (a, p) = ftt_np_values(t, &free).unwrap();
                a + beta * p
            })
            .fold(f64::INFINITY, f64::min);
        let cfg = DeConfig::new(vec![(0.0, 338.0), (24.0, 138.0), (24.0, 138.0)], vec![true; 3], 5);
        let r = differential_evolution(
            |x| {
                let (a, b) = (x[1].max(x[2]) as u32, x[1].min(x[2]) as u32);
                let (age, p) = threshold_errorfree_values(x[0] as u32, a, b, &free).unwrap();
                age + beta * p
            },
            &cfg,
        )
        .unwrap();
        assert!(r.value <= best_ftt + 1e-9, "{} vs {best_ftt}", r.value);
    }

    #[test]
    fn pareto_filter_basics() {
        assert_eq!(pareto_filter(vec![pt(3.0, 1.0)]).len(), 1);
        let out = pareto_filter(vec![pt(5.0, 1.0), pt(4.0, 1.0)]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].avg_age, 4.0);
        assert!(pareto_filter(Vec::new()).is_empty());
    }

    proptest! {
        #[test]
        fn pareto_filter_output_is_exactly_the_nondominated_set(pts in prop::collection::vec((0.0f64..100.0, 0.0f64..10.0), 1..100)) {
            let points: Vec<TradeoffPoint> = pts.iter().map(|&(a, p)| pt(a, p)).collect();
            let out = pareto_filter(points.clone());
            let dominated = |x: &TradeoffPoint| points.iter().any(|y| {
                y.avg_age <= x.avg_age && y.avg_power <= x.avg_power && (y.avg_age < x.avg_age || y.avg_power < x.avg_power)
            });
            for o in &out {
                prop_assert!(!dominated(o));
            }
            for w in out.windows(2) {
                prop_assert!(w[1].avg_power > w[0].avg_power && w[1].avg_age < w[0].avg_age);
            }
            // every non-dominated (age, power) value is represented
            for p in &points {
                if !dominated(p) {
                    prop_assert!(out.iter().any(|o| o.avg_age == p.avg_age && o.avg_power == p.avg_power));
                }
            }
        }
    }

    #[test]
    fn ftt_sweep_endpoints() {
        let s = scen(0.1, 0.01, GenerationModel::NP);
        let spec = CurveSpec {
            family: CurveFamily::FttSweep,
            scenario: s.clone(),
            options: CurveOptions::default(),
        };
        let c = pareto_curve(&spec).unwrap();
        assert_eq!(c.len(), 115);
        assert_eq!(c[0].point, ftt_np(24, &s).unwrap());
        assert_eq!(c[114].point, ftt_np(138, &s).unwrap());
    }

    #[test]
    fn npopt_not_worse_than_fixed_lambda() {
        let s = scen(0.01, 0.01, GenerationModel::NP);
        let opts = CurveOptions {
            betas: vec![10.0, 100.0, 1000.0],
            generations: 150,
            ..CurveOptions::default()
        };
        let spec = CurveSpec {
            family: CurveFamily::NpOpt,
            scenario: s.clone(),
            options: opts.clone(),
        };
        let opt = pareto_curve(&spec).unwrap();
        let fixed: Vec<TradeoffPoint> = (24..=138).map(|t| ftt_np(t, &s).unwrap()).collect();
        for beta in opts.betas {
            let best_fixed = fixed.iter().map(|p| p.avg_age + beta * p.avg_power).fold(f64::INFINITY, f64::min);
            let best_opt = opt.iter().map(|c| c.point.avg_age + beta * c.point.avg_power).fold(f64::INFINITY, f64::min);
            assert!(best_opt <= best_fixed * (1.0 + 1e-9), "beta={beta}: {best_opt} vs {best_fixed}");
        }
    }
}
