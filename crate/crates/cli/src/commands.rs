//! Subcommand bodies. Each returns the tables it wants written.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use aoi_core::bounds::{analytical_lower_bound, max_avg_power, min_avg_power, numerical_lower_bound};
use aoi_core::optimize::{pareto_curve, CurveFamily, CurveSpec};
use aoi_core::simulate::{simulate_batch, simulate_observed, SimConfig, TraceWriter};
use aoi_core::smdp::sweep_beta;
use aoi_core::{ChannelModel, ChannelVariant, FadingParams, GenerationModel, PolicySpec};
use clap::ValueEnum;

use crate::config::{Config, ConfigError};
use crate::output::{num, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    /// FTT sweep under the configured generation model
    Ftt,
    /// Error-free threshold DE, then simulation with errors
    Threshold,
    /// Age-threshold model sweep over (h_a, t_s)
    At,
    /// FTT sweep under the preemptive model
    P,
    /// Joint (lambda, t_s) optimization, non-preemptive
    Npopt,
    /// Joint (lambda, t_s) optimization, preemptive
    Popt,
    /// Optimal policies over the beta grid
    Smdp,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Ftt => "ftt",
            Family::Threshold => "threshold",
            Family::At => "at",
            Family::P => "p",
            Family::Npopt => "npopt",
            Family::Popt => "popt",
            Family::Smdp => "smdp",
        }
    }
}

pub fn channel(cfg: &Config) -> Result<Vec<Table>> {
    let s = cfg.scenario()?;
    let mut t = Table::new(format!("channel_{}.csv", s.channel.variant().tag()), &["tau", "power", "energy"]).plot("tau", "power");
    for (tau, p) in s.channel.iter() {
        t.push(vec![tau.to_string(), num(p), num(p * tau as f64)]);
    }
    Ok(vec![t])
}

pub fn curve(cfg: &Config, family: Family, seed: u64) -> Result<Vec<Table>> {
    let base = cfg.scenario()?;
    let (core_family, scenario) = match family {
        Family::Ftt => (CurveFamily::FttSweep, base),
        Family::P => (CurveFamily::FttSweep, base.with_model(GenerationModel::P)),
        Family::At => (CurveFamily::AtSweep, base.with_model(GenerationModel::AT)),
        Family::Threshold => (CurveFamily::ThresholdDe, base.with_model(GenerationModel::NP)),
        Family::Npopt => (CurveFamily::NpOpt, base),
        Family::Popt => (CurveFamily::POpt, base),
        Family::Smdp => (CurveFamily::SmdpFrontier, base),
    };
    let spec = CurveSpec {
        family: core_family,
        scenario,
        options: cfg.curve_options(seed),
    };
    let points = pareto_curve(&spec)?;
    let file = format!("curve_{}.csv", family.name());
    let tail = |p: &aoi_core::TradeoffPoint| vec![num(p.avg_age), num(p.avg_power), p.provenance.to_string()];
    let beta = |b: Option<f64>| b.map_or_else(String::new, num);
    let table = match family {
        Family::Ftt | Family::P => {
            let mut t = Table::new(file, &["t_s", "avg_age", "avg_power", "provenance"]);
            for c in &points {
                let PolicySpec::Ftt { t_s } = c.point.policy else { unreachable!("FTT sweep yields FTT points") };
                t.push([vec![t_s.to_string()], tail(&c.point)].concat());
            }
            t
        }
        Family::At => {
            let mut t = Table::new(file, &["h_a", "t_s", "avg_age", "avg_power", "provenance"]);
            for c in &points {
                let PolicySpec::AtFixed { h_a, t_s } = c.point.policy else { unreachable!("AT sweep yields AT points") };
                t.push([vec![h_a.to_string(), t_s.to_string()], tail(&c.point)].concat());
            }
            t
        }
        Family::Threshold => {
            let mut t = Table::new(file, &["beta", "h", "tau_a", "tau_b", "avg_age", "avg_power", "provenance"]);
            for c in &points {
                let PolicySpec::Threshold { h, tau_a, tau_b } = c.point.policy else { unreachable!("threshold points") };
                t.push([vec![beta(c.beta), h.to_string(), tau_a.to_string(), tau_b.to_string()], tail(&c.point)].concat());
            }
            t
        }
        Family::Npopt | Family::Popt => {
            let mut t = Table::new(file, &["beta", "lambda", "t_s", "avg_age", "avg_power", "provenance"]);
            for c in &points {
                let PolicySpec::Ftt { t_s } = c.point.policy else { unreachable!("joint optimization yields FTT points") };
                t.push([vec![beta(c.beta), num(c.lambda), t_s.to_string()], tail(&c.point)].concat());
            }
            t
        }
        Family::Smdp => {
            let mut t = Table::new(file, &["beta", "avg_age", "avg_power", "provenance"]);
            for c in &points {
                t.push([vec![beta(c.beta)], tail(&c.point)].concat());
            }
            t
        }
    };
    Ok(vec![table.plot("avg_power", "avg_age")])
}

pub fn smdp(cfg: &Config, betas: &[f64]) -> Result<Vec<Table>> {
    let s = cfg.scenario()?;
    let betas = if betas.is_empty() { cfg.solver.betas.clone() } else { betas.to_vec() };
    if betas.iter().any(|b| !(*b >= 0.0)) {
        bail!(ConfigError("--beta values must be non-negative".into()));
    }
    let frontier = sweep_beta(&s, &betas, cfg.solver.a_max, cfg.solver.tol)?;
    let mut summary = Table::new(
        "smdp_frontier.csv",
        &["beta", "avg_age", "avg_power", "gain", "iterations", "converged", "provenance"],
    )
    .plot("avg_power", "avg_age");
    let mut policy = Table::new("smdp_policy.csv", &["beta", "age", "tau"]);
    for fp in &frontier {
        let e = &fp.evaluation;
        summary.push(vec![
            num(fp.beta),
            num(e.point.avg_age),
            num(e.point.avg_power),
            num(fp.solution.gain),
            fp.solution.iterations.to_string(),
            fp.solution.converged.to_string(),
            e.point.provenance.to_string(),
        ]);
        for (i, tau) in fp.solution.policy.iter().enumerate() {
            policy.push(vec![num(fp.beta), (fp.solution.min_age as usize + i).to_string(), tau.to_string()]);
        }
    }
    Ok(vec![summary, policy])
}

pub fn bounds(cfg: &Config, grid: usize, explicit: &[f64]) -> Result<Vec<Table>> {
    let s = cfg.scenario()?;
    let budgets: Vec<f64> = if !explicit.is_empty() {
        explicit.to_vec()
    } else {
        if grid < 1 {
            bail!(ConfigError("--pc-grid must be at least 1".into()));
        }
        let (lo, hi) = (min_avg_power(&s), max_avg_power(&s));
        if grid == 1 {
            vec![lo]
        } else {
            (0..grid).map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64).collect()
        }
    };
    let opts = cfg.lfp_options();
    let mut t = Table::new("bounds.csv", &["p_c", "a_l", "a_n", "tau_star"]).plot("p_c", "a_n");
    for p_c in budgets {
        let a_n = numerical_lower_bound(&s, p_c, &opts)?;
        let a_l = analytical_lower_bound(&s, p_c)?;
        t.push(vec![num(p_c), num(a_l.value), num(a_n.value), a_l.tau_star.map_or_else(String::new, num)]);
    }
    Ok(vec![t])
}

pub fn sim(cfg: &Config, seed: u64, seeds: u64, threads: usize, trace: Option<&Path>) -> Result<Vec<Table>> {
    let s = cfg.scenario()?;
    let Some(policy) = cfg.policy()? else {
        bail!(ConfigError("`sim` needs a [policy] section".into()));
    };
    if seeds < 1 {
        bail!(ConfigError("--seeds must be at least 1".into()));
    }
    let warmup = cfg.solver.warmup.unwrap_or(cfg.solver.horizon / 10);
    let configs: Vec<SimConfig> = (0..seeds)
        .map(|k| SimConfig::new(s.clone(), policy.clone(), cfg.solver.horizon, seed + k).with_warmup(warmup))
        .collect();
    if let Some(path) = trace {
        if seeds != 1 {
            bail!(ConfigError("--trace needs a single seed".into()));
        }
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut writer = TraceWriter::new(BufWriter::new(file), &configs[0])?;
        simulate_observed(&configs[0], &mut writer)?;
    }
    let results = simulate_batch(&configs, threads)?;
    let mut t = Table::new(
        "sim.csv",
        &["seed", "avg_age", "age_se", "avg_power", "power_se", "deliveries", "transmissions", "preemptions"],
    );
    for (c, r) in configs.iter().zip(results) {
        let e = r?;
        t.push(vec![
            c.seed.to_string(),
            num(e.avg_age),
            num(e.age_se),
            num(e.avg_power),
            num(e.power_se),
            e.deliveries.to_string(),
            e.transmissions.to_string(),
            e.preemptions.to_string(),
        ]);
    }
    Ok(vec![t])
}

pub fn fading(cfg: &Config, coherence: &[u32]) -> Result<Vec<Table>> {
    if coherence.is_empty() || coherence.contains(&0) {
        bail!(ConfigError("--coherence values must be positive".into()));
    }
    let c = &cfg.channel;
    let mut t = Table::new("fading.csv", &["T", "tau", "power"]).plot("tau", "power");
    for &slots in coherence {
        let variant = ChannelVariant::BlockFading(FadingParams {
            bits: c.k,
            noise_mw: c.n,
            epsilon: c.epsilon,
            coherence_slots: slots,
            gain: c.gain,
        });
        let ch = Arc::new(ChannelModel::build(variant, c.tau_min, c.tau_max)?);
        for (tau, p) in ch.iter() {
            t.push(vec![slots.to_string(), tau.to_string(), num(p)]);
        }
    }
    Ok(vec![t])
}
