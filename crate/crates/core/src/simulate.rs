//! Slot-level Monte Carlo simulation of the link.
//!
//! Within a slot the order is: resolve a transmission ending at the slot
//! boundary, generate (and possibly start or preempt) a packet, record the
//! age and transmit power, advance the age.

use std::fmt;
use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::{GenerationModel, PolicySpec, Scenario};

pub const BATCHES: usize = 30;
const AGE_GUARD: u64 = 1_000_000_000;
const MIN_CYCLES: usize = 100;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub policy: PolicySpec,
    pub horizon: u64,
    /// Slots discarded before averaging.
    pub warmup: u64,
    pub seed: u64,
    /// Independent ChaCha stream under the same seed.
    pub stream: u64,
}

impl SimConfig {
    /// Config with the default warmup of 10% of the horizon.
    pub fn new(scenario: Scenario, policy: PolicySpec, horizon: u64, seed: u64) -> Self {
        SimConfig {
            scenario,
            policy,
            horizon,
            warmup: horizon / 10,
            seed,
            stream: 0,
        }
    }

    pub fn with_warmup(mut self, warmup: u64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.policy.validate(&self.scenario.channel)?;
        if self.warmup >= self.horizon {
            return Err(Error::invalid(
                "horizon",
                format!("must exceed the warmup ({} <= {})", self.horizon, self.warmup),
            ));
        }
        if self.horizon - self.warmup < BATCHES as u64 {
            return Err(Error::invalid("horizon", format!("need at least {BATCHES} measured slots")));
        }
        match (&self.policy, self.scenario.model) {
            (PolicySpec::AtFixed { .. }, GenerationModel::AT) => Ok(()),
            (_, GenerationModel::AT) => Err(Error::invalid("policy", "the AT model needs an age-threshold policy")),
            (PolicySpec::AtFixed { .. }, m) => Err(Error::invalid("policy", format!("age-threshold policy under the {m} model"))),
            _ => Ok(()),
        }
    }

    /// Age at slot zero: `τ_min`, or `t_s` for the AT model, as if a packet
    /// had just been delivered.
    pub fn initial_age(&self) -> u64 {
        match self.policy {
            PolicySpec::AtFixed { t_s, .. } => t_s as u64,
            _ => self.scenario.tau_min() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEstimate {
    pub avg_age: f64,
    pub avg_power: f64,
    /// Batch-means standard errors.
    pub age_se: f64,
    pub power_se: f64,
    pub deliveries: u64,
    pub transmissions: u64,
    pub preemptions: u64,
    pub measured_slots: u64,
    /// Total measured energy summed slot by slot (mW·slots).
    pub energy_by_slot: f64,
    /// The same energy summed per transmission as power × slots used.
    pub energy_by_transmission: f64,
}

/// What happened in a slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotEvent {
    pub delivered: bool,
    pub failed: bool,
    pub generated: bool,
    pub preempted: bool,
}

impl fmt::Display for SlotEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tags = [
            (self.delivered, "deliver"),
            (self.failed, "error"),
            (self.preempted, "preempt"),
            (self.generated, "generate"),
        ];
        let mut first = true;
        for (on, tag) in tags {
            if on {
                if !first {
                    f.write_str("+")?;
                }
                f.write_str(tag)?;
                first = false;
            }
        }
        if first {
            f.write_str("-")?;
        }
        Ok(())
    }
}

/// Receives every recorded slot (after warmup).
pub trait Observer {
    fn slot(&mut self, t: u64, age: u64, power: f64, event: SlotEvent) -> Result<()>;
}

impl Observer for () {
    fn slot(&mut self, _: u64, _: u64, _: f64, _: SlotEvent) -> Result<()> {
        Ok(())
    }
}

/// Writes `t,age,power,event` lines.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, config: &SimConfig) -> Result<Self> {
        writeln!(out, "# initial age {} slots", config.initial_age()).map_err(io)?;
        writeln!(out, "t,age,power,event").map_err(io)?;
        Ok(TraceWriter { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn io(e: std::io::Error) -> Error {
    Error::Numerical(format!("trace output failed: {e}"))
}

impl<W: Write> Observer for TraceWriter<W> {
    fn slot(&mut self, t: u64, age: u64, power: f64, event: SlotEvent) -> Result<()> {
        writeln!(self.out, "{t},{age},{power},{event}").map_err(io)
    }
}

struct Transmission {
    generated: u64,
    end: u64,
    power: f64,
    /// Measured slots spent on this transmission so far.
    used: u64,
}

enum Chooser {
    Fixed(PolicySpec),
    Random(WeightedIndex<f64>, Vec<u32>),
}

impl Chooser {
    fn new(policy: &PolicySpec, scenario: &Scenario) -> Result<Self> {
        match policy {
            PolicySpec::Randomized { pmf } => {
                let w = WeightedIndex::new(pmf).map_err(|e| Error::invalid("pmf", e.to_string()))?;
                Ok(Chooser::Random(w, scenario.channel.actions().to_vec()))
            }
            p => Ok(Chooser::Fixed(p.clone())),
        }
    }

    fn pick<R: Rng>(&self, age: u64, rng: &mut R) -> u32 {
        match self {
            Chooser::Fixed(p) => p.action_at(age).expect("deterministic policy"),
            Chooser::Random(w, actions) => actions[w.sample(rng)],
        }
    }
}

/// Runs one replication, reporting recorded slots to `observer`.
pub fn simulate_observed<O: Observer>(config: &SimConfig, observer: &mut O) -> Result<SimEstimate> {
    config.validate()?;
    let scenario = &config.scenario;
    let channel = &scenario.channel;
    let (lambda, eps) = (scenario.lambda, scenario.epsilon);
    let chooser = Chooser::new(&config.policy, scenario)?;
    let h_a = match config.policy {
        PolicySpec::AtFixed { h_a, .. } => h_a as u64,
        _ => 0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.stream);

    let measured = config.horizon - config.warmup;
    let batch_len = measured / BATCHES as u64;
    let mut batch_age = [0.0f64; BATCHES];
    let mut batch_power = [0.0f64; BATCHES];
    let (mut sum_age, mut sum_power) = (0u128, 0.0f64);

    let mut age = config.initial_age();
    let mut tx: Option<Transmission> = None;
    let (mut deliveries, mut transmissions, mut preemptions) = (0u64, 0u64, 0u64);
    // energy charged per transmission, for the accounting cross-check
    let mut tx_energy = 0.0f64;

    for t in 0..config.horizon {
        let mut event = SlotEvent::default();
        if let Some(cur) = &tx {
            if cur.end == t {
                if rng.gen::<f64>() >= eps {
                    let new_age = t - cur.generated;
                    debug_assert!(new_age <= age);
                    age = new_age;
                    event.delivered = true;
                    if t >= config.warmup {
                        deliveries += 1;
                    }
                } else {
                    event.failed = true;
                }
                tx_energy += cur.power * cur.used as f64;
                tx = None;
            }
        }

        let start = match scenario.model {
            GenerationModel::NP => tx.is_none() && rng.gen::<f64>() < lambda,
            GenerationModel::P => rng.gen::<f64>() < lambda,
            GenerationModel::AT => tx.is_none() && age >= h_a,
        };
        if start {
            if let Some(cur) = tx.take() {
                event.preempted = true;
                tx_energy += cur.power * cur.used as f64;
                if t >= config.warmup {
                    preemptions += 1;
                }
            }
            let tau = chooser.pick(age, &mut rng);
            let power = channel.power(tau)?;
            tx = Some(Transmission {
                generated: t,
                end: t + tau as u64,
                power,
                used: 0,
            });
            event.generated = true;
            if t >= config.warmup {
                transmissions += 1;
            }
        }

        let power = tx.as_ref().map_or(0.0, |c| c.power);
        if t >= config.warmup {
            if let Some(cur) = tx.as_mut() {
                cur.used += 1;
            }
            let k = t - config.warmup;
            let b = ((k / batch_len.max(1)) as usize).min(BATCHES - 1);
            batch_age[b] += age as f64;
            batch_power[b] += power;
            sum_age += age as u128;
            sum_power += power;
            observer.slot(t, age, power, event)?;
        }

        age += 1;
        if age > AGE_GUARD {
            return Err(Error::Divergent(format!("age exceeded {AGE_GUARD} slots at t = {t}")));
        }
    }
    if let Some(cur) = &tx {
        tx_energy += cur.power * cur.used as f64;
    }

    let sizes: Vec<f64> = (0..BATCHES)
        .map(|b| if b + 1 == BATCHES { (measured - batch_len * (BATCHES as u64 - 1)) as f64 } else { batch_len as f64 })
        .collect();
    let se = |sums: &[f64; BATCHES]| {
        let means: Vec<f64> = sums.iter().zip(&sizes).map(|(s, n)| s / n).collect();
        let mean = means.iter().sum::<f64>() / BATCHES as f64;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (BATCHES as f64 - 1.0);
        (var / BATCHES as f64).sqrt()
    };

    Ok(SimEstimate {
        avg_age: sum_age as f64 / measured as f64,
        avg_power: sum_power / measured as f64,
        age_se: se(&batch_age),
        power_se: se(&batch_power),
        deliveries,
        transmissions,
        preemptions,
        measured_slots: measured,
        energy_by_slot: sum_power,
        energy_by_transmission: tx_energy,
    })
}

pub fn simulate(config: &SimConfig) -> Result<SimEstimate> {
    simulate_observed(config, &mut ())
}

/// Runs independent configs on a pool of `parallelism` threads. Results do
/// not depend on the thread count.
pub fn simulate_batch(configs: &[SimConfig], parallelism: usize) -> Result<Vec<Result<SimEstimate>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    Ok(pool.install(|| configs.par_iter().map(simulate).collect()))
}

/// Empirical statistics of the cycles between successive deliveries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleStats {
    pub cycles: usize,
    pub mean_length: f64,
    pub mean_length_se: f64,
    pub second_moment: f64,
    pub second_moment_se: f64,
    pub mean_energy: f64,
    pub mean_energy_se: f64,
}

struct Census {
    last: Option<u64>,
    energy: f64,
    lengths: Vec<f64>,
    energies: Vec<f64>,
}

impl Observer for Census {
    fn slot(&mut self, t: u64, _: u64, power: f64, event: SlotEvent) -> Result<()> {
        if event.delivered {
            if let Some(prev) = self.last {
                self.lengths.push((t - prev) as f64);
                self.energies.push(self.energy);
            }
            self.last = Some(t);
            self.energy = 0.0;
        }
        self.energy += power;
        Ok(())
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn renewal_census(config: &SimConfig) -> Result<CycleStats> {
    let mut census = Census {
        last: None,
        energy: 0.0,
        lengths: Vec::new(),
        energies: Vec::new(),
    };
    simulate_observed(config, &mut census)?;
    let n = census.lengths.len();
    if n < MIN_CYCLES {
        return Err(Error::InsufficientData(format!("{n} complete cycles, need at least {MIN_CYCLES}")));
    }
    let squares: Vec<f64> = census.lengths.iter().map(|r| r * r).collect();
    let (mean_length, mean_length_se) = mean_se(&census.lengths);
    let (second_moment, second_moment_se) = mean_se(&squares);
    let (mean_energy, mean_energy_se) = mean_se(&census.energies);
    Ok(CycleStats {
        cycles: n,
        mean_length,
        mean_length_se,
        second_moment,
        second_moment_se,
        mean_energy,
        mean_energy_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{AwgnParams, ChannelModel, ChannelVariant};
    use std::sync::Arc;

    fn scen(lambda: f64, eps: f64, model: GenerationModel) -> Scenario {
        let ch = ChannelModel::build(ChannelVariant::NormalApprox(AwgnParams::new(8, 10.0, 0.01)), 24, 138).unwrap();
        Scenario::with_epsilon(Arc::new(ch), lambda, eps, model).unwrap()
    }

    #[test]
    fn deterministic_cycle() {
        let s = scen(1.0, 0.0, GenerationModel::NP);
        for t in [24u32, 60] {
            let est = simulate(&SimConfig::new(s.clone(), PolicySpec::Ftt { t_s: t }, 100_000, 1)).unwrap();
            let exact = (3.0 * t as f64 - 1.0) / 2.0;
            assert!((est.avg_age - exact).abs() < 0.01 * exact, "{} vs {exact}", est.avg_age);
            assert!((est.avg_power - s.channel.power(t).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn reproducible_and_stream_sensitive() {
        let s = scen(0.1, 0.2, GenerationModel::NP);
        let c = SimConfig::new(s, PolicySpec::Ftt { t_s: 60 }, 200_000, 42);
        let a = simulate(&c).unwrap();
        assert_eq!(a, simulate(&c).unwrap());
        assert_ne!(a, simulate(&c.clone().with_stream(1)).unwrap());
    }

    #[test]
    fn batch_is_independent_of_parallelism() {
        let s = scen(0.1, 0.01, GenerationModel::NP);
        let configs: Vec<SimConfig> = (0..6)
            .map(|i| SimConfig::new(s.clone(), PolicySpec::Ftt { t_s: 24 + 10 * i }, 50_000, 7 + i as u64))
            .collect();
        let one = simulate_batch(&configs, 1).unwrap();
        let eight = simulate_batch(&configs, 8).unwrap();
        assert_eq!(one, eight);
    }

    #[test]
    fn energy_accounting_includes_preempted_slots() {
        let s = scen(0.05, 0.1, GenerationModel::P);
        let est = simulate(&SimConfig::new(s, PolicySpec::Ftt { t_s: 40 }, 300_000, 3)).unwrap();
        assert!(est.preemptions > 100);
        let rel = (est.energy_by_slot - est.energy_by_transmission).abs() / est.energy_by_slot;
        assert!(rel < 1e-9, "{rel}");
    }

    #[test]
    fn age_drops_only_on_delivery_to_the_packet_age() {
        struct Check {
            prev: Option<u64>,
        }
        impl Observer for Check {
            fn slot(&mut self, _: u64, age: u64, _: f64, event: SlotEvent) -> Result<()> {
                if let Some(p) = self.prev {
                    if event.delivered {
                        assert!(age <= p + 1);
                        assert!((24..=138).contains(&age));
                    } else {
                        assert_eq!(age, p + 1);
                    }
                }
                self.prev = Some(age);
                Ok(())
            }
        }
        for model in [GenerationModel::NP, GenerationModel::P] {
            let s = scen(0.2, 0.3, model);
            let policy = PolicySpec::Threshold { h: 70, tau_a: 100, tau_b: 30 };
            simulate_observed(&SimConfig::new(s, policy, 100_000, 9), &mut Check { prev: None }).unwrap();
        }
    }

    #[test]
    fn trace_format() {
        let s = scen(0.5, 0.0, GenerationModel::AT);
        let c = SimConfig::new(s, PolicySpec::AtFixed { h_a: 30, t_s: 24 }, 100, 1).with_warmup(0);
        let mut w = TraceWriter::new(Vec::new(), &c).unwrap();
        simulate_observed(&c, &mut w).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# initial age 24 slots");
        assert_eq!(lines[1], "t,age,power,event");
        assert_eq!(lines.len(), 102);
        assert!(lines[2].starts_with("0,24,0,-"));
        // AT waits until the age reaches 30, then transmits for 24 slots
        assert!(lines[2 + 6].ends_with(",generate"));
        assert!(lines[2 + 30].starts_with("30,24,"));
        assert!(lines[2 + 30].contains("deliver"));
    }

    #[test]
    fn rejects_mismatched_policies() {
        let at = scen(0.5, 0.0, GenerationModel::AT);
        assert!(simulate(&SimConfig::new(at, PolicySpec::Ftt { t_s: 24 }, 1000, 1)).is_err());
        let np = scen(0.5, 0.0, GenerationModel::NP);
        assert!(simulate(&SimConfig::new(np.clone(), PolicySpec::AtFixed { h_a: 1, t_s: 24 }, 1000, 1)).is_err());
        assert!(simulate(&SimConfig::new(np.clone(), PolicySpec::Ftt { t_s: 24 }, 1000, 1).with_warmup(1000)).is_err());
        assert!(simulate(&SimConfig::new(np, PolicySpec::Ftt { t_s: 5 }, 1000, 1)).is_err());
    }

    #[test]
    fn census_needs_enough_cycles() {
        let s = scen(0.1, 0.01, GenerationModel::NP);
        let c = SimConfig::new(s, PolicySpec::Ftt { t_s: 138 }, 5_000, 1);
        assert!(matches!(renewal_census(&c), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn error_free_census_matches_closed_form_moments() {
        let s = scen(0.1, 0.0, GenerationModel::NP);
        let c = SimConfig::new(s, PolicySpec::Ftt { t_s: 24 }, 2_000_000, 5);
        let st = renewal_census(&c).unwrap();
        let (er, er2) = crate::analytic::ftt_cycle_moments(24, 0.1, 0.0);
        assert!((st.mean_length - er).abs() < 3.0 * st.mean_length_se);
        assert!((st.second_moment - er2).abs() < 3.0 * st.second_moment_se);
    }

    #[test]
    fn randomized_policy_uses_its_support() {
        let s = scen(0.3, 0.0, GenerationModel::NP);
        let mut pmf = vec![0.0; 115];
        pmf[0] = 0.5;
        pmf[114] = 0.5;
        let est = simulate(&SimConfig::new(s.clone(), PolicySpec::Randomized { pmf }, 400_000, 2)).unwrap();
        let (p24, p138) = (s.channel.power(24).unwrap(), s.channel.power(138).unwrap());
        // time-weighted power of a 50/50 mix of the two FTT energies
        let g = s.mean_idle();
        let expect = 0.5 * (24.0 * p24 + 138.0 * p138) / (0.5 * (24.0 + 138.0) + g);
        assert!((est.avg_power - expect).abs() < 4.0 * est.power_se + 1e-3 * expect, "{} vs {expect}", est.avg_power);
    }
}
