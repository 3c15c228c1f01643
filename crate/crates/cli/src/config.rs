//! Scenario configuration files (TOML, or JSON with the same schema).

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use aoi_core::bounds::{LfpOptions, NumeratorForm};
use aoi_core::optimize::{default_beta_grid, CurveOptions};
use aoi_core::smdp::DEFAULT_TOL;
use aoi_core::{
    AwgnParams, ChannelModel, ChannelVariant, FadingParams, GainModel, GenerationModel, PolicySpec, Scenario,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULTS: &str = r#"# aoi-lab scenario defaults. Keys marked "required" have no default.
# Keys may also be written without section headers; they are routed to
# the section that owns them.

[channel]
K = 8                 # required, packet length in bits
N = 10.0              # required, noise power in mW
epsilon = 0.01        # required, target codeword error probability
tau_min = 24          # required, shortest blocklength in slots
tau_max = 138         # required, longest blocklength in slots
variant = "normal"    # normal | shannon | fading
# W = 1.0             # bandwidth in Hz, required by variant = "shannon"
T = 1                 # coherence time in slots, variant = "fading"
gain = "rayleigh"     # rayleigh | constant, variant = "fading"

[traffic]
lambda = 0.1          # required, per-slot generation probability
model = "NP"          # NP | P | AT
error_free = false    # true forces a zero link error probability

[policy]              # used by `sim`
kind = "ftt"          # ftt | threshold | at_fixed | randomized | tabular
t_s = 24              # ftt, at_fixed
# h = 60              # threshold: age threshold
# tau_a = 100         # threshold: blocklength at ages <= h
# tau_b = 30          # threshold: blocklength at ages > h
# h_a = 100           # at_fixed: generation age threshold
# pmf = [...]         # randomized: one mass per action
# min_age = 24        # tabular: age of the first entry
# actions = [...]     # tabular: blocklength per age

[solver]
# a_max = 338         # SMDP age truncation, default tau_max + ceil(20/lambda)
tol = 1e-8            # SMDP relative stopping tolerance
stride = 1            # LFP keeps every stride-th blocklength
form = "proof"        # LFP numerator: proof | statement
betas = [0.0, 0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0, 100000.0, 1000000.0]
horizon = 1000000     # simulation slots
# warmup = 100000     # discarded slots, default 10% of horizon
population = 30       # differential evolution
f = 0.7
cr = 0.9
generations = 300
# at_max_offset = 50  # AT sweep: largest h_a - t_s, default ceil(5/lambda)
"#;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantTag {
    #[default]
    Normal,
    Shannon,
    Fading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "N")]
    pub n: f64,
    pub epsilon: f64,
    pub tau_min: u32,
    pub tau_max: u32,
    #[serde(default)]
    pub variant: VariantTag,
    #[serde(rename = "W", default)]
    pub w: Option<f64>,
    #[serde(rename = "T", default = "one")]
    pub t: u32,
    #[serde(default = "rayleigh")]
    pub gain: GainModel,
}

fn one() -> u32 {
    1
}

fn rayleigh() -> GainModel {
    GainModel::Rayleigh
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub lambda: f64,
    #[serde(default = "np")]
    pub model: GenerationModel,
    #[serde(default)]
    pub error_free: bool,
}

fn np() -> GenerationModel {
    GenerationModel::NP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: String,
    pub t_s: Option<u32>,
    pub h: Option<u32>,
    pub tau_a: Option<u32>,
    pub tau_b: Option<u32>,
    pub h_a: Option<u32>,
    pub pmf: Option<Vec<f64>>,
    pub min_age: Option<u32>,
    pub actions: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub a_max: Option<u32>,
    pub tol: f64,
    pub stride: usize,
    pub form: NumeratorForm,
    pub betas: Vec<f64>,
    pub horizon: u64,
    pub warmup: Option<u64>,
    pub population: usize,
    pub f: f64,
    pub cr: f64,
    pub generations: usize,
    pub at_max_offset: Option<u32>,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            a_max: None,
            tol: DEFAULT_TOL,
            stride: 1,
            form: NumeratorForm::Proof,
            betas: default_beta_grid(),
            horizon: 1_000_000,
            warmup: None,
            population: 30,
            f: 0.7,
            cr: 0.9,
            generations: 300,
            at_max_offset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub channel: ChannelSection,
    pub traffic: TrafficSection,
    #[serde(default)]
    pub policy: Option<PolicySection>,
    #[serde(default)]
    pub solver: SolverSection,
}

const CHANNEL_KEYS: &[&str] = &["K", "N", "epsilon", "tau_min", "tau_max", "variant", "W", "T", "gain"];
const TRAFFIC_KEYS: &[&str] = &["lambda", "model", "error_free"];
const SOLVER_KEYS: &[&str] = &[
    "a_max", "tol", "stride", "form", "betas", "horizon", "warmup", "population", "f", "cr", "generations",
    "at_max_offset",
];
const SECTIONS: &[&str] = &["channel", "traffic", "policy", "solver"];

/// 1-based line of the first `key = ...` (TOML) or `"key":` (JSON) entry.
fn line_of(raw: &str, key: &str) -> Option<usize> {
    raw.lines().position(|l| {
        let l = l.trim_start();
        let rest = l.strip_prefix(key).or_else(|| l.strip_prefix(&format!("\"{key}\"")));
        rest.is_some_and(|r| {
            let r = r.trim_start();
            r.starts_with('=') || r.starts_with(':')
        })
    })
    .map(|i| i + 1)
}

fn located(raw: &str, key: &str, msg: &str) -> ConfigError {
    match line_of(raw, key) {
        Some(line) => ConfigError(format!("config error at line {line}, key `{key}`: {msg}")),
        None => ConfigError(format!("config error, key `{key}`: {msg}")),
    }
}

/// Attaches a line number to serde messages that quote a key in backticks.
fn from_serde(raw: &str, msg: String) -> ConfigError {
    let key = msg.split('`').nth(1).map(str::to_owned);
    match key {
        Some(k) if msg.contains("unknown field") || msg.contains("invalid") => located(raw, &k, &msg),
        Some(k) => ConfigError(format!("config error, key `{k}`: {msg}")),
        None => ConfigError(format!("config error: {msg}")),
    }
}

fn route_flat_keys(table: &mut toml::Table) -> Result<(), ConfigError> {
    let flat: Vec<String> = table.keys().filter(|k| !SECTIONS.contains(&k.as_str())).cloned().collect();
    for key in flat {
        let section = if CHANNEL_KEYS.contains(&key.as_str()) {
            "channel"
        } else if TRAFFIC_KEYS.contains(&key.as_str()) {
            "traffic"
        } else if SOLVER_KEYS.contains(&key.as_str()) {
            "solver"
        } else {
            // left in place so deserialization reports it as unknown
            continue;
        };
        let value = table.remove(&key).expect("key listed above");
        let entry = table
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match entry {
            toml::Value::Table(t) => {
                if t.insert(key.clone(), value).is_some() {
                    return Err(ConfigError(format!("config error, key `{key}`: given both flat and in [{section}]")));
                }
            }
            _ => return Err(ConfigError(format!("config error, key `{section}`: must be a section"))),
        }
    }
    Ok(())
}

pub fn parse(raw: &str, json: bool) -> Result<Config, ConfigError> {
    let config: Config = if json {
        serde_json::from_str(raw).map_err(|e| from_serde(raw, e.to_string()))?
    } else {
        let mut table: toml::Table = raw
            .parse()
            .map_err(|e: toml::de::Error| ConfigError(format!("config error: {}", e.to_string().trim_end())))?;
        route_flat_keys(&mut table)?;
        Config::deserialize(toml::Value::Table(table)).map_err(|e| from_serde(raw, e.message().to_string()))?
    };
    config.check().map_err(|e| match e {
        aoi_core::Error::InvalidParameter { name, reason } => located(raw, name, &reason),
        other => ConfigError(format!("config error: {other}")),
    })?;
    Ok(config)
}

pub fn load(path: &Path) -> Result<Config, ConfigError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    parse(&raw, json).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
}

fn invalid(name: &'static str, reason: impl Into<String>) -> aoi_core::Error {
    aoi_core::Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

impl Config {
    fn check(&self) -> aoi_core::Result<()> {
        let s = &self.solver;
        if !(s.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        if s.stride < 1 {
            return Err(invalid("stride", "must be at least 1"));
        }
        if s.betas.is_empty() || s.betas.iter().any(|b| !(*b >= 0.0)) || s.betas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("betas", "must be a non-empty increasing list of non-negative weights"));
        }
        if s.horizon < 1 || s.warmup.is_some_and(|w| w >= s.horizon) {
            return Err(invalid("warmup", "must be smaller than horizon"));
        }
        if self.channel.variant == VariantTag::Shannon && self.channel.w.is_none() {
            return Err(invalid("W", "variant = \"shannon\" needs a bandwidth"));
        }
        // builds the channel and checks every remaining range
        let scenario = self.scenario()?;
        if let Some(p) = self.policy()? {
            p.validate(&scenario.channel)?;
        }
        if let Some(a) = s.a_max {
            if a <= scenario.tau_max() {
                return Err(invalid("a_max", format!("must exceed tau_max ({})", scenario.tau_max())));
            }
        }
        Ok(())
    }

    pub fn variant(&self) -> ChannelVariant {
        let c = &self.channel;
        let awgn = AwgnParams {
            bits: c.k,
            noise_mw: c.n,
            epsilon: c.epsilon,
            bandwidth_hz: c.w,
        };
        match c.variant {
            VariantTag::Normal => ChannelVariant::NormalApprox(awgn),
            VariantTag::Shannon => ChannelVariant::Shannon(awgn),
            VariantTag::Fading => ChannelVariant::BlockFading(FadingParams {
                bits: c.k,
                noise_mw: c.n,
                epsilon: c.epsilon,
                coherence_slots: c.t,
                gain: c.gain,
            }),
        }
    }

    pub fn scenario(&self) -> aoi_core::Result<Scenario> {
        let channel = ChannelModel::build(self.variant(), self.channel.tau_min, self.channel.tau_max)?;
        let eps = if self.traffic.error_free { 0.0 } else { self.channel.epsilon };
        Scenario::with_epsilon(Arc::new(channel), self.traffic.lambda, eps, self.traffic.model)
    }

    pub fn policy(&self) -> aoi_core::Result<Option<PolicySpec>> {
        let Some(p) = &self.policy else { return Ok(None) };
        let need = |v: Option<u32>, name: &'static str| v.ok_or_else(|| invalid(name, format!("required by kind = \"{}\"", p.kind)));
        let spec = match p.kind.as_str() {
            "ftt" => PolicySpec::Ftt { t_s: need(p.t_s, "t_s")? },
            "threshold" => PolicySpec::Threshold {
                h: need(p.h, "h")?,
                tau_a: need(p.tau_a, "tau_a")?,
                tau_b: need(p.tau_b, "tau_b")?,
            },
            "at_fixed" => PolicySpec::AtFixed {
                h_a: need(p.h_a, "h_a")?,
                t_s: need(p.t_s, "t_s")?,
            },
            "randomized" => PolicySpec::Randomized {
                pmf: p.pmf.clone().ok_or_else(|| invalid("pmf", "required by kind = \"randomized\""))?,
            },
            "tabular" => PolicySpec::Tabular {
                min_age: need(p.min_age, "min_age")?,
                actions: p.actions.clone().ok_or_else(|| invalid("actions", "required by kind = \"tabular\""))?,
            },
            other => return Err(invalid("kind", format!("unknown policy kind \"{other}\""))),
        };
        Ok(Some(spec))
    }

    pub fn lfp_options(&self) -> LfpOptions {
        LfpOptions {
            stride: self.solver.stride,
            form: self.solver.form,
        }
    }

    pub fn curve_options(&self, seed: u64) -> CurveOptions {
        let s = &self.solver;
        CurveOptions {
            betas: s.betas.clone(),
            seed,
            population: s.population,
            f: s.f,
            cr: s.cr,
            generations: s.generations,
            sim_horizon: s.horizon,
            sim_warmup: s.warmup.unwrap_or(s.horizon / 10),
            at_max_offset: s.at_max_offset,
            a_max: s.a_max,
            tol: s.tol,
        }
    }

    /// Hash of the parsed configuration with every default filled in.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
