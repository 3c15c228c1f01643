//! System parameterization, policy descriptions and tradeoff points.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ChannelModel;
use crate::error::{Error, Result};

/// Packet generation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GenerationModel {
    /// Non-preemptive: a new packet may be generated only while idle.
    NP,
    /// Preemptive: generation in any slot, discarding the packet in service.
    P,
    /// Age-threshold: generate as soon as the age reaches `h_a` while idle.
    AT,
}

impl fmt::Display for GenerationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GenerationModel::NP => "NP",
            GenerationModel::P => "P",
            GenerationModel::AT => "AT",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    /// Per-slot generation probability (unused by the AT model).
    pub lambda: f64,
    /// Per-transmission error probability; zero gives the error-free system.
    pub epsilon: f64,
    pub model: GenerationModel,
    pub channel: Arc<ChannelModel>,
}

impl Scenario {
    /// Scenario whose link error probability is the channel's design target.
    pub fn new(channel: Arc<ChannelModel>, lambda: f64, model: GenerationModel) -> Result<Self> {
        let epsilon = channel.epsilon();
        Self::with_epsilon(channel, lambda, epsilon, model)
    }

    pub fn with_epsilon(
        channel: Arc<ChannelModel>,
        lambda: f64,
        epsilon: f64,
        model: GenerationModel,
    ) -> Result<Self> {
        let s = Scenario {
            lambda,
            epsilon,
            model,
            channel,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::invalid("lambda", format!("must lie in (0, 1], got {}", self.lambda)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid("epsilon", format!("must lie in [0, 1), got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Same scenario with the link made error-free.
    pub fn error_free(&self) -> Scenario {
        Scenario {
            epsilon: 0.0,
            ..self.clone()
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Scenario> {
        let s = Scenario {
            lambda,
            ..self.clone()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_model(&self, model: GenerationModel) -> Scenario {
        Scenario {
            model,
            ..self.clone()
        }
    }

    pub fn tau_min(&self) -> u32 {
        self.channel.tau_min()
    }

    pub fn tau_max(&self) -> u32 {
        self.channel.tau_max()
    }

    /// Mean idle time `(1-λ)/λ` between a transmission end and the next
    /// generation.
    pub fn mean_idle(&self) -> f64 {
        (1.0 - self.lambda) / self.lambda
    }

    /// Stable hex digest of the parsed parameters.
    pub fn digest(&self) -> String {
        // Debug formatting of f64 is shortest-roundtrip, hence stable
        let text = format!(
            "{:?}|{:?}|{:?}|{:?}|{:?}|{:?}",
            self.lambda,
            self.epsilon,
            self.model,
            self.channel.variant(),
            self.channel.actions(),
            self.channel.powers()
        );
        hex_digest(text.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A scheduling policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Every packet is sent in `t_s` slots.
    Ftt { t_s: u32 },
    /// `tau_a` when the age at the decision epoch is at most `h`, else `tau_b`.
    Threshold { h: u32, tau_a: u32, tau_b: u32 },
    /// Blocklength drawn i.i.d. per packet; `pmf[i]` is the mass of action `i`.
    Randomized { pmf: Vec<f64> },
    /// `actions[a - min_age]` is used at age `a`; the last entry covers
    /// every larger age.
    Tabular { min_age: u32, actions: Vec<u32> },
    /// AT model: generate when the age reaches `h_a`, send in `t_s` slots.
    AtFixed { h_a: u32, t_s: u32 },
}

impl PolicySpec {
    /// Checks that every referenced blocklength is a valid action.
    pub fn validate(&self, channel: &ChannelModel) -> Result<()> {
        let check = |tau: u32, name: &'static str| {
            if channel.contains(tau) {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{tau} is not in the action set")))
            }
        };
        match self {
            PolicySpec::Ftt { t_s } => check(*t_s, "t_s"),
            PolicySpec::AtFixed { t_s, .. } => check(*t_s, "t_s"),
            PolicySpec::Threshold { tau_a, tau_b, .. } => {
                check(*tau_a, "tau_a")?;
                check(*tau_b, "tau_b")?;
                if tau_a < tau_b {
                    return Err(Error::invalid("tau_a", format!("must be at least tau_b ({tau_a} < {tau_b})")));
                }
                Ok(())
            }
            PolicySpec::Randomized { pmf } => {
                if pmf.len() != channel.actions().len() {
                    return Err(Error::invalid("pmf", "length must match the action set"));
                }
                if pmf.iter().any(|&p| !(p >= 0.0)) {
                    return Err(Error::invalid("pmf", "masses must be non-negative"));
                }
                let total: f64 = pmf.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid("pmf", format!("masses sum to {total}")));
                }
                Ok(())
            }
            PolicySpec::Tabular { actions, .. } => {
                if actions.is_empty() {
                    return Err(Error::invalid("actions", "table is empty"));
                }
                actions.iter().try_for_each(|&t| check(t, "actions"))
            }
        }
    }

    /// Blocklength chosen at a decision epoch with the given age, for
    /// deterministic policies.
    pub fn action_at(&self, age: u64) -> Option<u32> {
        match self {
            PolicySpec::Ftt { t_s } | PolicySpec::AtFixed { t_s, .. } => Some(*t_s),
            PolicySpec::Threshold { h, tau_a, tau_b } => {
                Some(if age <= *h as u64 { *tau_a } else { *tau_b })
            }
            PolicySpec::Tabular { min_age, actions } => {
                let i = age.saturating_sub(*min_age as u64).min(actions.len() as u64 - 1);
                Some(actions[i as usize])
            }
            PolicySpec::Randomized { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            PolicySpec::Ftt { t_s } => format!("ftt({t_s})"),
            PolicySpec::Threshold { h, tau_a, tau_b } => format!("threshold({h};{tau_a};{tau_b})"),
            PolicySpec::Randomized { .. } => "randomized".into(),
            PolicySpec::Tabular { .. } => "tabular".into(),
            PolicySpec::AtFixed { h_a, t_s } => format!("at({h_a};{t_s})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    Smdp,
    Simulated,
    Bound,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Analytic => "analytic",
            Provenance::Smdp => "smdp",
            Provenance::Simulated => "simulated",
            Provenance::Bound => "bound",
        };
        f.write_str(s)
    }
}

/// An (average age, average power) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    /// Average age of information in slots.
    pub avg_age: f64,
    /// Average transmit power in mW.
    pub avg_power: f64,
    pub provenance: Provenance,
    pub policy: PolicySpec,
    pub scenario_digest: String,
}
