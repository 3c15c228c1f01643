//! Age of information versus transmit power for a short-packet link with
//! blocklength adaptation.
//!
//! The crate evaluates closed-form tradeoffs for fixed-transmission-time and
//! threshold policies, solves the semi-Markov decision problem by value
//! iteration, computes lower bounds, simulates the link slot by slot and
//! traces Pareto curves.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod bounds;
pub mod channel;
pub mod error;
pub mod lp;
pub mod optimize;
pub mod scenario;
pub mod simulate;
pub mod smdp;
pub mod special;

pub use channel::{AwgnParams, ChannelModel, ChannelVariant, FadingParams, GainModel};
pub use error::{Error, Result};
pub use scenario::{GenerationModel, PolicySpec, Provenance, Scenario, TradeoffPoint};
