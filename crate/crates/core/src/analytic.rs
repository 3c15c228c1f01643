//! Closed-form average age and average power of fixed-transmission-time
//! (FTT) and threshold policies.
//!
//! Geometric conventions: the idle time `G` between a transmission end and
//! the next generation lives on `{0, 1, ...}` with mean `(1-λ)/λ`; the
//! inter-generation gaps of the preemptive model live on `{1, 2, ...}`.

use crate::error::{Error, Result};
use crate::scenario::{GenerationModel, PolicySpec, Provenance, Scenario, TradeoffPoint};

fn require_model(scenario: &Scenario, model: GenerationModel) -> Result<()> {
    if scenario.model != model {
        return Err(Error::invalid(
            "model",
            format!("expected the {model} generation model, got {}", scenario.model),
        ));
    }
    Ok(())
}

fn point(scenario: &Scenario, policy: PolicySpec, (avg_age, avg_power): (f64, f64)) -> TradeoffPoint {
    TradeoffPoint {
        avg_age,
        avg_power,
        provenance: Provenance::Analytic,
        policy,
        scenario_digest: scenario.digest(),
    }
}

/// Renewal-cycle moments `(E[R], E[R²])` of the inter-delivery time for the
/// non-preemptive FTT policy.
pub fn ftt_cycle_moments(t_s: u32, lambda: f64, epsilon: f64) -> (f64, f64) {
    let g = (1.0 - lambda) / lambda;
    let m = g + t_s as f64;
    let er = m / (1.0 - epsilon);
    let er2 = (1.0 - lambda) / ((1.0 - epsilon) * lambda * lambda)
        + (1.0 + epsilon) * m * m / ((1.0 - epsilon) * (1.0 - epsilon));
    (er, er2)
}

fn ftt_formula(t_s: u32, power: f64, lambda: f64, epsilon: f64) -> Result<(f64, f64)> {
    if !(epsilon < 1.0) {
        return Err(Error::Divergent("every transmission fails when epsilon = 1".into()));
    }
    let (er, er2) = ftt_cycle_moments(t_s, lambda, epsilon);
    let ts = t_s as f64;
    let age = ts + er2 / (2.0 * er) - 0.5;
    let avg_power = power * ts * lambda / (1.0 - lambda + lambda * ts);
    Ok((age, avg_power))
}

/// `(Ā, P̄)` of the FTT policy in the non-preemptive model.
pub fn ftt_np_values(t_s: u32, scenario: &Scenario) -> Result<(f64, f64)> {
    let power = scenario.channel.power(t_s)?;
    ftt_formula(t_s, power, scenario.lambda, scenario.epsilon)
}

pub fn ftt_np(t_s: u32, scenario: &Scenario) -> Result<TradeoffPoint> {
    require_model(scenario, GenerationModel::NP)?;
    let v = ftt_np_values(t_s, scenario)?;
    Ok(point(scenario, PolicySpec::Ftt { t_s }, v))
}

/// FTT in the error-free system: the non-preemptive formula with `ε = 0`.
pub fn ftt_errorfree(t_s: u32, scenario: &Scenario) -> Result<TradeoffPoint> {
    require_model(scenario, GenerationModel::NP)?;
    let power = scenario.channel.power(t_s)?;
    let v = ftt_formula(t_s, power, scenario.lambda, 0.0)?;
    Ok(point(&scenario.error_free(), PolicySpec::Ftt { t_s }, v))
}

/// Partial moments `E[G^k; G <= m]` for `k = 0, 1, 2` of `G ~ Geom(λ)` on
/// `{0, 1, ...}`. A negative `m` yields zeros.
fn geometric_lower_moments(lambda: f64, m: i64) -> [f64; 3] {
    let g = (1.0 - lambda) / lambda;
    let full = [1.0, g, g + 2.0 * g * g];
    if m < 0 {
        return [0.0; 3];
    }
    // G > m  <=>  G = m + 1 + G'
    let k = (m + 1) as f64;
    let tail = (1.0 - lambda).powi((m + 1).min(i32::MAX as i64) as i32);
    let upper = [
        tail,
        tail * (k + g),
        tail * (k * k + 2.0 * k * g + g + 2.0 * g * g),
    ];
    [full[0] - upper[0], full[1] - upper[1], full[2] - upper[2]]
}

/// Expected age cost, energy and duration accumulated from a delivery that
/// leaves the age at `s` until the next delivery, restricted to the event
/// whose idle-time moments are `mom`, with next action `tau`.
fn branch(s: f64, tau: u32, power: f64, mom: [f64; 3]) -> (f64, f64, f64) {
    let t = tau as f64;
    let [p0, e1, e2] = mom;
    // D = G + tau; cost s D + D(D-1)/2
    let ed = e1 + t * p0;
    let ed2 = e2 + 2.0 * t * e1 + t * t * p0;
    let age = s * ed + 0.5 * (ed2 - ed);
    (age, t * power * p0, ed)
}

/// Error-free threshold policy: `tau_a` when the age at the decision epoch
/// is at most `h`, otherwise `tau_b`. Returns `(Ā, P̄)`.
pub fn threshold_errorfree_values(h: u32, tau_a: u32, tau_b: u32, scenario: &Scenario) -> Result<(f64, f64)> {
    if tau_a == tau_b {
        let power = scenario.channel.power(tau_a)?;
        return ftt_formula(tau_a, power, scenario.lambda, 0.0);
    }
    if tau_a < tau_b {
        return Err(Error::invalid("tau_a", format!("must exceed tau_b ({tau_a} < {tau_b})")));
    }
    let lambda = scenario.lambda;
    let (pa, pb) = (scenario.channel.power(tau_a)?, scenario.channel.power(tau_b)?);
    let g = (1.0 - lambda) / lambda;
    let full = [1.0, g, g + 2.0 * g * g];

    // per-state expected (age cost, energy, duration) and probability of moving to tau_a
    let state = |s: u32| {
        let lower = geometric_lower_moments(lambda, h as i64 - s as i64);
        let upper = [full[0] - lower[0], full[1] - lower[1], full[2] - lower[2]];
        let a = branch(s as f64, tau_a, pa, lower);
        let b = branch(s as f64, tau_b, pb, upper);
        ((a.0 + b.0, a.1 + b.1, a.2 + b.2), lower[0])
    };
    let (cost_a, stay_a) = state(tau_a);
    let (cost_b, emc_alpha) = state(tau_b);
    let emc_beta = 1.0 - stay_a;
    let norm = emc_alpha + emc_beta;
    if !(norm > 0.0) {
        return Err(Error::Numerical("threshold chain has no stationary distribution".into()));
    }
    let (pi_a, pi_b) = (emc_alpha / norm, emc_beta / norm);
    let time = pi_a * cost_a.2 + pi_b * cost_b.2;
    Ok((
        (pi_a * cost_a.0 + pi_b * cost_b.0) / time,
        (pi_a * cost_a.1 + pi_b * cost_b.1) / time,
    ))
}

pub fn threshold_errorfree(h: u32, tau_a: u32, tau_b: u32, scenario: &Scenario) -> Result<TradeoffPoint> {
    require_model(scenario, GenerationModel::NP)?;
    let v = threshold_errorfree_values(h, tau_a, tau_b, scenario)?;
    Ok(point(&scenario.error_free(), PolicySpec::Threshold { h, tau_a, tau_b }, v))
}

/// FTT in the preemptive model. Diverges when no packet can survive
/// (`λ = 1` and `t_s ≥ 2`).
pub fn ftt_preemptive_values(t_s: u32, scenario: &Scenario) -> Result<(f64, f64)> {
    let lambda = scenario.lambda;
    let power = scenario.channel.power(t_s)?;
    let stay = (1.0 - lambda).powi(t_s as i32 - 1);
    let preempt_alpha = (1.0 - scenario.epsilon) * stay;
    if !(preempt_alpha > 0.0) {
        return Err(Error::Divergent(format!(
            "every transmission of {t_s} slots is preempted at lambda = {lambda}"
        )));
    }
    let age = 1.0 / (preempt_alpha * lambda);
    let avg_power = power * (1.0 - stay * (1.0 - lambda));
    Ok((age, avg_power))
}

pub fn ftt_preemptive(t_s: u32, scenario: &Scenario) -> Result<TradeoffPoint> {
    require_model(scenario, GenerationModel::P)?;
    let v = ftt_preemptive_values(t_s, scenario)?;
    Ok(point(scenario, PolicySpec::Ftt { t_s }, v))
}

/// FTT in the age-threshold model; thresholds below `t_s` behave as `t_s`.
pub fn ftt_age_threshold_values(h_a: u32, t_s: u32, scenario: &Scenario) -> Result<(f64, f64)> {
    let eps = scenario.epsilon;
    let power = scenario.channel.power(t_s)?;
    let ts = t_s as f64;
    let d = h_a.max(t_s) as f64 - ts;
    let q = 1.0 - eps;
    let denom = d * q + ts;
    let age = ts + (d * d * q * q + ts * ts * (1.0 + eps) + 2.0 * d * ts * q) / (2.0 * q * denom) - 0.5;
    Ok((age, power * ts / denom))
}

pub fn ftt_age_threshold(h_a: u32, t_s: u32, scenario: &Scenario) -> Result<TradeoffPoint> {
    require_model(scenario, GenerationModel::AT)?;
    let v = ftt_age_threshold_values(h_a, t_s, scenario)?;
    Ok(point(scenario, PolicySpec::AtFixed { h_a, t_s }, v))
}

/// Closed-form evaluation of any policy that has one in the scenario's model.
pub fn evaluate(policy: &PolicySpec, scenario: &Scenario) -> Result<TradeoffPoint> {
    match (policy, scenario.model) {
        (PolicySpec::Ftt { t_s }, GenerationModel::NP) => ftt_np(*t_s, scenario),
        (PolicySpec::Ftt { t_s }, GenerationModel::P) => ftt_preemptive(*t_s, scenario),
        (PolicySpec::AtFixed { h_a, t_s }, GenerationModel::AT) => ftt_age_threshold(*h_a, *t_s, scenario),
        (PolicySpec::Threshold { h, tau_a, tau_b }, GenerationModel::NP) => {
            threshold_errorfree(*h, *tau_a, *tau_b, scenario)
        }
        (p, m) => Err(Error::invalid(
            "policy",
            format!("no closed form for {} under the {m} model", p.label()),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{AwgnParams, ChannelModel, ChannelVariant};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn channel(eps: f64) -> Arc<ChannelModel> {
        Arc::new(ChannelModel::build(ChannelVariant::NormalApprox(AwgnParams::new(8, 10.0, eps)), 24, 138).unwrap())
    }

    fn unit_channel() -> Arc<ChannelModel> {
        let actions: Vec<u32> = (1..=200).collect();
        let powers = actions.iter().map(|&t| 100.0 / t as f64 + 1.0).collect();
        Arc::new(ChannelModel::from_table(ChannelVariant::NormalApprox(AwgnParams::new(8, 10.0, 0.01)), actions, powers).unwrap())
    }

    fn scen(lambda: f64, eps: f64, model: GenerationModel) -> Scenario {
        Scenario::with_epsilon(channel(0.01), lambda, eps, model).unwrap()
    }

    fn unit_scen(lambda: f64, eps: f64, model: GenerationModel) -> Scenario {
        Scenario::with_epsilon(unit_channel(), lambda, eps, model).unwrap()
    }

    /// E[G^k; G <= m] by direct summation.
    fn lower_moments_by_sum(lambda: f64, m: i64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for g in 0..=m.max(-1) {
            let p = lambda * (1.0 - lambda).powi(g as i32);
            let x = g as f64;
            out[0] += p;
            out[1] += p * x;
            out[2] += p * x * x;
        }
        out
    }

    #[test]
    fn ftt_degenerate_cases() {
        let s = unit_scen(1.0, 0.0, GenerationModel::NP);
        for t in [1u32, 5, 24] {
            let (a, p) = ftt_np_values(t, &s).unwrap();
            assert_relative_eq!(a, (3.0 * t as f64 - 1.0) / 2.0, max_relative = 1e-14);
            assert_relative_eq!(p, s.channel.power(t).unwrap(), max_relative = 1e-14);
        }
        let p = ftt_errorfree(1, &s).unwrap();
        assert_relative_eq!(p.avg_age, 1.0);
    }

    #[test]
    fn ftt_power_hand_value() {
        let ch = Arc::new(
            ChannelModel::from_table(ChannelVariant::NormalApprox(AwgnParams::new(8, 10.0, 0.01)), vec![24], vec![10.0]).unwrap(),
        );
        let s = Scenario::new(ch, 0.1, GenerationModel::NP).unwrap();
        let (_, p) = ftt_np_values(24, &s).unwrap();
        assert_relative_eq!(p, 10.0 * 24.0 * 0.1 / 3.3, max_relative = 1e-14);
    }

    #[test]
    fn errorfree_is_np_at_zero_epsilon_bitwise() {
        let s = scen(0.1, 0.0, GenerationModel::NP);
        for t in [24u32, 60, 138] {
            let a = ftt_np(t, &s).unwrap();
            let b = ftt_errorfree(t, &scen(0.1, 0.2, GenerationModel::NP)).unwrap();
            assert_eq!(a.avg_age.to_bits(), b.avg_age.to_bits());
            assert_eq!(a.avg_power.to_bits(), b.avg_power.to_bits());
        }
        let with_err = ftt_np(24, &scen(0.1, 0.01, GenerationModel::NP)).unwrap();
        let free = ftt_errorfree(24, &scen(0.1, 0.01, GenerationModel::NP)).unwrap();
        assert!(free.avg_age < with_err.avg_age);
    }

    #[test]
    fn error_gap_is_m_eps_over_one_minus_eps() {
        // the gap simplifies to (g + t_s) eps / (1 - eps)
        for &(lambda, t, eps) in &[(0.1, 24u32, 0.01), (0.1, 138, 0.2), (0.5, 60, 0.5), (0.01, 24, 0.9)] {
            let s = scen(lambda, eps, GenerationModel::NP);
            let a = ftt_np_values(t, &s).unwrap().0;
            let a0 = ftt_np_values(t, &s.error_free()).unwrap().0;
            let m = (1.0 - lambda) / lambda + t as f64;
            assert_relative_eq!(a - a0, m * eps / (1.0 - eps), max_relative = 1e-9);
        }
    }

    #[test]
    fn ftt_monotone_in_t_s() {
        for eps in [0.0, 0.01, 0.2] {
            let s = scen(0.1, eps, GenerationModel::NP);
            let pts: Vec<_> = (24..=138).map(|t| ftt_np_values(t, &s).unwrap()).collect();
            assert!(pts.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 < w[0].1));
        }
    }

    #[test]
    fn geometric_partial_moments_match_summation() {
        for lambda in [1.0, 0.7, 0.1, 0.01] {
            for m in [-3i64, -1, 0, 1, 5, 40, 200] {
                let a = geometric_lower_moments(lambda, m);
                let b = lower_moments_by_sum(lambda, m);
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() <= 1e-9 * (1.0 + b[k].abs()), "lambda={lambda} m={m} k={k}: {a:?} vs {b:?}");
                }
            }
        }
    }

    #[test]
    fn threshold_case_two_and_collapse() {
        let s = scen(0.1, 0.01, GenerationModel::NP);
        let ftt30 = ftt_errorfree(30, &s).unwrap();
        let th = threshold_errorfree(20, 100, 30, &s).unwrap();
        assert_relative_eq!(th.avg_age, ftt30.avg_age, max_relative = 1e-12);
        assert_relative_eq!(th.avg_power, ftt30.avg_power, max_relative = 1e-12);
        for t in [24u32, 80, 138] {
            let f = ftt_errorfree(t, &s).unwrap();
            for h in [0u32, 50, 500] {
                let th = threshold_errorfree(h, t, t, &s).unwrap();
                assert!((th.avg_age - f.avg_age).abs() < 1e-12);
                assert!((th.avg_power - f.avg_power).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn threshold_large_h_approaches_long_action() {
        let s = scen(0.1, 0.01, GenerationModel::NP);
        let f = ftt_errorfree(100, &s).unwrap();
        let th = threshold_errorfree(5000, 100, 30, &s).unwrap();
        assert_relative_eq!(th.avg_age, f.avg_age, max_relative = 1e-9);
        assert_relative_eq!(th.avg_power, f.avg_power, max_relative = 1e-9);
    }

    /// Threshold policy by exact dynamic accounting on a brute-force chain:
    /// enumerate idle times up to a cutoff.
    fn threshold_by_enumeration(h: u32, ta: u32, tb: u32, s: &Scenario) -> (f64, f64) {
        let lambda = s.lambda;
        let (pa, pb) = (s.channel.power(ta).unwrap(), s.channel.power(tb).unwrap());
        let cut = (60.0 / lambda) as u32;
        let step = |from: u32| {
            let (mut c, mut e, mut d, mut to_a) = (0.0, 0.0, 0.0, 0.0);
            for g in 0..cut {
                let p = lambda * (1.0 - lambda).powi(g as i32);
                let (next, pw) = if from + g <= h { (ta, pa) } else { (tb, pb) };
                let dur = (g + next) as f64;
                c += p * (from as f64 * dur + dur * (dur - 1.0) / 2.0);
                e += p * next as f64 * pw;
                d += p * dur;
                if next == ta {
                    to_a += p;
                }
            }
            (c, e, d, to_a)
        };
        let a = step(ta);
        let b = step(tb);
        let (alpha, beta) = (b.3, 1.0 - a.3);
        let (pia, pib) = (alpha / (alpha + beta), beta / (alpha + beta));
        let t = pia * a.2 + pib * b.2;
        ((pia * a.0 + pib * b.0) / t, (pia * a.1 + pib * b.1) / t)
    }

    #[test]
    fn threshold_matches_enumeration_in_every_case() {
        let s = scen(0.1, 0.01, GenerationModel::NP);
        for &(h, ta, tb) in &[(60u32, 100u32, 30u32), (150, 100, 30), (20, 100, 30), (40, 138, 24), (99, 100, 99)] {
            let (a, p) = threshold_errorfree_values(h, ta, tb, &s).unwrap();
            let (ea, ep) = threshold_by_enumeration(h, ta, tb, &s);
            assert_relative_eq!(a, ea, max_relative = 1e-9);
            assert_relative_eq!(p, ep, max_relative = 1e-9);
        }
    }

    #[test]
    fn threshold_at_unit_lambda() {
        let s = unit_scen(1.0, 0.0, GenerationModel::NP);
        // age at each epoch is the previous action, so h >= tau_a pins tau_a
        let (a, _) = threshold_errorfree_values(10, 10, 3, &s).unwrap();
        assert_relative_eq!(a, 14.5);
        let (a, _) = threshold_errorfree_values(2, 10, 3, &s).unwrap();
        assert_relative_eq!(a, 4.0);
        // tau_b <= h < tau_a alternates
        let (a, _) = threshold_errorfree_values(5, 10, 3, &s).unwrap();
        let expected = (3.0 * 10.0 + 45.0 + 10.0 * 3.0 + 3.0) / 13.0;
        assert_relative_eq!(a, expected, max_relative = 1e-14);
    }

    #[test]
    fn preemptive_degenerate_and_divergent() {
        let s = unit_scen(0.3, 0.0, GenerationModel::P);
        let p = ftt_preemptive(1, &s).unwrap();
        assert_relative_eq!(p.avg_age, 1.0 / 0.3, max_relative = 1e-14);
        assert_relative_eq!(p.avg_power, s.channel.power(1).unwrap() * 0.3, max_relative = 1e-14);
        let s = unit_scen(1.0, 0.0, GenerationModel::P);
        assert!(matches!(ftt_preemptive(2, &s), Err(Error::Divergent(_))));
        assert!(ftt_preemptive(1, &s).is_ok());
        assert!(ftt_np(1, &s).is_err());
    }

    #[test]
    fn preemptive_age_increases_with_epsilon() {
        let ages: Vec<f64> = [0.0, 0.01, 0.1, 0.5]
            .iter()
            .map(|&e| ftt_preemptive_values(24, &scen(0.01, e, GenerationModel::P)).unwrap().0)
            .collect();
        assert!(ages.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn age_threshold_collapse() {
        let s = unit_scen(0.5, 0.0, GenerationModel::AT);
        for t in [1u32, 7, 24] {
            let (a, p) = ftt_age_threshold_values(t, t, &s).unwrap();
            assert_relative_eq!(a, (3.0 * t as f64 - 1.0) / 2.0, max_relative = 1e-14);
            assert_relative_eq!(p, s.channel.power(t).unwrap(), max_relative = 1e-14);
        }
        let s = scen(0.5, 0.2, GenerationModel::AT);
        for h in [0u32, 10, 23] {
            assert_eq!(
                ftt_age_threshold_values(h, 24, &s).unwrap(),
                ftt_age_threshold_values(24, 24, &s).unwrap()
            );
        }
    }

    /// AT cycle: deliveries leave the age at t_s; each failed attempt adds
    /// t_s slots, and once the age passes h_a retries are back to back.
    fn age_threshold_by_enumeration(h_a: u32, t_s: u32, eps: f64, power: f64) -> (f64, f64) {
        let (mut cost, mut len, mut energy) = (0.0, 0.0, 0.0);
        let wait = h_a.max(t_s) - t_s;
        for n in 1..2000 {
            // n attempts, the last one succeeding
            let p = eps.powi(n - 1) * (1.0 - eps);
            let r = (wait + n as u32 * t_s) as f64;
            let start = t_s as f64;
            cost += p * (start * r + r * (r - 1.0) / 2.0);
            len += p * r;
            energy += p * power * (n as u32 * t_s) as f64;
        }
        (cost / len, energy / len)
    }

    #[test]
    fn age_threshold_matches_enumeration() {
        for &(h, t, eps) in &[(24u32, 24u32, 0.01), (100, 24, 0.2), (500, 24, 0.01), (60, 10, 0.5)] {
            let s = unit_scen(0.5, eps, GenerationModel::AT);
            let (a, p) = ftt_age_threshold_values(h, t, &s).unwrap();
            let (ea, ep) = age_threshold_by_enumeration(h, t, eps, s.channel.power(t).unwrap());
            assert_relative_eq!(a, ea, max_relative = 1e-9);
            assert_relative_eq!(p, ep, max_relative = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn np_policies_stay_inside_the_endpoint_bracket(h in 0u32..400, ta in 24u32..=138, tb in 24u32..=138, lambda in 0.01f64..1.0) {
            let s = scen(lambda, 0.0, GenerationModel::NP);
            let (ta, tb) = if ta >= tb { (ta, tb) } else { (tb, ta) };
            let (_, p) = threshold_errorfree_values(h, ta, tb, &s).unwrap();
            let hi = ftt_np_values(24, &s).unwrap().1;
            let lo = ftt_np_values(138, &s).unwrap().1;
            prop_assert!(p >= lo * (1.0 - 1e-12) && p <= hi * (1.0 + 1e-12));
        }
    }
}
