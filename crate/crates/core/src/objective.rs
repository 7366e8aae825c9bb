//! Rates, powers, computation efficiency and feasibility of an allocation.
//!
//! Every solver, baseline and the brute-force oracle evaluate allocations
//! through this module only.

use std::f64::consts::LN_2;

use thiserror::Error;

use crate::model::{Allocation, CeReport, Feasibility, OffloadingMode, Scenario, SystemParams, UserParams};

/// Absolute tolerance for `g <= 0` style constraints, in the constraint's native units.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("user index {index} out of range for {len} users")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("mode flag of user {user} is {value}, expected 0 or 1")]
    NonBinaryMode { user: usize, value: u8 },
}

fn log2(x: f64) -> f64 {
    x.ln() / LN_2
}

/// Offloaded bits per second on one held subchannel.
pub fn offload_rate(sys: &SystemParams, power: f64, gain: f64) -> f64 {
    sys.bandwidth_per_subchannel * log2(1.0 + power * gain / sys.noise_power)
}

/// Power drawn from the supply for transmit power `power`.
pub fn offload_power(sys: &SystemParams, power: f64) -> f64 {
    sys.amplifier_coeff * power
}

/// Locally computed bits per second at CPU frequency `freq`.
pub fn local_rate(user: &UserParams, freq: f64) -> f64 {
    freq / user.cycles_per_bit
}

/// Local computing power at CPU frequency `freq`.
pub fn local_power(user: &UserParams, freq: f64) -> f64 {
    user.chip_coeff * freq * freq * freq
}

fn check_user(s: &Scenario, k: usize) -> Result<(), ObjectiveError> {
    if k >= s.users.len() {
        return Err(ObjectiveError::IndexOutOfRange {
            index: k,
            len: s.users.len(),
        });
    }
    Ok(())
}

fn offload_parts(s: &Scenario, a: &Allocation, k: usize) -> (f64, f64) {
    let sys = &s.system;
    let mut rate = 0.0;
    let mut power = 0.0;
    for n in 0..sys.num_subchannels {
        if a.assignment[k][n] == 1 {
            let p = a.power[k][n];
            rate += offload_rate(sys, p, s.gains[k][n]);
            power += offload_power(sys, p);
        }
    }
    (rate, power)
}

fn mode_of(a: &Allocation, k: usize) -> Result<f64, ObjectiveError> {
    match a.mode[k] {
        0 => Ok(0.0),
        1 => Ok(1.0),
        value => Err(ObjectiveError::NonBinaryMode { user: k, value }),
    }
}

/// `R_k` under partial offloading: offloaded plus locally computed bits per second.
pub fn user_rate_partial(s: &Scenario, a: &Allocation, k: usize) -> Result<f64, ObjectiveError> {
    check_user(s, k)?;
    Ok(offload_parts(s, a, k).0 + local_rate(&s.users[k], a.cpu_freq[k]))
}

/// `P_k` under partial offloading: amplifier, local CPU and circuit power.
pub fn user_power_partial(s: &Scenario, a: &Allocation, k: usize) -> Result<f64, ObjectiveError> {
    check_user(s, k)?;
    Ok(offload_parts(s, a, k).1 + local_power(&s.users[k], a.cpu_freq[k]) + s.system.circuit_power)
}

/// `R_k` under binary offloading; the mode flag masks the unused part.
pub fn user_rate_binary(s: &Scenario, a: &Allocation, k: usize) -> Result<f64, ObjectiveError> {
    check_user(s, k)?;
    let mu = mode_of(a, k)?;
    Ok(mu * offload_parts(s, a, k).0 + (1.0 - mu) * local_rate(&s.users[k], a.cpu_freq[k]))
}

/// `P_k` under binary offloading. The circuit power is paid in both modes.
pub fn user_power_binary(s: &Scenario, a: &Allocation, k: usize) -> Result<f64, ObjectiveError> {
    check_user(s, k)?;
    let mu = mode_of(a, k)?;
    Ok(mu * offload_parts(s, a, k).1
        + (1.0 - mu) * local_power(&s.users[k], a.cpu_freq[k])
        + s.system.circuit_power)
}

pub fn user_rate(s: &Scenario, a: &Allocation, k: usize, mode: OffloadingMode) -> Result<f64, ObjectiveError> {
    match mode {
        OffloadingMode::Partial => user_rate_partial(s, a, k),
        OffloadingMode::Binary => user_rate_binary(s, a, k),
    }
}

pub fn user_power(s: &Scenario, a: &Allocation, k: usize, mode: OffloadingMode) -> Result<f64, ObjectiveError> {
    match mode {
        OffloadingMode::Partial => user_power_partial(s, a, k),
        OffloadingMode::Binary => user_power_binary(s, a, k),
    }
}

/// Per-user rates and powers; non-binary mode flags count as local in binary mode.
pub fn rates_and_powers(s: &Scenario, a: &Allocation, mode: OffloadingMode) -> (Vec<f64>, Vec<f64>) {
    (0..s.users.len())
        .map(|k| {
            let eval_mode = if mode == OffloadingMode::Binary && a.mode[k] > 1 {
                OffloadingMode::Partial
            } else {
                mode
            };
            (
                user_rate(s, a, k, eval_mode).unwrap_or(0.0),
                user_power(s, a, k, eval_mode).unwrap_or(f64::INFINITY),
            )
        })
        .unzip()
}

/// Evaluates CE and all constraint groups. Infeasibility is reported, never raised.
pub fn ce_report(s: &Scenario, a: &Allocation, mode: OffloadingMode) -> CeReport {
    let (rates, powers) = rates_and_powers(s, a, mode);
    let ce: Vec<f64> = rates
        .iter()
        .zip(&powers)
        .map(|(&r, &p)| if p > 0.0 { r / p } else { 0.0 })
        .collect();
    let weighted_sum_ce = s.users.iter().zip(&ce).map(|(u, &e)| u.weight * e).sum();
    let bits = rates.iter().map(|r| r * s.system.block_duration).collect();

    let k_users = s.users.len();
    let n_sub = s.system.num_subchannels;
    let min_rate = (0..k_users).all(|k| s.users[k].min_bits_rate - rates[k] <= FEASIBILITY_TOL);
    let max_power = (0..k_users).all(|k| powers[k] - s.users[k].max_power <= FEASIBILITY_TOL);
    let cpu_freq = (0..k_users).all(|k| {
        let f = a.cpu_freq[k];
        -f <= FEASIBILITY_TOL && f - s.users[k].max_cpu_freq <= FEASIBILITY_TOL
    });
    let integrality = a.assignment.iter().flatten().all(|&r| r <= 1);
    let exclusivity = (0..n_sub).all(|n| (0..k_users).map(|k| a.assignment[k][n] as u32).sum::<u32>() <= 1)
        && (0..k_users).all(|k| {
            (0..n_sub).all(|n| {
                let p = a.power[k][n];
                p >= 0.0 && (p == 0.0 || a.assignment[k][n] == 1)
            })
        });
    let mode_ok = match mode {
        OffloadingMode::Partial => true,
        OffloadingMode::Binary => (0..k_users).all(|k| match a.mode[k] {
            1 => a.cpu_freq[k] == 0.0,
            0 => a.power[k].iter().all(|&p| p == 0.0),
            _ => false,
        }),
    };

    CeReport {
        per_user_rate: rates,
        per_user_power: powers,
        per_user_ce: ce,
        per_user_bits: bits,
        weighted_sum_ce,
        feasible: Feasibility {
            min_rate,
            max_power,
            cpu_freq,
            exclusivity,
            integrality,
            mode: mode_ok,
        },
    }
}

/// Largest constraint violation of the rate, power and frequency constraints relative to each constraint's scale.
pub fn max_relative_violation(s: &Scenario, report: &CeReport, a: &Allocation) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, u) in s.users.iter().enumerate() {
        if u.min_bits_rate > 0.0 {
            worst = worst.max((u.min_bits_rate - report.per_user_rate[k]) / u.min_bits_rate);
        }
        worst = worst.max((report.per_user_power[k] - u.max_power) / u.max_power);
        if u.max_cpu_freq > 0.0 {
            worst = worst.max((a.cpu_freq[k] - u.max_cpu_freq) / u.max_cpu_freq);
        }
    }
    worst
}
