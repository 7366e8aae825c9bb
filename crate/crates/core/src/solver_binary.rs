//! Weighted-sum CE maximization under binary offloading.
//!
//! Each outer iteration evaluates, for every user, the best offloading-only
//! and local-only responses at the current parametric weights, picks the mode
//! with the larger indicator, then re-solves powers, frequencies and
//! subchannels with the modes fixed.

use crate::model::{validate_scenario, Allocation, DualState, OffloadingMode, Scenario, MODE_LOCAL, MODE_OFFLOAD};
use crate::objective;
use crate::solver_partial::{
    parametric_outer, InnerProblem, InnerResult, PartialSolution, Refinement, Resources, SolverConfig, SolverError,
    UserProblem,
};

/// Offloading and local-computing indicators `(F1, F2)` of user `k`.
///
/// `F1` is the binary-mode Lagrangian term of the offloaded part (powers from
/// `allocation.power` on held subchannels), `F2` that of local computing at
/// `allocation.cpu_freq[k]`. Both use `(psi w + vartheta, psi phi + chi)` as
/// rate and power coefficients.
pub fn mode_indicators(s: &Scenario, duals: &DualState, allocation: &Allocation, k: usize) -> (f64, f64) {
    let u = &s.users[k];
    let rate_coeff = duals.psi[k] * u.weight + duals.vartheta[k];
    let power_coeff = duals.psi[k] * duals.phi[k] + duals.chi[k];
    indicator_pair(s, k, rate_coeff, power_coeff, allocation)
}

fn indicator_pair(s: &Scenario, k: usize, rate_coeff: f64, power_coeff: f64, a: &Allocation) -> (f64, f64) {
    let sys = &s.system;
    let u = &s.users[k];
    let mut offload_rate = 0.0;
    let mut tx_power = 0.0;
    for n in 0..sys.num_subchannels {
        if a.assignment[k][n] == 1 {
            let x = a.power[k][n];
            offload_rate += objective::offload_rate(sys, x, s.gains[k][n]);
            tx_power += objective::offload_power(sys, x);
        }
    }
    let f = a.cpu_freq[k];
    let f1 = rate_coeff * offload_rate - power_coeff * (tx_power + sys.circuit_power);
    let f2 = rate_coeff * objective::local_rate(u, f) - power_coeff * (objective::local_power(u, f) + sys.circuit_power);
    (f1, f2)
}

/// Offload (1) when `F1 >= F2`, local (0) otherwise.
pub fn select_mode(f1: f64, f2: f64) -> u8 {
    if f1 >= f2 {
        MODE_OFFLOAD
    } else {
        MODE_LOCAL
    }
}

/// Mode selection followed by the dual loop with the chosen modes fixed.
///
/// Each mode is scored by the indicator at its own constrained optimum, where
/// complementary slackness removes the multiplier terms; a mode that cannot
/// meet the user's constraints scores `-inf`.
pub(crate) fn binary_inner(s: &Scenario, reward: &[f64], cost: &[f64], cfg: &SolverConfig) -> InnerResult {
    let k_users = s.num_users();
    let offload = InnerProblem {
        scenario: s,
        reward: reward.to_vec(),
        cost: cost.to_vec(),
        resources: vec![Resources::OFFLOAD; k_users],
    }
    .solve(cfg);

    let score = |feasible: bool, rate: f64, power: f64, k: usize| {
        if feasible {
            reward[k] * rate - cost[k] * power
        } else {
            f64::NEG_INFINITY
        }
    };
    let modes: Vec<u8> = (0..k_users)
        .map(|k| {
            let off = UserProblem::new(s, k, offload.allocation.channels_of(k), false).solve(reward[k], cost[k]);
            let loc = UserProblem::new(s, k, Vec::new(), true).solve(reward[k], cost[k]);
            let f1 = score(off.feasible, off.rate, off.power, k);
            let f2 = score(loc.feasible, loc.rate, loc.power, k);
            select_mode(f1, f2)
        })
        .collect();

    let resources = modes
        .iter()
        .map(|&m| if m == MODE_OFFLOAD { Resources::OFFLOAD } else { Resources::LOCAL })
        .collect();
    let mut res = InnerProblem {
        scenario: s,
        reward: reward.to_vec(),
        cost: cost.to_vec(),
        resources,
    }
    .solve(cfg);
    res.allocation.mode = modes;
    res
}

/// Each user must be able to meet its minimum rate in at least one mode.
fn precheck_binary(s: &Scenario) -> Result<(), SolverError> {
    let n_sub = s.num_subchannels();
    for k in 0..s.num_users() {
        let off = UserProblem::new(s, k, (0..n_sub).collect(), false).solve(1.0, 0.0);
        let loc = UserProblem::new(s, k, Vec::new(), true).solve(1.0, 0.0);
        if !off.feasible && !loc.feasible {
            return Err(SolverError::InfeasibleInstance {
                user: k,
                required: s.users[k].min_bits_rate,
                achievable: off.rate.max(loc.rate),
            });
        }
    }
    Ok(())
}

/// Maximizes the weighted-sum CE under binary offloading.
pub fn solve_binary(s: &Scenario, cfg: &SolverConfig) -> Result<PartialSolution, SolverError> {
    cfg.validate()?;
    let s = validate_scenario(s.clone())?;
    precheck_binary(&s)?;
    parametric_outer(&s, cfg, OffloadingMode::Binary, Refinement::Modes, |reward, cost| binary_inner(&s, reward, cost, cfg))
}

/// Mode selection for a fixed-weight objective (used by the CB/EC baselines in binary mode).
pub(crate) fn solve_fixed_weights_binary(
    s: &Scenario,
    reward: &[f64],
    cost: &[f64],
    cfg: &SolverConfig,
) -> Result<InnerResult, SolverError> {
    precheck_binary(s)?;
    Ok(binary_inner(s, reward, cost, cfg))
}
