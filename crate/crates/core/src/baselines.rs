//! Comparison schemes: offloading only, local computing only, maximum
//! computed bits (CB) and minimum energy consumption (EC).
//!
//! CB and EC are single-metric objectives under the same constraint set as
//! the CE problem: CB maximizes `sum_k w_k R_k`, EC minimizes `sum_k P_k`
//! subject to the minimum rates. Both run once through the fixed-weight dual
//! loop (no ratio, so no parametric outer loop).

use serde::{Deserialize, Serialize};

use crate::model::{validate_scenario, Allocation, DualState, IterationRecord, OffloadingMode, Scenario, SolveTrace, MODE_LOCAL};
use crate::objective::{ce_report, max_relative_violation};
use crate::solver_binary::{solve_binary, solve_fixed_weights_binary};
use crate::solver_partial::{
    compose_duals, fixed_point_residuals, parametric_outer, precheck, solve_partial, InnerProblem, InnerResult,
    PartialSolution, Refinement, Resources, SolverConfig, SolverError,
};

/// Every scheme the CLI can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Proposed,
    Offload,
    Local,
    Cbmax,
    Ecmin,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Proposed, Scheme::Offload, Scheme::Local, Scheme::Cbmax, Scheme::Ecmin];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Offload => "offload",
            Scheme::Local => "local",
            Scheme::Cbmax => "cbmax",
            Scheme::Ecmin => "ecmin",
        }
    }
}

/// Runs `scheme` under `mode`. Offloading-only and local-only are the same
/// in both modes; for CB/EC the mode decides whether users may split tasks.
pub fn solve_scheme(s: &Scenario, cfg: &SolverConfig, scheme: Scheme, mode: OffloadingMode) -> Result<PartialSolution, SolverError> {
    match (scheme, mode) {
        (Scheme::Proposed, OffloadingMode::Partial) => solve_partial(s, cfg),
        (Scheme::Proposed, OffloadingMode::Binary) => solve_binary(s, cfg),
        (Scheme::Offload, _) => solve_offloading_only(s, cfg),
        (Scheme::Local, _) => solve_local_only(s, cfg),
        (Scheme::Cbmax, m) => solve_cb_max_in(s, cfg, m),
        (Scheme::Ecmin, m) => solve_ec_min_in(s, cfg, m),
    }
}

/// CE maximization with every CPU frequency forced to zero.
pub fn solve_offloading_only(s: &Scenario, cfg: &SolverConfig) -> Result<PartialSolution, SolverError> {
    cfg.validate()?;
    let s = validate_scenario(s.clone())?;
    let resources = vec![Resources::OFFLOAD; s.num_users()];
    precheck(&s, &resources)?;
    parametric_outer(&s, cfg, OffloadingMode::Partial, Refinement::Fixed(resources.clone()), |reward, cost| {
        InnerProblem {
            scenario: &s,
            reward: reward.to_vec(),
            cost: cost.to_vec(),
            resources: resources.clone(),
        }
        .solve(cfg)
    })
}

/// Maximizer of `(f / C) / (eps f^3 + p_c)` over the feasible frequency interval,
/// or `None` when the interval is empty.
pub fn local_only_frequency(s: &Scenario, k: usize) -> Option<f64> {
    let u = &s.users[k];
    let pc = s.system.circuit_power;
    let stationary = (pc / (2.0 * u.chip_coeff)).cbrt();
    let lo = u.min_bits_rate * u.cycles_per_bit;
    let hi = u.max_cpu_freq.min(((u.max_power - pc) / u.chip_coeff).cbrt());
    if lo > hi {
        return None;
    }
    Some(stationary.clamp(lo, hi))
}

/// Local computing only: no subchannels, closed-form frequency per user.
pub fn solve_local_only(s: &Scenario, cfg: &SolverConfig) -> Result<PartialSolution, SolverError> {
    cfg.validate()?;
    let s = validate_scenario(s.clone())?;
    let k_users = s.num_users();
    let mut alloc = Allocation::zeros(k_users, s.num_subchannels());
    for k in 0..k_users {
        let u = &s.users[k];
        let f = local_only_frequency(&s, k).ok_or_else(|| SolverError::InfeasibleInstance {
            user: k,
            required: u.min_bits_rate,
            achievable: u.max_cpu_freq.min(((u.max_power - s.system.circuit_power) / u.chip_coeff).cbrt())
                / u.cycles_per_bit,
        })?;
        alloc.cpu_freq[k] = f;
        alloc.mode[k] = MODE_LOCAL;
    }
    let report = ce_report(&s, &alloc, OffloadingMode::Partial);
    let mut duals = DualState::zeros(k_users, s.num_subchannels());
    duals.lambda = report.per_user_power.iter().map(|p| 1.0 / p).collect();
    duals.beta = (0..k_users).map(|k| s.users[k].weight * report.per_user_ce[k]).collect();
    let mut trace = SolveTrace::default();
    trace.push(IterationRecord {
        outer_iter: 0,
        inner_iter: 0,
        weighted_sum_ce: report.weighted_sum_ce,
        duals: duals.clone(),
        lemma1_residual: fixed_point_residuals(&s, &report.per_user_rate, &report.per_user_power, &duals.lambda, &duals.beta),
        constraint_violations: max_relative_violation(&s, &report, &alloc).max(0.0),
    });
    Ok(PartialSolution {
        mode: OffloadingMode::Partial,
        allocation: alloc,
        report,
        duals,
        trace,
        converged: true,
    })
}

/// Maximum weighted computed bits, partial offloading.
pub fn solve_cb_max(s: &Scenario, cfg: &SolverConfig) -> Result<PartialSolution, SolverError> {
    solve_cb_max_in(s, cfg, OffloadingMode::Partial)
}

/// Minimum total power subject to the minimum rates, partial offloading.
pub fn solve_ec_min(s: &Scenario, cfg: &SolverConfig) -> Result<PartialSolution, SolverError> {
    solve_ec_min_in(s, cfg, OffloadingMode::Partial)
}

pub fn solve_cb_max_in(s: &Scenario, cfg: &SolverConfig, mode: OffloadingMode) -> Result<PartialSolution, SolverError> {
    let reward: Vec<f64> = s.users.iter().map(|u| u.weight).collect();
    let cost = vec![0.0; s.num_users()];
    fixed_weights(s, cfg, mode, &reward, &cost)
}

pub fn solve_ec_min_in(s: &Scenario, cfg: &SolverConfig, mode: OffloadingMode) -> Result<PartialSolution, SolverError> {
    let reward = vec![0.0; s.num_users()];
    let cost = vec![1.0; s.num_users()];
    fixed_weights(s, cfg, mode, &reward, &cost)
}

fn fixed_weights(
    s: &Scenario,
    cfg: &SolverConfig,
    mode: OffloadingMode,
    reward: &[f64],
    cost: &[f64],
) -> Result<PartialSolution, SolverError> {
    cfg.validate()?;
    let s = validate_scenario(s.clone())?;
    let res: InnerResult = match mode {
        OffloadingMode::Partial => {
            let resources = vec![Resources::BOTH; s.num_users()];
            precheck(&s, &resources)?;
            InnerProblem {
                scenario: &s,
                reward: reward.to_vec(),
                cost: cost.to_vec(),
                resources,
            }
            .solve(cfg)
        }
        OffloadingMode::Binary => solve_fixed_weights_binary(&s, reward, cost, cfg)?,
    };
    let report = ce_report(&s, &res.allocation, mode);
    let k_users = s.num_users();
    let lambda = vec![1.0; k_users];
    let beta: Vec<f64> = cost.to_vec();
    let duals = compose_duals(mode, &lambda, &beta, &res.alpha, &res.varsigma, &res.upsilon, &res.xi);
    let fixed_point = fixed_point_residuals(&s, &report.per_user_rate, &report.per_user_power, &lambda, &beta);
    let mut trace = SolveTrace::default();
    let n = res.history.len();
    for (j, step) in res.history.iter().enumerate() {
        let (ce, violation) = if j + 1 == n {
            (report.weighted_sum_ce, max_relative_violation(&s, &report, &res.allocation).max(0.0))
        } else {
            (step.weighted_sum_ce, step.violation)
        };
        trace.push(IterationRecord {
            outer_iter: 0,
            inner_iter: j,
            weighted_sum_ce: ce,
            duals: compose_duals(mode, &lambda, &beta, &step.alpha, &step.varsigma, &res.upsilon, &res.xi),
            lemma1_residual: fixed_point,
            constraint_violations: violation,
        });
    }
    Ok(PartialSolution {
        mode,
        allocation: res.allocation,
        report,
        duals,
        trace,
        converged: res.converged,
    })
}
