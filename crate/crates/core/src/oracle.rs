//! Brute-force reference solutions and KKT diagnostics for small instances.
//!
//! Nothing here calls into the solvers. Rates and powers come from
//! [`crate::objective`] only, so a disagreement between a solver and the
//! oracle is a disagreement about optimization, never about evaluation.
//!
//! The weighted-sum CE is separable across users once the subchannel owners
//! are fixed, so each `(user, channel set)` subproblem is grid-searched once
//! and the `(K + 1)^N` owner vectors are then scored by table lookup.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_scenario, Allocation, OffloadingMode, Scenario, ValidationErrors, MODE_LOCAL, MODE_OFFLOAD};
use crate::objective::{self, ce_report, rates_and_powers, FEASIBILITY_TOL};
use crate::solver_partial::{fixed_point_residuals, PartialSolution};

pub const MAX_USERS: usize = 3;
pub const MAX_SUBCHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Intervals per dimension: powers take `points + 1` log-spaced values
    /// from `P_th 1e-6` to `P_th` plus 0, frequencies `points + 1` evenly
    /// spaced values on `[0, f_max]`.
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("instance too large for enumeration: {users} users x {subchannels} subchannels (max {MAX_USERS} x {MAX_SUBCHANNELS})")]
    InstanceTooLarge { users: usize, subchannels: usize },
    #[error("grid needs at least 2 intervals per dimension")]
    GridTooSmall,
    #[error("no grid point satisfies every constraint")]
    Infeasible,
    #[error(transparent)]
    InvalidScenario(#[from] ValidationErrors),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub weighted_sum_ce: f64,
    pub allocation: Allocation,
}

/// Best grid point of one user for one channel set.
#[derive(Debug, Clone, PartialEq)]
struct UserBest {
    value: f64,
    powers: Vec<f64>,
    freq: f64,
    mode: u8,
}

fn power_grid(max_power: f64, points: usize) -> Vec<f64> {
    // Exponents are exact fractions i / points, so doubling `points` yields a superset.
    let mut grid = Vec::with_capacity(points + 2);
    grid.push(0.0);
    for i in 0..=points {
        let frac = i as f64 / points as f64;
        grid.push(max_power * 10f64.powf(-6.0 * (1.0 - frac)));
    }
    grid
}

fn freq_grid(max_freq: f64, points: usize) -> Vec<f64> {
    (0..=points).map(|i| max_freq * (i as f64 / points as f64)).collect()
}

/// Exhaustive search of one user's powers on `channels` and its frequency.
fn user_search(s: &Scenario, k: usize, channels: &[usize], local: bool, grid: GridSpec) -> Option<UserBest> {
    let sys = &s.system;
    let u = &s.users[k];
    let pg = power_grid(u.max_power, grid.points);
    let fg = if local { freq_grid(u.max_cpu_freq, grid.points) } else { vec![0.0] };
    let rate_tab: Vec<Vec<f64>> = channels
        .iter()
        .map(|&n| pg.iter().map(|&p| objective::offload_rate(sys, p, s.gains[k][n])).collect())
        .collect();
    let tx_tab: Vec<f64> = pg.iter().map(|&p| objective::offload_power(sys, p)).collect();
    let loc_rate: Vec<f64> = fg.iter().map(|&f| objective::local_rate(u, f)).collect();
    let loc_power: Vec<f64> = fg.iter().map(|&f| objective::local_power(u, f)).collect();

    let m = channels.len();
    let mut idx = vec![0usize; m];
    let mut best: Option<(f64, Vec<usize>, usize)> = None;
    loop {
        let mut rate = 0.0;
        let mut power = sys.circuit_power;
        for (j, &i) in idx.iter().enumerate() {
            rate += rate_tab[j][i];
            power += tx_tab[i];
        }
        if power - u.max_power <= FEASIBILITY_TOL {
            for (fi, (&lr, &lp)) in loc_rate.iter().zip(&loc_power).enumerate() {
                let r = rate + lr;
                let p = power + lp;
                if p - u.max_power > FEASIBILITY_TOL {
                    break;
                }
                if u.min_bits_rate - r > FEASIBILITY_TOL {
                    continue;
                }
                let v = u.weight * r / p;
                if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                    best = Some((v, idx.clone(), fi));
                }
            }
        }
        // Odometer increment.
        let mut j = 0;
        while j < m {
            idx[j] += 1;
            if idx[j] < pg.len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == m {
            break;
        }
    }
    best.map(|(value, idx, fi)| UserBest {
        value,
        powers: idx.iter().map(|&i| pg[i]).collect(),
        freq: fg[fi],
        mode: if local && m == 0 { MODE_LOCAL } else { MODE_OFFLOAD },
    })
}

fn check_size(s: &Scenario, grid: GridSpec) -> Result<Scenario, OracleError> {
    let s = validate_scenario(s.clone())?;
    if s.num_users() > MAX_USERS || s.num_subchannels() > MAX_SUBCHANNELS {
        return Err(OracleError::InstanceTooLarge {
            users: s.num_users(),
            subchannels: s.num_subchannels(),
        });
    }
    if grid.points < 2 {
        return Err(OracleError::GridTooSmall);
    }
    Ok(s)
}

fn channels_in(mask: usize, n_sub: usize) -> Vec<usize> {
    (0..n_sub).filter(|n| mask >> n & 1 == 1).collect()
}

fn enumerate(s: &Scenario, grid: GridSpec, mode: OffloadingMode) -> Result<OracleSolution, OracleError> {
    let k_users = s.num_users();
    let n_sub = s.num_subchannels();
    let masks = 1usize << n_sub;

    let table: Vec<Option<UserBest>> = (0..k_users * masks)
        .into_par_iter()
        .map(|i| {
            let (k, mask) = (i / masks, i % masks);
            let channels = channels_in(mask, n_sub);
            match mode {
                OffloadingMode::Partial => user_search(s, k, &channels, true, grid),
                OffloadingMode::Binary => {
                    // Offload with the held channels, or leave them idle and compute locally.
                    let offload = user_search(s, k, &channels, false, grid);
                    let local = user_search(s, k, &[], true, grid);
                    match (offload, local) {
                        (Some(o), Some(l)) => Some(if o.value >= l.value { o } else { l }),
                        (o, l) => o.or(l),
                    }
                }
            }
        })
        .collect();

    // Owner vectors: digit n in base K + 1, value K meaning "unassigned".
    let total = (k_users + 1).pow(n_sub as u32);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for code in 0..total {
        let mut owner = vec![0usize; n_sub];
        let mut c = code;
        for o in owner.iter_mut() {
            *o = c % (k_users + 1);
            c /= k_users + 1;
        }
        let mut user_masks = vec![0usize; k_users];
        for (n, &o) in owner.iter().enumerate() {
            if o < k_users {
                user_masks[o] |= 1 << n;
            }
        }
        let mut value = 0.0;
        let mut feasible = true;
        for (k, &mask) in user_masks.iter().enumerate() {
            match &table[k * masks + mask] {
                Some(b) => value += b.value,
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if feasible && best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, user_masks));
        }
    }
    let (_, user_masks) = best.ok_or(OracleError::Infeasible)?;

    let mut alloc = Allocation::zeros(k_users, n_sub);
    for (k, &mask) in user_masks.iter().enumerate() {
        let b = table[k * masks + mask].as_ref().expect("feasible entry");
        alloc.cpu_freq[k] = b.freq;
        alloc.mode[k] = b.mode;
        if b.mode == MODE_OFFLOAD || mode == OffloadingMode::Partial {
            for (j, n) in channels_in(mask, n_sub).into_iter().enumerate() {
                alloc.assignment[k][n] = 1;
                alloc.power[k][n] = b.powers[j];
            }
        }
    }
    let report = ce_report(s, &alloc, mode);
    Ok(OracleSolution {
        weighted_sum_ce: report.weighted_sum_ce,
        allocation: alloc,
    })
}

/// Exhaustive search over subchannel owners, per-channel powers and frequencies (partial offloading).
pub fn brute_force_partial(s: &Scenario, grid: &GridSpec) -> Result<OracleSolution, OracleError> {
    let s = check_size(s, *grid)?;
    enumerate(&s, *grid, OffloadingMode::Partial)
}

/// As [`brute_force_partial`], additionally choosing each user's mode.
pub fn brute_force_binary(s: &Scenario, grid: &GridSpec) -> Result<OracleSolution, OracleError> {
    let s = check_size(s, *grid)?;
    enumerate(&s, *grid, OffloadingMode::Binary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Largest stationarity residual over powers and frequencies, relative to the gradient scale.
    pub stationarity: f64,
    /// Largest `|multiplier x slack|` over the rate, power and frequency constraints.
    pub complementary_slackness: f64,
    /// Fixed-point residuals `(max_k |w R - beta P| / (w R), max_k |lambda P - 1|)`.
    pub fixed_point: (f64, f64),
}

fn perturbed_lagrangian(s: &Scenario, a: &Allocation, mode: OffloadingMode, k: usize, coeff: (f64, f64, f64)) -> f64 {
    let r = objective::user_rate(s, a, k, mode).expect("index in range");
    let p = objective::user_power(s, a, k, mode).expect("index in range");
    coeff.0 * r - coeff.1 * p - coeff.2 * a.cpu_freq[k]
}

/// Finite-difference stationarity of each user's Lagrangian
/// `a R - b P - upsilon f` at the returned multipliers, where
/// `a = lambda w + alpha` and `b = lambda beta + varsigma` (binary mode reads
/// `psi, phi, vartheta, chi`). Variables at zero are checked one-sided.
pub fn kkt_residuals(s: &Scenario, sol: &PartialSolution) -> KktReport {
    let d = &sol.duals;
    let a = &sol.allocation;
    let mode = sol.mode;
    let (lambda, beta, alpha, varsigma) = match mode {
        OffloadingMode::Partial => (&d.lambda, &d.beta, &d.alpha, &d.varsigma),
        OffloadingMode::Binary => (&d.psi, &d.phi, &d.vartheta, &d.chi),
    };
    let mut stationarity: f64 = 0.0;
    let mut slackness: f64 = 0.0;
    for k in 0..s.num_users() {
        let u = &s.users[k];
        let coeff = (lambda[k] * u.weight + alpha[k], lambda[k] * beta[k] + varsigma[k], d.upsilon[k]);
        let offloads = mode == OffloadingMode::Partial || a.mode[k] == MODE_OFFLOAD;
        let computes = mode == OffloadingMode::Partial || a.mode[k] == MODE_LOCAL;

        let check = |get: &dyn Fn(&mut Allocation) -> &mut f64, x: f64, scale_step: f64, upper: Option<f64>| {
            let h = if x > 0.0 { 1e-6 * x } else { 1e-6 * scale_step };
            let eval = |v: f64| {
                let mut b = a.clone();
                *get(&mut b) = v;
                let r = objective::user_rate(s, &b, k, mode).expect("index in range");
                let p = objective::user_power(s, &b, k, mode).expect("index in range");
                (r, p, perturbed_lagrangian(s, &b, mode, k, coeff))
            };
            let (lo, hi) = if x > 0.0 { (x - h, x + h) } else { (x, x + h) };
            let (r0, p0, l0) = eval(lo);
            let (r1, p1, l1) = eval(hi);
            let width = hi - lo;
            let g = (l1 - l0) / width;
            let scale = (coeff.0 * (r1 - r0) / width).abs() + (coeff.1 * (p1 - p0) / width).abs() + coeff.2.abs();
            if scale == 0.0 {
                return 0.0;
            }
            let at_upper = upper.is_some_and(|m| x >= m);
            let res = if x <= 0.0 {
                g.max(0.0)
            } else if at_upper {
                (-g).max(0.0)
            } else {
                g.abs()
            };
            res / scale
        };

        if offloads {
            for n in 0..s.num_subchannels() {
                if a.assignment[k][n] == 1 {
                    let x = a.power[k][n];
                    let r = check(&|b: &mut Allocation| &mut b.power[k][n], x, u.max_power, None);
                    stationarity = stationarity.max(r);
                }
            }
        }
        if computes && u.max_cpu_freq > 0.0 {
            let x = a.cpu_freq[k];
            let r = check(&|b: &mut Allocation| &mut b.cpu_freq[k], x, u.max_cpu_freq, Some(u.max_cpu_freq));
            stationarity = stationarity.max(r);
        }

        let rate = sol.report.per_user_rate[k];
        let power = sol.report.per_user_power[k];
        slackness = slackness
            .max((alpha[k] * (rate - u.min_bits_rate)).abs())
            .max((varsigma[k] * (u.max_power - power)).abs())
            .max((d.upsilon[k] * (u.max_cpu_freq - a.cpu_freq[k])).abs());
    }
    let (rates, powers) = rates_and_powers(s, a, mode);
    KktReport {
        stationarity,
        complementary_slackness: slackness,
        fixed_point: fixed_point_residuals(s, &rates, &powers, lambda, beta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_gains, ChannelConfig};
    use crate::model::{SystemParams, UserParams};
    use crate::solver_partial::{solve_partial, SolverConfig};

    fn scenario(k: usize, n: usize, seed: u64) -> Scenario {
        Scenario {
            system: SystemParams { num_subchannels: n, ..SystemParams::default() },
            users: vec![UserParams::default(); k],
            gains: sample_gains(&ChannelConfig { mean_gain: 1e-4, rng_seed: seed }, k, n).unwrap(),
            rng_seed: seed,
        }
    }

    #[test]
    fn grids() {
        let pg = power_grid(2.0, 4);
        assert_eq!(pg.len(), 6);
        assert_eq!(pg[0], 0.0);
        assert!((pg[1] - 2e-6).abs() < 1e-20);
        assert_eq!(pg[5], 2.0);
        assert!(pg.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(freq_grid(10.0, 2), vec![0.0, 5.0, 10.0]);
        let fine = power_grid(2.0, 8);
        assert!(pg.iter().all(|p| fine.contains(p)));
    }

    #[test]
    fn too_large() {
        let s = scenario(4, 2, 1);
        assert_eq!(
            brute_force_partial(&s, &GridSpec::default()),
            Err(OracleError::InstanceTooLarge { users: 4, subchannels: 2 })
        );
        let s = scenario(2, 5, 1);
        assert!(matches!(brute_force_binary(&s, &GridSpec::default()), Err(OracleError::InstanceTooLarge { .. })));
    }

    #[test]
    fn single_user_single_channel_matches_solver() {
        let s = scenario(1, 1, 3);
        let oracle = brute_force_partial(&s, &GridSpec { points: 2000 }).unwrap();
        let sol = solve_partial(&s, &SolverConfig::default()).unwrap();
        let (o, x) = (oracle.weighted_sum_ce, sol.report.weighted_sum_ce);
        assert!((x - o).abs() <= 0.01 * o, "solver {x} oracle {o}");
        assert!(x >= o * (1.0 - 1e-9));
    }

    #[test]
    fn infeasible_demand_is_reported() {
        let s = scenario(1, 1, 3).with_min_bits_rate(1e12);
        assert_eq!(brute_force_partial(&s, &GridSpec { points: 50 }), Err(OracleError::Infeasible));
        assert!(solve_partial(&s, &SolverConfig::default()).is_err());
    }

    #[test]
    fn refinement_never_hurts() {
        let s = scenario(1, 1, 8);
        let ce: Vec<f64> = [500, 1000, 2000]
            .iter()
            .map(|&p| brute_force_partial(&s, &GridSpec { points: p }).unwrap().weighted_sum_ce)
            .collect();
        assert!(ce[0] <= ce[1] && ce[1] <= ce[2], "{ce:?}");
    }

    #[test]
    fn forced_local_single_user() {
        let mut s = scenario(1, 1, 2);
        s.gains = vec![vec![1e-20]];
        let sol = brute_force_binary(&s, &GridSpec { points: 100 }).unwrap();
        assert_eq!(sol.allocation.mode, vec![MODE_LOCAL]);
        assert!(sol.allocation.cpu_freq[0] > 0.0);
    }

    #[test]
    fn binary_never_beats_partial() {
        for seed in 0..5 {
            let s = scenario(2, 2, seed);
            let g = GridSpec { points: 60 };
            let p = brute_force_partial(&s, &g).unwrap().weighted_sum_ce;
            let b = brute_force_binary(&s, &g).unwrap().weighted_sum_ce;
            assert!(b <= p, "seed {seed}: {b} > {p}");
        }
    }

    #[test]
    fn oracle_evaluation_matches_objective() {
        let s = scenario(2, 2, 4);
        let sol = brute_force_partial(&s, &GridSpec { points: 40 }).unwrap();
        let again = ce_report(&s, &sol.allocation, OffloadingMode::Partial).weighted_sum_ce;
        assert!((sol.weighted_sum_ce - again).abs() < 1e-12 * again);
    }

    #[test]
    fn kkt_holds_at_solver_output() {
        let s = scenario(2, 4, 11);
        let sol = solve_partial(&s, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        let r = kkt_residuals(&s, &sol);
        assert!(r.stationarity < 1e-4, "{r:?}");
        assert!(r.fixed_point.0 < 1e-4 && r.fixed_point.1 < 1e-4, "{r:?}");
    }

    #[test]
    fn slack_power_cap_has_zero_price() {
        let s = scenario(2, 4, 12).with_max_power(1e3);
        let sol = solve_partial(&s, &SolverConfig::default()).unwrap();
        let r = kkt_residuals(&s, &sol);
        for k in 0..2 {
            assert!((sol.duals.varsigma[k] * (1e3 - sol.report.per_user_power[k])).abs() < 1e-8);
        }
        assert!(r.stationarity < 1e-4);
    }

    #[test]
    fn perturbed_allocation_is_not_stationary() {
        let s = scenario(2, 4, 11);
        let mut sol = solve_partial(&s, &SolverConfig::default()).unwrap();
        for row in sol.allocation.power.iter_mut() {
            for p in row.iter_mut() {
                *p *= 1.5;
            }
        }
        sol.allocation.cpu_freq.iter_mut().for_each(|f| *f *= 0.5);
        assert!(kkt_residuals(&s, &sol).stationarity > 1e-2);
    }
}
