//! Weighted-sum CE maximization under partial offloading.
//!
//! The sum-of-ratios objective is handled by the parametric transform: for
//! fixed `(lambda, beta)` the subtractive problem
//! `max sum_k lambda_k (w_k R_k - beta_k P_k)` is solved by dual
//! decomposition, then `(lambda, beta)` move toward `(1 / P_k, w_k R_k / P_k)`.
//!
//! Inside the dual loop the closed-form power and frequency responses depend
//! on a user's multipliers only through the *water level*
//! `t_k = (lambda_k w_k + alpha_k) / (lambda_k beta_k + varsigma_k)`:
//!
//! ```text
//! p_kn = [ t_k B / (ln2 zeta) - N0 / h_kn ]+
//! f_k  = min(f_max, sqrt(t_k / (3 C_k eps_k)))
//! ```
//!
//! Rate and power are nondecreasing in `t_k`, so the minimum-rate and power
//! caps become an interval `[t_rate, t_power]` of admissible levels, and the
//! constrained response is the unconstrained level `w_k / beta_k` clamped to
//! that interval. The multipliers follow from the clamped level exactly.
//! The subchannel assignment couples users; the dual loop alternates between
//! the per-column argmax of the allocation indicator and the per-user
//! responses, moving `(alpha, varsigma)` with diminishing steps until the
//! assignment reproduces itself.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_scenario, Allocation, CeReport, DualState, IterationRecord, OffloadingMode, Scenario,
    SolveTrace, SystemParams, UserParams, ValidationErrors, MODE_LOCAL, MODE_OFFLOAD,
};
use crate::objective::{self, ce_report, max_relative_violation, rates_and_powers};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative change threshold of the primal variables (and fixed-point residuals) for the outer loop.
    pub outer_tol: f64,
    /// Relative multiplier residual threshold for the inner loop.
    pub inner_tol: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Initial multiplier step.
    pub step0: f64,
    /// Steps shrink as `step0 / (1 + i)^step_decay`.
    pub step_decay: f64,
    /// Damping of the `(lambda, beta)` fixed-point update, in (0, 1].
    pub damping: f64,
    /// Finish with a local search over subchannel owners (and modes in
    /// binary offloading), scoring each candidate by exact per-user optima.
    pub refine: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-4,
            inner_tol: 1e-6,
            max_outer_iters: 50,
            max_inner_iters: 200,
            step0: 1.0,
            step_decay: 0.6,
            damping: 0.7,
            refine: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: &str| Err(SolverError::InvalidConfig(msg.to_string()));
        if !(self.outer_tol > 0.0 && self.inner_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_outer_iters < 1 || self.max_inner_iters < 1 {
            return bad("iteration caps must be at least 1");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping must lie in (0, 1]");
        }
        if !(self.step0 > 0.0 && self.step_decay >= 0.0) {
            return bad("step0 must be positive and step_decay non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("degenerate dual: power price lambda*beta + varsigma is {0}")]
    DegenerateDual(f64),
    #[error("instance infeasible: user {user} needs {required} bit/s but at most {achievable} bit/s is reachable")]
    InfeasibleInstance {
        user: usize,
        required: f64,
        achievable: f64,
    },
    #[error("user {0} consumes zero power")]
    ZeroPower(usize),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    InvalidScenario(#[from] ValidationErrors),
}

/// Result of any solver or baseline. `converged == false` means the
/// iteration cap was hit and the best iterate is returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialSolution {
    pub mode: OffloadingMode,
    pub allocation: Allocation,
    pub report: CeReport,
    pub duals: DualState,
    pub trace: SolveTrace,
    pub converged: bool,
}

impl PartialSolution {
    pub fn outer_iterations(&self) -> usize {
        self.trace.outer_iterations()
    }
}

/// Effective prices seen by one user: coefficient of its rate, of its power,
/// and the CPU-cap multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prices {
    pub rate: f64,
    pub power: f64,
    pub freq: f64,
}

impl Prices {
    /// `(lambda w + alpha, lambda beta + varsigma, upsilon)` of user `k`.
    pub fn partial(duals: &DualState, k: usize, weight: f64) -> Self {
        Self {
            rate: duals.lambda[k] * weight + duals.alpha[k],
            power: duals.lambda[k] * duals.beta[k] + duals.varsigma[k],
            freq: duals.upsilon[k],
        }
    }

    /// Binary-mode counterpart built from `(psi, phi, vartheta, chi)`.
    pub fn binary(duals: &DualState, k: usize, weight: f64) -> Self {
        Self {
            rate: duals.psi[k] * weight + duals.vartheta[k],
            power: duals.psi[k] * duals.phi[k] + duals.chi[k],
            freq: duals.upsilon[k],
        }
    }

    pub(crate) fn from_level(level: f64) -> Self {
        Self {
            rate: level,
            power: 1.0,
            freq: 0.0,
        }
    }
}

/// Optimal transmit power on one subchannel for the given prices.
pub fn optimal_power(prices: &Prices, sys: &SystemParams, gain: f64) -> Result<f64, SolverError> {
    if !(prices.power > 0.0) {
        return Err(SolverError::DegenerateDual(prices.power));
    }
    let water = prices.rate * sys.bandwidth_per_subchannel / (LN_2 * sys.amplifier_coeff * prices.power);
    Ok((water - sys.noise_power / gain).max(0.0))
}

/// Optimal local CPU frequency for the given prices, clamped to `[0, f_max]`.
pub fn optimal_frequency(prices: &Prices, user: &UserParams) -> Result<f64, SolverError> {
    if !(prices.power > 0.0) {
        return Err(SolverError::DegenerateDual(prices.power));
    }
    let num = prices.rate / user.cycles_per_bit - prices.freq;
    let f = (num.max(0.0) / (3.0 * prices.power * user.chip_coeff)).sqrt();
    Ok(f.min(user.max_cpu_freq))
}

/// Smallest gain at which the optimal power is positive; infinite when the rate price is not positive.
pub fn activation_threshold(prices: &Prices, sys: &SystemParams) -> f64 {
    if prices.rate <= 0.0 {
        return f64::INFINITY;
    }
    sys.noise_power * LN_2 * sys.amplifier_coeff * prices.power / (prices.rate * sys.bandwidth_per_subchannel)
}

/// `log2(1 + x) - x / (ln2 (1 + x))`, accurate for small `x`.
fn indicator_shape(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    // With u = x / (1 + x): ln(1 + x) - u = -ln(1 - u) - u = sum_{j >= 2} u^j / j.
    let u = x / (1.0 + x);
    let nats = if u < 1e-2 {
        let mut term = u;
        let mut sum = 0.0;
        for j in 2..12 {
            term *= u;
            sum += term / j as f64;
        }
        sum
    } else {
        x.ln_1p() - u
    };
    nats / LN_2
}

/// Channel allocation indicator of user `k` on a subchannel, at auxiliary power `z`.
pub fn channel_indicator(prices: &Prices, sys: &SystemParams, z: f64, gain: f64) -> f64 {
    let x = z * gain / sys.noise_power;
    prices.rate * sys.bandwidth_per_subchannel * indicator_shape(x)
}

/// Gives each subchannel to the user with the largest positive indicator
/// (lowest index on ties); subchannels with no positive indicator stay free.
pub fn assign_subchannels(indicator: &[Vec<f64>]) -> Vec<Vec<u8>> {
    let k_users = indicator.len();
    let n_sub = indicator.first().map_or(0, Vec::len);
    let mut assignment = vec![vec![0u8; n_sub]; k_users];
    for n in 0..n_sub {
        let mut best: Option<(usize, f64)> = None;
        for (k, row) in indicator.iter().enumerate() {
            let h = row[n];
            if h > 0.0 && best.is_none_or(|(_, b)| h > b) {
                best = Some((k, h));
            }
        }
        if let Some((k, _)) = best {
            assignment[k][n] = 1;
        }
    }
    assignment
}

/// Which parts of the task a user may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Resources {
    pub offload: bool,
    pub local: bool,
}

impl Resources {
    pub const BOTH: Resources = Resources { offload: true, local: true };
    pub const OFFLOAD: Resources = Resources { offload: true, local: false };
    pub const LOCAL: Resources = Resources { offload: false, local: true };
}

/// One user's resources for a fixed channel set.
pub(crate) struct UserProblem<'a> {
    scenario: &'a Scenario,
    k: usize,
    channels: Vec<usize>,
    local: bool,
}

/// Constrained response of one user at fixed channel set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LevelSolution {
    /// Level used for primal recovery (finite).
    pub level: f64,
    pub alpha: f64,
    pub varsigma: f64,
    pub upsilon: f64,
    pub feasible: bool,
    pub rate: f64,
    pub power: f64,
}

impl<'a> UserProblem<'a> {
    pub fn new(scenario: &'a Scenario, k: usize, channels: Vec<usize>, local: bool) -> Self {
        Self {
            scenario,
            k,
            channels,
            local,
        }
    }

    fn user(&self) -> &UserParams {
        &self.scenario.users[self.k]
    }

    /// Level at which the CPU frequency reaches its cap.
    fn freq_saturation(&self) -> f64 {
        let u = self.user();
        3.0 * u.cycles_per_bit * u.chip_coeff * u.max_cpu_freq * u.max_cpu_freq
    }

    /// Level beyond which nothing changes, if any.
    fn saturation(&self) -> Option<f64> {
        if !self.channels.is_empty() {
            None
        } else if self.local {
            Some(self.freq_saturation())
        } else {
            Some(0.0)
        }
    }

    fn freq_at(&self, level: f64) -> f64 {
        if self.local {
            optimal_frequency(&Prices::from_level(level), self.user()).unwrap_or(0.0)
        } else {
            0.0
        }
    }

    fn rate_power(&self, level: f64) -> (f64, f64) {
        let s = self.scenario;
        let sys = &s.system;
        let prices = Prices::from_level(level);
        let mut rate = 0.0;
        let mut power = sys.circuit_power;
        for &n in &self.channels {
            let h = s.gains[self.k][n];
            let p = optimal_power(&prices, sys, h).unwrap_or(0.0);
            rate += objective::offload_rate(sys, p, h);
            power += objective::offload_power(sys, p);
        }
        let f = self.freq_at(level);
        rate += objective::local_rate(self.user(), f);
        power += objective::local_power(self.user(), f);
        (rate, power)
    }

    /// Smallest level whose rate reaches `target`; `None` if unreachable.
    fn min_level_for_rate(&self, target: f64) -> Option<f64> {
        if target <= 0.0 {
            return Some(0.0);
        }
        let reaches = |t: f64| self.rate_power(t).0 >= target;
        search_threshold(reaches, self.saturation()).map(|(_, hi)| hi)
    }

    /// Largest level whose power stays within `cap`; `None` if never exceeded.
    fn max_level_for_power(&self, cap: f64) -> Option<f64> {
        let exceeds = |t: f64| self.rate_power(t).1 > cap;
        search_threshold(exceeds, self.saturation()).map(|(lo, _)| lo)
    }

    /// Constrained optimum of `reward * R - cost * P` over the levels.
    pub fn solve(&self, reward: f64, cost: f64) -> LevelSolution {
        let u = self.user();
        let free = if cost > 0.0 {
            reward / cost
        } else if reward > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        let t_rate = self.min_level_for_rate(u.min_bits_rate);
        let t_power = self.max_level_for_power(u.max_power).unwrap_or(f64::INFINITY);
        let feasible = t_rate.is_some_and(|t| t <= t_power);

        let target = if feasible {
            free.max(t_rate.unwrap_or(0.0)).min(t_power)
        } else {
            t_power
        };
        let (mut alpha, mut varsigma) = (0.0, 0.0);
        if target > free {
            alpha = cost * target - reward;
        } else if target < free {
            varsigma = reward / target - cost;
        }
        let alpha = alpha.max(0.0);
        let varsigma = if varsigma.is_finite() { varsigma.max(0.0) } else { 0.0 };

        let level = match self.saturation() {
            Some(sat) => target.min(sat),
            None => target,
        };
        let upsilon = if self.local && target > self.freq_saturation() {
            let a = reward + alpha;
            let b = cost + varsigma;
            (a / u.cycles_per_bit - 3.0 * b * u.chip_coeff * u.max_cpu_freq * u.max_cpu_freq).max(0.0)
        } else {
            0.0
        };
        let (rate, power) = self.rate_power(level);
        LevelSolution {
            level,
            alpha,
            varsigma,
            upsilon,
            feasible,
            rate,
            power,
        }
    }
}

/// For a predicate that is false at level 0 and monotone (false then true),
/// returns a bracket `(lo, hi)` around the switch with `pred(lo) == false`
/// and `pred(hi) == true`, or `None` if it never switches. Levels above
/// `saturation` all behave alike.
fn search_threshold(pred: impl Fn(f64) -> bool, saturation: Option<f64>) -> Option<(f64, f64)> {
    if pred(0.0) {
        return Some((0.0, 0.0));
    }
    let (mut lo, mut hi);
    if let Some(sat) = saturation {
        if !pred(sat) {
            return None;
        }
        hi = sat;
        lo = 0.0;
    } else {
        let mut t = 1e-9;
        if pred(t) {
            hi = t;
            lo = 0.0;
            while t > 1e-300 {
                t *= 0.25;
                if !pred(t) {
                    lo = t;
                    break;
                }
                hi = t;
            }
        } else {
            lo = t;
            loop {
                t *= 4.0;
                if !t.is_finite() {
                    return None;
                }
                if pred(t) {
                    hi = t;
                    break;
                }
                lo = t;
            }
        }
    }
    for _ in 0..400 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        let mid = if mid <= lo || mid >= hi { 0.5 * (lo + hi) } else { mid };
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some((lo, hi))
}

/// Per-iteration summary of the dual loop.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct InnerStep {
    pub weighted_sum_ce: f64,
    pub alpha: Vec<f64>,
    pub varsigma: Vec<f64>,
    pub violation: f64,
}

/// Output of the dual loop for fixed rate and power weights.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub allocation: Allocation,
    pub alpha: Vec<f64>,
    pub varsigma: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub xi: Vec<f64>,
    /// Largest relative constraint violation of the returned allocation.
    pub violation: f64,
    pub feasible: bool,
    pub converged: bool,
    pub(crate) history: Vec<InnerStep>,
}

impl InnerResult {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// Fixed-weight subproblem `max sum_k reward_k R_k - cost_k P_k` under every constraint.
pub(crate) struct InnerProblem<'a> {
    pub scenario: &'a Scenario,
    pub reward: Vec<f64>,
    pub cost: Vec<f64>,
    pub resources: Vec<Resources>,
}

struct Candidate {
    assignment: Vec<Vec<u8>>,
    responses: Vec<LevelSolution>,
    objective: f64,
    feasible: bool,
}

impl InnerProblem<'_> {
    fn respond(&self, k: usize, channels: Vec<usize>) -> LevelSolution {
        let res = self.resources[k];
        let channels = if res.offload { channels } else { Vec::new() };
        UserProblem::new(self.scenario, k, channels, res.local).solve(self.reward[k], self.cost[k])
    }

    fn indicators(&self, rate_coeff: &[f64], levels: &[f64]) -> Vec<Vec<f64>> {
        let s = self.scenario;
        let sys = &s.system;
        (0..s.num_users())
            .map(|k| {
                (0..sys.num_subchannels)
                    .map(|n| {
                        if !self.resources[k].offload {
                            return 0.0;
                        }
                        let h = s.gains[k][n];
                        let z = optimal_power(&Prices::from_level(levels[k]), sys, h).unwrap_or(0.0);
                        let prices = Prices {
                            rate: rate_coeff[k],
                            power: 1.0,
                            freq: 0.0,
                        };
                        channel_indicator(&prices, sys, z, h)
                    })
                    .collect()
            })
            .collect()
    }

    fn exact_indicators(&self, responses: &[LevelSolution]) -> Vec<Vec<f64>> {
        let rate_coeff: Vec<f64> = responses.iter().zip(&self.reward).map(|(r, w)| w + r.alpha).collect();
        let levels: Vec<f64> = responses.iter().map(|r| r.level).collect();
        self.indicators(&rate_coeff, &levels)
    }

    fn candidate(&self, assignment: Vec<Vec<u8>>) -> Candidate {
        let k_users = self.scenario.num_users();
        let responses: Vec<LevelSolution> = (0..k_users)
            .map(|k| {
                let channels = assignment[k]
                    .iter()
                    .enumerate()
                    .filter_map(|(n, &r)| (r == 1).then_some(n))
                    .collect();
                self.respond(k, channels)
            })
            .collect();
        let objective = responses
            .iter()
            .enumerate()
            .map(|(k, r)| self.reward[k] * r.rate - self.cost[k] * r.power)
            .sum();
        let feasible = responses.iter().all(|r| r.feasible);
        Candidate {
            assignment,
            responses,
            objective,
            feasible,
        }
    }

    /// Builds the allocation at the candidate's exact multipliers.
    fn materialize(&self, cand: &Candidate) -> InnerResult {
        let s = self.scenario;
        let sys = &s.system;
        let k_users = s.num_users();
        let n_sub = sys.num_subchannels;
        let mut alloc = Allocation::zeros(k_users, n_sub);
        for k in 0..k_users {
            let r = &cand.responses[k];
            let prices = Prices {
                rate: self.reward[k] + r.alpha,
                power: self.cost[k] + r.varsigma,
                freq: r.upsilon,
            };
            let level_prices = Prices::from_level(r.level);
            if self.resources[k].offload {
                for n in 0..n_sub {
                    if cand.assignment[k][n] == 1 {
                        let h = s.gains[k][n];
                        let p = optimal_power(&prices, sys, h)
                            .or_else(|_| optimal_power(&level_prices, sys, h))
                            .unwrap_or(0.0);
                        alloc.assignment[k][n] = 1;
                        alloc.power[k][n] = p;
                    }
                }
            }
            if self.resources[k].local {
                alloc.cpu_freq[k] = optimal_frequency(&prices, &s.users[k])
                    .or_else(|_| optimal_frequency(&level_prices, &s.users[k]))
                    .unwrap_or(0.0);
            }
            alloc.mode[k] = if self.resources[k].offload || !self.resources[k].local {
                MODE_OFFLOAD
            } else {
                MODE_LOCAL
            };
        }
        let h = self.exact_indicators(&cand.responses);
        let xi = (0..n_sub)
            .map(|n| (0..k_users).map(|k| h[k][n]).fold(0.0f64, f64::max))
            .collect();
        let report = ce_report(s, &alloc, OffloadingMode::Partial);
        let violation = max_relative_violation(s, &report, &alloc).max(0.0);
        InnerResult {
            allocation: alloc,
            alpha: cand.responses.iter().map(|r| r.alpha).collect(),
            varsigma: cand.responses.iter().map(|r| r.varsigma).collect(),
            upsilon: cand.responses.iter().map(|r| r.upsilon).collect(),
            xi,
            violation,
            feasible: cand.feasible,
            converged: false,
            history: Vec::new(),
        }
    }

    fn weighted_ce(&self, cand: &Candidate) -> f64 {
        cand.responses
            .iter()
            .zip(&self.scenario.users)
            .map(|(r, u)| u.weight * r.rate / r.power)
            .sum()
    }

    pub fn solve(&self, cfg: &SolverConfig) -> InnerResult {
        let s = self.scenario;
        let k_users = s.num_users();
        let n_sub = s.num_subchannels();

        // Start from each user's response as if it held every subchannel.
        let all: Vec<Vec<u8>> = vec![vec![1; n_sub]; k_users];
        let start = self.candidate(all);
        let mut alpha: Vec<f64> = start.responses.iter().map(|r| r.alpha).collect();
        let mut varsigma: Vec<f64> = start.responses.iter().map(|r| r.varsigma).collect();
        let mut last_level: Vec<f64> = start.responses.iter().map(|r| r.level).collect();

        let mut history = Vec::new();
        let mut best: Option<Candidate> = None;
        let mut converged = false;
        let mut last: Option<Candidate> = None;
        let mut prev_assignment: Option<Vec<Vec<u8>>> = None;

        for i in 0..cfg.max_inner_iters {
            let rate_coeff: Vec<f64> = (0..k_users).map(|k| self.reward[k] + alpha[k]).collect();
            let levels: Vec<f64> = (0..k_users)
                .map(|k| {
                    let b = self.cost[k] + varsigma[k];
                    if b > 0.0 {
                        rate_coeff[k] / b
                    } else {
                        last_level[k]
                    }
                })
                .collect();
            let assignment = assign_subchannels(&self.indicators(&rate_coeff, &levels));
            let cand = self.candidate(assignment);
            let consistent = assign_subchannels(&self.exact_indicators(&cand.responses)) == cand.assignment;

            let target_alpha: Vec<f64> = cand.responses.iter().map(|r| r.alpha).collect();
            let target_varsigma: Vec<f64> = cand.responses.iter().map(|r| r.varsigma).collect();
            let residual = (0..k_users)
                .map(|k| {
                    let da = (target_alpha[k] - alpha[k]).abs() / (self.reward[k] + target_alpha[k]).max(f64::MIN_POSITIVE);
                    let ds = (target_varsigma[k] - varsigma[k]).abs() / (self.cost[k] + target_varsigma[k]).max(f64::MIN_POSITIVE);
                    da.max(ds)
                })
                .fold(0.0, f64::max);
            let violation = cand
                .responses
                .iter()
                .zip(&s.users)
                .map(|(r, u)| {
                    let rate_gap = if u.min_bits_rate > 0.0 {
                        (u.min_bits_rate - r.rate) / u.min_bits_rate
                    } else {
                        0.0
                    };
                    rate_gap.max((r.power - u.max_power) / u.max_power).max(0.0)
                })
                .fold(0.0, f64::max);
            history.push(InnerStep {
                weighted_sum_ce: self.weighted_ce(&cand),
                alpha: target_alpha.clone(),
                varsigma: target_varsigma.clone(),
                violation,
            });

            let better = match &best {
                None => true,
                Some(b) => (cand.feasible, cand.objective) > (b.feasible, b.objective),
            };
            let settled = prev_assignment.as_ref() == Some(&cand.assignment) && residual < cfg.inner_tol;
            if consistent || settled {
                converged = true;
                last = Some(cand);
                break;
            }
            let step = (cfg.step0 / (1.0 + i as f64).powf(cfg.step_decay)).min(1.0);
            for k in 0..k_users {
                alpha[k] += step * (target_alpha[k] - alpha[k]);
                varsigma[k] += step * (target_varsigma[k] - varsigma[k]);
                last_level[k] = cand.responses[k].level;
            }
            prev_assignment = Some(cand.assignment.clone());
            if better {
                best = Some(cand);
            }
        }

        let chosen = if converged { last } else { best }.expect("at least one inner iteration");
        let mut out = self.materialize(&chosen);
        out.converged = converged;
        out.history = history;
        out
    }
}

/// Checks that every user can meet its minimum rate within its power cap
/// when holding every subchannel it may use.
pub(crate) fn precheck(s: &Scenario, resources: &[Resources]) -> Result<(), SolverError> {
    let n_sub = s.num_subchannels();
    for (k, res) in resources.iter().enumerate() {
        let channels = if res.offload { (0..n_sub).collect() } else { Vec::new() };
        let problem = UserProblem::new(s, k, channels, res.local);
        let sol = problem.solve(1.0, 0.0);
        if !sol.feasible {
            return Err(SolverError::InfeasibleInstance {
                user: k,
                required: s.users[k].min_bits_rate,
                achievable: sol.rate,
            });
        }
    }
    Ok(())
}

/// Runs the dual loop for fixed `(lambda, beta)` under partial offloading.
pub fn inner_dual_loop(
    s: &Scenario,
    lambda: &[f64],
    beta: &[f64],
    cfg: &SolverConfig,
) -> Result<InnerResult, SolverError> {
    cfg.validate()?;
    precheck(s, &vec![Resources::BOTH; s.num_users()])?;
    let problem = InnerProblem {
        scenario: s,
        reward: s.users.iter().zip(lambda).map(|(u, l)| l * u.weight).collect(),
        cost: lambda.iter().zip(beta).map(|(l, b)| l * b).collect(),
        resources: vec![Resources::BOTH; s.num_users()],
    };
    Ok(problem.solve(cfg))
}

/// Damped fixed-point update of `(lambda, beta)` toward `(1 / P_k, w_k R_k / P_k)`.
pub fn update_lambda_beta(
    s: &Scenario,
    allocation: &Allocation,
    mode: OffloadingMode,
    lambda: &[f64],
    beta: &[f64],
    damping: f64,
) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
    let (rates, powers) = rates_and_powers(s, allocation, mode);
    let mut new_lambda = Vec::with_capacity(lambda.len());
    let mut new_beta = Vec::with_capacity(beta.len());
    for k in 0..s.num_users() {
        let p = powers[k];
        if !(p > 0.0) {
            return Err(SolverError::ZeroPower(k));
        }
        new_lambda.push((1.0 - damping) * lambda[k] + damping / p);
        new_beta.push((1.0 - damping) * beta[k] + damping * s.users[k].weight * rates[k] / p);
    }
    Ok((new_lambda, new_beta))
}

/// `(max_k |w R - beta P| / (w R), max_k |lambda P - 1|)`; users with zero rate are skipped in the first term.
pub fn fixed_point_residuals(s: &Scenario, rates: &[f64], powers: &[f64], lambda: &[f64], beta: &[f64]) -> (f64, f64) {
    let mut rate_res: f64 = 0.0;
    let mut power_res: f64 = 0.0;
    for k in 0..s.num_users() {
        let wr = s.users[k].weight * rates[k];
        if wr > 0.0 {
            rate_res = rate_res.max((wr - beta[k] * powers[k]).abs() / wr);
        }
        power_res = power_res.max((lambda[k] * powers[k] - 1.0).abs());
    }
    (rate_res, power_res)
}

fn primal_change(s: &Scenario, a: &Allocation, b: &Allocation) -> f64 {
    if a.assignment != b.assignment || a.mode != b.mode {
        return 1.0;
    }
    let mut change: f64 = 0.0;
    for k in 0..s.num_users() {
        let cap = s.users[k].max_power;
        for n in 0..s.num_subchannels() {
            let (x, y) = (a.power[k][n], b.power[k][n]);
            change = change.max((x - y).abs() / x.abs().max(y.abs()).max(1e-12 * cap));
        }
        let (x, y) = (a.cpu_freq[k], b.cpu_freq[k]);
        let floor = 1e-12 * s.users[k].max_cpu_freq.max(1.0);
        change = change.max((x - y).abs() / x.abs().max(y.abs()).max(floor));
    }
    change
}

/// Assembles the dual state for the parametric pair and the inner multipliers.
pub(crate) fn compose_duals(
    mode: OffloadingMode,
    lambda: &[f64],
    beta: &[f64],
    alpha: &[f64],
    varsigma: &[f64],
    upsilon: &[f64],
    xi: &[f64],
) -> DualState {
    let mut d = DualState::zeros(lambda.len(), xi.len());
    d.upsilon = upsilon.to_vec();
    d.xi = xi.to_vec();
    match mode {
        OffloadingMode::Partial => {
            d.lambda = lambda.to_vec();
            d.beta = beta.to_vec();
            d.alpha = alpha.to_vec();
            d.varsigma = varsigma.to_vec();
        }
        OffloadingMode::Binary => {
            d.psi = lambda.to_vec();
            d.phi = beta.to_vec();
            d.vartheta = alpha.to_vec();
            d.chi = varsigma.to_vec();
        }
    }
    d
}

/// How the final local search may change a user's resources.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Refinement {
    /// Resources stay as given.
    Fixed(Vec<Resources>),
    /// Each user either offloads or computes locally (binary offloading).
    Modes,
}

/// Best single-user outcome on a fixed channel set: `(1 / P, w R / P)` at the
/// user's CE-optimal point, found by the single-ratio parametric iteration.
/// `None` when the user's constraints cannot be met.
pub(crate) fn user_fixed_point(s: &Scenario, k: usize, channels: &[usize], res: Resources) -> Option<(f64, f64)> {
    let channels = if res.offload { channels.to_vec() } else { Vec::new() };
    let problem = UserProblem::new(s, k, channels, res.local);
    let w = s.users[k].weight;
    let mut beta: f64 = 0.0;
    for _ in 0..200 {
        let sol = problem.solve(w, beta);
        if !sol.feasible {
            return None;
        }
        let next = w * sol.rate / sol.power;
        if next <= beta * (1.0 + 1e-14) {
            return Some((1.0 / sol.power, next));
        }
        beta = next;
    }
    let sol = problem.solve(w, beta);
    Some((1.0 / sol.power, w * sol.rate / sol.power))
}

/// Subchannel owners and per-user resources explored by the local search.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    owner: Vec<Option<usize>>,
    resources: Vec<Resources>,
}

impl Layout {
    fn from_allocation(a: &Allocation, resources: Vec<Resources>) -> Self {
        let n_sub = a.assignment.first().map_or(0, Vec::len);
        let owner = (0..n_sub)
            .map(|n| (0..a.assignment.len()).find(|&k| a.assignment[k][n] == 1 && resources[k].offload))
            .collect();
        Self { owner, resources }
    }

    fn channels(&self, k: usize) -> Vec<usize> {
        (0..self.owner.len()).filter(|&n| self.owner[n] == Some(k)).collect()
    }

    fn assignment(&self, k_users: usize) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.owner.len()]; k_users];
        for (n, o) in self.owner.iter().enumerate() {
            if let Some(k) = o {
                a[*k][n] = 1;
            }
        }
        a
    }
}

/// `(user, channels, offload, local)`.
type PointKey = (usize, Vec<usize>, bool, bool);

struct Refiner<'a> {
    scenario: &'a Scenario,
    cache: std::collections::HashMap<PointKey, Option<(f64, f64)>>,
}

impl Refiner<'_> {
    fn point(&mut self, k: usize, channels: Vec<usize>, res: Resources) -> Option<(f64, f64)> {
        let channels = if res.offload { channels } else { Vec::new() };
        let key = (k, channels, res.offload, res.local);
        if let Some(v) = self.cache.get(&key) {
            return *v;
        }
        let v = user_fixed_point(self.scenario, k, &key.1, res);
        self.cache.insert(key, v);
        v
    }

    fn value(&mut self, layout: &Layout, k: usize) -> f64 {
        self.point(k, layout.channels(k), layout.resources[k]).map_or(f64::NEG_INFINITY, |p| p.1)
    }

    fn total(&mut self, layout: &Layout) -> f64 {
        (0..layout.resources.len()).map(|k| self.value(layout, k)).sum()
    }

    /// Candidate layouts one move away: reassign one subchannel, swap two
    /// subchannels between owners, or (with modes) send a user local.
    fn neighbours(layout: &Layout, modes: bool) -> Vec<Layout> {
        let k_users = layout.resources.len();
        let n_sub = layout.owner.len();
        let mut out = Vec::new();
        for n in 0..n_sub {
            for o in (0..k_users).map(Some).chain([None]) {
                if o == layout.owner[n] {
                    continue;
                }
                let mut next = layout.clone();
                if let Some(j) = o {
                    if !next.resources[j].offload {
                        if !modes {
                            continue;
                        }
                        next.resources[j] = Resources::OFFLOAD;
                    }
                }
                next.owner[n] = o;
                out.push(next);
            }
        }
        for n1 in 0..n_sub {
            for n2 in n1 + 1..n_sub {
                if let (Some(a), Some(b)) = (layout.owner[n1], layout.owner[n2]) {
                    if a != b {
                        let mut next = layout.clone();
                        next.owner.swap(n1, n2);
                        out.push(next);
                    }
                }
            }
        }
        if modes {
            for k in 0..k_users {
                if layout.resources[k].offload {
                    let mut next = layout.clone();
                    next.resources[k] = Resources::LOCAL;
                    next.owner.iter_mut().filter(|o| **o == Some(k)).for_each(|o| *o = None);
                    out.push(next);
                }
            }
        }
        out
    }

    /// Best-improvement descent from `layout`.
    fn descend(&mut self, mut layout: Layout, modes: bool) -> Layout {
        let mut current = self.total(&layout);
        loop {
            let mut best: Option<(f64, Layout)> = None;
            for cand in Self::neighbours(&layout, modes) {
                let v = self.total(&cand);
                let bar = best.as_ref().map_or(current, |b| b.0);
                let improves = if bar.is_finite() { v > bar + 1e-12 * bar.abs() } else { v > bar };
                if improves {
                    best = Some((v, cand));
                }
            }
            match best {
                Some((v, next)) => {
                    current = v;
                    layout = next;
                }
                None => return layout,
            }
        }
    }
}

/// Local search from `start`, then every user at its own CE fixed point.
/// Returns the final `(lambda, beta)` and the dual-loop result at them.
fn refine(
    s: &Scenario,
    start: &Allocation,
    refinement: &Refinement,
    cfg: &SolverConfig,
) -> Option<(Vec<f64>, Vec<f64>, InnerResult)> {
    let k_users = s.num_users();
    let (resources, modes) = match refinement {
        Refinement::Fixed(r) => (r.clone(), false),
        Refinement::Modes => (
            start
                .mode
                .iter()
                .map(|&m| if m == MODE_LOCAL { Resources::LOCAL } else { Resources::OFFLOAD })
                .collect(),
            true,
        ),
    };
    let mut refiner = Refiner {
        scenario: s,
        cache: std::collections::HashMap::new(),
    };
    let layout = Layout::from_allocation(start, resources);
    let layout = if cfg.refine { refiner.descend(layout, modes) } else { layout };

    let mut lambda = Vec::with_capacity(k_users);
    let mut beta = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let (l, b) = refiner.point(k, layout.channels(k), layout.resources[k])?;
        lambda.push(l);
        beta.push(b);
    }
    let problem = InnerProblem {
        scenario: s,
        reward: (0..k_users).map(|k| lambda[k] * s.users[k].weight).collect(),
        cost: (0..k_users).map(|k| lambda[k] * beta[k]).collect(),
        resources: layout.resources.clone(),
    };
    let cand = problem.candidate(layout.assignment(k_users));
    let mut res = problem.materialize(&cand);
    res.converged = true;
    if modes {
        res.allocation.mode = layout
            .resources
            .iter()
            .map(|r| if r.offload { MODE_OFFLOAD } else { MODE_LOCAL })
            .collect();
    }
    Some((lambda, beta, res))
}

/// The parametric outer loop shared by the proposed solvers and the
/// offloading-only baseline.
///
/// The loop stops when the primal variables settle and the fixed-point
/// residuals vanish, or early when the subchannel assignment starts to
/// revisit earlier assignments (the parametric pair then cycles). With
/// `cfg.refine` the last outer iteration is a local search over subchannel
/// owners that places every user exactly at its own CE fixed point.
pub(crate) fn parametric_outer(
    s: &Scenario,
    cfg: &SolverConfig,
    mode: OffloadingMode,
    refinement: Refinement,
    mut inner: impl FnMut(&[f64], &[f64]) -> InnerResult,
) -> Result<PartialSolution, SolverError> {
    let k_users = s.num_users();
    let mut lambda = vec![1.0 / s.system.circuit_power; k_users];
    let mut beta = vec![0.0; k_users];
    let mut trace = SolveTrace::default();
    let mut prev: Option<Allocation> = None;
    let mut seen: Vec<(Vec<Vec<u8>>, Vec<u8>)> = Vec::new();
    let mut best: Option<(bool, f64, PartialSolution)> = None;
    let loop_iters = if cfg.refine { cfg.max_outer_iters.saturating_sub(1).max(1) } else { cfg.max_outer_iters };
    let mut it = 0;

    let push_records = |trace: &mut SolveTrace, it: usize, lambda: &[f64], beta: &[f64], res: &InnerResult, report: &CeReport, fixed_point: (f64, f64)| {
        let n_inner = res.history.len().max(1);
        for j in 0..n_inner {
            let last = j + 1 == n_inner;
            let (ce, alpha, varsigma, violation) = match res.history.get(j) {
                Some(step) if !last => (step.weighted_sum_ce, step.alpha.as_slice(), step.varsigma.as_slice(), step.violation),
                _ => (
                    report.weighted_sum_ce,
                    res.alpha.as_slice(),
                    res.varsigma.as_slice(),
                    max_relative_violation(s, report, &res.allocation).max(0.0),
                ),
            };
            trace.push(IterationRecord {
                outer_iter: it,
                inner_iter: j,
                weighted_sum_ce: ce,
                duals: compose_duals(mode, lambda, beta, alpha, varsigma, &res.upsilon, &res.xi),
                lemma1_residual: fixed_point,
                constraint_violations: violation,
            });
        }
    };

    while it < loop_iters {
        let reward: Vec<f64> = (0..k_users).map(|k| lambda[k] * s.users[k].weight).collect();
        let cost: Vec<f64> = (0..k_users).map(|k| lambda[k] * beta[k]).collect();
        let res = inner(&reward, &cost);
        let report = ce_report(s, &res.allocation, mode);
        let fixed_point = fixed_point_residuals(s, &report.per_user_rate, &report.per_user_power, &lambda, &beta);
        let change = prev.as_ref().map_or(f64::INFINITY, |p| primal_change(s, p, &res.allocation));
        push_records(&mut trace, it, &lambda, &beta, &res, &report, fixed_point);
        it += 1;

        let duals = compose_duals(mode, &lambda, &beta, &res.alpha, &res.varsigma, &res.upsilon, &res.xi);
        let feasible = report.feasible.all();
        let converged = change < cfg.outer_tol && fixed_point.0 < cfg.outer_tol && fixed_point.1 < cfg.outer_tol;
        let ce = report.weighted_sum_ce;
        let solution = PartialSolution {
            mode,
            allocation: res.allocation.clone(),
            report,
            duals,
            trace: SolveTrace::default(),
            converged,
        };
        if converged {
            best = Some((feasible, ce, solution));
            break;
        }
        if best.as_ref().is_none_or(|(bf, bce, _)| (feasible, ce) > (*bf, *bce)) {
            best = Some((feasible, ce, solution));
        }
        let key = (res.allocation.assignment.clone(), res.allocation.mode.clone());
        let revisits = seen.len() >= 2 && seen[..seen.len() - 1].contains(&key) && seen.last() != Some(&key);
        seen.push(key);
        if revisits && cfg.refine {
            break;
        }
        let (l, b) = update_lambda_beta(s, &res.allocation, mode, &lambda, &beta, cfg.damping)?;
        lambda = l;
        beta = b;
        prev = Some(res.allocation);
    }
    let (_, _, mut sol) = best.expect("at least one outer iteration");
    if !cfg.refine {
        sol.trace = trace;
        return Ok(sol);
    }

    // Final iteration: local search and exact per-user fixed points.
    let Some((lambda, beta, res)) = refine(s, &sol.allocation, &refinement, cfg) else {
        sol.trace = trace;
        sol.converged = false;
        return Ok(sol);
    };
    let report = ce_report(s, &res.allocation, mode);
    if !report.feasible.all() && sol.report.feasible.all() {
        sol.trace = trace;
        sol.converged = false;
        return Ok(sol);
    }
    let fixed_point = fixed_point_residuals(s, &report.per_user_rate, &report.per_user_power, &lambda, &beta);
    push_records(&mut trace, it, &lambda, &beta, &res, &report, fixed_point);
    Ok(PartialSolution {
        mode,
        duals: compose_duals(mode, &lambda, &beta, &res.alpha, &res.varsigma, &res.upsilon, &res.xi),
        allocation: res.allocation,
        converged: fixed_point.0 < cfg.outer_tol && fixed_point.1 < cfg.outer_tol,
        report,
        trace,
    })
}

/// Maximizes the weighted-sum CE under partial offloading.
pub fn solve_partial(s: &Scenario, cfg: &SolverConfig) -> Result<PartialSolution, SolverError> {
    cfg.validate()?;
    let s = validate_scenario(s.clone())?;
    let resources = vec![Resources::BOTH; s.num_users()];
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
