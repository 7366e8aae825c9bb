//! Domain types shared by every solver: system constants, per-user
//! parameters, allocations, dual variables, reports and traces.
//!
//! All quantities are SI (watts, hertz, seconds, bits). Unit conversion
//! happens when configuration files are parsed, never here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// System-wide constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Bandwidth of one subchannel, Hz.
    pub bandwidth_per_subchannel: f64,
    /// Block duration, seconds.
    pub block_duration: f64,
    pub num_subchannels: usize,
    /// Noise power per subchannel, W.
    pub noise_power: f64,
    /// Power amplifier coefficient (dimensionless).
    pub amplifier_coeff: f64,
    /// Constant circuit power, W.
    pub circuit_power: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            bandwidth_per_subchannel: 2.0e6,
            block_duration: 1.0,
            num_subchannels: 4,
            noise_power: 1.0e-9,
            amplifier_coeff: 3.0,
            circuit_power: 0.05,
        }
    }
}

/// Per-user parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserParams {
    pub weight: f64,
    /// CPU cycles needed per bit.
    pub cycles_per_bit: f64,
    /// Effective switched capacitance of the chip; local power is `chip_coeff * f^3`.
    pub chip_coeff: f64,
    /// Maximum CPU frequency, cycles/s.
    pub max_cpu_freq: f64,
    /// Minimum computed bits per second.
    pub min_bits_rate: f64,
    /// Maximum total power, W.
    pub max_power: f64,
}

impl Default for UserParams {
    fn default() -> Self {
        Self {
            weight: 1.0,
            cycles_per_bit: 1.0e3,
            chip_coeff: 1.0e-24,
            max_cpu_freq: 1.0e8,
            min_bits_rate: 5.0e4,
            max_power: 1.0,
        }
    }
}

/// One problem instance: constants, users and the K x N channel power gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub system: SystemParams,
    pub users: Vec<UserParams>,
    /// `gains[k][n]` is the power gain of user `k` on subchannel `n`.
    pub gains: Vec<Vec<f64>>,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_subchannels(&self) -> usize {
        self.system.num_subchannels
    }

    /// Copy of the scenario with every user's power cap replaced.
    pub fn with_max_power(&self, max_power: f64) -> Self {
        let mut s = self.clone();
        s.users.iter_mut().for_each(|u| u.max_power = max_power);
        s
    }

    /// Copy of the scenario with every user's minimum rate replaced.
    pub fn with_min_bits_rate(&self, rate: f64) -> Self {
        let mut s = self.clone();
        s.users.iter_mut().for_each(|u| u.min_bits_rate = rate);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum ModelError {
    #[error("{field} must be strictly positive (got {value})")]
    NonPositiveParameter { field: String, value: f64 },
    #[error("{field}: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("gain matrix is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    GainMatrixShapeMismatch {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("scenario has no users")]
    EmptyUserSet,
}

/// Every invariant violation found in a scenario.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid scenario: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationErrors(pub Vec<ModelError>);

fn check_positive(errors: &mut Vec<ModelError>, field: impl Into<String>, value: f64) {
    if !(value > 0.0 && value.is_finite()) {
        errors.push(ModelError::NonPositiveParameter {
            field: field.into(),
            value,
        });
    }
}

/// Checks every type invariant and reports all violations, not just the first.
pub fn validate_scenario(s: Scenario) -> Result<Scenario, ValidationErrors> {
    let mut errors = Vec::new();
    let sys = &s.system;
    check_positive(&mut errors, "system.bandwidth_per_subchannel", sys.bandwidth_per_subchannel);
    check_positive(&mut errors, "system.block_duration", sys.block_duration);
    check_positive(&mut errors, "system.noise_power", sys.noise_power);
    check_positive(&mut errors, "system.amplifier_coeff", sys.amplifier_coeff);
    check_positive(&mut errors, "system.circuit_power", sys.circuit_power);
    if sys.num_subchannels == 0 {
        errors.push(ModelError::NonPositiveParameter {
            field: "system.num_subchannels".into(),
            value: 0.0,
        });
    }

    if s.users.is_empty() {
        errors.push(ModelError::EmptyUserSet);
    }
    for (k, u) in s.users.iter().enumerate() {
        check_positive(&mut errors, format!("users[{k}].weight"), u.weight);
        check_positive(&mut errors, format!("users[{k}].chip_coeff"), u.chip_coeff);
        if !(u.cycles_per_bit >= 1.0 && u.cycles_per_bit.is_finite()) {
            errors.push(ModelError::InvalidParameter {
                field: format!("users[{k}].cycles_per_bit"),
                reason: format!("must be at least 1 (got {})", u.cycles_per_bit),
            });
        }
        if !(u.max_cpu_freq >= 0.0 && u.max_cpu_freq.is_finite()) {
            errors.push(ModelError::InvalidParameter {
                field: format!("users[{k}].max_cpu_freq"),
                reason: format!("must be non-negative (got {})", u.max_cpu_freq),
            });
        }
        if !(u.min_bits_rate >= 0.0 && u.min_bits_rate.is_finite()) {
            errors.push(ModelError::InvalidParameter {
                field: format!("users[{k}].min_bits_rate"),
                reason: format!("must be non-negative (got {})", u.min_bits_rate),
            });
        }
        if !(u.max_power > sys.circuit_power && u.max_power.is_finite()) {
            errors.push(ModelError::InvalidParameter {
                field: format!("users[{k}].max_power"),
                reason: format!(
                    "must exceed circuit power {} (got {})",
                    sys.circuit_power, u.max_power
                ),
            });
        }
    }

    let rows = s.gains.len();
    let shape_ok = rows == s.users.len() && s.gains.iter().all(|r| r.len() == sys.num_subchannels);
    if !shape_ok {
        errors.push(ModelError::GainMatrixShapeMismatch {
            rows,
            cols: s.gains.first().map_or(0, Vec::len),
            expected_rows: s.users.len(),
            expected_cols: sys.num_subchannels,
        });
    }
    for (k, row) in s.gains.iter().enumerate() {
        for (n, &g) in row.iter().enumerate() {
            check_positive(&mut errors, format!("gains[{k}][{n}]"), g);
        }
    }

    if errors.is_empty() {
        Ok(s)
    } else {
        Err(ValidationErrors(errors))
    }
}

/// Offloading model under which an allocation is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffloadingMode {
    Partial,
    Binary,
}

impl std::fmt::Display for OffloadingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OffloadingMode::Partial => f.write_str("partial"),
            OffloadingMode::Binary => f.write_str("binary"),
        }
    }
}

/// Mode flag value for a user that offloads its whole task.
pub const MODE_OFFLOAD: u8 = 1;
/// Mode flag value for a user that computes locally only.
pub const MODE_LOCAL: u8 = 0;

/// Subchannel assignment, transmit powers, CPU frequencies and mode flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// `assignment[k][n] == 1` iff subchannel `n` is held by user `k`.
    pub assignment: Vec<Vec<u8>>,
    /// Transmit power of user `k` on subchannel `n`, W.
    pub power: Vec<Vec<f64>>,
    /// Local CPU frequency per user, cycles/s.
    pub cpu_freq: Vec<f64>,
    /// Per-user mode flag (1 = offload, 0 = local); ignored in partial mode.
    pub mode: Vec<u8>,
}

impl Allocation {
    /// Nothing assigned, no power, CPUs idle.
    pub fn zeros(num_users: usize, num_subchannels: usize) -> Self {
        Self {
            assignment: vec![vec![0; num_subchannels]; num_users],
            power: vec![vec![0.0; num_subchannels]; num_users],
            cpu_freq: vec![0.0; num_users],
            mode: vec![MODE_OFFLOAD; num_users],
        }
    }

    /// Subchannels held by user `k`.
    pub fn channels_of(&self, k: usize) -> Vec<usize> {
        self.assignment[k]
            .iter()
            .enumerate()
            .filter_map(|(n, &r)| (r == 1).then_some(n))
            .collect()
    }
}

/// Lagrange multipliers and parametric variables.
///
/// `lambda`/`beta` (and their binary-mode counterparts `psi`/`phi`) are the
/// parametric pair of the sum-of-ratios transform. `alpha` prices the
/// minimum-rate constraint, `varsigma` the power cap, `upsilon` the CPU
/// frequency cap and `xi` subchannel exclusivity. `vartheta`/`chi` are the
/// rate and power multipliers in binary mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub alpha: Vec<f64>,
    pub varsigma: Vec<f64>,
    pub xi: Vec<f64>,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub vartheta: Vec<f64>,
    pub chi: Vec<f64>,
}

impl DualState {
    pub fn zeros(num_users: usize, num_subchannels: usize) -> Self {
        let z = vec![0.0; num_users];
        Self {
            lambda: z.clone(),
            beta: z.clone(),
            upsilon: z.clone(),
            alpha: z.clone(),
            varsigma: z.clone(),
            xi: vec![0.0; num_subchannels],
            psi: z.clone(),
            phi: z.clone(),
            vartheta: z.clone(),
            chi: z,
        }
    }

    /// True when every multiplier is non-negative.
    pub fn is_nonnegative(&self) -> bool {
        [
            &self.lambda,
            &self.beta,
            &self.upsilon,
            &self.alpha,
            &self.varsigma,
            &self.xi,
            &self.psi,
            &self.phi,
            &self.vartheta,
            &self.chi,
        ]
        .iter()
        .all(|v| v.iter().all(|&x| x >= 0.0))
    }
}

/// Which constraint groups an allocation satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feasibility {
    /// Minimum computed bits per user.
    pub min_rate: bool,
    /// Power cap per user.
    pub max_power: bool,
    /// CPU frequency range.
    pub cpu_freq: bool,
    /// At most one user per subchannel, power only on held subchannels.
    pub exclusivity: bool,
    /// Assignment entries are 0 or 1.
    pub integrality: bool,
    /// Binary mode only: flags are 0/1 and each user either offloads or computes locally.
    pub mode: bool,
}

impl Feasibility {
    pub fn all(&self) -> bool {
        self.min_rate
            && self.max_power
            && self.cpu_freq
            && self.exclusivity
            && self.integrality
            && self.mode
    }
}

/// Rates, powers and computation efficiency of an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeReport {
    /// Computed bits per second, per user.
    pub per_user_rate: Vec<f64>,
    /// Consumed power, W, per user.
    pub per_user_power: Vec<f64>,
    /// Bits per Joule per user.
    pub per_user_ce: Vec<f64>,
    /// Computed bits over one block (rate times block duration).
    pub per_user_bits: Vec<f64>,
    pub weighted_sum_ce: f64,
    pub feasible: Feasibility,
}

impl CeReport {
    pub fn sum_rate(&self) -> f64 {
        self.per_user_rate.iter().sum()
    }

    pub fn sum_power(&self) -> f64 {
        self.per_user_power.iter().sum()
    }
}

/// One iteration of a solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub outer_iter: usize,
    pub inner_iter: usize,
    pub weighted_sum_ce: f64,
    pub duals: DualState,
    /// Fixed-point residuals `(max_k |w R - beta P| / (w R), max_k |lambda P - 1|)`.
    pub lemma1_residual: (f64, f64),
    /// Largest constraint violation, relative to the constraint's own scale.
    pub constraint_violations: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<IterationRecord>,
}

impl SolveTrace {
    /// Appends a record; `(outer_iter, inner_iter)` must strictly increase.
    pub fn push(&mut self, record: IterationRecord) {
        if let Some(last) = self.records.last() {
            debug_assert!(
                (record.outer_iter, record.inner_iter) > (last.outer_iter, last.inner_iter),
                "trace indices must strictly increase"
            );
        }
        self.records.push(record);
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| (w[0].outer_iter, w[0].inner_iter) < (w[1].outer_iter, w[1].inner_iter))
    }

    /// Number of distinct outer iterations recorded.
    pub fn outer_iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.outer_iter + 1)
    }

    /// Last record of each outer iteration.
    pub fn outer_records(&self) -> Vec<&IterationRecord> {
        let mut out: Vec<&IterationRecord> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some(last) if last.outer_iter == r.outer_iter => *last = r,
                _ => out.push(r),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn reference_scenario() -> Scenario {
        Scenario {
            system: SystemParams::default(),
            users: vec![UserParams::default(); 2],
            gains: vec![vec![1e-4; 4]; 2],
            rng_seed: 0,
        }
    }

    #[test]
    fn default_scenario_is_valid() {
        let s = reference_scenario();
        assert_eq!(s.num_users(), 2);
        assert_eq!(s.num_subchannels(), 4);
        assert_eq!(validate_scenario(s.clone()), Ok(s));
    }

    #[test]
    fn gain_shape_mismatch() {
        let mut s = reference_scenario();
        s.gains = vec![vec![1e-4; 3]; 2];
        let errs = validate_scenario(s).unwrap_err().0;
        assert!(matches!(errs[..], [ModelError::GainMatrixShapeMismatch { .. }]));
    }

    #[test]
    fn zero_noise_is_rejected() {
        let mut s = reference_scenario();
        s.system.noise_power = 0.0;
        let errs = validate_scenario(s).unwrap_err().0;
        assert_eq!(
            errs,
            vec![ModelError::NonPositiveParameter {
                field: "system.noise_power".into(),
                value: 0.0
            }]
        );
    }

    #[test]
    fn empty_user_set() {
        let mut s = reference_scenario();
        s.users.clear();
        s.gains.clear();
        let errs = validate_scenario(s).unwrap_err().0;
        assert!(errs.contains(&ModelError::EmptyUserSet));
    }

    #[test]
    fn every_violation_is_reported() {
        let mut s = reference_scenario();
        s.system.noise_power = -1.0;
        s.system.amplifier_coeff = 0.0;
        s.users[0].weight = 0.0;
        s.users[1].cycles_per_bit = 0.5;
        s.users[1].max_power = 0.01;
        s.gains[1][2] = 0.0;
        let errs = validate_scenario(s).unwrap_err().0;
        assert_eq!(errs.len(), 6);
    }

    #[test]
    fn validation_is_idempotent() {
        let s = reference_scenario();
        let once = validate_scenario(s).unwrap();
        let twice = validate_scenario(once.clone()).unwrap();
        assert_eq!(once, twice);

        let mut bad = reference_scenario();
        bad.system.circuit_power = 0.0;
        assert_eq!(validate_scenario(bad.clone()), validate_scenario(bad));
    }

    #[test]
    fn outer_records_keep_last_inner() {
        let duals = DualState::zeros(1, 1);
        let mut trace = SolveTrace::default();
        for (o, i) in [(0, 0), (0, 1), (1, 0), (2, 0), (2, 1), (2, 2)] {
            trace.push(IterationRecord {
                outer_iter: o,
                inner_iter: i,
                weighted_sum_ce: (o * 10 + i) as f64,
                duals: duals.clone(),
                lemma1_residual: (0.0, 0.0),
                constraint_violations: 0.0,
            });
        }
        assert!(trace.is_strictly_increasing());
        assert_eq!(trace.outer_iterations(), 3);
        let ce: Vec<f64> = trace.outer_records().iter().map(|r| r.weighted_sum_ce).collect();
        assert_eq!(ce, vec![1.0, 10.0, 22.0]);
    }
}
