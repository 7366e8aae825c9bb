//! Parameter sweeps over the per-user power cap or minimum rate.
//!
//! CSV columns, in order:
//!
//! | column            | meaning                                              |
//! |-------------------|------------------------------------------------------|
//! | `param`           | `pth` or `rth`                                       |
//! | `value`           | swept value (W or bit/s), applied to every user      |
//! | `scheme`          | `proposed-partial`, `proposed-binary`, `offload-only`, `local-only`, `cb-max`, `ec-min` |
//! | `status`          | `ok`, `not-converged` or `infeasible`                |
//! | `weighted_sum_ce` | bit/J                                                |
//! | `sum_rate`        | bit/s                                                |
//! | `sum_power`       | W                                                    |
//! | `converged`       | `true` / `false`                                     |
//! | `iters`           | outer iterations                                     |
//!
//! Floats carry 12 significant digits; infeasible rows leave the numeric
//! columns empty.

use rayon::prelude::*;

use crate::baselines::{solve_cb_max, solve_scheme, Scheme};
use crate::model::{OffloadingMode, Scenario};
use crate::solver_partial::{PartialSolution, SolverConfig, SolverError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    Pth,
    Rth,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Pth => "pth",
            SweepParam::Rth => "rth",
        }
    }

    pub fn apply(self, s: &Scenario, value: f64) -> Scenario {
        match self {
            SweepParam::Pth => s.with_max_power(value),
            SweepParam::Rth => s.with_min_bits_rate(value),
        }
    }
}

pub const HEADER: &str = "param,value,scheme,status,weighted_sum_ce,sum_rate,sum_power,converged,iters";

/// One curve of a sweep: a scheme run under a mode, with its CSV label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Curve {
    pub scheme: Scheme,
    pub mode: OffloadingMode,
    pub label: &'static str,
}

/// Curves for `--scheme`; `mode` is the mode of the CB/EC baselines and,
/// unless every scheme is requested, of the proposed scheme.
pub fn curves(scheme: Option<Scheme>, mode: OffloadingMode) -> Vec<Curve> {
    let proposed = |m| Curve {
        scheme: Scheme::Proposed,
        mode: m,
        label: match m {
            OffloadingMode::Partial => "proposed-partial",
            OffloadingMode::Binary => "proposed-binary",
        },
    };
    let baseline = |scheme, label| Curve { scheme, mode, label };
    let all = [
        baseline(Scheme::Offload, "offload-only"),
        baseline(Scheme::Local, "local-only"),
        baseline(Scheme::Cbmax, "cb-max"),
        baseline(Scheme::Ecmin, "ec-min"),
    ];
    match scheme {
        None => {
            let mut v = vec![proposed(OffloadingMode::Partial), proposed(OffloadingMode::Binary)];
            v.extend(all);
            v
        }
        Some(Scheme::Proposed) => vec![proposed(mode)],
        Some(s) => all.into_iter().filter(|c| c.scheme == s).collect(),
    }
}

/// Evenly spaced sweep points including both ends.
pub fn points(from: f64, to: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| if i + 1 == steps { to } else { from + (to - from) * (i as f64 / (steps - 1) as f64) })
        .collect()
}

/// Largest common minimum rate worth sweeping: the smallest per-user rate of
/// the CB-max allocation with no rate requirement.
pub fn rate_boundary(s: &Scenario, cfg: &SolverConfig) -> Result<f64, SolverError> {
    let sol = solve_cb_max(&s.with_min_bits_rate(0.0), cfg)?;
    Ok(sol.report.per_user_rate.iter().cloned().fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub label: &'static str,
    pub result: Result<PartialSolution, SolverError>,
}

fn fmt_f(x: f64) -> String {
    format!("{x:.11e}")
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let head = format!("{},{},{}", self.param.name(), fmt_f(self.value), self.label);
        match &self.result {
            Ok(sol) => format!(
                "{head},{},{},{},{},{},{}",
                if sol.converged { "ok" } else { "not-converged" },
                fmt_f(sol.report.weighted_sum_ce),
                fmt_f(sol.report.sum_rate()),
                fmt_f(sol.report.sum_power()),
                sol.converged,
                sol.outer_iterations(),
            ),
            Err(SolverError::InfeasibleInstance { .. }) => format!("{head},infeasible,,,,false,0"),
            Err(_) => format!("{head},error,,,,false,0"),
        }
    }
}

/// Runs every (point, curve) pair in parallel; rows come back in sweep order.
pub fn run_sweep(s: &Scenario, cfg: &SolverConfig, param: SweepParam, values: &[f64], curves: &[Curve]) -> Vec<SweepRow> {
    let jobs: Vec<(f64, Curve)> = values.iter().flat_map(|&v| curves.iter().map(move |&c| (v, c))).collect();
    jobs.into_par_iter()
        .map(|(value, curve)| {
            let scenario = param.apply(s, value);
            SweepRow {
                param,
                value,
                label: curve.label,
                result: solve_scheme(&scenario, cfg, curve.scheme, curve.mode),
            }
        })
        .collect()
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_points() {
        assert_eq!(points(0.1, 5.0, 2), vec![0.1, 5.0]);
        let p = points(0.0, 1.0, 5);
        assert_eq!(p, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn curve_selection() {
        assert_eq!(curves(None, OffloadingMode::Partial).len(), 6);
        let c = curves(Some(Scheme::Proposed), OffloadingMode::Binary);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].label, "proposed-binary");
        let c = curves(Some(Scheme::Cbmax), OffloadingMode::Binary);
        assert_eq!((c[0].label, c[0].mode), ("cb-max", OffloadingMode::Binary));
    }

    #[test]
    fn float_format_has_twelve_digits() {
        assert_eq!(fmt_f(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(fmt_f(2e6), "2.00000000000e6");
    }
}
