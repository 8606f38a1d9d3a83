//! Side-by-side comparison of fast inference against the brute-force oracles.

use serde::Serialize;

use crate::error::Result;
use crate::hmm::posterior_marginals;
use crate::kalman::{kalman_filter, moments_from, rts_smoother};
use crate::linalg::max_abs_diff;
use crate::model::{HmmParams, InputSequence, LgssmParams, ObservationSequence};
use crate::oracle::{hmm_enumerate, lgssm_exact_joint};

/// Default pass threshold on every reported deviation.
pub const CHECK_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct Deviation {
    pub quantity: String,
    pub max_abs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub deviations: Vec<Deviation>,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.deviations
            .iter()
            .all(|d| d.max_abs.is_finite() && d.max_abs <= self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.deviations.iter().map(|d| d.max_abs).fold(0.0, f64::max)
    }

    fn push(&mut self, quantity: &str, max_abs: f64) {
        self.deviations.push(Deviation {
            quantity: quantity.to_string(),
            max_abs,
        });
    }
}

pub fn check_hmm(params: &HmmParams, obs: &ObservationSequence, tolerance: f64) -> Result<CheckReport> {
    let oracle = hmm_enumerate(params, obs)?;
    let fast = posterior_marginals(params, obs)?;
    let mut report = CheckReport {
        deviations: Vec::new(),
        tolerance,
    };
    let gamma = fast
        .gamma
        .iter()
        .zip(&oracle.marginals)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    report.push("gamma", gamma);
    let xi = fast
        .xi
        .iter()
        .zip(&oracle.pairwise)
        .map(|(a, b)| max_abs_diff(a, b))
        .fold(0.0, f64::max);
    report.push("xi", xi);
    report.push("log_evidence", (fast.log_likelihood - oracle.log_evidence).abs());
    Ok(report)
}

pub fn check_lgssm(
    params: &LgssmParams,
    obs: &ObservationSequence,
    inputs: &InputSequence,
    tolerance: f64,
) -> Result<CheckReport> {
    let joint = lgssm_exact_joint(params, inputs, obs.len())?;
    let exact = joint.condition(obs)?;
    let filter = kalman_filter(params, obs, inputs)?;
    let smoother = rts_smoother(params, &filter)?;
    let moments = moments_from(&filter, &smoother);
    let mut report = CheckReport {
        deviations: Vec::new(),
        tolerance,
    };
    let t = obs.len();
    let mean = (0..t)
        .map(|k| (&smoother.smoothed[k].mean - exact.marginal_mean(k)).amax())
        .fold(0.0, f64::max);
    let cov = (0..t)
        .map(|k| max_abs_diff(&smoother.smoothed[k].cov, &exact.marginal_cov(k)))
        .fold(0.0, f64::max);
    let cross = (1..t)
        .map(|k| max_abs_diff(&moments.cross[k - 1], &exact.cross_moment(k)))
        .fold(0.0, f64::max);
    report.push("smoothed_mean", mean);
    report.push("smoothed_cov", cov);
    report.push("lag_one_cross_moment", cross);
    report.push("log_evidence", (filter.log_likelihood - exact.log_evidence).abs());
    Ok(report)
}
