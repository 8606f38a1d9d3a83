//! Log-space forward–backward inference for HMMs.
//!
//! All recursions run on `log` probabilities with per-row log-sum-exp, so
//! categorical and Gaussian emissions share one code path and long
//! sequences never underflow. Time indices in errors are 0-based.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{logsumexp, SpdFactor};
use crate::model::{validate_hmm, Emission, HmmParams, ObservationSequence};

/// Forward and backward log tables, `T × K` each.
#[derive(Clone, Debug)]
pub struct ForwardBackwardScratch {
    /// `log p(y_{1:k}, h_k = i)`.
    pub log_alpha: Vec<Vec<f64>>,
    /// `log p(y_{k+1:T} | h_k = i)`; the last row is zero.
    pub log_beta: Vec<Vec<f64>>,
    /// `log p(y_k | y_{1:k-1})` per step; sums to the log-likelihood.
    pub log_normalizers: Vec<f64>,
}

/// Smoothed state occupancies and pairwise transitions.
#[derive(Clone, Debug)]
pub struct PosteriorMarginals {
    /// `gamma[k][i] = P(h_k = i | y_{1:T})`, `T × K`.
    pub gamma: Vec<Vec<f64>>,
    /// `xi[k - 1][(i, j)] = P(h_{k-1} = i, h_k = j | y_{1:T})` for `k = 1..T`
    /// (0-based), i.e. the transition *into* step `k` is stored at `k - 1`.
    pub xi: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

fn log_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.ln()).collect())
        .collect()
}

/// `log p(y_k | h_k = i)` for every step and state.
pub fn log_emission_table(params: &HmmParams, obs: &ObservationSequence) -> Result<Vec<Vec<f64>>> {
    match (&params.emissions[0], obs) {
        (Emission::Categorical(first), ObservationSequence::Symbols(ys)) => {
            let v = first.len();
            let logs: Vec<Vec<f64>> = params
                .emissions
                .iter()
                .map(|e| match e {
                    Emission::Categorical(p) => p.iter().map(|x| x.ln()).collect(),
                    Emission::Gaussian { .. } => unreachable!("validated family"),
                })
                .collect();
            ys.iter()
                .enumerate()
                .map(|(k, &y)| {
                    if y >= v {
                        return Err(Error::Dimension(format!(
                            "symbol {y} at step {k} is outside the alphabet of size {v}"
                        )));
                    }
                    Ok(logs.iter().map(|row| row[y]).collect())
                })
                .collect()
        }
        (Emission::Gaussian { mean, .. }, ObservationSequence::Vectors(ys)) => {
            let p = mean.len();
            let factors = params
                .emissions
                .iter()
                .map(|e| match e {
                    Emission::Gaussian { mean, cov } => SpdFactor::new(cov)
                        .map(|f| (mean, f))
                        .ok_or_else(|| Error::Singular("emission covariance".into())),
                    Emission::Categorical(_) => unreachable!("validated family"),
                })
                .collect::<Result<Vec<_>>>()?;
            ys.iter()
                .enumerate()
                .map(|(k, y)| {
                    if y.len() != p {
                        return Err(Error::Dimension(format!(
                            "observation at step {k} has dimension {}, emissions have {p}",
                            y.len()
                        )));
                    }
                    Ok(factors.iter().map(|(m, f)| f.log_density(y, m)).collect())
                })
                .collect()
        }
        (Emission::Categorical(_), _) => Err(Error::KindMismatch(
            "categorical emissions need symbol observations".into(),
        )),
        (Emission::Gaussian { .. }, _) => Err(Error::KindMismatch(
            "gaussian emissions need vector observations".into(),
        )),
    }
}

fn prepare(params: &HmmParams, obs: &ObservationSequence) -> Result<Vec<Vec<f64>>> {
    validate_hmm(params).into_result()?;
    if obs.is_empty() {
        return Err(Error::Dimension("observation sequence is empty".into()));
    }
    log_emission_table(params, obs)
}

fn forward_table(
    log_init: &[f64],
    log_trans: &[Vec<f64>],
    log_emit: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let k_states = log_init.len();
    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(log_emit.len());
    let mut normalizers = Vec::with_capacity(log_emit.len());
    let mut prev_total = 0.0;
    let mut buf = vec![0.0; k_states];
    for (k, emit) in log_emit.iter().enumerate() {
        let row: Vec<f64> = if k == 0 {
            (0..k_states).map(|i| log_init[i] + emit[i]).collect()
        } else {
            let prev = &alpha[k - 1];
            (0..k_states)
                .map(|j| {
                    for i in 0..k_states {
                        buf[i] = prev[i] + log_trans[i][j];
                    }
                    logsumexp(&buf) + emit[j]
                })
                .collect()
        };
        let total = logsumexp(&row);
        if total == f64::NEG_INFINITY {
            return Err(Error::ZeroProbability { step: k });
        }
        normalizers.push(total - prev_total);
        prev_total = total;
        alpha.push(row);
    }
    Ok((alpha, normalizers))
}

fn backward_table(log_trans: &[Vec<f64>], log_emit: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t = log_emit.len();
    let k_states = log_trans.len();
    let mut beta = vec![vec![0.0; k_states]; t];
    let mut buf = vec![0.0; k_states];
    for k in (0..t.saturating_sub(1)).rev() {
        for i in 0..k_states {
            for j in 0..k_states {
                buf[j] = log_trans[i][j] + log_emit[k + 1][j] + beta[k + 1][j];
            }
            beta[k][i] = logsumexp(&buf);
        }
    }
    beta
}

/// Forward pass: `(log_alpha, log p(y_{1:T}))`.
pub fn forward(params: &HmmParams, obs: &ObservationSequence) -> Result<(Vec<Vec<f64>>, f64)> {
    let log_emit = prepare(params, obs)?;
    let (alpha, _) = forward_table(
        &params.initial.iter().map(|p| p.ln()).collect::<Vec<_>>(),
        &log_matrix(&params.transition),
        &log_emit,
    )?;
    let ll = logsumexp(alpha.last().expect("nonempty"));
    Ok((alpha, ll))
}

pub fn backward(params: &HmmParams, obs: &ObservationSequence) -> Result<Vec<Vec<f64>>> {
    let log_emit = prepare(params, obs)?;
    // Surface zero-probability steps the same way the forward pass does.
    forward_table(
        &params.initial.iter().map(|p| p.ln()).collect::<Vec<_>>(),
        &log_matrix(&params.transition),
        &log_emit,
    )?;
    Ok(backward_table(&log_matrix(&params.transition), &log_emit))
}

/// Runs both passes over a precomputed log-emission table.
pub fn forward_backward_from_log_emissions(
    params: &HmmParams,
    log_emit: &[Vec<f64>],
) -> Result<ForwardBackwardScratch> {
    let log_init: Vec<f64> = params.initial.iter().map(|p| p.ln()).collect();
    let log_trans = log_matrix(&params.transition);
    let (log_alpha, log_normalizers) = forward_table(&log_init, &log_trans, log_emit)?;
    let log_beta = backward_table(&log_trans, log_emit);
    Ok(ForwardBackwardScratch {
        log_alpha,
        log_beta,
        log_normalizers,
    })
}

pub fn forward_backward(params: &HmmParams, obs: &ObservationSequence) -> Result<ForwardBackwardScratch> {
    let log_emit = prepare(params, obs)?;
    forward_backward_from_log_emissions(params, &log_emit)
}

/// Posterior marginals from a log-emission table. Each `gamma` row and
/// `xi` slice is normalized on its own, so a constant offset added to any
/// row of `log_emit` shifts only the log-likelihood.
pub fn posterior_from_log_emissions(
    params: &HmmParams,
    log_emit: &[Vec<f64>],
) -> Result<PosteriorMarginals> {
    let fb = forward_backward_from_log_emissions(params, log_emit)?;
    let k_states = params.num_states();
    let t = log_emit.len();
    let log_likelihood = logsumexp(&fb.log_alpha[t - 1]);

    let gamma = (0..t)
        .map(|k| {
            let joint: Vec<f64> = (0..k_states)
                .map(|i| fb.log_alpha[k][i] + fb.log_beta[k][i])
                .collect();
            let norm = logsumexp(&joint);
            joint.iter().map(|v| (v - norm).exp()).collect()
        })
        .collect();

    let log_trans = log_matrix(&params.transition);
    let xi = (1..t)
        .map(|k| {
            let mut logs = DMatrix::from_fn(k_states, k_states, |i, j| {
                fb.log_alpha[k - 1][i] + log_trans[i][j] + log_emit[k][j] + fb.log_beta[k][j]
            });
            let norm = logsumexp(logs.as_slice());
            logs.apply(|v| *v = (*v - norm).exp());
            logs
        })
        .collect();

    Ok(PosteriorMarginals {
        gamma,
        xi,
        log_likelihood,
    })
}

pub fn posterior_marginals(params: &HmmParams, obs: &ObservationSequence) -> Result<PosteriorMarginals> {
    let log_emit = prepare(params, obs)?;
    posterior_from_log_emissions(params, &log_emit)
}

/// `log p(h_{1:T}, y_{1:T})` for one explicit state path. A zero-probability
/// path gives `-inf`.
pub fn hmm_joint_log_likelihood(
    params: &HmmParams,
    states: &[usize],
    obs: &ObservationSequence,
) -> Result<f64> {
    let k_states = params.num_states();
    if states.len() != obs.len() {
        return Err(Error::Dimension(format!(
            "path has length {}, observations {}",
            states.len(),
            obs.len()
        )));
    }
    if let Some(&bad) = states.iter().find(|&&h| h >= k_states) {
        return Err(Error::Dimension(format!(
            "state {bad} outside 0..{k_states}"
        )));
    }
    let log_emit = log_emission_table(params, obs)?;
    let Some(&first) = states.first() else {
        return Ok(0.0);
    };
    let mut total = params.initial[first].ln();
    for pair in states.windows(2) {
        total += params.transition[(pair[0], pair[1])].ln();
    }
    for (k, &h) in states.iter().enumerate() {
        total += log_emit[k][h];
    }
    Ok(total)
}
