//! Kalman filtering, Rauch–Tung–Striebel smoothing and the smoothed
//! first/second moments used by the LG-SSM E-step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{log_gaussian_density, max_abs_diff, min_eigenvalue, pinv_psd, symmetrize, SpdFactor};
use crate::model::{validate_lgssm, InputSequence, LgssmParams, ObservationSequence};

/// Innovation solves abort below this reciprocal condition estimate.
pub const RCOND_MIN: f64 = 1e-13;
/// Intermediate covariances with an eigenvalue below `-PSD_ABORT` abort the run.
pub const PSD_ABORT: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct FilterOutput {
    /// `p(h_k | y_{1:k})`.
    pub filtered: Vec<GaussianBelief>,
    /// `p(h_k | y_{1:k-1})`; `predicted[0]` is the prior on `h_1`.
    pub predicted: Vec<GaussianBelief>,
    pub log_likelihood: f64,
}

#[derive(Clone, Debug)]
pub struct SmootherOutput {
    /// `p(h_k | y_{1:T})`.
    pub smoothed: Vec<GaussianBelief>,
    /// Backward gains `J_k`, one per transition (`T - 1` entries).
    pub gains: Vec<DMatrix<f64>>,
}

/// Posterior moments under `p(h_{1:T} | y_{1:T})`.
#[derive(Clone, Debug)]
pub struct SmoothedMoments {
    /// `E[h_k]`.
    pub m1: Vec<DVector<f64>>,
    /// `E[h_k h_kᵀ]`.
    pub m2: Vec<DMatrix<f64>>,
    /// `cross[k - 1] = E[h_k h_{k-1}ᵀ]` for `k = 1..T` (0-based).
    pub cross: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

fn check_inputs(params: &LgssmParams, obs: &ObservationSequence, inputs: &InputSequence) -> Result<()> {
    validate_lgssm(params).into_result()?;
    let ys = obs.as_vectors()?;
    if ys.is_empty() {
        return Err(Error::Dimension("observation sequence is empty".into()));
    }
    let p = params.obs_dim();
    if let Some(k) = ys.iter().position(|y| y.len() != p) {
        return Err(Error::Dimension(format!(
            "observation at step {k} has dimension {}, model has {p}",
            ys[k].len()
        )));
    }
    inputs.check_for(params.input_dim(), ys.len())
}

fn check_psd(cov: &DMatrix<f64>, step: usize) -> Result<()> {
    let lo = min_eigenvalue(cov);
    if lo < -PSD_ABORT || lo.is_nan() {
        return Err(Error::Conditioning { step, min_eig: lo });
    }
    Ok(())
}

pub fn kalman_filter(
    params: &LgssmParams,
    obs: &ObservationSequence,
    inputs: &InputSequence,
) -> Result<FilterOutput> {
    check_inputs(params, obs, inputs)?;
    let ys = obs.as_vectors()?;
    let t = ys.len();
    let s = params.state_dim();
    let d = params.input_dim();
    let (a, c, r) = (&params.a, &params.c, &params.r);
    let eye = DMatrix::<f64>::identity(s, s);

    let mut filtered = Vec::with_capacity(t);
    let mut predicted = Vec::with_capacity(t);
    let mut log_likelihood = 0.0;
    let mut mean = params.init_mean.clone();
    let mut cov = params.init_cov.clone();

    for (k, y) in ys.iter().enumerate() {
        predicted.push(GaussianBelief {
            mean: mean.clone(),
            cov: cov.clone(),
        });

        let mut innov_cov = c * &cov * c.transpose() + r;
        symmetrize(&mut innov_cov);
        let factor = SpdFactor::new(&innov_cov)
            .filter(|f| f.rcond >= RCOND_MIN)
            .ok_or_else(|| Error::SingularInnovation {
                step: k,
                rcond: SpdFactor::new(&innov_cov).map_or(0.0, |f| f.rcond),
            })?;
        let pred_y = c * &mean;
        log_likelihood += factor.log_density(y, &pred_y);

        // K = P Cᵀ S⁻¹
        let gain = factor.solve(&(c * &cov)).transpose();
        mean = &mean + &gain * (y - pred_y);
        let i_kc = &eye - &gain * c;
        cov = &i_kc * &cov * i_kc.transpose() + &gain * r * gain.transpose();
        symmetrize(&mut cov);
        check_psd(&cov, k)?;
        filtered.push(GaussianBelief {
            mean: mean.clone(),
            cov: cov.clone(),
        });

        if k + 1 < t {
            let x = inputs.driving(k, d);
            mean = a * &mean + &params.b * x;
            cov = a * &cov * a.transpose() + &params.q;
            symmetrize(&mut cov);
            check_psd(&cov, k + 1)?;
        }
    }

    Ok(FilterOutput {
        filtered,
        predicted,
        log_likelihood,
    })
}

/// Backward gain `J = P_f Aᵀ P_pred⁻¹`. A rank-deficient predicted
/// covariance is handled with its pseudo-inverse as long as `P_f Aᵀ` lies
/// in its range, which makes the gain well defined on every direction the
/// smoother actually uses.
fn smoother_gain(
    a: &DMatrix<f64>,
    filt_cov: &DMatrix<f64>,
    pred_cov: &DMatrix<f64>,
    step: usize,
) -> Result<DMatrix<f64>> {
    let cross = a * filt_cov; // (P_f Aᵀ)ᵀ
    if let Some(f) = SpdFactor::new(pred_cov).filter(|f| f.rcond >= RCOND_MIN) {
        return Ok(f.solve(&cross).transpose());
    }
    let gain = filt_cov * a.transpose() * pinv_psd(pred_cov, RCOND_MIN);
    let residual = max_abs_diff(&(&gain * pred_cov), &cross.transpose());
    let scale = 1.0 + cross.amax();
    if residual > 1e-9 * scale {
        return Err(Error::SingularPredicted { step });
    }
    Ok(gain)
}

pub fn rts_smoother(params: &LgssmParams, filter: &FilterOutput) -> Result<SmootherOutput> {
    let t = filter.filtered.len();
    if filter.predicted.len() != t || t == 0 {
        return Err(Error::Dimension(
            "filtered and predicted beliefs must be nonempty and aligned".into(),
        ));
    }
    let a = &params.a;
    let mut smoothed = filter.filtered.clone();
    let mut gains = vec![DMatrix::zeros(params.state_dim(), params.state_dim()); t - 1];
    for k in (0..t - 1).rev() {
        let filt = &filter.filtered[k];
        let pred = &filter.predicted[k + 1];
        let gain = smoother_gain(a, &filt.cov, &pred.cov, k + 1)?;
        let next = &smoothed[k + 1];
        let mean = &filt.mean + &gain * (&next.mean - &pred.mean);
        let mut cov = &filt.cov + &gain * (&next.cov - &pred.cov) * gain.transpose();
        symmetrize(&mut cov);
        check_psd(&cov, k)?;
        smoothed[k] = GaussianBelief { mean, cov };
        gains[k] = gain;
    }
    Ok(SmootherOutput { smoothed, gains })
}

/// Filter + smoother + moment assembly. The lag-one cross-covariance is
/// `Cov(h_{k+1}, h_k | y) = P^s_{k+1} J_kᵀ`.
pub fn smoothed_moments(
    params: &LgssmParams,
    obs: &ObservationSequence,
    inputs: &InputSequence,
) -> Result<SmoothedMoments> {
    let filter = kalman_filter(params, obs, inputs)?;
    let smoother = rts_smoother(params, &filter)?;
    Ok(moments_from(&filter, &smoother))
}

pub fn moments_from(filter: &FilterOutput, smoother: &SmootherOutput) -> SmoothedMoments {
    let sm = &smoother.smoothed;
    let m1: Vec<DVector<f64>> = sm.iter().map(|b| b.mean.clone()).collect();
    let m2 = sm
        .iter()
        .map(|b| {
            let mut m = &b.cov + &b.mean * b.mean.transpose();
            symmetrize(&mut m);
            m
        })
        .collect();
    let cross = (1..sm.len())
        .map(|k| &sm[k].cov * smoother.gains[k - 1].transpose() + &sm[k].mean * sm[k - 1].mean.transpose())
        .collect();
    SmoothedMoments {
        m1,
        m2,
        cross,
        log_likelihood: filter.log_likelihood,
    }
}

/// `log p(h_{1:T}, y_{1:T} | x)` for an explicit latent trajectory.
pub fn lgssm_joint_log_likelihood(
    params: &LgssmParams,
    states: &[DVector<f64>],
    obs: &ObservationSequence,
    inputs: &InputSequence,
) -> Result<f64> {
    let ys = obs.as_vectors()?;
    if states.len() != ys.len() {
        return Err(Error::Dimension(format!(
            "trajectory has length {}, observations {}",
            states.len(),
            ys.len()
        )));
    }
    let (s, p, d) = (params.state_dim(), params.obs_dim(), params.input_dim());
    if states.iter().any(|h| h.len() != s) || ys.iter().any(|y| y.len() != p) {
        return Err(Error::Dimension("state/observation dimension mismatch".into()));
    }
    inputs.check_for(d, ys.len())?;
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = log_gaussian_density(&states[0], &params.init_mean, &params.init_cov)?;
    let q = SpdFactor::new(&params.q);
    for k in 1..states.len() {
        let mean = &params.a * &states[k - 1] + &params.b * inputs.driving(k - 1, d);
        let q = q
            .as_ref()
            .ok_or_else(|| Error::Singular("Q is not positive definite".into()))?;
        total += q.log_density(&states[k], &mean);
    }
    let r = SpdFactor::new(&params.r)
        .ok_or_else(|| Error::Singular("R is not positive definite".into()))?;
    for (h, y) in states.iter().zip(ys) {
        total += r.log_density(y, &(&params.c * h));
    }
    Ok(total)
}
