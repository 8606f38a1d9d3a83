//! Brute-force reference inference.
//!
//! Nothing here reuses the forward–backward or Kalman recursions: HMM
//! posteriors come from enumerating every state path, LG-SSM posteriors
//! from building the dense joint Gaussian over `(h_{1:T}, y_{1:T})` and
//! conditioning it with Schur complements. Both are only usable at desk
//! scale and are guarded accordingly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hmm::hmm_joint_log_likelihood;
use crate::linalg::{logsumexp, symmetrize, SpdFactor};
use crate::model::{validate_hmm, validate_lgssm, HmmParams, InputSequence, LgssmParams, ObservationSequence};

/// Largest number of state paths [`hmm_enumerate`] will visit.
pub const MAX_PATHS: usize = 4096;
/// Largest stacked dimension `(s + p)·T` for [`lgssm_exact_joint`].
pub const MAX_STACKED_DIM: usize = 64;

#[derive(Clone, Debug)]
pub struct EnumerationPosterior {
    /// Unnormalized `log p(h_{1:T}, y_{1:T})` for path index `n`, where the
    /// state at step `k` is digit `k` of `n` in base `K` (step 0 least significant).
    pub path_log_weights: Vec<f64>,
    pub marginals: Vec<Vec<f64>>,
    /// `pairwise[k - 1][(i, j)] = P(h_{k-1} = i, h_k = j | y)`.
    pub pairwise: Vec<DMatrix<f64>>,
    pub log_evidence: f64,
}

/// Decodes path index `n` into a state sequence.
pub fn path_from_index(mut n: usize, k: usize, t: usize) -> Vec<usize> {
    let mut path = Vec::with_capacity(t);
    for _ in 0..t {
        path.push(n % k);
        n /= k;
    }
    path
}

pub fn num_paths(k: usize, t: usize) -> Option<usize> {
    k.checked_pow(u32::try_from(t).ok()?)
}

pub fn hmm_enumerate(params: &HmmParams, obs: &ObservationSequence) -> Result<EnumerationPosterior> {
    hmm_enumerate_with(Exec::default(), params, obs)
}

pub fn hmm_enumerate_with(
    exec: Exec,
    params: &HmmParams,
    obs: &ObservationSequence,
) -> Result<EnumerationPosterior> {
    validate_hmm(params).into_result()?;
    let k = params.num_states();
    let t = obs.len();
    if t == 0 {
        return Err(Error::Dimension("observation sequence is empty".into()));
    }
    let total = num_paths(k, t)
        .filter(|&n| n <= MAX_PATHS)
        .ok_or_else(|| Error::Guard(format!("{k}^{t} state paths exceed {MAX_PATHS}")))?;

    let path_log_weights = exec
        .map_range(total, |n| {
            hmm_joint_log_likelihood(params, &path_from_index(n, k, t), obs)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let log_evidence = logsumexp(&path_log_weights);
    if log_evidence == f64::NEG_INFINITY {
        return Err(Error::Singular("every state path has zero probability".into()));
    }

    let mut marginals = vec![vec![0.0; k]; t];
    let mut pairwise = vec![DMatrix::zeros(k, k); t - 1];
    for (n, &w) in path_log_weights.iter().enumerate() {
        let weight = (w - log_evidence).exp();
        if weight == 0.0 {
            continue;
        }
        let path = path_from_index(n, k, t);
        for (step, &h) in path.iter().enumerate() {
            marginals[step][h] += weight;
        }
        for step in 1..t {
            pairwise[step - 1][(path[step - 1], path[step])] += weight;
        }
    }
    Ok(EnumerationPosterior {
        path_log_weights,
        marginals,
        pairwise,
        log_evidence,
    })
}

/// Dense joint Gaussian over `(h_1, …, h_T, y_1, …, y_T)`.
#[derive(Clone, Debug)]
pub struct StackedGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub len: usize,
}

/// Posterior over the stacked states given all observations.
#[derive(Clone, Debug)]
pub struct ConditionedStates {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub state_dim: usize,
    /// `log p(y_{1:T})`.
    pub log_evidence: f64,
}

impl ConditionedStates {
    pub fn marginal_mean(&self, k: usize) -> DVector<f64> {
        let s = self.state_dim;
        self.mean.rows(k * s, s).into_owned()
    }

    pub fn marginal_cov(&self, k: usize) -> DMatrix<f64> {
        let s = self.state_dim;
        self.cov.view((k * s, k * s), (s, s)).into_owned()
    }

    /// `E[h_k h_kᵀ | y]`.
    pub fn second_moment(&self, k: usize) -> DMatrix<f64> {
        let m = self.marginal_mean(k);
        self.marginal_cov(k) + &m * m.transpose()
    }

    /// `E[h_k h_{k-1}ᵀ | y]` for `k ≥ 1`.
    pub fn cross_moment(&self, k: usize) -> DMatrix<f64> {
        let s = self.state_dim;
        let block = self.cov.view((k * s, (k - 1) * s), (s, s)).into_owned();
        block + self.marginal_mean(k) * self.marginal_mean(k - 1).transpose()
    }
}

/// Builds the joint Gaussian by writing every stacked variable as an affine
/// map of the independent sources `(h_1 − μ₀, w_1..w_{T−1}, v_1..v_T)`.
pub fn lgssm_exact_joint(params: &LgssmParams, inputs: &InputSequence, len: usize) -> Result<StackedGaussian> {
    validate_lgssm(params).into_result()?;
    let (s, p, d) = (params.state_dim(), params.obs_dim(), params.input_dim());
    if len == 0 {
        return Err(Error::Dimension("length must be at least 1".into()));
    }
    let dim = (s + p) * len;
    if dim > MAX_STACKED_DIM {
        return Err(Error::Guard(format!(
            "stacked dimension {dim} exceeds {MAX_STACKED_DIM}"
        )));
    }
    inputs.check_for(d, len)?;

    let n_src = s * len + p * len; // e0 (s), w_1..w_{T-1} (s each), v_1..v_T (p each)
    let w_col = |j: usize| s + (j - 1) * s; // source column of w_j, j = 1..T-1
    let v_col = |k: usize| s * len + k * p;

    let mut loading = DMatrix::<f64>::zeros(dim, n_src);
    let mut mean = DVector::<f64>::zeros(dim);
    let mut h_load = DMatrix::<f64>::zeros(s, n_src);
    h_load.view_mut((0, 0), (s, s)).copy_from(&DMatrix::identity(s, s));
    let mut h_mean = params.init_mean.clone();
    for k in 0..len {
        if k > 0 {
            let x = if d == 0 {
                DVector::zeros(0)
            } else {
                inputs.items()[k - 1].clone()
            };
            h_mean = &params.a * &h_mean + &params.b * x;
            h_load = &params.a * &h_load;
            for r in 0..s {
                h_load[(r, w_col(k) + r)] += 1.0;
            }
        }
        loading.view_mut((k * s, 0), (s, n_src)).copy_from(&h_load);
        mean.rows_mut(k * s, s).copy_from(&h_mean);

        let y_row = s * len + k * p;
        let mut y_load = &params.c * &h_load;
        for r in 0..p {
            y_load[(r, v_col(k) + r)] += 1.0;
        }
        loading.view_mut((y_row, 0), (p, n_src)).copy_from(&y_load);
        mean.rows_mut(y_row, p).copy_from(&(&params.c * &h_mean));
    }

    let mut noise = DMatrix::<f64>::zeros(n_src, n_src);
    noise.view_mut((0, 0), (s, s)).copy_from(&params.init_cov);
    for j in 1..len {
        noise.view_mut((w_col(j), w_col(j)), (s, s)).copy_from(&params.q);
    }
    for k in 0..len {
        noise.view_mut((v_col(k), v_col(k)), (p, p)).copy_from(&params.r);
    }
    let mut cov = &loading * noise * loading.transpose();
    symmetrize(&mut cov);
    Ok(StackedGaussian {
        mean,
        cov,
        state_dim: s,
        obs_dim: p,
        len,
    })
}

impl StackedGaussian {
    fn split(&self) -> usize {
        self.state_dim * self.len
    }

    fn stack_obs(&self, obs: &ObservationSequence) -> Result<DVector<f64>> {
        let ys = obs.as_vectors()?;
        if ys.len() != self.len || ys.iter().any(|y| y.len() != self.obs_dim) {
            return Err(Error::Dimension("observations do not match the stacked layout".into()));
        }
        Ok(DVector::from_iterator(
            self.obs_dim * self.len,
            ys.iter().flat_map(|y| y.iter().copied()),
        ))
    }

    /// Conditions the state block on the observation block.
    pub fn condition(&self, obs: &ObservationSequence) -> Result<ConditionedStates> {
        let n_h = self.split();
        let n_y = self.obs_dim * self.len;
        let y = self.stack_obs(obs)?;
        let mu_h = self.mean.rows(0, n_h).into_owned();
        let mu_y = self.mean.rows(n_h, n_y).into_owned();
        let s_hh = self.cov.view((0, 0), (n_h, n_h)).into_owned();
        let s_hy = self.cov.view((0, n_h), (n_h, n_y)).into_owned();
        let s_yy = self.cov.view((n_h, n_h), (n_y, n_y)).into_owned();
        let f = SpdFactor::new(&s_yy)
            .ok_or_else(|| Error::Singular("observation covariance block is singular".into()))?;
        let gain_t = f.solve(&s_hy.transpose()); // Σ_yy⁻¹ Σ_yh
        let mean = &mu_h + gain_t.transpose() * (&y - &mu_y);
        let mut cov = &s_hh - &s_hy * &gain_t;
        symmetrize(&mut cov);
        Ok(ConditionedStates {
            mean,
            cov,
            state_dim: self.state_dim,
            log_evidence: f.log_density(&y, &mu_y),
        })
    }

    /// Joint log-density of an explicit `(h_{1:T}, y_{1:T})`.
    pub fn log_density(&self, states: &[DVector<f64>], obs: &ObservationSequence) -> Result<f64> {
        if states.len() != self.len || states.iter().any(|h| h.len() != self.state_dim) {
            return Err(Error::Dimension("states do not match the stacked layout".into()));
        }
        let y = self.stack_obs(obs)?;
        let z = DVector::from_iterator(
            self.mean.len(),
            states.iter().flat_map(|h| h.iter().copied()).chain(y.iter().copied()),
        );
        let f = SpdFactor::new(&self.cov)
            .ok_or_else(|| Error::Singular("joint covariance is singular".into()))?;
        Ok(f.log_density(&z, &self.mean))
    }
}
