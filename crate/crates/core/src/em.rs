//! Expectation–maximization for HMMs and LG-SSMs.
//!
//! The E-steps delegate to [`crate::hmm::posterior_marginals`] and
//! [`crate::kalman::smoothed_moments`]; sufficient statistics are summed
//! over sequences (in input order) before the closed-form M-steps.
//!
//! The transition updates follow the expected-count ratio for HMMs and the
//! expected-state least-squares regression for LG-SSMs. The remaining
//! updates (initial distribution, emissions, `B`, `C`, `Q`, `R`, prior)
//! are the standard maximum-likelihood closed forms.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hmm::{posterior_marginals, PosteriorMarginals};
use crate::io::SequenceData;
use crate::kalman::{smoothed_moments, SmoothedMoments, RCOND_MIN};
use crate::linalg::{deficient_directions, floor_eigenvalues, pinv_psd, symmetrized, SpdFactor};
use crate::model::{
    validate_hmm, validate_lgssm, Emission, EmissionFamily, HmmParams, LgssmParams,
    ObservationSequence,
};

/// Allowed per-iteration likelihood decrease before the run is faulted.
pub const MONOTONE_SLACK: f64 = 1e-9;
/// States whose expected occupancy falls below this keep their old parameters.
pub const MIN_OCCUPANCY: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub min_variance_floor: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 200,
            rel_tol: 1e-8,
            min_variance_floor: 1e-8,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rel_tol.is_nan()
            || self.rel_tol <= 0.0
            || self.min_variance_floor.is_nan()
            || self.min_variance_floor <= 0.0
        {
            return Err(Error::Dimension(
                "rel_tol and min_variance_floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIters,
    Tolerance,
    LikelihoodDecreaseFault,
    /// Inference or an M-step failed part way through.
    NumericalFault(String),
}

impl StopReason {
    pub fn is_fault(&self) -> bool {
        matches!(
            self,
            StopReason::LikelihoodDecreaseFault | StopReason::NumericalFault(_)
        )
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::MaxIters => write!(f, "max-iters"),
            StopReason::Tolerance => write!(f, "tolerance"),
            StopReason::LikelihoodDecreaseFault => write!(f, "likelihood-decrease-fault"),
            StopReason::NumericalFault(msg) => write!(f, "numerical-fault: {msg}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmReport<P> {
    /// Completed E/M cycles reflected in `final_params`.
    pub iterations: usize,
    /// `log_likelihood_trace[i]` is the marginal log-likelihood of the
    /// parameters entering iteration `i`.
    pub log_likelihood_trace: Vec<f64>,
    pub final_params: P,
    pub converged: bool,
    pub stop_reason: StopReason,
}

// ---------------------------------------------------------------------------
// HMM
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum EmissionStats {
    /// `counts[(i, v)] = Σ γ_k(i) [y_k = v]`.
    Categorical(DMatrix<f64>),
    /// Per state `Σ γ_k(i) y_k` and `Σ γ_k(i) y_k y_kᵀ`.
    Gaussian {
        sum: Vec<DVector<f64>>,
        outer: Vec<DMatrix<f64>>,
    },
}

/// HMM expected sufficient statistics summed over sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmStats {
    /// `Σ_seq γ_1(i)`.
    pub initial: Vec<f64>,
    /// `Σ_seq Σ_{k=2}^T ξ_k(i, j)`.
    pub trans_num: DMatrix<f64>,
    /// `Σ_seq Σ_{k=2}^T γ_{k-1}(i)`.
    pub trans_den: Vec<f64>,
    /// `Σ_seq Σ_{k=1}^T γ_k(i)`.
    pub occupancy: Vec<f64>,
    pub emission: EmissionStats,
}

impl HmmStats {
    pub fn zeros(k: usize, family: EmissionFamily) -> Self {
        HmmStats {
            initial: vec![0.0; k],
            trans_num: DMatrix::zeros(k, k),
            trans_den: vec![0.0; k],
            occupancy: vec![0.0; k],
            emission: match family {
                EmissionFamily::Categorical { alphabet } => {
                    EmissionStats::Categorical(DMatrix::zeros(k, alphabet))
                }
                EmissionFamily::Gaussian { dim } => EmissionStats::Gaussian {
                    sum: vec![DVector::zeros(dim); k],
                    outer: vec![DMatrix::zeros(dim, dim); k],
                },
            },
        }
    }

    pub fn accumulate(&mut self, post: &PosteriorMarginals, obs: &ObservationSequence) -> Result<()> {
        let k_states = self.initial.len();
        let t = post.gamma.len();
        if obs.len() != t {
            return Err(Error::Dimension("posterior and observations differ in length".into()));
        }
        for i in 0..k_states {
            self.initial[i] += post.gamma[0][i];
        }
        for (k, xi) in post.xi.iter().enumerate() {
            self.trans_num += xi;
            for i in 0..k_states {
                self.trans_den[i] += post.gamma[k][i];
            }
        }
        for g in &post.gamma {
            for (acc, gi) in self.occupancy.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        match (&mut self.emission, obs) {
            (EmissionStats::Categorical(counts), ObservationSequence::Symbols(ys)) => {
                for (g, &y) in post.gamma.iter().zip(ys) {
                    for i in 0..k_states {
                        counts[(i, y)] += g[i];
                    }
                }
            }
            (EmissionStats::Gaussian { sum, outer }, ObservationSequence::Vectors(ys)) => {
                for (g, y) in post.gamma.iter().zip(ys) {
                    let yy = y * y.transpose();
                    for i in 0..k_states {
                        sum[i].axpy(g[i], y, 1.0);
                        outer[i] += &yy * g[i];
                    }
                }
            }
            _ => {
                return Err(Error::KindMismatch(
                    "statistics and observations disagree on emission family".into(),
                ))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HmmEStep {
    pub posteriors: Vec<PosteriorMarginals>,
    pub log_likelihood: f64,
}

pub fn hmm_e_step(params: &HmmParams, sequences: &[ObservationSequence]) -> Result<HmmEStep> {
    hmm_e_step_with(Exec::default(), params, sequences)
}

pub fn hmm_e_step_with(
    exec: Exec,
    params: &HmmParams,
    sequences: &[ObservationSequence],
) -> Result<HmmEStep> {
    if sequences.is_empty() {
        return Err(Error::Dimension("no sequences".into()));
    }
    let posteriors = exec
        .map_range(sequences.len(), |i| {
            posterior_marginals(params, &sequences[i]).map_err(|e| e.in_sequence(i))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let log_likelihood = posteriors.iter().map(|p| p.log_likelihood).sum();
    Ok(HmmEStep {
        posteriors,
        log_likelihood,
    })
}

pub fn hmm_stats(
    params: &HmmParams,
    estep: &HmmEStep,
    sequences: &[ObservationSequence],
) -> Result<HmmStats> {
    let family = params
        .family()
        .ok_or_else(|| Error::Dimension("model has no states".into()))?;
    let mut stats = HmmStats::zeros(params.num_states(), family);
    for (post, obs) in estep.posteriors.iter().zip(sequences) {
        stats.accumulate(post, obs)?;
    }
    Ok(stats)
}

#[derive(Clone, Debug)]
pub struct HmmMStep {
    pub params: HmmParams,
    /// States with (near) zero occupancy whose row/emission was carried over.
    pub kept_states: Vec<usize>,
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

pub fn hmm_m_step(stats: &HmmStats, old: &HmmParams, config: &EmConfig) -> Result<HmmMStep> {
    let k_states = old.num_states();
    if stats.initial.len() != k_states || stats.trans_num.shape() != (k_states, k_states) {
        return Err(Error::Dimension("statistics do not match the model size".into()));
    }
    let mut kept = Vec::new();

    let mut initial = stats.initial.clone();
    if initial.iter().sum::<f64>() > 0.0 {
        normalize(&mut initial);
    } else {
        initial = old.initial.clone();
    }

    let mut transition = old.transition.clone();
    for i in 0..k_states {
        let den = stats.trans_den[i];
        if den > MIN_OCCUPANCY {
            let mut row: Vec<f64> = (0..k_states).map(|j| stats.trans_num[(i, j)] / den).collect();
            normalize(&mut row);
            for (j, v) in row.into_iter().enumerate() {
                transition[(i, j)] = v;
            }
        } else {
            kept.push(i);
        }
    }

    let mut emissions = old.emissions.clone();
    for i in 0..k_states {
        let occ = stats.occupancy[i];
        if occ <= MIN_OCCUPANCY {
            if !kept.contains(&i) {
                kept.push(i);
            }
            continue;
        }
        emissions[i] = match &stats.emission {
            EmissionStats::Categorical(counts) => {
                let mut p: Vec<f64> = counts.row(i).iter().map(|c| c / occ).collect();
                normalize(&mut p);
                Emission::Categorical(p)
            }
            EmissionStats::Gaussian { sum, outer } => {
                let mean = &sum[i] / occ;
                let cov = &outer[i] / occ - &mean * mean.transpose();
                Emission::Gaussian {
                    cov: floor_eigenvalues(&cov, config.min_variance_floor),
                    mean,
                }
            }
        };
    }
    kept.sort_unstable();
    if !kept.is_empty() {
        log::warn!("states {kept:?} had no expected occupancy; parameters carried over");
    }
    Ok(HmmMStep {
        params: HmmParams {
            initial,
            transition,
            emissions,
        },
        kept_states: kept,
    })
}

// ---------------------------------------------------------------------------
// LG-SSM
// ---------------------------------------------------------------------------

/// LG-SSM expected sufficient statistics summed over sequences.
///
/// Transition sums run over `k = 2..T` with regressor
/// `z_{k-1} = (h_{k-1}, x_{k-1})`; observation sums run over `k = 1..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct LgssmStats {
    /// `Σ E[z_{k-1} z_{k-1}ᵀ]`; the top-left `s × s` block is `Σ E[h_{k-1} h_{k-1}ᵀ]`.
    pub szz: DMatrix<f64>,
    /// `Σ E[h_k z_{k-1}ᵀ]`; the left `s × s` block is `Σ E[h_k h_{k-1}ᵀ]`.
    pub shz: DMatrix<f64>,
    /// `Σ_{k=2}^T E[h_k h_kᵀ]`.
    pub shh_next: DMatrix<f64>,
    pub n_trans: f64,
    /// `Σ y_k E[h_k]ᵀ`.
    pub syh: DMatrix<f64>,
    /// `Σ_{k=1}^T E[h_k h_kᵀ]`.
    pub shh: DMatrix<f64>,
    /// `Σ y_k y_kᵀ`.
    pub syy: DMatrix<f64>,
    pub n_obs: f64,
    /// `Σ_seq E[h_1]` and `Σ_seq E[h_1 h_1ᵀ]`.
    pub init_m1: DVector<f64>,
    pub init_m2: DMatrix<f64>,
    pub n_seq: f64,
}

impl LgssmStats {
    pub fn zeros(s: usize, d: usize, p: usize) -> Self {
        LgssmStats {
            szz: DMatrix::zeros(s + d, s + d),
            shz: DMatrix::zeros(s, s + d),
            shh_next: DMatrix::zeros(s, s),
            n_trans: 0.0,
            syh: DMatrix::zeros(p, s),
            shh: DMatrix::zeros(s, s),
            syy: DMatrix::zeros(p, p),
            n_obs: 0.0,
            init_m1: DVector::zeros(s),
            init_m2: DMatrix::zeros(s, s),
            n_seq: 0.0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.shh.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.szz.nrows() - self.state_dim()
    }

    pub fn accumulate(&mut self, mom: &SmoothedMoments, data: &SequenceData) -> Result<()> {
        let s = self.state_dim();
        let d = self.input_dim();
        let ys = data.obs.as_vectors()?;
        let t = ys.len();
        if mom.m1.len() != t {
            return Err(Error::Dimension("moments and observations differ in length".into()));
        }
        data.inputs.check_for(d, t)?;
        for k in 1..t {
            let m2_prev = &mom.m2[k - 1];
            self.szz.view_mut((0, 0), (s, s)).add_assign(m2_prev);
            self.shz.view_mut((0, 0), (s, s)).add_assign(&mom.cross[k - 1]);
            if d > 0 {
                let x = &data.inputs.items()[k - 1];
                let hx = &mom.m1[k - 1] * x.transpose();
                self.szz.view_mut((0, s), (s, d)).add_assign(&hx);
                self.szz.view_mut((s, 0), (d, s)).add_assign(&hx.transpose());
                self.szz.view_mut((s, s), (d, d)).add_assign(&(x * x.transpose()));
                self.shz.view_mut((0, s), (s, d)).add_assign(&(&mom.m1[k] * x.transpose()));
            }
            self.shh_next += &mom.m2[k];
        }
        self.n_trans += (t - 1) as f64;
        for (k, y) in ys.iter().enumerate() {
            self.syh += y * mom.m1[k].transpose();
            self.shh += &mom.m2[k];
            self.syy += y * y.transpose();
        }
        self.n_obs += t as f64;
        self.init_m1 += &mom.m1[0];
        self.init_m2 += &mom.m2[0];
        self.n_seq += 1.0;
        Ok(())
    }
}

trait AddAssignView {
    fn add_assign(&mut self, other: &DMatrix<f64>);
}

impl AddAssignView for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign(&mut self, other: &DMatrix<f64>) {
        *self += other;
    }
}

#[derive(Clone, Debug)]
pub struct LgssmEStep {
    pub moments: Vec<SmoothedMoments>,
    pub log_likelihood: f64,
}

pub fn lgssm_e_step(params: &LgssmParams, sequences: &[SequenceData]) -> Result<LgssmEStep> {
    lgssm_e_step_with(Exec::default(), params, sequences)
}

pub fn lgssm_e_step_with(
    exec: Exec,
    params: &LgssmParams,
    sequences: &[SequenceData],
) -> Result<LgssmEStep> {
    if sequences.is_empty() {
        return Err(Error::Dimension("no sequences".into()));
    }
    let moments = exec
        .map_range(sequences.len(), |i| {
            smoothed_moments(params, &sequences[i].obs, &sequences[i].inputs)
                .map_err(|e| e.in_sequence(i))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let log_likelihood = moments.iter().map(|m| m.log_likelihood).sum();
    Ok(LgssmEStep {
        moments,
        log_likelihood,
    })
}

pub fn lgssm_stats(
    params: &LgssmParams,
    estep: &LgssmEStep,
    sequences: &[SequenceData],
) -> Result<LgssmStats> {
    let mut stats = LgssmStats::zeros(params.state_dim(), params.input_dim(), params.obs_dim());
    for (mom, data) in estep.moments.iter().zip(sequences) {
        stats.accumulate(mom, data)?;
    }
    Ok(stats)
}

/// Solves `X G = M` for symmetric positive-definite `G`.
fn right_solve(
    what: &'static str,
    m: &DMatrix<f64>,
    gram: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    match SpdFactor::new(gram).filter(|f| f.rcond >= RCOND_MIN) {
        Some(f) => Ok(f.solve(&m.transpose()).transpose()),
        None => Err(Error::SingularGram {
            what,
            deficient: deficient_directions(gram, RCOND_MIN).max(1),
            dim: gram.nrows(),
        }),
    }
}

/// `(S - W Mᵀ - M Wᵀ + W G Wᵀ) / n`: residual covariance of a regression
/// with coefficients `W`, cross moment `M` and Gram matrix `G`.
fn residual_cov(
    second: &DMatrix<f64>,
    w: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    n: f64,
) -> DMatrix<f64> {
    let wm = w * cross.transpose();
    (second - &wm - wm.transpose() + w * gram * w.transpose()) / n
}

pub fn lgssm_m_step(stats: &LgssmStats, old: &LgssmParams, config: &EmConfig) -> Result<LgssmParams> {
    let s = old.state_dim();
    let d = old.input_dim();
    let p = old.obs_dim();
    if stats.state_dim() != s || stats.input_dim() != d || stats.syh.nrows() != p {
        return Err(Error::Dimension("statistics do not match the model size".into()));
    }
    let floor = config.min_variance_floor;
    let mut out = old.clone();

    if stats.n_trans > 0.0 {
        // [A B] = (Σ E[h_k zᵀ]) (Σ E[z zᵀ])⁻¹; with d = 0 this is
        // A = (Σ E[h_k h_{k-1}ᵀ]) (Σ E[h_{k-1} h_{k-1}ᵀ])⁻¹.
        let w = right_solve("transition regression", &stats.shz, &stats.szz)?;
        out.a = w.columns(0, s).into_owned();
        out.b = w.columns(s, d).into_owned();
        let q = residual_cov(&stats.shh_next, &w, &stats.shz, &stats.szz, stats.n_trans);
        out.q = floor_eigenvalues(&q, floor);
    }

    let c = right_solve("observation regression", &stats.syh, &stats.shh)?;
    let r = residual_cov(&stats.syy, &c, &stats.syh, &stats.shh, stats.n_obs);
    out.r = floor_eigenvalues(&r, floor);
    out.c = c;

    let mean = &stats.init_m1 / stats.n_seq;
    let cov = &stats.init_m2 / stats.n_seq - &mean * mean.transpose();
    out.init_cov = floor_eigenvalues(&cov, floor);
    out.init_mean = mean;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

fn data_moments(seqs: &[&[DVector<f64>]], p: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mut n = 0.0_f64;
    let mut mean = DVector::zeros(p);
    for ys in seqs {
        for y in ys.iter() {
            mean += y;
            n += 1.0;
        }
    }
    mean /= n.max(1.0);
    let mut cov = DMatrix::zeros(p, p);
    for ys in seqs {
        for y in ys.iter() {
            let r = y - &mean;
            cov += &r * r.transpose();
        }
    }
    cov /= n.max(1.0);
    (mean, symmetrized(&cov))
}

/// Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue.
fn sorted_eigen(m: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let eig = SymmetricEigen::new(symmetrized(m));
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, eig.eigenvectors.column(i).into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Data-driven starting point for HMM EM: uniform initial distribution,
/// a random positive row-stochastic transition matrix, and emissions
/// matched to the pooled data moments with seeded jitter.
pub fn init_hmm(
    num_states: usize,
    sequences: &[ObservationSequence],
    config: &EmConfig,
) -> Result<HmmParams> {
    if num_states == 0 {
        return Err(Error::Dimension("need at least one state".into()));
    }
    let first = sequences
        .first()
        .ok_or_else(|| Error::Dimension("no sequences".into()))?;
    let k = num_states;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let transition = DMatrix::from_fn(k, k, |_, _| 0.5 + rng.random::<f64>());
    let transition = {
        let mut t = transition;
        for i in 0..k {
            let s = t.row(i).sum();
            t.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        t
    };

    let emissions = match first {
        ObservationSequence::Symbols(_) => {
            let mut alphabet = 0;
            for seq in sequences {
                let ys = seq.as_symbols()?;
                alphabet = alphabet.max(ys.iter().copied().max().map_or(0, |m| m + 1));
            }
            let mut counts = vec![1.0; alphabet];
            for seq in sequences {
                for &y in seq.as_symbols()? {
                    counts[y] += 1.0;
                }
            }
            (0..k)
                .map(|_| {
                    let mut p: Vec<f64> = counts
                        .iter()
                        .map(|c| c * (0.75 + 0.5 * rng.random::<f64>()))
                        .collect();
                    normalize(&mut p);
                    Emission::Categorical(p)
                })
                .collect()
        }
        ObservationSequence::Vectors(_) => {
            let seqs = sequences
                .iter()
                .map(|s| s.as_vectors())
                .collect::<Result<Vec<_>>>()?;
            let p = first.vector_dim().unwrap_or(0);
            if p == 0 {
                return Err(Error::Dimension("empty observation sequence".into()));
            }
            let (mean, cov) = data_moments(&seqs, p);
            let cov = floor_eigenvalues(&cov, config.min_variance_floor.max(1e-6));
            let (top_var, dir) = sorted_eigen(&cov).swap_remove(0);
            let sd = top_var.max(0.0).sqrt();
            let mut proj: Vec<f64> = seqs
                .iter()
                .flat_map(|ys| ys.iter().map(|y| (y - &mean).dot(&dir)))
                .collect();
            proj.sort_by(f64::total_cmp);
            (0..k)
                .map(|i| {
                    let q = (i as f64 + 0.5) / k as f64;
                    let idx = ((q * proj.len() as f64) as usize).min(proj.len() - 1);
                    let jitter = 0.05 * sd * rng.sample::<f64, _>(StandardNormal);
                    Emission::Gaussian {
                        mean: &mean + &dir * (proj[idx] + jitter),
                        cov: cov.clone(),
                    }
                })
                .collect()
        }
    };
    let params = HmmParams {
        initial: vec![1.0 / k as f64; k],
        transition,
        emissions,
    };
    validate_hmm(&params).into_result()?;
    Ok(params)
}

/// Data-driven starting point for LG-SSM EM: `A = 0.5 I`, `B = 0`,
/// `Q = R = I`, `C` an orthonormal basis scaled to the data, and a prior
/// centred on the back-projected first observations.
pub fn init_lgssm(
    state_dim: usize,
    sequences: &[SequenceData],
    config: &EmConfig,
) -> Result<LgssmParams> {
    if state_dim == 0 {
        return Err(Error::Dimension("state dimension must be positive".into()));
    }
    let first = sequences
        .first()
        .ok_or_else(|| Error::Dimension("no sequences".into()))?;
    let p = first
        .obs
        .vector_dim()
        .ok_or_else(|| Error::KindMismatch("LG-SSM needs continuous observations".into()))?;
    let d = first.inputs.dim();
    let seqs = sequences
        .iter()
        .map(|s| s.obs.as_vectors())
        .collect::<Result<Vec<_>>>()?;
    let (_, cov) = data_moments(&seqs, p);
    let eig = sorted_eigen(&cov);
    let s = state_dim;
    let mut c = DMatrix::zeros(p, s);
    if s <= p {
        for (j, (l, v)) in eig.iter().take(s).enumerate() {
            let scale = l.max(config.min_variance_floor).sqrt();
            c.set_column(j, &(v * scale));
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let g = DMatrix::from_fn(s, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let basis = g.qr().q(); // s × p, orthonormal columns
        let scale = (cov.trace() / p as f64).max(config.min_variance_floor).sqrt();
        c = basis.transpose() * scale;
    }
    let mut y1 = DVector::zeros(p);
    for ys in &seqs {
        y1 += &ys[0];
    }
    y1 /= seqs.len() as f64;
    let ctc = c.transpose() * &c;
    let init_mean = pinv_psd(&ctc, 1e-12) * c.transpose() * y1;
    let params = LgssmParams {
        a: DMatrix::identity(s, s) * 0.5,
        b: DMatrix::zeros(s, d),
        c,
        q: DMatrix::identity(s, s),
        r: DMatrix::identity(p, p),
        init_mean,
        init_cov: DMatrix::identity(s, s),
    };
    validate_lgssm(&params).into_result()?;
    Ok(params)
}

// ---------------------------------------------------------------------------
// EM loop
// ---------------------------------------------------------------------------

fn run_em<P: Clone, S>(
    init: P,
    config: &EmConfig,
    mut e_step: impl FnMut(&P) -> Result<(f64, S)>,
    mut m_step: impl FnMut(&S, &P) -> Result<P>,
) -> EmReport<P> {
    let mut params = init;
    let mut previous: Option<P> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut stop_reason = StopReason::MaxIters;
    let mut converged = false;

    for _ in 0..config.max_iters {
        let (ll, stats) = match e_step(&params) {
            Ok(v) => v,
            Err(e) => {
                stop_reason = StopReason::NumericalFault(e.to_string());
                break;
            }
        };
        if let Some(&prev) = trace.last() {
            trace.push(ll);
            if ll < prev - MONOTONE_SLACK || ll.is_nan() {
                log::warn!("log-likelihood fell from {prev} to {ll}");
                stop_reason = StopReason::LikelihoodDecreaseFault;
                if let Some(p) = previous.take() {
                    params = p;
                    iterations -= 1;
                }
                break;
            }
            if (ll - prev).abs() / (ll.abs() + 1.0) < config.rel_tol {
                stop_reason = StopReason::Tolerance;
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        match m_step(&stats, &params) {
            Ok(next) => {
                previous = Some(std::mem::replace(&mut params, next));
                iterations += 1;
            }
            Err(e) => {
                stop_reason = StopReason::NumericalFault(e.to_string());
                break;
            }
        }
        log::debug!("EM iteration {iterations}: log-likelihood {ll}");
    }

    EmReport {
        iterations,
        log_likelihood_trace: trace,
        final_params: params,
        converged,
        stop_reason,
    }
}

fn check_hmm_data(params: &HmmParams, sequences: &[ObservationSequence]) -> Result<()> {
    let family = params.family();
    for (i, seq) in sequences.iter().enumerate() {
        let ok = match (family, seq) {
            (Some(EmissionFamily::Categorical { alphabet }), ObservationSequence::Symbols(ys)) => {
                if let Some(&y) = ys.iter().find(|&&y| y >= alphabet) {
                    return Err(Error::Dimension(format!(
                        "symbol {y} outside alphabet of size {alphabet}"
                    ))
                    .in_sequence(i));
                }
                true
            }
            (Some(EmissionFamily::Gaussian { dim }), ObservationSequence::Vectors(_)) => {
                if seq.vector_dim().is_some_and(|p| p != dim) {
                    return Err(Error::Dimension(format!(
                        "observations have dimension {}, emissions {dim}",
                        seq.vector_dim().unwrap_or(0)
                    ))
                    .in_sequence(i));
                }
                true
            }
            _ => false,
        };
        if !ok {
            return Err(Error::KindMismatch(format!("{family:?}")).in_sequence(i));
        }
    }
    Ok(())
}

fn check_lgssm_data(params: &LgssmParams, sequences: &[SequenceData]) -> Result<()> {
    for (i, seq) in sequences.iter().enumerate() {
        let dim = match &seq.obs {
            ObservationSequence::Vectors(_) => seq.obs.vector_dim(),
            ObservationSequence::Symbols(_) => {
                return Err(Error::KindMismatch("LG-SSM needs vector observations".into())
                    .in_sequence(i))
            }
        };
        if dim.is_some_and(|p| p != params.obs_dim()) {
            return Err(Error::Dimension(format!(
                "observations have dimension {}, model {}",
                dim.unwrap_or(0),
                params.obs_dim()
            ))
            .in_sequence(i));
        }
        seq.inputs
            .check_for(params.input_dim(), seq.obs.len())
            .map_err(|e| e.in_sequence(i))?;
    }
    Ok(())
}

pub fn fit_hmm(
    init: HmmParams,
    sequences: &[ObservationSequence],
    config: &EmConfig,
) -> Result<EmReport<HmmParams>> {
    fit_hmm_with(Exec::default(), init, sequences, config)
}

pub fn fit_hmm_with(
    exec: Exec,
    init: HmmParams,
    sequences: &[ObservationSequence],
    config: &EmConfig,
) -> Result<EmReport<HmmParams>> {
    config.validate()?;
    validate_hmm(&init).into_result()?;
    if sequences.is_empty() {
        return Err(Error::Dimension("no sequences".into()));
    }
    check_hmm_data(&init, sequences)?;
    Ok(run_em(
        init,
        config,
        |p| {
            let e = hmm_e_step_with(exec, p, sequences)?;
            let stats = hmm_stats(p, &e, sequences)?;
            Ok((e.log_likelihood, stats))
        },
        |stats, p| hmm_m_step(stats, p, config).map(|m| m.params),
    ))
}

pub fn fit_lgssm(
    init: LgssmParams,
    sequences: &[SequenceData],
    config: &EmConfig,
) -> Result<EmReport<LgssmParams>> {
    fit_lgssm_with(Exec::default(), init, sequences, config)
}

pub fn fit_lgssm_with(
    exec: Exec,
    init: LgssmParams,
    sequences: &[SequenceData],
    config: &EmConfig,
) -> Result<EmReport<LgssmParams>> {
    config.validate()?;
    validate_lgssm(&init).into_result()?;
    if sequences.is_empty() {
        return Err(Error::Dimension("no sequences".into()));
    }
    check_lgssm_data(&init, sequences)?;
    Ok(run_em(
        init,
        config,
        |p| {
            let e = lgssm_e_step_with(exec, p, sequences)?;
            let stats = lgssm_stats(p, &e, sequences)?;
            Ok((e.log_likelihood, stats))
        },
        |stats, p| lgssm_m_step(stats, p, config),
    ))
}

/// Initial parameters for [`em_fit`].
#[derive(Clone, Debug)]
pub enum FitInit {
    Hmm(HmmParams),
    Lgssm(LgssmParams),
}

#[derive(Clone, Debug)]
pub enum FitReport {
    Hmm(EmReport<HmmParams>),
    Lgssm(EmReport<LgssmParams>),
}

/// Family-dispatching entry point over [`fit_hmm`] and [`fit_lgssm`].
pub fn em_fit(init: FitInit, data: &[SequenceData], config: &EmConfig) -> Result<FitReport> {
    match init {
        FitInit::Hmm(p) => {
            let seqs: Vec<ObservationSequence> = data.iter().map(|d| d.obs.clone()).collect();
            fit_hmm(p, &seqs, config).map(FitReport::Hmm)
        }
        FitInit::Lgssm(p) => fit_lgssm(p, data, config).map(FitReport::Lgssm),
    }
}
