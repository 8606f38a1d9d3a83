//! Parameter types for the three model families, sequence containers,
//! structural validation and ancestral sampling.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{max_asymmetry, min_eigenvalue, psd_sqrt, SpdFactor};

/// Tolerance for probability vectors summing to one.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Tolerance for covariance symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum Emission {
    /// Probability vector over symbols `0..V`.
    Categorical(Vec<f64>),
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmissionFamily {
    Categorical { alphabet: usize },
    Gaussian { dim: usize },
}

impl Emission {
    pub fn family(&self) -> EmissionFamily {
        match self {
            Emission::Categorical(p) => EmissionFamily::Categorical { alphabet: p.len() },
            Emission::Gaussian { mean, .. } => EmissionFamily::Gaussian { dim: mean.len() },
        }
    }
}

/// Discrete-state hidden Markov model. States are `0..K`.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmParams {
    pub initial: Vec<f64>,
    /// Row-stochastic; `transition[(i, j)] = P(h_k = j | h_{k-1} = i)`.
    pub transition: DMatrix<f64>,
    pub emissions: Vec<Emission>,
}

impl HmmParams {
    pub fn num_states(&self) -> usize {
        self.initial.len()
    }

    pub fn family(&self) -> Option<EmissionFamily> {
        self.emissions.first().map(Emission::family)
    }
}

/// Linear Gaussian state space model
/// `h_{k+1} = A h_k + B x_k + w_k`, `y_k = C h_k + v_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LgssmParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
}

impl LgssmParams {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Continuous-time system `h' = A h + B x`, `y = C h + D x`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousSsmParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscretizationRule {
    Zoh,
    Bilinear,
}

impl DiscretizationRule {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscretizationRule::Zoh => "zoh",
            DiscretizationRule::Bilinear => "bilinear",
        }
    }
}

impl std::str::FromStr for DiscretizationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zoh" => Ok(DiscretizationRule::Zoh),
            "bilinear" => Ok(DiscretizationRule::Bilinear),
            other => Err(Error::Parse(format!(
                "unknown discretization rule {other:?} (expected zoh or bilinear)"
            ))),
        }
    }
}

/// Deterministic discrete system `h_{k+1} = Ā h_k + B̄ x_k`, `y_k = C h_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsmParams {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Step size used when produced by discretization.
    pub step_size: Option<f64>,
    pub rule: Option<DiscretizationRule>,
}

impl DiscreteSsmParams {
    pub fn new(a_bar: DMatrix<f64>, b_bar: DMatrix<f64>, c: DMatrix<f64>) -> Self {
        DiscreteSsmParams {
            a_bar,
            b_bar,
            c,
            step_size: None,
            rule: None,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_bar.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Observations `y_{1:T}`, all symbols or all vectors of one dimension.
#[derive(Clone, Debug, PartialEq)]
pub enum ObservationSequence {
    Symbols(Vec<usize>),
    Vectors(Vec<DVector<f64>>),
}

impl ObservationSequence {
    pub fn len(&self) -> usize {
        match self {
            ObservationSequence::Symbols(s) => s.len(),
            ObservationSequence::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds a vector sequence, checking every item has the same dimension.
    pub fn vectors(items: Vec<DVector<f64>>) -> Result<Self> {
        if let Some(first) = items.first() {
            let p = first.len();
            if let Some(k) = items.iter().position(|v| v.len() != p) {
                return Err(Error::Dimension(format!(
                    "observation {k} has dimension {} but the sequence has {p}",
                    items[k].len()
                )));
            }
        }
        Ok(ObservationSequence::Vectors(items))
    }

    pub fn as_vectors(&self) -> Result<&[DVector<f64>]> {
        match self {
            ObservationSequence::Vectors(v) => Ok(v),
            ObservationSequence::Symbols(_) => Err(Error::KindMismatch(
                "expected continuous observations, found symbols".into(),
            )),
        }
    }

    pub fn as_symbols(&self) -> Result<&[usize]> {
        match self {
            ObservationSequence::Symbols(s) => Ok(s),
            ObservationSequence::Vectors(_) => Err(Error::KindMismatch(
                "expected symbol observations, found vectors".into(),
            )),
        }
    }

    /// Output dimension for vector sequences.
    pub fn vector_dim(&self) -> Option<usize> {
        match self {
            ObservationSequence::Vectors(v) => v.first().map(|x| x.len()),
            ObservationSequence::Symbols(_) => None,
        }
    }
}

/// Inputs `x_{1:T}` of a common dimension `d`; `d = 0` sequences carry no data.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSequence {
    dim: usize,
    items: Vec<DVector<f64>>,
}

impl InputSequence {
    pub fn new(dim: usize, items: Vec<DVector<f64>>) -> Result<Self> {
        if let Some(k) = items.iter().position(|v| v.len() != dim) {
            return Err(Error::Dimension(format!(
                "input {k} has dimension {} but expected {dim}",
                items[k].len()
            )));
        }
        Ok(InputSequence { dim, items })
    }

    pub const EMPTY: InputSequence = InputSequence {
        dim: 0,
        items: Vec::new(),
    };

    pub fn empty() -> Self {
        Self::EMPTY
    }

    pub fn zeros(dim: usize, len: usize) -> Self {
        InputSequence {
            dim,
            items: vec![DVector::zeros(dim); len],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[DVector<f64>] {
        &self.items
    }

    /// The input driving the transition out of step `k` (0-based), or a
    /// zero vector when the model takes no input.
    pub(crate) fn driving(&self, k: usize, d: usize) -> DVector<f64> {
        if d == 0 {
            DVector::zeros(0)
        } else {
            self.items[k].clone()
        }
    }

    /// Checks these inputs can drive a `d`-input model over `t` steps.
    pub fn check_for(&self, d: usize, t: usize) -> Result<()> {
        if d == 0 {
            return Ok(());
        }
        if self.dim != d {
            return Err(Error::Dimension(format!(
                "model takes {d}-dimensional inputs, sequence has dimension {}",
                self.dim
            )));
        }
        if self.items.len() + 1 < t {
            return Err(Error::Dimension(format!(
                "{} inputs cannot drive {} transitions",
                self.items.len(),
                t.saturating_sub(1)
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::Invalid(self))
        }
    }

    pub fn has(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

fn check_probability_vector(report: &mut ValidationReport, field: &str, p: &[f64]) {
    if p.is_empty() {
        report.push(field, "is empty");
        return;
    }
    for (i, &v) in p.iter().enumerate() {
        if !v.is_finite() {
            report.push(field, format!("entry {i} is not finite"));
        } else if v < -STOCHASTIC_TOL {
            report.push(field, format!("entry {i} is negative ({v})"));
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        report.push(field, format!("sums to {sum}"));
    }
}

fn check_shape(report: &mut ValidationReport, field: &str, m: &DMatrix<f64>, r: usize, c: usize) -> bool {
    if m.shape() != (r, c) {
        report.push(
            field,
            format!("has shape {}x{}, expected {r}x{c}", m.nrows(), m.ncols()),
        );
        return false;
    }
    if m.iter().any(|v| !v.is_finite()) {
        report.push(field, "has non-finite entries");
        return false;
    }
    true
}

fn check_covariance(report: &mut ValidationReport, field: &str, m: &DMatrix<f64>, definite: bool) {
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL {
        report.push(field, format!("{field} asymmetric (max deviation {asym:e})"));
        return;
    }
    if definite {
        let pd = SpdFactor::new(m).is_some() && min_eigenvalue(m) > 0.0;
        if !pd {
            report.push(field, format!("{field} not positive definite"));
        }
    } else {
        let lo = min_eigenvalue(m);
        if lo < -SYMMETRY_TOL {
            report.push(
                field,
                format!("{field} not positive semidefinite (min eigenvalue {lo:e})"),
            );
        }
    }
}

pub fn validate_hmm(params: &HmmParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    let k = params.num_states();
    if k == 0 {
        report.push("num_states", "must be positive");
        return report;
    }
    check_probability_vector(&mut report, "initial_dist", &params.initial);
    if check_shape(&mut report, "transition", &params.transition, k, k) {
        for i in 0..k {
            let row: Vec<f64> = params.transition.row(i).iter().copied().collect();
            for (j, &v) in row.iter().enumerate() {
                if v < -STOCHASTIC_TOL {
                    report.push("transition", format!("row {i} entry {j} is negative ({v})"));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                report.push("transition", format!("row {i} sums to {sum}"));
            }
        }
    }
    if params.emissions.len() != k {
        report.push(
            "emissions",
            format!("has {} entries for {k} states", params.emissions.len()),
        );
        return report;
    }
    let family = params.emissions[0].family();
    for (i, e) in params.emissions.iter().enumerate() {
        let field = format!("emissions[{i}]");
        if e.family() != family {
            report.push(field.as_str(), "does not share the family/dimension of emissions[0]");
            continue;
        }
        match e {
            Emission::Categorical(p) => check_probability_vector(&mut report, &field, p),
            Emission::Gaussian { mean, cov } => {
                let p = mean.len();
                if p == 0 {
                    report.push(field.as_str(), "has zero dimension");
                    continue;
                }
                if mean.iter().any(|v| !v.is_finite()) {
                    report.push(field.as_str(), "mean has non-finite entries");
                }
                if check_shape(&mut report, &format!("{field}.cov"), cov, p, p) {
                    check_covariance(&mut report, &format!("{field}.cov"), cov, true);
                }
            }
        }
    }
    report
}

pub fn validate_lgssm(params: &LgssmParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    let s = params.a.nrows();
    let p = params.c.nrows();
    let d = params.b.ncols();
    if s == 0 {
        report.push("state_dim", "must be positive");
        return report;
    }
    if p == 0 {
        report.push("obs_dim", "must be positive");
        return report;
    }
    check_shape(&mut report, "A", &params.a, s, s);
    check_shape(&mut report, "B", &params.b, s, d);
    check_shape(&mut report, "C", &params.c, p, s);
    if check_shape(&mut report, "Q", &params.q, s, s) {
        check_covariance(&mut report, "Q", &params.q, false);
    }
    if check_shape(&mut report, "R", &params.r, p, p) {
        check_covariance(&mut report, "R", &params.r, true);
    }
    if params.init_mean.len() != s {
        report.push(
            "init_mean",
            format!("has length {}, expected {s}", params.init_mean.len()),
        );
    } else if params.init_mean.iter().any(|v| !v.is_finite()) {
        report.push("init_mean", "has non-finite entries");
    }
    if check_shape(&mut report, "init_cov", &params.init_cov, s, s) {
        check_covariance(&mut report, "init_cov", &params.init_cov, false);
    }
    report
}

pub fn validate_continuous(params: &ContinuousSsmParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    let s = params.a.nrows();
    let d = params.b.ncols();
    let p = params.c.nrows();
    check_shape(&mut report, "A", &params.a, s, s);
    check_shape(&mut report, "B", &params.b, s, d);
    check_shape(&mut report, "C", &params.c, p, s);
    check_shape(&mut report, "D", &params.d, p, d);
    report
}

pub fn validate_discrete(params: &DiscreteSsmParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    let s = params.a_bar.nrows();
    let d = params.b_bar.ncols();
    let p = params.c.nrows();
    check_shape(&mut report, "A_bar", &params.a_bar, s, s);
    check_shape(&mut report, "B_bar", &params.b_bar, s, d);
    check_shape(&mut report, "C", &params.c, p, s);
    if let Some(dt) = params.step_size {
        if !(dt > 0.0 && dt.is_finite()) {
            report.push("step_size", format!("must be positive, got {dt}"));
        }
    }
    report
}

fn draw_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn draw_gaussian(rng: &mut ChaCha8Rng, mean: &DVector<f64>, sqrt_cov: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(sqrt_cov.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + sqrt_cov * z
}

fn check_length(length: usize) -> Result<()> {
    if length == 0 {
        let mut report = ValidationReport::default();
        report.push("length", "must be at least 1");
        return Err(Error::Invalid(report));
    }
    Ok(())
}

/// Draws a state path and observations from an HMM.
pub fn sample_hmm(
    params: &HmmParams,
    length: usize,
    seed: u64,
) -> Result<(Vec<usize>, ObservationSequence)> {
    validate_hmm(params).into_result()?;
    check_length(length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = params.num_states();
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| params.transition.row(i).iter().copied().collect())
        .collect();
    let roots: Vec<Option<DMatrix<f64>>> = params
        .emissions
        .iter()
        .map(|e| match e {
            Emission::Gaussian { cov, .. } => Some(psd_sqrt(cov)),
            Emission::Categorical(_) => None,
        })
        .collect();

    let mut states = Vec::with_capacity(length);
    let mut state = draw_categorical(&mut rng, &params.initial);
    states.push(state);
    for _ in 1..length {
        state = draw_categorical(&mut rng, &rows[state]);
        states.push(state);
    }
    let obs = match params.family() {
        Some(EmissionFamily::Categorical { .. }) => ObservationSequence::Symbols(
            states
                .iter()
                .map(|&h| match &params.emissions[h] {
                    Emission::Categorical(p) => draw_categorical(&mut rng, p),
                    Emission::Gaussian { .. } => unreachable!(),
                })
                .collect(),
        ),
        _ => ObservationSequence::Vectors(
            states
                .iter()
                .map(|&h| match (&params.emissions[h], &roots[h]) {
                    (Emission::Gaussian { mean, .. }, Some(root)) => {
                        draw_gaussian(&mut rng, mean, root)
                    }
                    _ => unreachable!(),
                })
                .collect(),
        ),
    };
    Ok((states, obs))
}

/// Draws a latent trajectory and observations from an LG-SSM. The
/// transition into step `k + 1` consumes `inputs[k]`.
pub fn sample_lgssm(
    params: &LgssmParams,
    inputs: &InputSequence,
    length: usize,
    seed: u64,
) -> Result<(Vec<DVector<f64>>, ObservationSequence)> {
    validate_lgssm(params).into_result()?;
    check_length(length)?;
    let d = params.input_dim();
    inputs.check_for(d, length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_root = psd_sqrt(&params.init_cov);
    let q_root = psd_sqrt(&params.q);
    let r_root = psd_sqrt(&params.r);
    let zero_s = DVector::zeros(params.state_dim());
    let zero_p = DVector::zeros(params.obs_dim());

    let mut states = Vec::with_capacity(length);
    let mut obs = Vec::with_capacity(length);
    let mut h = draw_gaussian(&mut rng, &params.init_mean, &init_root);
    for k in 0..length {
        let y = &params.c * &h + draw_gaussian(&mut rng, &zero_p, &r_root);
        obs.push(y);
        states.push(h.clone());
        if k + 1 < length {
            let x = inputs.driving(k, d);
            h = &params.a * &h + &params.b * x + draw_gaussian(&mut rng, &zero_s, &q_root);
        }
    }
    Ok((states, ObservationSequence::Vectors(obs)))
}
