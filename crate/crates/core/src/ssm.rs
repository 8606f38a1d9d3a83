//! Deterministic discretized state space models: discretization of a
//! continuous-time system, the recurrent scan, and the equivalent causal
//! convolution kernel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{from_rows, to_rows};
use crate::model::{
    validate_continuous, validate_discrete, ContinuousSsmParams, DiscreteSsmParams,
    DiscretizationRule, InputSequence,
};

/// Above this condition number of `A` the closed-form ZOH input matrix
/// `A⁻¹(Ā − I)B` is abandoned for the series form.
pub const ZOH_COND_MAX: f64 = 1e12;
/// Reciprocal condition below which `(I − Δt/2·A)` counts as singular.
pub const BILINEAR_RCOND_MIN: f64 = 1e-13;

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371_920_351_148_152;

fn norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return a.clone();
    }
    let norm = norm1(a);
    if !norm.is_finite() {
        return DMatrix::from_element(n, n, f64::NAN);
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(squarings);
    let b = &PADE13;
    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &eye * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &eye * b[0];
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

fn rcond_svd(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// `∫₀^Δt e^{Aτ} dτ · B = Σ_m Δt^{m+1} A^m / (m+1)! · B`, read off the
/// top-right block of `exp(Δt [[A, B], [0, 0]])`.
fn zoh_input_series(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let (s, d) = (a.nrows(), b.ncols());
    let mut aug = DMatrix::zeros(s + d, s + d);
    aug.view_mut((0, 0), (s, s)).copy_from(&(a * dt));
    aug.view_mut((0, s), (s, d)).copy_from(&(b * dt));
    expm(&aug).view((0, s), (s, d)).into_owned()
}

/// Converts `h' = A h + B x` into `h_{k+1} = Ā h_k + B̄ x_k` at step `dt`.
/// The feedthrough `D` is dropped; `C` is copied.
pub fn discretize(
    cont: &ContinuousSsmParams,
    dt: f64,
    rule: DiscretizationRule,
) -> Result<DiscreteSsmParams> {
    validate_continuous(cont).into_result()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Dimension(format!("step size must be positive, got {dt}")));
    }
    let s = cont.a.nrows();
    let eye = DMatrix::<f64>::identity(s, s);
    let (a_bar, b_bar) = match rule {
        DiscretizationRule::Zoh => {
            let a_bar = expm(&(&cont.a * dt));
            let rc = rcond_svd(&cont.a);
            let b_bar = if s > 0 && rc > 1.0 / ZOH_COND_MAX {
                cont.a
                    .clone()
                    .lu()
                    .solve(&((&a_bar - &eye) * &cont.b))
                    .ok_or_else(|| Error::Singular("zoh: A is singular".into()))?
            } else {
                zoh_input_series(&cont.a, &cont.b, dt)
            };
            (a_bar, b_bar)
        }
        DiscretizationRule::Bilinear => {
            let half = &cont.a * (0.5 * dt);
            let left = &eye - &half;
            if rcond_svd(&left) < BILINEAR_RCOND_MIN {
                return Err(Error::Singular(
                    "bilinear: (I - dt/2 A) is numerically singular".into(),
                ));
            }
            let lu = left.lu();
            let a_bar = lu
                .solve(&(&eye + &half))
                .ok_or_else(|| Error::Singular("bilinear: (I - dt/2 A) is singular".into()))?;
            let b_bar = lu
                .solve(&(&cont.b * dt))
                .ok_or_else(|| Error::Singular("bilinear: (I - dt/2 A) is singular".into()))?;
            (a_bar, b_bar)
        }
    };
    Ok(DiscreteSsmParams {
        a_bar,
        b_bar,
        c: cont.c.clone(),
        step_size: Some(dt),
        rule: Some(rule),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanOutput {
    /// `h_1..h_T`.
    pub states: Vec<DVector<f64>>,
    /// `y_1..y_T` with `y_k = C h_k`.
    pub outputs: Vec<DVector<f64>>,
    /// `h_{T+1}`, produced by the last input.
    pub final_state: DVector<f64>,
}

fn check_scan_shapes(params: &DiscreteSsmParams, inputs: &InputSequence) -> Result<()> {
    validate_discrete(params).into_result()?;
    if inputs.dim() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "system takes {}-dimensional inputs, sequence has {}",
            params.input_dim(),
            inputs.dim()
        )));
    }
    Ok(())
}

/// Runs `h_{k+1} = Ā h_k + B̄ x_k`, `y_k = C h_k` from `h_1 = h_init`.
pub fn scan(
    params: &DiscreteSsmParams,
    inputs: &InputSequence,
    h_init: &DVector<f64>,
) -> Result<ScanOutput> {
    check_scan_shapes(params, inputs)?;
    if h_init.len() != params.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has dimension {}, system has {}",
            h_init.len(),
            params.state_dim()
        )));
    }
    let mut h = h_init.clone();
    let mut states = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(inputs.len());
    for x in inputs.items() {
        outputs.push(&params.c * &h);
        let next = &params.a_bar * &h + &params.b_bar * x;
        states.push(std::mem::replace(&mut h, next));
    }
    Ok(ScanOutput {
        states,
        outputs,
        final_state: h,
    })
}

/// Evaluates `y_k = C(Ā h_{k-1} + B̄ x_{k-1})` both as written and
/// regrouped as `(CĀ) h_{k-1} + (CB̄) x_{k-1}`.
pub fn one_step_unroll_check(
    params: &DiscreteSsmParams,
    h_prev: &DVector<f64>,
    x_prev: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    validate_discrete(params).into_result()?;
    if h_prev.len() != params.state_dim() || x_prev.len() != params.input_dim() {
        return Err(Error::Dimension("state or input has the wrong dimension".into()));
    }
    let lhs = &params.c * (&params.a_bar * h_prev + &params.b_bar * x_prev);
    let ca = &params.c * &params.a_bar;
    let cb = &params.c * &params.b_bar;
    let rhs = ca * h_prev + cb * x_prev;
    Ok((lhs, rhs))
}

/// Impulse-response taps `C Ā^j B̄`, `j = 0..L`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmKernel {
    pub taps: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct KernelFile {
    length: usize,
    obs_dim: usize,
    input_dim: usize,
    taps: Vec<Vec<Vec<f64>>>,
}

impl SsmKernel {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.taps.first().map_or(0, |t| t.nrows())
    }

    pub fn input_dim(&self) -> usize {
        self.taps.first().map_or(0, |t| t.ncols())
    }

    /// JSON with taps as `L × p × d` row-major nested arrays.
    pub fn to_json_string(&self) -> String {
        let file = KernelFile {
            length: self.len(),
            obs_dim: self.obs_dim(),
            input_dim: self.input_dim(),
            taps: self.taps.iter().map(to_rows).collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("kernel serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: KernelFile = serde_json::from_str(s)?;
        if file.taps.len() != file.length {
            return Err(Error::Parse(format!(
                "kernel declares {} taps but has {}",
                file.length,
                file.taps.len()
            )));
        }
        let taps = file
            .taps
            .iter()
            .map(|rows| {
                if rows.len() != file.obs_dim {
                    return Err(Error::Parse("tap has the wrong number of rows".into()));
                }
                from_rows(rows, file.input_dim)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SsmKernel { taps })
    }
}

pub fn convolution_kernel(params: &DiscreteSsmParams, length: usize) -> Result<SsmKernel> {
    validate_discrete(params).into_result()?;
    if length == 0 {
        return Err(Error::Dimension("kernel length must be at least 1".into()));
    }
    let mut taps = Vec::with_capacity(length);
    let mut power_b = params.b_bar.clone(); // Ā^j B̄
    for j in 0..length {
        taps.push(&params.c * &power_b);
        if j + 1 < length {
            power_b = &params.a_bar * power_b;
        }
    }
    Ok(SsmKernel { taps })
}

/// Causal convolution `y_k = Σ_{j} taps[j] x_{k-1-j}` with `y_1 = 0`,
/// truncated at the kernel length.
pub fn apply_kernel(kernel: &SsmKernel, inputs: &InputSequence) -> Result<Vec<DVector<f64>>> {
    apply_kernel_with(Exec::default(), kernel, inputs)
}

pub fn apply_kernel_with(
    exec: Exec,
    kernel: &SsmKernel,
    inputs: &InputSequence,
) -> Result<Vec<DVector<f64>>> {
    if kernel.is_empty() {
        return Err(Error::Dimension("kernel has no taps".into()));
    }
    if inputs.dim() != kernel.input_dim() {
        return Err(Error::Dimension(format!(
            "kernel takes {}-dimensional inputs, sequence has {}",
            kernel.input_dim(),
            inputs.dim()
        )));
    }
    let xs = inputs.items();
    let p = kernel.obs_dim();
    Ok(exec.map_range(xs.len(), |k| {
        let mut y = DVector::zeros(p);
        let reach = k.min(kernel.len());
        for j in 0..reach {
            y.gemv(1.0, &kernel.taps[j], &xs[k - 1 - j], 1.0);
        }
        y
    }))
}
