//! Qualitative capability matrix across the model families, and a
//! quantitative side-by-side fit of an HMM and an LG-SSM on the same data.

use serde::Serialize;

use crate::em::{fit_hmm, fit_lgssm, hmm_e_step, init_hmm, init_lgssm, lgssm_e_step, EmConfig};
use crate::error::{Error, Result};
use crate::io::SequenceData;
use crate::model::{EmissionFamily, HmmParams, LgssmParams, ObservationSequence};

pub const MODELS: [&str; 4] = ["HMM", "LG-SSM", "Kalman Filter", "NLP SSM (S4/Mamba)"];

pub const ATTRIBUTES: [&str; 8] = [
    "Latent state",
    "Time",
    "Stochastic",
    "PGM defined",
    "Inference",
    "Training",
    "Uncertainty",
    "Role",
];

/// `CAPABILITIES[attribute][model]`, indexed like [`ATTRIBUTES`] × [`MODELS`].
pub const CAPABILITIES: [[&str; 4]; 8] = [
    ["Discrete", "Continuous", "Continuous", "Continuous"],
    ["Discrete", "Discrete", "Discrete", "Discrete"],
    ["Yes", "Yes", "Yes", "No"],
    ["Yes", "Yes", "N/A", "No"],
    ["Forward–Backward", "Kalman smoother", "Kalman filter", "Forward scan"],
    ["EM", "EM", "N/A", "Backpropagation"],
    ["State identity", "Trajectory", "Trajectory", "None"],
    ["Probabilistic model", "Probabilistic model", "Algorithm", "Deterministic model"],
];

/// Notes attached to cells or rows as `(attribute, model, note)`.
pub const FOOTNOTES: [(&str, &str, &str); 3] = [
    (
        "PGM defined",
        "NLP SSM (S4/Mamba)",
        "Deterministic as used in practice; the computation graph can be wrapped in a probabilistic model, but it is not trained as one.",
    ),
    (
        "PGM defined",
        "Kalman Filter",
        "An inference algorithm for LG-SSMs rather than a model, so no graphical model applies.",
    ),
    (
        "Time",
        "all columns",
        "Discrete time refers to step indexing only; it says nothing about the latent state space.",
    ),
];

pub fn capability(attribute: &str, model: &str) -> Option<&'static str> {
    let a = ATTRIBUTES.iter().position(|x| *x == attribute)?;
    let m = MODELS.iter().position(|x| *x == model)?;
    Some(CAPABILITIES[a][m])
}

#[derive(Clone, Debug, Serialize)]
pub struct CapabilityRow {
    pub attribute: &'static str,
    pub cells: Vec<&'static str>,
}

pub fn capability_table() -> Vec<CapabilityRow> {
    ATTRIBUTES
        .iter()
        .zip(CAPABILITIES.iter())
        .map(|(a, row)| CapabilityRow {
            attribute: a,
            cells: row.to_vec(),
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FitSummary {
    pub log_likelihood: f64,
    pub log_likelihood_per_step: f64,
    pub parameter_count: usize,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyResult {
    pub family: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub models: Vec<&'static str>,
    pub capabilities: Vec<CapabilityRow>,
    pub footnotes: Vec<String>,
    pub num_steps: usize,
    pub results: Vec<FamilyResult>,
}

/// Free parameters of a Gaussian-emission HMM.
pub fn hmm_parameter_count(params: &HmmParams) -> usize {
    let k = params.num_states();
    let emission = match params.family() {
        Some(EmissionFamily::Gaussian { dim }) => dim + dim * (dim + 1) / 2,
        Some(EmissionFamily::Categorical { alphabet }) => alphabet.saturating_sub(1),
        None => 0,
    };
    (k - 1) + k * (k - 1) + k * emission
}

pub fn lgssm_parameter_count(params: &LgssmParams) -> usize {
    let (s, d, p) = (params.state_dim(), params.input_dim(), params.obs_dim());
    s * s + s * d + p * s + s * (s + 1) / 2 + p * (p + 1) / 2 + s + s * (s + 1) / 2
}

fn summarize(ll: f64, steps: usize, count: usize, iterations: usize, converged: bool, stop: String) -> FitSummary {
    FitSummary {
        log_likelihood: ll,
        log_likelihood_per_step: ll / steps as f64,
        parameter_count: count,
        iterations,
        converged,
        stop_reason: stop,
    }
}

fn fit_hmm_family(data: &[SequenceData], states: usize, config: &EmConfig) -> Result<FitSummary> {
    let seqs: Vec<ObservationSequence> = data.iter().map(|d| d.obs.clone()).collect();
    let init = init_hmm(states, &seqs, config)?;
    let rep = fit_hmm(init, &seqs, config)?;
    if rep.stop_reason.is_fault() {
        return Err(Error::Singular(format!("HMM EM stopped: {}", rep.stop_reason)));
    }
    let ll = hmm_e_step(&rep.final_params, &seqs)?.log_likelihood;
    let steps = seqs.iter().map(|s| s.len()).sum();
    Ok(summarize(
        ll,
        steps,
        hmm_parameter_count(&rep.final_params),
        rep.iterations,
        rep.converged,
        rep.stop_reason.to_string(),
    ))
}

fn fit_lgssm_family(data: &[SequenceData], dim: usize, config: &EmConfig) -> Result<FitSummary> {
    let init = init_lgssm(dim, data, config)?;
    let rep = fit_lgssm(init, data, config)?;
    if rep.stop_reason.is_fault() {
        return Err(Error::Singular(format!("LG-SSM EM stopped: {}", rep.stop_reason)));
    }
    let ll = lgssm_e_step(&rep.final_params, data)?.log_likelihood;
    let steps = data.iter().map(|s| s.obs.len()).sum();
    Ok(summarize(
        ll,
        steps,
        lgssm_parameter_count(&rep.final_params),
        rep.iterations,
        rep.converged,
        rep.stop_reason.to_string(),
    ))
}

/// Fits both probabilistic families to the same continuous data. A failure
/// in one family is recorded in its row and does not affect the other.
pub fn compare_models(
    data: &[SequenceData],
    hmm_states: usize,
    lgssm_dim: usize,
    config: &EmConfig,
) -> Result<ComparisonReport> {
    if data.is_empty() {
        return Err(Error::Dimension("no sequences".into()));
    }
    for d in data {
        d.obs.as_vectors()?;
    }
    let row = |family, r: Result<FitSummary>| match r {
        Ok(fit) => FamilyResult {
            family,
            fit: Some(fit),
            error: None,
        },
        Err(e) => FamilyResult {
            family,
            fit: None,
            error: Some(e.to_string()),
        },
    };
    Ok(ComparisonReport {
        models: MODELS.to_vec(),
        capabilities: capability_table(),
        footnotes: FOOTNOTES
            .iter()
            .map(|(a, m, n)| format!("{a} / {m}: {n}"))
            .collect(),
        num_steps: data.iter().map(|d| d.obs.len()).sum(),
        results: vec![
            row("HMM", fit_hmm_family(data, hmm_states, config)),
            row("LG-SSM", fit_lgssm_family(data, lgssm_dim, config)),
        ],
    })
}

impl ComparisonReport {
    /// Plain-text rendering: the capability matrix then one line per family.
    pub fn to_text(&self) -> String {
        let width0 = ATTRIBUTES.iter().map(|a| a.chars().count()).max().unwrap_or(0);
        let widths: Vec<usize> = (0..MODELS.len())
            .map(|m| {
                std::iter::once(MODELS[m])
                    .chain(CAPABILITIES.iter().map(|r| r[m]))
                    .map(|c| c.chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
        let mut out = String::new();
        out.push_str(&pad("", width0));
        for (m, w) in MODELS.iter().zip(&widths) {
            out.push_str(" | ");
            out.push_str(&pad(m, *w));
        }
        out.push('\n');
        for row in &self.capabilities {
            out.push_str(&pad(row.attribute, width0));
            for (c, w) in row.cells.iter().zip(&widths) {
                out.push_str(" | ");
                out.push_str(&pad(c, *w));
            }
            out.push('\n');
        }
        for (i, note) in self.footnotes.iter().enumerate() {
            out.push_str(&format!("[{}] {note}\n", i + 1));
        }
        out.push('\n');
        for r in &self.results {
            match (&r.fit, &r.error) {
                (Some(f), _) => out.push_str(&format!(
                    "{:<7} log-lik/step {:>12.6}  params {:>4}  iterations {:>4}  {}\n",
                    r.family, f.log_likelihood_per_step, f.parameter_count, f.iterations, f.stop_reason
                )),
                (None, Some(e)) => out.push_str(&format!("{:<7} failed: {e}\n", r.family)),
                _ => {}
            }
        }
        out
    }
}
