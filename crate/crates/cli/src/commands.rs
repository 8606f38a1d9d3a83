use std::path::{Path, PathBuf};

use latent_chain::check::{check_hmm, check_lgssm, CheckReport};
use latent_chain::compare::compare_models;
use latent_chain::em::{fit_hmm, fit_lgssm, init_hmm, init_lgssm, EmConfig, EmReport};
use latent_chain::hmm::posterior_marginals;
use latent_chain::io::{read_sequence_csv, write_sequence_csv, Model, SequenceData, Table};
use latent_chain::kalman::{kalman_filter, rts_smoother};
use latent_chain::model::{
    sample_hmm, sample_lgssm, validate_continuous, validate_discrete, validate_hmm,
    validate_lgssm, InputSequence, ObservationSequence,
};
use latent_chain::ssm::{convolution_kernel, discretize as discretize_model};
use latent_chain::Error;
use serde::Serialize;

use crate::failure::{exit_code, Failure, EXIT_VALIDATION};
use crate::output::{sidecar, Run};
use crate::{
    CheckArgs, CompareArgs, DiscretizeArgs, EmFlags, Family, FitArgs, InferArgs, KernelArgs,
    Mode, SimulateArgs,
};

fn with_run<A: Serialize>(
    command: &'static str,
    args: &A,
    out: &Path,
    body: impl FnOnce(&mut Run) -> Result<(), Failure>,
) -> Result<(), Failure> {
    let mut run = Run::new(command);
    run.config = serde_json::json!({ "args": args });
    let outcome = body(&mut run);
    let written = run.finish(out, &outcome);
    outcome.and(written)
}

fn load_model(run: &mut Run, path: &Path) -> Result<Model, Failure> {
    let text = run.read_string(path)?;
    let model = Model::from_json_str(&text)
        .map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
    let report = match &model {
        Model::Hmm(p) => validate_hmm(p),
        Model::Lgssm(p) => validate_lgssm(p),
        Model::Continuous(p) => validate_continuous(p),
        Model::Discrete(p) => validate_discrete(p),
    };
    if !report.is_ok() {
        return Err(Failure::validation(format!("{}: {report}", path.display())));
    }
    Ok(model)
}

fn load_data(run: &mut Run, path: &Path) -> Result<SequenceData, Failure> {
    let bytes = run.read(path)?;
    read_sequence_csv(bytes.as_slice()).map_err(|e| {
        Failure::new(exit_code(&e), format!("{}: {e}", path.display()))
    })
}

fn load_all(run: &mut Run, paths: &[PathBuf]) -> Result<Vec<SequenceData>, Failure> {
    paths.iter().map(|p| load_data(run, p)).collect()
}

fn resolve_config(run: &mut Run, flags: &EmFlags) -> Result<EmConfig, Failure> {
    let mut config = match &flags.config {
        Some(path) => {
            let text = run.read_string(path)?;
            serde_json::from_str::<EmConfig>(&text)
                .map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?
        }
        None => EmConfig::default(),
    };
    if let Some(v) = flags.max_iters {
        config.max_iters = v;
    }
    if let Some(v) = flags.rel_tol {
        config.rel_tol = v;
    }
    if let Some(v) = flags.min_variance_floor {
        config.min_variance_floor = v;
    }
    if let Some(v) = flags.seed {
        config.seed = v;
    }
    config.validate().map_err(|e| Failure::validation(e.to_string()))?;
    run.config["em"] = serde_json::to_value(&config).expect("config serializes");
    run.seed = Some(config.seed);
    Ok(config)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> latent_chain::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    with_run("simulate", args, &args.out, |run| {
        run.seed = Some(args.seed);
        let model = load_model(run, &args.model)?;
        let states_path = sidecar(&args.out, "states.csv");
        match model {
            Model::Hmm(p) => {
                let (states, obs) = sample_hmm(&p, args.length, args.seed)?;
                let data = csv_bytes(|w| write_sequence_csv(w, &obs, &InputSequence::empty()))?;
                run.write(&args.out, &data)?;
                let mut text = String::from("state\n");
                for s in states {
                    text.push_str(&format!("{s}\n"));
                }
                run.write(&states_path, text.as_bytes())?;
            }
            Model::Lgssm(p) => {
                let inputs = InputSequence::zeros(p.input_dim(), args.length);
                let (states, obs) = sample_lgssm(&p, &inputs, args.length, args.seed)?;
                let data = csv_bytes(|w| write_sequence_csv(w, &obs, &inputs))?;
                run.write(&args.out, &data)?;
                let mut table = Table::new(numbered("h", p.state_dim()));
                for h in states {
                    table.push(h.iter().copied().collect());
                }
                run.write(&states_path, &csv_bytes(|w| table.write(w))?)?;
            }
            other => {
                return Err(Failure::validation(format!(
                    "cannot simulate a {} model; expected hmm or lgssm",
                    other.family_name()
                )))
            }
        }
        Ok(())
    })
}

fn write_trace(run: &mut Run, out: &Path, trace: &[f64]) -> Result<(), Failure> {
    let mut table = Table::new(vec!["iteration".into(), "log_likelihood".into()]);
    for (i, ll) in trace.iter().enumerate() {
        table.push(vec![i as f64, *ll]);
    }
    run.write(&sidecar(out, "trace.csv"), &csv_bytes(|w| table.write(w))?)
}

fn finish_fit<P>(
    run: &mut Run,
    out: &Path,
    report: &EmReport<P>,
    to_model: impl FnOnce(&P) -> Model,
) -> Result<(), Failure> {
    write_trace(run, out, &report.log_likelihood_trace)?;
    log::info!(
        "EM stopped after {} iterations: {}",
        report.iterations,
        report.stop_reason
    );
    if report.stop_reason.is_fault() {
        return Err(Failure::numeric(format!(
            "EM fault after {} iterations: {}",
            report.iterations, report.stop_reason
        )));
    }
    run.write(out, to_model(&report.final_params).to_json_string().as_bytes())?;
    match report.log_likelihood_trace.last() {
        Some(ll) => println!(
            "iterations {}  stop {}  log_likelihood {ll:?}",
            report.iterations, report.stop_reason
        ),
        None => println!("iterations 0  stop {}", report.stop_reason),
    }
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<(), Failure> {
    with_run("fit", args, &args.out, |run| {
        let config = resolve_config(run, &args.em)?;
        let data = load_all(run, &args.data)?;
        let init = if args.model == "auto" {
            None
        } else {
            Some(load_model(run, Path::new(&args.model))?)
        };
        match args.family {
            Family::Hmm => {
                let seqs: Vec<ObservationSequence> = data.into_iter().map(|d| d.obs).collect();
                let init = match init {
                    None => {
                        let k = args.states.ok_or_else(|| {
                            Failure::validation("--states is required with --model auto")
                        })?;
                        init_hmm(k, &seqs, &config)?
                    }
                    Some(Model::Hmm(p)) => p,
                    Some(m) => return Err(family_mismatch("hmm", &m)),
                };
                let report = fit_hmm(init, &seqs, &config)?;
                finish_fit(run, &args.out, &report, |p| Model::Hmm(p.clone()))
            }
            Family::Lgssm => {
                let init = match init {
                    None => {
                        let s = args.dim.ok_or_else(|| {
                            Failure::validation("--dim is required with --model auto")
                        })?;
                        init_lgssm(s, &data, &config)?
                    }
                    Some(Model::Lgssm(p)) => p,
                    Some(m) => return Err(family_mismatch("lgssm", &m)),
                };
                let report = fit_lgssm(init, &data, &config)?;
                finish_fit(run, &args.out, &report, |p| Model::Lgssm(p.clone()))
            }
        }
    })
}

fn family_mismatch(expected: &str, got: &Model) -> Failure {
    Failure::validation(format!(
        "expected a {expected} model, got {}",
        got.family_name()
    ))
}

pub fn infer(args: &InferArgs) -> Result<(), Failure> {
    with_run("infer", args, &args.out, |run| {
        let model = load_model(run, &args.model)?;
        let data = load_data(run, &args.data)?;
        match (&model, args.mode) {
            (Model::Hmm(p), None | Some(Mode::Marginals)) => {
                let post = posterior_marginals(p, &data.obs)?;
                let k = p.num_states();
                let mut gamma = Table::new(numbered("state", k));
                for row in &post.gamma {
                    gamma.push(row.clone());
                }
                let mut header = vec!["step".to_string()];
                for i in 0..k {
                    for j in 0..k {
                        header.push(format!("from{i}_to{j}"));
                    }
                }
                let mut xi = Table::new(header);
                for (t, m) in post.xi.iter().enumerate() {
                    let mut row = vec![(t + 1) as f64];
                    for i in 0..k {
                        row.extend(m.row(i).iter().copied());
                    }
                    xi.push(row);
                }
                run.write(&args.out, &csv_bytes(|w| gamma.write(w))?)?;
                run.write(&sidecar(&args.out, "xi.csv"), &csv_bytes(|w| xi.write(w))?)?;
                println!("log_likelihood {:?}", post.log_likelihood);
            }
            (Model::Lgssm(p), None | Some(Mode::Moments)) => {
                let filter = kalman_filter(p, &data.obs, &data.inputs)?;
                let smoother = rts_smoother(p, &filter)?;
                let s = p.state_dim();
                let mut header = numbered("mean", s);
                header.extend(numbered("var", s));
                let mut table = Table::new(header);
                for b in &smoother.smoothed {
                    let mut row: Vec<f64> = b.mean.iter().copied().collect();
                    row.extend(b.cov.diagonal().iter().copied());
                    table.push(row);
                }
                run.write(&args.out, &csv_bytes(|w| table.write(w))?)?;
                println!("log_likelihood {:?}", filter.log_likelihood);
            }
            (m, Some(mode)) => {
                return Err(Failure::validation(format!(
                    "mode {mode:?} does not apply to a {} model",
                    m.family_name()
                )))
            }
            (m, None) => {
                return Err(Failure::validation(format!(
                    "cannot run inference on a {} model",
                    m.family_name()
                )))
            }
        }
        Ok(())
    })
}

pub fn discretize(args: &DiscretizeArgs) -> Result<(), Failure> {
    with_run("discretize", args, &args.out, |run| {
        let model = load_model(run, &args.model)?;
        let Model::Continuous(cont) = model else {
            return Err(family_mismatch("ssm_continuous", &model));
        };
        let disc = discretize_model(&cont, args.dt, args.rule.into()).map_err(|e| match e {
            Error::Singular(msg) => Failure::new(EXIT_VALIDATION, msg),
            e => e.into(),
        })?;
        run.write(&args.out, Model::Discrete(disc).to_json_string().as_bytes())
    })
}

fn print_check(report: &CheckReport) {
    for d in &report.deviations {
        println!("{:<28} {:e}", d.quantity, d.max_abs);
    }
    println!(
        "{} (tolerance {:e})",
        if report.passed() { "PASS" } else { "FAIL" },
        report.tolerance
    );
}

pub fn check(args: &CheckArgs) -> Result<(), Failure> {
    with_run("check", args, &args.out, |run| {
        let model = load_model(run, &args.model)?;
        let data = load_data(run, &args.data)?;
        let report = match &model {
            Model::Hmm(p) => check_hmm(p, &data.obs, args.tol)?,
            Model::Lgssm(p) => check_lgssm(p, &data.obs, &data.inputs, args.tol)?,
            m => {
                return Err(Failure::validation(format!(
                    "no oracle for a {} model",
                    m.family_name()
                )))
            }
        };
        print_check(&report);
        let json = serde_json::json!({
            "passed": report.passed(),
            "tolerance": report.tolerance,
            "deviations": report.deviations,
        });
        let mut text = serde_json::to_string_pretty(&json).expect("report serializes");
        text.push('\n');
        run.write(&args.out, text.as_bytes())?;
        if report.passed() {
            Ok(())
        } else {
            Err(Failure::numeric(format!(
                "fast inference deviates from the oracle by {:e}",
                report.worst()
            )))
        }
    })
}

pub fn compare(args: &CompareArgs) -> Result<(), Failure> {
    with_run("compare", args, &args.out, |run| {
        let config = resolve_config(run, &args.em)?;
        let data = load_all(run, &args.data)?;
        let report = compare_models(&data, args.states, args.dim, &config)?;
        print!("{}", report.to_text());
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        run.write(&args.out, text.as_bytes())?;
        if report.results.iter().all(|r| r.fit.is_none()) {
            return Err(Failure::numeric("both families failed to fit"));
        }
        Ok(())
    })
}

pub fn kernel(args: &KernelArgs) -> Result<(), Failure> {
    with_run("kernel", args, &args.out, |run| {
        let model = load_model(run, &args.model)?;
        let disc = match (model, args.dt) {
            (Model::Discrete(d), None) => d,
            (Model::Continuous(c), Some(dt)) => discretize_model(&c, dt, args.rule.into())?,
            (Model::Continuous(_), None) => {
                return Err(Failure::validation("a continuous model needs --dt"))
            }
            (Model::Discrete(_), Some(_)) => {
                return Err(Failure::validation("--dt applies only to continuous models"))
            }
            (m, _) => return Err(family_mismatch("ssm_discrete", &m)),
        };
        let k = convolution_kernel(&disc, args.length)?;
        run.write(&args.out, k.to_json_string().as_bytes())
    })
}
