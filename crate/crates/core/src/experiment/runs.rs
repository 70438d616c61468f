use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::artifacts::{create_dir, with_writer, write_csv, write_json, write_params, write_samples};
use super::config::{DataConfig, ExperimentConfig, LnnConfig, SystemConfig};
use super::ExperimentError;
use crate::dynamics::{
    apply_coverage_wedge, apply_imbalance, nonconservative_norm, rk4_integrate, sample_gaussian_states, ForceSample,
    State, SystemSpec,
};
use crate::networks::Activation;
use crate::symbolic::{fit_template, residual_report, FitResult, SymbolicError, Template};
use crate::training::{
    detect_phase_transition, evaluate, lambda_sweep, misalignment_of, train, write_sweep_csv, write_trace_csv,
    Branches, LossNorm, LossReport, Nnphd, NnphdParams, SingularPolicy, SweepResult, SweepRow, TrainConfig,
    TrainingError,
};

/// Seed offsets separating the random streams derived from one master seed.
const TEST_STREAM: u64 = 1;
const COVERAGE_STREAM: u64 = 2;
const IMBALANCE_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;

/// Contents of `verdict.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub system: String,
    pub jump: f64,
    pub is_nonconservative: bool,
    pub tau: f64,
}

/// Agreement of the learned split with the truth at one λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlignmentRow {
    pub lambda: f64,
    pub m_c: f64,
    pub m_n: f64,
    /// Root mean square of the black-box branch output.
    pub fn_nn_rms: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub system: String,
    pub norm: LossNorm,
    pub dir: PathBuf,
    pub verdict: Verdict,
    pub rows: Vec<SweepRow>,
    /// Empty when the samples lack the true split.
    pub alignment: Vec<AlignmentRow>,
    /// True non-conservative force in the loss norm over the training set.
    pub fn_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecomposeRow {
    pub lambda: f64,
    pub loss: LossReport,
    pub m_c: f64,
    pub m_n: f64,
    pub fn_nn_rms: f64,
}

#[derive(Debug, Clone)]
pub struct DecomposeOutcome {
    pub system: String,
    pub norm: LossNorm,
    pub dir: PathBuf,
    pub rows: Vec<DecomposeRow>,
}

/// One coverage or imbalance setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QualityRow {
    pub fraction: f64,
    /// Loss over the filtered training set.
    pub loss: LossReport,
    /// Misalignment over an unfiltered Gaussian evaluation set.
    pub m_c: f64,
    pub m_n: f64,
}

#[derive(Debug, Clone, Default)]
pub struct QualityReport {
    pub coverage: Vec<QualityRow>,
    pub imbalance: Vec<QualityRow>,
}

#[derive(Debug, Clone)]
pub struct SymbolicReport {
    pub fit: FitResult,
    pub train_loss: LossReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrickOutcome {
    pub variant: String,
    pub quadratic_mix: bool,
    pub split: bool,
    /// Recovery error over the full training set after the schedule;
    /// infinite when every sample has a singular mass matrix.
    pub final_le: f64,
    /// Singular mass matrices met in training and in the final evaluation.
    pub singular_errors: usize,
    pub trace_len: usize,
}

pub(crate) fn norm_label(norm: LossNorm) -> String {
    match norm {
        LossNorm::P(p) => format!("p{p}"),
        LossNorm::Mse => "mse".into(),
    }
}

fn slug(name: &str) -> String {
    name.to_lowercase().replace('+', "-")
}

/// True non-conservative force in the same normalization as the loss.
pub(crate) fn true_fn_norm(samples: &[ForceSample], norm: LossNorm) -> Option<f64> {
    match norm {
        LossNorm::P(p) => nonconservative_norm(samples, f64::from(p)),
        LossNorm::Mse => nonconservative_norm(samples, 2.0).map(|v| v * v),
    }
}

/// Training and held-out samples for `spec`.
pub(crate) fn datasets(
    spec: &SystemSpec,
    data: &DataConfig,
    seed: u64,
) -> Result<(Vec<ForceSample>, Vec<ForceSample>), ExperimentError> {
    match data {
        DataConfig::Gaussian { n_train, n_test } => {
            let train = sample_gaussian_states(spec, *n_train, seed)?;
            let test = if *n_test > 0 {
                sample_gaussian_states(spec, *n_test, seed.wrapping_add(TEST_STREAM))?
            } else {
                Vec::new()
            };
            Ok((train, test))
        }
        DataConfig::Trajectory { train_until, .. } => {
            let traj = rk4_integrate(spec, &data.sim_config(seed).expect("trajectory"))?;
            Ok(match train_until {
                Some(cut) => traj.into_iter().partition(|s| s.state.t <= cut + 1e-9),
                None => (traj, Vec::new()),
            })
        }
    }
}

fn has_truth(samples: &[ForceSample]) -> bool {
    !samples.is_empty() && samples.iter().all(|s| s.f_c_true.is_some() && s.f_n_true.is_some())
}

fn states(samples: &[ForceSample]) -> Vec<&State> {
    samples.iter().map(|s| &s.state).collect()
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Misalignment and black-box output size of `params` over `samples`.
fn alignment(
    model: &Nnphd,
    params: &NnphdParams,
    samples: &[ForceSample],
    branches: Branches,
) -> Result<(f64, f64, f64), ExperimentError> {
    let pred = model.predict(params, &states(samples), branches)?;
    let mis = misalignment_of(&pred, samples)?;
    Ok((mis.m_c, mis.m_n, rms(&pred.f_n)))
}

/// One directory per (system, norm) pair; the output root itself when there
/// is only one pair.
fn combos(cfg: &ExperimentConfig) -> Vec<(SystemConfig, LossNorm, PathBuf)> {
    let systems = cfg.system_list();
    let many = systems.len() * cfg.train.norms.len() > 1;
    let mut out = Vec::new();
    for s in &systems {
        for &norm in &cfg.train.norms {
            let dir = if many {
                cfg.output_dir
                    .join(format!("{}_{}", slug(s.kind().name()), norm_label(norm)))
            } else {
                cfg.output_dir.clone()
            };
            out.push((s.clone(), norm, dir));
        }
    }
    out
}

fn write_snapshot(dir: &Path, k: usize, params: &NnphdParams) -> Result<(), ExperimentError> {
    write_params(&dir.join(format!("lambda_{k:02}_lnn.bin")), &params.c)?;
    write_params(&dir.join(format!("lambda_{k:02}_uan.bin")), &params.n)
}

fn write_alignment(path: &Path, rows: &[AlignmentRow]) -> Result<(), ExperimentError> {
    let body: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.lambda, r.m_c, r.m_n, r.fn_nn_rms]).collect();
    write_csv(path, &["lambda", "m_c", "m_n", "fn_nn_rms"], &body)
}

pub(crate) fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepOutcome>, ExperimentError> {
    combos(cfg)
        .par_iter()
        .map(|(sys, norm, dir)| sweep_one(cfg, sys, *norm, dir))
        .collect()
}

fn sweep_one(
    cfg: &ExperimentConfig,
    sys: &SystemConfig,
    norm: LossNorm,
    dir: &Path,
) -> Result<SweepOutcome, ExperimentError> {
    let spec = sys.spec()?;
    let (train_set, test_set) = datasets(&spec, cfg.data_for(sys), cfg.seed)?;
    let model = cfg.model_for(sys).build(&spec)?;
    let base = cfg.train.config(norm, cfg.seed);
    let test = (!test_set.is_empty()).then_some(test_set.as_slice());
    let result = lambda_sweep(
        &model,
        &train_set,
        test,
        &cfg.train.lambda_grid,
        &base,
        &model.init_params(cfg.seed),
    )?;
    let fn_norm = true_fn_norm(&train_set, norm);
    let tau = cfg.detection.resolve(fn_norm)?;
    let det = detect_phase_transition(&result, tau)?;
    let verdict = Verdict {
        system: spec.name().to_string(),
        jump: det.jump,
        is_nonconservative: det.is_nonconservative,
        tau: det.tau,
    };
    let alignment_rows = if has_truth(&train_set) {
        result
            .entries
            .iter()
            .map(|e| {
                let (m_c, m_n, fn_nn_rms) = alignment(&model, &e.params, &train_set, cfg.train.branches)?;
                Ok(AlignmentRow {
                    lambda: e.lambda,
                    m_c,
                    m_n,
                    fn_nn_rms,
                })
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?
    } else {
        Vec::new()
    };

    create_dir(dir)?;
    write_samples(&dir.join("train.csv"), &train_set)?;
    if !test_set.is_empty() {
        write_samples(&dir.join("test.csv"), &test_set)?;
    }
    let rows = result.rows();
    with_writer(&dir.join("sweep.csv"), |w| write_sweep_csv(w, &rows))?;
    write_json(&dir.join("verdict.json"), &verdict)?;
    if !alignment_rows.is_empty() {
        write_alignment(&dir.join("alignment.csv"), &alignment_rows)?;
    }
    write_sweep_details(dir, &result)?;
    Ok(SweepOutcome {
        system: verdict.system.clone(),
        norm,
        dir: dir.to_path_buf(),
        verdict,
        rows,
        alignment: alignment_rows,
        fn_norm,
    })
}

fn write_sweep_details(dir: &Path, result: &SweepResult) -> Result<(), ExperimentError> {
    let traces = dir.join("traces");
    let snaps = dir.join("snapshots");
    create_dir(&traces)?;
    create_dir(&snaps)?;
    for (k, e) in result.entries.iter().enumerate() {
        with_writer(&traces.join(format!("lambda_{k:02}.csv")), |w| {
            write_trace_csv(w, &e.trace)
        })?;
        write_snapshot(&snaps, k, &e.params)?;
    }
    Ok(())
}

pub(crate) fn decompose(cfg: &ExperimentConfig) -> Result<Vec<DecomposeOutcome>, ExperimentError> {
    combos(cfg)
        .par_iter()
        .map(|(sys, norm, dir)| decompose_one(cfg, sys, *norm, dir))
        .collect()
}

fn decompose_one(
    cfg: &ExperimentConfig,
    sys: &SystemConfig,
    norm: LossNorm,
    dir: &Path,
) -> Result<DecomposeOutcome, ExperimentError> {
    let spec = sys.spec()?;
    let (train_set, _) = datasets(&spec, cfg.data_for(sys), cfg.seed)?;
    if !has_truth(&train_set) {
        return Err(TrainingError::MissingGroundTruth.into());
    }
    let model = cfg.model_for(sys).build(&spec)?;
    let base = cfg.train.config(norm, cfg.seed);
    let init = model.init_params(cfg.seed);
    let fits: Vec<(f64, NnphdParams)> = if cfg.train.warm_start {
        lambda_sweep(&model, &train_set, None, &cfg.train.lambda_grid, &base, &init)?
            .entries
            .into_iter()
            .map(|e| (e.lambda, e.params))
            .collect()
    } else {
        cfg.train
            .lambda_grid
            .par_iter()
            .map(|&lambda| {
                let c = TrainConfig { lambda, ..base.clone() };
                let out = train(&model, &train_set, &c, &init).map_err(|e| TrainingError::AtLambda {
                    lambda,
                    source: Box::new(e),
                })?;
                Ok((lambda, out.params))
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?
    };
    let mut rows = Vec::with_capacity(fits.len());
    for (lambda, params) in &fits {
        let c = TrainConfig {
            lambda: *lambda,
            ..base.clone()
        };
        let loss = evaluate(&model, params, &train_set, &c)?.loss;
        let (m_c, m_n, fn_nn_rms) = alignment(&model, params, &train_set, cfg.train.branches)?;
        rows.push(DecomposeRow {
            lambda: *lambda,
            loss,
            m_c,
            m_n,
            fn_nn_rms,
        });
    }
    create_dir(dir)?;
    let body: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.lambda, r.loss.l_e, r.loss.l_b, r.m_c, r.m_n, r.fn_nn_rms])
        .collect();
    write_csv(
        &dir.join("decompose.csv"),
        &["lambda", "Le", "Lb", "m_c", "m_n", "fn_nn_rms"],
        &body,
    )?;
    let snaps = dir.join("snapshots");
    create_dir(&snaps)?;
    for (k, (_, params)) in fits.iter().enumerate() {
        write_snapshot(&snaps, k, params)?;
    }
    Ok(DecomposeOutcome {
        system: spec.name().to_string(),
        norm,
        dir: dir.to_path_buf(),
        rows,
    })
}

pub(crate) fn data_quality(cfg: &ExperimentConfig) -> Result<QualityReport, ExperimentError> {
    let systems = cfg.system_list();
    let sys = &systems[0];
    let spec = sys.spec()?;
    let n_train = match *cfg.data_for(sys) {
        DataConfig::Gaussian { n_train, .. } => n_train,
        DataConfig::Trajectory { .. } => unreachable!("validated"),
    };
    let n_eval = match *cfg.data_for(sys) {
        DataConfig::Gaussian { n_test, .. } if n_test > 0 => n_test,
        _ => n_train,
    };
    let eval_set = sample_gaussian_states(&spec, n_eval, cfg.seed.wrapping_add(EVAL_STREAM))?;
    let model = cfg.model_for(sys).build(&spec)?;
    let c = cfg.train.config(cfg.train.norm()?, cfg.seed);
    let init = model.init_params(cfg.seed);
    let run = |train_set: Vec<ForceSample>, fraction: f64| -> Result<QualityRow, ExperimentError> {
        let out = train(&model, &train_set, &c, &init)?;
        let loss = evaluate(&model, &out.params, &train_set, &c)?.loss;
        let (m_c, m_n, _) = alignment(&model, &out.params, &eval_set, c.branches)?;
        Ok(QualityRow {
            fraction,
            loss,
            m_c,
            m_n,
        })
    };
    let coverage = cfg
        .quality
        .coverage_alpha
        .par_iter()
        .map(|&alpha| {
            let base = sample_gaussian_states(&spec, n_train, cfg.seed)?;
            let set = apply_coverage_wedge(&spec, base, alpha, cfg.seed.wrapping_add(COVERAGE_STREAM))?;
            run(set, alpha)
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let imbalance = cfg
        .quality
        .imbalance_beta
        .par_iter()
        .map(|&beta| {
            let set = apply_imbalance(&spec, beta, n_train, cfg.seed.wrapping_add(IMBALANCE_STREAM))?;
            run(set, beta)
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let table = |rows: &[QualityRow]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| vec![r.fraction, r.loss.l_e, r.loss.l_b, r.m_c, r.m_n])
            .collect()
    };
    if !coverage.is_empty() {
        write_csv(
            &cfg.output_dir.join("coverage.csv"),
            &["alpha", "Le", "Lb", "m_c", "m_n"],
            &table(&coverage),
        )?;
    }
    if !imbalance.is_empty() {
        write_csv(
            &cfg.output_dir.join("imbalance.csv"),
            &["beta", "Le", "Lb", "m_c", "m_n"],
            &table(&imbalance),
        )?;
    }
    Ok(QualityReport { coverage, imbalance })
}

pub(crate) fn symbolic(cfg: &ExperimentConfig) -> Result<SymbolicReport, ExperimentError> {
    let systems = cfg.system_list();
    let sys = &systems[0];
    let spec = sys.spec()?;
    let (train_set, _) = datasets(&spec, cfg.data_for(sys), cfg.seed)?;
    let model = cfg.model_for(sys).build(&spec)?;
    let c = cfg.train.config(cfg.train.norm()?, cfg.seed);
    let out = train(&model, &train_set, &c, &model.init_params(cfg.seed))?;
    let train_loss = evaluate(&model, &out.params, &train_set, &c)?.loss;
    let pts = states(&train_set);
    let pred = model.predict(&out.params, &pts, Branches::Both)?;
    let n = spec.n();
    let targets: Vec<Vec<f64>> = pred.f_n.chunks(n).map(<[f64]>::to_vec).collect();
    let owned: Vec<State> = pts.into_iter().cloned().collect();
    let template = Template::new(cfg.symbolic.template.expect("validated"));

    let dir = &cfg.output_dir;
    write_samples(&dir.join("train.csv"), &train_set)?;
    with_writer(&dir.join("trace.csv"), |w| write_trace_csv(w, &out.trace))?;
    write_params(&dir.join("lnn.bin"), &out.params.c)?;
    write_params(&dir.join("uan.bin"), &out.params.n)?;
    let fit = match fit_template(&template, &owned, &targets, cfg.seed) {
        Ok(fit) => fit,
        Err(SymbolicError::FitFailed { best }) => {
            write_json(&dir.join("fit.json"), &best)?;
            return Err(SymbolicError::FitFailed { best }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&dir.join("fit.json"), &fit)?;
    let res = residual_report(&template, &fit.values(&template), &owned, &targets)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("r_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let body: Vec<Vec<f64>> = owned
        .iter()
        .zip(res.chunks(n))
        .map(|(s, r)| std::iter::once(s.t).chain(r.iter().copied()).collect())
        .collect();
    write_csv(&dir.join("residuals.csv"), &header, &body)?;
    Ok(SymbolicReport { fit, train_loss })
}

pub(crate) fn tricks_ablation(cfg: &ExperimentConfig) -> Result<Vec<TrickOutcome>, ExperimentError> {
    let systems = cfg.system_list();
    let sys = &systems[0];
    let spec = sys.spec()?;
    let (train_set, _) = datasets(&spec, cfg.data_for(sys), cfg.seed)?;
    let c = TrainConfig {
        branches: Branches::LnnOnly,
        singular_policy: SingularPolicy::SkipSample,
        ..cfg.train.config(cfg.train.norm()?, cfg.seed)
    };
    let LnnConfig::Mlp {
        hidden,
        quadratic_fraction,
        init,
        split_a,
        ..
    } = &cfg.model_for(sys).lnn
    else {
        unreachable!("validated")
    };
    let split_on = if *split_a > 0.0 { *split_a } else { 1.0 };
    let variants = [(false, false), (false, true), (true, false), (true, true)];
    let outcomes = variants
        .par_iter()
        .map(|&(mix, split)| {
            let mut model_cfg = cfg.model_for(sys).clone();
            model_cfg.lnn = LnnConfig::Mlp {
                hidden: hidden.clone(),
                activation: Activation::Softplus,
                quadratic_fraction: if mix { *quadratic_fraction } else { 0.0 },
                init: *init,
                split_a: if split { split_on } else { 0.0 },
            };
            let model = model_cfg.build(&spec)?;
            let out = train(&model, &train_set, &c, &model.init_params(cfg.seed))?;
            let ev = evaluate(&model, &out.params, &train_set, &c)?;
            let variant = format!(
                "{}{}",
                if mix { "quadratic-mix" } else { "softplus" },
                if split { "_split" } else { "_nosplit" }
            );
            with_writer(&cfg.output_dir.join(format!("trace_{variant}.csv")), |w| {
                write_trace_csv(w, &out.trace)
            })?;
            Ok(TrickOutcome {
                variant,
                quadratic_mix: mix,
                split,
                final_le: if ev.singular >= train_set.len() {
                    f64::INFINITY
                } else {
                    ev.loss.l_e
                },
                singular_errors: out.singular_skipped + ev.singular,
                trace_len: out.trace.len(),
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    with_writer(&cfg.output_dir.join("tricks.csv"), |w| {
        use std::io::Write;
        writeln!(w, "variant,final_Le,singular_errors")?;
        for o in &outcomes {
            writeln!(
                w,
                "{},{},{}",
                o.variant,
                crate::dynamics::format_real(o.final_le),
                o.singular_errors
            )?;
        }
        Ok(())
    })?;
    Ok(outcomes)
}
