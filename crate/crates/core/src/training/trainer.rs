use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{LossNorm, LossReport};
use super::model::{Branches, Nnphd, NnphdParams, SingularPolicy};
use super::TrainingError;
use crate::dynamics::{ForceSample, State};

/// Learning rates and step counts run back to back.
pub fn default_schedule() -> Vec<(f64, usize)> {
    vec![(1e-2, 500), (1e-3, 500), (1e-4, 500), (1e-5, 500)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub norm: LossNorm,
    pub batch_size: usize,
    pub lr_schedule: Vec<(f64, usize)>,
    pub adam: AdamConfig,
    pub seed: u64,
    pub branches: Branches,
    pub singular_policy: SingularPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            norm: LossNorm::P(1),
            batch_size: 32,
            lr_schedule: default_schedule(),
            adam: AdamConfig::default(),
            seed: 0,
            branches: Branches::Both,
            singular_policy: SingularPolicy::Abort,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::InvalidConfig(m));
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        self.norm.validate().map_err(TrainingError::InvalidConfig)?;
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.lr_schedule.is_empty() {
            return bad("learning-rate schedule is empty".into());
        }
        if let Some((lr, _)) = self.lr_schedule.iter().find(|(lr, _)| !(*lr > 0.0)) {
            return bad(format!("learning rate must be positive, got {lr}"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.lr_schedule.iter().map(|(_, s)| s).sum()
    }

    /// Weight on the penalty in the optimized objective. The black-box
    /// baseline fits the recovery error alone.
    pub fn penalty_weight(&self) -> f64 {
        match self.branches {
            Branches::UanOnly => 0.0,
            _ => self.lambda,
        }
    }
}

/// One optimizer step of the loss trace, measured on its minibatch before
/// the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NnphdParams,
    pub trace: Vec<TraceRow>,
    /// Samples dropped for a singular mass matrix (skip policy only).
    pub singular_skipped: usize,
}

/// Loss of `params` over a whole dataset together with the number of
/// singular samples excluded from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: LossReport,
    pub singular: usize,
}

/// Residual `f_c + f_n − f` and penalty input for the non-singular samples
/// of a prediction, with the column index of each kept sample.
struct Residuals {
    r: Vec<f64>,
    f_n: Vec<f64>,
    kept: Vec<usize>,
}

fn residuals(
    n: usize,
    f_c: &[f64],
    f_n: &[f64],
    singular: &[Option<f64>],
    targets: &[&ForceSample],
) -> Result<Residuals, TrainingError> {
    let mut out = Residuals {
        r: Vec::with_capacity(n * targets.len()),
        f_n: Vec::with_capacity(n * targets.len()),
        kept: Vec::with_capacity(targets.len()),
    };
    for (b, s) in targets.iter().enumerate() {
        if singular[b].is_some() {
            continue;
        }
        if s.f.len() != n {
            return Err(TrainingError::InvalidConfig(format!(
                "sample force has {} components, model expects {n}",
                s.f.len()
            )));
        }
        out.kept.push(b);
        for i in 0..n {
            out.r.push(f_c[b * n + i] + f_n[b * n + i] - s.f[i]);
            out.f_n.push(f_n[b * n + i]);
        }
    }
    Ok(out)
}

fn check_singular(
    policy: SingularPolicy,
    step: Option<usize>,
    singular: &[Option<f64>],
    states: &[&State],
) -> Result<usize, TrainingError> {
    let count = singular.iter().filter(|s| s.is_some()).count();
    if policy == SingularPolicy::Abort {
        if let Some(b) = singular.iter().position(Option::is_some) {
            return Err(TrainingError::singular(
                step,
                states[b],
                singular[b].unwrap_or(f64::INFINITY),
            ));
        }
    }
    Ok(count)
}

/// Loss over the full dataset.
pub fn evaluate(
    model: &Nnphd,
    params: &NnphdParams,
    samples: &[ForceSample],
    cfg: &TrainConfig,
) -> Result<Evaluation, TrainingError> {
    if samples.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let states: Vec<&State> = samples.iter().map(|s| &s.state).collect();
    let pred = model.predict(params, &states, cfg.branches)?;
    let singular = check_singular(cfg.singular_policy, None, &pred.singular, &states)?;
    let targets: Vec<&ForceSample> = samples.iter().collect();
    let res = residuals(model.n(), &pred.f_c, &pred.f_n, &pred.singular, &targets)?;
    let loss = LossReport::new(cfg.norm.value(&res.r), cfg.norm.value(&res.f_n), cfg.penalty_weight());
    if !loss.is_finite() {
        return Err(TrainingError::NonFinite {
            step: 0,
            what: "dataset loss".into(),
        });
    }
    Ok(Evaluation { loss, singular })
}

/// Minibatch Adam over the learning-rate schedule, updating both branches
/// together each step.
pub fn train(
    model: &Nnphd,
    samples: &[ForceSample],
    cfg: &TrainConfig,
    init: &NnphdParams,
) -> Result<TrainOutcome, TrainingError> {
    cfg.validate()?;
    model.validate()?;
    if samples.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let n = model.n();
    let mut params = init.clone();
    let mut adam_c = AdamState::new(params.c.len());
    let mut adam_n = AdamState::new(params.n.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let bsz = cfg.batch_size.min(samples.len());
    let mut cursor = 0;
    let mut trace = Vec::with_capacity(cfg.total_steps());
    let mut skipped = 0;
    let weight = cfg.penalty_weight();
    let mut step = 0;
    for &(lr, steps) in &cfg.lr_schedule {
        for _ in 0..steps {
            step += 1;
            if cursor + bsz > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let batch: Vec<&ForceSample> = order[cursor..cursor + bsz].iter().map(|&k| &samples[k]).collect();
            cursor += bsz;
            let states: Vec<&State> = batch.iter().map(|s| &s.state).collect();

            let lnn_fwd = if cfg.branches.uses_lnn() {
                Some(model.lnn.forces(params.c.values(), &states)?)
            } else {
                None
            };
            let uan_fwd = if cfg.branches.uses_uan() {
                Some(model.uan.forward(params.n.values(), &states)?)
            } else {
                None
            };
            let flat = |m: &Array2<f64>| -> Vec<f64> { m.t().iter().copied().collect() };
            let f_c = lnn_fwd.as_ref().map_or_else(|| vec![0.0; n * bsz], |f| flat(&f.f));
            let f_n = uan_fwd.as_ref().map_or_else(|| vec![0.0; n * bsz], |(f, _)| flat(f));
            let singular = lnn_fwd.as_ref().map_or_else(|| vec![None; bsz], |f| f.singular.clone());
            skipped += check_singular(cfg.singular_policy, Some(step), &singular, &states)?;

            let res = residuals(n, &f_c, &f_n, &singular, &batch)?;
            let loss = LossReport::new(cfg.norm.value(&res.r), cfg.norm.value(&res.f_n), weight);
            if !loss.is_finite() {
                return Err(TrainingError::NonFinite {
                    step,
                    what: format!("minibatch loss {loss:?}"),
                });
            }
            trace.push(TraceRow { step, lr, loss });
            if res.kept.is_empty() {
                continue;
            }

            let mut r_bar = vec![0.0; res.r.len()];
            cfg.norm.accumulate_grad(&res.r, 1.0, &mut r_bar);
            let mut fn_bar = r_bar.clone();
            cfg.norm.accumulate_grad(&res.f_n, weight, &mut fn_bar);
            let scatter = |flat: &[f64]| {
                let mut m = Array2::zeros((n, bsz));
                for (k, &b) in res.kept.iter().enumerate() {
                    for i in 0..n {
                        m[[i, b]] = flat[k * n + i];
                    }
                }
                m
            };
            if let Some(fwd) = &lnn_fwd {
                let g = model
                    .lnn
                    .forces_backward(params.c.values(), fwd, scatter(&r_bar).view());
                adam_step(params.c.values_mut(), &g, &mut adam_c, lr, &cfg.adam).map_err(|e| e.at_step(step))?;
            }
            if let Some((_, tape)) = &uan_fwd {
                let g = model.uan.backward(params.n.values(), tape, scatter(&fn_bar).view());
                adam_step(params.n.values_mut(), &g, &mut adam_n, lr, &cfg.adam).map_err(|e| e.at_step(step))?;
            }
        }
    }
    Ok(TrainOutcome {
        params,
        trace,
        singular_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{sample_gaussian_states, SystemKind, SystemSpec};
    use crate::networks::{Activation, Init, LagrangianModel, MlpSpec, UanModel};
    use crate::training::misalignment;

    fn small_model(n: usize, width: usize) -> Nnphd {
        Nnphd {
            lnn: LagrangianModel::Mlp {
                spec: MlpSpec {
                    input_dim: 2 * n,
                    hidden: vec![width, width],
                    activation: Activation::Softplus,
                    quadratic_fraction: Some(0.5),
                    output_dim: 1,
                    init: Init::ZeroLastLayer,
                },
                split_a: 1.0,
            },
            uan: UanModel::new(n, vec![width, width], false, Init::ZeroLastLayer),
        }
    }

    fn dataset(kind: SystemKind, count: usize, seed: u64) -> Vec<ForceSample> {
        let spec = SystemSpec::new(kind);
        sample_gaussian_states(&spec, count, seed).unwrap()
    }

    #[test]
    fn trace_covers_schedule_and_is_deterministic() {
        let model = small_model(1, 8);
        let data = dataset(SystemKind::HoLd, 100, 1);
        let cfg = TrainConfig {
            lr_schedule: vec![(1e-2, 30), (1e-3, 20)],
            ..TrainConfig::default()
        };
        let init = model.init_params(0);
        let a = train(&model, &data, &cfg, &init).unwrap();
        let b = train(&model, &data, &cfg, &init).unwrap();
        assert_eq!(a.trace.len(), 50);
        assert_eq!(a.trace[0].step, 1);
        assert_eq!(a.trace[49].lr, 1e-3);
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
        for row in &a.trace {
            assert!((row.loss.total - (row.loss.l_e + cfg.lambda * row.loss.l_b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn oscillator_with_damping_decomposes_below_unit_lambda() {
        let model = small_model(1, 24);
        let data = dataset(SystemKind::HoLd, 400, 2);
        let cfg = TrainConfig {
            lambda: 0.2,
            lr_schedule: vec![(1e-2, 600), (1e-3, 400)],
            ..TrainConfig::default()
        };
        let out = train(&model, &data, &cfg, &model.init_params(1)).unwrap();
        let m = misalignment(&model, &out.params, &data, Branches::Both).unwrap();
        assert!(m.m_c < 0.1 && m.m_n < 0.1, "{m:?}");
    }

    #[test]
    fn lnn_only_leaves_force_branch_untouched() {
        let model = small_model(1, 6);
        let data = dataset(SystemKind::HoCg, 50, 3);
        let cfg = TrainConfig {
            lr_schedule: vec![(1e-2, 20)],
            branches: Branches::LnnOnly,
            ..TrainConfig::default()
        };
        let init = model.init_params(2);
        let out = train(&model, &data, &cfg, &init).unwrap();
        assert_eq!(out.params.n, init.n);
        assert_ne!(out.params.c, init.c);
        assert!(out.trace.iter().all(|r| r.loss.l_b == 0.0));
    }

    #[test]
    fn singular_mass_matrix_policies() {
        let mut model = small_model(1, 6);
        if let LagrangianModel::Mlp { split_a, .. } = &mut model.lnn {
            *split_a = 0.0;
        }
        let data = dataset(SystemKind::HoLd, 40, 4);
        let cfg = TrainConfig {
            lr_schedule: vec![(1e-2, 5)],
            ..TrainConfig::default()
        };
        let init = model.init_params(0);
        match train(&model, &data, &cfg, &init) {
            Err(TrainingError::Singular { step: Some(1), .. }) => {}
            other => panic!("expected singular error at step 1, got {other:?}"),
        }
        let skip = TrainConfig {
            singular_policy: SingularPolicy::SkipSample,
            ..cfg
        };
        let out = train(&model, &data, &skip, &init).unwrap();
        assert_eq!(out.singular_skipped, 5 * 32);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let model = small_model(1, 4);
        let data = dataset(SystemKind::HoLd, 10, 0);
        let init = model.init_params(0);
        for cfg in [
            TrainConfig {
                lambda: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr_schedule: vec![],
                ..TrainConfig::default()
            },
            TrainConfig {
                norm: LossNorm::P(4),
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(
                train(&model, &data, &cfg, &init),
                Err(TrainingError::InvalidConfig(_))
            ));
        }
        assert!(matches!(
            train(&model, &[], &TrainConfig::default(), &init),
            Err(TrainingError::EmptyDataset)
        ));
    }
}
