use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::dynamics::{SimConfig, State, SystemKind, SystemSpec};
use crate::networks::{Activation, Init, LagrangianModel, MlpSpec, TemplateLagrangian, UanModel};
use crate::symbolic::TemplateKind;
use crate::training::{
    default_schedule, AdamConfig, Branches, LossNorm, Nnphd, SingularPolicy, TrainConfig, DEFAULT_LAMBDA_GRID,
    DEFAULT_TAU,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sweep,
    Decompose,
    Extrapolate,
    DataQuality,
    Symbolic,
    TricksAblation,
}

/// A registered system, either by bare name or with parameter overrides and
/// per-system data and model settings replacing the experiment-wide ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemConfig {
    Name(SystemKind),
    Full {
        name: SystemKind,
        #[serde(default)]
        overrides: BTreeMap<String, f64>,
        #[serde(default)]
        data: Option<DataConfig>,
        #[serde(default)]
        model: Option<ModelConfig>,
    },
}

impl SystemConfig {
    pub fn kind(&self) -> SystemKind {
        match self {
            SystemConfig::Name(k) | SystemConfig::Full { name: k, .. } => *k,
        }
    }

    pub fn spec(&self) -> Result<SystemSpec, ExperimentError> {
        match self {
            SystemConfig::Name(k) => Ok(SystemSpec::new(*k)),
            SystemConfig::Full { name, overrides, .. } => Ok(SystemSpec::with_overrides(*name, overrides)?),
        }
    }
}

/// Where training states come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// I.i.d. standard-normal positions, velocities and times.
    Gaussian {
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default)]
        n_test: usize,
    },
    /// One RK4 trajectory; states with `t ≤ train_until` train, the rest test.
    Trajectory {
        initial_state: State,
        step_size: f64,
        n_steps: usize,
        #[serde(default)]
        train_until: Option<f64>,
    },
}

fn default_n_train() -> usize {
    1000
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Gaussian {
            n_train: default_n_train(),
            n_test: 0,
        }
    }
}

impl DataConfig {
    pub fn sim_config(&self, seed: u64) -> Option<SimConfig> {
        match self {
            DataConfig::Trajectory {
                initial_state,
                step_size,
                n_steps,
                ..
            } => Some(SimConfig {
                initial_state: initial_state.clone(),
                step_size: *step_size,
                n_steps: *n_steps,
                seed,
            }),
            DataConfig::Gaussian { .. } => None,
        }
    }
}

/// Lagrangian branch architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LnnConfig {
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_lnn_activation")]
        activation: Activation,
        #[serde(default = "default_quadratic_fraction")]
        quadratic_fraction: f64,
        #[serde(default)]
        init: Init,
        #[serde(default = "one")]
        split_a: f64,
    },
    /// Linear combination of fixed features, e.g. `double-pendulum`, `kepler`.
    Template {
        template: String,
        #[serde(default = "one")]
        split_a: f64,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![200, 200]
}

fn default_lnn_activation() -> Activation {
    Activation::Softplus
}

fn default_quadratic_fraction() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

impl Default for LnnConfig {
    fn default() -> Self {
        LnnConfig::Mlp {
            hidden: default_hidden(),
            activation: default_lnn_activation(),
            quadratic_fraction: default_quadratic_fraction(),
            init: Init::default(),
            split_a: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UanConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Feed `t` to the network; defaults to the system's time dependence.
    #[serde(default)]
    pub use_time: Option<bool>,
    /// Factor applied to `t` before it enters the network.
    #[serde(default = "one")]
    pub time_scale: f64,
}

impl Default for UanConfig {
    fn default() -> Self {
        UanConfig {
            hidden: default_hidden(),
            use_time: None,
            time_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub lnn: LnnConfig,
    #[serde(default)]
    pub uan: UanConfig,
}

impl ModelConfig {
    pub fn build(&self, spec: &SystemSpec) -> Result<Nnphd, ExperimentError> {
        let n = spec.n();
        let lnn = match &self.lnn {
            LnnConfig::Mlp {
                hidden,
                activation,
                quadratic_fraction,
                init,
                split_a,
            } => LagrangianModel::Mlp {
                spec: MlpSpec {
                    input_dim: 2 * n,
                    hidden: hidden.clone(),
                    activation: *activation,
                    quadratic_fraction: Some(*quadratic_fraction),
                    output_dim: 1,
                    init: *init,
                },
                split_a: *split_a,
            },
            LnnConfig::Template { template, split_a } => LagrangianModel::Template {
                template: TemplateLagrangian::by_name(template)
                    .ok_or_else(|| ExperimentError::Config(format!("unknown Lagrangian template `{template}`")))?,
                split_a: *split_a,
            },
        };
        let uan = UanModel::new(
            n,
            self.uan.hidden.clone(),
            self.uan.use_time.unwrap_or(spec.time_dependent()),
            Init::ZeroLastLayer,
        )
        .with_time_scale(self.uan.time_scale);
        let model = Nnphd { lnn, uan };
        model.validate()?;
        Ok(model)
    }
}

/// Optimizer settings shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Penalty weight for single-λ experiments.
    pub lambda: f64,
    /// λ values for sweeps and decompositions, ascending.
    pub lambda_grid: Vec<f64>,
    /// Sweeps and decompositions run once per norm.
    pub norms: Vec<LossNorm>,
    pub batch_size: usize,
    pub lr_schedule: Vec<(f64, usize)>,
    pub adam: AdamConfig,
    pub branches: Branches,
    pub singular_policy: SingularPolicy,
    /// Decompositions: carry parameters from one λ to the next.
    pub warm_start: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lambda: 0.2,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            norms: vec![LossNorm::P(1)],
            batch_size: 32,
            lr_schedule: default_schedule(),
            adam: AdamConfig::default(),
            branches: Branches::Both,
            singular_policy: SingularPolicy::Abort,
            warm_start: false,
        }
    }
}

impl TrainSection {
    pub fn config(&self, norm: LossNorm, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            norm,
            batch_size: self.batch_size,
            lr_schedule: self.lr_schedule.clone(),
            adam: self.adam,
            seed,
            branches: self.branches,
            singular_policy: self.singular_policy,
        }
    }

    /// The single norm of a one-norm experiment.
    pub fn norm(&self) -> Result<LossNorm, ExperimentError> {
        match self.norms.as_slice() {
            [n] => Ok(*n),
            _ => Err(ExperimentError::Config(format!(
                "this experiment takes exactly one norm, got {}",
                self.norms.len()
            ))),
        }
    }
}

/// Threshold on the recovery-error jump.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    /// Absolute threshold in force units.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Threshold as a multiple of the true non-conservative force measured
    /// in the loss norm over the training set.
    #[serde(default)]
    pub tau_relative: Option<f64>,
}

impl DetectionConfig {
    pub fn resolve(&self, fn_norm: Option<f64>) -> Result<f64, ExperimentError> {
        match (self.tau, self.tau_relative) {
            (Some(_), Some(_)) => Err(ExperimentError::Config(
                "set at most one of tau and tau_relative".into(),
            )),
            (Some(t), None) => Ok(t),
            (None, Some(r)) => fn_norm
                .map(|n| r * n)
                .ok_or_else(|| ExperimentError::Config("tau_relative needs samples with the true split".into())),
            (None, None) => Ok(DEFAULT_TAU),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    pub coverage_alpha: Vec<f64>,
    pub imbalance_beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymbolicConfig {
    pub template: Option<TemplateKind>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrapolationConfig {
    /// Rollout end time; defaults to the end of the data trajectory.
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub system: Option<SystemConfig>,
    /// Batch form: one independent run per system.
    #[serde(default)]
    pub systems: Vec<SystemConfig>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub quality: QualityConfig,
    #[serde(default)]
    pub symbolic: SymbolicConfig,
    #[serde(default)]
    pub extrapolation: ExtrapolationConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("nnphd-out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn data_for<'a>(&'a self, sys: &'a SystemConfig) -> &'a DataConfig {
        match sys {
            SystemConfig::Full { data: Some(d), .. } => d,
            _ => &self.data,
        }
    }

    pub fn model_for<'a>(&'a self, sys: &'a SystemConfig) -> &'a ModelConfig {
        match sys {
            SystemConfig::Full { model: Some(m), .. } => m,
            _ => &self.model,
        }
    }

    /// All systems named by `system` and `systems`, in order.
    pub fn system_list(&self) -> Vec<SystemConfig> {
        self.system.iter().chain(&self.systems).cloned().collect()
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        let systems = self.system_list();
        if systems.is_empty() {
            return bad("no system given".into());
        }
        for s in &systems {
            s.spec()?;
            match self.data_for(s) {
                DataConfig::Gaussian { n_train, .. } if *n_train == 0 => {
                    return bad("data.n_train must be positive".into())
                }
                d @ DataConfig::Trajectory { .. } => d.sim_config(self.seed).expect("trajectory").validate()?,
                _ => {}
            }
        }
        let t = &self.train;
        if t.norms.is_empty() {
            return bad("train.norms is empty".into());
        }
        for norm in &t.norms {
            t.config(*norm, self.seed).validate()?;
        }
        if t.lambda_grid.is_empty() || t.lambda_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("train.lambda_grid must be nonempty and strictly increasing".into());
        }
        if t.lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return bad("train.lambda_grid values must be positive".into());
        }
        self.detection.resolve(Some(1.0))?;
        let single = |what: &str| -> Result<(), ExperimentError> {
            if systems.len() != 1 {
                return Err(ExperimentError::Config(format!("{what} runs on exactly one system")));
            }
            Ok(())
        };
        match self.experiment {
            ExperimentKind::Sweep | ExperimentKind::Decompose => {}
            ExperimentKind::Extrapolate => {
                single("extrapolate")?;
                t.norm()?;
                if !matches!(self.data_for(&systems[0]), DataConfig::Trajectory { .. }) {
                    return bad("extrapolate needs trajectory data".into());
                }
            }
            ExperimentKind::DataQuality => {
                single("data-quality")?;
                t.norm()?;
                if self.quality.coverage_alpha.is_empty() && self.quality.imbalance_beta.is_empty() {
                    return bad("data-quality needs quality.coverage_alpha or quality.imbalance_beta".into());
                }
                if !matches!(self.data_for(&systems[0]), DataConfig::Gaussian { .. }) {
                    return bad("data-quality draws Gaussian states".into());
                }
                let all = self.quality.coverage_alpha.iter().chain(&self.quality.imbalance_beta);
                if let Some(v) = all.into_iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return bad(format!("quality fractions must lie in [0, 1], got {v}"));
                }
            }
            ExperimentKind::Symbolic => {
                single("symbolic")?;
                t.norm()?;
                if self.symbolic.template.is_none() {
                    return bad("symbolic needs symbolic.template".into());
                }
            }
            ExperimentKind::TricksAblation => {
                single("tricks-ablation")?;
                t.norm()?;
                if !matches!(self.model_for(&systems[0]).lnn, LnnConfig::Mlp { .. }) {
                    return bad("tricks-ablation needs an MLP Lagrangian".into());
                }
            }
        }
        Ok(())
    }
}
