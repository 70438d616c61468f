//! Experiment driver: JSON configs in, CSV and JSON artifacts out.

mod artifacts;
mod config;
mod extrapolate;
mod runs;

pub use config::{
    DataConfig, DetectionConfig, ExperimentConfig, ExperimentKind, ExtrapolationConfig, LnnConfig, ModelConfig,
    QualityConfig, SymbolicConfig, SystemConfig, TrainSection, UanConfig,
};
pub use extrapolate::{Divergence, ExtrapolationReport, ExtrapolationRow};
pub use runs::{
    AlignmentRow, DecomposeOutcome, DecomposeRow, QualityReport, QualityRow, SweepOutcome, SymbolicReport,
    TrickOutcome, Verdict,
};

use std::path::{Path, PathBuf};

use crate::dynamics::DynamicsError;
use crate::networks::NetworkError;
use crate::symbolic::SymbolicError;
use crate::training::TrainingError;

/// Environment variable overriding the preset directory.
pub const PRESETS_ENV: &str = "NNPHD_PRESETS";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed configuration: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Whether the run failed numerically rather than on its inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            ExperimentError::Dynamics(e) => {
                matches!(e, DynamicsError::Singularity { .. } | DynamicsError::Diverged { .. })
            }
            ExperimentError::Network(e) => matches!(e, NetworkError::SingularMass { .. } | NetworkError::Autodiff(_)),
            ExperimentError::Training(e) => e.is_numerical(),
            ExperimentError::Symbolic(e) => matches!(e, SymbolicError::FitFailed { .. }),
            _ => false,
        }
    }

    /// Process exit status: 3 for numerical failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            3
        } else {
            2
        }
    }
}

/// Outcome of one experiment, mirroring what was written to disk.
#[derive(Debug, Clone)]
pub enum Report {
    Sweep(Vec<SweepOutcome>),
    Decompose(Vec<DecomposeOutcome>),
    Extrapolate(ExtrapolationReport),
    DataQuality(QualityReport),
    Symbolic(SymbolicReport),
    TricksAblation(Vec<TrickOutcome>),
}

/// `NNPHD_PRESETS` when set, else the `presets/` directory of the source tree.
pub fn preset_dir() -> PathBuf {
    std::env::var_os(PRESETS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets"))
}

/// `arg` itself when it names a file, else the preset `arg` or `arg.json`.
pub fn resolve_config_path(arg: &str) -> Result<PathBuf, ExperimentError> {
    let direct = PathBuf::from(arg);
    if direct.is_file() {
        return Ok(direct);
    }
    let dir = preset_dir();
    [dir.join(arg), dir.join(format!("{arg}.json"))]
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| {
            ExperimentError::Config(format!(
                "no config file `{arg}` and no such preset in {}",
                dir.display()
            ))
        })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

/// Runs `cfg`, writing every artifact under `cfg.output_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    artifacts::create_dir(out)?;
    artifacts::write_json(&out.join("config.json"), cfg)?;
    Ok(match cfg.experiment {
        ExperimentKind::Sweep => Report::Sweep(runs::sweep(cfg)?),
        ExperimentKind::Decompose => Report::Decompose(runs::decompose(cfg)?),
        ExperimentKind::Extrapolate => Report::Extrapolate(extrapolate::extrapolate(cfg)?),
        ExperimentKind::DataQuality => Report::DataQuality(runs::data_quality(cfg)?),
        ExperimentKind::Symbolic => Report::Symbolic(runs::symbolic(cfg)?),
        ExperimentKind::TricksAblation => Report::TricksAblation(runs::tricks_ablation(cfg)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{detect_from_points, read_sweep_csv};

    fn tiny(experiment: &str, extra: &str, dir: &Path) -> ExperimentConfig {
        let text = format!(
            r#"{{
                "experiment": "{experiment}",
                "model": {{ "lnn": {{ "kind": "mlp", "hidden": [8, 8] }}, "uan": {{ "hidden": [8, 8] }} }},
                "train": {{ "lambda_grid": [0.1, 0.5, 2.0, 10.0], "lr_schedule": [[0.01, 15], [0.001, 15]] }},
                "output_dir": {},
                "seed": 3
                {extra}
            }}"#,
            serde_json::to_string(dir).unwrap()
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    fn config_error(text: &str) -> ExperimentError {
        ExperimentConfig::from_json(text).unwrap_err()
    }

    #[test]
    fn missing_system_is_a_config_error() {
        let e = config_error(r#"{ "experiment": "sweep" }"#);
        assert!(matches!(e, ExperimentError::Config(_)), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_fields_and_systems_are_rejected() {
        for text in [
            r#"{ "experiment": "sweep", "system": "HO+LD", "lamda": 1 }"#,
            r#"{ "experiment": "sweep", "system": "HO+XX" }"#,
            r#"{ "experiment": "sweep", "system": "HO+LD", "train": { "norms": [{ "p": 4 }] } }"#,
            r#"{ "experiment": "sweep", "system": { "name": "HO+LD", "overrides": { "zeta": 1 } } }"#,
        ] {
            assert_eq!(config_error(text).exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn experiment_specific_requirements() {
        for text in [
            r#"{ "experiment": "extrapolate", "system": "damped-double-pendulum" }"#,
            r#"{ "experiment": "data-quality", "system": "HO+CD" }"#,
            r#"{ "experiment": "symbolic", "system": "neptune" }"#,
            r#"{ "experiment": "symbolic", "systems": ["neptune", "grav-radiation"], "symbolic": { "template": "neptune-pull" } }"#,
            r#"{ "experiment": "sweep", "system": "HO+LD", "detection": { "tau": 0.1, "tau_relative": 0.2 } }"#,
        ] {
            let e = ExperimentConfig::from_json(text).map(|c| c.detection.resolve(Some(1.0)));
            assert!(matches!(e, Err(_) | Ok(Err(_))), "{text}");
        }
    }

    #[test]
    fn per_system_settings_override_the_shared_ones() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "experiment": "sweep",
                "systems": [
                    "HO+LD",
                    { "name": "neptune",
                      "data": { "source": "trajectory", "initial_state": { "q": [2, 0], "qdot": [0, 0.7], "t": 0 }, "step_size": 0.1, "n_steps": 5 },
                      "model": { "lnn": { "kind": "template", "template": "kepler" }, "uan": { "time_scale": 0.01 } } }
                ]
            }"#,
        )
        .unwrap();
        let systems = cfg.system_list();
        assert_eq!(cfg.data_for(&systems[0]), &DataConfig::default());
        assert!(matches!(
            cfg.data_for(&systems[1]),
            DataConfig::Trajectory { n_steps: 5, .. }
        ));
        assert!(matches!(cfg.model_for(&systems[1]).lnn, LnnConfig::Template { .. }));
        assert_eq!(cfg.model_for(&systems[1]).uan.time_scale, 0.01);
    }

    #[test]
    fn presets_parse_and_validate() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
        let mut names: Vec<String> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for name in [
            "fig2",
            "fig3a",
            "fig4",
            "fig6a",
            "fig6b",
            "fig7",
            "tab3_friction",
            "tab3_neptune",
            "tab3_radiation",
        ] {
            assert!(names.contains(&format!("{name}.json")), "{name}");
        }
        for name in &names {
            load_config(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn sweep_writes_artifacts_and_a_recomputable_verdict() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(
            "sweep",
            r#", "system": "HO+LD", "data": { "source": "gaussian", "n_train": 40, "n_test": 20 }"#,
            tmp.path(),
        );
        let Report::Sweep(out) = run(&cfg).unwrap() else {
            panic!("wrong report")
        };
        assert_eq!(out.len(), 1);
        let root = tmp.path();
        for f in [
            "config.json",
            "train.csv",
            "test.csv",
            "sweep.csv",
            "verdict.json",
            "alignment.csv",
        ] {
            assert!(root.join(f).is_file(), "{f}");
        }
        assert!(root.join("traces/lambda_03.csv").is_file());
        assert!(root.join("snapshots/lambda_00_lnn.bin").is_file());

        let text = std::fs::read_to_string(root.join("sweep.csv")).unwrap();
        assert!(text.starts_with("lambda,train_Le,train_Lb,test_Le,test_Lb\n"));
        let rows = read_sweep_csv(text.as_bytes()).unwrap();
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda, r.train_le)).collect();
        let verdict: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(root.join("verdict.json")).unwrap()).unwrap();
        let det = detect_from_points(&points, verdict["tau"].as_f64().unwrap()).unwrap();
        assert_eq!(verdict["system"], "HO+LD");
        assert_eq!(verdict["jump"].as_f64().unwrap(), det.jump);
        assert_eq!(verdict["is_nonconservative"].as_bool().unwrap(), det.is_nonconservative);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let extra = r#", "system": "HO+PF", "data": { "source": "gaussian", "n_train": 30 }"#;
        run(&tiny("decompose", extra, a.path())).unwrap();
        run(&tiny("decompose", extra, b.path())).unwrap();
        for f in ["decompose.csv", "snapshots/lambda_02_uan.bin"] {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
    }

    #[test]
    fn batch_sweeps_get_one_directory_per_pair() {
        let tmp = tempfile::tempdir().unwrap();
        let extra = r#", "systems": ["HO+MF", "HO+CG"], "data": { "source": "gaussian", "n_train": 20 }"#;
        let mut cfg = tiny("sweep", extra, tmp.path());
        cfg.train.norms = vec![crate::training::LossNorm::P(1), crate::training::LossNorm::Mse];
        let Report::Sweep(out) = run(&cfg).unwrap() else {
            panic!("wrong report")
        };
        assert_eq!(out.len(), 4);
        for d in ["ho-mf_p1", "ho-mf_mse", "ho-cg_p1", "ho-cg_mse"] {
            assert!(tmp.path().join(d).join("verdict.json").is_file(), "{d}");
        }
    }

    #[test]
    fn symbolic_run_writes_fit_json() {
        let tmp = tempfile::tempdir().unwrap();
        let extra = r#",
            "system": "damped-double-pendulum",
            "data": { "source": "trajectory", "initial_state": { "q": [1, 0], "qdot": [0, 0], "t": 0 }, "step_size": 0.1, "n_steps": 40 },
            "symbolic": { "template": "linear-friction" }"#;
        let mut cfg = tiny("symbolic", extra, tmp.path());
        cfg.model.lnn = LnnConfig::Template {
            template: "double-pendulum".into(),
            split_a: 1.0,
        };
        let result = run(&cfg);
        let fit: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join("fit.json")).unwrap()).unwrap();
        assert_eq!(fit["template"], "linear-friction");
        assert_eq!(fit["n_points"], 41);
        assert_eq!(fit["params"].as_object().unwrap().len(), 4);
        if let Err(e) = result {
            assert_eq!(e.exit_code(), 3, "{e}");
        }
        let res = std::fs::read_to_string(tmp.path().join("residuals.csv")).unwrap();
        assert!(res.starts_with("t,r_1,r_2\n"));
    }

    #[test]
    fn extrapolation_flags_every_model() {
        let tmp = tempfile::tempdir().unwrap();
        let extra = r#",
            "system": "damped-double-pendulum",
            "data": { "source": "trajectory", "initial_state": { "q": [1, 0], "qdot": [0, 0], "t": 0 }, "step_size": 0.1, "n_steps": 60, "train_until": 3.0 }"#;
        let Report::Extrapolate(r) = run(&tiny("extrapolate", extra, tmp.path())).unwrap() else {
            panic!("wrong report")
        };
        assert_eq!(r.rows.len(), 61);
        assert_eq!(r.divergence.len(), 3);
        let csv = std::fs::read_to_string(tmp.path().join("extrapolation.csv")).unwrap();
        assert!(
            csv.starts_with("t,theta1_true,theta1_nnphd,theta1_lnn,theta1_blackbox,E_true,E_nnphd,E_lnn,E_blackbox\n")
        );
        assert_eq!(csv.lines().count(), 62);
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join("extrapolation.json")).unwrap()).unwrap();
        for m in ["nnphd", "lnn", "blackbox"] {
            assert!(side[m]["diverged"].is_boolean(), "{m}");
        }
    }

    #[test]
    fn preset_lookup_uses_the_environment() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("mine.json"), "{}").unwrap();
        std::env::set_var(PRESETS_ENV, tmp.path());
        let found = resolve_config_path("mine");
        let missing = resolve_config_path("absent");
        std::env::remove_var(PRESETS_ENV);
        assert_eq!(found.unwrap(), tmp.path().join("mine.json"));
        assert_eq!(missing.unwrap_err().exit_code(), 2);
    }
}
