use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::loss::LossReport;
use super::model::{Nnphd, NnphdParams};
use super::trainer::{evaluate, train, TraceRow, TrainConfig};
use super::TrainingError;
use crate::dynamics::{format_real, ForceSample};

/// Regularization grid swept from weak to strong penalty.
pub const DEFAULT_LAMBDA_GRID: [f64; 13] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];

/// λ window below the transition whose median recovery error is the baseline.
pub const LOW_WINDOW: (f64, f64) = (0.1, 0.5);
/// λ window above the transition compared against the baseline.
pub const HIGH_WINDOW: (f64, f64) = (2.0, 10.0);

/// Default jump threshold in force units.
pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub lambda: f64,
    pub train: LossReport,
    pub test: Option<LossReport>,
    pub params: NnphdParams,
    pub trace: Vec<TraceRow>,
    pub singular_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
}

/// One row of the sweep CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub train_le: f64,
    pub train_lb: f64,
    pub test_le: f64,
    pub test_lb: f64,
}

impl SweepResult {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.entries
            .iter()
            .map(|e| SweepRow {
                lambda: e.lambda,
                train_le: e.train.l_e,
                train_lb: e.train.l_b,
                test_le: e.test.map_or(f64::NAN, |t| t.l_e),
                test_lb: e.test.map_or(f64::NAN, |t| t.l_b),
            })
            .collect()
    }
}

/// Warm-started sweep: the first λ trains from `init`, every later λ starts
/// from the previous λ's final parameters. Each λ runs the full schedule of
/// `base` with a fresh optimizer.
pub fn lambda_sweep(
    model: &Nnphd,
    train_set: &[ForceSample],
    test_set: Option<&[ForceSample]>,
    grid: &[f64],
    base: &TrainConfig,
    init: &NnphdParams,
) -> Result<SweepResult, TrainingError> {
    if grid.is_empty() {
        return Err(TrainingError::InvalidConfig("λ grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(TrainingError::InvalidConfig(
            "λ grid must be strictly increasing".into(),
        ));
    }
    let mut current = init.clone();
    let mut entries = Vec::with_capacity(grid.len());
    for (k, &lambda) in grid.iter().enumerate() {
        let cfg = TrainConfig {
            lambda,
            seed: base.seed.wrapping_add(k as u64),
            ..base.clone()
        };
        let annotate = |e: TrainingError| TrainingError::AtLambda {
            lambda,
            source: Box::new(e),
        };
        let out = train(model, train_set, &cfg, &current).map_err(annotate)?;
        let train_eval = evaluate(model, &out.params, train_set, &cfg).map_err(annotate)?;
        let test = match test_set {
            Some(t) if !t.is_empty() => Some(evaluate(model, &out.params, t, &cfg).map_err(annotate)?.loss),
            _ => None,
        };
        current = out.params.clone();
        entries.push(SweepEntry {
            lambda,
            train: train_eval.loss,
            test,
            params: out.params,
            trace: out.trace,
            singular_skipped: out.singular_skipped,
        });
    }
    Ok(SweepResult { entries })
}

/// Outcome of the phase-transition test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub jump: f64,
    pub is_nonconservative: bool,
    pub tau: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Jump of the recovery error across `λ = 1` from `(λ, L_e)` pairs: median
/// over [`HIGH_WINDOW`] minus median over [`LOW_WINDOW`].
pub fn phase_jump(points: &[(f64, f64)]) -> Result<f64, TrainingError> {
    let within = |(lo, hi): (f64, f64)| -> Vec<f64> {
        points
            .iter()
            .filter(|(l, _)| *l >= lo && *l <= hi)
            .map(|(_, e)| *e)
            .collect()
    };
    let low = within(LOW_WINDOW);
    let high = within(HIGH_WINDOW);
    if low.is_empty() || high.is_empty() {
        return Err(TrainingError::InsufficientGrid(format!(
            "need λ values in [{}, {}] and in [{}, {}]",
            LOW_WINDOW.0, LOW_WINDOW.1, HIGH_WINDOW.0, HIGH_WINDOW.1
        )));
    }
    Ok(median(high) - median(low))
}

/// Flags non-conservation when the training recovery error jumps by more
/// than `tau` across `λ = 1`.
pub fn detect_phase_transition(sweep: &SweepResult, tau: f64) -> Result<Detection, TrainingError> {
    let points: Vec<(f64, f64)> = sweep.entries.iter().map(|e| (e.lambda, e.train.l_e)).collect();
    detect_from_points(&points, tau)
}

pub fn detect_from_points(points: &[(f64, f64)], tau: f64) -> Result<Detection, TrainingError> {
    let jump = phase_jump(points)?;
    Ok(Detection {
        jump,
        is_nonconservative: jump > tau,
        tau,
    })
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "lambda,train_Le,train_Lb,test_Le,test_Lb")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            format_real(r.lambda),
            format_real(r.train_le),
            format_real(r.train_lb),
            format_real(r.test_le),
            format_real(r.test_lb)
        )?;
    }
    Ok(())
}

pub fn read_sweep_csv<R: BufRead>(r: R) -> Result<Vec<SweepRow>, TrainingError> {
    let mut rows = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if k == 0 || line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| TrainingError::Parse {
                line: k + 1,
                reason: e.to_string(),
            })?;
        if v.len() != 5 {
            return Err(TrainingError::Parse {
                line: k + 1,
                reason: format!("expected 5 columns, got {}", v.len()),
            });
        }
        rows.push(SweepRow {
            lambda: v[0],
            train_le: v[1],
            train_lb: v[2],
            test_le: v[3],
            test_lb: v[4],
        });
    }
    Ok(rows)
}

pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TraceRow]) -> std::io::Result<()> {
    writeln!(w, "step,lr,Le,Lb,total")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step,
            format_real(r.lr),
            format_real(r.loss.l_e),
            format_real(r.loss.l_b),
            format_real(r.loss.total)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(le: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        DEFAULT_LAMBDA_GRID.iter().map(|&l| (l, le(l))).collect()
    }

    #[test]
    fn flat_curve_is_conservative() {
        let d = detect_from_points(&flat(|_| 0.01), DEFAULT_TAU).unwrap();
        assert!(!d.is_nonconservative);
        assert_eq!(d.jump, 0.0);
    }

    #[test]
    fn step_at_unit_lambda_is_detected() {
        let d = detect_from_points(&flat(|l| if l > 1.0 { 0.40 } else { 0.01 }), DEFAULT_TAU).unwrap();
        assert!(d.is_nonconservative);
        assert!((d.jump - 0.39).abs() < 1e-12);
    }

    #[test]
    fn grid_without_both_windows_is_rejected() {
        let pts = [(0.2, 0.1), (0.5, 0.1)];
        assert!(matches!(
            detect_from_points(&pts, 0.1),
            Err(TrainingError::InsufficientGrid(_))
        ));
    }

    #[test]
    fn csv_round_trip_preserves_detection() {
        let rows: Vec<SweepRow> = flat(|l| 0.1 + 0.3 * (l > 1.0) as u8 as f64 + 1e-3 * l)
            .into_iter()
            .map(|(lambda, le)| SweepRow {
                lambda,
                train_le: le,
                train_lb: 0.5 / lambda,
                test_le: f64::NAN,
                test_lb: f64::NAN,
            })
            .collect();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("lambda,train_Le,train_Lb,test_Le,test_Lb\n"));
        let back = read_sweep_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.train_le, b.train_le);
            assert!(b.test_le.is_nan());
        }
        let pts = |r: &[SweepRow]| r.iter().map(|r| (r.lambda, r.train_le)).collect::<Vec<_>>();
        assert_eq!(
            detect_from_points(&pts(&rows), 0.1).unwrap(),
            detect_from_points(&pts(&back), 0.1).unwrap()
        );
    }

    proptest! {
        #[test]
        fn detection_is_scale_covariant(
            le in proptest::collection::vec(0.0f64..2.0, 13),
            tau in 0.0f64..1.0,
            k in 0.01f64..100.0,
        ) {
            let pts: Vec<(f64, f64)> = DEFAULT_LAMBDA_GRID.iter().copied().zip(le.iter().copied()).collect();
            let scaled: Vec<(f64, f64)> = pts.iter().map(|(l, e)| (*l, e * k)).collect();
            let a = detect_from_points(&pts, tau).unwrap();
            let b = detect_from_points(&scaled, tau * k).unwrap();
            prop_assert!((b.jump - k * a.jump).abs() <= 1e-12 * (1.0 + b.jump.abs()));
            if (a.jump - tau).abs() > 1e-9 * (1.0 + tau) {
                prop_assert_eq!(a.is_nonconservative, b.is_nonconservative);
            }
        }
    }
}
