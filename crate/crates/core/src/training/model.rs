use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::dynamics::{ForceSample, State};
use crate::networks::{LagrangianModel, ParamVector, UanModel};

/// Which branches contribute to the predicted force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branches {
    /// `f_c + f_n`, both trained jointly.
    #[default]
    Both,
    /// Lagrangian branch alone; `f_n ≡ 0`.
    LnnOnly,
    /// Black-box branch alone, trained on the recovery error only; `f_c ≡ 0`.
    UanOnly,
}

impl Branches {
    pub fn uses_lnn(self) -> bool {
        self != Branches::UanOnly
    }

    pub fn uses_uan(self) -> bool {
        self != Branches::LnnOnly
    }
}

/// Handling of states where the learned mass matrix cannot be inverted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularPolicy {
    #[default]
    Abort,
    /// Drop the sample from the loss and count it.
    SkipSample,
}

/// The two-branch model: a Lagrangian network for `f_c` and a black-box
/// network for `f_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Nnphd {
    pub lnn: LagrangianModel,
    pub uan: UanModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnphdParams {
    pub c: ParamVector,
    pub n: ParamVector,
}

/// Branch outputs for a set of states, flattened sample-major
/// (`index = sample·n + component`).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub n: usize,
    pub f_c: Vec<f64>,
    pub f_n: Vec<f64>,
    /// Condition estimate of samples whose mass matrix was singular; their
    /// `f_c` entries are zero.
    pub singular: Vec<Option<f64>>,
}

impl Prediction {
    pub fn total(&self) -> Vec<f64> {
        self.f_c.iter().zip(&self.f_n).map(|(a, b)| a + b).collect()
    }
}

/// Batch size for evaluation passes that carry no gradient.
const EVAL_CHUNK: usize = 256;

impl Nnphd {
    pub fn validate(&self) -> Result<(), TrainingError> {
        self.lnn.validate()?;
        self.uan.validate()?;
        if self.lnn.n() != self.uan.n() {
            return Err(TrainingError::InvalidConfig(format!(
                "branch dimensions differ: Lagrangian {} vs force network {}",
                self.lnn.n(),
                self.uan.n()
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.lnn.n()
    }

    pub fn init_params(&self, seed: u64) -> NnphdParams {
        NnphdParams {
            c: self.lnn.init_params(seed),
            n: self.uan.init_params(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
        }
    }

    /// Branch forces at `states`, evaluated in chunks. Singular samples are
    /// reported, not raised.
    pub fn predict(
        &self,
        params: &NnphdParams,
        states: &[&State],
        branches: Branches,
    ) -> Result<Prediction, TrainingError> {
        let n = self.n();
        let mut out = Prediction {
            n,
            f_c: vec![0.0; n * states.len()],
            f_n: vec![0.0; n * states.len()],
            singular: vec![None; states.len()],
        };
        for (k, chunk) in states.chunks(EVAL_CHUNK).enumerate() {
            let base = k * EVAL_CHUNK;
            if branches.uses_lnn() {
                let fwd = self.lnn.forces(params.c.values(), chunk)?;
                for b in 0..chunk.len() {
                    out.singular[base + b] = fwd.singular[b];
                    for i in 0..n {
                        out.f_c[(base + b) * n + i] = fwd.f[[i, b]];
                    }
                }
            }
            if branches.uses_uan() {
                let (fnn, _) = self.uan.forward(params.n.values(), chunk)?;
                for b in 0..chunk.len() {
                    for i in 0..n {
                        out.f_n[(base + b) * n + i] = fnn[[i, b]];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Predicted total force at one state; a singular mass matrix is an error.
    pub fn force(&self, params: &NnphdParams, state: &State, branches: Branches) -> Result<Vec<f64>, TrainingError> {
        let mut f = vec![0.0; self.n()];
        if branches.uses_lnn() {
            f = self.lnn.lnn_force(params.c.values(), state)?;
        }
        if branches.uses_uan() {
            for (a, b) in f.iter_mut().zip(self.uan.force(params.n.values(), state)?) {
                *a += b;
            }
        }
        Ok(f)
    }
}

/// Root-mean-square deviation of each learned branch from the true split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentReport {
    pub m_c: f64,
    pub m_n: f64,
}

/// Misalignment of the learned decomposition against samples carrying the
/// true split.
pub fn misalignment(
    model: &Nnphd,
    params: &NnphdParams,
    samples: &[ForceSample],
    branches: Branches,
) -> Result<MisalignmentReport, TrainingError> {
    if samples.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let states: Vec<&State> = samples.iter().map(|s| &s.state).collect();
    let pred = model.predict(params, &states, branches)?;
    if let Some(b) = pred.singular.iter().position(Option::is_some) {
        return Err(TrainingError::singular(
            None,
            &samples[b].state,
            pred.singular[b].unwrap_or(f64::INFINITY),
        ));
    }
    misalignment_of(&pred, samples)
}

/// Misalignment from precomputed branch outputs.
pub fn misalignment_of(pred: &Prediction, samples: &[ForceSample]) -> Result<MisalignmentReport, TrainingError> {
    let n = pred.n;
    let (mut sc, mut sn) = (0.0, 0.0);
    for (b, s) in samples.iter().enumerate() {
        let (Some(fc), Some(fnn)) = (&s.f_c_true, &s.f_n_true) else {
            return Err(TrainingError::MissingGroundTruth);
        };
        for i in 0..n {
            sc += (pred.f_c[b * n + i] - fc[i]).powi(2);
            sn += (pred.f_n[b * n + i] - fnn[i]).powi(2);
        }
    }
    let count = (samples.len() * n) as f64;
    Ok(MisalignmentReport {
        m_c: (sc / count).sqrt(),
        m_n: (sn / count).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(fc: Vec<f64>, fnn: Vec<f64>) -> Prediction {
        Prediction {
            n: 1,
            singular: vec![None; fc.len()],
            f_c: fc,
            f_n: fnn,
        }
    }

    fn sample(fc: f64, fnn: f64) -> ForceSample {
        ForceSample {
            state: State::new(vec![0.0], vec![0.0], 0.0),
            f: vec![fc + fnn],
            f_c_true: Some(vec![fc]),
            f_n_true: Some(vec![fnn]),
        }
    }

    #[test]
    fn exact_split_has_zero_misalignment() {
        let s = vec![sample(1.0, 0.5), sample(-2.0, 0.1)];
        let m = misalignment_of(&pred(vec![1.0, -2.0], vec![0.5, 0.1]), &s).unwrap();
        assert_eq!((m.m_c, m.m_n), (0.0, 0.0));
    }

    #[test]
    fn constant_offset() {
        let s = vec![sample(1.0, 0.5), sample(-2.0, 0.1)];
        let m = misalignment_of(&pred(vec![2.0, -1.0], vec![0.5, 0.1]), &s).unwrap();
        assert_eq!(m.m_c, 1.0);
    }

    #[test]
    fn missing_truth_is_an_error() {
        let mut s = sample(1.0, 0.0);
        s.f_n_true = None;
        assert!(matches!(
            misalignment_of(&pred(vec![1.0], vec![0.0]), &[s]),
            Err(TrainingError::MissingGroundTruth)
        ));
    }
}
