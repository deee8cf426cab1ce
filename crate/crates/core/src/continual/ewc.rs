//! Elastic weight consolidation on the shared first layer.
//!
//! During task 2 the loss gains `(ξ/2)·Σᵢ Fᵢ·(Wᵢ − Wᵢ*)²`, where `W*` are the
//! weights at the end of task 1 and `F` is a diagonal Fisher estimate on
//! task-1 inputs. Readouts are not penalised.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::protocol::{sgd_task1, sgd_task2, summarise, Backend, ContinualProtocol, TwoTaskResult};
use crate::error::{invalid, Error, Result};
use crate::meanfield::network::{dot, preactivations};
use crate::meanfield::{
    gaussian_input, sgd_step, teacher_output, Activation, StudentNetwork, Task, TeacherEnsemble,
};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherKind {
    /// Squared gradient of `½Δ²`.
    #[default]
    Empirical,
    /// Squared gradient of the output `ŷ` (unit noise variance).
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherScale {
    /// Mean over samples.
    #[default]
    PerSample,
    /// Mean over samples times `d`: importance per unit of `τ`.
    PerUnitTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EwcConfig {
    pub xi: f64,
    pub fisher_samples: usize,
    #[serde(default)]
    pub kind: FisherKind,
    #[serde(default)]
    pub scale: FisherScale,
}

impl Default for EwcConfig {
    fn default() -> Self {
        Self {
            xi: 0.0,
            fisher_samples: 1000,
            kind: FisherKind::Empirical,
            scale: FisherScale::PerSample,
        }
    }
}

impl EwcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(invalid(
                "xi",
                format!("must be finite and >= 0, got {}", self.xi),
            ));
        }
        if self.fisher_samples < 2 {
            return Err(invalid("fisher_samples", "must be >= 2"));
        }
        Ok(())
    }
}

/// Diagonal Fisher estimate with per-entry standard errors, both `d × p`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherEstimate {
    pub values: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
}

/// Diagonal Fisher of the first-layer weights over `n_samples` fresh inputs.
#[allow(clippy::too_many_arguments)]
pub fn fisher_diagonal(
    student: &StudentNetwork,
    ens: &TeacherEnsemble,
    task: Task,
    n_samples: usize,
    kind: FisherKind,
    scale: FisherScale,
    act: Activation,
    rng: &mut SimRng,
) -> Result<FisherEstimate> {
    if n_samples < 2 {
        return Err(invalid("fisher_samples", "must be >= 2"));
    }
    let (d, p) = (student.d(), student.p());
    let sq = (d as f64).sqrt();
    let h = student.readout(task);
    let mut sum = vec![0.0f64; d * p];
    let mut sum2 = vec![0.0f64; d * p];
    let mut x = vec![0.0; d];
    for _ in 0..n_samples {
        gaussian_input(rng, &mut x);
        let lam = preactivations(&student.w, &x);
        let scale_out = match kind {
            FisherKind::Empirical => {
                let f: Vec<f64> = lam.iter().map(|&l| act.value(l)).collect();
                dot(h.as_slice(), &f) - teacher_output(ens, task, &x, act)
            }
            FisherKind::Model => 1.0,
        };
        for i in 0..p {
            let c = scale_out * h[i] * act.derivative(lam[i]) / sq;
            let (s, s2) = (&mut sum[i * d..(i + 1) * d], &mut sum2[i * d..(i + 1) * d]);
            for j in 0..d {
                let g = c * x[j];
                let g2 = g * g;
                s[j] += g2;
                s2[j] += g2 * g2;
            }
        }
    }
    let n = n_samples as f64;
    let factor = match scale {
        FisherScale::PerSample => 1.0,
        FisherScale::PerUnitTime => d as f64,
    };
    let values = DMatrix::from_fn(d, p, |j, i| factor * sum[i * d + j] / n);
    let stderr = DMatrix::from_fn(d, p, |j, i| {
        let m = sum[i * d + j] / n;
        let var = (sum2[i * d + j] / n - m * m).max(0.0) * n / (n - 1.0);
        factor * (var / n).sqrt()
    });
    Ok(FisherEstimate { values, stderr })
}

/// Fisher, anchor and strength used during task 2.
#[derive(Debug, Clone, PartialEq)]
pub struct EwcState {
    pub xi: f64,
    pub fisher: DMatrix<f64>,
    pub anchor: DMatrix<f64>,
}

impl EwcState {
    pub fn new(xi: f64, fisher: DMatrix<f64>, anchor: DMatrix<f64>) -> Result<Self> {
        if fisher.shape() != anchor.shape() {
            return Err(Error::DimensionMismatch {
                expected: anchor.len(),
                got: fisher.len(),
            });
        }
        if fisher.iter().any(|&f| !(f >= 0.0)) {
            return Err(invalid("fisher", "entries must be >= 0"));
        }
        Ok(Self { xi, fisher, anchor })
    }
}

/// One task-2 SGD step plus the EWC pull towards the anchor.
///
/// The data term is explicit; the penalty is applied in implicit form,
/// `W ← W* + (W_sgd − W*)/(1 + η·ξ·F)`, which agrees with the gradient step
/// to first order in `η·ξ·F` and stays stable for any `ξ`.
pub fn ewc_step(
    student: &mut StudentNetwork,
    state: &EwcState,
    ens: &TeacherEnsemble,
    x: &[f64],
    eta: f64,
    act: Activation,
) -> Result<f64> {
    if state.anchor.shape() != student.w.shape() {
        return Err(Error::DimensionMismatch {
            expected: student.w.len(),
            got: state.anchor.len(),
        });
    }
    let delta = sgd_step(student, ens, Task::Two, x, eta, act)?;
    if state.xi > 0.0 {
        let k = eta * state.xi;
        for ((w, &a), &f) in student
            .w
            .iter_mut()
            .zip(state.anchor.iter())
            .zip(state.fisher.iter())
        {
            *w = a + (*w - a) / (1.0 + k * f);
        }
    }
    Ok(delta)
}

/// Errors of a task-1 run followed by task 2 at several EWC strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct EwcSweep {
    /// Errors before any training.
    pub eps1_init: f64,
    pub eps2_init: f64,
    /// Errors at the end of task 1.
    pub eps1_task1: f64,
    pub eps2_task1: f64,
    pub runs: Vec<(f64, TwoTaskResult)>,
}

/// Train task 1 once, then task 2 from the same snapshot for every `ξ`.
///
/// Each run equals [`super::run_two_task`] with the matching `ξ`.
pub fn run_ewc_sweep(proto: &ContinualProtocol, xis: &[f64]) -> Result<EwcSweep> {
    proto.validate()?;
    if proto.backend != Backend::Sgd {
        return Err(Error::Unsupported(
            "EWC runs on the SGD backend only".into(),
        ));
    }
    let base = proto.ewc.unwrap_or_default();
    let snap = sgd_task1(proto)?;
    let runs = xis
        .par_iter()
        .map(|&xi| {
            let cfg = EwcConfig { xi, ..base };
            cfg.validate()?;
            let (_, series) = sgd_task2(proto, &snap, Some(&cfg))?;
            Ok((xi, summarise(series, proto.seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let first = &snap.series.points[0];
    let end1 = snap.series.last().expect("task 1 recorded");
    Ok(EwcSweep {
        eps1_init: first.eps1,
        eps2_init: first.eps2,
        eps1_task1: end1.eps1,
        eps2_task1: end1.eps2,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continual::protocol::{run_two_task, ReadoutInit};
    use crate::meanfield::generate_teachers;
    use crate::rng;
    use nalgebra::DVector;

    fn student(d: usize, seed: u64) -> StudentNetwork {
        let mut r = rng::stream(seed, 1);
        StudentNetwork::init(
            d,
            0.5,
            DVector::from_vec(vec![0.8, 0.3]),
            DVector::from_vec(vec![0.1, 0.1]),
            &mut r,
        )
        .unwrap()
    }

    #[test]
    fn fisher_nonnegative_and_scaled() {
        let ens = generate_teachers(1, 50, 0.5, 2).unwrap();
        let s = student(50, 2);
        let f = |scale| {
            let mut r = rng::stream(5, 3);
            fisher_diagonal(
                &s,
                &ens,
                Task::One,
                200,
                FisherKind::Empirical,
                scale,
                Activation::ScaledErf,
                &mut r,
            )
            .unwrap()
        };
        let a = f(FisherScale::PerSample);
        let b = f(FisherScale::PerUnitTime);
        assert!(a.values.iter().all(|&v| v >= 0.0));
        assert!((b.values.clone() - a.values * 50.0).norm() < 1e-12 * b.values.norm());
    }

    #[test]
    fn zero_strength_is_plain_sgd() {
        let ens = generate_teachers(1, 40, 0.3, 1).unwrap();
        let mut a = student(40, 1);
        let mut b = a.clone();
        let state = EwcState::new(0.0, DMatrix::from_element(40, 2, 3.0), a.w.clone()).unwrap();
        let mut r = rng::stream(1, 2);
        let mut x = vec![0.0; 40];
        for _ in 0..20 {
            gaussian_input(&mut r, &mut x);
            ewc_step(&mut a, &state, &ens, &x, 0.5, Activation::ScaledErf).unwrap();
            sgd_step(&mut b, &ens, Task::Two, &x, 0.5, Activation::ScaledErf).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn huge_strength_pins_weights() {
        let ens = generate_teachers(1, 40, 0.3, 1).unwrap();
        let mut s = student(40, 1);
        let anchor = s.w.clone();
        let state = EwcState::new(1e6, DMatrix::from_element(40, 2, 1e-2), anchor.clone()).unwrap();
        let mut r = rng::stream(1, 2);
        let mut x = vec![0.0; 40];
        for _ in 0..200 {
            gaussian_input(&mut r, &mut x);
            ewc_step(&mut s, &state, &ens, &x, 0.5, Activation::ScaledErf).unwrap();
        }
        assert!((s.w - anchor).amax() < 1e-3);
    }

    #[test]
    fn sweep_matches_single_runs() {
        let proto = ContinualProtocol {
            d: 100,
            tau1: 3.0,
            tau2: 3.0,
            sigma_w: 0.1,
            init1: ReadoutInit::polar(0.5, 0.2),
            ewc: Some(EwcConfig {
                fisher_samples: 50,
                ..Default::default()
            }),
            ..Default::default()
        };
        let sweep = run_ewc_sweep(&proto, &[0.0, 0.5]).unwrap();
        for (xi, res) in &sweep.runs {
            let single = ContinualProtocol {
                ewc: Some(EwcConfig {
                    xi: *xi,
                    ..proto.ewc.unwrap()
                }),
                ..proto.clone()
            };
            assert_eq!(&run_two_task(&single).unwrap(), res);
        }
    }
}
