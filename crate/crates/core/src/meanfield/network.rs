//! Teachers, students and the online SGD update.
//!
//! Weight matrices are stored `d × units`: column `i` holds the incoming
//! weights of unit `i`, so each unit's weights are contiguous.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::activation::Activation;
use crate::error::{invalid, Error, Result};
use crate::rng::{self, SimRng};

/// Which of the two tasks is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    One,
    Two,
}

impl Task {
    pub fn index(self) -> usize {
        match self {
            Task::One => 0,
            Task::Two => 1,
        }
    }
}

/// First layers and readouts of the two task teachers.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEnsemble {
    /// `d × p*`, task 1.
    pub w_t1: DMatrix<f64>,
    /// `d × p*`, task 2: `γ·W_T1 + sqrt(1 − γ²)·W_aux`.
    pub w_t2: DMatrix<f64>,
    pub h_t1: DVector<f64>,
    pub h_t2: DVector<f64>,
    pub gamma: f64,
}

impl TeacherEnsemble {
    pub fn d(&self) -> usize {
        self.w_t1.nrows()
    }

    pub fn p_star(&self) -> usize {
        self.w_t1.ncols()
    }

    pub fn weights(&self, task: Task) -> &DMatrix<f64> {
        match task {
            Task::One => &self.w_t1,
            Task::Two => &self.w_t2,
        }
    }

    pub fn readout(&self, task: Task) -> &DVector<f64> {
        match task {
            Task::One => &self.h_t1,
            Task::Two => &self.h_t2,
        }
    }

    /// Make task 2 an exact copy of task 1.
    pub fn make_identical(&mut self) {
        self.w_t2 = self.w_t1.clone();
        self.h_t2 = self.h_t1.clone();
        self.gamma = 1.0;
    }
}

/// Draw a teacher pair with task similarity `gamma`.
///
/// Draw order is fixed (`W_T1`, `W_aux`, `h_T1`, `h_T2`), so ensembles with
/// the same seed and different `gamma` share every random component.
pub fn generate_teachers(
    p_star: usize,
    d: usize,
    gamma: f64,
    seed: u64,
) -> Result<TeacherEnsemble> {
    if p_star == 0 {
        return Err(invalid("p_star", "must be >= 1"));
    }
    if d == 0 {
        return Err(invalid("d", "must be >= 1"));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid("gamma", format!("must lie in [0, 1], got {gamma}")));
    }
    let mut r = rng::stream(seed, 0);
    let w_t1 = DMatrix::<f64>::from_fn(d, p_star, |_, _| r.sample(StandardNormal));
    let w_aux = DMatrix::<f64>::from_fn(d, p_star, |_, _| r.sample(StandardNormal));
    let h_t1 = DVector::<f64>::from_fn(p_star, |_, _| r.sample(StandardNormal));
    let h_t2 = DVector::<f64>::from_fn(p_star, |_, _| r.sample(StandardNormal));
    let w_t2 = if gamma == 1.0 {
        w_t1.clone()
    } else {
        &w_t1 * gamma + w_aux * (1.0 - gamma * gamma).sqrt()
    };
    Ok(TeacherEnsemble {
        w_t1,
        w_t2,
        h_t1,
        h_t2,
        gamma,
    })
}

/// Shared first layer with one readout per task.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentNetwork {
    /// `d × p`.
    pub w: DMatrix<f64>,
    pub h1: DVector<f64>,
    pub h2: DVector<f64>,
    pub sigma_w: f64,
}

impl StudentNetwork {
    /// Gaussian first layer with standard deviation `sigma_w`.
    pub fn init(
        d: usize,
        sigma_w: f64,
        h1: DVector<f64>,
        h2: DVector<f64>,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if h1.len() != h2.len() {
            return Err(Error::DimensionMismatch {
                expected: h1.len(),
                got: h2.len(),
            });
        }
        if !(sigma_w >= 0.0 && sigma_w.is_finite()) {
            return Err(invalid(
                "sigma_w",
                format!("must be finite and >= 0, got {sigma_w}"),
            ));
        }
        let p = h1.len();
        let w =
            DMatrix::<f64>::from_fn(d, p, |_, _| sigma_w * rng.sample::<f64, _>(StandardNormal));
        Ok(Self { w, h1, h2, sigma_w })
    }

    pub fn d(&self) -> usize {
        self.w.nrows()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn readout(&self, task: Task) -> &DVector<f64> {
        match task {
            Task::One => &self.h1,
            Task::Two => &self.h2,
        }
    }

    pub fn readout_mut(&mut self, task: Task) -> &mut DVector<f64> {
        match task {
            Task::One => &mut self.h1,
            Task::Two => &mut self.h2,
        }
    }

    /// Pre-activations `Wᵢ·x/√d`.
    pub fn preactivations(&self, x: &[f64]) -> Vec<f64> {
        preactivations(&self.w, x)
    }

    /// Output for task `task` on input `x`.
    pub fn output(&self, task: Task, x: &[f64], act: Activation) -> f64 {
        let h = self.readout(task);
        self.preactivations(x)
            .iter()
            .zip(h.iter())
            .map(|(&l, &hi)| hi * act.value(l))
            .sum()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn preactivations(w: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let d = w.nrows();
    let sq = (d as f64).sqrt();
    w.as_slice()
        .chunks_exact(d)
        .map(|col| dot(col, x) / sq)
        .collect()
}

/// Teacher output for `task` on `x`.
pub fn teacher_output(ens: &TeacherEnsemble, task: Task, x: &[f64], act: Activation) -> f64 {
    preactivations(ens.weights(task), x)
        .iter()
        .zip(ens.readout(task).iter())
        .map(|(&r, &h)| h * act.value(r))
        .sum()
}

/// Fill `x` with independent standard normals.
pub fn gaussian_input(rng: &mut SimRng, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi = rng.sample(StandardNormal);
    }
}

/// One online SGD step on `½Δ²`; returns the residual `Δ`.
///
/// `ΔWᵢ = −(η/√d)·Δ·hᵢ·φ′(λᵢ)·x` for every unit and
/// `Δhᵢ = −(η/d)·Δ·φ(λᵢ)` for the active readout only.
pub fn sgd_step(
    student: &mut StudentNetwork,
    ens: &TeacherEnsemble,
    task: Task,
    x: &[f64],
    eta: f64,
    act: Activation,
) -> Result<f64> {
    let d = student.d();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if ens.d() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: ens.d(),
        });
    }
    let sq = (d as f64).sqrt();
    let lam = student.preactivations(x);
    let y = teacher_output(ens, task, x, act);
    let h = student.readout(task).clone();
    let f: Vec<f64> = lam.iter().map(|&l| act.value(l)).collect();
    let delta = dot(h.as_slice(), &f) - y;
    if delta == 0.0 || eta == 0.0 {
        return Ok(delta);
    }
    for (i, col) in student.w.as_mut_slice().chunks_exact_mut(d).enumerate() {
        let g = -eta / sq * delta * h[i] * act.derivative(lam[i]);
        if g != 0.0 {
            for (wj, xj) in col.iter_mut().zip(x) {
                *wj += g * xj;
            }
        }
    }
    let scale = eta / d as f64 * delta;
    for (hi, fi) in student.readout_mut(task).iter_mut().zip(&f) {
        *hi -= scale * fi;
    }
    Ok(delta)
}
