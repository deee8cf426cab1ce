//! Order parameters and the generalisation error.

use nalgebra::{DMatrix, DVector};

use super::activation::Activation;
use super::averages::{i2, relu_pair};
use super::network::{StudentNetwork, Task, TeacherEnsemble};
use crate::error::{Error, Result};

/// Overlaps and readouts that determine every mean-field observable.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderParams {
    /// `p × p` student-student overlap.
    pub q: DMatrix<f64>,
    /// `p × p*` student-teacher overlaps for each task.
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
    /// `p* × p*` teacher-teacher overlaps.
    pub t11: DMatrix<f64>,
    pub t12: DMatrix<f64>,
    pub t22: DMatrix<f64>,
    pub h1: DVector<f64>,
    pub h2: DVector<f64>,
    pub h_t1: DVector<f64>,
    pub h_t2: DVector<f64>,
}

impl OrderParams {
    /// `Q = WWᵀ/d`, `R⁽ᵗ⁾ = W·W_T⁽ᵗ⁾ᵀ/d`, `T⁽ᵗᵗ'⁾ = W_T⁽ᵗ⁾·W_T⁽ᵗ'⁾ᵀ/d`.
    pub fn from_weights(student: &StudentNetwork, ens: &TeacherEnsemble) -> Self {
        let d = student.d() as f64;
        let w = &student.w;
        Self {
            q: w.tr_mul(w) / d,
            r1: w.tr_mul(&ens.w_t1) / d,
            r2: w.tr_mul(&ens.w_t2) / d,
            t11: ens.w_t1.tr_mul(&ens.w_t1) / d,
            t12: ens.w_t1.tr_mul(&ens.w_t2) / d,
            t22: ens.w_t2.tr_mul(&ens.w_t2) / d,
            h1: student.h1.clone(),
            h2: student.h2.clone(),
            h_t1: ens.h_t1.clone(),
            h_t2: ens.h_t2.clone(),
        }
    }

    pub fn p(&self) -> usize {
        self.q.nrows()
    }

    pub fn p_star(&self) -> usize {
        self.t11.nrows()
    }

    pub fn readout(&self, task: Task) -> &DVector<f64> {
        match task {
            Task::One => &self.h1,
            Task::Two => &self.h2,
        }
    }

    pub fn teacher_readout(&self, task: Task) -> &DVector<f64> {
        match task {
            Task::One => &self.h_t1,
            Task::Two => &self.h_t2,
        }
    }

    /// Covariance of all pre-activations, ordered students, task-1
    /// teachers, task-2 teachers: `[[Q, R1, R2], [R1ᵀ, T11, T12], [R2ᵀ, T12ᵀ, T22]]`.
    pub fn full_covariance(&self) -> DMatrix<f64> {
        let (p, ps) = (self.p(), self.p_star());
        let n = p + 2 * ps;
        let mut c = DMatrix::zeros(n, n);
        c.view_mut((0, 0), (p, p)).copy_from(&self.q);
        c.view_mut((0, p), (p, ps)).copy_from(&self.r1);
        c.view_mut((0, p + ps), (p, ps)).copy_from(&self.r2);
        c.view_mut((p, 0), (ps, p)).copy_from(&self.r1.transpose());
        c.view_mut((p + ps, 0), (ps, p))
            .copy_from(&self.r2.transpose());
        c.view_mut((p, p), (ps, ps)).copy_from(&self.t11);
        c.view_mut((p, p + ps), (ps, ps)).copy_from(&self.t12);
        c.view_mut((p + ps, p), (ps, ps))
            .copy_from(&self.t12.transpose());
        c.view_mut((p + ps, p + ps), (ps, ps)).copy_from(&self.t22);
        c
    }

    /// Replace the overlap blocks from a full covariance.
    pub fn set_from_covariance(&mut self, c: &DMatrix<f64>) {
        let (p, ps) = (self.p(), self.p_star());
        self.q.copy_from(&c.view((0, 0), (p, p)));
        self.r1.copy_from(&c.view((0, p), (p, ps)));
        self.r2.copy_from(&c.view((0, p + ps), (p, ps)));
        self.t11.copy_from(&c.view((p, p), (ps, ps)));
        self.t12.copy_from(&c.view((p, p + ps), (ps, ps)));
        self.t22.copy_from(&c.view((p + ps, p + ps), (ps, ps)));
    }

    /// Smallest eigenvalue of the full covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        self.full_covariance()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `sqrt(Qᵢᵢ)` per student unit.
    pub fn node_norms(&self) -> Vec<f64> {
        (0..self.p())
            .map(|i| self.q[(i, i)].max(0.0).sqrt())
            .collect()
    }
}

/// Output coefficients and covariance indices of the residual for `task`:
/// students enter with `+hᵢ`, the task's teachers with `−h_{T,n}`.
pub(crate) fn residual_terms(op: &OrderParams, task: Task) -> (Vec<f64>, Vec<usize>) {
    let (p, ps) = (op.p(), op.p_star());
    let h = op.readout(task);
    let ht = op.teacher_readout(task);
    let offset = p + task.index() * ps;
    let mut coef = Vec::with_capacity(p + ps);
    let mut idx = Vec::with_capacity(p + ps);
    for i in 0..p {
        coef.push(h[i]);
        idx.push(i);
    }
    for n in 0..ps {
        coef.push(-ht[n]);
        idx.push(offset + n);
    }
    (coef, idx)
}

/// `½·Σ_{u,v} c_u·c_v·I2(u, v)` given the full covariance.
pub(crate) fn eps_from_cov(c: &DMatrix<f64>, coef: &[f64], idx: &[usize]) -> Result<f64> {
    eps_with(c, coef, idx, i2)
}

fn eps_with(
    c: &DMatrix<f64>,
    coef: &[f64],
    idx: &[usize],
    pair: fn(&DMatrix<f64>, usize, usize) -> Result<f64>,
) -> Result<f64> {
    let mut e = 0.0;
    for (a, (&ca, &ia)) in coef.iter().zip(idx).enumerate() {
        e += ca * ca * pair(c, ia, ia)?;
        for (&cb, &ib) in coef.iter().zip(idx).skip(a + 1) {
            e += 2.0 * ca * cb * pair(c, ia, ib)?;
        }
    }
    Ok(0.5 * e)
}

/// `ε⁽ᵗ⁾ = ½·E[(Δ⁽ᵗ⁾)²]`.
///
/// Expanded as `½[Σᵢₖ hᵢhₖ·I2(Q) − 2Σᵢₙ hᵢh_{T,n}·I2(Q,R,T) + Σₙₘ h_{T,n}h_{T,m}·I2(T)]`.
pub fn generalisation_error(op: &OrderParams, task: Task) -> Result<f64> {
    generalisation_error_for(op, task, Activation::ScaledErf)
}

/// Generalisation error for either activation; ReLU uses the arc-cosine kernel.
pub fn generalisation_error_for(op: &OrderParams, task: Task, act: Activation) -> Result<f64> {
    let c = op.full_covariance();
    let (coef, idx) = residual_terms(op, task);
    let e = match act {
        Activation::ScaledErf => eps_from_cov(&c, &coef, &idx)?,
        Activation::Relu => eps_with(&c, &coef, &idx, relu_pair)?,
    };
    if e < -1e-10 {
        return Err(Error::Domain {
            what: "generalisation error",
            value: e,
        });
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::network::generate_teachers;
    use crate::rng;

    fn matched(p: usize) -> (StudentNetwork, TeacherEnsemble) {
        let ens = generate_teachers(p, 200, 0.4, 1).unwrap();
        let s = StudentNetwork {
            w: ens.w_t1.clone(),
            h1: ens.h_t1.clone(),
            h2: DVector::zeros(p),
            sigma_w: 0.0,
        };
        (s, ens)
    }

    #[test]
    fn identical_weights_give_identical_overlaps() {
        let (s, ens) = matched(2);
        let op = OrderParams::from_weights(&s, &ens);
        assert_eq!(op.q, op.r1);
        assert_eq!(op.r1, op.t11);
    }

    #[test]
    fn zero_weights_give_zero_overlaps() {
        let (mut s, ens) = matched(2);
        s.w.fill(0.0);
        let op = OrderParams::from_weights(&s, &ens);
        assert!(op.q.iter().all(|&v| v == 0.0));
        assert!(op.r1.iter().all(|&v| v == 0.0));
        assert!(op.r2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_weights_psd() {
        let ens = generate_teachers(2, 1000, 0.7, 3).unwrap();
        let mut r = rng::stream(3, 1);
        let s = StudentNetwork::init(
            1000,
            1.0,
            DVector::from_vec(vec![1.0, 0.5, -0.2]),
            DVector::zeros(3),
            &mut r,
        )
        .unwrap();
        let op = OrderParams::from_weights(&s, &ens);
        assert!((op.q.clone() - op.q.transpose()).norm() == 0.0);
        assert!(op.min_eigenvalue() >= -1e-10);
        let c = op.full_covariance();
        let mut back = op.clone();
        back.q.fill(0.0);
        back.set_from_covariance(&c);
        assert_eq!(back, op);
    }

    #[test]
    fn zero_error_at_teacher() {
        let (s, ens) = matched(2);
        let op = OrderParams::from_weights(&s, &ens);
        assert!(generalisation_error(&op, Task::One).unwrap().abs() < 1e-14);
    }

    #[test]
    fn silent_student_sees_teacher_term_only() {
        let (mut s, ens) = matched(2);
        s.h1.fill(0.0);
        let op = OrderParams::from_weights(&s, &ens);
        let c = op.full_covariance();
        let mut expect = 0.0;
        for n in 0..2 {
            for m in 0..2 {
                expect += op.h_t1[n] * op.h_t1[m] * i2(&c, 2 + n, 2 + m).unwrap();
            }
        }
        let e = generalisation_error(&op, Task::One).unwrap();
        assert!((e - 0.5 * expect).abs() < 1e-14);
    }
}
