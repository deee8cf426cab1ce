//! Two-task training protocol on either backend.

use std::f64::consts::FRAC_PI_4;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::entropy::{entropy_measures, EntropyReport};
use super::ewc::{ewc_step, fisher_diagonal, EwcConfig, EwcState};
use crate::error::{invalid, Error, Result};
use crate::meanfield::{
    gaussian_input, generalisation_error_for, generate_teachers, integrate, sgd_step, Activation,
    OrderParams, Segment, Series, SeriesPoint, StudentNetwork, Task, TeacherEnsemble,
};
use crate::rng::{self, SimRng};

pub(crate) const STREAM_STUDENT: u64 = 1;
pub(crate) const STREAM_TASK1: u64 = 2;
pub(crate) const STREAM_FISHER: u64 = 3;
pub(crate) const STREAM_TASK2: u64 = 4;

/// Two-unit readout `(r·cos θ, r·sin θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarReadoutInit {
    pub r: f64,
    pub theta: f64,
}

impl PolarReadoutInit {
    pub fn new(r: f64, theta: f64) -> Result<Self> {
        let init = Self { r, theta };
        init.validate()?;
        Ok(init)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(invalid(
                "r",
                format!("must be finite and > 0, got {}", self.r),
            ));
        }
        if !(0.0..=FRAC_PI_4 + 1e-12).contains(&self.theta) {
            return Err(invalid(
                "theta",
                format!("must lie in [0, pi/4], got {}", self.theta),
            ));
        }
        Ok(())
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.r * self.theta.cos(), self.r * self.theta.sin()])
    }
}

/// Readout initialisation for one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReadoutInit {
    /// Requires `p = 2`.
    Polar(PolarReadoutInit),
    /// Independent `N(0, std²)` entries.
    Gaussian { std: f64 },
}

impl ReadoutInit {
    pub fn polar(r: f64, theta: f64) -> Self {
        ReadoutInit::Polar(PolarReadoutInit { r, theta })
    }

    fn validate(&self, p: usize) -> Result<()> {
        match self {
            ReadoutInit::Polar(init) => {
                if p != 2 {
                    return Err(invalid("p", format!("polar readout needs p = 2, got {p}")));
                }
                init.validate()
            }
            ReadoutInit::Gaussian { std } => {
                if !(*std >= 0.0 && std.is_finite()) {
                    return Err(invalid(
                        "std",
                        format!("must be finite and >= 0, got {std}"),
                    ));
                }
                Ok(())
            }
        }
    }

    fn draw(&self, p: usize, rng: &mut SimRng) -> DVector<f64> {
        match self {
            ReadoutInit::Polar(init) => init.vector(),
            ReadoutInit::Gaussian { std } => {
                DVector::from_fn(p, |_, _| std * rng.sample::<f64, _>(StandardNormal))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Online SGD at finite `d`; order parameters recomputed from weights.
    Sgd,
    /// Order-parameter ODEs started from a finite-`d` draw.
    Ode,
}

/// Complete description of one two-task run.
///
/// Training lengths are in units of `τ = steps/d`; the SGD backend performs
/// `round(τ·d)` steps per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinualProtocol {
    pub d: usize,
    pub p: usize,
    pub p_star: usize,
    pub gamma: f64,
    pub sigma_w: f64,
    pub init1: ReadoutInit,
    pub init2: ReadoutInit,
    pub eta: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub backend: Backend,
    pub activation: Activation,
    pub ewc: Option<EwcConfig>,
    pub seed: u64,
    /// Force `W_T2 = W_T1`, `h_T2 = h_T1`.
    pub identical_tasks: bool,
    /// ODE step.
    pub dtau: f64,
    pub record_every: f64,
}

impl Default for ContinualProtocol {
    fn default() -> Self {
        Self {
            d: 1000,
            p: 2,
            p_star: 1,
            gamma: 0.5,
            sigma_w: 1e-3,
            init1: ReadoutInit::polar(0.01, 0.0),
            init2: ReadoutInit::polar(0.1, FRAC_PI_4),
            eta: 1.0,
            tau1: 100.0,
            tau2: 100.0,
            backend: Backend::Sgd,
            activation: Activation::ScaledErf,
            ewc: None,
            seed: 0,
            identical_tasks: false,
            dtau: 0.01,
            record_every: 1.0,
        }
    }
}

impl ContinualProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d", "must be >= 1"));
        }
        if self.p == 0 {
            return Err(invalid("p", "must be >= 1"));
        }
        if self.p_star == 0 {
            return Err(invalid("p_star", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid(
                "gamma",
                format!("must lie in [0, 1], got {}", self.gamma),
            ));
        }
        if !(self.sigma_w >= 0.0 && self.sigma_w.is_finite()) {
            return Err(invalid(
                "sigma_w",
                format!("must be finite and >= 0, got {}", self.sigma_w),
            ));
        }
        self.init1.validate(self.p)?;
        self.init2.validate(self.p)?;
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(
                "eta",
                format!("must be finite and > 0, got {}", self.eta),
            ));
        }
        for (field, v) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.dtau > 0.0 && self.dtau.is_finite()) {
            return Err(invalid(
                "dtau",
                format!("must be finite and > 0, got {}", self.dtau),
            ));
        }
        if !(self.record_every > 0.0 && self.record_every.is_finite()) {
            return Err(invalid(
                "record_every",
                format!("must be finite and > 0, got {}", self.record_every),
            ));
        }
        if let Some(ewc) = &self.ewc {
            ewc.validate()?;
        }
        if self.backend == Backend::Ode {
            if self.activation != Activation::ScaledErf {
                return Err(Error::Unsupported(
                    "the ODE backend needs the scaled error function".into(),
                ));
            }
            if self.ewc.is_some() {
                return Err(Error::Unsupported(
                    "EWC runs on the SGD backend only".into(),
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn steps(&self, tau: f64) -> u64 {
        (tau * self.d as f64).round() as u64
    }

    /// Teachers and initial student for this protocol.
    pub fn setup(&self) -> Result<(TeacherEnsemble, StudentNetwork)> {
        self.validate()?;
        let mut ens = generate_teachers(self.p_star, self.d, self.gamma, self.seed)?;
        if self.identical_tasks {
            ens.make_identical();
        }
        let mut r = rng::stream(self.seed, STREAM_STUDENT);
        let h1 = self.init1.draw(self.p, &mut r);
        let h2 = self.init2.draw(self.p, &mut r);
        let student = StudentNetwork::init(self.d, self.sigma_w, h1, h2, &mut r)?;
        Ok((ens, student))
    }
}

/// Outcome of [`run_two_task`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTaskResult {
    pub series: Series,
    pub forgetting: f64,
    /// Entropies of `(Q, h⁽¹⁾)` at the end of task 1; `None` if `h⁽¹⁾` vanished.
    pub entropy_task1: Option<EntropyReport>,
    /// Entropies of `(Q, h⁽²⁾)` at the end of task 2.
    pub entropy_task2: Option<EntropyReport>,
    pub node_norms_task1: Vec<f64>,
    pub node_norms_final: Vec<f64>,
    pub eps1_task1: f64,
    pub eps1_final: f64,
    pub eps2_final: f64,
    pub seed: u64,
}

/// `ε⁽¹⁾` at the end of training minus `ε⁽¹⁾` at the end of task 1.
pub fn forgetting(series: &Series) -> f64 {
    match (series.at_boundary(0), series.last()) {
        (Some(a), Some(b)) => b.eps1 - a.eps1,
        _ => 0.0,
    }
}

/// `sqrt(Qᵢᵢ)` per student unit.
pub fn node_norms(op: &OrderParams) -> Vec<f64> {
    op.node_norms()
}

/// Online SGD through successive tasks, recording order parameters.
pub(crate) struct SgdDriver<'a> {
    pub ens: &'a TeacherEnsemble,
    pub act: Activation,
    pub eta: f64,
    pub stride: u64,
    pub steps_done: u64,
    x: Vec<f64>,
}

impl<'a> SgdDriver<'a> {
    pub fn new(ens: &'a TeacherEnsemble, proto: &ContinualProtocol) -> Self {
        let stride = ((proto.record_every * proto.d as f64).round() as u64).max(1);
        Self {
            ens,
            act: proto.activation,
            eta: proto.eta,
            stride,
            steps_done: 0,
            x: vec![0.0; proto.d],
        }
    }

    pub fn record(&self, student: &StudentNetwork, series: &mut Series) -> Result<()> {
        let op = OrderParams::from_weights(student, self.ens);
        let tau = self.steps_done as f64 / student.d() as f64;
        for i in 0..op.p() {
            let q = op.q[(i, i)];
            if !(q.abs() <= 1e6) {
                return Err(Error::Instability {
                    what: "student self-overlap",
                    value: q,
                    time: tau,
                });
            }
        }
        series.points.push(SeriesPoint {
            tau,
            eps1: generalisation_error_for(&op, Task::One, self.act)?,
            eps2: generalisation_error_for(&op, Task::Two, self.act)?,
            op,
        });
        Ok(())
    }

    /// Train on `task` for `steps` steps drawing inputs from `inputs`.
    pub fn segment(
        &mut self,
        student: &mut StudentNetwork,
        task: Task,
        steps: u64,
        inputs: &mut SimRng,
        ewc: Option<&EwcState>,
        series: &mut Series,
    ) -> Result<()> {
        if series.points.is_empty() {
            self.record(student, series)?;
        }
        for k in 1..=steps {
            gaussian_input(inputs, &mut self.x);
            match ewc {
                Some(state) => ewc_step(student, state, self.ens, &self.x, self.eta, self.act)?,
                None => sgd_step(student, self.ens, task, &self.x, self.eta, self.act)?,
            };
            self.steps_done += 1;
            if k % self.stride == 0 || k == steps {
                self.record(student, series)?;
            }
        }
        series.boundaries.push(series.points.len() - 1);
        Ok(())
    }
}

/// Student and recorded series at the end of task 1 on the SGD backend.
pub(crate) struct Task1Snapshot {
    pub ens: TeacherEnsemble,
    pub student: StudentNetwork,
    pub series: Series,
    pub steps_done: u64,
}

pub(crate) fn sgd_task1(proto: &ContinualProtocol) -> Result<Task1Snapshot> {
    let (ens, mut student) = proto.setup()?;
    let mut series = Series::default();
    let steps_done = {
        let mut driver = SgdDriver::new(&ens, proto);
        let mut inputs = rng::stream(proto.seed, STREAM_TASK1);
        driver.segment(
            &mut student,
            Task::One,
            proto.steps(proto.tau1),
            &mut inputs,
            None,
            &mut series,
        )?;
        driver.steps_done
    };
    Ok(Task1Snapshot {
        ens,
        student,
        series,
        steps_done,
    })
}

/// Continue a task-1 snapshot through task 2, with EWC if `ewc` is set.
pub(crate) fn sgd_task2(
    proto: &ContinualProtocol,
    snap: &Task1Snapshot,
    ewc: Option<&EwcConfig>,
) -> Result<(StudentNetwork, Series)> {
    let mut student = snap.student.clone();
    let mut series = snap.series.clone();
    let state = match ewc {
        Some(cfg) => {
            let mut r = rng::stream(proto.seed, STREAM_FISHER);
            let fisher = fisher_diagonal(
                &student,
                &snap.ens,
                Task::One,
                cfg.fisher_samples,
                cfg.kind,
                cfg.scale,
                proto.activation,
                &mut r,
            )?;
            Some(EwcState::new(cfg.xi, fisher.values, student.w.clone())?)
        }
        None => None,
    };
    let mut driver = SgdDriver::new(&snap.ens, proto);
    driver.steps_done = snap.steps_done;
    let mut inputs = rng::stream(proto.seed, STREAM_TASK2);
    driver.segment(
        &mut student,
        Task::Two,
        proto.steps(proto.tau2),
        &mut inputs,
        state.as_ref(),
        &mut series,
    )?;
    Ok((student, series))
}

pub(crate) fn summarise(series: Series, seed: u64) -> Result<TwoTaskResult> {
    let end1 = series
        .at_boundary(0)
        .ok_or_else(|| invalid("tau1", "task 1 produced no record"))?;
    let last = series.last().expect("series has at least one point");
    let entropy_task1 = entropy_measures(&end1.op.q, &end1.op.h1).ok();
    let entropy_task2 = entropy_measures(&last.op.q, &last.op.h2).ok();
    Ok(TwoTaskResult {
        forgetting: forgetting(&series),
        entropy_task1,
        entropy_task2,
        node_norms_task1: end1.op.node_norms(),
        node_norms_final: last.op.node_norms(),
        eps1_task1: end1.eps1,
        eps1_final: last.eps1,
        eps2_final: last.eps2,
        seed,
        series,
    })
}

/// Train on task 1 for `tau1`, then on task 2 for `tau2` with `h⁽¹⁾` frozen.
///
/// Deterministic given `proto.seed`. Inputs for each task, the Fisher
/// estimate, the student and the teachers use separate random streams.
pub fn run_two_task(proto: &ContinualProtocol) -> Result<TwoTaskResult> {
    proto.validate()?;
    let series = match proto.backend {
        Backend::Sgd => {
            let snap = sgd_task1(proto)?;
            sgd_task2(proto, &snap, proto.ewc.as_ref())?.1
        }
        Backend::Ode => {
            let (ens, student) = proto.setup()?;
            let op0 = OrderParams::from_weights(&student, &ens);
            let schedule = [
                Segment {
                    task: Task::One,
                    tau: proto.tau1,
                },
                Segment {
                    task: Task::Two,
                    tau: proto.tau2,
                },
            ];
            integrate(&op0, &schedule, proto.eta, proto.dtau, proto.record_every)?
        }
    };
    summarise(series, proto.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(backend: Backend) -> ContinualProtocol {
        ContinualProtocol {
            d: 200,
            tau1: 5.0,
            tau2: 5.0,
            backend,
            init1: ReadoutInit::polar(0.5, 0.3),
            init2: ReadoutInit::polar(0.5, 0.1),
            sigma_w: 0.1,
            dtau: 0.02,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_similarity_above_one() {
        let proto = ContinualProtocol {
            gamma: 1.5,
            ..Default::default()
        };
        match run_two_task(&proto) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "gamma"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn no_second_task_no_forgetting() {
        for backend in [Backend::Sgd, Backend::Ode] {
            let proto = ContinualProtocol {
                tau2: 0.0,
                ..small(backend)
            };
            assert_eq!(run_two_task(&proto).unwrap().forgetting, 0.0);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let proto = small(Backend::Sgd);
        assert_eq!(run_two_task(&proto).unwrap(), run_two_task(&proto).unwrap());
    }

    #[test]
    fn first_readout_frozen_in_task_two() {
        let res = run_two_task(&small(Backend::Sgd)).unwrap();
        let h_end1 = &res.series.at_boundary(0).unwrap().op.h1;
        assert_eq!(h_end1, &res.series.last().unwrap().op.h1);
        let ode = run_two_task(&small(Backend::Ode)).unwrap();
        let h_end1 = &ode.series.at_boundary(0).unwrap().op.h1;
        assert_eq!(h_end1, &ode.series.last().unwrap().op.h1);
    }

    #[test]
    fn relu_records_finite_errors() {
        let proto = ContinualProtocol {
            activation: Activation::Relu,
            ..small(Backend::Sgd)
        };
        let res = run_two_task(&proto).unwrap();
        assert!(res
            .series
            .points
            .iter()
            .all(|p| p.eps1.is_finite() && p.eps2 >= 0.0));
    }

    #[test]
    fn ode_backend_rejects_relu_and_ewc() {
        let proto = ContinualProtocol {
            activation: Activation::Relu,
            ..small(Backend::Ode)
        };
        assert!(matches!(run_two_task(&proto), Err(Error::Unsupported(_))));
    }

    #[test]
    fn polar_needs_two_units() {
        let proto = ContinualProtocol {
            p: 3,
            ..Default::default()
        };
        assert!(proto.validate().is_err());
        let proto = ContinualProtocol {
            p: 3,
            init1: ReadoutInit::Gaussian { std: 0.1 },
            init2: ReadoutInit::Gaussian { std: 0.1 },
            ..Default::default()
        };
        proto.validate().unwrap();
    }

    #[test]
    fn protocol_json_round_trip() {
        let proto = small(Backend::Ode);
        let s = serde_json::to_string(&proto).unwrap();
        assert_eq!(
            serde_json::from_str::<ContinualProtocol>(&s).unwrap(),
            proto
        );
    }
}
