//! Exact learning dynamics of a single two-layer linear pathway.
//!
//! A pathway is one hidden neuron with input weights `w` and output weight
//! `h` trained by gradient flow on a rank-1 regression task with
//! input-output singular value `s` and input variance `d`. After silent
//! alignment the network map reduces to the scalar effective singular value
//! `ω = h·(w·v)`, and the imbalance `λ = h² − |w|²` is conserved. Writing
//! `ω = (λ/2)·sinh θ`, the angle `θ` obeys a separable equation whose
//! solution gives `ω(t)` in closed form.
//!
//! Time is measured in epochs, with `τ = 1/η` so that one full-batch
//! gradient step advances time by one epoch.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Singular-value summary of the linear task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataStatistics {
    /// Input-output singular value.
    pub s: f64,
    /// Input variance along the task direction.
    pub d: f64,
}

impl DataStatistics {
    pub fn new(s: f64, d: f64) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(invalid("s", format!("must be finite and >= 0, got {s}")));
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(invalid("d", format!("must be finite and > 0, got {d}")));
        }
        Ok(Self { s, d })
    }

    /// Whitened inputs (`d = 1`).
    pub fn whitened(s: f64) -> Result<Self> {
        Self::new(s, 1.0)
    }

    pub fn is_whitened(&self) -> bool {
        self.d == 1.0
    }

    /// Converged effective singular value `s/d`.
    pub fn fixed_point(&self) -> f64 {
        self.s / self.d
    }
}

/// Initial state of a pathway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathwayConfig {
    /// Initial first-layer weight magnitude.
    pub a0: f64,
    /// Imbalance `h² − |w|²`.
    pub lambda: f64,
    /// Initial hyperbolic angle; `+∞` when `lambda == 0`.
    pub theta0: f64,
    /// Time constant `1/η`.
    pub tau: f64,
}

impl PathwayConfig {
    /// Build from the first-layer scale, the imbalance and the learning rate.
    ///
    /// The output weight starts at `b0 = sqrt(λ + a0²)` and
    /// `sinh θ₀ = 2·a0·b0/λ`.
    pub fn new(a0: f64, lambda: f64, eta: f64) -> Result<Self> {
        if !(a0 > 0.0 && a0.is_finite()) {
            return Err(invalid("a0", format!("must be finite and > 0, got {a0}")));
        }
        if !lambda.is_finite() || lambda + a0 * a0 <= 0.0 {
            return Err(invalid(
                "lambda",
                format!("need lambda + a0^2 > 0, got lambda = {lambda}"),
            ));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("eta", format!("must be finite and > 0, got {eta}")));
        }
        let b0 = (lambda + a0 * a0).sqrt();
        let theta0 = if lambda == 0.0 {
            f64::INFINITY
        } else {
            (2.0 * a0 * b0 / lambda).asinh()
        };
        Ok(Self {
            a0,
            lambda,
            theta0,
            tau: 1.0 / eta,
        })
    }

    /// Initial output weight `b0 = sqrt(λ + a0²)`.
    pub fn b0(&self) -> f64 {
        (self.lambda + self.a0 * self.a0).sqrt()
    }

    /// Initial effective singular value `a0·b0`.
    pub fn omega0(&self) -> f64 {
        self.a0 * self.b0()
    }
}

/// Constants of the closed-form solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// `sqrt(4s² + λ²d²)`.
    pub k: f64,
    /// Initial-condition constant.
    pub c: f64,
}

/// Escaping and hitting thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// `ω` must exceed this for learning to have started.
    pub upsilon_escape: f64,
    /// `ω` must be within this of `s/d` for learning to have finished.
    pub upsilon_hit: f64,
}

impl Thresholds {
    pub fn new(upsilon_escape: f64, upsilon_hit: f64, stats: &DataStatistics) -> Result<Self> {
        let t = Self {
            upsilon_escape,
            upsilon_hit,
        };
        t.validate(stats)?;
        Ok(t)
    }

    /// Default thresholds proportional to the fixed point: 5% and 1% of `s/d`.
    pub fn proportional(stats: &DataStatistics) -> Self {
        let f = stats.fixed_point();
        Self {
            upsilon_escape: 0.05 * f,
            upsilon_hit: 0.01 * f,
        }
    }

    pub fn validate(&self, stats: &DataStatistics) -> Result<()> {
        let f = stats.fixed_point();
        for (field, v) in [
            ("upsilon_escape", self.upsilon_escape),
            ("upsilon_hit", self.upsilon_hit),
        ] {
            if !(v > 0.0 && v < f) {
                return Err(invalid(
                    field,
                    format!("must lie in (0, s/d = {f}), got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// A sampled `ω(t)` curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub omega: Vec<f64>,
    pub loss: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,omega,loss`; the loss column is empty when absent.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,omega,loss")?;
        for (i, (t, w)) in self.times.iter().zip(&self.omega).enumerate() {
            match &self.loss {
                Some(l) => writeln!(out, "{t},{w},{}", l[i])?,
                None => writeln!(out, "{t},{w},")?,
            }
        }
        Ok(())
    }
}

/// JSON view of the constants of one pathway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub theta0: f64,
    pub lambda: f64,
    pub s: f64,
    pub d: f64,
    pub tau: f64,
}

impl ConstantsReport {
    pub fn new(stats: &DataStatistics, cfg: &PathwayConfig, consts: &DerivedConstants) -> Self {
        Self {
            k: consts.k,
            c: consts.c,
            theta0: cfg.theta0,
            lambda: cfg.lambda,
            s: stats.s,
            d: stats.d,
            tau: cfg.tau,
        }
    }
}

fn k_of(s: f64, d: f64, lambda: f64) -> f64 {
    (4.0 * s * s + lambda * lambda * d * d).sqrt()
}

/// `2s + λd − K`, free of cancellation for small `λ`.
fn two_s_plus_ld_minus_k(s: f64, d: f64, lambda: f64, k: f64) -> f64 {
    let ld = lambda * d;
    ld - ld * ld / (2.0 * s + k)
}

/// `1 − tanh(u)` and `1 + tanh(u)` without cancellation.
fn one_minus_plus_tanh(u: f64) -> (f64, f64) {
    if u >= 0.0 {
        let m = 2.0 / (1.0 + (2.0 * u).exp());
        (m, 2.0 - m)
    } else {
        let p = 2.0 / (1.0 + (-2.0 * u).exp());
        (2.0 - p, p)
    }
}

/// Constants for a pathway currently at angle `theta`.
///
/// Used by the race analysis, where the slow pathway's constants are
/// recomputed from its instantaneous state and effective task strength.
pub fn constants_at(s: f64, d: f64, lambda: f64, theta: f64) -> Result<DerivedConstants> {
    if lambda.abs() < 1e-12 {
        return Err(Error::ZeroLambda);
    }
    if !theta.is_finite() {
        return Err(Error::Domain {
            what: "initial angle",
            value: theta,
        });
    }
    let k = k_of(s, d, lambda);
    let (one_minus_t, _) = one_minus_plus_tanh(theta / 2.0);
    let t = (theta / 2.0).tanh();
    let num = 2.0 * s * t + k + lambda * d;
    let den = two_s_plus_ld_minus_k(s, d, lambda, k) - 2.0 * s * one_minus_t;
    if den.abs() < 1e-12 {
        return Err(Error::DegenerateDenominator { value: den });
    }
    Ok(DerivedConstants {
        k,
        c: num.abs() / den.abs(),
    })
}

/// `K` and `C` for a pathway.
pub fn derive_constants(stats: &DataStatistics, cfg: &PathwayConfig) -> Result<DerivedConstants> {
    constants_at(stats.s, stats.d, cfg.lambda, cfg.theta0)
}

/// `tanh(θ/2)` at time `t`, i.e. the argument of `atanh` in the solution.
///
/// With `E = C·exp(sgn(λ)·K·t/τ)`, `(E − 1)/(E + 1) = tanh(u)` where
/// `u = ½·(ln C + sgn(λ)·K·t/τ)`; the `tanh` form never overflows.
fn half_angle_tanh(lambda: f64, tau: f64, consts: &DerivedConstants, t: f64) -> (f64, f64, f64) {
    let u = 0.5 * (consts.c.ln() + lambda.signum() * consts.k * t / tau);
    let (oma, opa) = one_minus_plus_tanh(u);
    (u.tanh(), oma, opa)
}

/// Closed-form effective singular value at time `t` (epochs).
pub fn omega_of_t(
    stats: &DataStatistics,
    cfg: &PathwayConfig,
    consts: &DerivedConstants,
    t: f64,
) -> Result<f64> {
    omega_closed_form(stats, cfg.lambda, cfg.tau, consts, t)
}

pub(crate) fn omega_closed_form(
    stats: &DataStatistics,
    lambda: f64,
    tau: f64,
    consts: &DerivedConstants,
    t: f64,
) -> Result<f64> {
    let (s, d, k) = (stats.s, stats.d, consts.k);
    if lambda.signum() * k * t / tau > 700.0 {
        return Ok(stats.fixed_point());
    }
    let (a, oma, opa) = half_angle_tanh(lambda, tau, consts, t);
    let x = (k * a - lambda * d) / (2.0 * s);
    if !(x.abs() < 1.0) {
        return Err(Error::Domain {
            what: "atanh argument of the closed-form solution",
            value: x,
        });
    }
    // 2s(1 − x) and 2s(1 + x) assembled from cancellation-free pieces.
    let den_minus = two_s_plus_ld_minus_k(s, d, lambda, k) + k * oma;
    let den_plus = two_s_plus_ld_minus_k(s, d, -lambda, k) + k * opa;
    Ok(lambda * (k * a - lambda * d) * 2.0 * s / (den_minus * den_plus))
}

/// Closed-form hyperbolic angle `θ(t)` with `ω = (λ/2)·sinh θ`.
pub fn theta_of_t(
    stats: &DataStatistics,
    cfg: &PathwayConfig,
    consts: &DerivedConstants,
    t: f64,
) -> Result<f64> {
    let (a, _, _) = half_angle_tanh(cfg.lambda, cfg.tau, consts, t);
    let x = (consts.k * a - cfg.lambda * stats.d) / (2.0 * stats.s);
    if !(x.abs() < 1.0) {
        return Err(Error::Domain {
            what: "atanh argument of the closed-form solution",
            value: x,
        });
    }
    Ok(2.0 * x.atanh())
}

/// Time at which `tanh(θ/2)` reaches `target`.
pub(crate) fn time_to_half_angle(
    stats: &DataStatistics,
    lambda: f64,
    tau: f64,
    consts: &DerivedConstants,
    target: f64,
) -> Result<f64> {
    let (s, d, k, c) = (stats.s, stats.d, consts.k, consts.c);
    // K − 2sT − λd = (2s − 2sT) − (2s + λd − K)
    let num = k + 2.0 * s * target + lambda * d;
    let den = c * (2.0 * s * (1.0 - target) - two_s_plus_ld_minus_k(s, d, lambda, k));
    let arg = num / den;
    if !(arg > 0.0 && arg.is_finite()) {
        return Err(Error::NegativeLogArgument { value: arg });
    }
    Ok(tau / (lambda.signum() * k) * arg.ln())
}

/// Time at which `ω` first exceeds the escaping threshold.
///
/// Returns a non-positive value when `ω(0)` is already at or past it.
pub fn escaping_time(
    stats: &DataStatistics,
    cfg: &PathwayConfig,
    consts: &DerivedConstants,
    thresholds: &Thresholds,
) -> Result<f64> {
    if cfg.lambda.abs() < 1e-12 {
        return Err(Error::ZeroLambda);
    }
    let target = (0.5 * (2.0 * thresholds.upsilon_escape / cfg.lambda).asinh()).tanh();
    time_to_half_angle(stats, cfg.lambda, cfg.tau, consts, target)
}

/// Time at which `ω` comes within the hitting threshold of `s/d`.
pub fn hitting_time(
    stats: &DataStatistics,
    cfg: &PathwayConfig,
    consts: &DerivedConstants,
    thresholds: &Thresholds,
) -> Result<f64> {
    if cfg.lambda.abs() < 1e-12 {
        return Err(Error::ZeroLambda);
    }
    let (s, d) = (stats.s, stats.d);
    let arg = (2.0 * s - 2.0 * d * thresholds.upsilon_hit) / (cfg.lambda * d);
    let target = (0.5 * arg.asinh()).tanh();
    time_to_half_angle(stats, cfg.lambda, cfg.tau, consts, target)
}

/// `dθ/dt · τ = sgn(λ)·(2s − λd·sinh θ)`.
pub fn theta_rate(stats: &DataStatistics, lambda: f64, theta: f64) -> f64 {
    lambda.signum() * (2.0 * stats.s - lambda * stats.d * theta.sinh())
}

/// Hyperbolic weight-space coordinates `(w̄, h̄)` for `λ > 0`.
pub fn weight_space_point(lambda: f64, theta: f64) -> Result<(f64, f64)> {
    if !(lambda > 0.0) {
        return Err(Error::NegativeLambda { lambda });
    }
    let r = lambda.sqrt();
    Ok((r * (theta / 2.0).sinh(), r * (theta / 2.0).cosh()))
}

/// Balanced (`λ = 0`) solution: logistic growth `τ dω/dt = 2ω(s − dω)`.
pub fn balanced_omega_of_t(stats: &DataStatistics, omega0: f64, tau: f64, t: f64) -> f64 {
    let (s, d) = (stats.s, stats.d);
    let f = s / d;
    f / (1.0 + (f / omega0 - 1.0) * (-2.0 * s * t / tau).exp())
}

/// Time for the balanced solution to reach `target`.
pub fn balanced_time_to(stats: &DataStatistics, omega0: f64, tau: f64, target: f64) -> Result<f64> {
    let f = stats.fixed_point();
    let arg = (f / omega0 - 1.0) / (f / target - 1.0);
    if !(arg > 0.0 && arg.is_finite()) {
        return Err(Error::NegativeLogArgument { value: arg });
    }
    Ok(tau / (2.0 * stats.s) * arg.ln())
}

/// Quadratic loss of the reduced task at effective singular value `ω`.
pub fn reduced_loss(stats: &DataStatistics, omega: f64) -> f64 {
    let e = stats.fixed_point() - omega;
    0.5 * stats.d * e * e
}

/// A pathway with its constants, dispatching to the balanced branch at `λ = 0`.
#[derive(Debug, Clone, Copy)]
pub struct Pathway {
    pub stats: DataStatistics,
    pub cfg: PathwayConfig,
    consts: Option<DerivedConstants>,
}

impl Pathway {
    pub fn new(stats: DataStatistics, cfg: PathwayConfig) -> Result<Self> {
        let consts = if cfg.lambda == 0.0 {
            None
        } else {
            Some(derive_constants(&stats, &cfg)?)
        };
        Ok(Self { stats, cfg, consts })
    }

    pub fn constants(&self) -> Option<&DerivedConstants> {
        self.consts.as_ref()
    }

    pub fn omega(&self, t: f64) -> Result<f64> {
        match &self.consts {
            Some(c) => omega_of_t(&self.stats, &self.cfg, c, t),
            None => Ok(balanced_omega_of_t(
                &self.stats,
                self.cfg.omega0(),
                self.cfg.tau,
                t,
            )),
        }
    }

    pub fn escaping_time(&self, thresholds: &Thresholds) -> Result<f64> {
        match &self.consts {
            Some(c) => escaping_time(&self.stats, &self.cfg, c, thresholds),
            None => balanced_time_to(
                &self.stats,
                self.cfg.omega0(),
                self.cfg.tau,
                thresholds.upsilon_escape,
            ),
        }
    }

    pub fn hitting_time(&self, thresholds: &Thresholds) -> Result<f64> {
        match &self.consts {
            Some(c) => hitting_time(&self.stats, &self.cfg, c, thresholds),
            None => balanced_time_to(
                &self.stats,
                self.cfg.omega0(),
                self.cfg.tau,
                self.stats.fixed_point() - thresholds.upsilon_hit,
            ),
        }
    }

    /// Sample `ω` and the loss on a uniform grid `0, dt, 2dt, … ≤ t_max`.
    pub fn trajectory(&self, t_max: f64, dt: f64) -> Result<Trajectory> {
        if !(dt > 0.0) {
            return Err(invalid("dt", format!("must be > 0, got {dt}")));
        }
        let n = (t_max / dt).floor() as usize;
        let mut times = Vec::with_capacity(n + 1);
        let mut omega = Vec::with_capacity(n + 1);
        let mut loss = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let t = i as f64 * dt;
            let w = self.omega(t)?;
            times.push(t);
            omega.push(w);
            loss.push(reduced_loss(&self.stats, w));
        }
        Ok(Trajectory {
            times,
            omega,
            loss: Some(loss),
        })
    }
}

/// Full-batch gradient descent on a one-hidden-neuron linear network.
///
/// The task direction is the first input coordinate; `w` may have any
/// length and need not be aligned with it.
#[derive(Debug, Clone)]
pub struct PathwayGd {
    pub stats: DataStatistics,
    pub w: Vec<f64>,
    pub h: f64,
    pub eta: f64,
}

impl PathwayGd {
    pub fn new(stats: DataStatistics, w: Vec<f64>, h: f64, eta: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        Ok(Self { stats, w, h, eta })
    }

    pub fn omega(&self) -> f64 {
        self.h * self.w[0]
    }

    pub fn imbalance(&self) -> f64 {
        self.h * self.h - self.w.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn loss(&self) -> f64 {
        let (s, d) = (self.stats.s, self.stats.d);
        let ww: f64 = self.w.iter().map(|x| x * x).sum();
        0.5 * (d * self.h * self.h * ww - 2.0 * s * self.h * self.w[0]) + 0.5 * s * s / d
    }

    /// One step: `w += η·h·(s·v − h·d·w)`, `h += η·(s·v − h·d·w)·w`.
    pub fn step(&mut self) {
        let (s, d, eta, h) = (self.stats.s, self.stats.d, self.eta, self.h);
        let mut dh = 0.0;
        for (i, wi) in self.w.iter_mut().enumerate() {
            let target = if i == 0 { s } else { 0.0 };
            let r = target - h * d * *wi;
            dh += r * *wi;
            *wi += eta * h * r;
        }
        self.h += eta * dh;
    }
}

/// Simulate `steps` gradient-descent epochs and record every step.
pub fn simulate_pathway_gd(
    stats: &DataStatistics,
    w0: &[f64],
    h0: f64,
    eta: f64,
    steps: usize,
) -> Result<Trajectory> {
    simulate_pathway_gd_every(stats, w0, h0, eta, steps, 1)
}

/// As [`simulate_pathway_gd`], recording every `every` steps and the last.
pub fn simulate_pathway_gd_every(
    stats: &DataStatistics,
    w0: &[f64],
    h0: f64,
    eta: f64,
    steps: usize,
    every: usize,
) -> Result<Trajectory> {
    let every = every.max(1);
    let mut gd = PathwayGd::new(*stats, w0.to_vec(), h0, eta)?;
    let limit = 1e3 * stats.fixed_point().max(f64::MIN_POSITIVE);
    let mut times = Vec::with_capacity(steps / every + 2);
    let mut omega = Vec::with_capacity(steps / every + 2);
    let mut loss = Vec::with_capacity(steps / every + 2);
    for n in 0..=steps {
        let w = gd.omega();
        if !(w.abs() <= limit) {
            return Err(Error::Divergence { step: n, value: w });
        }
        if n % every == 0 || n == steps {
            times.push(n as f64);
            omega.push(w);
            loss.push(gd.loss());
        }
        if n < steps {
            gd.step();
        }
    }
    Ok(Trajectory {
        times,
        omega,
        loss: Some(loss),
    })
}
