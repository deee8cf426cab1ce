//! The neural race between two linear pathways sharing one task.
//!
//! The fast pathway (larger imbalance `λ₁`) is followed in closed form. The
//! slow pathway sees the residual task strength `s − ω₁(t)` and is
//! integrated numerically in its angle variable; at every epoch its escaping
//! time is re-evaluated from its current state. The smallest such escaping
//! time over the fast pathway's learning window is the escape gap: if it
//! stays above one epoch, the slow pathway never starts learning and the
//! network specialises.
//!
//! All inputs are whitened (`d = 1`).

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linear_dynamics::{
    balanced_time_to, constants_at, time_to_half_angle, DataStatistics, Pathway, PathwayConfig,
    Thresholds, Trajectory,
};

/// Settings for a phase diagram over `(λ₁, λ₂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceConfig {
    pub s: f64,
    pub a0: f64,
    pub eta: f64,
    pub thresholds: Thresholds,
    /// Fast-pathway imbalances, ascending.
    pub lambda1_grid: Vec<f64>,
    /// Slow-pathway imbalances, ascending.
    pub lambda2_grid: Vec<f64>,
    /// Euler sub-steps per epoch for the slow pathway.
    pub substeps: usize,
}

impl RaceConfig {
    /// Hyperparameters of the reference phase diagram on an `n×n` grid.
    pub fn reference(n: usize) -> Self {
        Self {
            s: 105.0,
            a0: 0.01,
            eta: 1e-5,
            thresholds: Thresholds {
                upsilon_escape: 5.0,
                upsilon_hit: 1.0,
            },
            lambda1_grid: linspace(0.0, 100.0, n),
            lambda2_grid: linspace(0.0, 20.0, n),
            substeps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a0 > 0.0) {
            return Err(invalid("a0", format!("must be > 0, got {}", self.a0)));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(invalid("s", format!("must be > 0, got {}", self.s)));
        }
        if !(self.eta > 0.0) {
            return Err(invalid("eta", format!("must be > 0, got {}", self.eta)));
        }
        if self.substeps == 0 {
            return Err(invalid("substeps", "must be >= 1"));
        }
        let stats = DataStatistics::whitened(self.s)?;
        self.thresholds.validate(&stats)?;
        for (field, g) in [
            ("lambda1_grid", &self.lambda1_grid),
            ("lambda2_grid", &self.lambda2_grid),
        ] {
            if g.is_empty() {
                return Err(invalid(field, "must be non-empty"));
            }
            if g.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(invalid(field, "must be strictly ascending"));
            }
            if g.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
                return Err(invalid(field, "entries must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// `n` evenly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Slow-pathway state: the angle for `λ ≠ 0`, `ω` itself for `λ = 0`.
#[derive(Debug, Clone, Copy)]
enum SlowState {
    Angle(f64),
    Balanced(f64),
}

impl SlowState {
    fn omega(&self, lambda: f64) -> f64 {
        match *self {
            SlowState::Angle(th) => 0.5 * lambda * th.sinh(),
            SlowState::Balanced(w) => w,
        }
    }
}

/// Escaping time of the slow pathway from its current state under task strength `s_eff`.
fn slow_escape(state: SlowState, lambda: f64, s_eff: f64, tau: f64, upsilon: f64) -> Result<f64> {
    if upsilon >= s_eff {
        return Ok(f64::INFINITY);
    }
    let stats = DataStatistics { s: s_eff, d: 1.0 };
    let t = match state {
        SlowState::Balanced(w) => balanced_time_to(&stats, w, tau, upsilon),
        SlowState::Angle(theta) => {
            let consts = constants_at(s_eff, 1.0, lambda, theta)?;
            let target = (0.5 * (2.0 * upsilon / lambda).asinh()).tanh();
            time_to_half_angle(&stats, lambda, tau, &consts, target)
        }
    };
    match t {
        Ok(t) => Ok(t),
        Err(Error::NegativeLogArgument { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Minimum over the fast pathway's learning window of the slow pathway's escaping time.
pub fn coupled_min_escape(
    s: f64,
    a0: f64,
    lambda1: f64,
    lambda2: f64,
    eta: f64,
    thresholds: &Thresholds,
) -> Result<f64> {
    coupled_min_escape_with(s, a0, lambda1, lambda2, eta, thresholds, 1)
}

/// As [`coupled_min_escape`] with `substeps` Euler steps per epoch.
pub fn coupled_min_escape_with(
    s: f64,
    a0: f64,
    lambda1: f64,
    lambda2: f64,
    eta: f64,
    thresholds: &Thresholds,
    substeps: usize,
) -> Result<f64> {
    if lambda1 < lambda2 {
        return Err(invalid(
            "lambda1",
            "fast pathway must have lambda1 >= lambda2",
        ));
    }
    let stats = DataStatistics::whitened(s)?;
    let fast = Pathway::new(stats, PathwayConfig::new(a0, lambda1, eta)?)?;
    let slow_cfg = PathwayConfig::new(a0, lambda2, eta)?;
    let tau = slow_cfg.tau;
    let t_hit = fast.hitting_time(thresholds)?.max(0.0);
    let epochs = t_hit.floor() as usize;
    let mut state = if lambda2 == 0.0 {
        SlowState::Balanced(slow_cfg.omega0())
    } else {
        SlowState::Angle(slow_cfg.theta0)
    };
    let dt = 1.0 / substeps.max(1) as f64;
    let mut best = f64::INFINITY;
    for k in 0..=epochs {
        let t = k as f64;
        let s_eff = s - fast.omega(t)?;
        if state.omega(lambda2) >= thresholds.upsilon_escape {
            return Ok(0.0);
        }
        best = best.min(slow_escape(
            state,
            lambda2,
            s_eff,
            tau,
            thresholds.upsilon_escape,
        )?);
        for j in 0..substeps.max(1) {
            let s_eff = s - fast.omega(t + j as f64 * dt)?;
            state = match state {
                SlowState::Angle(th) => {
                    let rate = lambda2.signum() * (2.0 * s_eff - lambda2 * th.sinh());
                    let th = th + dt / tau * rate;
                    if !(th.abs() <= 50.0) {
                        return Err(Error::Instability {
                            what: "slow pathway angle",
                            value: th,
                            time: t,
                        });
                    }
                    SlowState::Angle(th)
                }
                SlowState::Balanced(w) => SlowState::Balanced(w + dt / tau * 2.0 * w * (s_eff - w)),
            };
        }
    }
    Ok(best.max(0.0))
}

/// An error raised at one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub row: usize,
    pub col: usize,
    pub message: String,
}

/// Escape gaps over `(λ₁, λ₂)`; rows index `λ₁`, columns `λ₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub lambda1_values: Vec<f64>,
    pub lambda2_values: Vec<f64>,
    /// Gap in epochs; NaN where masked.
    pub min_escape_gap: Vec<Vec<f64>>,
    /// `true` where the cell was evaluated.
    pub mask: Vec<Vec<bool>>,
    pub errors: Vec<CellError>,
}

impl PhaseGrid {
    /// Valid cell with a gap above one epoch.
    pub fn is_specialised(&self, row: usize, col: usize) -> bool {
        self.mask[row][col] && self.min_escape_gap[row][col] > 1.0
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "lambda1,lambda2,min_escape_gap,valid")?;
        for (i, l1) in self.lambda1_values.iter().enumerate() {
            for (j, l2) in self.lambda2_values.iter().enumerate() {
                let valid = self.mask[i][j];
                let gap = self.min_escape_gap[i][j];
                if valid {
                    writeln!(out, "{l1},{l2},{gap},1")?;
                } else {
                    writeln!(out, "{l1},{l2},,0")?;
                }
            }
        }
        Ok(())
    }

    /// Axes plus row-major matrices; masked or infinite gaps become `null`.
    pub fn to_json(&self) -> serde_json::Value {
        let gaps: Vec<Vec<Option<f64>>> = self
            .min_escape_gap
            .iter()
            .zip(&self.mask)
            .map(|(row, m)| {
                row.iter()
                    .zip(m)
                    .map(|(&g, &v)| (v && g.is_finite()).then_some(g))
                    .collect()
            })
            .collect();
        serde_json::json!({
            "lambda1_values": self.lambda1_values,
            "lambda2_values": self.lambda2_values,
            "min_escape_gap": gaps,
            "valid": self.mask,
            "errors": self.errors,
        })
    }
}

/// Evaluate every cell with `λ₁ ≥ λ₂`; others are masked.
pub fn build_phase_grid(cfg: &RaceConfig) -> Result<PhaseGrid> {
    cfg.validate()?;
    let n1 = cfg.lambda1_grid.len();
    let n2 = cfg.lambda2_grid.len();
    let cells: Vec<(usize, usize, Option<Result<f64>>)> = (0..n1 * n2)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n2, idx % n2);
            let (l1, l2) = (cfg.lambda1_grid[i], cfg.lambda2_grid[j]);
            if l1 < l2 {
                return (i, j, None);
            }
            let r = coupled_min_escape_with(
                cfg.s,
                cfg.a0,
                l1,
                l2,
                cfg.eta,
                &cfg.thresholds,
                cfg.substeps,
            );
            (i, j, Some(r))
        })
        .collect();
    let mut gap = vec![vec![f64::NAN; n2]; n1];
    let mut mask = vec![vec![false; n2]; n1];
    let mut errors = Vec::new();
    for (i, j, r) in cells {
        match r {
            None => {}
            Some(Ok(g)) => {
                gap[i][j] = g;
                mask[i][j] = true;
            }
            Some(Err(e)) => errors.push(CellError {
                row: i,
                col: j,
                message: e.to_string(),
            }),
        }
    }
    Ok(PhaseGrid {
        lambda1_values: cfg.lambda1_grid.clone(),
        lambda2_values: cfg.lambda2_grid.clone(),
        min_escape_gap: gap,
        mask,
        errors,
    })
}

/// Two scalar pathways trained jointly by full-batch gradient descent.
#[derive(Debug, Clone, Copy)]
pub struct TwoPathwayGd {
    pub s: f64,
    pub eta: f64,
    pub w: [f64; 2],
    pub h: [f64; 2],
}

impl TwoPathwayGd {
    /// Both pathways start at `w = a0`, `h = sqrt(λ + a0²)`.
    pub fn new(s: f64, a0: f64, lambda1: f64, lambda2: f64, eta: f64) -> Result<Self> {
        let h1 = PathwayConfig::new(a0, lambda1, eta)?.b0();
        let h2 = PathwayConfig::new(a0, lambda2, eta)?.b0();
        Ok(Self {
            s,
            eta,
            w: [a0, a0],
            h: [h1, h2],
        })
    }

    pub fn omega(&self) -> [f64; 2] {
        [self.h[0] * self.w[0], self.h[1] * self.w[1]]
    }

    /// Shared residual `s − ω₁ − ω₂` drives both pathways.
    pub fn step(&mut self) {
        let [o1, o2] = self.omega();
        let r = self.s - o1 - o2;
        for k in 0..2 {
            let (w, h) = (self.w[k], self.h[k]);
            self.w[k] = w + self.eta * h * r;
            self.h[k] = h + self.eta * w * r;
        }
    }
}

/// Per-pathway trajectories of full-batch gradient descent, every step recorded.
pub fn simulate_two_pathway_gd(
    s: f64,
    a0: f64,
    lambda1: f64,
    lambda2: f64,
    eta: f64,
    steps: usize,
) -> Result<(Trajectory, Trajectory)> {
    let mut gd = TwoPathwayGd::new(s, a0, lambda1, lambda2, eta)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut om = [Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1)];
    for n in 0..=steps {
        let o = gd.omega();
        if !(o[0].abs() <= 1e3 * s && o[1].abs() <= 1e3 * s) {
            return Err(Error::Divergence {
                step: n,
                value: o[0].abs().max(o[1].abs()),
            });
        }
        times.push(n as f64);
        om[0].push(o[0]);
        om[1].push(o[1]);
        if n < steps {
            gd.step();
        }
    }
    let [o1, o2] = om;
    Ok((
        Trajectory {
            times: times.clone(),
            omega: o1,
            loss: None,
        },
        Trajectory {
            times,
            omega: o2,
            loss: None,
        },
    ))
}

/// Outcome of racing two pathways by gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaceOutcome {
    /// `ω₂` stayed below the escaping threshold until the fast pathway finished.
    pub specialised: bool,
    pub steps: usize,
    pub omega1: f64,
    pub omega2: f64,
}

/// Run the two-pathway descent until `ω₂` escapes or `ω₁` hits `s − υ*`.
///
/// If neither happens within `max_steps`, the final `ω₂` decides.
pub fn race_by_gd(
    s: f64,
    a0: f64,
    lambda1: f64,
    lambda2: f64,
    eta: f64,
    thresholds: &Thresholds,
    max_steps: usize,
) -> Result<RaceOutcome> {
    let mut gd = TwoPathwayGd::new(s, a0, lambda1, lambda2, eta)?;
    for n in 0..max_steps {
        let [o1, o2] = gd.omega();
        if o2 >= thresholds.upsilon_escape {
            return Ok(RaceOutcome {
                specialised: false,
                steps: n,
                omega1: o1,
                omega2: o2,
            });
        }
        if o1 >= s - thresholds.upsilon_hit {
            return Ok(RaceOutcome {
                specialised: true,
                steps: n,
                omega1: o1,
                omega2: o2,
            });
        }
        gd.step();
    }
    let [o1, o2] = gd.omega();
    Ok(RaceOutcome {
        specialised: o2 < thresholds.upsilon_escape,
        steps: max_steps,
        omega1: o1,
        omega2: o2,
    })
}
