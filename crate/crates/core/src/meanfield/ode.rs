//! Order-parameter ODEs and their explicit Euler integration.
//!
//! With residual `Δ = Σ_u c_u·φ(z_u)` (students `c = hᵢ`, active teachers
//! `c = −h_{T,n}`), the rates per unit `τ` are
//!
//! ```text
//! dQᵢₖ = −η·hᵢ·Σ_u c_u·I3(i,k,u) − η·hₖ·Σ_u c_u·I3(k,i,u) + η²·hᵢ·hₖ·Σ_{u,v} c_u·c_v·I4(i,k,u,v)
//! dRᵢₙ = −η·hᵢ·Σ_u c_u·I3(i,n,u)          for teacher units n of both tasks
//! dhᵢ  = −η·Σ_u c_u·I2(u,i)               active readout only
//! ```
//!
//! Teacher overlaps and readouts are constant.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use super::averages::{i2, i3, i4};
use super::network::Task;
use super::order_params::{eps_from_cov, residual_terms, OrderParams};
use crate::error::{invalid, Error, Result};

/// Train on `task` for a span of `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub task: Task,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub tau: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub op: OrderParams,
}

/// Recorded trajectory; `boundaries[k]` indexes the point at the end of segment `k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    pub points: Vec<SeriesPoint>,
    pub boundaries: Vec<usize>,
}

impl Series {
    pub fn last(&self) -> Option<&SeriesPoint> {
        self.points.last()
    }

    /// Point at the end of segment `k`.
    pub fn at_boundary(&self, k: usize) -> Option<&SeriesPoint> {
        self.boundaries.get(k).map(|&i| &self.points[i])
    }

    /// CSV `tau,eps1,eps2,Q00,Q01,…,R1_00,…,R2_00,…,h1_0,…,h2_0,…`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let Some(first) = self.points.first() else {
            return writeln!(out, "tau,eps1,eps2");
        };
        let (p, ps) = (first.op.p(), first.op.p_star());
        let mut header = vec!["tau".to_string(), "eps1".into(), "eps2".into()];
        for i in 0..p {
            for k in 0..p {
                header.push(format!("Q{i}{k}"));
            }
        }
        for t in 1..=2 {
            for i in 0..p {
                for n in 0..ps {
                    header.push(format!("R{t}_{i}{n}"));
                }
            }
        }
        for t in 1..=2 {
            for i in 0..p {
                header.push(format!("h{t}_{i}"));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for pt in &self.points {
            let op = &pt.op;
            let mut row = vec![pt.tau, pt.eps1, pt.eps2];
            for i in 0..p {
                for k in 0..p {
                    row.push(op.q[(i, k)]);
                }
            }
            for r in [&op.r1, &op.r2] {
                for i in 0..p {
                    for n in 0..ps {
                        row.push(r[(i, n)]);
                    }
                }
            }
            row.extend(op.h1.iter());
            row.extend(op.h2.iter());
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// State integrated by the ODE: full covariance plus both readouts.
#[derive(Debug, Clone)]
struct State {
    op: OrderParams,
    c: DMatrix<f64>,
}

impl State {
    fn new(op: &OrderParams) -> Self {
        Self {
            c: op.full_covariance(),
            op: op.clone(),
        }
    }

    fn sync(&mut self) -> &OrderParams {
        self.op.set_from_covariance(&self.c);
        &self.op
    }

    fn eps(&self, task: Task) -> Result<f64> {
        let (coef, idx) = residual_terms(&self.op, task);
        eps_from_cov(&self.c, &coef, &idx)
    }
}

/// Rates `(dC, dh)` for the active task at covariance `c`.
fn rates(
    c: &DMatrix<f64>,
    op: &OrderParams,
    task: Task,
    eta: f64,
    dc: &mut DMatrix<f64>,
    dh: &mut DVector<f64>,
) -> Result<()> {
    let p = op.p();
    let n = c.nrows();
    let (coef, idx) = residual_terms(op, task);
    let h = op.readout(task);
    dc.fill(0.0);
    for i in 0..p {
        for k in i..p {
            let mut lin = 0.0;
            for (&cu, &u) in coef.iter().zip(&idx) {
                lin += cu * (h[i] * i3(c, i, k, u)? + h[k] * i3(c, k, i, u)?);
            }
            let mut quad = 0.0;
            for (a, (&cu, &u)) in coef.iter().zip(&idx).enumerate() {
                quad += cu * cu * i4(c, i, k, u, u)?;
                for (&cv, &v) in coef.iter().zip(&idx).skip(a + 1) {
                    quad += 2.0 * cu * cv * i4(c, i, k, u, v)?;
                }
            }
            let r = -eta * lin + eta * eta * h[i] * h[k] * quad;
            dc[(i, k)] = r;
            dc[(k, i)] = r;
        }
        for t in p..n {
            let mut s = 0.0;
            for (&cu, &u) in coef.iter().zip(&idx) {
                s += cu * i3(c, i, t, u)?;
            }
            let r = -eta * h[i] * s;
            dc[(i, t)] = r;
            dc[(t, i)] = r;
        }
        let mut s = 0.0;
        for (&cu, &u) in coef.iter().zip(&idx) {
            s += cu * i2(c, u, i)?;
        }
        dh[i] = -eta * s;
    }
    Ok(())
}

/// Time derivatives of the order parameters while training on `task`.
///
/// Teacher blocks, teacher readouts and the inactive readout have zero rate.
pub fn ode_rhs(op: &OrderParams, task: Task, eta: f64) -> Result<OrderParams> {
    let c = op.full_covariance();
    let mut dc = DMatrix::zeros(c.nrows(), c.ncols());
    let mut dh = DVector::zeros(op.p());
    rates(&c, op, task, eta, &mut dc, &mut dh)?;
    let mut out = op.clone();
    out.set_from_covariance(&dc);
    out.h1.fill(0.0);
    out.h2.fill(0.0);
    out.h_t1.fill(0.0);
    out.h_t2.fill(0.0);
    match task {
        Task::One => out.h1 = dh,
        Task::Two => out.h2 = dh,
    }
    Ok(out)
}

/// Euler-integrate the ODEs through `schedule`, recording every `record_every` of `τ`.
///
/// Segment ends are always recorded.
pub fn integrate(
    op0: &OrderParams,
    schedule: &[Segment],
    eta: f64,
    dtau: f64,
    record_every: f64,
) -> Result<Series> {
    if !(dtau > 0.0 && dtau.is_finite()) {
        return Err(invalid("dtau", format!("must be > 0, got {dtau}")));
    }
    let stride = ((record_every / dtau).round() as usize).max(1);
    let mut state = State::new(op0);
    let mut series = Series::default();
    let mut tau = 0.0;
    let record = |state: &mut State, tau: f64, series: &mut Series| -> Result<()> {
        let op = state.sync().clone();
        series.points.push(SeriesPoint {
            tau,
            eps1: state.eps(Task::One)?,
            eps2: state.eps(Task::Two)?,
            op,
        });
        Ok(())
    };
    record(&mut state, tau, &mut series)?;
    let n = state.c.nrows();
    let p = op0.p();
    let mut dc = DMatrix::zeros(n, n);
    let mut dh = DVector::zeros(p);
    let mut total = 0usize;
    for seg in schedule {
        if !(seg.tau >= 0.0) {
            return Err(invalid(
                "tau",
                format!("segment length must be >= 0, got {}", seg.tau),
            ));
        }
        let steps = (seg.tau / dtau).round() as usize;
        for k in 1..=steps {
            rates(&state.c, &state.op, seg.task, eta, &mut dc, &mut dh)?;
            state.c += &dc * dtau;
            match seg.task {
                Task::One => state.op.h1.axpy(dtau, &dh, 1.0),
                Task::Two => state.op.h2.axpy(dtau, &dh, 1.0),
            }
            total += 1;
            tau = total as f64 * dtau;
            for i in 0..p {
                let q = state.c[(i, i)];
                if !(q.abs() <= 1e6) {
                    return Err(Error::Instability {
                        what: "student self-overlap",
                        value: q,
                        time: tau,
                    });
                }
            }
            if k % stride == 0 && k != steps {
                record(&mut state, tau, &mut series)?;
            }
        }
        if steps > 0 || series.points.is_empty() {
            record(&mut state, tau, &mut series)?;
        }
        series.boundaries.push(series.points.len() - 1);
    }
    Ok(series)
}
