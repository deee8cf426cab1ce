//! Two-dimensional parameter sweeps over the two-task protocol.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::entropy::EntropyReport;
use super::ewc::EwcConfig;
use super::protocol::{run_two_task, ContinualProtocol, PolarReadoutInit, ReadoutInit};
use crate::error::{invalid, Error, Result};
use crate::rng;

/// Protocol field swept along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Gamma,
    SigmaW,
    Log10SigmaW,
    R1,
    Theta1,
    R2,
    Theta2,
    Xi,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::SigmaW => "sigma_w",
            SweepParam::Log10SigmaW => "log10_sigma_w",
            SweepParam::R1 => "r1",
            SweepParam::Theta1 => "theta1",
            SweepParam::R2 => "r2",
            SweepParam::Theta2 => "theta2",
            SweepParam::Xi => "xi",
        }
    }

    /// Set this parameter to `v` in `proto`.
    pub fn apply(self, proto: &mut ContinualProtocol, v: f64) -> Result<()> {
        fn polar(init: &mut ReadoutInit, what: SweepParam) -> Result<&mut PolarReadoutInit> {
            match init {
                ReadoutInit::Polar(p) => Ok(p),
                ReadoutInit::Gaussian { .. } => Err(Error::Unsupported(format!(
                    "sweeping {} needs a polar readout",
                    what.name()
                ))),
            }
        }
        match self {
            SweepParam::Gamma => proto.gamma = v,
            SweepParam::SigmaW => proto.sigma_w = v,
            SweepParam::Log10SigmaW => proto.sigma_w = 10f64.powf(v),
            SweepParam::R1 => polar(&mut proto.init1, self)?.r = v,
            SweepParam::Theta1 => polar(&mut proto.init1, self)?.theta = v,
            SweepParam::R2 => polar(&mut proto.init2, self)?.r = v,
            SweepParam::Theta2 => polar(&mut proto.init2, self)?.theta = v,
            SweepParam::Xi => proto.ewc.get_or_insert_with(EwcConfig::default).xi = v,
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| invalid("axis", format!("unknown sweep parameter {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl AxisSpec {
    pub fn new(param: SweepParam, values: Vec<f64>) -> Self {
        Self { param, values }
    }

    pub fn linspace(param: SweepParam, lo: f64, hi: f64, n: usize) -> Self {
        Self::new(param, crate::race_phase::linspace(lo, hi, n))
    }
}

/// Where entropies and node norms are read off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyPoint {
    /// `(Q, h⁽¹⁾)` at the end of task 1.
    #[default]
    AfterTask1,
    /// `(Q, h⁽²⁾)` at the end of task 2.
    Final,
}

/// How cells obtain their seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Seed derived from the template seed and the cell indices.
    #[default]
    PerCell,
    /// Every cell uses the template seed, so teachers and inputs are shared.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SweepOptions {
    pub entropy_at: EntropyPoint,
    pub seeds: SeedPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub i: usize,
    pub j: usize,
    pub axis1: f64,
    pub axis2: f64,
    pub entropy: Option<EntropyReport>,
    pub forgetting: f64,
    pub eps1_final: f64,
    pub eps2_final: f64,
    pub node_norms: Vec<f64>,
    pub seed: u64,
    pub error: Option<String>,
}

/// Cells in row-major order over `(axis1, axis2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultGrid {
    pub axis1: AxisSpec,
    pub axis2: AxisSpec,
    pub cells: Vec<CellResult>,
}

impl ResultGrid {
    pub fn get(&self, i: usize, j: usize) -> &CellResult {
        &self.cells[i * self.axis2.values.len() + j]
    }

    /// CSV with one row per cell; failed cells leave result columns empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "axis1,axis2,H_h,H_Q,H_m,forgetting,eps1_final,eps2_final,node_norm_0,node_norm_1,seed"
        )?;
        for c in &self.cells {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            let ok = c.error.is_none();
            let e = c.entropy;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.axis1,
                c.axis2,
                opt(e.map(|e| e.h_h)),
                opt(e.map(|e| e.h_q)),
                opt(e.map(|e| e.h_m)),
                opt(ok.then_some(c.forgetting)),
                opt(ok.then_some(c.eps1_final)),
                opt(ok.then_some(c.eps2_final)),
                opt(c.node_norms.first().copied()),
                opt(c.node_norms.get(1).copied()),
                c.seed
            )?;
        }
        Ok(())
    }
}

/// Run the protocol at every grid point. Cells run in parallel; the output
/// does not depend on the thread count.
pub fn sweep(
    template: &ContinualProtocol,
    axis1: &AxisSpec,
    axis2: &AxisSpec,
    opts: &SweepOptions,
) -> Result<ResultGrid> {
    if axis1.values.is_empty() || axis2.values.is_empty() {
        return Err(invalid("axis", "sweep axes must be non-empty"));
    }
    let n2 = axis2.values.len();
    let cells = (0..axis1.values.len() * n2)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n2, k % n2);
            let (v1, v2) = (axis1.values[i], axis2.values[j]);
            let seed = match opts.seeds {
                SeedPolicy::PerCell => rng::derive_seed(template.seed, &[i as u64, j as u64]),
                SeedPolicy::Shared => template.seed,
            };
            let mut cell = CellResult {
                i,
                j,
                axis1: v1,
                axis2: v2,
                entropy: None,
                forgetting: f64::NAN,
                eps1_final: f64::NAN,
                eps2_final: f64::NAN,
                node_norms: Vec::new(),
                seed,
                error: None,
            };
            let mut proto = template.clone();
            proto.seed = seed;
            let run = axis1
                .param
                .apply(&mut proto, v1)
                .and_then(|_| axis2.param.apply(&mut proto, v2))
                .and_then(|_| run_two_task(&proto));
            match run {
                Ok(res) => {
                    let (entropy, norms) = match opts.entropy_at {
                        EntropyPoint::AfterTask1 => (res.entropy_task1, res.node_norms_task1),
                        EntropyPoint::Final => (res.entropy_task2, res.node_norms_final),
                    };
                    cell.entropy = entropy;
                    cell.node_norms = norms;
                    cell.forgetting = res.forgetting;
                    cell.eps1_final = res.eps1_final;
                    cell.eps2_final = res.eps2_final;
                }
                Err(e) => cell.error = Some(e.to_string()),
            }
            cell
        })
        .collect();
    Ok(ResultGrid {
        axis1: axis1.clone(),
        axis2: axis2.clone(),
        cells,
    })
}
