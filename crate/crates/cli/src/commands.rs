//! Pipelines behind each subcommand.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use specdyn_core::continual::{
    run_ewc_sweep, run_two_task, sweep, AxisSpec, Backend, ContinualProtocol, EntropyPoint,
    EwcConfig, ReadoutInit, SeedPolicy, SweepOptions, SweepParam,
};
use specdyn_core::linear_dynamics::{
    omega_of_t, simulate_pathway_gd, simulate_pathway_gd_every, ConstantsReport, DataStatistics,
    Pathway, PathwayConfig, Thresholds,
};
use specdyn_core::meanfield::averages::{monte_carlo, random_covariance, AverageKind};
use specdyn_core::meanfield::{ode_rhs, Activation, OrderParams, StudentNetwork, Task};
use specdyn_core::race_phase::{build_phase_grid, linspace, race_by_gd, RaceConfig};
use specdyn_core::rng;

use crate::config::{Command, Config};

/// Extra manifest entries produced by a pipeline.
pub type Report = serde_json::Map<String, Value>;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn write_json(dir: &Path, name: &str, v: &Value) -> Result<()> {
    let mut f = create(dir, name)?;
    serde_json::to_writer_pretty(&mut f, v)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn run(cfg: &Config, out: &Path) -> Result<Report> {
    match cfg.command {
        Command::LinTraj => lin_traj(cfg, out),
        Command::RacePhase => race_phase(cfg, out),
        Command::MeanfieldRun => meanfield_run(cfg, out),
        Command::ContinualSweep | Command::EntropyPhase => continual_sweep(cfg, out),
        Command::EwcRun => ewc_run(cfg, out),
        Command::Validate => validate(cfg, out),
    }
}

fn lin_traj(cfg: &Config, out: &Path) -> Result<Report> {
    let stats = DataStatistics::new(cfg.f64("s")?, cfg.f64("d")?)?;
    let pcfg = PathwayConfig::new(cfg.f64("a0")?, cfg.f64("lambda")?, cfg.f64("eta")?)?;
    let fp = stats.fixed_point();
    let thr = Thresholds::new(
        cfg.f64("escape_fraction")? * fp,
        cfg.f64("hit_fraction")? * fp,
        &stats,
    )?;
    let pathway = Pathway::new(stats, pcfg)?;
    let (t_max, dt) = (cfg.f64("t_max")?, cfg.f64("dt")?);
    let traj = pathway.trajectory(t_max, dt)?;
    let mut f = create(out, "trajectory.csv")?;
    traj.write_csv(&mut f)?;
    f.flush()?;
    let mut constants = match pathway.constants() {
        Some(c) => serde_json::to_value(ConstantsReport::new(&stats, &pcfg, c))?,
        None => json!({"lambda": 0.0, "s": stats.s, "d": stats.d, "tau": pcfg.tau}),
    };
    let times = json!({
        "upsilon_escape": thr.upsilon_escape,
        "upsilon_hit": thr.upsilon_hit,
        "escaping_time": pathway.escaping_time(&thr)?,
        "hitting_time": pathway.hitting_time(&thr)?,
    });
    constants["times"] = times.clone();
    write_json(out, "constants.json", &constants)?;
    let mut report = Report::new();
    report.insert("times".into(), times);
    if cfg.bool("gd")? {
        let every = dt.round().max(1.0) as usize;
        let gd = simulate_pathway_gd_every(
            &stats,
            &[pcfg.a0],
            pcfg.b0(),
            cfg.f64("eta")?,
            t_max.round() as usize,
            every,
        )?;
        let mut f = create(out, "gd.csv")?;
        gd.write_csv(&mut f)?;
        f.flush()?;
    }
    Ok(report)
}

fn race_phase(cfg: &Config, out: &Path) -> Result<Report> {
    let rc = RaceConfig {
        s: cfg.f64("s")?,
        a0: cfg.f64("a0")?,
        eta: cfg.f64("eta")?,
        thresholds: Thresholds {
            upsilon_escape: cfg.f64("upsilon_escape")?,
            upsilon_hit: cfg.f64("upsilon_hit")?,
        },
        lambda1_grid: linspace(
            cfg.f64("lambda1.min")?,
            cfg.f64("lambda1.max")?,
            cfg.usize("lambda1.n")?,
        ),
        lambda2_grid: linspace(
            cfg.f64("lambda2.min")?,
            cfg.f64("lambda2.max")?,
            cfg.usize("lambda2.n")?,
        ),
        substeps: cfg.usize("substeps")?,
    };
    let grid = build_phase_grid(&rc)?;
    let mut f = create(out, "phase_grid.csv")?;
    grid.write_csv(&mut f)?;
    f.flush()?;
    write_json(out, "phase_grid.json", &grid.to_json())?;
    let mut report = Report::new();
    report.insert("cell_errors".into(), serde_json::to_value(&grid.errors)?);
    Ok(report)
}

fn protocol(cfg: &Config) -> Result<ContinualProtocol> {
    let (init1, init2) = match cfg.str("readout")? {
        "polar" => (
            ReadoutInit::polar(cfg.f64("r1")?, cfg.f64("theta1")?),
            ReadoutInit::polar(cfg.f64("r2")?, cfg.f64("theta2")?),
        ),
        "gaussian" => {
            let std = cfg.f64("readout_std")?;
            (ReadoutInit::Gaussian { std }, ReadoutInit::Gaussian { std })
        }
        other => anyhow::bail!(specdyn_core::Error::InvalidParameter {
            field: "readout",
            reason: format!("unknown value {other:?}"),
        }),
    };
    let ewc = if cfg.command == Command::EwcRun {
        Some(EwcConfig {
            xi: 0.0,
            fisher_samples: cfg.usize("ewc.fisher_samples")?,
            kind: cfg.choice("ewc.kind")?,
            scale: cfg.choice("ewc.scale")?,
        })
    } else {
        None
    };
    let proto = ContinualProtocol {
        d: cfg.usize("d")?,
        p: cfg.usize("p")?,
        p_star: cfg.usize("p_star")?,
        gamma: cfg.f64("gamma")?,
        sigma_w: cfg.f64("sigma_w")?,
        init1,
        init2,
        eta: cfg.f64("eta")?,
        tau1: cfg.f64("tau1")?,
        tau2: cfg.f64("tau2")?,
        backend: cfg.choice::<Backend>("backend")?,
        activation: cfg.choice::<Activation>("activation")?,
        ewc,
        seed: cfg.u64("seed")?,
        identical_tasks: cfg.bool("identical_tasks")?,
        dtau: cfg.f64("dtau")?,
        record_every: cfg.f64("record_every")?,
    };
    proto.validate()?;
    Ok(proto)
}

fn meanfield_run(cfg: &Config, out: &Path) -> Result<Report> {
    let proto = protocol(cfg)?;
    let res = run_two_task(&proto)?;
    let mut f = create(out, "series.csv")?;
    res.series.write_csv(&mut f)?;
    f.flush()?;
    let summary = json!({
        "forgetting": res.forgetting,
        "eps1_task1": res.eps1_task1,
        "eps1_final": res.eps1_final,
        "eps2_final": res.eps2_final,
        "entropy_task1": res.entropy_task1,
        "entropy_task2": res.entropy_task2,
        "node_norms_task1": res.node_norms_task1,
        "node_norms_final": res.node_norms_final,
    });
    write_json(out, "summary.json", &summary)?;
    let mut report = Report::new();
    report.insert("summary".into(), summary);
    Ok(report)
}

fn axis(cfg: &Config, name: &str) -> Result<AxisSpec> {
    let param: SweepParam = cfg.choice(&format!("{name}.param"))?;
    Ok(AxisSpec::linspace(
        param,
        cfg.f64(&format!("{name}.min"))?,
        cfg.f64(&format!("{name}.max"))?,
        cfg.usize(&format!("{name}.n"))?,
    ))
}

fn continual_sweep(cfg: &Config, out: &Path) -> Result<Report> {
    let proto = protocol(cfg)?;
    let (a1, a2) = (axis(cfg, "axis1")?, axis(cfg, "axis2")?);
    let opts = SweepOptions {
        entropy_at: cfg.choice::<EntropyPoint>("entropy_at")?,
        seeds: cfg.choice::<SeedPolicy>("seed_policy")?,
    };
    let grid = sweep(&proto, &a1, &a2, &opts)?;
    let mut f = create(out, "result_grid.csv")?;
    grid.write_csv(&mut f)?;
    f.flush()?;
    let mut report = Report::new();
    report.insert(
        "cells".into(),
        grid.cells
            .iter()
            .map(|c| json!({"i": c.i, "j": c.j, "seed": c.seed, "error": c.error}))
            .collect(),
    );
    Ok(report)
}

fn ewc_run(cfg: &Config, out: &Path) -> Result<Report> {
    let proto = protocol(cfg)?;
    let xis = cfg.f64_list("ewc.xi")?;
    let sweep = run_ewc_sweep(&proto, &xis)?;
    let mut f = create(out, "ewc.csv")?;
    writeln!(f, "xi,eps1_final,eps2_final,forgetting")?;
    for (k, (xi, res)) in sweep.runs.iter().enumerate() {
        writeln!(
            f,
            "{},{},{},{}",
            xi, res.eps1_final, res.eps2_final, res.forgetting
        )?;
        let mut s = create(out, &format!("series_xi{k}.csv"))?;
        res.series.write_csv(&mut s)?;
        s.flush()?;
    }
    f.flush()?;
    let summary = json!({
        "eps1_init": sweep.eps1_init,
        "eps2_init": sweep.eps2_init,
        "eps1_task1": sweep.eps1_task1,
        "eps2_task1": sweep.eps2_task1,
    });
    write_json(out, "summary.json", &summary)?;
    let mut report = Report::new();
    report.insert("summary".into(), summary);
    Ok(report)
}

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

fn validate(cfg: &Config, out: &Path) -> Result<Report> {
    let seed = cfg.u64("seed")?;
    let n_mc = cfg.usize("mc_samples")?;
    let n_cov = cfg.u64("covariances")?;
    let z_max = cfg.f64("z_max")?;
    let mut checks = Vec::new();

    for kind in [
        AverageKind::PhiPhi,
        AverageKind::PhiPrimeXPhi,
        AverageKind::FourPoint,
    ] {
        let mut worst: f64 = 0.0;
        for k in 0..n_cov {
            let sigma =
                random_covariance(kind.dim(), rng::derive_seed(seed, &[kind.dim() as u64, k]));
            let r = monte_carlo(
                kind,
                &sigma,
                n_mc,
                rng::derive_seed(seed, &[99, kind.dim() as u64, k]),
            )?;
            worst = worst.max(r.z_score());
        }
        checks.push(Check {
            name: format!("average {kind:?} vs Monte-Carlo"),
            pass: worst <= z_max,
            detail: format!("max |z| = {worst:.2} over {n_cov} covariances"),
        });
    }

    let mut r = rng::stream(seed, 7);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.u64("linear_configs")? {
        use rand::Rng;
        let s = r.random_range(0.5..105.0);
        let lambda = r.random_range(0.1..100.0);
        let a0 = 10f64.powf(r.random_range(-3.0..-1.0));
        let stats = DataStatistics::whitened(s)?;
        let pcfg = PathwayConfig::new(a0, lambda, 1e-5)?;
        let pathway = Pathway::new(stats, pcfg)?;
        let consts = *pathway.constants().expect("lambda > 0");
        let steps = 20_000;
        let gd = simulate_pathway_gd(&stats, &[a0], pcfg.b0(), 1e-5, steps)?;
        for (t, w) in gd.times.iter().zip(&gd.omega).step_by(100) {
            let cf = omega_of_t(&stats, &pcfg, &consts, *t)?;
            worst = worst.max((cf - w).abs() / w.abs().max(1e-12));
        }
    }
    checks.push(Check {
        name: "closed form vs gradient descent".into(),
        pass: worst < 1e-3,
        detail: format!("max relative deviation {worst:.2e}"),
    });

    let rc = RaceConfig::reference(3);
    let grid = build_phase_grid(&rc)?;
    let mut agree = 0;
    let mut total = 0;
    for (i, &l1) in rc.lambda1_grid.iter().enumerate() {
        for (j, &l2) in rc.lambda2_grid.iter().enumerate() {
            if !grid.mask[i][j] {
                continue;
            }
            total += 1;
            let gd = race_by_gd(rc.s, rc.a0, l1, l2, rc.eta, &rc.thresholds, 5_000_000)?;
            if gd.specialised == grid.is_specialised(i, j) {
                agree += 1;
            }
        }
    }
    checks.push(Check {
        name: "race phase vs two-pathway descent".into(),
        pass: agree == total,
        detail: format!("{agree}/{total} cells agree"),
    });

    let ens = specdyn_core::meanfield::generate_teachers(2, 500, 0.5, seed)?;
    let student = StudentNetwork {
        w: ens.w_t1.clone(),
        h1: ens.h_t1.clone(),
        h2: ens.h_t2.clone() * 0.0,
        sigma_w: 0.0,
    };
    let op = OrderParams::from_weights(&student, &ens);
    let rate = ode_rhs(&op, Task::One, 1.0)?;
    let size = rate.q.amax().max(rate.r1.amax()).max(rate.h1.amax());
    checks.push(Check {
        name: "ODE stationary at the teacher".into(),
        pass: size < 1e-10,
        detail: format!("max rate {size:.2e}"),
    });

    let mut table = Vec::new();
    for c in &checks {
        let line = format!(
            "{} {} ({})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        println!("{line}");
        table.push(json!({"name": c.name, "pass": c.pass, "detail": c.detail}));
    }
    write_json(out, "validation.json", &Value::Array(table.clone()))?;
    let mut report = Report::new();
    report.insert("validation".into(), Value::Array(table));
    if checks.iter().any(|c| !c.pass) {
        anyhow::bail!(ValidationFailed(report));
    }
    Ok(report)
}

/// Some validation check failed; the report is still written.
#[derive(Debug)]
pub struct ValidationFailed(pub Report);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "validation failed")
    }
}

impl std::error::Error for ValidationFailed {}
