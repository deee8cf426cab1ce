//! Experiment configuration: documented defaults, JSON files and `--set` overrides.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};
use std::fmt;
use std::path::Path;

use clap::ValueEnum;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    LinTraj,
    RacePhase,
    MeanfieldRun,
    ContinualSweep,
    EntropyPhase,
    EwcRun,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::LinTraj => "lin-traj",
            Command::RacePhase => "race-phase",
            Command::MeanfieldRun => "meanfield-run",
            Command::ContinualSweep => "continual-sweep",
            Command::EntropyPhase => "entropy-phase",
            Command::EwcRun => "ewc-run",
            Command::Validate => "validate",
        }
    }
}

/// A configuration problem tied to a field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub kind: &'static str,
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn new(kind: &'static str, field: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            kind,
            field: field.map(str::to_string),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{}: {}", field, self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// One documented parameter.
pub struct Param {
    pub key: String,
    pub default: Value,
    pub doc: &'static str,
}

fn p(key: impl Into<String>, default: Value, doc: &'static str) -> Param {
    Param {
        key: key.into(),
        default,
        doc,
    }
}

struct Protocol {
    d: usize,
    gamma: f64,
    r1: f64,
    theta1: f64,
    r2: f64,
    theta2: f64,
    tau1: f64,
    tau2: f64,
    backend: &'static str,
    record_every: f64,
}

fn protocol_params(v: Protocol) -> Vec<Param> {
    vec![
        p("d", json!(v.d), "input dimension"),
        p("p", json!(2), "student hidden units"),
        p("p_star", json!(1), "teacher hidden units"),
        p("gamma", json!(v.gamma), "task similarity in [0, 1]"),
        p("sigma_w", json!(1e-3), "first-layer initial weight scale"),
        p(
            "readout",
            json!("polar"),
            "readout initialisation: polar | gaussian",
        ),
        p(
            "readout_std",
            json!(0.1),
            "readout scale for gaussian initialisation",
        ),
        p("r1", json!(v.r1), "task-1 readout norm"),
        p(
            "theta1",
            json!(v.theta1),
            "task-1 readout angle in [0, pi/4]",
        ),
        p("r2", json!(v.r2), "task-2 readout norm"),
        p(
            "theta2",
            json!(v.theta2),
            "task-2 readout angle in [0, pi/4]",
        ),
        p("eta", json!(1.0), "learning rate"),
        p("tau1", json!(v.tau1), "task-1 length in tau = steps/d"),
        p("tau2", json!(v.tau2), "task-2 length in tau = steps/d"),
        p("backend", json!(v.backend), "sgd | ode"),
        p(
            "activation",
            json!("scaled_erf"),
            "scaled_erf | relu (relu needs sgd)",
        ),
        p(
            "identical_tasks",
            json!(false),
            "force task 2 to equal task 1",
        ),
        p("dtau", json!(0.01), "ODE step"),
        p(
            "record_every",
            json!(v.record_every),
            "recording interval in tau",
        ),
    ]
}

fn axis_params(n: &'static str, param: &str, lo: f64, hi: f64, count: usize) -> Vec<Param> {
    let key = |suffix: &str| format!("{n}.{suffix}");
    vec![
        p(
            key("param"),
            json!(param),
            "gamma | sigma_w | log10_sigma_w | r1 | theta1 | r2 | theta2 | xi",
        ),
        p(key("min"), json!(lo), "first value"),
        p(key("max"), json!(hi), "last value"),
        p(key("n"), json!(count), "number of values"),
    ]
}

/// Every parameter of `cmd` with its default.
pub fn params(cmd: Command) -> Vec<Param> {
    let mut out = vec![p("seed", json!(0), "global seed")];
    match cmd {
        Command::LinTraj => out.extend([
            p("s", json!(1.0), "input-output singular value"),
            p(
                "d",
                json!(1.0),
                "input variance along the singular direction",
            ),
            p("lambda", json!(2.0), "imbalance h^2 - |w|^2"),
            p("a0", json!(0.01), "initial first-layer weight"),
            p("eta", json!(1e-5), "learning rate; tau = 1/eta epochs"),
            p("t_max", json!(1e6), "trajectory length in epochs"),
            p("dt", json!(1e3), "trajectory spacing in epochs"),
            p(
                "escape_fraction",
                json!(0.05),
                "escaping threshold as a fraction of s/d",
            ),
            p(
                "hit_fraction",
                json!(0.01),
                "hitting threshold as a fraction of s/d",
            ),
            p("gd", json!(false), "also simulate gradient descent"),
        ]),
        Command::RacePhase => out.extend([
            p("s", json!(105.0), "shared singular value"),
            p("a0", json!(0.01), "initial first-layer weight"),
            p("eta", json!(1e-5), "learning rate"),
            p("upsilon_escape", json!(5.0), "escaping threshold"),
            p("upsilon_hit", json!(1.0), "hitting threshold"),
            p("lambda1.min", json!(0.0), "fast-pathway imbalance range"),
            p("lambda1.max", json!(100.0), "fast-pathway imbalance range"),
            p("lambda1.n", json!(21), "fast-pathway grid size"),
            p("lambda2.min", json!(0.0), "slow-pathway imbalance range"),
            p("lambda2.max", json!(20.0), "slow-pathway imbalance range"),
            p("lambda2.n", json!(21), "slow-pathway grid size"),
            p(
                "substeps",
                json!(1),
                "Euler sub-steps per epoch for the slow pathway",
            ),
        ]),
        Command::MeanfieldRun => out.extend(protocol_params(Protocol {
            d: 10_000,
            gamma: 0.5,
            r1: 0.5,
            theta1: FRAC_PI_8,
            r2: 0.1,
            theta2: FRAC_PI_4,
            tau1: 20.0,
            tau2: 0.0,
            backend: "ode",
            record_every: 0.1,
        })),
        Command::ContinualSweep => {
            out.extend(protocol_params(Protocol {
                d: 10_000,
                gamma: 0.5,
                r1: 0.01,
                theta1: 0.0,
                r2: 0.1,
                theta2: FRAC_PI_4,
                tau1: 1000.0,
                tau2: 1000.0,
                backend: "ode",
                record_every: 10.0,
            }));
            out.extend(axis_params("axis1", "gamma", 0.0, 1.0, 11));
            out.extend(axis_params("axis2", "theta2", FRAC_PI_4, FRAC_PI_4, 1));
            out.push(p("entropy_at", json!("after_task1"), "after_task1 | final"));
            out.push(p("seed_policy", json!("shared"), "per_cell | shared"));
        }
        Command::EntropyPhase => {
            out.extend(protocol_params(Protocol {
                d: 1000,
                gamma: 0.5,
                r1: 0.5,
                theta1: 0.0,
                r2: 0.1,
                theta2: 0.0,
                tau1: 50.0,
                tau2: 0.0,
                backend: "sgd",
                record_every: 5.0,
            }));
            out.extend(axis_params("axis1", "log10_sigma_w", -3.0, 0.0, 8));
            out.extend(axis_params("axis2", "r1", 0.1, 1.0, 8));
            out.push(p("entropy_at", json!("after_task1"), "after_task1 | final"));
            out.push(p("seed_policy", json!("per_cell"), "per_cell | shared"));
        }
        Command::EwcRun => {
            out.extend(protocol_params(Protocol {
                d: 1000,
                gamma: 0.5,
                r1: 0.5,
                theta1: 0.0,
                r2: 0.1,
                theta2: FRAC_PI_4,
                tau1: 500.0,
                tau2: 500.0,
                backend: "sgd",
                record_every: 5.0,
            }));
            out.extend([
                p(
                    "ewc.xi",
                    json!([0.0, 1.0, 1e-2, 1e-4, 1e-6]),
                    "regularisation strengths",
                ),
                p(
                    "ewc.fisher_samples",
                    json!(2000),
                    "task-1 samples for the Fisher estimate",
                ),
                p("ewc.kind", json!("model"), "empirical | model"),
                p(
                    "ewc.scale",
                    json!("per_unit_time"),
                    "per_sample | per_unit_time",
                ),
            ]);
        }
        Command::Validate => out.extend([
            p(
                "mc_samples",
                json!(200_000),
                "Monte-Carlo samples per average",
            ),
            p("covariances", json!(10), "random covariances per average"),
            p(
                "z_max",
                json!(4.0),
                "allowed Monte-Carlo deviation in standard errors",
            ),
            p(
                "linear_configs",
                json!(5),
                "random linear-pathway configurations",
            ),
        ]),
    }
    out
}

/// Fully resolved parameters for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub command: Command,
    pub values: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, v: &Map<String, Value>, out: &mut BTreeMap<String, Value>) {
    for (k, v) in v {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Object(m) => flatten(&key, m, out),
            _ => {
                out.insert(key, v.clone());
            }
        }
    }
}

fn same_type(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(_), Value::Number(_)) => true,
        (Value::String(_), Value::String(_)) => true,
        (Value::Bool(_), Value::Bool(_)) => true,
        (Value::Array(_), Value::Array(_)) => true,
        _ => false,
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

impl Config {
    pub fn defaults(command: Command) -> Self {
        Self {
            command,
            values: params(command)
                .into_iter()
                .map(|p| (p.key, p.default))
                .collect(),
        }
    }

    /// Defaults, then the file (a flat or nested JSON object, or a run
    /// manifest), then `--set key=value` overrides, then `--seed`.
    pub fn resolve(
        command: Command,
        file: Option<&Path>,
        sets: &[String],
        seed: Option<u64>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults(command);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                ConfigError::new("io", None, format!("cannot read {}: {e}", path.display()))
            })?;
            cfg.apply_json(&text)?;
        }
        for s in sets {
            let (key, raw) = s.split_once('=').ok_or_else(|| {
                ConfigError::new("parse", None, format!("expected key=value, got {s:?}"))
            })?;
            let value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            cfg.set(key.trim(), value)?;
        }
        if let Some(seed) = seed {
            cfg.set("seed", json!(seed))?;
        }
        Ok(cfg)
    }

    pub fn apply_json(&mut self, text: &str) -> Result<(), ConfigError> {
        let root: Value = serde_json::from_str(text)
            .map_err(|e| ConfigError::new("parse", None, format!("invalid JSON: {e}")))?;
        let Value::Object(mut obj) = root else {
            return Err(ConfigError::new(
                "parse",
                None,
                "config must be a JSON object",
            ));
        };
        if obj.contains_key("toolkit") {
            if let Some(Value::String(c)) = obj.get("command") {
                if c != self.command.name() {
                    return Err(ConfigError::new(
                        "parse",
                        Some("command"),
                        format!("manifest is for {c}, not {}", self.command.name()),
                    ));
                }
            }
            match obj.remove("config") {
                Some(Value::Object(inner)) => obj = inner,
                _ => {
                    return Err(ConfigError::new(
                        "parse",
                        Some("config"),
                        "manifest has no config",
                    ))
                }
            }
        }
        let mut flat = BTreeMap::new();
        flatten("", &obj, &mut flat);
        for (k, v) in flat {
            self.set(&k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: Value) -> Result<(), ConfigError> {
        let Some(current) = self.values.get(key) else {
            return Err(ConfigError::new(
                "unknown-key",
                Some(key),
                format!("not a parameter of {}", self.command.name()),
            ));
        };
        if !same_type(current, &value) {
            return Err(ConfigError::new(
                "type-mismatch",
                Some(key),
                format!("expected {}, got {}", type_name(current), type_name(&value)),
            ));
        }
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    fn get(&self, key: &str) -> &Value {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("parameter {key} has no default"))
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.get(key)
            .as_f64()
            .ok_or_else(|| ConfigError::new("type-mismatch", Some(key), "expected a number"))
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.get(key).as_u64().ok_or_else(|| {
            ConfigError::new("out-of-range", Some(key), "expected a non-negative integer")
        })
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        Ok(self.u64(key)? as usize)
    }

    pub fn bool(&self, key: &str) -> Result<bool, ConfigError> {
        self.get(key)
            .as_bool()
            .ok_or_else(|| ConfigError::new("type-mismatch", Some(key), "expected a boolean"))
    }

    pub fn str(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .as_str()
            .ok_or_else(|| ConfigError::new("type-mismatch", Some(key), "expected a string"))
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let arr = self
            .get(key)
            .as_array()
            .ok_or_else(|| ConfigError::new("type-mismatch", Some(key), "expected an array"))?;
        arr.iter()
            .map(|v| {
                v.as_f64().ok_or_else(|| {
                    ConfigError::new("type-mismatch", Some(key), "expected an array of numbers")
                })
            })
            .collect()
    }

    /// Parse a string field through serde (snake_case enum names).
    pub fn choice<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T, ConfigError> {
        let s = self.str(key)?;
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| {
            ConfigError::new("out-of-range", Some(key), format!("unknown value {s:?}"))
        })
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.values.clone().into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_complete_and_unique() {
        for cmd in Command::value_variants() {
            let ps = params(*cmd);
            let cfg = Config::defaults(*cmd);
            assert_eq!(ps.len(), cfg.values.len(), "{}", cmd.name());
            assert!(ps.iter().all(|p| !p.doc.is_empty()));
        }
    }

    #[test]
    fn overrides_and_errors() {
        let cfg = Config::resolve(
            Command::LinTraj,
            None,
            &["lambda=3.5".into(), "gd=true".into()],
            Some(9),
        )
        .unwrap();
        assert_eq!(cfg.f64("lambda").unwrap(), 3.5);
        assert!(cfg.bool("gd").unwrap());
        assert_eq!(cfg.u64("seed").unwrap(), 9);
        let e = Config::resolve(Command::LinTraj, None, &["gamma=0.5".into()], None).unwrap_err();
        assert_eq!((e.kind, e.field.as_deref()), ("unknown-key", Some("gamma")));
        let e = Config::resolve(Command::LinTraj, None, &["s=abc".into()], None).unwrap_err();
        assert_eq!((e.kind, e.field.as_deref()), ("type-mismatch", Some("s")));
    }

    #[test]
    fn nested_json_flattens() {
        let mut cfg = Config::defaults(Command::RacePhase);
        cfg.apply_json(r#"{"lambda1": {"n": 5}, "s": 105}"#)
            .unwrap();
        assert_eq!(cfg.usize("lambda1.n").unwrap(), 5);
        assert_eq!(cfg.f64("s").unwrap(), 105.0);
    }
}
