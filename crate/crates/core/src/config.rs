//! Flat `key = value` run configuration, presets and validation.
//!
//! Values are layered: preset, then config file, then command-line
//! overrides. The resolved key set (defaults included) is what gets echoed
//! and hashed into the run summary.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::algorithm::{InitRule, Mode};
use crate::error::{Error, Result};
use crate::geometry::FeasibleSet;
use crate::network::{GraphKind, GraphSpec};
use crate::problem::RegressionDims;
use crate::schedules::{Schedule, StepRule, TriggerSchedule};

/// Every accepted key with its default; `None` marks a required key.
const KEYS: &[(&str, Option<&str>)] = &[
    ("n", None),
    ("p", None),
    ("q", None),
    ("m", None),
    ("T", None),
    ("seed", Some("1")),
    ("set", Some("box")),
    ("set.radius", Some("5")),
    ("schedule.family", Some("theorem2")),
    ("schedule.kappa", Some("0.5")),
    ("schedule.alpha0", Some("1")),
    ("schedule.theta1", Some("0.5")),
    ("schedule.theta2", Some("0.5")),
    ("trigger", Some("scaled_power")),
    ("trigger.theta", Some("1")),
    ("trigger.c", Some("2")),
    ("trigger.tau0", Some("0")),
    ("trigger.theta3", Some("1")),
    ("graph", Some("paper4quarters")),
    ("graph.p_edge", Some("0.1")),
    ("graph.b_window", Some("4")),
    ("mode", Some("bandit")),
    ("init", Some("zero")),
    ("compute_static_comparator", Some("false")),
    ("compute_dynamic_comparator", Some("false")),
    ("debug_invariants", Some("false")),
    ("out", Some("out")),
];

pub const PRESETS: &[&str] = &["desk", "paper-sec4"];

pub fn preset(name: &str) -> Result<Vec<(&'static str, &'static str)>> {
    let common = [
        ("set", "box"),
        ("set.radius", "5"),
        ("schedule.family", "theorem2"),
        ("schedule.alpha0", "1"),
        ("schedule.theta1", "0.5"),
        ("schedule.theta2", "0.5"),
        ("trigger", "scaled_power"),
        ("trigger.theta3", "1"),
        ("graph", "paper4quarters"),
        ("graph.p_edge", "0.1"),
        ("graph.b_window", "4"),
    ];
    let specific: &[(&str, &str)] = match name {
        "desk" => &[
            ("n", "10"),
            ("p", "4"),
            ("q", "2"),
            ("m", "2"),
            ("T", "2000"),
            ("trigger.tau0", "4"),
        ],
        "paper-sec4" => &[
            ("n", "100"),
            ("p", "10"),
            ("q", "4"),
            ("m", "2"),
            ("T", "1000"),
            ("schedule.family", "paper-sec4"),
            ("trigger.tau0", "400"),
        ],
        other => {
            return Err(Error::config(
                "preset",
                format!("unknown preset `{other}`, expected one of {}", PRESETS.join(", ")),
            ))
        }
    };
    Ok(common.iter().chain(specific).copied().collect())
}

/// Raw key-value layers before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        let mut map = ConfigMap::new();
        for (k, v) in preset(name)? {
            map.set(k, v)?;
        }
        Ok(map)
    }

    /// Sets `key`, rejecting keys outside the schema.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(Error::config(key, "unknown key"));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parses `key = value` lines; `#` starts a comment. Later layers
    /// override earlier ones, but a key may appear only once per text.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if value.trim().is_empty() {
                return Err(Error::config(key, "empty value"));
            }
            if seen.contains(&key) {
                return Err(Error::config(key, "duplicate key"));
            }
            seen.push(key);
            self.set(key, value)?;
        }
        Ok(())
    }

    /// `key=value` command-line override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
        self.set(key.trim(), value)
    }

    /// Every key with defaults filled in; fails on the first missing
    /// required key.
    pub fn resolved(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (k, default) in KEYS {
            let v = match (self.values.get(*k), default) {
                (Some(v), _) => v.clone(),
                (None, Some(d)) => d.to_string(),
                (None, None) => return Err(Error::config(*k, "missing required key")),
            };
            out.insert(k.to_string(), v);
        }
        Ok(out)
    }
}

fn parse_num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = &map[key];
    raw.parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{raw}`")))
}

fn parse_bool(map: &BTreeMap<String, String>, key: &str) -> Result<bool> {
    match map[key].as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::config(key, format!("expected true or false, got `{other}`"))),
    }
}

fn positive_count(map: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    let v: usize = parse_num(map, key)?;
    if v == 0 {
        return Err(Error::config(key, "must be at least 1"));
    }
    Ok(v)
}

/// Validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dims: RegressionDims,
    pub horizon: usize,
    pub seed: u64,
    pub set: FeasibleSet,
    pub schedule: Schedule,
    pub graph: GraphSpec,
    pub mode: Mode,
    pub init: InitRule,
    pub compute_static_comparator: bool,
    pub compute_dynamic_comparator: bool,
    pub debug_invariants: bool,
    pub out: PathBuf,
    /// resolved key-value echo
    pub echo: BTreeMap<String, String>,
}

/// Echo of the configuration written into the summary, output directory
/// excluded.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub hash: String,
    pub values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let m = map.resolved()?;
        let n = positive_count(&m, "n")?;
        let p = positive_count(&m, "p")?;
        let q = positive_count(&m, "q")?;
        let mc = positive_count(&m, "m")?;
        let horizon = positive_count(&m, "T")?;
        let seed: u64 = parse_num(&m, "seed")?;

        let radius: f64 = parse_num(&m, "set.radius")?;
        let set = match m["set"].as_str() {
            "box" => FeasibleSet::symmetric_box(radius, p),
            "ball" => FeasibleSet::centered_ball(radius, p),
            other => return Err(Error::config("set", format!("expected box or ball, got `{other}`"))),
        }
        .map_err(|e| Error::config("set.radius", e.to_string()))?;

        let step = match m["schedule.family"].as_str() {
            "theorem1" => StepRule::Theorem1 {
                kappa: parse_num(&m, "schedule.kappa")?,
            },
            "theorem2" => StepRule::Theorem2 {
                alpha0: parse_num(&m, "schedule.alpha0")?,
                theta1: parse_num(&m, "schedule.theta1")?,
                theta2: parse_num(&m, "schedule.theta2")?,
            },
            "paper-sec4" => StepRule::Theorem2 {
                alpha0: 1.0,
                theta1: 0.5,
                theta2: 0.5,
            },
            other => {
                return Err(Error::config(
                    "schedule.family",
                    format!("expected theorem1, theorem2 or paper-sec4, got `{other}`"),
                ))
            }
        };
        let trigger = match m["trigger"].as_str() {
            "power" => TriggerSchedule::Power {
                theta: parse_num(&m, "trigger.theta")?,
            },
            "geometric" => TriggerSchedule::Geometric {
                c: parse_num(&m, "trigger.c")?,
            },
            "scaled_power" => TriggerSchedule::ScaledPower {
                tau0: parse_num(&m, "trigger.tau0")?,
                theta3: parse_num(&m, "trigger.theta3")?,
            },
            "none" => TriggerSchedule::NoTrigger,
            other => {
                return Err(Error::config(
                    "trigger",
                    format!("expected power, geometric, scaled_power or none, got `{other}`"),
                ))
            }
        };
        let schedule = Schedule::new(step, trigger, set.inner_radius()).map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("schedule.family", other.to_string()),
        })?;

        let kind = GraphKind::parse(&m["graph"]).ok_or_else(|| {
            Error::config(
                "graph",
                format!("expected paper4quarters, ring or complete, got `{}`", m["graph"]),
            )
        })?;
        let graph = GraphSpec {
            kind,
            p_edge: parse_num(&m, "graph.p_edge")?,
            b_window: parse_num(&m, "graph.b_window")?,
        };
        graph.validate()?;

        let mode = match m["mode"].as_str() {
            "bandit" => Mode::Bandit,
            "full-info" | "full_info" => Mode::FullInfo,
            other => return Err(Error::config("mode", format!("expected bandit or full-info, got `{other}`"))),
        };
        let init = match m["init"].as_str() {
            "zero" => InitRule::Zero,
            "uniform" => InitRule::Uniform,
            other => return Err(Error::config("init", format!("expected zero or uniform, got `{other}`"))),
        };

        Ok(RunConfig {
            dims: RegressionDims { n, p, q, m: mc },
            horizon,
            seed,
            set,
            schedule,
            graph,
            mode,
            init,
            compute_static_comparator: parse_bool(&m, "compute_static_comparator")?,
            compute_dynamic_comparator: parse_bool(&m, "compute_dynamic_comparator")?,
            debug_invariants: parse_bool(&m, "debug_invariants")?,
            out: PathBuf::from(&m["out"]),
            echo: m,
        })
    }

    /// SHA-256 of the resolved `key=value` lines in key order, excluding the
    /// output directory.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.echo.iter().filter(|(k, _)| k.as_str() != "out") {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            hash: self.hash(),
            values: self.echo.iter().filter(|(k, _)| k.as_str() != "out").map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }
}
