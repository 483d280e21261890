//! Experiment configuration as a flat file of dotted keys.
//!
//! The file is TOML restricted to `section.key = value` lines; every key has a
//! default and may be overridden with `key=value` strings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::error::{Error, Result};
use crate::fem::BenchmarkConfig;
use crate::mpc::Estimator;
use crate::ocp::OptimizerSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            _ => Err(Error::Config(format!("unknown scale {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkConfig,
    pub tau: f64,
    pub final_time: f64,
    pub switch_period: f64,
    pub mode_cycle: Vec<usize>,

    pub lambda: f64,
    pub l1_weight: f64,
    pub lower: f64,
    pub upper: f64,
    pub terminal_weight: f64,

    pub openloop_start: usize,
    pub openloop_steps: usize,
    pub openloop_ranks: Vec<usize>,
    pub openloop_seeds: usize,

    pub sampling_steps: usize,
    pub horizon_steps: usize,
    pub mpc_steps: Option<usize>,
    pub tolerances: Vec<f64>,
    pub fom_rom_estimator: Estimator,
    pub rom_rom_estimator: Estimator,
    /// Check the closed-loop certificate against a full-order reference run.
    pub certify: bool,

    pub pod_threshold: f64,
    pub pod_window: usize,
    pub optimizer: OptimizerSettings,

    pub experiment: String,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkConfig::default(),
            tau: 0.02,
            final_time: 4.0,
            switch_period: 0.5,
            mode_cycle: vec![0, 1],
            lambda: 1e-2,
            l1_weight: 1e-3,
            lower: -20.0,
            upper: 20.0,
            terminal_weight: 0.0,
            openloop_start: 0,
            openloop_steps: 200,
            openloop_ranks: vec![5, 10, 20, 40, 60],
            openloop_seeds: 3,
            sampling_steps: 1,
            horizon_steps: 20,
            mpc_steps: None,
            tolerances: vec![1e-2, 1e-3],
            fom_rom_estimator: Estimator::A,
            rom_rom_estimator: Estimator::TildeB,
            certify: false,
            pod_threshold: 1.0 - 1e-12,
            pod_window: 7,
            optimizer: OptimizerSettings::default(),
            experiment: "mpc".into(),
            out: PathBuf::from("out"),
            seed: 42,
        }
    }
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("{key}: expected a number"))),
    }
}

fn uint(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(Error::Config(format!("{key}: expected a nonnegative integer"))),
    }
}

fn text(key: &str, v: &Value) -> Result<String> {
    v.as_str().map(str::to_owned).ok_or_else(|| Error::Config(format!("{key}: expected a string")))
}

fn array<T>(key: &str, v: &Value, item: fn(&str, &Value) -> Result<T>) -> Result<Vec<T>> {
    v.as_array()
        .ok_or_else(|| Error::Config(format!("{key}: expected an array")))?
        .iter()
        .map(|x| item(key, x))
        .collect()
}

fn fixed<const N: usize>(key: &str, v: &Value) -> Result<[f64; N]> {
    array(key, v, float)?.try_into().map_err(|_| Error::Config(format!("{key}: expected {N} numbers")))
}

fn estimator_name(e: Estimator) -> &'static str {
    match e {
        Estimator::A => "a",
        Estimator::B => "b",
        Estimator::TildeB => "tilde_b",
    }
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Float(x)).collect())
}

fn ints(v: &[usize]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Integer(x as i64)).collect())
}

/// Flatten nested tables into dotted keys.
fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

impl ExperimentConfig {
    pub fn for_scale(scale: Scale) -> Self {
        let mut cfg = Self::default();
        cfg.apply_scale(scale);
        cfg
    }

    /// Mesh size and final time of the chosen scale.
    pub fn apply_scale(&mut self, scale: Scale) {
        match scale {
            Scale::Desk => {
                self.benchmark.h = 0.2;
                self.final_time = 4.0;
            }
            Scale::Paper => {
                self.benchmark.h = 0.1;
                self.final_time = 10.0;
            }
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_str(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        for (k, v) in &flat {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Apply one `key=value` override; the value uses TOML syntax, bare words
    /// are read as strings.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment} is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_owned()));
        self.set(key, &value)
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let b = &mut self.benchmark;
        match key {
            "benchmark.h" => b.h = float(key, v)?,
            "benchmark.zeta" => b.zeta = fixed(key, v)?,
            "benchmark.kappa" => b.kappa = fixed(key, v)?,
            "benchmark.robin" => b.robin = float(key, v)?,
            "benchmark.convection" => b.convection = fixed(key, v)?,
            "benchmark.reaction" => b.reaction = float(key, v)?,
            "benchmark.n_controls" => b.n_controls = uint(key, v)?,
            "time.tau" => self.tau = float(key, v)?,
            "time.final" => self.final_time = float(key, v)?,
            "time.switch_period" => self.switch_period = float(key, v)?,
            "time.mode_cycle" => self.mode_cycle = array(key, v, uint)?,
            "cost.lambda" => self.lambda = float(key, v)?,
            "cost.l1_weight" => self.l1_weight = float(key, v)?,
            "cost.lower" => self.lower = float(key, v)?,
            "cost.upper" => self.upper = float(key, v)?,
            "cost.terminal_weight" => self.terminal_weight = float(key, v)?,
            "openloop.start" => self.openloop_start = uint(key, v)?,
            "openloop.steps" => self.openloop_steps = uint(key, v)?,
            "openloop.ranks" => self.openloop_ranks = array(key, v, uint)?,
            "openloop.seeds" => self.openloop_seeds = uint(key, v)?,
            "mpc.sampling_steps" => self.sampling_steps = uint(key, v)?,
            "mpc.horizon_steps" => self.horizon_steps = uint(key, v)?,
            "mpc.steps" => {
                let n = uint(key, v)?;
                self.mpc_steps = (n > 0).then_some(n);
            }
            "mpc.tolerances" => self.tolerances = array(key, v, float)?,
            "mpc.fom_rom_estimator" => self.fom_rom_estimator = text(key, v)?.parse()?,
            "mpc.rom_rom_estimator" => self.rom_rom_estimator = text(key, v)?.parse()?,
            "mpc.certify" => {
                self.certify = v.as_bool().ok_or_else(|| Error::Config(format!("{key}: expected a boolean")))?
            }
            "pod.threshold" => self.pod_threshold = float(key, v)?,
            "pod.window" => self.pod_window = uint(key, v)?,
            "optimizer.abs_tol" => self.optimizer.abs_tol = float(key, v)?,
            "optimizer.rel_tol" => self.optimizer.rel_tol = float(key, v)?,
            "optimizer.max_iter" => self.optimizer.max_iter = uint(key, v)?,
            "run.experiment" => self.experiment = text(key, v)?,
            "run.out" => self.out = PathBuf::from(text(key, v)?),
            "run.seed" => self.seed = uint(key, v)? as u64,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Every key with its current value, sorted.
    pub fn entries(&self) -> BTreeMap<String, Value> {
        let b = &self.benchmark;
        let o = &self.optimizer;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_owned(), v);
        };
        put("benchmark.h", Value::Float(b.h));
        put("benchmark.zeta", floats(&b.zeta));
        put("benchmark.kappa", floats(&b.kappa));
        put("benchmark.robin", Value::Float(b.robin));
        put("benchmark.convection", floats(&b.convection));
        put("benchmark.reaction", Value::Float(b.reaction));
        put("benchmark.n_controls", Value::Integer(b.n_controls as i64));
        put("time.tau", Value::Float(self.tau));
        put("time.final", Value::Float(self.final_time));
        put("time.switch_period", Value::Float(self.switch_period));
        put("time.mode_cycle", ints(&self.mode_cycle));
        put("cost.lambda", Value::Float(self.lambda));
        put("cost.l1_weight", Value::Float(self.l1_weight));
        put("cost.lower", Value::Float(self.lower));
        put("cost.upper", Value::Float(self.upper));
        put("cost.terminal_weight", Value::Float(self.terminal_weight));
        put("openloop.start", Value::Integer(self.openloop_start as i64));
        put("openloop.steps", Value::Integer(self.openloop_steps as i64));
        put("openloop.ranks", ints(&self.openloop_ranks));
        put("openloop.seeds", Value::Integer(self.openloop_seeds as i64));
        put("mpc.sampling_steps", Value::Integer(self.sampling_steps as i64));
        put("mpc.horizon_steps", Value::Integer(self.horizon_steps as i64));
        put("mpc.steps", Value::Integer(self.mpc_steps.unwrap_or(0) as i64));
        put("mpc.tolerances", floats(&self.tolerances));
        put("mpc.fom_rom_estimator", Value::String(estimator_name(self.fom_rom_estimator).into()));
        put("mpc.rom_rom_estimator", Value::String(estimator_name(self.rom_rom_estimator).into()));
        put("mpc.certify", Value::Boolean(self.certify));
        put("pod.threshold", Value::Float(self.pod_threshold));
        put("pod.window", Value::Integer(self.pod_window as i64));
        put("optimizer.abs_tol", Value::Float(o.abs_tol));
        put("optimizer.rel_tol", Value::Float(o.rel_tol));
        put("optimizer.max_iter", Value::Integer(o.max_iter as i64));
        put("run.experiment", Value::String(self.experiment.clone()));
        put("run.out", Value::String(self.out.display().to_string()));
        put("run.seed", Value::Integer(self.seed as i64));
        m
    }

    /// Canonical flat text, one `key = value` per line.
    pub fn to_flat_string(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// FNV-1a of the canonical text without the output directory, as 16 hex digits.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (k, v) in self.entries() {
            if k == "run.out" {
                continue;
            }
            for byte in format!("{k}={v};").bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        if !(self.tau > 0.0) || !(self.final_time > self.tau) {
            return Err(Error::Config("need tau > 0 and final time > tau".into()));
        }
        let steps = self.final_time / self.tau;
        if (steps - steps.round()).abs() > 1e-8 {
            return Err(Error::Config("final time must be a multiple of tau".into()));
        }
        let per = self.switch_period / self.tau;
        if !(self.switch_period > 0.0) || (per - per.round()).abs() > 1e-8 {
            return Err(Error::Config("switching period must be a multiple of tau".into()));
        }
        if self.mode_cycle.is_empty() || self.mode_cycle.iter().any(|&m| m > 1) {
            return Err(Error::Config("mode cycle must use modes 0 and 1".into()));
        }
        if !(self.lambda > 0.0) || !(self.l1_weight >= 0.0) || !(self.lower <= self.upper) || !(self.terminal_weight >= 0.0) {
            return Err(Error::Config("invalid cost parameters".into()));
        }
        if self.sampling_steps == 0 || self.horizon_steps <= self.sampling_steps {
            return Err(Error::Config("need 0 < sampling time < prediction horizon".into()));
        }
        if self.tolerances.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if !(self.pod_threshold > 0.0 && self.pod_threshold <= 1.0) || self.pod_window == 0 {
            return Err(Error::Config("invalid POD settings".into()));
        }
        if self.openloop_steps == 0 || self.openloop_start + self.openloop_steps > self.n_steps() {
            return Err(Error::Config("open-loop horizon must fit in the simulation".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.final_time / self.tau).round() as usize
    }
}
