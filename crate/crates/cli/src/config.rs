//! Strict JSON run configuration.
//!
//! Validation walks the raw JSON tree so that every problem is reported with
//! its field path in one pass, instead of stopping at the first serde error.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{Map, Value};

pub const DEFAULT_GAIN: f64 = 0.5;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_DIMENSION_CAP: usize = 20_000;
pub const DEFAULT_K_MAX: usize = 4;
pub const DEFAULT_STEP: f64 = 0.5;
pub const DEFAULT_SIM_STEPS: usize = 10_000;
pub const DEFAULT_SIM_RUNS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    LoAvar,
    Bound,
    Optimize,
    Simulate,
    BoundCheck,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::LoAvar => "lo-avar",
            Mode::Bound => "bound",
            Mode::Optimize => "optimize",
            Mode::Simulate => "simulate",
            Mode::BoundCheck => "bound-check",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "lo-avar" => Mode::LoAvar,
            "bound" => Mode::Bound,
            "optimize" => Mode::Optimize,
            "simulate" => Mode::Simulate,
            "bound-check" => Mode::BoundCheck,
            other => {
                return Err(format!(
                    "unknown mode '{other}' (expected lo-avar, bound, optimize, simulate or bound-check)"
                ))
            }
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseBlock {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub omega0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeSpec {
    Plus,
    Ghz,
    /// `(re, im)` per symmetric level, normalized.
    Amplitudes(Vec<(f64, f64)>),
    OptimizeProduct,
    OptimizeAtomProduct,
    OptimizeJoint,
}

impl ProbeSpec {
    pub fn is_fixed(&self) -> bool {
        matches!(
            self,
            ProbeSpec::Plus | ProbeSpec::Ghz | ProbeSpec::Amplitudes(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ServoBlock {
    pub gain: f64,
    /// `linear` or `arcsine`.
    pub estimator: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimBlock {
    pub step: f64,
    pub steps: usize,
    pub runs: usize,
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub noise: NoiseBlock,
    pub atoms: usize,
    pub tau: Vec<f64>,
    pub k_max: usize,
    pub probe: ProbeSpec,
    /// `None` runs simulations free, without atoms or feedback.
    pub servo: Option<ServoBlock>,
    pub sim: SimBlock,
    pub seed: u64,
    pub tolerance: f64,
    pub dimension_cap: usize,
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

struct Errors(Vec<FieldError>);

impl Errors {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldError {
            path: path.into(),
            message: message.into(),
        });
    }
}

fn join(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}

fn check_keys(obj: &Map<String, Value>, path: &str, allowed: &[&str], errs: &mut Errors) {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            errs.push(join(path, key), "unknown field");
        }
    }
}

fn number(v: &Value, path: &str, errs: &mut Errors) -> Option<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Some(x),
        _ => {
            errs.push(path, "expected a finite number");
            None
        }
    }
}

fn count(v: &Value, path: &str, errs: &mut Errors) -> Option<u64> {
    match v.as_u64() {
        Some(x) => Some(x),
        None => {
            errs.push(path, "expected a non-negative integer");
            None
        }
    }
}

fn positive_count(v: &Value, path: &str, errs: &mut Errors) -> Option<usize> {
    let x = count(v, path, errs)?;
    if x == 0 {
        errs.push(path, "must be >= 1");
        return None;
    }
    usize::try_from(x).ok()
}

fn object<'a>(v: &'a Value, path: &str, errs: &mut Errors) -> Option<&'a Map<String, Value>> {
    match v.as_object() {
        Some(o) => Some(o),
        None => {
            errs.push(path, "expected an object");
            None
        }
    }
}

/// Parses and validates a configuration document.
pub fn validate(text: &str) -> Result<RunConfig, Vec<FieldError>> {
    let root: Value = serde_json::from_str(text).map_err(|e| {
        vec![FieldError {
            path: "$".into(),
            message: format!("invalid JSON: {e}"),
        }]
    })?;
    let mut errs = Errors(Vec::new());
    let Some(obj) = root.as_object() else {
        return Err(vec![FieldError {
            path: "$".into(),
            message: "expected a JSON object".into(),
        }]);
    };
    check_keys(
        obj,
        "",
        &[
            "mode",
            "noise",
            "atoms",
            "tau",
            "k_max",
            "probe",
            "servo",
            "sim",
            "seed",
            "tolerance",
            "dimension_cap",
            "output",
        ],
        &mut errs,
    );

    let mode = match obj.get("mode") {
        None => {
            errs.push("mode", "missing mode");
            None
        }
        Some(Value::String(s)) => match s.parse::<Mode>() {
            Ok(m) => Some(m),
            Err(e) => {
                errs.push("mode", e);
                None
            }
        },
        Some(_) => {
            errs.push("mode", "expected a string");
            None
        }
    };

    let noise = match obj.get("noise") {
        None => {
            errs.push("noise", "missing noise block");
            None
        }
        Some(v) => parse_noise(v, &mut errs),
    };

    let atoms = match obj.get("atoms") {
        None => Some(1),
        Some(v) => positive_count(v, "atoms", &mut errs),
    };

    let tau = match obj.get("tau") {
        None => {
            errs.push("tau", "missing averaging times");
            None
        }
        Some(v) => parse_tau(v, &mut errs),
    };

    let k_max = match obj.get("k_max") {
        None => Some(DEFAULT_K_MAX),
        Some(v) => positive_count(v, "k_max", &mut errs),
    };

    let probe = match obj.get("probe") {
        None => Some(ProbeSpec::Plus),
        Some(v) => parse_probe(v, atoms, &mut errs),
    };

    let servo = match obj.get("servo") {
        None => Some(Some(ServoBlock {
            gain: DEFAULT_GAIN,
            estimator: "linear",
        })),
        Some(Value::Null) => Some(None),
        Some(v) => parse_servo(v, &mut errs).map(Some),
    };

    let sim = match obj.get("sim") {
        None => Some(SimBlock {
            step: DEFAULT_STEP,
            steps: DEFAULT_SIM_STEPS,
            runs: DEFAULT_SIM_RUNS,
        }),
        Some(v) => parse_sim(v, &mut errs),
    };

    let seed = match obj.get("seed") {
        None => Some(0),
        Some(v) => count(v, "seed", &mut errs),
    };

    let tolerance = match obj.get("tolerance") {
        None => Some(DEFAULT_TOLERANCE),
        Some(v) => number(v, "tolerance", &mut errs).and_then(|t| {
            if t > 0.0 && t < 1.0 {
                Some(t)
            } else {
                errs.push("tolerance", "must be in (0, 1)");
                None
            }
        }),
    };

    let dimension_cap = match obj.get("dimension_cap") {
        None => Some(DEFAULT_DIMENSION_CAP),
        Some(v) => positive_count(v, "dimension_cap", &mut errs),
    };

    let output = match obj.get("output") {
        None | Some(Value::Null) => Some(None),
        Some(Value::String(s)) if !s.is_empty() => Some(Some(s.clone())),
        Some(_) => {
            errs.push("output", "expected a non-empty path string");
            None
        }
    };

    // cross-field rules
    if let (Some(mode), Some(tau), Some(sim)) = (mode, &tau, &sim) {
        if matches!(mode, Mode::Simulate | Mode::BoundCheck) {
            for (i, &t) in tau.iter().enumerate() {
                let k = (t / sim.step).round();
                if k < 1.0 || (t / sim.step - k).abs() > 1e-9 * k {
                    errs.push(
                        format!("tau[{i}]"),
                        format!("{t} is not a multiple of sim.step = {}", sim.step),
                    );
                } else if 2.0 * k > sim.steps as f64 {
                    errs.push(
                        format!("tau[{i}]"),
                        format!(
                            "needs {} steps per window pair but sim.steps = {}",
                            2.0 * k,
                            sim.steps
                        ),
                    );
                }
            }
        }
        if mode == Mode::BoundCheck {
            if let Some(p) = &probe {
                if !p.is_fixed() {
                    errs.push(
                        "probe",
                        "bound-check needs a fixed probe (plus, ghz or amplitudes)",
                    );
                }
            }
            if matches!(servo, Some(None)) {
                errs.push("servo", "bound-check needs a servo");
            }
        }
    }

    if !errs.0.is_empty() {
        return Err(errs.0);
    }
    Ok(RunConfig {
        mode: mode.unwrap(),
        noise: noise.unwrap(),
        atoms: atoms.unwrap(),
        tau: tau.unwrap(),
        k_max: k_max.unwrap(),
        probe: probe.unwrap(),
        servo: servo.unwrap(),
        sim: sim.unwrap(),
        seed: seed.unwrap(),
        tolerance: tolerance.unwrap(),
        dimension_cap: dimension_cap.unwrap(),
        output: output.unwrap(),
    })
}

fn parse_noise(v: &Value, errs: &mut Errors) -> Option<NoiseBlock> {
    let obj = object(v, "noise", errs)?;
    check_keys(obj, "noise", &["alpha", "beta", "gamma", "omega0"], errs);
    let mut field = |key: &str, positive: bool| -> Option<f64> {
        let path = join("noise", key);
        let Some(v) = obj.get(key) else {
            errs.push(path, "missing");
            return None;
        };
        let x = number(v, &path, errs)?;
        if positive && x <= 0.0 {
            errs.push(path, format!("{key} must be > 0"));
            None
        } else if x < 0.0 {
            errs.push(path, format!("{key} must be >= 0"));
            None
        } else {
            Some(x)
        }
    };
    let alpha = field("alpha", false);
    let beta = field("beta", false);
    let gamma = field("gamma", true);
    let omega0 = field("omega0", true);
    Some(NoiseBlock {
        alpha: alpha?,
        beta: beta?,
        gamma: gamma?,
        omega0: omega0?,
    })
}

fn parse_tau(v: &Value, errs: &mut Errors) -> Option<Vec<f64>> {
    match v {
        Value::Array(items) => {
            if items.is_empty() {
                errs.push("tau", "tau list must be nonempty");
                return None;
            }
            let mut out = Vec::with_capacity(items.len());
            let mut ok = true;
            for (i, item) in items.iter().enumerate() {
                let path = format!("tau[{i}]");
                match number(item, &path, errs) {
                    Some(t) if t > 0.0 => out.push(t),
                    Some(_) => {
                        errs.push(path, "tau must be > 0");
                        ok = false;
                    }
                    None => ok = false,
                }
            }
            ok.then_some(out)
        }
        Value::Object(obj) => {
            check_keys(obj, "tau", &["start", "stop", "count", "spacing"], errs);
            let get = |key: &str, errs: &mut Errors| -> Option<f64> {
                match obj.get(key) {
                    None => {
                        errs.push(join("tau", key), "missing");
                        None
                    }
                    Some(v) => number(v, &join("tau", key), errs),
                }
            };
            let start = get("start", errs);
            let stop = get("stop", errs);
            let n = match obj.get("count") {
                None => {
                    errs.push("tau.count", "missing");
                    None
                }
                Some(v) => positive_count(v, "tau.count", errs),
            };
            let log = match obj.get("spacing").map(|v| v.as_str()) {
                None | Some(Some("log")) => Some(true),
                Some(Some("linear")) => Some(false),
                Some(_) => {
                    errs.push("tau.spacing", "expected \"log\" or \"linear\"");
                    None
                }
            };
            let (start, stop, n, log) = (start?, stop?, n?, log?);
            if start <= 0.0 {
                errs.push("tau.start", "tau must be > 0");
                return None;
            }
            if stop < start {
                errs.push("tau.stop", "stop must be >= start");
                return None;
            }
            Some(tau_range(start, stop, n, log))
        }
        _ => {
            errs.push(
                "tau",
                "expected a list of times or a {start, stop, count} range",
            );
            None
        }
    }
}

/// `count` points from `start` to `stop` inclusive.
pub fn tau_range(start: f64, stop: f64, count: usize, log: bool) -> Vec<f64> {
    if count == 1 {
        return vec![start];
    }
    let last = (count - 1) as f64;
    (0..count)
        .map(|i| {
            let f = i as f64 / last;
            if i + 1 == count {
                stop
            } else if log {
                start * (stop / start).powf(f)
            } else {
                start + (stop - start) * f
            }
        })
        .collect()
}

fn parse_probe(v: &Value, atoms: Option<usize>, errs: &mut Errors) -> Option<ProbeSpec> {
    match v {
        Value::String(s) => match s.as_str() {
            "plus" => Some(ProbeSpec::Plus),
            "ghz" => Some(ProbeSpec::Ghz),
            "optimize-product" => Some(ProbeSpec::OptimizeProduct),
            "optimize-atom-product" => Some(ProbeSpec::OptimizeAtomProduct),
            "optimize-joint" => Some(ProbeSpec::OptimizeJoint),
            other => {
                errs.push(
                    "probe",
                    format!(
                        "unknown probe '{other}' (expected plus, ghz, optimize-product, \
                         optimize-atom-product, optimize-joint or {{\"amplitudes\": [...]}})"
                    ),
                );
                None
            }
        },
        Value::Object(obj) => {
            check_keys(obj, "probe", &["amplitudes"], errs);
            let Some(Value::Array(items)) = obj.get("amplitudes") else {
                errs.push("probe.amplitudes", "expected a list of amplitudes");
                return None;
            };
            let mut amps = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                let path = format!("probe.amplitudes[{i}]");
                let pair = match item {
                    Value::Array(p) if p.len() == 2 => {
                        number(&p[0], &path, errs).zip(number(&p[1], &path, errs))
                    }
                    other => number(other, &path, errs).map(|re| (re, 0.0)),
                };
                amps.push(pair?);
            }
            if let Some(n) = atoms {
                if amps.len() != n + 1 {
                    errs.push(
                        "probe.amplitudes",
                        format!(
                            "expected {} amplitudes for {n} atoms, got {}",
                            n + 1,
                            amps.len()
                        ),
                    );
                    return None;
                }
            }
            let norm: f64 = amps.iter().map(|(a, b)| a * a + b * b).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                errs.push(
                    "probe.amplitudes",
                    format!("state must be normalized, norm = {norm}"),
                );
                return None;
            }
            Some(ProbeSpec::Amplitudes(
                amps.iter().map(|&(a, b)| (a / norm, b / norm)).collect(),
            ))
        }
        _ => {
            errs.push("probe", "expected a probe name or {\"amplitudes\": [...]}");
            None
        }
    }
}

fn parse_servo(v: &Value, errs: &mut Errors) -> Option<ServoBlock> {
    let obj = object(v, "servo", errs)?;
    check_keys(obj, "servo", &["gain", "estimator"], errs);
    let gain = match obj.get("gain") {
        None => Some(DEFAULT_GAIN),
        Some(v) => number(v, "servo.gain", errs).and_then(|g| {
            if g > 0.0 && g <= 1.0 {
                Some(g)
            } else {
                errs.push("servo.gain", "gain must be in (0, 1]");
                None
            }
        }),
    };
    let estimator = match obj.get("estimator").map(|v| v.as_str()) {
        None | Some(Some("linear")) => Some("linear"),
        Some(Some("arcsine")) => Some("arcsine"),
        Some(_) => {
            errs.push("servo.estimator", "expected \"linear\" or \"arcsine\"");
            None
        }
    };
    Some(ServoBlock {
        gain: gain?,
        estimator: estimator?,
    })
}

fn parse_sim(v: &Value, errs: &mut Errors) -> Option<SimBlock> {
    let obj = object(v, "sim", errs)?;
    check_keys(obj, "sim", &["step", "steps", "runs"], errs);
    let step = match obj.get("step") {
        None => Some(DEFAULT_STEP),
        Some(v) => number(v, "sim.step", errs).and_then(|t| {
            if t > 0.0 {
                Some(t)
            } else {
                errs.push("sim.step", "step must be > 0");
                None
            }
        }),
    };
    let steps = match obj.get("steps") {
        None => Some(DEFAULT_SIM_STEPS),
        Some(v) => positive_count(v, "sim.steps", errs),
    };
    let runs = match obj.get("runs") {
        None => Some(DEFAULT_SIM_RUNS),
        Some(v) => positive_count(v, "sim.runs", errs).and_then(|r| {
            if r >= 2 {
                Some(r)
            } else {
                errs.push("sim.runs", "need at least 2 runs for a standard error");
                None
            }
        }),
    };
    Some(SimBlock {
        step: step?,
        steps: steps?,
        runs: runs?,
    })
}
