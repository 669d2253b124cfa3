//! Loop configuration files.
//!
//! A config is flat `key = value` text with dotted keys (`pid.kp = 2.5`).
//! Values use TOML syntax, so `[pid]` section headers also work. Every key
//! is optional; unknown keys are rejected.
//!
//! Per-channel values (`correction.alpha0`, `correction.beta_r`,
//! `plant.resistance`, `disturbance.amplitude`, `disturbance.slope`) take
//! either a scalar, broadcast to all sixteen channels, or a list of sixteen
//! numbers. Per-channel PID gains go under `pid.chN.*` and inherit any
//! unspecified gain from the global `pid.*` set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use efield_core::correction::MutualMatrix;
use efield_core::loop_runner::LoopConfig;
use efield_core::plant::{Disturbance, DisturbanceTable};
use efield_core::{Arithmetic, PidGains, CHANNELS};
use thiserror::Error;
use toml::Value;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file `{path}` cannot be read: {reason}")]
    Missing { path: PathBuf, reason: String },

    #[error("config file is malformed: {0}")]
    Syntax(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("config key `{key}`: {reason}")]
    Value { key: String, reason: String },

    #[error("override `{0}` is not of the form key=value")]
    Override(String),
}

impl From<efield_core::Error> for ConfigError {
    fn from(e: efield_core::Error) -> Self {
        match e {
            efield_core::Error::Config { key, reason } => ConfigError::Value { key, reason },
            other => ConfigError::Value {
                key: "config".into(),
                reason: other.to_string(),
            },
        }
    }
}

type Entries = BTreeMap<String, Value>;

fn flatten(prefix: &str, table: toml::Table, out: &mut Entries) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other);
            }
        }
    }
}

fn parse_entries(text: &str) -> Result<Entries, ConfigError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let mut out = Entries::new();
    flatten("", table, &mut out);
    Ok(out)
}

/// Parses one `key=value` override. Values that are not valid TOML are
/// taken as bare strings, so `mode=float` works without quotes.
pub fn parse_override(s: &str) -> Result<(String, Value), ConfigError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(s.to_string()))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(s.to_string()));
    }
    let value = format!("x = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

struct Reader {
    entries: Entries,
    base_dir: PathBuf,
}

impl Reader {
    fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.entries.remove(key)
    }

    fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
        match v {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            other => Err(Self::bad(key, format!("expected a number, got {other}"))),
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => Self::as_f64(key, &v),
        }
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.take(key).map(|v| Self::as_f64(key, &v)).transpose()
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if i >= 0 => Ok(i as u64),
            Some(other) => Err(Self::bad(
                key,
                format!("expected a non-negative integer, got {other}"),
            )),
        }
    }

    fn string(&mut self, key: &str, default: &str) -> Result<String, ConfigError> {
        match self.take(key) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s),
            Some(other) => Err(Self::bad(key, format!("expected a string, got {other}"))),
        }
    }

    fn channels(
        &mut self,
        key: &str,
        default: [f64; CHANNELS],
    ) -> Result<[f64; CHANNELS], ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Array(items)) => {
                if items.len() != CHANNELS {
                    return Err(Self::bad(
                        key,
                        format!("expected {CHANNELS} values, got {}", items.len()),
                    ));
                }
                let mut out = [0.0; CHANNELS];
                for (o, item) in out.iter_mut().zip(&items) {
                    *o = Self::as_f64(key, item)?;
                }
                Ok(out)
            }
            Some(v) => Ok([Self::as_f64(key, &v)?; CHANNELS]),
        }
    }

    fn mask(&mut self, key: &str) -> Result<[bool; CHANNELS], ConfigError> {
        match self.take(key) {
            None => Ok([true; CHANNELS]),
            Some(Value::String(s)) if s == "all" => Ok([true; CHANNELS]),
            Some(Value::Array(items)) => {
                let mut mask = [false; CHANNELS];
                for item in items {
                    match item {
                        Value::Integer(i) if (0..CHANNELS as i64).contains(&i) => {
                            mask[i as usize] = true
                        }
                        other => {
                            return Err(Self::bad(
                                key,
                                format!("channel {other} is not in 0..{CHANNELS}"),
                            ))
                        }
                    }
                }
                Ok(mask)
            }
            Some(other) => Err(Self::bad(
                key,
                format!("expected \"all\" or a list of channel indices, got {other}"),
            )),
        }
    }

    fn gains(&mut self, prefix: &str, base: PidGains) -> Result<PidGains, ConfigError> {
        Ok(PidGains {
            kp: self.f64(&format!("{prefix}.kp"), base.kp)?,
            ti: self.f64(&format!("{prefix}.ti"), base.ti)?,
            td: self.f64(&format!("{prefix}.td"), base.td)?,
            dt: base.dt,
            output_min: self.f64(&format!("{prefix}.output_min"), base.output_min)?,
            output_max: self.f64(&format!("{prefix}.output_max"), base.output_max)?,
        })
    }

    fn disturbance(&mut self) -> Result<Disturbance, ConfigError> {
        let kind = self.string("disturbance.kind", "none")?;
        let mask = self.mask("disturbance.channels")?;
        let start = self.f64("disturbance.start", 0.0)?;
        let d = match kind.as_str() {
            "none" => Disturbance::None,
            "step" => Disturbance::Step {
                amplitude: self.channels("disturbance.amplitude", [1.0; CHANNELS])?,
                start,
            },
            "ramp" => Disturbance::Ramp {
                slope: self.channels("disturbance.slope", [1.0; CHANNELS])?,
                start,
            },
            "sine" => Disturbance::Sinusoid {
                amplitude: self.channels("disturbance.amplitude", [1.0; CHANNELS])?,
                frequency: self.f64("disturbance.frequency", 1e3)?,
                phase: self.f64("disturbance.phase", 0.0)?,
            },
            "file" => {
                let path = self.string("disturbance.file", "")?;
                if path.is_empty() {
                    return Err(Self::bad(
                        "disturbance.file",
                        "required when disturbance.kind = \"file\"",
                    ));
                }
                let full = self.base_dir.join(path);
                Disturbance::Table(
                    DisturbanceTable::from_path(&full)
                        .map_err(|e| Self::bad("disturbance.file", e.to_string()))?,
                )
            }
            other => {
                return Err(Self::bad(
                    "disturbance.kind",
                    format!("expected none, step, ramp, sine or file, got `{other}`"),
                ))
            }
        };
        Ok(d.masked(&mask))
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_keys().next() {
            Some(k) => Err(ConfigError::UnknownKey(k)),
            None => Ok(()),
        }
    }
}

fn build(entries: Entries, base_dir: &Path) -> Result<LoopConfig, ConfigError> {
    let d = LoopConfig::default();
    let mut r = Reader {
        entries,
        base_dir: base_dir.to_path_buf(),
    };
    let mut cfg = d.clone();

    cfg.seed = r.u64("seed", d.seed)?;
    cfg.dt = r.f64("dt", d.dt)?;
    cfg.n_steps = r.u64("n_steps", d.n_steps as u64)? as usize;
    cfg.mode = r
        .string("mode", d.mode.as_str())?
        .parse::<Arithmetic>()
        .map_err(ConfigError::from)?;

    cfg.adc.full_scale = r.f64("adc.full_scale", d.adc.full_scale)?;
    cfg.adc.bits = r.u64("adc.bits", d.adc.bits as u64)? as u32;
    cfg.adc.stage1_gain = r.f64("adc.stage1_gain", d.adc.stage1_gain)?;
    cfg.adc.stage2_gain = r.f64("adc.stage2_gain", d.adc.stage2_gain)?;
    cfg.adc.noise_std = r.f64("adc.noise_std", d.adc.noise_std)?;

    cfg.dac.bits = r.u64("dac.bits", d.dac.bits as u64)? as u32;
    cfg.dac.out_min = r.f64("dac.out_min", d.dac.out_min)?;
    cfg.dac.out_max = r.f64("dac.out_max", d.dac.out_max)?;
    cfg.dac.amp_gain_v = r.f64("dac.amp_gain_v", d.dac.amp_gain_v)?;

    cfg.matrix.diag = r.f64("correction.diag", d.matrix.diag)?;
    cfg.matrix.off1 = r.f64("correction.off1", d.matrix.off1)?;
    cfg.matrix.off2 = r.f64("correction.off2", d.matrix.off2)?;
    cfg.correction.v = r.f64("correction.v", cfg.dac.amp_gain_v)?;
    cfg.correction.unit_scale = r
        .opt_f64("correction.unit_scale")?
        .unwrap_or(1.0 / cfg.matrix.diag);
    cfg.correction.alpha0 = r.channels("correction.alpha0", d.correction.alpha0)?;
    cfg.correction.beta_r = r.channels("correction.beta_r", d.correction.beta_r)?;

    cfg.gains = r.gains("pid", d.gains)?;
    for ch in 0..CHANNELS {
        let prefix = format!("pid.ch{ch}");
        if r.entries
            .keys()
            .any(|k| k.starts_with(&format!("{prefix}.")))
        {
            let g = r.gains(&prefix, cfg.gains)?;
            cfg.channel_gains.insert(ch, g);
        }
    }

    cfg.plant.resistance = r.channels("plant.resistance", d.plant.resistance)?;
    cfg.plant.sense_gain = r.f64("plant.sense_gain", d.plant.sense_gain)?;
    cfg.plant.disturbance = r.disturbance()?;

    cfg.link.bitrate = r.f64("link.bitrate", d.link.bitrate)?;
    cfg.link.fixed_latency = r.f64("link.fixed_latency", d.link.fixed_latency)?;
    cfg.link.drop_prob = r.f64("link.drop_prob", d.link.drop_prob)?;

    cfg.latency_budget = r.f64("latency.budget", d.latency_budget)?;
    cfg.latency_iterations = r.u64("latency.iterations", d.latency_iterations as u64)? as usize;

    r.finish()?;
    cfg.validate()?;
    // Reject a zero matrix diagonal before it turns into an infinite scale.
    MutualMatrix::from_params(cfg.matrix, CHANNELS).map_err(ConfigError::from)?;
    Ok(cfg)
}

/// Parses config text. Overrides supersede values in the text; relative
/// file paths resolve against `base_dir`.
pub fn parse_config_str(
    text: &str,
    overrides: &[(String, Value)],
    base_dir: &Path,
) -> Result<LoopConfig, ConfigError> {
    let mut entries = parse_entries(text)?;
    for (k, v) in overrides {
        entries.insert(k.clone(), v.clone());
    }
    build(entries, base_dir)
}

pub fn parse_config(path: &Path, overrides: &[(String, Value)]) -> Result<LoopConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Missing {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, overrides, base)
}

fn list(xs: &[f64]) -> String {
    let items: Vec<String> = xs.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", items.join(", "))
}

fn channel_value(xs: &[f64; CHANNELS]) -> String {
    if xs.iter().all(|x| x.to_bits() == xs[0].to_bits()) {
        format!("{:?}", xs[0])
    } else {
        list(xs)
    }
}

fn push_gains(out: &mut String, prefix: &str, g: &PidGains) {
    let _ = writeln!(out, "{prefix}.kp = {:?}", g.kp);
    let _ = writeln!(out, "{prefix}.ti = {:?}", g.ti);
    let _ = writeln!(out, "{prefix}.td = {:?}", g.td);
    let _ = writeln!(out, "{prefix}.output_min = {:?}", g.output_min);
    let _ = writeln!(out, "{prefix}.output_max = {:?}", g.output_max);
}

/// Renders a config as text that parses back to the same values.
/// File-driven disturbances are rendered as `none` with a comment.
pub fn render_config(cfg: &LoopConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "dt = {:?}", cfg.dt);
    let _ = writeln!(s, "n_steps = {}", cfg.n_steps);
    let _ = writeln!(s, "mode = \"{}\"", cfg.mode.as_str());
    s.push('\n');
    let _ = writeln!(s, "adc.full_scale = {:?}", cfg.adc.full_scale);
    let _ = writeln!(s, "adc.bits = {}", cfg.adc.bits);
    let _ = writeln!(s, "adc.stage1_gain = {:?}", cfg.adc.stage1_gain);
    let _ = writeln!(s, "adc.stage2_gain = {:?}", cfg.adc.stage2_gain);
    let _ = writeln!(s, "adc.noise_std = {:?}", cfg.adc.noise_std);
    s.push('\n');
    let _ = writeln!(s, "dac.bits = {}", cfg.dac.bits);
    let _ = writeln!(s, "dac.out_min = {:?}", cfg.dac.out_min);
    let _ = writeln!(s, "dac.out_max = {:?}", cfg.dac.out_max);
    let _ = writeln!(s, "dac.amp_gain_v = {:?}", cfg.dac.amp_gain_v);
    s.push('\n');
    let _ = writeln!(s, "correction.diag = {:?}", cfg.matrix.diag);
    let _ = writeln!(s, "correction.off1 = {:?}", cfg.matrix.off1);
    let _ = writeln!(s, "correction.off2 = {:?}", cfg.matrix.off2);
    let _ = writeln!(s, "correction.v = {:?}", cfg.correction.v);
    let _ = writeln!(s, "correction.unit_scale = {:?}", cfg.correction.unit_scale);
    let _ = writeln!(
        s,
        "correction.alpha0 = {}",
        channel_value(&cfg.correction.alpha0)
    );
    let _ = writeln!(
        s,
        "correction.beta_r = {}",
        channel_value(&cfg.correction.beta_r)
    );
    s.push('\n');
    push_gains(&mut s, "pid", &cfg.gains);
    for (ch, g) in &cfg.channel_gains {
        push_gains(&mut s, &format!("pid.ch{ch}"), g);
    }
    s.push('\n');
    let _ = writeln!(
        s,
        "plant.resistance = {}",
        channel_value(&cfg.plant.resistance)
    );
    let _ = writeln!(s, "plant.sense_gain = {:?}", cfg.plant.sense_gain);
    s.push('\n');
    match &cfg.plant.disturbance {
        Disturbance::None => {
            let _ = writeln!(s, "disturbance.kind = \"none\"");
        }
        Disturbance::Step { amplitude, start } => {
            let _ = writeln!(s, "disturbance.kind = \"step\"");
            let _ = writeln!(s, "disturbance.amplitude = {}", channel_value(amplitude));
            let _ = writeln!(s, "disturbance.start = {start:?}");
        }
        Disturbance::Ramp { slope, start } => {
            let _ = writeln!(s, "disturbance.kind = \"ramp\"");
            let _ = writeln!(s, "disturbance.slope = {}", channel_value(slope));
            let _ = writeln!(s, "disturbance.start = {start:?}");
        }
        Disturbance::Sinusoid {
            amplitude,
            frequency,
            phase,
        } => {
            let _ = writeln!(s, "disturbance.kind = \"sine\"");
            let _ = writeln!(s, "disturbance.amplitude = {}", channel_value(amplitude));
            let _ = writeln!(s, "disturbance.frequency = {frequency:?}");
            let _ = writeln!(s, "disturbance.phase = {phase:?}");
        }
        Disturbance::Table(_) => {
            let _ = writeln!(s, "# file-driven disturbance not representable here");
            let _ = writeln!(s, "disturbance.kind = \"none\"");
        }
    }
    s.push('\n');
    let _ = writeln!(s, "link.bitrate = {:?}", cfg.link.bitrate);
    let _ = writeln!(s, "link.fixed_latency = {:?}", cfg.link.fixed_latency);
    let _ = writeln!(s, "link.drop_prob = {:?}", cfg.link.drop_prob);
    s.push('\n');
    let _ = writeln!(s, "latency.budget = {:?}", cfg.latency_budget);
    let _ = writeln!(s, "latency.iterations = {}", cfg.latency_iterations);
    s
}
