//! Sectioned `key = value` configuration files.
//!
//! ```text
//! # output feedback at Re = 11.29
//! [physics]
//! reynolds = 11.29
//!
//! [control]
//! strategy = sof
//! actuators = 5
//! observers = 5
//! ```
//!
//! Comments start with `#` or `;`. Lists are separated by commas or
//! whitespace. Every key is checked against a fixed schema when the file is
//! read, so errors carry the offending line.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::film::PhysicalParams;
use crate::sim::{Perturbation, RunConfig};
use crate::synth::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Float,
    Int,
    Bool,
    /// A strategy name or `none`.
    Strategy,
    FloatList,
    IntList,
}

const SCHEMA: &[(&str, &str, Kind)] = &[
    ("physics", "reynolds", Kind::Float),
    ("physics", "capillary", Kind::Float),
    ("physics", "theta", Kind::Float),
    ("physics", "theta_deg", Kind::Float),
    ("physics", "length", Kind::Float),
    ("physics", "beta", Kind::Float),
    ("grid", "nodes", Kind::Int),
    ("control", "strategy", Kind::Strategy),
    ("control", "actuators", Kind::Int),
    ("control", "observers", Kind::Int),
    ("control", "omega", Kind::Float),
    ("control", "retain", Kind::Int),
    ("control", "sof_tolerance", Kind::Float),
    ("control", "sof_max_iterations", Kind::Int),
    ("control", "sof_min_step", Kind::Float),
    ("run", "burn_in", Kind::Float),
    ("run", "control_time", Kind::Float),
    ("run", "seed", Kind::Int),
    ("run", "epsilon", Kind::Float),
    ("run", "h_min", Kind::Float),
    ("run", "h_max", Kind::Float),
    ("run", "sample_interval", Kind::Float),
    ("run", "snapshot_times", Kind::FloatList),
    ("run", "rtol", Kind::Float),
    ("run", "atol", Kind::Float),
    ("run", "dt_init", Kind::Float),
    ("run", "dt_max", Kind::Float),
    ("run", "dt_min", Kind::Float),
    ("run", "dealias", Kind::Bool),
    ("run", "perturbation_modes", Kind::IntList),
    ("run", "perturbation_amplitudes", Kind::FloatList),
    ("run", "noise", Kind::Float),
    ("run", "shift_nodes", Kind::Int),
    ("sweep", "reynolds", Kind::FloatList),
    ("sweep", "reynolds_min", Kind::Float),
    ("sweep", "reynolds_max", Kind::Float),
    ("sweep", "reynolds_points", Kind::Int),
    ("sweep", "actuators", Kind::IntList),
    ("sweep", "observers", Kind::IntList),
    ("sweep", "strategy", Kind::Strategy),
    ("sweep", "workers", Kind::Int),
    ("sweep", "master_seed", Kind::Int),
];

fn kind_of(section: &str, key: &str) -> Option<Kind> {
    SCHEMA
        .iter()
        .find(|(s, k, _)| *s == section && *k == key)
        .map(|&(_, _, kind)| kind)
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty())
}

fn check_value(kind: Kind, value: &str) -> std::result::Result<(), String> {
    let float = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(|_| ())
            .ok_or_else(|| format!("`{s}` is not a finite number"))
    };
    let int = |s: &str| s.parse::<u64>().map(|_| ()).map_err(|_| format!("`{s}` is not a non-negative integer"));
    match kind {
        Kind::Float => float(value),
        Kind::Int => int(value),
        Kind::Bool => match value {
            "true" | "false" | "yes" | "no" | "on" | "off" | "1" | "0" => Ok(()),
            _ => Err(format!("`{value}` is not a boolean")),
        },
        Kind::Strategy => {
            if value.eq_ignore_ascii_case("none") {
                Ok(())
            } else {
                Strategy::from_str(value).map(|_| ()).map_err(|e| e.to_string())
            }
        }
        Kind::FloatList => split_list(value).try_for_each(float),
        Kind::IntList => split_list(value).try_for_each(int),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    /// 0 for command-line overrides.
    line: usize,
}

/// Parsed and schema-checked configuration, before defaults are applied.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    origin: String,
    entries: BTreeMap<(String, String), Entry>,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut config = Config {
            origin: origin.to_string(),
            entries: BTreeMap::new(),
        };
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| Error::Config {
                path: origin.to_string(),
                line,
                message,
            };
            let content = raw.split(['#', ';']).next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header `{content}`")))?
                    .trim();
                if !SCHEMA.iter().any(|(s, _, _)| *s == name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let section = section
                .as_deref()
                .ok_or_else(|| err(format!("key `{key}` appears before any [section]")))?;
            config.insert(section, key, value, line).map_err(err)?;
        }
        Ok(config)
    }

    fn insert(&mut self, section: &str, key: &str, value: &str, line: usize) -> std::result::Result<(), String> {
        let kind = kind_of(section, key).ok_or_else(|| format!("unknown key `{key}` in [{section}]"))?;
        if value.is_empty() {
            return Err(format!("key `{key}` has no value"));
        }
        check_value(kind, value).map_err(|m| format!("{section}.{key}: {m}"))?;
        let id = (section.to_string(), key.to_string());
        if line > 0 {
            if let Some(prev) = self.entries.get(&id) {
                if prev.line > 0 {
                    return Err(format!("duplicate key `{key}` (first set on line {})", prev.line));
                }
            }
        }
        self.entries.insert(
            id,
            Entry {
                value: value.to_string(),
                line,
            },
        );
        Ok(())
    }

    /// Overrides `section.key` with `value`, as from the command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, name) = key.split_once('.').ok_or_else(|| Error::Config {
            path: "<command line>".into(),
            line: 0,
            message: format!("override `{key}` must be written section.key"),
        })?;
        self.insert(section, name, value.trim(), 0).map_err(|message| Error::Config {
            path: "<command line>".into(),
            line: 0,
            message,
        })
    }

    pub fn contains(&self, key: &str) -> bool {
        key.split_once('.')
            .is_some_and(|(s, k)| self.entries.contains_key(&(s.to_string(), k.to_string())))
    }

    fn raw(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn fail(&self, entry: &Entry, message: String) -> Error {
        Error::Config {
            path: if entry.line == 0 { "<command line>".into() } else { self.origin.clone() },
            line: entry.line,
            message,
        }
    }

    fn float(&self, section: &str, key: &str) -> Option<f64> {
        self.raw(section, key).map(|e| e.value.parse().expect("checked on insert"))
    }

    fn int(&self, section: &str, key: &str) -> Option<u64> {
        self.raw(section, key).map(|e| e.value.parse().expect("checked on insert"))
    }

    fn usize(&self, section: &str, key: &str) -> Result<Option<usize>> {
        match self.int(section, key) {
            None => Ok(None),
            Some(v) => usize::try_from(v)
                .map(Some)
                .map_err(|_| self.fail(self.raw(section, key).unwrap(), format!("{section}.{key} is too large"))),
        }
    }

    fn bool(&self, section: &str, key: &str) -> Option<bool> {
        self.raw(section, key)
            .map(|e| matches!(e.value.as_str(), "true" | "yes" | "on" | "1"))
    }

    /// `Some(None)` for `none`.
    fn strategy(&self, section: &str, key: &str) -> Option<Option<Strategy>> {
        self.raw(section, key).map(|e| {
            if e.value.eq_ignore_ascii_case("none") {
                None
            } else {
                Some(e.value.parse().expect("checked on insert"))
            }
        })
    }

    fn floats(&self, section: &str, key: &str) -> Option<Vec<f64>> {
        self.raw(section, key)
            .map(|e| split_list(&e.value).map(|s| s.parse().expect("checked on insert")).collect())
    }

    fn ints(&self, section: &str, key: &str) -> Result<Option<Vec<usize>>> {
        let Some(e) = self.raw(section, key) else {
            return Ok(None);
        };
        split_list(&e.value)
            .map(|s| s.parse::<usize>().map_err(|_| self.fail(e, format!("{section}.{key}: `{s}` is too large"))))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Physical parameters; `physics.reynolds` is required.
    pub fn params(&self) -> Result<PhysicalParams> {
        let reynolds = self
            .float("physics", "reynolds")
            .ok_or_else(|| Error::MissingKey("physics.reynolds".into()))?;
        self.params_at(reynolds)
    }

    fn params_at(&self, reynolds: f64) -> Result<PhysicalParams> {
        let mut p = PhysicalParams::reference(reynolds);
        if let Some(v) = self.float("physics", "capillary") {
            p.capillary = v;
        }
        match (self.raw("physics", "theta"), self.raw("physics", "theta_deg")) {
            (Some(_), Some(e)) => {
                return Err(self.fail(e, "set either theta or theta_deg, not both".into()));
            }
            (Some(_), None) => p.theta = self.float("physics", "theta").unwrap(),
            (None, Some(_)) => p.theta = self.float("physics", "theta_deg").unwrap() * PI / 180.0,
            (None, None) => {}
        }
        if let Some(v) = self.float("physics", "length") {
            p.length = v;
        }
        if let Some(v) = self.float("physics", "beta") {
            p.beta = v;
        }
        p.validate()?;
        Ok(p)
    }

    /// The single-run configuration with defaults filled in.
    pub fn run_config(&self) -> Result<RunConfig> {
        let params = self.params()?;
        self.run_config_with(params)
    }

    fn run_config_with(&self, params: PhysicalParams) -> Result<RunConfig> {
        let mut c = RunConfig::new(params);
        if let Some(v) = self.usize("grid", "nodes")? {
            c.n_nodes = v;
        }
        if let Some(v) = self.strategy("control", "strategy") {
            c.strategy = v;
        }
        if let Some(v) = self.usize("control", "actuators")? {
            c.n_actuators = v;
        }
        if let Some(v) = self.usize("control", "observers")? {
            c.n_observers = v;
        }
        if let Some(v) = self.float("control", "omega") {
            c.omega = v;
        }
        c.retain = self.usize("control", "retain")?;
        if let Some(v) = self.float("control", "sof_tolerance") {
            c.sof.tolerance = v;
        }
        if let Some(v) = self.usize("control", "sof_max_iterations")? {
            c.sof.max_iterations = v;
        }
        if let Some(v) = self.float("control", "sof_min_step") {
            c.sof.min_step = v;
        }
        let floats: [(&str, &mut f64); 11] = [
            ("burn_in", &mut c.burn_in_time),
            ("control_time", &mut c.control_time),
            ("epsilon", &mut c.epsilon),
            ("h_min", &mut c.h_min),
            ("h_max", &mut c.h_max),
            ("sample_interval", &mut c.sample_interval),
            ("rtol", &mut c.stepper.rtol),
            ("atol", &mut c.stepper.atol),
            ("dt_init", &mut c.stepper.dt_init),
            ("dt_max", &mut c.stepper.dt_max),
            ("dt_min", &mut c.stepper.dt_min),
        ];
        for (key, slot) in floats {
            if let Some(v) = self.float("run", key) {
                *slot = v;
            }
        }
        if let Some(v) = self.int("run", "seed") {
            c.seed = v;
        }
        if let Some(v) = self.bool("run", "dealias") {
            c.stepper.dealias = v;
        }
        if let Some(v) = self.floats("run", "snapshot_times") {
            c.snapshot_times = v;
        }
        if let Some(v) = self.usize("run", "shift_nodes")? {
            c.shift_nodes = v;
        }
        c.perturbation = self.perturbation()?;
        c.validate()?;
        Ok(c)
    }

    fn perturbation(&self) -> Result<Perturbation> {
        let mut p = Perturbation::default();
        if let Some(v) = self.float("run", "noise") {
            p.noise = v;
        }
        let modes = self.ints("run", "perturbation_modes")?;
        let amps = self.floats("run", "perturbation_amplitudes");
        match (modes, amps) {
            (None, None) => {}
            (Some(modes), None) => {
                p.modes = modes.into_iter().map(|m| (m, 0.1)).collect();
            }
            (Some(modes), Some(amps)) => {
                if modes.len() != amps.len() {
                    let e = self.raw("run", "perturbation_amplitudes").unwrap();
                    return Err(self.fail(
                        e,
                        format!("{} amplitudes for {} perturbation modes", amps.len(), modes.len()),
                    ));
                }
                p.modes = modes.into_iter().zip(amps).collect();
            }
            (None, Some(_)) => {
                let e = self.raw("run", "perturbation_amplitudes").unwrap();
                return Err(self.fail(e, "perturbation_amplitudes needs perturbation_modes".into()));
            }
        }
        Ok(p)
    }

    /// The `[sweep]` section with defaults: 12 log-spaced Reynolds numbers
    /// in `[1, 100]`, `M ∈ {3, 5, 7, 9, 11}`, `P ∈ {1, 3, ..., 13}` and the
    /// run strategy. Runs of the template use `run` settings; `physics.reynolds`
    /// is not needed.
    pub fn sweep_spec(&self) -> Result<crate::sweep::SweepSpec> {
        use crate::sweep::SweepSpec;
        let reynolds = match self.floats("sweep", "reynolds") {
            Some(list) => list,
            None => {
                let lo = self.float("sweep", "reynolds_min").unwrap_or(1.0);
                let hi = self.float("sweep", "reynolds_max").unwrap_or(100.0);
                let n = self.usize("sweep", "reynolds_points")?.unwrap_or(12);
                crate::sweep::log_spaced(lo, hi, n)?
            }
        };
        let template_re = self.float("physics", "reynolds").unwrap_or(reynolds.first().copied().unwrap_or(1.0));
        let template = self.run_config_with(self.params_at(template_re)?)?;
        let strategy = match self.strategy("sweep", "strategy") {
            Some(Some(s)) => s,
            Some(None) => return Err(Error::invalid("sweep.strategy", "a sweep needs a controller")),
            None => template.strategy.unwrap_or(Strategy::Sof),
        };
        let spec = SweepSpec {
            reynolds,
            actuators: self.ints("sweep", "actuators")?.unwrap_or_else(|| vec![3, 5, 7, 9, 11]),
            observers: self.ints("sweep", "observers")?.unwrap_or_else(|| (1..=13).step_by(2).collect()),
            strategy,
            template,
            workers: self.usize("sweep", "workers")?.unwrap_or(0),
            master_seed: self.int("sweep", "master_seed").unwrap_or(0),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = "\
# reference case
[physics]
reynolds = 11.29   ; unstable regime

[control]
strategy = sof
actuators = 5
observers = 5

[run]
snapshot_times = 0, 0.1, 1 10
";

    #[test]
    fn reads_a_small_file() {
        let c = Config::parse(REFERENCE, "reference.conf").unwrap().run_config().unwrap();
        assert_eq!(c.params.reynolds, 11.29);
        assert_eq!(c.strategy, Some(Strategy::Sof));
        assert_eq!(c.snapshot_times, vec![0.0, 0.1, 1.0, 10.0]);
        assert_eq!(c.burn_in_time, 300.0);
    }

    #[test]
    fn missing_reynolds_is_named() {
        let c = Config::parse("[control]\nstrategy = luenberger\n", "x").unwrap();
        let err = c.run_config().unwrap_err();
        assert!(matches!(err, Error::MissingKey(ref k) if k == "physics.reynolds"));
        assert!(err.to_string().contains("reynolds"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("[physics]\nreynolds = abc\n", 2),
            ("[physics]\nreynolds = 1\n[nope]\n", 3),
            ("reynolds = 1\n", 1),
            ("[physics]\n\nspeed = 3\n", 3),
            ("[physics]\nreynolds = 1\nreynolds = 2\n", 3),
            ("[physics]\nreynolds 1\n", 2),
            ("[control]\nstrategy = magic\n", 2),
        ];
        for (text, want) in cases {
            match Config::parse(text, "f.conf") {
                Err(Error::Config { line, path, .. }) => {
                    assert_eq!(line, want, "{text}");
                    assert_eq!(path, "f.conf");
                }
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut c = Config::parse(REFERENCE, "f").unwrap();
        c.set("physics.reynolds", "5").unwrap();
        c.set("control.strategy", "none").unwrap();
        let run = c.run_config().unwrap();
        assert_eq!(run.params.reynolds, 5.0);
        assert_eq!(run.strategy, None);
        assert!(c.set("reynolds", "5").is_err());
        assert!(c.set("physics.reynolds", "-").is_err());
    }

    #[test]
    fn theta_in_degrees() {
        let c = Config::parse("[physics]\nreynolds = 2\ntheta_deg = 90\n", "f").unwrap();
        assert!((c.params().unwrap().theta - PI / 2.0).abs() < 1e-15);
        let both = Config::parse("[physics]\nreynolds = 2\ntheta = 1\ntheta_deg = 90\n", "f").unwrap();
        assert!(matches!(both.params(), Err(Error::Config { line: 4, .. })));
    }

    #[test]
    fn perturbation_lists_must_match() {
        let c = Config::parse(
            "[physics]\nreynolds = 2\n[run]\nperturbation_modes = 1 2\nperturbation_amplitudes = 0.1\n",
            "f",
        )
        .unwrap();
        assert!(matches!(c.run_config(), Err(Error::Config { line: 5, .. })));
    }

    #[test]
    fn sweep_defaults() {
        let c = Config::parse("[sweep]\nstrategy = luenberger\n", "f").unwrap();
        let s = c.sweep_spec().unwrap();
        assert_eq!(s.reynolds.len(), 12);
        assert!((s.reynolds[0] - 1.0).abs() < 1e-12 && (s.reynolds[11] - 100.0).abs() < 1e-9);
        assert_eq!(s.actuators, vec![3, 5, 7, 9, 11]);
        assert_eq!(s.strategy, Strategy::Luenberger);
        let empty = Config::parse("[sweep]\nobservers = ,\n", "f");
        assert!(empty.is_ok());
        assert!(empty.unwrap().sweep_spec().is_err());
    }
}
