//! Plain-text run configuration: `key = value` lines under `[data]`,
//! `[model]`, `[train]` and `[eval]`. `#` starts a comment. Unknown keys and
//! sections are rejected with their line number; omitted keys take defaults,
//! and [`RunConfig::echo`] writes every effective value back out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{KsSpec, Toy1Spec, Toy2dSpec, Turb2dSpec, gen_toy1, gen_toy2d, ks_simulate, turb2d_simulate};
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::model::Architecture;
use crate::train::{BatchMode, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DataConfig {
    Toy1(Toy1Spec),
    Ks(KsSpec),
    Toy2d(Toy2dSpec),
    Turb2d(Turb2dSpec),
}

impl DataConfig {
    pub fn benchmark(&self) -> &'static str {
        match self {
            DataConfig::Toy1(_) => "toy1",
            DataConfig::Ks(_) => "ks",
            DataConfig::Toy2d(_) => "toy2d",
            DataConfig::Turb2d(_) => "turb2d",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            DataConfig::Toy1(s) => s.seed,
            DataConfig::Ks(s) => s.seed,
            DataConfig::Toy2d(s) => s.seed,
            DataConfig::Turb2d(s) => s.seed,
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        match self {
            DataConfig::Toy1(s) => gen_toy1(s),
            DataConfig::Ks(s) => ks_simulate(s),
            DataConfig::Toy2d(s) => gen_toy2d(s),
            DataConfig::Turb2d(s) => turb2d_simulate(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Largest acceptable normalized off-diagonal latent correlation.
    pub decorrelation_threshold: f64,
    pub gradcheck_tolerance: f64,
    /// Dataset sample used by `gradcheck`.
    pub gradcheck_sample: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            decorrelation_threshold: 0.3,
            gradcheck_tolerance: 1e-5,
            gradcheck_sample: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub data_path: PathBuf,
    /// Number of retained mode classes.
    pub latent_dim: usize,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub run_dir: PathBuf,
    pub eval: EvalConfig,
}

struct Entry {
    value: String,
    line: usize,
}

/// The entries of one section; keys are removed as they are consumed.
struct Section {
    name: &'static str,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(e) => e.value.parse().map_err(|err| Error::Config {
                line: e.line,
                message: format!("[{}] {key} = {:?}: {err}", self.name, e.value),
            }),
        }
    }

    fn take_with<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(e) => parse(&e.value).ok_or_else(|| Error::Config {
                line: e.line,
                message: format!("[{}] {key} = {:?} is not a valid value", self.name, e.value),
            }),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((key, e)) => Err(Error::Config {
                line: e.line,
                message: format!("unknown key '{key}' in [{}]", self.name),
            }),
        }
    }
}

const SECTIONS: [&str; 4] = ["data", "model", "train", "eval"];

fn split_sections(text: &str) -> Result<[Section; 4]> {
    let mut sections = SECTIONS.map(|name| Section {
        name,
        entries: BTreeMap::new(),
    });
    let mut current: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let idx = SECTIONS.iter().position(|s| *s == name.trim()).ok_or_else(|| Error::Config {
                line,
                message: format!("unknown section [{}]", name.trim()),
            })?;
            current = Some(idx);
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected 'key = value', found {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Config {
                line,
                message: format!("malformed key {key:?}"),
            });
        }
        let idx = current.ok_or_else(|| Error::Config {
            line,
            message: format!("key '{key}' appears before any section header"),
        })?;
        let section = &mut sections[idx];
        if let Some(prev) = section.entries.get(key) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key '{key}' (first set on line {})", prev.line),
            });
        }
        section.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(sections)
}

fn parse_batch(s: &str) -> Option<BatchMode> {
    if s == "full" {
        Some(BatchMode::Full)
    } else {
        s.parse().ok().filter(|&n| n > 0).map(BatchMode::MiniBatch)
    }
}

fn parse_data(sec: &mut Section) -> Result<DataConfig> {
    let benchmark_line = sec.entries.get("benchmark").map(|e| e.line).unwrap_or(0);
    let benchmark: String = sec.take("benchmark", "toy1".to_string())?;
    Ok(match benchmark.as_str() {
        "toy1" => {
            let d = Toy1Spec::default();
            DataConfig::Toy1(Toy1Spec {
                samples: sec.take("samples", d.samples)?,
                n: sec.take("n", d.n)?,
                seed: sec.take("seed", d.seed)?,
            })
        }
        "ks" => {
            let d = KsSpec::default();
            DataConfig::Ks(KsSpec {
                n: sec.take("n", d.n)?,
                length: sec.take("length", d.length)?,
                nu: sec.take("nu", d.nu)?,
                duration: sec.take("duration", d.duration)?,
                snapshots: sec.take("snapshots", d.snapshots)?,
                transient: sec.take("transient", d.transient)?,
                dt: sec.take("dt", d.dt)?,
                initial_amplitude: sec.take("initial_amplitude", d.initial_amplitude)?,
                seed: sec.take("seed", d.seed)?,
            })
        }
        "toy2d" => {
            let d = Toy2dSpec::default();
            DataConfig::Toy2d(Toy2dSpec {
                samples: sec.take("samples", d.samples)?,
                height: sec.take("height", d.height)?,
                width: sec.take("width", d.width)?,
                scale: sec.take("scale", d.scale)?,
                seed: sec.take("seed", d.seed)?,
            })
        }
        "turb2d" => {
            let d = Turb2dSpec::default();
            let n = sec.take("n", d.n)?;
            DataConfig::Turb2d(Turb2dSpec {
                n,
                reynolds: sec.take("reynolds", d.reynolds)?,
                // The peak wavenumber follows the resolution unless set.
                k0: sec.take("k0", 10.0 * n as f64 / 128.0)?,
                energy: sec.take("energy", d.energy)?,
                t_end: sec.take("t_end", d.t_end)?,
                dt: sec.take("dt", d.dt)?,
                realizations: sec.take("realizations", d.realizations)?,
                cfl_limit: sec.take("cfl_limit", d.cfl_limit)?,
                seed: sec.take("seed", d.seed)?,
            })
        }
        other => {
            return Err(Error::Config {
                line: benchmark_line,
                message: format!("unknown benchmark '{other}' (expected toy1, ks, toy2d or turb2d)"),
            });
        }
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let [mut data, mut model, mut train, mut eval] = split_sections(text)?;

        let data_cfg = parse_data(&mut data)?;
        let bench = data_cfg.benchmark();
        let data_path = data.take("path", PathBuf::from(format!("data/{bench}.bin")))?;
        data.finish()?;

        let a = Architecture::default();
        let latent_dim = model.take("latent_dim", 2usize)?;
        let arch = Architecture {
            depth: model.take("depth", a.depth)?,
            family: model.take("activation", a.family)?,
            segments: model.take("segments", a.segments)?,
            center: model.take("center", a.center)?,
            half_width: model.take("half_width", a.half_width)?,
            epsilon: model.take("epsilon", a.epsilon)?,
            units: model.take("units", a.units)?,
            alpha: model.take("alpha", a.alpha)?,
            lipschitz_cap: model.take("lipschitz_cap", a.lipschitz_cap)?,
            seed: model.take("seed", a.seed)?,
        };
        model.finish()?;

        let t = TrainConfig::default();
        let train_cfg = TrainConfig {
            epochs: train.take("epochs", t.epochs)?,
            batch: train.take_with("batch", t.batch, parse_batch)?,
            lr0: train.take("lr", t.lr0)?,
            decay_factor: train.take("decay_factor", t.decay_factor)?,
            decay_every: train.take("decay_every", t.decay_every)?,
            seed: train.take("seed", t.seed)?,
            reduction: train.take("reduction", t.reduction)?,
            checkpoint_every: train.take("checkpoint_every", t.checkpoint_every)?,
            clip_norm: train.take("clip_norm", t.clip_norm)?,
        };
        let run_dir = train.take("run_dir", PathBuf::from(format!("runs/{bench}")))?;
        train.finish()?;

        let e = EvalConfig::default();
        let eval_cfg = EvalConfig {
            decorrelation_threshold: eval.take("decorrelation_threshold", e.decorrelation_threshold)?,
            gradcheck_tolerance: eval.take("gradcheck_tolerance", e.gradcheck_tolerance)?,
            gradcheck_sample: eval.take("gradcheck_sample", e.gradcheck_sample)?,
        };
        eval.finish()?;

        let cfg = RunConfig {
            data: data_cfg,
            data_path,
            latent_dim,
            arch,
            train: train_cfg,
            run_dir,
            eval: eval_cfg,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1".into());
        }
        if self.arch.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        self.train.validate()
    }

    /// Every effective setting, in a form [`RunConfig::parse`] accepts.
    pub fn echo(&self) -> String {
        let mut out = String::from("[data]\n");
        let mut kv = |k: &str, v: String| {
            writeln!(out, "{k} = {v}").expect("string write");
        };
        kv("benchmark", self.data.benchmark().into());
        match &self.data {
            DataConfig::Toy1(s) => {
                kv("samples", s.samples.to_string());
                kv("n", s.n.to_string());
                kv("seed", s.seed.to_string());
            }
            DataConfig::Ks(s) => {
                kv("n", s.n.to_string());
                kv("length", s.length.to_string());
                kv("nu", s.nu.to_string());
                kv("duration", s.duration.to_string());
                kv("snapshots", s.snapshots.to_string());
                kv("transient", s.transient.to_string());
                kv("dt", s.dt.to_string());
                kv("initial_amplitude", s.initial_amplitude.to_string());
                kv("seed", s.seed.to_string());
            }
            DataConfig::Toy2d(s) => {
                kv("samples", s.samples.to_string());
                kv("height", s.height.to_string());
                kv("width", s.width.to_string());
                kv("scale", s.scale.to_string());
                kv("seed", s.seed.to_string());
            }
            DataConfig::Turb2d(s) => {
                kv("n", s.n.to_string());
                kv("reynolds", s.reynolds.to_string());
                kv("k0", s.k0.to_string());
                kv("energy", s.energy.to_string());
                kv("t_end", s.t_end.to_string());
                kv("dt", s.dt.to_string());
                kv("realizations", s.realizations.to_string());
                kv("cfl_limit", s.cfl_limit.to_string());
                kv("seed", s.seed.to_string());
            }
        }
        kv("path", self.data_path.display().to_string());

        let a = &self.arch;
        let t = &self.train;
        let e = &self.eval;
        let rest = [
            ("model", "latent_dim", self.latent_dim.to_string()),
            ("model", "depth", a.depth.to_string()),
            ("model", "activation", a.family.to_string()),
            ("model", "segments", a.segments.to_string()),
            ("model", "center", a.center.to_string()),
            ("model", "half_width", a.half_width.to_string()),
            ("model", "epsilon", a.epsilon.to_string()),
            ("model", "units", a.units.to_string()),
            ("model", "alpha", a.alpha.to_string()),
            ("model", "lipschitz_cap", a.lipschitz_cap.to_string()),
            ("model", "seed", a.seed.to_string()),
            ("train", "epochs", t.epochs.to_string()),
            (
                "train",
                "batch",
                match t.batch {
                    BatchMode::Full => "full".into(),
                    BatchMode::MiniBatch(n) => n.to_string(),
                },
            ),
            ("train", "lr", t.lr0.to_string()),
            ("train", "decay_factor", t.decay_factor.to_string()),
            ("train", "decay_every", t.decay_every.to_string()),
            ("train", "seed", t.seed.to_string()),
            ("train", "reduction", t.reduction.to_string()),
            ("train", "checkpoint_every", t.checkpoint_every.to_string()),
            ("train", "clip_norm", t.clip_norm.to_string()),
            ("train", "run_dir", self.run_dir.display().to_string()),
            ("eval", "decorrelation_threshold", e.decorrelation_threshold.to_string()),
            ("eval", "gradcheck_tolerance", e.gradcheck_tolerance.to_string()),
            ("eval", "gradcheck_sample", e.gradcheck_sample.to_string()),
        ];
        let mut section = "data";
        for (s, k, v) in rest {
            if s != section {
                writeln!(out, "\n[{s}]").expect("string write");
                section = s;
            }
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// The shipped presets, by benchmark name.
pub const PRESETS: [(&str, &str); 4] = [
    ("toy1", include_str!("../../../presets/toy1.cfg")),
    ("ks", include_str!("../../../presets/ks.cfg")),
    ("toy2d", include_str!("../../../presets/toy2d.cfg")),
    ("turb2d", include_str!("../../../presets/turb2d.cfg")),
];

pub fn preset(name: &str) -> Result<RunConfig> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::InvalidParameter(format!("no preset named '{name}'")))
        .and_then(|(_, text)| RunConfig::parse(text))
}
