//! Run configuration: a `[section]` / `key = value` file plus `--set`
//! overrides, resolved into typed settings for every subcommand.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adascale::adaptation::{Constraints, Objective, TriggerPolicy};
use adascale::data::BarsConfig;
use adascale::elastic::ArchSpec;
use adascale::monitor::{LoadForecaster, LoadWeights, TracePattern};
use adascale::profiler::{DeviceProfile, LatencyCalibration};
use adascale::train::{TrainConfig, UpdateMode};

use crate::CliError;

/// Where a setting came from, for diagnostics.
#[derive(Clone, Debug)]
enum Origin {
    Line(PathBuf, usize),
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(p, n) => write!(f, "{} line {n}", p.display()),
            Origin::Flag => f.write_str("--set"),
        }
    }
}

/// Raw settings keyed by `(section, key)`; tracks which ones were read so
/// typos surface as errors instead of being ignored.
pub struct Settings {
    values: BTreeMap<(String, String), (String, Origin)>,
    used: RefCell<BTreeSet<(String, String)>>,
}

impl Settings {
    pub fn empty() -> Self {
        Self {
            values: BTreeMap::new(),
            used: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let sections = adascale::kv::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut s = Self::empty();
        for sec in sections {
            for e in sec.entries {
                if sec.name.is_empty() {
                    return Err(CliError::Config(format!(
                        "{} line {}: `{}` must sit under a [section] header",
                        path.display(),
                        e.line,
                        e.key
                    )));
                }
                s.values
                    .insert((sec.name.clone(), e.key), (e.value, Origin::Line(path.to_path_buf(), e.line)));
            }
        }
        Ok(s)
    }

    /// Apply `section.key=value`.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let bad = || CliError::Config(format!("--set expects section.key=value, got `{assignment}`"));
        let (path, value) = assignment.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        if section.is_empty() || key.is_empty() {
            return Err(bad());
        }
        self.values
            .insert((section.to_string(), key.to_string()), (value.trim().to_string(), Origin::Flag));
        Ok(())
    }

    fn raw(&self, section: &str, key: &str) -> Option<&(String, Origin)> {
        let k = (section.to_string(), key.to_string());
        let v = self.values.get(&k);
        if v.is_some() {
            self.used.borrow_mut().insert(k);
        }
        v
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, origin)) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("{origin}: cannot parse {section}.{key} = {v}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>, CliError> {
        let Some((v, origin)) = self.raw(section, key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Config(format!("{origin}: cannot parse {section}.{key} item `{s}`")))
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    pub fn flag(&self, section: &str, key: &str, default: bool) -> Result<bool, CliError> {
        match self.raw(section, key) {
            None => Ok(default),
            Some((v, origin)) => match v.as_str() {
                "yes" | "true" | "1" | "on" => Ok(true),
                "no" | "false" | "0" | "off" => Ok(false),
                _ => Err(CliError::Config(format!("{origin}: {section}.{key} expects yes/no, got {v}"))),
            },
        }
    }

    fn origin(&self, section: &str, key: &str) -> String {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(|(_, o)| o.to_string())
            .unwrap_or_else(|| "default".into())
    }

    pub fn check_all_used(&self) -> Result<(), CliError> {
        let used = self.used.borrow();
        match self.values.iter().find(|(k, _)| !used.contains(*k)) {
            None => Ok(()),
            Some(((s, k), (_, origin))) => Err(CliError::Config(format!("{origin}: unknown setting {s}.{k}"))),
        }
    }
}

/// Latency budget: an absolute value in seconds, or a multiple of the
/// fastest deepest-exit variant that meets the accuracy floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatencyBudget {
    Seconds(f64),
    Auto { factor: f64 },
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub pattern: TracePattern,
    pub duration_ms: u64,
    pub trace_seed: u64,
    pub serve: bool,
    pub confidence: f32,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub arch: ArchSpec,
    pub device: DeviceProfile,
    pub trace: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub data: BarsConfig,
    pub train: TrainConfig,
    pub budget: usize,
    pub calibration: LatencyCalibration,
    pub latency_budget: LatencyBudget,
    pub energy_budget: f64,
    pub acc_floor: f64,
    pub objective: Objective,
    pub policy: TriggerPolicy,
    pub weights: LoadWeights,
    pub forecaster: LoadForecaster,
    pub sim: SimConfig,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn core_err(origin: String, e: adascale::Error) -> CliError {
    CliError::Config(format!("{origin}: {e}"))
}

impl RunConfig {
    /// `base` resolves relative paths (the config file's directory).
    pub fn resolve(s: &Settings, base: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, CliError> {
        let seed = seed.unwrap_or(s.get_or("run", "seed", 0u64)?);

        let arch = match s.get::<String>("paths", "arch")?.as_deref() {
            None | Some("toy") => ArchSpec::toy(),
            Some(p) => {
                let path = resolve(base, p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("cannot read arch spec {}: {e}", path.display())))?;
                ArchSpec::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
        };
        let device = match s.get::<String>("paths", "device")?.as_deref() {
            None | Some("default") => DeviceProfile::default(),
            Some(p) => {
                let path = resolve(base, p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("cannot read device profile {}: {e}", path.display())))?;
                DeviceProfile::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
        };
        let trace = s.get::<String>("paths", "trace")?.map(|p| resolve(base, &p));
        if let Some(t) = &trace {
            if !t.is_file() {
                return Err(CliError::Config(format!("trace file {} does not exist", t.display())));
            }
        }
        let configured = resolve(base, &s.get_or("paths", "out", "out".to_string())?);
        let out = out.unwrap_or(configured);

        let d = BarsConfig::default();
        let data = BarsConfig {
            train: s.get_or("data", "train", d.train)?,
            eval: s.get_or("data", "eval", d.eval)?,
            noise: s.get_or("data", "noise", d.noise)?,
        };

        let t = TrainConfig::default();
        let mode: UpdateMode = match s.get::<String>("train", "mode")? {
            None => t.mode,
            Some(m) => m.parse().map_err(|e| core_err(s.origin("train", "mode"), e))?,
        };
        let clip: f32 = s.get_or("train", "clip_norm", t.clip_norm.unwrap_or(0.0))?;
        let train = TrainConfig {
            mode,
            acc_thresholds: s.list("train", "thresholds")?.unwrap_or(t.acc_thresholds),
            max_epochs_per_stage: s.get_or("train", "max_epochs", t.max_epochs_per_stage)?,
            lr: s.get_or("train", "lr", t.lr)?,
            milestones: s.list("train", "milestones")?.unwrap_or(t.milestones),
            lr_gamma: s.get_or("train", "lr_gamma", t.lr_gamma)?,
            momentum: s.get_or("train", "momentum", t.momentum)?,
            weight_decay: s.get_or("train", "weight_decay", t.weight_decay)?,
            batch_size: s.get_or("train", "batch_size", t.batch_size)?,
            seed,
            distill_epochs: s.get_or("train", "distill_epochs", t.distill_epochs)?,
            distill_lr: s.get_or("train", "distill_lr", t.distill_lr)?,
            eval_samples: s.get_or("train", "eval_samples", t.eval_samples)?,
            clip_norm: (clip > 0.0).then_some(clip),
        };
        train
            .validate(arch.segments.len())
            .map_err(|e| core_err(s.origin("train", "thresholds"), e))?;

        let budget = s.get_or("index", "budget", 480usize)?;
        let calibration = LatencyCalibration::new(s.get_or("index", "calib_a", 1.0)?, s.get_or("index", "calib_b", 1.0)?);

        let latency_budget = match s.get::<String>("constraints", "t")?.as_deref() {
            None | Some("auto") => LatencyBudget::Auto {
                factor: s.get_or("constraints", "t_factor", 1.5)?,
            },
            Some(v) => LatencyBudget::Seconds(v.parse().map_err(|_| {
                CliError::Config(format!("{}: constraints.t expects seconds or `auto`, got {v}", s.origin("constraints", "t")))
            })?),
        };
        let energy_budget = s.get_or("constraints", "e_b", f64::INFINITY)?;
        let acc_floor = s.get_or("constraints", "acc_u", 0.85)?;
        if let LatencyBudget::Auto { factor } = latency_budget {
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(CliError::Config(format!(
                    "{}: constraints.t_factor must be positive, got {factor}",
                    s.origin("constraints", "t_factor")
                )));
            }
        }
        Constraints {
            t: match latency_budget {
                LatencyBudget::Seconds(v) => v,
                LatencyBudget::Auto { .. } => f64::INFINITY,
            },
            e_b: energy_budget,
            acc_u: acc_floor,
        }
        .validate()
        .map_err(|e| core_err(s.origin("constraints", "t"), e))?;

        let o = Objective::default();
        let objective = Objective::new(s.get_or("objective", "alpha", o.alpha)?, s.get_or("objective", "beta", o.beta)?)
            .map_err(|e| core_err(s.origin("objective", "alpha"), e))?;

        let p = TriggerPolicy::default();
        let policy = TriggerPolicy {
            lo: s.get_or("policy", "lo", p.lo)?,
            hi: s.get_or("policy", "hi", p.hi)?,
            cooldown_ms: s.get_or("policy", "cooldown_ms", p.cooldown_ms)?,
            horizon: s.get_or("policy", "horizon", p.horizon)?,
        };
        policy.validate().map_err(|e| core_err(s.origin("policy", "lo"), e))?;

        let w = LoadWeights::default().without_gpu();
        let weights = LoadWeights::new(
            s.get_or("monitor", "w_cpu", w.w_cpu)?,
            s.get_or("monitor", "w_gpu", w.w_gpu)?,
            s.get_or("monitor", "w_mem", w.w_mem)?,
        )
        .map_err(|e| core_err(s.origin("monitor", "w_cpu"), e))?;
        let fd = LoadForecaster::default();
        let forecaster = LoadForecaster::new(
            s.get_or("monitor", "ar_order", fd.order)?,
            s.get_or("monitor", "ar_window", fd.window)?,
            s.get_or("monitor", "ar_refit_every", fd.refit_every)?,
        );

        let pattern = match s.get::<String>("simulate", "pattern")? {
            None => "square_wave".parse().expect("known pattern"),
            Some(name) => name.parse().map_err(|e| core_err(s.origin("simulate", "pattern"), e))?,
        };
        // every pattern key is read so that one config can switch patterns
        let (lo, hi, period_ms) = (
            s.get::<f64>("simulate", "lo")?,
            s.get::<f64>("simulate", "hi")?,
            s.get::<u64>("simulate", "period_ms")?,
        );
        let level = s.get::<f64>("simulate", "level")?;
        let (start, step) = (s.get::<f64>("simulate", "start")?, s.get::<f64>("simulate", "step")?);
        let pattern = match pattern {
            TracePattern::Steady { level: l } => TracePattern::Steady {
                level: level.unwrap_or(l),
            },
            TracePattern::SquareWave {
                lo: l,
                hi: h,
                period_ms: p,
            } => TracePattern::SquareWave {
                lo: lo.unwrap_or(l),
                hi: hi.unwrap_or(h),
                period_ms: period_ms.unwrap_or(p),
            },
            TracePattern::RandomWalk { start: a, step: b } => TracePattern::RandomWalk {
                start: start.unwrap_or(a),
                step: step.unwrap_or(b),
            },
            TracePattern::UserSession => TracePattern::UserSession,
        };
        let sim = SimConfig {
            pattern,
            duration_ms: s.get_or("simulate", "duration_ms", 60_000u64)?,
            trace_seed: s.get_or("simulate", "trace_seed", seed)?,
            serve: s.flag("simulate", "serve", true)?,
            confidence: s.get_or("simulate", "confidence", 0.85f32)?,
        };

        s.check_all_used()?;
        Ok(Self {
            arch,
            device,
            trace,
            out,
            seed,
            data,
            train,
            budget,
            calibration,
            latency_budget,
            energy_budget,
            acc_floor,
            objective,
            policy,
            weights,
            forecaster,
            sim,
        })
    }
}
