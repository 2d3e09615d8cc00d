//! Flat `key = value` run configuration. Unknown or repeated keys are
//! errors; `#` starts a comment.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evalharness::{Mode, SweepGrid, DEFAULT_HORIZON};
use crate::inference::TrainConfig;
use crate::longitudinal::NoiseModel;
use crate::policy::CostSpec;
use crate::simdata::{SimSpec, Sparsify};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub horizon: f64,
    pub grid: SweepGrid,
    pub modes: Vec<Mode>,
    /// Costs and rule used by `decide` and `evaluate`.
    pub costs: CostSpec,
    pub mode: Mode,
    pub sim: SimSpec,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            horizon: DEFAULT_HORIZON,
            grid: SweepGrid::default(),
            modes: vec![Mode::Robust, Mode::Point],
            costs: CostSpec { l1: 1.0, l2: 0.2, q: 0.75 },
            mode: Mode::Robust,
            sim: SimSpec::reference(0),
            data_dir: None,
            checkpoint: None,
            output: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "lr",
    "max_global_iters",
    "minibatch",
    "n_mc",
    "local_max_iters",
    "gh_nodes",
    "m_inducing",
    "r_shared",
    "rel_tol",
    "local_gtol",
    "noise_model",
    "horizon",
    "sweep_l1",
    "sweep_l2",
    "sweep_q",
    "modes",
    "l1",
    "l2",
    "q",
    "mode",
    "sim_individuals",
    "sim_signals",
    "sim_right_frac",
    "sim_interval_frac",
    "sim_sparsify",
    "data_dir",
    "checkpoint",
    "output",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("`{key}` expects a number, got `{v}`"))
}

fn parse_list(key: &str, v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        let mut sim_signals = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { path: origin.to_string(), line: n as u64 + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key `{key}`")));
            }
            if !seen.insert(key.to_string()) {
                return Err(err(format!("key `{key}` given twice")));
            }
            let t = &mut cfg.train;
            let r: std::result::Result<(), String> = (|| {
                match key {
                    "seed" => t.seed = parse_num(key, value)?,
                    "lr" => t.lr = parse_num(key, value)?,
                    "max_global_iters" => t.max_global_iters = parse_num(key, value)?,
                    "minibatch" => t.minibatch = parse_num(key, value)?,
                    "n_mc" => t.n_mc = parse_num(key, value)?,
                    "local_max_iters" => t.local_max_iters = parse_num(key, value)?,
                    "gh_nodes" => t.gh_nodes = parse_num(key, value)?,
                    "m_inducing" => t.m_inducing = parse_num(key, value)?,
                    "r_shared" => t.r_shared = parse_num(key, value)?,
                    "rel_tol" => t.rel_tol = parse_num(key, value)?,
                    "local_gtol" => t.local_gtol = parse_num(key, value)?,
                    "noise_model" => {
                        t.noise_model = match value {
                            "student_t" => NoiseModel::StudentT,
                            "gaussian" => NoiseModel::Gaussian,
                            _ => return Err(format!("unknown noise model `{value}`")),
                        }
                    }
                    "horizon" => cfg.horizon = parse_num(key, value)?,
                    "sweep_l1" => cfg.grid.l1 = parse_list(key, value)?,
                    "sweep_l2" => cfg.grid.l2 = parse_list(key, value)?,
                    "sweep_q" => cfg.grid.q = parse_list(key, value)?,
                    "modes" => {
                        cfg.modes = value
                            .split(',')
                            .map(|m| Mode::parse(m.trim()).ok_or_else(|| format!("unknown mode `{m}`")))
                            .collect::<std::result::Result<_, _>>()?
                    }
                    "l1" => cfg.costs.l1 = parse_num(key, value)?,
                    "l2" => cfg.costs.l2 = parse_num(key, value)?,
                    "q" => cfg.costs.q = parse_num(key, value)?,
                    "mode" => cfg.mode = Mode::parse(value).ok_or_else(|| format!("unknown mode `{value}`"))?,
                    "sim_individuals" => cfg.sim.n_individuals = parse_num(key, value)?,
                    "sim_signals" => sim_signals = Some(parse_num::<usize>(key, value)?),
                    "sim_right_frac" => cfg.sim.right_frac = parse_num(key, value)?,
                    "sim_interval_frac" => cfg.sim.interval_frac = parse_num(key, value)?,
                    "sim_sparsify" => {
                        cfg.sim.sparsify = match value {
                            "true" => Some(Sparsify { individuals: 0.5, signal_prob: 0.5, keep: 0.1 }),
                            "false" => None,
                            _ => return Err(format!("`{key}` expects true or false")),
                        }
                    }
                    "data_dir" => cfg.data_dir = Some(PathBuf::from(value)),
                    "checkpoint" => cfg.checkpoint = Some(PathBuf::from(value)),
                    "output" => cfg.output = Some(PathBuf::from(value)),
                    _ => unreachable!("key list and match agree"),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }
        cfg.sim.seed = cfg.train.seed;
        if let Some(d) = sim_signals {
            cfg.sim = cfg.sim.with_signals(d);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Validation(format!("horizon must be positive, got {}", self.horizon)));
        }
        self.grid.costs()?;
        CostSpec::new(self.costs.l1, self.costs.l2, self.costs.q)?;
        if self.modes.is_empty() {
            return Err(Error::Validation("at least one sweep mode is needed".into()));
        }
        self.sim.validate()
    }
}
