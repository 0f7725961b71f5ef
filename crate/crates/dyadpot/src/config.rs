//! Flat sectioned key-value run configuration.
//!
//! ```text
//! [run]
//! kind = goodlambda-sweep
//! seed = 42
//!
//! [params]
//! n = 2
//! alpha = 1.0
//! q = 1.0
//! root_level = 8
//! ```
//!
//! Floats are parsed as plain decimals; lists are comma-separated.  All
//! numeric ranges are validated here, before any computation starts, and
//! referenced measure files must exist at parse time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    PotentialField,
    GoodLambdaSweep,
    GoodTau,
    Norms,
    ExpInt,
    Sharpness,
    Whitney,
    Ainfty,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Option<ExperimentKind> {
        Some(match s {
            "potential-field" => ExperimentKind::PotentialField,
            "goodlambda-sweep" => ExperimentKind::GoodLambdaSweep,
            "goodtau" => ExperimentKind::GoodTau,
            "norms" => ExperimentKind::Norms,
            "expint" => ExperimentKind::ExpInt,
            "sharpness" => ExperimentKind::Sharpness,
            "whitney" => ExperimentKind::Whitney,
            "ainfty-check" => ExperimentKind::Ainfty,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::PotentialField => "potential-field",
            ExperimentKind::GoodLambdaSweep => "goodlambda-sweep",
            ExperimentKind::GoodTau => "goodtau",
            ExperimentKind::Norms => "norms",
            ExperimentKind::ExpInt => "expint",
            ExperimentKind::Sharpness => "sharpness",
            ExperimentKind::Whitney => "whitney",
            ExperimentKind::Ainfty => "ainfty-check",
        }
    }
}

#[derive(Clone, Debug)]
pub enum MeasureSource {
    File(PathBuf),
    Generator { atoms: usize },
    LogSingular,
    Zero,
}

#[derive(Clone, Debug)]
pub enum WeightSpec {
    Constant(f64),
    Power { gamma: f64 },
    HalfSpace,
    SingleCell(Vec<u64>),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub dim: usize,
    pub alpha: f64,
    pub q: f64,
    pub root_level: u32,
    pub level_min: u32,
    pub level_max: u32,
    pub include_tail: bool,
    pub measure: MeasureSource,
    pub weight: WeightSpec,
    pub eps_grid: Vec<f64>,
    pub cprime_grid: Vec<f64>,
    pub p_grid: Vec<f64>,
    pub tau: f64,
    pub c_cap: f64,
    pub c_target: f64,
    pub sharp_epsilon: f64,
    pub ainfty_samples: usize,
    pub whitney_cells: Vec<Vec<u64>>,
}

struct Sections {
    // (section, key) -> (line_number, value)
    map: BTreeMap<(String, String), (usize, String)>,
}

impl Sections {
    fn parse(text: &str) -> Result<Sections> {
        let mut map = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            if let Some(name) = s.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or(Error::Config { line, msg: "unterminated section header".into() })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = s
                .split_once('=')
                .ok_or(Error::Config { line, msg: format!("expected `key = value`, got `{s}`") })?;
            let key = k.trim().to_string();
            if map
                .insert((section.clone(), key.clone()), (line, v.trim().to_string()))
                .is_some()
            {
                return Err(Error::Config { line, msg: format!("duplicate key `{key}`") });
            }
        }
        Ok(Sections { map })
    }

    fn get(&self, section: &str, key: &str) -> Option<&(usize, String)> {
        self.map.get(&(section.to_string(), key.to_string()))
    }

    fn f64(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some((line, v)) => v.parse::<f64>().map_err(|_| Error::Config {
                line: *line,
                msg: format!("`{key}` is not a number: `{v}`"),
            }),
        }
    }

    fn u64(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        match self.get(section, key) {
            None => Ok(default),
            Some((line, v)) => v.parse::<u64>().map_err(|_| Error::Config {
                line: *line,
                msg: format!("`{key}` is not an unsigned integer: `{v}`"),
            }),
        }
    }

    fn f64_list(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some((line, v)) => v
                .split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| Error::Config {
                        line: *line,
                        msg: format!("`{key}` has a non-numeric entry: `{t}`"),
                    })
                })
                .collect(),
        }
    }
}

pub const DEFAULT_EPS_GRID: [f64; 12] = [
    0.5,
    0.25,
    0.125,
    0.0625,
    0.03125,
    0.015625,
    0.0078125,
    0.00390625,
    0.001953125,
    0.0009765625,
    0.00048828125,
    0.000244140625,
];

impl RunConfig {
    pub fn load(path: &Path, kind_override: Option<ExperimentKind>, seed_override: Option<u64>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text, path.parent(), kind_override, seed_override)
    }

    pub fn parse(
        text: &str,
        base_dir: Option<&Path>,
        kind_override: Option<ExperimentKind>,
        seed_override: Option<u64>,
    ) -> Result<RunConfig> {
        let s = Sections::parse(text)?;

        let kind = match kind_override {
            Some(k) => k,
            None => {
                let (line, v) = s
                    .get("run", "kind")
                    .ok_or(Error::Config { line: 0, msg: "missing [run] kind".into() })?;
                ExperimentKind::parse(v).ok_or(Error::Config {
                    line: *line,
                    msg: format!("unknown experiment kind `{v}`"),
                })?
            }
        };
        let seed = seed_override.unwrap_or(s.u64("run", "seed", 1)?);

        let dim = s.u64("params", "n", 2)? as usize;
        if !(1..=3).contains(&dim) {
            return Err(Error::Config { line: 0, msg: format!("n = {dim} not in 1..=3") });
        }
        let alpha = s.f64("params", "alpha", dim as f64 / 2.0)?;
        if !(alpha > 0.0 && alpha < dim as f64) {
            return Err(Error::Config {
                line: 0,
                msg: format!("alpha = {alpha} must lie strictly between 0 and n = {dim}"),
            });
        }
        let q = s.f64("params", "q", 1.0)?;
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::Config { line: 0, msg: format!("q = {q} must be > 0") });
        }
        let root_level = s.u64("params", "root_level", 8)? as u32;
        let level_min = s.u64("params", "level_min", 0)? as u32;
        let level_max = s.u64("params", "level_max", root_level as u64)? as u32;
        if level_min > level_max {
            return Err(Error::Config {
                line: 0,
                msg: format!("level_min {level_min} > level_max {level_max}"),
            });
        }
        let include_tail = matches!(
            s.get("params", "include_tail").map(|(_, v)| v.as_str()),
            Some("true") | Some("1") | Some("yes")
        );

        let measure = match s.get("measure", "source").map(|(l, v)| (*l, v.as_str())) {
            None | Some((_, "generator")) => {
                MeasureSource::Generator { atoms: s.u64("measure", "atoms", 50)? as usize }
            }
            Some((_, "zero")) => MeasureSource::Zero,
            Some((_, "log-singular")) => MeasureSource::LogSingular,
            Some((line, "file")) => {
                let (pl, p) = s
                    .get("measure", "path")
                    .ok_or(Error::Config { line, msg: "measure source `file` needs `path`".into() })?;
                let mut pb = PathBuf::from(p);
                if pb.is_relative() {
                    if let Some(base) = base_dir {
                        pb = base.join(pb);
                    }
                }
                if !pb.exists() {
                    return Err(Error::Config {
                        line: *pl,
                        msg: format!("measure file `{}` does not exist", pb.display()),
                    });
                }
                MeasureSource::File(pb)
            }
            Some((line, other)) => {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown measure source `{other}`"),
                })
            }
        };

        let weight = match s.get("weight", "kind").map(|(l, v)| (*l, v.as_str())) {
            None | Some((_, "constant")) => WeightSpec::Constant(s.f64("weight", "value", 1.0)?),
            Some((_, "power")) => WeightSpec::Power { gamma: s.f64("weight", "gamma", 1.0)? },
            Some((_, "half-space")) => WeightSpec::HalfSpace,
            Some((line, "single-cell")) => {
                let (cl, v) = s.get("weight", "cell").ok_or(Error::Config {
                    line,
                    msg: "weight `single-cell` needs `cell`".into(),
                })?;
                let coords: Vec<u64> = v
                    .split(',')
                    .map(|t| {
                        t.trim().parse::<u64>().map_err(|_| Error::Config {
                            line: *cl,
                            msg: format!("bad cell coordinate `{t}`"),
                        })
                    })
                    .collect::<Result<_>>()?;
                if coords.len() != dim {
                    return Err(Error::Config {
                        line: *cl,
                        msg: format!("cell needs {dim} coordinates"),
                    });
                }
                WeightSpec::SingleCell(coords)
            }
            Some((line, other)) => {
                return Err(Error::Config { line, msg: format!("unknown weight kind `{other}`") })
            }
        };

        let eps_grid = s.f64_list("grids", "eps", &DEFAULT_EPS_GRID)?;
        for &e in &eps_grid {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::Config {
                    line: 0,
                    msg: format!("eps grid entry {e} not in (0,1)"),
                });
            }
        }
        let cprime_grid =
            s.f64_list("grids", "cprime", &[0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0])?;
        let p_grid = s.f64_list("grids", "p", &[0.5, 1.0, 2.0])?;
        for &p in &p_grid {
            if !(p > 0.0) {
                return Err(Error::Config { line: 0, msg: format!("p grid entry {p} must be > 0") });
            }
        }
        let tau = s.f64("grids", "tau", 2.0)?;
        if !(tau > 1.0) {
            return Err(Error::Config { line: 0, msg: format!("tau = {tau} must be > 1") });
        }
        let c_cap = s.f64("grids", "c_cap", 1024.0)?;
        let c_target = s.f64("expint", "c_target", 50.0)?;
        let sharp_epsilon = s.f64("sharpness", "epsilon", 0.5)?;
        if !(sharp_epsilon > 0.0 && sharp_epsilon <= 1.0) {
            return Err(Error::Config {
                line: 0,
                msg: format!("sharpness epsilon = {sharp_epsilon} not in (0,1]"),
            });
        }
        let ainfty_samples = s.u64("ainfty", "samples", 10_000)? as usize;

        let whitney_cells = match s.get("whitney", "cells") {
            None => Vec::new(),
            Some((line, v)) => v
                .split(';')
                .filter(|t| !t.trim().is_empty())
                .map(|tuple| {
                    tuple
                        .split(',')
                        .map(|t| {
                            t.trim().parse::<u64>().map_err(|_| Error::Config {
                                line: *line,
                                msg: format!("bad whitney cell coordinate `{t}`"),
                            })
                        })
                        .collect::<Result<Vec<u64>>>()
                })
                .collect::<Result<_>>()?,
        };

        Ok(RunConfig {
            kind,
            seed,
            dim,
            alpha,
            q,
            root_level,
            level_min,
            level_max,
            include_tail,
            measure,
            weight,
            eps_grid,
            cprime_grid,
            p_grid,
            tau,
            c_cap,
            c_target,
            sharp_epsilon,
            ainfty_samples,
            whitney_cells,
        })
    }
}
