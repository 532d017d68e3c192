//! Experiment configuration: strict JSON, every key known in advance.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fail::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rates,
    Evolve,
    Trajectories,
    Steady,
    Sweep,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Rates => "rates",
            Task::Evolve => "evolve",
            Task::Trajectories => "trajectories",
            Task::Steady => "steady",
            Task::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn times(&self) -> Vec<f64> {
        qratchet::dynamics::linspace(self.start, self.end, self.points)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub count: usize,
}

/// Low-frequency dephasing added as `h_k(t) O_k` for each listed operator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub ops: Vec<String>,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default)]
    pub f_min: Option<f64>,
    #[serde(default)]
    pub f_max: Option<f64>,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub telegraph_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub observable: String,
    /// Fixed asymptote; the offset is fitted when absent.
    #[serde(default)]
    pub fixed_offset: Option<f64>,
    /// Defaults to the end of the repair transient when the model has one.
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub end: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
    /// Task run at each point.
    pub task: Task,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        ToleranceSpec { rtol: default_rtol(), atol: default_atol() }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSpec,
    pub task: Task,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub observables: Vec<String>,
    #[serde(default)]
    pub initial_state: Option<String>,
    #[serde(default)]
    pub trajectories: Option<TrajectorySpec>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub fit: Option<FitSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn one() -> f64 {
    1.0
}
fn default_realizations() -> usize {
    qratchet::trajectories::MIN_NOISE_REALIZATIONS
}
fn default_rtol() -> f64 {
    1e-8
}
fn default_atol() -> f64 {
    1e-10
}

pub fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| match e {
        Failure::Config(m) => Failure::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Parses a config; serde reports the offending key with line and column.
pub fn parse(text: &str) -> Result<ExperimentConfig, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::Config(e.to_string()))
}

impl ExperimentConfig {
    /// Task actually executed at each point (the sweep's inner task for sweeps).
    pub fn point_task(&self) -> Task {
        match (&self.task, &self.sweep) {
            (Task::Sweep, Some(s)) => s.task,
            (t, _) => *t,
        }
    }

    /// Structural checks that need no model.
    pub fn check_shape(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name `{}` must be a non-empty file stem", self.name));
        }
        match (&self.task, &self.sweep) {
            (Task::Sweep, None) => return bad("task `sweep` needs a `sweep` block".into()),
            (Task::Sweep, Some(s)) => {
                if s.values.is_empty() {
                    return bad("sweep.values is empty".into());
                }
                if s.task == Task::Sweep {
                    return bad("sweep.task cannot itself be `sweep`".into());
                }
                if s.values.iter().any(|v| !v.is_finite()) {
                    return bad("sweep.values must be finite".into());
                }
            }
            (_, Some(_)) => return bad("a `sweep` block requires task `sweep`".into()),
            _ => {}
        }
        let task = self.point_task();
        if matches!(task, Task::Evolve | Task::Trajectories) {
            match &self.grid {
                None => return bad(format!("task `{}` needs a `grid`", task.name())),
                Some(g) => {
                    if g.points < 2 || !(g.end > g.start) || !g.start.is_finite() || !g.end.is_finite() {
                        return bad(format!("grid needs end > start and at least 2 points, got {g:?}"));
                    }
                }
            }
        }
        if task == Task::Trajectories {
            match &self.trajectories {
                Some(t) if t.count >= 1 => {}
                _ => return bad("task `trajectories` needs `trajectories.count` >= 1".into()),
            }
        }
        if self.noise.is_some() && task != Task::Evolve {
            return bad("`noise` applies to task `evolve` only".into());
        }
        if let Some(f) = &self.fit {
            if !matches!(task, Task::Evolve | Task::Trajectories) {
                return bad("`fit` needs a time series (task `evolve` or `trajectories`)".into());
            }
            if !self.observables.contains(&f.observable) {
                return bad(format!("fit observable `{}` is not listed in `observables`", f.observable));
            }
        }
        if !(self.tolerances.rtol > 0.0 && self.tolerances.atol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        Ok(())
    }
}
