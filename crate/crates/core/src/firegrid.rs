//! The fire-detection grid benchmark: scenario files, ground truth, motion,
//! noisy observations, and construction of the initial agent histories.
//!
//! Before planning starts each agent walks a scripted path and observes the
//! cell it stands on at every step without sharing the value. Both paths are
//! common knowledge; only the observed values are private.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{HistorySet, KnownTrace, ObservationRecord, Slot, Time};
use crate::model::{
    Accuracy, Agent, Belief, CellId, CellValue, Grid, ModelSpec, Move, RewardSpec, NUM_AGENTS,
};

/// The 2x2 scenario with the pinned calibrated prior.
pub const BUILTIN_2X2: &str = include_str!("../../../scenarios/2x2.toml");
/// The 4x4 scenario with two sampled unshared observations per agent.
pub const BUILTIN_4X4: &str = include_str!("../../../scenarios/4x4.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDims {
    pub width: usize,
    pub height: usize,
}

/// Pre-planning observations of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnsharedSpec {
    /// 1 or 2.
    pub agent: u8,
    /// Cell observed at times `0..path.len()`.
    pub path: Vec<CellId>,
    /// Fixed values; sampled from the ground truth when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<CellValue>>,
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridDims,
    pub accuracy: f64,
    pub prior: Vec<f64>,
    pub fires: Vec<CellId>,
    pub starts: [CellId; NUM_AGENTS],
    pub horizon: usize,
    pub replan_stride: usize,
    pub sessions: usize,
    #[serde(default)]
    pub unshared: Vec<UnsharedSpec>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Scenario(msg) => Error::Scenario(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }
}

/// True cell values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cells: Vec<CellValue>,
}

impl GroundTruth {
    pub fn from_fires(num_cells: usize, fires: &[CellId]) -> Result<Self> {
        let mut cells = vec![CellValue::Empty; num_cells];
        for &f in fires {
            *cells
                .get_mut(f)
                .ok_or(Error::InvalidCell { cell: f, num_cells })? = CellValue::Fire;
        }
        Ok(GroundTruth { cells })
    }

    pub fn value(&self, cell: CellId) -> CellValue {
        self.cells[cell]
    }
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScenario {
    pub file: ScenarioFile,
    pub model: ModelSpec,
    /// Prior with the agents placed at their starts.
    pub prior: Belief,
    pub truth: GroundTruth,
    pub paths: [Vec<CellId>; NUM_AGENTS],
    pub values: [Option<Vec<CellValue>>; NUM_AGENTS],
}

impl GridScenario {
    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let grid = Grid::new(file.grid.width, file.grid.height)?;
        let accuracy = Accuracy::new(file.accuracy).map_err(|_| {
            Error::Scenario(format!("accuracy {} must lie in (0.5, 1]", file.accuracy))
        })?;
        let model = ModelSpec::new(grid, accuracy, RewardSpec::NegEntropy)?;
        if file.prior.len() != grid.num_cells() {
            return Err(Error::Scenario(format!(
                "prior has {} entries, grid has {} cells",
                file.prior.len(),
                grid.num_cells()
            )));
        }
        for &s in &file.starts {
            grid.check_cell(s)?;
        }
        let prior = Belief::new(file.prior.clone(), file.starts)?;
        let truth = GroundTruth::from_fires(grid.num_cells(), &file.fires)?;
        if file.horizon == 0 {
            return Err(Error::ZeroHorizon);
        }
        if file.replan_stride == 0 || file.replan_stride > file.horizon {
            return Err(Error::TruncationOutOfRange {
                m: file.replan_stride,
                horizon: file.horizon,
            });
        }
        if file.sessions == 0 {
            return Err(Error::Scenario("at least one session is required".into()));
        }

        let mut paths: [Vec<CellId>; NUM_AGENTS] = Default::default();
        let mut values: [Option<Vec<CellValue>>; NUM_AGENTS] = Default::default();
        let mut seen = [false; NUM_AGENTS];
        for spec in &file.unshared {
            let i = match spec.agent {
                1 | 2 => usize::from(spec.agent - 1),
                other => {
                    return Err(Error::Scenario(format!(
                        "unshared agent must be 1 or 2, got {other}"
                    )))
                }
            };
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Scenario(format!(
                    "agent {} has two unshared entries",
                    spec.agent
                )));
            }
            for &c in &spec.path {
                grid.check_cell(c)?;
            }
            let walk: Vec<CellId> = spec.path.iter().copied().chain([file.starts[i]]).collect();
            if let Some(w) = walk
                .windows(2)
                .find(|w| w[0] != w[1] && !grid.are_adjacent(w[0], w[1]))
            {
                return Err(Error::Scenario(format!(
                    "agent {} path steps from cell {} to non-adjacent cell {}",
                    spec.agent, w[0], w[1]
                )));
            }
            if let Some(v) = &spec.values {
                if v.len() != spec.path.len() {
                    return Err(Error::Scenario(format!(
                        "agent {} has {} values for {} path cells",
                        spec.agent,
                        v.len(),
                        spec.path.len()
                    )));
                }
            }
            paths[i] = spec.path.clone();
            values[i] = spec.values.clone();
        }
        if paths[0].len() != paths[1].len() {
            return Err(Error::Scenario(
                "both agents' unshared paths must have the same length".into(),
            ));
        }
        Ok(GridScenario {
            file,
            model,
            prior,
            truth,
            paths,
            values,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_file(ScenarioFile::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(ScenarioFile::load(path)?)
    }

    pub fn builtin_2x2() -> Self {
        Self::parse(BUILTIN_2X2).expect("built-in 2x2 scenario is valid")
    }

    pub fn builtin_4x4() -> Self {
        Self::parse(BUILTIN_4X4).expect("built-in 4x4 scenario is valid")
    }

    pub fn grid(&self) -> &Grid {
        &self.model.grid
    }

    pub fn horizon(&self) -> usize {
        self.file.horizon
    }

    pub fn replan_stride(&self) -> usize {
        self.file.replan_stride
    }

    pub fn sessions(&self) -> usize {
        self.file.sessions
    }

    /// Number of pre-planning steps.
    pub fn lead_in(&self) -> usize {
        self.paths[0].len()
    }

    pub fn with_prior(&self, prior: Vec<f64>) -> Result<Self> {
        let mut file = self.file.clone();
        file.prior = prior;
        Self::from_file(file)
    }

    /// True when every unshared value is fixed by the file.
    pub fn values_fixed(&self) -> bool {
        self.values
            .iter()
            .zip(&self.paths)
            .all(|(v, p)| v.is_some() || p.is_empty())
    }

    /// Histories for fixed unshared values, without touching a generator.
    pub fn histories_with(
        &self,
        values: &[Vec<CellValue>; NUM_AGENTS],
    ) -> Result<[HistorySet; NUM_AGENTS]> {
        let lead = self.lead_in();
        let mut positions: Vec<[CellId; NUM_AGENTS]> = (0..lead)
            .map(|t| [self.paths[0][t], self.paths[1][t]])
            .collect();
        positions.push(self.file.starts);
        let trace = KnownTrace::new(positions)?;
        let mut out = [
            HistorySet::new(Agent::One, trace.clone()),
            HistorySet::new(Agent::Two, trace),
        ];
        for agent in Agent::BOTH {
            let i = agent.index();
            if values[i].len() != self.paths[i].len() {
                return Err(Error::Scenario(format!(
                    "agent {agent} needs {} unshared values",
                    self.paths[i].len()
                )));
            }
            for (t, (&cell, &value)) in self.paths[i].iter().zip(&values[i]).enumerate() {
                let time = t as Time;
                out[i].push_own(ObservationRecord {
                    time,
                    agent,
                    cell,
                    value,
                });
                out[agent.other().index()].push_other_slot(Slot { time, agent, cell });
            }
        }
        for h in &out {
            h.validate()?;
        }
        Ok(out)
    }
}

/// Position after an individual move, `None` when it leaves the grid.
pub fn apply_motion(grid: &Grid, position: CellId, mv: Move) -> Option<CellId> {
    grid.step(position, mv)
}

/// The true value with probability `accuracy`, flipped otherwise.
pub fn sample_observation<R: Rng + ?Sized>(
    truth: &GroundTruth,
    cell: CellId,
    accuracy: Accuracy,
    rng: &mut R,
) -> CellValue {
    let v = truth.value(cell);
    if rng.random_bool(accuracy.get()) {
        v
    } else {
        v.flipped()
    }
}

/// Initial histories and ground truth. Unshared values not fixed by the file
/// are sampled, agent one's path first.
pub fn build_scenario<R: Rng + ?Sized>(
    scenario: &GridScenario,
    rng: &mut R,
) -> Result<([HistorySet; NUM_AGENTS], GroundTruth)> {
    let mut values: [Vec<CellValue>; NUM_AGENTS] = Default::default();
    for agent in Agent::BOTH {
        let i = agent.index();
        values[i] = match &scenario.values[i] {
            Some(v) => v.clone(),
            None => scenario.paths[i]
                .iter()
                .map(|&c| {
                    sample_observation(&scenario.truth, c, scenario.model.accuracy_of(agent), rng)
                })
                .collect(),
        };
    }
    Ok((scenario.histories_with(&values)?, scenario.truth.clone()))
}
