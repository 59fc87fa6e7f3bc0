//! Lattice search for a prior reproducing a target optimal-action law.
//!
//! Cells of the top row share one prior value and all other cells share
//! another, strictly larger one. Each pair on the lattice `0.05, 0.10, ..,
//! 0.95` is scored by the largest absolute difference between agent one's
//! optimal-action masses and the target. When the target names at least two
//! actions a pair must also be *feasible*:
//!
//! * ε-MLOAS selects the target's leading action for both agents,
//! * the argmax on the true full history is that action,
//! * the argmax on agent one's own history is the runner-up,
//! * the normalized gap lies in `[δ_comm, δ_quiet)`, so the smaller δ
//!   communicates and the larger does not.
//!
//! Infeasible pairs are reported but never chosen while a feasible one exists.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::decpomdp_ol_plan;
use crate::engine::{
    mloas_select, optimal_action_distribution, performance_gap_distribution,
    rprime_selection_distribution, ActionDistribution, GapDistribution, PlanningContext, Threshold,
};
use crate::error::{Error, Result};
use crate::firegrid::GridScenario;
use crate::history::merge_histories;
use crate::model::CellValue;
use crate::planner::JointActionSeq;

pub const LATTICE_STEP: f64 = 0.05;

/// Lattice values `0.05..=0.95`, computed from integers to avoid drift.
pub fn lattice() -> Vec<f64> {
    (1..=19)
        .map(|i| f64::from(i) * LATTICE_STEP)
        .map(|v| (v * 100.0).round() / 100.0)
        .collect()
}

/// Target optimal-action masses, e.g. `D+D=0.875,R+R=0.125`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    /// Descending by mass, ties by action.
    pub masses: Vec<(JointActionSeq, f64)>,
}

impl CalibrationTarget {
    pub fn new(mut masses: Vec<(JointActionSeq, f64)>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::Config("calibration target is empty".into()));
        }
        for (a, w) in &masses {
            if !(0.0..=1.0).contains(w) {
                return Err(Error::Config(format!(
                    "target mass {w} of {a} must lie in [0, 1]"
                )));
            }
        }
        masses.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if masses.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("calibration target repeats an action".into()));
        }
        Ok(CalibrationTarget { masses })
    }

    /// The masses used by the 2x2 scenario.
    pub fn corner_default() -> Self {
        CalibrationTarget::new(vec![
            ("D+D".parse().expect("valid"), 0.875),
            ("R+R".parse().expect("valid"), 0.125),
        ])
        .expect("valid target")
    }

    pub fn leader(&self) -> &JointActionSeq {
        &self.masses[0].0
    }

    pub fn runner_up(&self) -> Option<&JointActionSeq> {
        self.masses.get(1).map(|(a, _)| a)
    }

    /// Largest absolute mass difference over the union of supports.
    pub fn deviation(&self, dist: &ActionDistribution) -> f64 {
        let mut worst = 0.0f64;
        for (a, w) in &self.masses {
            worst = worst.max((dist.mass_of(a) - w).abs());
        }
        for (a, w) in dist.iter() {
            if !self.masses.iter().any(|(t, _)| t == a) {
                worst = worst.max(w);
            }
        }
        worst
    }
}

impl FromStr for CalibrationTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let masses = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|pair| {
                let (a, w) = pair.split_once('=').ok_or_else(|| {
                    Error::Config(format!("target entry {pair:?} is not ACTION=MASS"))
                })?;
                let w: f64 = w
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad mass in {pair:?}")))?;
                Ok((a.trim().parse()?, w))
            })
            .collect::<Result<Vec<_>>>()?;
        CalibrationTarget::new(masses)
    }
}

impl fmt::Display for CalibrationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (a, w)) in self.masses.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}={w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub epsilon: Threshold,
    /// Must communicate at this δ.
    pub delta_comm: Threshold,
    /// Must stay quiet at this δ.
    pub delta_quiet: Threshold,
    /// Acceptable deviation from the target masses.
    pub tolerance: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            epsilon: Threshold::epsilon(0.3).expect("in range"),
            delta_comm: Threshold::delta(0.05).expect("in range"),
            delta_quiet: Threshold::delta(0.15).expect("in range"),
            tolerance: 0.01,
        }
    }
}

/// Everything measured at one lattice point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub top: f64,
    pub bottom: f64,
    pub prior: Vec<f64>,
    pub deviation: f64,
    pub feasible: bool,
    pub distribution: ActionDistribution,
    pub rprime: Option<ActionDistribution>,
    pub gap: Option<GapDistribution>,
    pub normalized_gap: Option<f64>,
    pub local_argmax: JointActionSeq,
    pub full_argmax: JointActionSeq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target: CalibrationTarget,
    pub best: CalibrationPoint,
    pub within_tolerance: bool,
    pub tolerance: f64,
    pub evaluated: usize,
    pub feasible: usize,
}

impl CalibrationReport {
    pub fn summary(&self) -> String {
        let b = &self.best;
        let masses = |d: &ActionDistribution| {
            let mut parts: Vec<String> = d.iter().map(|(a, w)| format!("{a}={w:.4}")).collect();
            if d.comm_mass() > 0.0 {
                parts.push(format!("COMM={:.4}", d.comm_mass()));
            }
            parts.join(", ")
        };
        let mut out = format!(
            "evaluated {} lattice priors, {} feasible\nbest prior: top {:.2}, bottom {:.2}\n  optimal action masses: {}\n  target: {}\n  max deviation: {:.4} (tolerance {})\n",
            self.evaluated,
            self.feasible,
            b.top,
            b.bottom,
            masses(&b.distribution),
            self.target,
            b.deviation,
            self.tolerance
        );
        if let Some(rp) = &b.rprime {
            out.push_str(&format!("  other agent selection masses: {}\n", masses(rp)));
        }
        if let Some(g) = &b.gap {
            let atoms: Vec<String> = g
                .atoms
                .iter()
                .map(|(v, p)| format!("{v:.4}@{p:.4}"))
                .collect();
            out.push_str(&format!(
                "  gap atoms: {}; E[gap] {:.4}; E|gap| / |J| {:.4}\n",
                atoms.join(", "),
                g.expectation(),
                b.normalized_gap.unwrap_or(f64::NAN)
            ));
        }
        out.push_str(&format!(
            "  own-history argmax {}, full-history argmax {}\n",
            b.local_argmax, b.full_argmax
        ));
        if self.within_tolerance {
            out.push_str("tolerance met\n");
        } else {
            out.push_str("tolerance not met; acceptance uses the qualitative fallback\n");
        }
        out
    }
}

fn evaluate_point(
    base: &GridScenario,
    top: f64,
    bottom: f64,
    target: &CalibrationTarget,
    settings: &CalibrationSettings,
    values: &[Vec<CellValue>; 2],
) -> Result<CalibrationPoint> {
    let width = base.grid().width;
    let prior: Vec<f64> = (0..base.grid().num_cells())
        .map(|c| if c < width { top } else { bottom })
        .collect();
    let scenario = base.with_prior(prior.clone())?;
    let histories = scenario.histories_with(values)?;
    let ctx = PlanningContext::new(&scenario.model, &scenario.prior, scenario.horizon());
    let distribution = optimal_action_distribution(&ctx, &histories[0])?;
    let deviation = target.deviation(&distribution);
    let local_argmax = decpomdp_ol_plan(&ctx, &histories[0])?;
    let full = merge_histories(&histories);
    let full_argmax = decpomdp_ol_plan(&ctx, &full)?;
    let selection = mloas_select(&distribution, settings.epsilon)?;

    let mut point = CalibrationPoint {
        top,
        bottom,
        prior,
        deviation,
        feasible: true,
        distribution,
        rprime: None,
        gap: None,
        normalized_gap: None,
        local_argmax,
        full_argmax,
    };
    if let Some(action) = &selection.action {
        point.rprime = Some(rprime_selection_distribution(
            &ctx,
            &histories[0],
            settings.epsilon,
        )?);
        let gap =
            performance_gap_distribution(&ctx, &histories[0], action, scenario.replan_stride())?;
        point.normalized_gap =
            Some(crate::engine::nepg_decide(&gap, settings.delta_quiet).normalized_gap);
        point.gap = Some(gap);
    }
    if let Some(runner_up) = target.runner_up() {
        let leader = target.leader();
        let second = mloas_select(
            &optimal_action_distribution(&ctx, &histories[1])?,
            settings.epsilon,
        )?;
        let gap_ok = point
            .normalized_gap
            .is_some_and(|g| g >= settings.delta_comm.get() && g < settings.delta_quiet.get());
        point.feasible = selection.action.as_ref() == Some(leader)
            && second.action.as_ref() == Some(leader)
            && &point.full_argmax == leader
            && &point.local_argmax == runner_up
            && gap_ok;
    }
    Ok(point)
}

/// Measures one top/bottom prior on `base`, whose unshared values must be
/// fixed.
pub fn evaluate_prior(
    base: &GridScenario,
    top: f64,
    bottom: f64,
    target: &CalibrationTarget,
    settings: &CalibrationSettings,
) -> Result<CalibrationPoint> {
    evaluate_point(base, top, bottom, target, settings, &fixed_values(base)?)
}

fn fixed_values(base: &GridScenario) -> Result<[Vec<CellValue>; 2]> {
    if !base.values_fixed() {
        return Err(Error::Config(
            "calibration needs a scenario with fixed unshared values".into(),
        ));
    }
    Ok([
        base.values[0].clone().unwrap_or_default(),
        base.values[1].clone().unwrap_or_default(),
    ])
}

/// Searches the tied top/bottom lattice on `base`, whose unshared values
/// must be fixed.
pub fn calibrate(
    base: &GridScenario,
    target: &CalibrationTarget,
    settings: &CalibrationSettings,
) -> Result<CalibrationReport> {
    let values = fixed_values(base)?;
    let lat = lattice();
    let mut best: Option<CalibrationPoint> = None;
    let mut evaluated = 0;
    let mut feasible = 0;
    for (i, &top) in lat.iter().enumerate() {
        for &bottom in &lat[i + 1..] {
            let point = evaluate_point(base, top, bottom, target, settings, &values)?;
            evaluated += 1;
            feasible += usize::from(point.feasible);
            let better = match &best {
                None => true,
                Some(b) => {
                    (point.feasible && !b.feasible)
                        || (point.feasible == b.feasible && point.deviation < b.deviation)
                }
            };
            if better {
                best = Some(point);
            }
        }
    }
    let best = best.ok_or_else(|| Error::Config("calibration lattice is empty".into()))?;
    Ok(CalibrationReport {
        target: target.clone(),
        within_tolerance: best.feasible && best.deviation <= settings.tolerance,
        tolerance: settings.tolerance,
        evaluated,
        feasible,
        best,
    })
}
