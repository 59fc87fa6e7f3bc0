//! Consistent joint action selection under inconsistent histories.
//!
//! Each agent reasons over every realization of the other agent's unshared
//! observation values:
//!
//! 1. [`optimal_action_distribution`] gives the law of the full-history
//!    optimal action given what the agent knows.
//! 2. [`mloas_select`] picks its mode or asks to communicate.
//! 3. [`rprime_selection_distribution`] replays step 1 and 2 from the other
//!    agent's hypothetical point of view, giving the probability that both
//!    agents pick the same action.
//! 4. [`performance_gap_distribution`] and [`nepg_decide`] measure how much
//!    the unshared data would change the value of the selected action.
//!
//! [`run_planning_session`] chains these for both agents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::history::{
    compose_full_history, condition_belief, enumerate_other_deltas, synchronize, DeltaRealization,
    HistorySet,
};
use crate::model::{Agent, Belief, ModelSpec, NUM_AGENTS};
use crate::planner::{
    argmax_with, candidate_sequences, Evaluator, JointActionSeq, Scorer, TieBreak, TIE_TOLERANCE,
};

/// Gap atoms closer than this are merged.
pub const ATOM_MERGE_TOLERANCE: f64 = 1e-12;

/// A probability threshold in `[0, 1]` (ε or δ).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(name: &'static str, value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidThreshold { name, value });
        }
        Ok(Threshold(value))
    }

    pub fn epsilon(value: f64) -> Result<Self> {
        Self::new("epsilon", value)
    }

    pub fn delta(value: f64) -> Result<Self> {
        Self::new("delta", value)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Threshold {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Threshold::new("threshold", v)
    }
}

impl From<Threshold> for f64 {
    fn from(t: Threshold) -> f64 {
        t.0
    }
}

/// Probability mass over joint action sequences plus a communication outcome.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionDistribution {
    mass: BTreeMap<JointActionSeq, f64>,
    comm_mass: f64,
}

impl ActionDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn point(action: JointActionSeq) -> Self {
        let mut d = Self::new();
        d.add(action, 1.0);
        d
    }

    pub fn add(&mut self, action: JointActionSeq, weight: f64) {
        *self.mass.entry(action).or_insert(0.0) += weight;
    }

    pub fn add_comm(&mut self, weight: f64) {
        self.comm_mass += weight;
    }

    pub fn mass_of(&self, action: &JointActionSeq) -> f64 {
        self.mass.get(action).copied().unwrap_or(0.0)
    }

    pub fn comm_mass(&self) -> f64 {
        self.comm_mass
    }

    /// Entries in ascending action order.
    pub fn iter(&self) -> impl Iterator<Item = (&JointActionSeq, f64)> {
        self.mass.iter().map(|(a, &w)| (a, w))
    }

    pub fn total(&self) -> f64 {
        self.mass.values().sum::<f64>() + self.comm_mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Highest-mass action; the smallest action wins near-ties.
    pub fn mode(&self) -> Option<(&JointActionSeq, f64)> {
        let mut best: Option<(&JointActionSeq, f64)> = None;
        for (a, w) in self.iter() {
            match best {
                Some((_, b)) if w <= b + TIE_TOLERANCE => {}
                _ => best = Some((a, w)),
            }
        }
        best
    }

    /// True when all action mass sits on one action.
    pub fn is_deterministic(&self) -> bool {
        self.comm_mass == 0.0 && self.mode().is_some_and(|(_, w)| (w - 1.0).abs() <= 1e-12)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionKind {
    Action,
    Comm,
}

/// Result of an action selection strategy with its guarantees.
///
/// `p_mrac` and `p_mroac` stay `None` until the other agent's selection has
/// been verified; then `p_mroac = p_opt * p_mrac`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub kind: SelectionKind,
    pub action: Option<JointActionSeq>,
    pub p_opt: f64,
    pub p_mrac: Option<f64>,
    pub p_mroac: Option<f64>,
}

impl SelectionOutcome {
    pub fn action(action: JointActionSeq, p_opt: f64) -> Self {
        SelectionOutcome {
            kind: SelectionKind::Action,
            action: Some(action),
            p_opt,
            p_mrac: None,
            p_mroac: None,
        }
    }

    pub fn is_comm(&self) -> bool {
        self.kind == SelectionKind::Comm
    }

    pub fn with_mrac(mut self, p_mrac: f64) -> Result<Self> {
        self.p_mroac = Some(mroac_probability(self.p_opt, p_mrac)?);
        self.p_mrac = Some(clamp_probability("p_mrac", p_mrac)?);
        self.p_opt = clamp_probability("p_opt", self.p_opt)?;
        Ok(self)
    }
}

/// Shared inputs of every planning computation.
#[derive(Debug, Clone, Copy)]
pub struct PlanningContext<'a> {
    pub model: &'a ModelSpec,
    pub prior: &'a Belief,
    pub horizon: usize,
    pub evaluator: Evaluator,
    pub tie_break: TieBreak,
    /// Tie-break used when mimicking the other agent. Equal to `tie_break`
    /// except under fault injection.
    pub mimic_tie_break: TieBreak,
    pub execution: Execution,
}

impl<'a> PlanningContext<'a> {
    pub fn new(model: &'a ModelSpec, prior: &'a Belief, horizon: usize) -> Self {
        PlanningContext {
            model,
            prior,
            horizon,
            evaluator: Evaluator::Auto,
            tie_break: TieBreak::First,
            mimic_tie_break: TieBreak::First,
            execution: Execution::default(),
        }
    }

    pub fn candidates(&self, history: &HistorySet) -> Result<Vec<JointActionSeq>> {
        candidate_sequences(&self.model.grid, history.trace.current(), self.horizon)
    }

    /// Argmax under the belief conditioned on all records of `history`.
    pub fn argmax(
        &self,
        history: &HistorySet,
        candidates: &[JointActionSeq],
    ) -> Result<JointActionSeq> {
        let belief = condition_belief(self.model, self.prior, history)?;
        argmax_with(
            self.model,
            &belief,
            candidates,
            self.evaluator,
            self.tie_break,
        )
        .map(|(a, _)| a)
    }

    fn realization_argmax(
        &self,
        own: &HistorySet,
        delta: &DeltaRealization,
        candidates: &[JointActionSeq],
    ) -> Result<JointActionSeq> {
        self.argmax(&compose_full_history(own, delta)?, candidates)
    }
}

/// Law of the full-history optimal action as seen from `own`.
pub fn optimal_action_distribution(
    ctx: &PlanningContext<'_>,
    own: &HistorySet,
) -> Result<ActionDistribution> {
    let candidates = ctx.candidates(own)?;
    optimal_action_distribution_over(ctx, own, &candidates)
}

fn optimal_action_distribution_over(
    ctx: &PlanningContext<'_>,
    own: &HistorySet,
    candidates: &[JointActionSeq],
) -> Result<ActionDistribution> {
    let deltas = enumerate_other_deltas(ctx.model, ctx.prior, own)?;
    let winners = ctx
        .execution
        .try_map(&deltas, |d| ctx.realization_argmax(own, d, candidates))?;
    let mut dist = ActionDistribution::new();
    for (d, a) in deltas.iter().zip(winners) {
        dist.add(a, d.weight);
    }
    Ok(dist)
}

/// ε-MLOAS: the mode if its mass exceeds `1 - ε`, otherwise communicate.
pub fn mloas_select(dist: &ActionDistribution, epsilon: Threshold) -> Result<SelectionOutcome> {
    let (action, p) = dist.mode().ok_or(Error::NoCandidates)?;
    if p > 1.0 - epsilon.get() {
        Ok(SelectionOutcome::action(action.clone(), p))
    } else {
        Ok(SelectionOutcome {
            kind: SelectionKind::Comm,
            action: None,
            p_opt: p,
            p_mrac: None,
            p_mroac: None,
        })
    }
}

/// Distribution of what the other agent selects, obtained by mimicking its
/// ε-MLOAS run under every realization of its unshared data.
pub fn rprime_selection_distribution(
    ctx: &PlanningContext<'_>,
    own: &HistorySet,
    epsilon: Threshold,
) -> Result<ActionDistribution> {
    let candidates = ctx.candidates(own)?;
    let outer = enumerate_other_deltas(ctx.model, ctx.prior, own)?;
    // Inner parallelism is left sequential: the outer loop already fans out.
    let inner_ctx = PlanningContext {
        execution: Execution::Sequential,
        tie_break: ctx.mimic_tie_break,
        ..*ctx
    };
    let choices = ctx.execution.try_map(&outer, |d| {
        let hypothetical = own.mirrored(&d.records);
        let inner = optimal_action_distribution_over(&inner_ctx, &hypothetical, &candidates)?;
        mloas_select(&inner, epsilon)
    })?;
    let mut dist = ActionDistribution::new();
    for (d, choice) in outer.iter().zip(choices) {
        match choice.action {
            Some(a) => dist.add(a, d.weight),
            None => dist.add_comm(d.weight),
        }
    }
    Ok(dist)
}

/// Probability that the common selection is also the full-history optimum.
///
/// Inputs are sums of realization weights, so rounding slack of
/// [`PROBABILITY_SLACK`] outside `[0, 1]` is clamped rather than rejected.
pub fn mroac_probability(p_opt: f64, p_mrac: f64) -> Result<f64> {
    Ok(clamp_probability("p_opt", p_opt)? * clamp_probability("p_mrac", p_mrac)?)
}

pub const PROBABILITY_SLACK: f64 = 1e-9;

fn clamp_probability(what: &'static str, value: f64) -> Result<f64> {
    if !(-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&value) {
        return Err(Error::InvalidProbability { what, value });
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Law of `J^M(full) - J^M(local)` for a fixed action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDistribution {
    /// `(gap, probability)`, ascending by gap.
    pub atoms: Vec<(f64, f64)>,
    pub j_m_local: f64,
}

impl GapDistribution {
    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|&(_, p)| p).sum()
    }

    pub fn expectation(&self) -> f64 {
        self.atoms.iter().map(|&(v, p)| v * p).sum()
    }

    pub fn expected_abs(&self) -> f64 {
        self.atoms.iter().map(|&(v, p)| v.abs() * p).sum()
    }

    fn from_samples(mut samples: Vec<(f64, f64)>, j_m_local: f64) -> Self {
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<(f64, f64)> = Vec::with_capacity(samples.len());
        for (v, p) in samples {
            match atoms.last_mut() {
                Some(last) if (v - last.0).abs() <= ATOM_MERGE_TOLERANCE => last.1 += p,
                _ => atoms.push((v, p)),
            }
        }
        GapDistribution { atoms, j_m_local }
    }
}

pub fn performance_gap_distribution(
    ctx: &PlanningContext<'_>,
    own: &HistorySet,
    selected: &JointActionSeq,
    m: usize,
) -> Result<GapDistribution> {
    let local = condition_belief(ctx.model, ctx.prior, own)?;
    let j_local =
        Scorer::new(ctx.model, &local, ctx.evaluator, selected.len())?.truncated(selected, m)?;
    let deltas = enumerate_other_deltas(ctx.model, ctx.prior, own)?;
    let samples = ctx.execution.try_map(&deltas, |d| {
        let full = condition_belief(ctx.model, ctx.prior, &compose_full_history(own, d)?)?;
        let j =
            Scorer::new(ctx.model, &full, ctx.evaluator, selected.len())?.truncated(selected, m)?;
        Ok::<_, Error>((j - j_local, d.weight))
    })?;
    Ok(GapDistribution::from_samples(samples, j_local))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommDecision {
    pub communicate: bool,
    /// `E|ΔJ| / |J^M|`; `+inf` when `J^M = 0`.
    pub normalized_gap: f64,
}

/// δ-NEPG: communicate iff the normalized expected absolute gap reaches δ.
pub fn nepg_decide(gap: &GapDistribution, delta: Threshold) -> CommDecision {
    if gap.j_m_local == 0.0 {
        return CommDecision {
            communicate: true,
            normalized_gap: f64::INFINITY,
        };
    }
    let normalized_gap = gap.expected_abs() / gap.j_m_local.abs();
    CommDecision {
        communicate: normalized_gap >= delta.get(),
        normalized_gap,
    }
}

/// Strategy parameters shared by both agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub epsilon: Threshold,
    pub delta: Threshold,
    /// Steps executed per session; the truncation `M` of the gap.
    pub replan_stride: usize,
    /// Synchronize histories before planning, every session.
    pub force_comm: bool,
}

/// One agent's reasoning in a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub distribution: ActionDistribution,
    pub selection: SelectionOutcome,
    pub rprime: Option<ActionDistribution>,
    pub gap: Option<GapDistribution>,
    pub decision: Option<CommDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub actions: [JointActionSeq; NUM_AGENTS],
    pub comm: bool,
    pub reports: [AgentReport; NUM_AGENTS],
}

impl SessionOutcome {
    pub fn consistent(&self) -> bool {
        self.actions[0] == self.actions[1]
    }
}

fn agent_pipeline(
    ctx: &PlanningContext<'_>,
    own: &HistorySet,
    cfg: &SessionConfig,
) -> Result<AgentReport> {
    let distribution = optimal_action_distribution(ctx, own)?;
    let selection = mloas_select(&distribution, cfg.epsilon)?;
    let Some(action) = selection.action.clone() else {
        return Ok(AgentReport {
            distribution,
            selection,
            rprime: None,
            gap: None,
            decision: None,
        });
    };
    let rprime = rprime_selection_distribution(ctx, own, cfg.epsilon)?;
    let selection = selection.with_mrac(rprime.mass_of(&action))?;
    let m = cfg.replan_stride.min(action.len());
    let gap = performance_gap_distribution(ctx, own, &action, m)?;
    let decision = nepg_decide(&gap, cfg.delta);
    Ok(AgentReport {
        distribution,
        selection,
        rprime: Some(rprime),
        gap: Some(gap),
        decision: Some(decision),
    })
}

/// Runs both agents' pipelines, then synchronizes if either asks to.
///
/// After an ε-MLOAS communication both agents re-plan on the synchronized
/// history; a gap-triggered communication keeps the selected actions.
pub fn run_planning_session(
    ctx: &PlanningContext<'_>,
    histories: &mut [HistorySet; NUM_AGENTS],
    cfg: &SessionConfig,
) -> Result<SessionOutcome> {
    let mut comm = false;
    if cfg.force_comm {
        synchronize(histories);
        comm = true;
    }
    let owners = Agent::BOTH;
    let views = &*histories;
    let reports = ctx.execution.try_map(&owners, |&agent| {
        agent_pipeline(ctx, &views[agent.index()], cfg)
    })?;
    let [r1, r2]: [AgentReport; NUM_AGENTS] = reports.try_into().expect("two agents");
    let mloas_comm = r1.selection.is_comm() || r2.selection.is_comm();
    let nepg_comm = [&r1, &r2]
        .iter()
        .any(|r| r.decision.is_some_and(|d| d.communicate));
    if mloas_comm || nepg_comm {
        synchronize(histories);
        comm = true;
    }
    let actions = if mloas_comm {
        let candidates = ctx.candidates(&histories[0])?;
        let full = ctx.argmax(&histories[0], &candidates)?;
        [full.clone(), full]
    } else {
        [
            r1.selection.action.clone().expect("action selected"),
            r2.selection.action.clone().expect("action selected"),
        ]
    };
    Ok(SessionOutcome {
        actions,
        comm,
        reports: [r1, r2],
    })
}
