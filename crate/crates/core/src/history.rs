//! Common, local and unshared histories, and enumeration of the other
//! agent's unshared observation values.
//!
//! Actions and positions are common knowledge, so each agent knows *when*
//! and *where* the other agent observed; only the observed values may be
//! unshared. The realization space of `m` unshared observations is the
//! `2^m` assignments of values to those slots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Agent, Belief, CellId, CellValue, ModelSpec, NUM_AGENTS};

pub type Time = u32;

/// Enumeration beyond this many unshared slots is refused.
pub const MAX_SLOTS: usize = 16;

/// An observation whose time and place are known but whose value may not be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub time: Time,
    pub agent: Agent,
    pub cell: CellId,
}

/// Field order gives the canonical `(time, agent)` ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub time: Time,
    pub agent: Agent,
    pub cell: CellId,
    pub value: CellValue,
}

impl ObservationRecord {
    pub fn slot(&self) -> Slot {
        Slot {
            time: self.time,
            agent: self.agent,
            cell: self.cell,
        }
    }
}

/// Both agents' positions at every elapsed time step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnownTrace {
    positions: Vec<[CellId; NUM_AGENTS]>,
}

impl KnownTrace {
    pub fn new(positions: Vec<[CellId; NUM_AGENTS]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Scenario("position trace is empty".into()));
        }
        Ok(KnownTrace { positions })
    }

    pub fn position(&self, agent: Agent, time: Time) -> Option<CellId> {
        self.positions.get(time as usize).map(|p| p[agent.index()])
    }

    pub fn current(&self) -> [CellId; NUM_AGENTS] {
        *self.positions.last().expect("trace is never empty")
    }

    pub fn now(&self) -> Time {
        (self.positions.len() - 1) as Time
    }

    pub fn push(&mut self, positions: [CellId; NUM_AGENTS]) {
        self.positions.push(positions);
    }

    pub fn check(&self, slot: Slot) -> Result<()> {
        let expected = self.position(slot.agent, slot.time);
        if expected == Some(slot.cell) {
            Ok(())
        } else {
            Err(Error::InconsistentRecord {
                agent: slot.agent.index() + 1,
                time: slot.time,
                cell: slot.cell,
                expected,
            })
        }
    }
}

/// One agent's view: the common history `c_k`, its own unshared records,
/// and the schedule of the other agent's unshared observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySet {
    pub owner: Agent,
    pub common: Vec<ObservationRecord>,
    pub own_delta: Vec<ObservationRecord>,
    pub other_slots: Vec<Slot>,
    pub trace: KnownTrace,
}

impl HistorySet {
    pub fn new(owner: Agent, trace: KnownTrace) -> Self {
        HistorySet {
            owner,
            common: Vec::new(),
            own_delta: Vec::new(),
            other_slots: Vec::new(),
            trace,
        }
    }

    /// Checks trace consistency, disjointness, and canonical ordering.
    pub fn validate(&self) -> Result<()> {
        let mut seen = Vec::new();
        for rec in self.common.iter().chain(&self.own_delta) {
            self.trace.check(rec.slot())?;
            seen.push((rec.time, rec.agent));
        }
        for slot in &self.other_slots {
            self.trace.check(*slot)?;
            if slot.agent == self.owner {
                return Err(Error::Scenario(format!(
                    "slot at time {} belongs to the owner, not the other agent",
                    slot.time
                )));
            }
            seen.push((slot.time, slot.agent));
        }
        if let Some(rec) = self.own_delta.iter().find(|r| r.agent != self.owner) {
            return Err(Error::Scenario(format!(
                "own delta holds a record of agent {}",
                rec.agent
            )));
        }
        seen.sort();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::OverlappingRecords {
                agent: w[0].1.index() + 1,
                time: w[0].0,
            });
        }
        Ok(())
    }

    /// All known records in canonical order.
    pub fn records(&self) -> Vec<ObservationRecord> {
        let mut all: Vec<_> = self.common.iter().chain(&self.own_delta).copied().collect();
        all.sort();
        all
    }

    pub fn own_slots(&self) -> Vec<Slot> {
        self.own_delta.iter().map(ObservationRecord::slot).collect()
    }

    /// True when nothing is unknown to the owner.
    pub fn is_full(&self) -> bool {
        self.other_slots.is_empty()
    }

    /// The history the other agent would hold if its unshared values were
    /// `other_delta`, with this agent's own records turned into unknown slots.
    pub fn mirrored(&self, other_delta: &[ObservationRecord]) -> HistorySet {
        HistorySet {
            owner: self.owner.other(),
            common: self.common.clone(),
            own_delta: other_delta.to_vec(),
            other_slots: self.own_slots(),
            trace: self.trace.clone(),
        }
    }

    /// Adds a record observed by the owner that is not (yet) shared.
    pub fn push_own(&mut self, rec: ObservationRecord) {
        debug_assert_eq!(rec.agent, self.owner);
        self.own_delta.push(rec);
        self.own_delta.sort();
    }

    pub fn push_other_slot(&mut self, slot: Slot) {
        debug_assert_ne!(slot.agent, self.owner);
        self.other_slots.push(slot);
        self.other_slots.sort();
    }

    pub fn push_common(&mut self, rec: ObservationRecord) {
        self.common.push(rec);
        self.common.sort();
    }
}

/// One hypothesized assignment of values to unshared slots, with its
/// predictive probability under the enumerating agent's belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRealization {
    pub records: Vec<ObservationRecord>,
    pub weight: f64,
}

impl DeltaRealization {
    pub fn empty() -> Self {
        DeltaRealization {
            records: Vec::new(),
            weight: 1.0,
        }
    }
}

/// Enumerates all value assignments of `slots` weighted by the chained
/// predictive likelihood under `belief`. Zero-weight assignments are dropped.
///
/// Assignments are produced in binary-counting order over the slots sorted
/// canonically, `Empty` before `Fire`.
pub fn enumerate_deltas(
    model: &ModelSpec,
    belief: &Belief,
    slots: &[Slot],
) -> Result<Vec<DeltaRealization>> {
    if slots.len() > MAX_SLOTS {
        return Err(Error::TooManySlots(slots.len(), MAX_SLOTS));
    }
    let mut slots = slots.to_vec();
    slots.sort();
    let mut out = Vec::with_capacity(1 << slots.len());
    'outer: for bits in 0u32..1 << slots.len() {
        let mut b = belief.clone();
        let mut weight = 1.0;
        let mut records = Vec::with_capacity(slots.len());
        // Most significant slot first keeps the counting order canonical.
        for (i, slot) in slots.iter().enumerate() {
            let fire = bits >> (slots.len() - 1 - i) & 1 == 1;
            let value = if fire {
                CellValue::Fire
            } else {
                CellValue::Empty
            };
            let w = model.observation_likelihood(&b, slot.agent, slot.cell, value)?;
            if w <= 0.0 {
                continue 'outer;
            }
            weight *= w;
            b.observe(slot.cell, value, model.accuracy_of(slot.agent))?;
            records.push(ObservationRecord {
                time: slot.time,
                agent: slot.agent,
                cell: slot.cell,
                value,
            });
        }
        out.push(DeltaRealization { records, weight });
    }
    Ok(out)
}

/// Realizations of the other agent's unshared data from `own`'s perspective,
/// weighted under the belief conditioned on `own`.
pub fn enumerate_other_deltas(
    model: &ModelSpec,
    prior: &Belief,
    own: &HistorySet,
) -> Result<Vec<DeltaRealization>> {
    for slot in &own.other_slots {
        own.trace.check(*slot)?;
    }
    let belief = condition_belief(model, prior, own)?;
    enumerate_deltas(model, &belief, &own.other_slots)
}

/// `base ∪ delta`: the delta's records join the known set and their slots are
/// removed from the unknown schedule.
pub fn compose_full_history(base: &HistorySet, delta: &DeltaRealization) -> Result<HistorySet> {
    let mut out = base.clone();
    let known: Vec<_> = base.records().iter().map(|r| (r.time, r.agent)).collect();
    for rec in &delta.records {
        base.trace.check(rec.slot())?;
        if known.contains(&(rec.time, rec.agent)) {
            return Err(Error::OverlappingRecords {
                agent: rec.agent.index() + 1,
                time: rec.time,
            });
        }
        out.other_slots
            .retain(|s| s.agent != rec.agent || s.time != rec.time);
        out.common.push(*rec);
    }
    out.common.sort();
    Ok(out)
}

/// Applies every known record of `history` to `prior` in canonical order and
/// places the agents at their current positions.
pub fn condition_belief(model: &ModelSpec, prior: &Belief, history: &HistorySet) -> Result<Belief> {
    let mut b = prior.clone();
    for rec in history.records() {
        history.trace.check(rec.slot())?;
        b.observe(rec.cell, rec.value, model.accuracy_of(rec.agent))?;
    }
    b.set_positions(history.trace.current());
    Ok(b)
}

/// Union of both agents' histories, owned by agent one, with nothing unknown.
pub fn merge_histories(histories: &[HistorySet; NUM_AGENTS]) -> HistorySet {
    let mut all: Vec<_> = histories[0]
        .common
        .iter()
        .chain(&histories[0].own_delta)
        .chain(&histories[1].common)
        .chain(&histories[1].own_delta)
        .copied()
        .collect();
    all.sort();
    all.dedup();
    HistorySet {
        owner: Agent::One,
        common: all,
        own_delta: Vec::new(),
        other_slots: Vec::new(),
        trace: histories[0].trace.clone(),
    }
}

/// Exchanges all unshared records: both agents end up holding the full
/// joint history as common history.
pub fn synchronize(histories: &mut [HistorySet; NUM_AGENTS]) {
    let full = merge_histories(histories);
    for h in histories.iter_mut() {
        h.common = full.common.clone();
        h.own_delta.clear();
        h.other_slots.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Accuracy, Grid, RewardSpec};
    use approx::assert_abs_diff_eq;

    fn model() -> ModelSpec {
        ModelSpec::new(
            Grid::new(2, 2).unwrap(),
            Accuracy::new(0.75).unwrap(),
            RewardSpec::NegEntropy,
        )
        .unwrap()
    }

    fn trace() -> KnownTrace {
        // t=0: agent one at 1, agent two at 2; t=1: both at 0.
        KnownTrace::new(vec![[1, 2], [0, 0]]).unwrap()
    }

    fn rec(time: Time, agent: Agent, cell: CellId, value: CellValue) -> ObservationRecord {
        ObservationRecord {
            time,
            agent,
            cell,
            value,
        }
    }

    #[test]
    fn no_slots_gives_the_empty_realization() {
        let m = model();
        let prior = Belief::new(vec![0.5; 4], [0, 0]).unwrap();
        let own = HistorySet::new(Agent::One, trace());
        let deltas = enumerate_other_deltas(&m, &prior, &own).unwrap();
        assert_eq!(deltas, vec![DeltaRealization::empty()]);
    }

    #[test]
    fn single_slot_weights_are_the_predictive_marginals() {
        let m = model();
        let prior = Belief::new(vec![0.5, 0.5, 0.25, 0.5], [0, 0]).unwrap();
        let mut own = HistorySet::new(Agent::One, trace());
        own.push_other_slot(Slot {
            time: 0,
            agent: Agent::Two,
            cell: 2,
        });
        let deltas = enumerate_other_deltas(&m, &prior, &own).unwrap();
        assert_eq!(deltas.len(), 2);
        assert_eq!(deltas[0].records[0].value, CellValue::Empty);
        assert_abs_diff_eq!(deltas[0].weight, 0.625, epsilon = 1e-15);
        assert_abs_diff_eq!(deltas[1].weight, 0.375, epsilon = 1e-15);
    }

    #[test]
    fn independent_slots_multiply() {
        let m = model();
        let prior = Belief::new(vec![0.5, 0.3, 0.6, 0.5], [0, 0]).unwrap();
        let tr = KnownTrace::new(vec![[0, 1], [0, 2], [0, 0]]).unwrap();
        let mut own = HistorySet::new(Agent::One, tr);
        own.push_other_slot(Slot {
            time: 0,
            agent: Agent::Two,
            cell: 1,
        });
        own.push_other_slot(Slot {
            time: 1,
            agent: Agent::Two,
            cell: 2,
        });
        let deltas = enumerate_other_deltas(&m, &prior, &own).unwrap();
        assert_eq!(deltas.len(), 4);
        let marg = |p: f64, fire: bool| {
            if fire {
                0.75 * p + 0.25 * (1.0 - p)
            } else {
                0.25 * p + 0.75 * (1.0 - p)
            }
        };
        for (i, d) in deltas.iter().enumerate() {
            let expected = marg(0.3, i & 2 != 0) * marg(0.6, i & 1 != 0);
            assert_abs_diff_eq!(d.weight, expected, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(
            deltas.iter().map(|d| d.weight).sum::<f64>(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn slot_off_the_trace_is_rejected() {
        let m = model();
        let prior = Belief::new(vec![0.5; 4], [0, 0]).unwrap();
        let mut own = HistorySet::new(Agent::One, trace());
        own.other_slots.push(Slot {
            time: 0,
            agent: Agent::Two,
            cell: 3,
        });
        assert!(matches!(
            enumerate_other_deltas(&m, &prior, &own),
            Err(Error::InconsistentRecord { cell: 3, .. })
        ));
    }

    #[test]
    fn compose_identity_and_overlap() {
        let mut base = HistorySet::new(Agent::One, trace());
        base.push_own(rec(0, Agent::One, 1, CellValue::Empty));
        base.push_other_slot(Slot {
            time: 0,
            agent: Agent::Two,
            cell: 2,
        });
        assert_eq!(
            compose_full_history(&base, &DeltaRealization::empty()).unwrap(),
            base
        );

        let delta = DeltaRealization {
            records: vec![rec(0, Agent::Two, 2, CellValue::Fire)],
            weight: 0.5,
        };
        let full = compose_full_history(&base, &delta).unwrap();
        assert!(full.is_full());
        assert_eq!(full.records().len(), 2);

        let clash = DeltaRealization {
            records: vec![rec(0, Agent::One, 1, CellValue::Fire)],
            weight: 0.5,
        };
        assert!(matches!(
            compose_full_history(&base, &clash),
            Err(Error::OverlappingRecords { agent: 1, time: 0 })
        ));
    }

    #[test]
    fn partition_covers_the_full_joint_history() {
        let r1 = rec(0, Agent::One, 1, CellValue::Empty);
        let r2 = rec(0, Agent::Two, 2, CellValue::Fire);
        let mut h1 = HistorySet::new(Agent::One, trace());
        h1.push_own(r1);
        h1.push_other_slot(r2.slot());
        let mut h2 = HistorySet::new(Agent::Two, trace());
        h2.push_own(r2);
        h2.push_other_slot(r1.slot());
        let truth = DeltaRealization {
            records: vec![r2],
            weight: 1.0,
        };
        let composed = compose_full_history(&h1, &truth).unwrap();
        assert_eq!(composed.records(), merge_histories(&[h1, h2]).records());
    }

    #[test]
    fn conditioning_examples() {
        let m = model();
        let prior = Belief::new(vec![0.5; 4], [3, 3]).unwrap();
        let h = HistorySet::new(Agent::One, trace());
        let b = condition_belief(&m, &prior, &h).unwrap();
        assert_eq!(b.probs(), prior.probs());
        assert_eq!(b.positions(), [0, 0]);

        let mut h = HistorySet::new(Agent::One, trace());
        h.push_own(rec(0, Agent::One, 1, CellValue::Empty));
        assert_abs_diff_eq!(
            condition_belief(&m, &prior, &h).unwrap().prob(1),
            0.25,
            epsilon = 1e-15
        );

        // Fire then Empty on the same cell cancels exactly.
        let tr = KnownTrace::new(vec![[1, 1], [1, 0]]).unwrap();
        let mut h = HistorySet::new(Agent::One, tr);
        h.push_own(rec(0, Agent::One, 1, CellValue::Fire));
        h.push_common(rec(0, Agent::Two, 1, CellValue::Empty));
        assert_abs_diff_eq!(
            condition_belief(&m, &prior, &h).unwrap().prob(1),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn conditioning_splits_over_disjoint_record_sets() {
        let m = model();
        let prior = Belief::new(vec![0.3, 0.6, 0.45, 0.8], [0, 0]).unwrap();
        let tr = KnownTrace::new(vec![[1, 2], [3, 3], [0, 0]]).unwrap();
        let a = [
            rec(0, Agent::One, 1, CellValue::Fire),
            rec(1, Agent::Two, 3, CellValue::Empty),
        ];
        let b = [
            rec(0, Agent::Two, 2, CellValue::Fire),
            rec(1, Agent::One, 3, CellValue::Fire),
        ];
        let mut ha = HistorySet::new(Agent::One, tr.clone());
        ha.common = a.to_vec();
        let mut hb = HistorySet::new(Agent::One, tr.clone());
        hb.common = b.to_vec();
        let mut hab = HistorySet::new(Agent::One, tr);
        hab.common = a.iter().chain(&b).copied().collect();
        hab.common.sort();
        let stepwise =
            condition_belief(&m, &condition_belief(&m, &prior, &ha).unwrap(), &hb).unwrap();
        let joint = condition_belief(&m, &prior, &hab).unwrap();
        for c in 0..4 {
            assert_abs_diff_eq!(stepwise.prob(c), joint.prob(c), epsilon = 1e-12);
        }
    }

    #[test]
    fn weights_match_state_space_marginal() {
        // Oracle: P(values | h) = sum_x b(x) * prod P(value_i | x).
        let m = model();
        let prior = Belief::new(vec![0.3, 0.6, 0.45, 0.8], [0, 0]).unwrap();
        let tr = KnownTrace::new(vec![[0, 1], [0, 1], [0, 3], [0, 0]]).unwrap();
        let mut own = HistorySet::new(Agent::One, tr);
        for (t, c) in [(0, 1), (1, 1), (2, 3)] {
            own.push_other_slot(Slot {
                time: t,
                agent: Agent::Two,
                cell: c,
            });
        }
        let belief = condition_belief(&m, &prior, &own).unwrap();
        for d in enumerate_other_deltas(&m, &prior, &own).unwrap() {
            let mut oracle = 0.0;
            for (state, p) in belief.states().unwrap() {
                let mut lik = p;
                for r in &d.records {
                    let truth = if state >> r.cell & 1 == 1 {
                        CellValue::Fire
                    } else {
                        CellValue::Empty
                    };
                    lik *= m.accuracy_of(r.agent).likelihood(r.value, truth);
                }
                oracle += lik;
            }
            assert_abs_diff_eq!(d.weight, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn synchronize_gives_both_agents_everything() {
        let r1 = rec(0, Agent::One, 1, CellValue::Empty);
        let r2 = rec(0, Agent::Two, 2, CellValue::Fire);
        let mut h1 = HistorySet::new(Agent::One, trace());
        h1.push_own(r1);
        h1.push_other_slot(r2.slot());
        let mut h2 = HistorySet::new(Agent::Two, trace());
        h2.push_own(r2);
        h2.push_other_slot(r1.slot());
        let mut pair = [h1, h2];
        synchronize(&mut pair);
        assert!(pair.iter().all(HistorySet::is_full));
        assert_eq!(pair[0].records(), vec![r1, r2]);
        assert_eq!(pair[0].records(), pair[1].records());
    }
}
