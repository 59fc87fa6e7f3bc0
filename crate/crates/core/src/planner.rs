//! Open-loop objective evaluation and joint action selection.
//!
//! The objective of a joint action sequence is the expected sum of per-step
//! rewards, the expectation running over every future joint observation
//! branch. Two evaluators compute it:
//!
//! * [`Evaluator::ExhaustiveTree`] walks the observation tree explicitly and
//!   works for any reward.
//! * [`Evaluator::FactoredEntropy`] exploits that negative entropy is a sum
//!   over independent cells, so each cell's expected posterior entropy only
//!   depends on how many times each agent has looked at it.
//!
//! Both agree to rounding; the tree is the reference.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::history::ObservationRecord;
use crate::model::{
    bernoulli_entropy, Accuracy, Agent, Belief, CellId, CellValue, Grid, JointMove, ModelSpec,
    Move, RewardSpec, StateTable, NUM_AGENTS,
};

/// Values within this relative distance are treated as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// A joint action sequence `a_k .. a_{k+L-1}`; ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JointActionSeq(Vec<JointMove>);

impl JointActionSeq {
    pub fn new(steps: Vec<JointMove>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::ZeroHorizon);
        }
        Ok(JointActionSeq(steps))
    }

    pub fn single(step: JointMove) -> Self {
        JointActionSeq(vec![step])
    }

    pub fn steps(&self) -> &[JointMove] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The moves of one agent along the sequence.
    pub fn moves_of(&self, agent: Agent) -> impl Iterator<Item = Move> + '_ {
        self.0.iter().map(move |s| s.of(agent))
    }
}

impl fmt::Display for JointActionSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, step) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{step}")?;
        }
        Ok(())
    }
}

impl FromStr for JointActionSeq {
    type Err = Error;

    /// Parses `"R+D"` or `"R+D,D+D"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse joint action sequence {s:?}"));
        let steps = s
            .split(',')
            .map(|step| {
                let (a, b) = step.trim().split_once('+').ok_or_else(bad)?;
                let one = |t: &str| {
                    let mut chars = t.trim().chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => Move::from_letter(c).ok_or_else(bad),
                        _ => Err(bad()),
                    }
                };
                Ok(JointMove::new(one(a)?, one(b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        JointActionSeq::new(steps)
    }
}

impl Serialize for JointActionSeq {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for JointActionSeq {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Every joint sequence of length `horizon` whose moves stay on the grid,
/// in ascending lexicographic order.
pub fn candidate_sequences(
    grid: &Grid,
    positions: [CellId; NUM_AGENTS],
    horizon: usize,
) -> Result<Vec<JointActionSeq>> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    fn walks(grid: &Grid, from: CellId, len: usize) -> Vec<Vec<Move>> {
        if len == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for mv in grid.legal_moves(from) {
            let next = grid.step(from, mv).expect("legal move");
            for mut tail in walks(grid, next, len - 1) {
                tail.insert(0, mv);
                out.push(tail);
            }
        }
        out
    }
    let first = walks(grid, positions[0], horizon);
    let second = walks(grid, positions[1], horizon);
    let mut out = Vec::with_capacity(first.len() * second.len());
    for a in &first {
        for b in &second {
            let steps = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| JointMove::new(x, y))
                .collect();
            out.push(JointActionSeq(steps));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::NoCandidates);
    }
    Ok(out)
}

/// How exact ties between candidates are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    /// The lexicographically smallest candidate wins.
    #[default]
    First,
    /// The largest wins; only used to probe the self-check suites.
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evaluator {
    /// Factored entropy for `NegEntropy`, the exhaustive tree otherwise.
    #[default]
    Auto,
    ExhaustiveTree,
    FactoredEntropy,
}

fn check_truncation(seq: &JointActionSeq, m: usize) -> Result<()> {
    if m == 0 || m > seq.len() {
        return Err(Error::TruncationOutOfRange {
            m,
            horizon: seq.len(),
        });
    }
    Ok(())
}

fn tree_value(model: &ModelSpec, belief: &Belief, steps: &[JointMove]) -> Result<f64> {
    let action = steps[0];
    let reward = model.reward(belief, action)?;
    if steps.len() == 1 {
        return Ok(reward);
    }
    let cells = model
        .apply(belief.positions(), action)
        .ok_or_else(|| Error::Config(format!("move {action} leaves the grid")))?;
    let mut future = 0.0;
    for (w, _, mut next) in model.observation_branches(belief, cells)? {
        next.set_positions(cells);
        future += w * tree_value(model, &next, &steps[1..])?;
    }
    Ok(reward + future)
}

/// Open-loop objective by exhaustive enumeration of the observation tree.
pub fn evaluate_objective(model: &ModelSpec, belief: &Belief, seq: &JointActionSeq) -> Result<f64> {
    truncated_objective(model, belief, seq, seq.len())
}

/// Objective restricted to the first `m` steps of `seq`.
pub fn truncated_objective(
    model: &ModelSpec,
    belief: &Belief,
    seq: &JointActionSeq,
    m: usize,
) -> Result<f64> {
    check_truncation(seq, m)?;
    tree_value(model, belief, &seq.steps()[..m])
}

/// `E[H(cell)]` after `n1` looks by an agent of accuracy `a1` and `n2` by one
/// of accuracy `a2`, starting from `P(Fire) = p`.
pub fn expected_posterior_entropy(p: f64, a1: Accuracy, n1: u32, a2: Accuracy, n2: u32) -> f64 {
    let (a1, a2) = (a1.get(), a2.get());
    let mut total = 0.0;
    for k1 in 0..=n1 {
        let c1 = binomial(n1, k1);
        // k fire readings: likelihood under Fire and under Empty.
        let f1 = c1 * a1.powi(k1 as i32) * (1.0 - a1).powi((n1 - k1) as i32);
        let e1 = c1 * (1.0 - a1).powi(k1 as i32) * a1.powi((n1 - k1) as i32);
        for k2 in 0..=n2 {
            let c2 = binomial(n2, k2);
            let f = f1 * c2 * a2.powi(k2 as i32) * (1.0 - a2).powi((n2 - k2) as i32);
            let e = e1 * c2 * (1.0 - a2).powi(k2 as i32) * a2.powi((n2 - k2) as i32);
            let w = p * f + (1.0 - p) * e;
            if w > 0.0 {
                total += w * bernoulli_entropy(p * f / w);
            }
        }
    }
    total
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Per-belief cache of expected posterior entropies keyed by look counts.
struct EntropyTable<'a> {
    model: &'a ModelSpec,
    belief: &'a Belief,
    base: Vec<f64>,
    base_sum: f64,
    stride: usize,
    memo: Vec<f64>,
}

impl<'a> EntropyTable<'a> {
    fn new(model: &'a ModelSpec, belief: &'a Belief, horizon: usize) -> Self {
        let base: Vec<f64> = belief
            .probs()
            .iter()
            .map(|&p| bernoulli_entropy(p))
            .collect();
        let base_sum = base.iter().sum();
        let stride = horizon + 1;
        EntropyTable {
            model,
            belief,
            memo: vec![f64::NAN; base.len() * stride * stride],
            base,
            base_sum,
            stride,
        }
    }

    fn get(&mut self, cell: CellId, n1: u32, n2: u32) -> f64 {
        let idx = (cell * self.stride + n1 as usize) * self.stride + n2 as usize;
        if self.memo[idx].is_nan() {
            self.memo[idx] = expected_posterior_entropy(
                self.belief.prob(cell),
                self.model.accuracy_of(Agent::One),
                n1,
                self.model.accuracy_of(Agent::Two),
                n2,
            );
        }
        self.memo[idx]
    }

    fn truncated(&mut self, seq: &JointActionSeq, m: usize) -> Result<f64> {
        let mut pos = self.belief.positions();
        let mut counts: Vec<(CellId, u32, u32)> = Vec::with_capacity(2 * m);
        let mut total = 0.0;
        for &action in &seq.steps()[..m] {
            pos = self
                .model
                .apply(pos, action)
                .ok_or_else(|| Error::Config(format!("move {action} leaves the grid")))?;
            for agent in Agent::BOTH {
                let cell = pos[agent.index()];
                let entry = match counts.iter_mut().find(|e| e.0 == cell) {
                    Some(e) => e,
                    None => {
                        counts.push((cell, 0, 0));
                        counts.last_mut().unwrap()
                    }
                };
                match agent {
                    Agent::One => entry.1 += 1,
                    Agent::Two => entry.2 += 1,
                }
            }
            let mut step = self.base_sum;
            for &(cell, n1, n2) in &counts {
                step += self.get(cell, n1, n2) - self.base[cell];
            }
            total -= step;
        }
        Ok(total)
    }
}

/// Evaluates many candidates against one belief, sharing per-belief work.
pub struct Scorer<'a> {
    model: &'a ModelSpec,
    belief: &'a Belief,
    table: Option<EntropyTable<'a>>,
}

impl<'a> Scorer<'a> {
    pub fn new(
        model: &'a ModelSpec,
        belief: &'a Belief,
        evaluator: Evaluator,
        horizon: usize,
    ) -> Result<Self> {
        let factored = match (evaluator, &model.reward) {
            (Evaluator::ExhaustiveTree, _) => false,
            (Evaluator::Auto, RewardSpec::NegEntropy)
            | (Evaluator::FactoredEntropy, RewardSpec::NegEntropy) => true,
            (Evaluator::Auto, RewardSpec::StateTable(_)) => false,
            (Evaluator::FactoredEntropy, RewardSpec::StateTable(_)) => {
                return Err(Error::UnsupportedReward)
            }
        };
        Ok(Scorer {
            model,
            belief,
            table: factored.then(|| EntropyTable::new(model, belief, horizon)),
        })
    }

    /// `J^m(b, seq)`.
    pub fn truncated(&mut self, seq: &JointActionSeq, m: usize) -> Result<f64> {
        check_truncation(seq, m)?;
        match &mut self.table {
            Some(table) => table.truncated(seq, m),
            None => tree_value(self.model, self.belief, &seq.steps()[..m]),
        }
    }

    pub fn objective(&mut self, seq: &JointActionSeq) -> Result<f64> {
        self.truncated(seq, seq.len())
    }
}

/// Index of the best value; ties within [`TIE_TOLERANCE`] go by `tie`.
pub fn argmax_index(values: &[f64], tie: TieBreak) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        best = match best {
            None => Some((i, v)),
            Some((j, b)) => {
                let tol = TIE_TOLERANCE * b.abs().max(1.0);
                let better = match tie {
                    TieBreak::First => v > b + tol,
                    TieBreak::Last => v >= b - tol,
                };
                if better {
                    Some((i, v))
                } else {
                    Some((j, b))
                }
            }
        };
    }
    best.map(|(i, _)| i)
}

/// Best candidate and its objective value.
pub fn argmax_with(
    model: &ModelSpec,
    belief: &Belief,
    candidates: &[JointActionSeq],
    evaluator: Evaluator,
    tie: TieBreak,
) -> Result<(JointActionSeq, f64)> {
    let horizon = candidates
        .iter()
        .map(JointActionSeq::len)
        .max()
        .ok_or(Error::NoCandidates)?;
    let mut scorer = Scorer::new(model, belief, evaluator, horizon)?;
    let values = candidates
        .iter()
        .map(|c| scorer.objective(c))
        .collect::<Result<Vec<_>>>()?;
    // Tie-breaking follows candidate order, not input order.
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[a].cmp(&candidates[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let i = order[argmax_index(&sorted, tie).ok_or(Error::NoCandidates)?];
    Ok((candidates[i].clone(), values[i]))
}

/// Candidate with maximal objective, lexicographically first among ties.
pub fn argmax_action(
    model: &ModelSpec,
    belief: &Belief,
    candidates: &[JointActionSeq],
) -> Result<JointActionSeq> {
    argmax_with(model, belief, candidates, Evaluator::Auto, TieBreak::First).map(|(a, _)| a)
}

/// `g(x, a) = sum_l R(x, a_l)`: cumulative state-dependent reward from a
/// fixed (static) state.
pub fn g_value(table: &StateTable, state: u64, seq: &JointActionSeq) -> f64 {
    seq.steps().iter().map(|&a| table.get(state, a)).sum()
}

/// Memo of `g(x, a)`. Concurrent readers, one writer at a time.
#[derive(Debug, Default)]
pub struct GCache {
    table: RwLock<HashMap<(u64, JointActionSeq), f64>>,
}

impl GCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.table.read().expect("g-cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_compute(&self, table: &StateTable, state: u64, seq: &JointActionSeq) -> f64 {
        let key = (state, seq.clone());
        if let Some(&v) = self.table.read().expect("g-cache lock poisoned").get(&key) {
            return v;
        }
        let v = g_value(table, state, seq);
        *self
            .table
            .write()
            .expect("g-cache lock poisoned")
            .entry(key)
            .or_insert(v)
    }
}

fn state_table(model: &ModelSpec) -> Result<&StateTable> {
    match &model.reward {
        RewardSpec::StateTable(t) => Ok(t),
        RewardSpec::NegEntropy => Err(Error::UnsupportedReward),
    }
}

/// `(sum_x b_c(x) P(dh | x) g(x, seq), eta)` with `eta = sum_x b_c(x) P(dh | x)`.
fn reuse_terms(
    model: &ModelSpec,
    common_belief: &Belief,
    delta: &[ObservationRecord],
    seq: &JointActionSeq,
    cache: &GCache,
) -> Result<(f64, f64)> {
    let table = state_table(model)?;
    let mut weighted = 0.0;
    let mut eta = 0.0;
    for (state, p) in common_belief.states()? {
        let mut w = p;
        for rec in delta {
            let truth = if state >> rec.cell & 1 == 1 {
                CellValue::Fire
            } else {
                CellValue::Empty
            };
            w *= model.accuracy_of(rec.agent).likelihood(rec.value, truth);
        }
        if w == 0.0 {
            continue;
        }
        eta += w;
        weighted += w * cache.get_or_compute(table, state, seq);
    }
    if eta <= 0.0 {
        return Err(Error::Config(
            "unshared data has zero likelihood under the common belief".into(),
        ));
    }
    Ok((weighted, eta))
}

/// Objective of `seq` under the belief conditioned on `c_k ∪ delta`, computed
/// from the common belief and cached `g` values instead of re-planning.
pub fn evaluate_objective_reuse(
    model: &ModelSpec,
    common_belief: &Belief,
    delta: &[ObservationRecord],
    seq: &JointActionSeq,
    cache: &GCache,
) -> Result<f64> {
    let (weighted, eta) = reuse_terms(model, common_belief, delta, seq, cache)?;
    Ok(weighted / eta)
}

/// Reuse-path scores for every candidate, optionally without the `eta`
/// normalizer (which is common to all candidates).
pub fn reuse_scores(
    model: &ModelSpec,
    common_belief: &Belief,
    delta: &[ObservationRecord],
    candidates: &[JointActionSeq],
    cache: &GCache,
    normalize: bool,
) -> Result<Vec<f64>> {
    candidates
        .iter()
        .map(|seq| {
            let (weighted, eta) = reuse_terms(model, common_belief, delta, seq, cache)?;
            Ok(if normalize { weighted / eta } else { weighted })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Grid;
    use approx::assert_abs_diff_eq;

    fn entropy_model(w: usize, h: usize, alpha: f64) -> ModelSpec {
        ModelSpec::new(
            Grid::new(w, h).unwrap(),
            Accuracy::new(alpha).unwrap(),
            RewardSpec::NegEntropy,
        )
        .unwrap()
    }

    fn seq(s: &str) -> JointActionSeq {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["R+D", "D+D,U+L", "L+R,R+L,U+U"] {
            assert_eq!(seq(s).to_string(), s);
        }
        assert!("R+".parse::<JointActionSeq>().is_err());
        assert!("RD".parse::<JointActionSeq>().is_err());
        assert!("".parse::<JointActionSeq>().is_err());
    }

    #[test]
    fn candidates_from_the_corner() {
        let g = Grid::new(2, 2).unwrap();
        let c = candidate_sequences(&g, [0, 0], 1).unwrap();
        let labels: Vec<_> = c.iter().map(ToString::to_string).collect();
        assert_eq!(labels, ["D+D", "D+R", "R+D", "R+R"]);
        // Out-of-bounds moves are never offered.
        let c = candidate_sequences(&g, [3, 3], 1).unwrap();
        assert!(c
            .iter()
            .all(|s| !s.to_string().contains('D') && !s.to_string().contains('R')));
        assert!(matches!(
            candidate_sequences(&g, [0, 0], 0),
            Err(Error::ZeroHorizon)
        ));
        let c2 = candidate_sequences(&g, [0, 0], 2).unwrap();
        assert_eq!(c2.len(), 16);
        assert!(c2.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn horizon_one_is_the_step_reward() {
        let m = entropy_model(2, 2, 0.75);
        let b = Belief::new(vec![0.3, 0.3, 0.9, 0.9], [0, 0]).unwrap();
        let s = seq("R+D");
        let direct = m.reward(&b, s.steps()[0]).unwrap();
        assert_eq!(evaluate_objective(&m, &b, &s).unwrap(), direct);
        assert_eq!(
            truncated_objective(&m, &b, &seq("R+D,L+U"), 1).unwrap(),
            direct
        );
    }

    #[test]
    fn two_step_objective_matches_hand_enumerated_branches() {
        // 2x2, agents at 0, cells 1 and 2 uncertain (p = 0.5), others certain.
        let m = entropy_model(2, 2, 0.75);
        let b = Belief::new(vec![0.0, 0.5, 0.5, 1.0], [0, 0]).unwrap();
        let s = seq("R+D,D+R");
        // Oracle: agent one visits 1 then 3, agent two visits 2 then 3.
        // Step 0 looks at cells 1 and 2 once each; step 1 looks at cell 3
        // (certain) twice, so the step-1 belief keeps those posteriors.
        let h_after_one = 0.5 * bernoulli_entropy(0.75) + 0.5 * bernoulli_entropy(0.75);
        let mut oracle_step0 = 0.0;
        let mut oracle_step1 = 0.0;
        for o1 in [true, false] {
            for o2 in [true, false] {
                let w = 0.25; // each look at a fair cell is a fair coin
                let p1 = if o1 { 0.75 } else { 0.25 };
                let p2 = if o2 { 0.75 } else { 0.25 };
                let h = bernoulli_entropy(p1) + bernoulli_entropy(p2);
                oracle_step0 += w * -h;
                oracle_step1 += w * -h;
            }
        }
        assert_abs_diff_eq!(oracle_step0, -2.0 * h_after_one, epsilon = 1e-12);
        let value = evaluate_objective(&m, &b, &s).unwrap();
        assert_abs_diff_eq!(value, oracle_step0 + oracle_step1, epsilon = 1e-12);
    }

    #[test]
    fn constant_state_reward_accumulates_the_horizon() {
        let table = StateTable::constant(4, 1.0).unwrap();
        let m = ModelSpec::new(
            Grid::new(2, 2).unwrap(),
            Accuracy::new(0.75).unwrap(),
            RewardSpec::StateTable(table),
        )
        .unwrap();
        let b = Belief::new(vec![0.2, 0.4, 0.6, 0.8], [0, 0]).unwrap();
        assert_abs_diff_eq!(
            evaluate_objective(&m, &b, &seq("R+D,D+L")).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            evaluate_objective(&m, &b, &seq("R+R,D+D,U+U")).unwrap(),
            3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn truncation_bounds() {
        let m = entropy_model(2, 2, 0.75);
        let b = Belief::new(vec![0.5; 4], [0, 0]).unwrap();
        let s = seq("R+D,D+U");
        assert!(matches!(
            truncated_objective(&m, &b, &s, 0),
            Err(Error::TruncationOutOfRange { .. })
        ));
        assert!(matches!(
            truncated_objective(&m, &b, &s, 3),
            Err(Error::TruncationOutOfRange { .. })
        ));
        assert_eq!(
            truncated_objective(&m, &b, &s, 2).unwrap(),
            evaluate_objective(&m, &b, &s).unwrap()
        );
    }

    #[test]
    fn argmax_examples() {
        let m = entropy_model(2, 2, 0.75);
        let b = Belief::new(vec![0.5; 4], [0, 0]).unwrap();
        let only = vec![seq("D+R")];
        assert_eq!(argmax_action(&m, &b, &only).unwrap(), only[0]);
        assert!(matches!(
            argmax_action(&m, &b, &[]),
            Err(Error::NoCandidates)
        ));
        // Symmetric beliefs: D+R and R+D tie exactly; the smaller wins.
        let tied = vec![seq("R+D"), seq("D+R")];
        assert_eq!(argmax_action(&m, &b, &tied).unwrap(), seq("D+R"));
        let (last, _) = argmax_with(
            &m,
            &b,
            &candidate_sequences(&m.grid, [0, 0], 1).unwrap(),
            Evaluator::Auto,
            TieBreak::Last,
        )
        .unwrap();
        assert_eq!(last, seq("R+D"));
    }

    #[test]
    fn single_uncertain_cell_attracts_both_agents() {
        let m = entropy_model(2, 2, 0.75);
        let b = Belief::new(vec![1.0, 0.0, 0.5, 1.0], [0, 0]).unwrap();
        let c = candidate_sequences(&m.grid, [0, 0], 1).unwrap();
        assert_eq!(argmax_action(&m, &b, &c).unwrap(), seq("D+D"));
    }

    #[test]
    fn observation_tree_weights_sum_to_one() {
        let m = entropy_model(2, 2, 0.8);
        let b = Belief::new(vec![0.1, 0.35, 0.6, 0.95], [0, 0]).unwrap();
        let mut frontier = vec![(1.0, b)];
        for cells in [[1, 2], [3, 3], [1, 1]] {
            let mut next = Vec::new();
            for (w, belief) in &frontier {
                for (bw, _, nb) in m.observation_branches(belief, cells).unwrap() {
                    next.push((w * bw, nb));
                }
            }
            let total: f64 = next.iter().map(|(w, _)| w).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
            frontier = next;
        }
    }

    #[test]
    fn expected_entropy_oracle() {
        let a = Accuracy::new(0.75).unwrap();
        assert_eq!(
            expected_posterior_entropy(0.3, a, 0, a, 0),
            bernoulli_entropy(0.3)
        );
        // One look at p=0.5: posterior is 0.75 or 0.25 either way.
        assert_abs_diff_eq!(
            expected_posterior_entropy(0.5, a, 1, a, 0),
            bernoulli_entropy(0.75),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            expected_posterior_entropy(0.5, a, 1, a, 0),
            expected_posterior_entropy(0.5, a, 0, a, 1),
            epsilon = 1e-15
        );
    }

    #[test]
    fn reuse_rejects_entropy_rewards() {
        let m = entropy_model(2, 2, 0.75);
        let b = Belief::new(vec![0.5; 4], [0, 0]).unwrap();
        assert!(matches!(
            evaluate_objective_reuse(&m, &b, &[], &seq("R+R"), &GCache::new()),
            Err(Error::UnsupportedReward)
        ));
    }

    #[test]
    fn reuse_without_delta_is_the_plain_expectation() {
        let table =
            StateTable::from_fn(4, |x, a| (x as f64) * 0.1 - a.index() as f64 * 0.01).unwrap();
        let m = ModelSpec::new(
            Grid::new(2, 2).unwrap(),
            Accuracy::new(0.75).unwrap(),
            RewardSpec::StateTable(table.clone()),
        )
        .unwrap();
        let b = Belief::new(vec![0.2, 0.4, 0.6, 0.8], [0, 0]).unwrap();
        let s = seq("R+D,L+U");
        let expected: f64 = b
            .states()
            .unwrap()
            .map(|(x, p)| p * g_value(&table, x, &s))
            .sum();
        let got = evaluate_objective_reuse(&m, &b, &[], &s, &GCache::new()).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);

        let zero = ModelSpec::new(
            m.grid,
            m.accuracy[0],
            RewardSpec::StateTable(StateTable::constant(4, 0.0).unwrap()),
        )
        .unwrap();
        assert_eq!(
            evaluate_objective_reuse(&zero, &b, &[], &s, &GCache::new()).unwrap(),
            0.0
        );
    }

    mod props {
        use super::*;
        use crate::history::{condition_belief, HistorySet, KnownTrace};
        use proptest::prelude::*;

        fn value(f: bool) -> CellValue {
            if f {
                CellValue::Fire
            } else {
                CellValue::Empty
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn factored_matches_tree(
                probs in proptest::collection::vec(0.0f64..=1.0, 4),
                alpha in 0.55f64..=1.0,
                start in 0usize..4,
                pick in 0usize..1000,
                horizon in 1usize..=3,
            ) {
                let m = entropy_model(2, 2, alpha);
                let b = Belief::new(probs, [start, 3 - start]).unwrap();
                let cands = candidate_sequences(&m.grid, b.positions(), horizon).unwrap();
                let s = &cands[pick % cands.len()];
                let tree = evaluate_objective(&m, &b, s).unwrap();
                let mut scorer = Scorer::new(&m, &b, Evaluator::FactoredEntropy, horizon).unwrap();
                let fast = scorer.objective(s).unwrap();
                prop_assert!((tree - fast).abs() <= 1e-9, "tree {tree} factored {fast}");
            }

            #[test]
            fn reuse_matches_direct_conditioning(
                probs in proptest::collection::vec(0.05f64..0.95, 4),
                alpha in 0.55f64..0.99,
                rewards in proptest::collection::vec(-1.0f64..1.0, 256),
                obs in proptest::collection::vec(any::<bool>(), 3),
                pick in 0usize..1000,
            ) {
                let table = StateTable::new(4, rewards).unwrap();
                let m = ModelSpec::new(Grid::new(2, 2).unwrap(), Accuracy::new(alpha).unwrap(), RewardSpec::StateTable(table)).unwrap();
                let trace = KnownTrace::new(vec![[1, 2], [3, 1], [0, 0]]).unwrap();
                let prior = Belief::new(probs, [0, 0]).unwrap();
                let delta = vec![
                    ObservationRecord { time: 0, agent: Agent::One, cell: 1, value: value(obs[0]) },
                    ObservationRecord { time: 0, agent: Agent::Two, cell: 2, value: value(obs[1]) },
                    ObservationRecord { time: 1, agent: Agent::Two, cell: 1, value: value(obs[2]) },
                ];
                let mut full = HistorySet::new(Agent::One, trace);
                full.common = delta.clone();
                let conditioned = condition_belief(&m, &prior, &full).unwrap();
                let cands = candidate_sequences(&m.grid, [0, 0], 2).unwrap();
                let s = &cands[pick % cands.len()];
                let direct = evaluate_objective(&m, &conditioned, s).unwrap();
                let cold = GCache::new();
                let reuse = evaluate_objective_reuse(&m, &prior.clone().with_positions([0, 0]), &delta, s, &cold).unwrap();
                prop_assert!((direct - reuse).abs() <= 1e-9);
                let warm = evaluate_objective_reuse(&m, &prior, &delta, s, &cold).unwrap();
                prop_assert_eq!(warm.to_bits(), reuse.to_bits());

                // Dropping eta leaves the argmax unchanged.
                let normalized = reuse_scores(&m, &prior, &delta, &cands, &cold, true).unwrap();
                let raw = reuse_scores(&m, &prior, &delta, &cands, &cold, false).unwrap();
                prop_assert_eq!(argmax_index(&normalized, TieBreak::First), argmax_index(&raw, TieBreak::First));
            }
        }
    }
}
