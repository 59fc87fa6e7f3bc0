//! Two-agent Dec-POMDP primitives for a static binary grid.
//!
//! The hidden state is a vector of independent binary cells (`Empty`/`Fire`)
//! that never changes; agent positions are deterministic and known to both
//! agents. A belief is therefore a product of Bernoullis plus the two known
//! positions, and conditioning on a history reduces to per-cell Bayes updates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_AGENTS: usize = 2;

/// Largest grid for which the state space `2^cells` is enumerated explicitly.
pub const MAX_ENUMERATED_CELLS: usize = 20;

pub type CellId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Agent {
    One,
    Two,
}

impl Agent {
    pub const BOTH: [Agent; NUM_AGENTS] = [Agent::One, Agent::Two];

    pub fn index(self) -> usize {
        match self {
            Agent::One => 0,
            Agent::Two => 1,
        }
    }

    pub fn other(self) -> Agent {
        match self {
            Agent::One => Agent::Two,
            Agent::Two => Agent::One,
        }
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

/// Value of a cell, used both for the hidden state and for observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellValue {
    Empty,
    Fire,
}

impl CellValue {
    pub const BOTH: [CellValue; 2] = [CellValue::Empty, CellValue::Fire];

    pub fn is_fire(self) -> bool {
        self == CellValue::Fire
    }

    pub fn flipped(self) -> CellValue {
        match self {
            CellValue::Empty => CellValue::Fire,
            CellValue::Fire => CellValue::Empty,
        }
    }
}

/// Symmetric observation accuracy `P(obs = v | cell = v)`, in `(0.5, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Accuracy(f64);

impl Accuracy {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.5 && alpha <= 1.0 {
            Ok(Accuracy(alpha))
        } else {
            Err(Error::InvalidAccuracy(alpha))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `P(obs | cell state)`.
    pub fn likelihood(self, obs: CellValue, state: CellValue) -> f64 {
        if obs == state {
            self.0
        } else {
            1.0 - self.0
        }
    }
}

impl TryFrom<f64> for Accuracy {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Accuracy::new(v)
    }
}

impl From<Accuracy> for f64 {
    fn from(a: Accuracy) -> f64 {
        a.0
    }
}

/// Individual agent move on the 4-neighbour grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn index(self) -> usize {
        match self {
            Move::Up => 0,
            Move::Down => 1,
            Move::Left => 2,
            Move::Right => 3,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Move::Up => 'U',
            Move::Down => 'D',
            Move::Left => 'L',
            Move::Right => 'R',
        }
    }

    pub fn from_letter(c: char) -> Option<Move> {
        match c.to_ascii_uppercase() {
            'U' => Some(Move::Up),
            'D' => Some(Move::Down),
            'L' => Some(Move::Left),
            'R' => Some(Move::Right),
            _ => None,
        }
    }
}

/// One step of a joint action: agent one's move, then agent two's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JointMove(pub [Move; NUM_AGENTS]);

impl JointMove {
    pub const COUNT: usize = 16;

    pub fn new(first: Move, second: Move) -> Self {
        JointMove([first, second])
    }

    pub fn of(self, agent: Agent) -> Move {
        self.0[agent.index()]
    }

    pub fn index(self) -> usize {
        self.0[0].index() * 4 + self.0[1].index()
    }
}

impl fmt::Display for JointMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.0[0].letter(), self.0[1].letter())
    }
}

/// Rectangular grid; cells are numbered row-major from the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
}

impl Grid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Scenario(format!("grid {width}x{height} is empty")));
        }
        Ok(Grid { width, height })
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn check_cell(&self, cell: CellId) -> Result<()> {
        if cell < self.num_cells() {
            Ok(())
        } else {
            Err(Error::InvalidCell {
                cell,
                num_cells: self.num_cells(),
            })
        }
    }

    pub fn coords(&self, cell: CellId) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    pub fn cell_at(&self, row: usize, col: usize) -> CellId {
        row * self.width + col
    }

    /// Destination of `mv` from `cell`, or `None` when it would leave the grid.
    pub fn step(&self, cell: CellId, mv: Move) -> Option<CellId> {
        let (row, col) = self.coords(cell);
        let (row, col) = match mv {
            Move::Up => (row.checked_sub(1)?, col),
            Move::Down => (row + 1, col),
            Move::Left => (row, col.checked_sub(1)?),
            Move::Right => (row, col + 1),
        };
        (row < self.height && col < self.width).then(|| self.cell_at(row, col))
    }

    pub fn legal_moves(&self, cell: CellId) -> impl Iterator<Item = Move> + '_ {
        Move::ALL
            .into_iter()
            .filter(move |&mv| self.step(cell, mv).is_some())
    }

    pub fn are_adjacent(&self, a: CellId, b: CellId) -> bool {
        Move::ALL.into_iter().any(|mv| self.step(a, mv) == Some(b))
    }
}

/// Binary entropy in nats, with `0 ln 0 = 0`.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    term(p) + term(1.0 - p)
}

/// Probability of a full state hypothesis, encoded as a bitmask with bit `c`
/// set when cell `c` is on fire.
///
/// This is the interface a smoothing belief over state trajectories exposes;
/// with a static state the trajectory collapses to a single grid state.
pub trait StateDistribution {
    fn num_cells(&self) -> usize;
    fn state_probability(&self, state: u64) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    probs: Vec<f64>,
    positions: [CellId; NUM_AGENTS],
}

impl Belief {
    pub fn new(probs: Vec<f64>, positions: [CellId; NUM_AGENTS]) -> Result<Self> {
        if let Some(&bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidProbability {
                what: "cell prior",
                value: bad,
            });
        }
        for &pos in &positions {
            if pos >= probs.len() {
                return Err(Error::InvalidCell {
                    cell: pos,
                    num_cells: probs.len(),
                });
            }
        }
        Ok(Belief { probs, positions })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, cell: CellId) -> f64 {
        self.probs[cell]
    }

    pub fn positions(&self) -> [CellId; NUM_AGENTS] {
        self.positions
    }

    pub fn position(&self, agent: Agent) -> CellId {
        self.positions[agent.index()]
    }

    pub fn with_positions(mut self, positions: [CellId; NUM_AGENTS]) -> Self {
        self.positions = positions;
        self
    }

    pub(crate) fn set_positions(&mut self, positions: [CellId; NUM_AGENTS]) {
        self.positions = positions;
    }

    /// Total entropy over all cells, in nats.
    pub fn entropy(&self) -> f64 {
        self.probs.iter().map(|&p| bernoulli_entropy(p)).sum()
    }

    /// Inference-time reward of the belief: minus its entropy.
    pub fn neg_entropy(&self) -> f64 {
        -self.entropy()
    }

    fn check_cell(&self, cell: CellId) -> Result<()> {
        if cell < self.probs.len() {
            Ok(())
        } else {
            Err(Error::InvalidCell {
                cell,
                num_cells: self.probs.len(),
            })
        }
    }

    /// Bayes update of one cell in place.
    pub(crate) fn observe(
        &mut self,
        cell: CellId,
        obs: CellValue,
        accuracy: Accuracy,
    ) -> Result<()> {
        self.check_cell(cell)?;
        let p = self.probs[cell];
        let l_fire = accuracy.likelihood(obs, CellValue::Fire);
        let l_empty = accuracy.likelihood(obs, CellValue::Empty);
        let norm = l_fire * p + l_empty * (1.0 - p);
        if norm <= 0.0 {
            return Err(Error::ImpossibleObservation { cell });
        }
        self.probs[cell] = l_fire * p / norm;
        Ok(())
    }

    /// Marginal predictive probability of observing `obs` at `cell`.
    pub(crate) fn predictive(
        &self,
        cell: CellId,
        obs: CellValue,
        accuracy: Accuracy,
    ) -> Result<f64> {
        self.check_cell(cell)?;
        let p = self.probs[cell];
        Ok(accuracy.likelihood(obs, CellValue::Fire) * p
            + accuracy.likelihood(obs, CellValue::Empty) * (1.0 - p))
    }

    /// Iterates over every grid-state bitmask with its probability.
    pub fn states(&self) -> Result<impl Iterator<Item = (u64, f64)> + '_> {
        let n = self.probs.len();
        if n > MAX_ENUMERATED_CELLS {
            return Err(Error::StateSpaceTooLarge(n));
        }
        Ok((0..1u64 << n).map(move |mask| (mask, self.state_probability(mask))))
    }
}

impl StateDistribution for Belief {
    fn num_cells(&self) -> usize {
        self.probs.len()
    }

    fn state_probability(&self, state: u64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(c, &p)| if state >> c & 1 == 1 { p } else { 1.0 - p })
            .product()
    }
}

/// State-dependent reward `R(x, a)` stored densely as `[state][joint move]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTable {
    num_cells: usize,
    values: Vec<f64>,
}

impl StateTable {
    pub fn new(num_cells: usize, values: Vec<f64>) -> Result<Self> {
        if num_cells > MAX_ENUMERATED_CELLS {
            return Err(Error::StateSpaceTooLarge(num_cells));
        }
        let expected = (1usize << num_cells) * JointMove::COUNT;
        if values.len() != expected {
            return Err(Error::RewardTableShape {
                expected,
                found: values.len(),
            });
        }
        Ok(StateTable { num_cells, values })
    }

    pub fn constant(num_cells: usize, value: f64) -> Result<Self> {
        let len = (1usize << num_cells.min(MAX_ENUMERATED_CELLS)) * JointMove::COUNT;
        StateTable::new(num_cells, vec![value; len])
    }

    pub fn from_fn(num_cells: usize, mut f: impl FnMut(u64, JointMove) -> f64) -> Result<Self> {
        if num_cells > MAX_ENUMERATED_CELLS {
            return Err(Error::StateSpaceTooLarge(num_cells));
        }
        let mut values = Vec::with_capacity((1usize << num_cells) * JointMove::COUNT);
        for state in 0..1u64 << num_cells {
            for a in Move::ALL {
                for b in Move::ALL {
                    values.push(f(state, JointMove::new(a, b)));
                }
            }
        }
        StateTable::new(num_cells, values)
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn get(&self, state: u64, action: JointMove) -> f64 {
        self.values[state as usize * JointMove::COUNT + action.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RewardSpec {
    /// Expected negative entropy of the belief produced by the step's observations.
    NegEntropy,
    /// `E_{x ~ b}[R(x, a)]` for a tabulated `R`.
    StateTable(StateTable),
}

impl RewardSpec {
    pub fn is_state_dependent(&self) -> bool {
        matches!(self, RewardSpec::StateTable(_))
    }
}

/// Grid, per-agent observation models, and reward of the two-agent problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub grid: Grid,
    pub accuracy: [Accuracy; NUM_AGENTS],
    pub reward: RewardSpec,
}

impl ModelSpec {
    pub fn new(grid: Grid, accuracy: Accuracy, reward: RewardSpec) -> Result<Self> {
        if let RewardSpec::StateTable(table) = &reward {
            if table.num_cells() != grid.num_cells() {
                return Err(Error::Scenario(format!(
                    "reward table covers {} cells, grid has {}",
                    table.num_cells(),
                    grid.num_cells()
                )));
            }
        }
        Ok(ModelSpec {
            grid,
            accuracy: [accuracy; NUM_AGENTS],
            reward,
        })
    }

    pub fn accuracy_of(&self, agent: Agent) -> Accuracy {
        self.accuracy[agent.index()]
    }

    pub fn num_cells(&self) -> usize {
        self.grid.num_cells()
    }

    /// Posterior after `agent` observes `obs` at `cell`; other cells unchanged.
    pub fn belief_update(
        &self,
        belief: &Belief,
        agent: Agent,
        cell: CellId,
        obs: CellValue,
    ) -> Result<Belief> {
        let mut next = belief.clone();
        next.observe(cell, obs, self.accuracy_of(agent))?;
        Ok(next)
    }

    /// Predictive probability `P(obs | history)` of `agent` observing `obs` at `cell`.
    pub fn observation_likelihood(
        &self,
        belief: &Belief,
        agent: Agent,
        cell: CellId,
        obs: CellValue,
    ) -> Result<f64> {
        belief.predictive(cell, obs, self.accuracy_of(agent))
    }

    /// `P(o1, o2 | x)` for a known grid state, the product of the per-agent models.
    pub fn joint_observation_probability(
        &self,
        state: u64,
        cells: [CellId; NUM_AGENTS],
        obs: [CellValue; NUM_AGENTS],
    ) -> f64 {
        Agent::BOTH
            .into_iter()
            .map(|agent| {
                let i = agent.index();
                let truth = if state >> cells[i] & 1 == 1 {
                    CellValue::Fire
                } else {
                    CellValue::Empty
                };
                self.accuracy[i].likelihood(obs[i], truth)
            })
            .product()
    }

    /// Positions after both agents apply `action` from `from`.
    pub fn apply(
        &self,
        from: [CellId; NUM_AGENTS],
        action: JointMove,
    ) -> Option<[CellId; NUM_AGENTS]> {
        Some([
            self.grid.step(from[0], action.0[0])?,
            self.grid.step(from[1], action.0[1])?,
        ])
    }

    /// The four joint observation branches at `cells`: weight, observations,
    /// and the resulting belief. Branches of zero weight are omitted.
    pub fn observation_branches(
        &self,
        belief: &Belief,
        cells: [CellId; NUM_AGENTS],
    ) -> Result<Vec<(f64, [CellValue; NUM_AGENTS], Belief)>> {
        let mut out = Vec::with_capacity(4);
        for o1 in CellValue::BOTH {
            let w1 = self.observation_likelihood(belief, Agent::One, cells[0], o1)?;
            if w1 <= 0.0 {
                continue;
            }
            let b1 = self.belief_update(belief, Agent::One, cells[0], o1)?;
            for o2 in CellValue::BOTH {
                let w2 = self.observation_likelihood(&b1, Agent::Two, cells[1], o2)?;
                if w2 <= 0.0 {
                    continue;
                }
                let b2 = self.belief_update(&b1, Agent::Two, cells[1], o2)?;
                out.push((w1 * w2, [o1, o2], b2));
            }
        }
        Ok(out)
    }

    /// Per-step reward `rho(b, a)`.
    ///
    /// For `NegEntropy` the step is scored by the belief it produces: the
    /// expectation, over both agents' observations at their new cells, of the
    /// posterior's negative entropy. For `StateTable` it is `E_{x~b}[R(x, a)]`.
    pub fn reward(&self, belief: &Belief, action: JointMove) -> Result<f64> {
        match &self.reward {
            RewardSpec::NegEntropy => {
                let cells = self
                    .apply(belief.positions(), action)
                    .ok_or_else(|| Error::Config(format!("move {action} leaves the grid")))?;
                let mut total = 0.0;
                for (w, _, posterior) in self.observation_branches(belief, cells)? {
                    total += w * posterior.neg_entropy();
                }
                Ok(total)
            }
            RewardSpec::StateTable(table) => {
                let mut total = 0.0;
                for (state, p) in belief.states()? {
                    total += p * table.get(state, action);
                }
                Ok(total)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn model(alpha: f64) -> ModelSpec {
        ModelSpec::new(
            Grid::new(2, 2).unwrap(),
            Accuracy::new(alpha).unwrap(),
            RewardSpec::NegEntropy,
        )
        .unwrap()
    }

    fn belief(probs: &[f64]) -> Belief {
        Belief::new(probs.to_vec(), [0, 0]).unwrap()
    }

    #[test]
    fn bayes_update_examples() {
        let m = model(0.75);
        let b = m
            .belief_update(
                &belief(&[0.5, 0.5, 0.5, 0.5]),
                Agent::One,
                1,
                CellValue::Empty,
            )
            .unwrap();
        assert_abs_diff_eq!(b.prob(1), 0.25, epsilon = 1e-15);
        assert_eq!(b.prob(0), 0.5);

        let b = m
            .belief_update(
                &belief(&[0.8, 0.5, 0.5, 0.5]),
                Agent::Two,
                0,
                CellValue::Fire,
            )
            .unwrap();
        assert_abs_diff_eq!(b.prob(0), 0.6 / 0.65, epsilon = 1e-15);

        let b = m
            .belief_update(
                &belief(&[1.0, 0.5, 0.5, 0.5]),
                Agent::One,
                0,
                CellValue::Empty,
            )
            .unwrap();
        assert_eq!(b.prob(0), 1.0);
    }

    #[test]
    fn likelihood_examples() {
        let m = model(0.75);
        let b = belief(&[0.25, 0.5, 0.5, 0.5]);
        assert_abs_diff_eq!(
            m.observation_likelihood(&b, Agent::One, 0, CellValue::Empty)
                .unwrap(),
            0.625,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            m.observation_likelihood(&b, Agent::One, 0, CellValue::Fire)
                .unwrap(),
            0.375,
            epsilon = 1e-15
        );
        for alpha in [0.55, 0.75, 1.0] {
            let m = model(alpha);
            for obs in CellValue::BOTH {
                assert_abs_diff_eq!(
                    m.observation_likelihood(&b, Agent::Two, 1, obs).unwrap(),
                    0.5,
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let m = model(0.75);
        let b = belief(&[0.5; 4]);
        assert!(matches!(
            m.belief_update(&b, Agent::One, 7, CellValue::Fire),
            Err(Error::InvalidCell { cell: 7, .. })
        ));
        assert!(matches!(
            m.observation_likelihood(&b, Agent::One, 4, CellValue::Fire),
            Err(Error::InvalidCell { .. })
        ));
        for alpha in [0.5, 0.3, 1.01, f64::NAN] {
            assert!(Accuracy::new(alpha).is_err());
        }
        assert!(Belief::new(vec![0.5, 1.2], [0, 0]).is_err());
        // A perfect sensor cannot contradict a certain cell.
        let m = model(1.0);
        assert!(matches!(
            m.belief_update(
                &belief(&[1.0, 0.5, 0.5, 0.5]),
                Agent::One,
                0,
                CellValue::Empty
            ),
            Err(Error::ImpossibleObservation { cell: 0 })
        ));
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(
            belief(&[0.5; 4]).neg_entropy(),
            -4.0 * 2f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            belief(&[0.25, 0.0, 1.0, 1.0]).neg_entropy(),
            -0.562335,
            epsilon = 1e-6
        );
        assert_eq!(belief(&[0.0, 1.0, 0.0, 1.0]).neg_entropy(), 0.0);
    }

    #[test]
    fn constant_table_reward_is_the_constant() {
        let table = StateTable::constant(4, 2.5).unwrap();
        let m = ModelSpec::new(
            Grid::new(2, 2).unwrap(),
            Accuracy::new(0.75).unwrap(),
            RewardSpec::StateTable(table),
        )
        .unwrap();
        let r = m
            .reward(
                &belief(&[0.1, 0.7, 0.3, 0.99]),
                JointMove::new(Move::Right, Move::Down),
            )
            .unwrap();
        assert_abs_diff_eq!(r, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn neg_entropy_reward_scores_the_observed_posterior() {
        // Only cell 1 is uncertain; both agents look at it.
        let m = model(0.75);
        let b = belief(&[0.0, 0.5, 1.0, 1.0]);
        let r = m
            .reward(&b, JointMove::new(Move::Right, Move::Right))
            .unwrap();
        // Two looks at a fair coin: agree (p=0.625) -> 0.9 / 0.1, disagree -> 0.5.
        let expected = -(0.625 * bernoulli_entropy(0.9) + 0.375 * bernoulli_entropy(0.5));
        assert_abs_diff_eq!(r, expected, epsilon = 1e-12);
        // Looking elsewhere leaves the entropy untouched.
        let r = m
            .reward(&b, JointMove::new(Move::Down, Move::Down))
            .unwrap();
        assert_abs_diff_eq!(r, -2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn motion_respects_bounds() {
        let g = Grid::new(2, 2).unwrap();
        assert_eq!(g.step(0, Move::Right), Some(1));
        assert_eq!(g.step(0, Move::Down), Some(2));
        assert_eq!(g.step(3, Move::Down), None);
        assert_eq!(
            g.legal_moves(3).collect::<Vec<_>>(),
            vec![Move::Up, Move::Left]
        );
    }

    #[test]
    fn state_probabilities_sum_to_one() {
        let b = belief(&[0.1, 0.7, 0.3, 0.99]);
        let total: f64 = b.states().unwrap().map(|(_, p)| p).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn update_depends_on_counts_not_order(
                p in 0.01f64..0.99,
                alpha in 0.51f64..0.99,
                obs in proptest::collection::vec(any::<bool>(), 1..6),
            ) {
                let m = model(alpha);
                let v = |f: bool| if f { CellValue::Fire } else { CellValue::Empty };
                let mut forward = belief(&[p, 0.5, 0.5, 0.5]);
                for &o in &obs {
                    forward = m.belief_update(&forward, Agent::One, 0, v(o)).unwrap();
                }
                let mut backward = belief(&[p, 0.5, 0.5, 0.5]);
                for &o in obs.iter().rev() {
                    backward = m.belief_update(&backward, Agent::Two, 0, v(o)).unwrap();
                }
                prop_assert!((forward.prob(0) - backward.prob(0)).abs() < 1e-12);
            }

            #[test]
            fn likelihoods_are_complementary(p in 0.0f64..=1.0, alpha in 0.501f64..=1.0) {
                let m = model(alpha);
                let b = belief(&[p, 0.5, 0.5, 0.5]);
                let sum = m.observation_likelihood(&b, Agent::One, 0, CellValue::Fire).unwrap()
                    + m.observation_likelihood(&b, Agent::One, 0, CellValue::Empty).unwrap();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn more_certain_cell_means_higher_reward(p in 0.01f64..0.99, shrink in 0.05f64..0.95) {
                // Move p strictly toward the nearer endpoint.
                let q = if p < 0.5 { p * shrink } else { 1.0 - (1.0 - p) * shrink };
                let before = belief(&[p, 0.3, 0.3, 0.3]).neg_entropy();
                let after = belief(&[q, 0.3, 0.3, 0.3]).neg_entropy();
                prop_assert!(after > before);
            }

            #[test]
            fn joint_likelihood_factorizes(state in 0u64..16, c1 in 0usize..4, c2 in 0usize..4, o1: bool, o2: bool) {
                let m = model(0.8);
                let v = |f: bool| if f { CellValue::Fire } else { CellValue::Empty };
                let t = |c: usize| if state >> c & 1 == 1 { CellValue::Fire } else { CellValue::Empty };
                let joint = m.joint_observation_probability(state, [c1, c2], [v(o1), v(o2)]);
                let product = m.accuracy_of(Agent::One).likelihood(v(o1), t(c1))
                    * m.accuracy_of(Agent::Two).likelihood(v(o2), t(c2));
                prop_assert_eq!(joint, product);
            }
        }
    }
}
