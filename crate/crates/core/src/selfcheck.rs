//! Randomized self-verification suites.
//!
//! Every suite is seeded, so a failure reproduces exactly.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::PlannerKind;
use crate::engine::{
    mloas_select, optimal_action_distribution, performance_gap_distribution,
    rprime_selection_distribution, PlanningContext, Threshold,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::firegrid::GridScenario;
use crate::harness::{run_experiment, run_experiment_with, write_outputs, ExperimentConfig};
use crate::history::{
    condition_belief, enumerate_deltas, enumerate_other_deltas, merge_histories, HistorySet,
    KnownTrace, ObservationRecord, Slot, Time,
};
use crate::model::{
    Accuracy, Agent, Belief, CellId, CellValue, Grid, ModelSpec, RewardSpec, StateTable, NUM_AGENTS,
};
use crate::planner::{
    candidate_sequences, evaluate_objective, evaluate_objective_reuse, GCache, TieBreak,
};

/// Distributions must sum to one within this.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
/// Allowed gap between Monte-Carlo frequency and predicted consistency.
pub const MRAC_TOLERANCE: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Reuse,
    Prop1,
    Mrac,
    FullComm,
    Normalization,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Reuse,
        Suite::Prop1,
        Suite::Mrac,
        Suite::FullComm,
        Suite::Normalization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Reuse => "reuse",
            Suite::Prop1 => "prop1",
            Suite::Mrac => "mrac",
            Suite::FullComm => "fullcomm",
            Suite::Normalization => "normalization",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite {s:?}; expected one of reuse, prop1, mrac, fullcomm, normalization")))
    }
}

#[derive(Debug, Clone)]
pub struct SelfcheckOptions {
    pub seed: u64,
    /// Flip the tie-break rule: everywhere in the deterministic-optimum and
    /// full-communication suites, and only in the mimicked agent in the MRAC
    /// suite.
    pub fault_tiebreak: bool,
    pub execution: Execution,
    /// Scenario of the full-communication suite.
    pub fullcomm_scenario: GridScenario,
    pub reuse_cases: usize,
    pub prop1_cases: usize,
    pub mrac_scenarios: usize,
    pub mrac_draws: usize,
    pub fullcomm_runs: usize,
}

impl Default for SelfcheckOptions {
    fn default() -> Self {
        SelfcheckOptions {
            seed: 2024,
            fault_tiebreak: false,
            execution: Execution::default(),
            fullcomm_scenario: GridScenario::builtin_4x4(),
            reuse_cases: 200,
            prop1_cases: 500,
            mrac_scenarios: 20,
            mrac_draws: 10_000,
            fullcomm_runs: 50,
        }
    }
}

impl SelfcheckOptions {
    fn tie_break(&self) -> TieBreak {
        if self.fault_tiebreak {
            TieBreak::Last
        } else {
            TieBreak::First
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub cases: usize,
    pub failures: usize,
    pub detail: String,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} cases, {} failures; {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.cases,
            self.failures,
            self.detail
        )
    }
}

pub fn run_suite(suite: Suite, opts: &SelfcheckOptions) -> Result<SuiteReport> {
    match suite {
        Suite::Reuse => reuse_suite(opts),
        Suite::Prop1 => prop1_suite(opts),
        Suite::Mrac => mrac_suite(opts),
        Suite::FullComm => fullcomm_suite(opts),
        Suite::Normalization => normalization_suite(opts),
    }
}

fn report(suite: Suite, cases: usize, failures: usize, detail: String) -> SuiteReport {
    SuiteReport {
        suite,
        passed: failures == 0,
        cases,
        failures,
        detail,
    }
}

/// A random instance: model, prior, and both agents' histories built from a
/// hidden true state.
struct Instance {
    model: ModelSpec,
    prior: Belief,
    histories: [HistorySet; NUM_AGENTS],
    horizon: usize,
}

fn random_grid(rng: &mut ChaCha8Rng) -> Grid {
    let dims = [(2, 2), (2, 2), (2, 1), (1, 2)];
    let &(w, h) = dims.choose(rng).expect("non-empty");
    Grid::new(w, h).expect("valid grid")
}

fn random_walk(grid: &Grid, len: usize, rng: &mut ChaCha8Rng) -> Vec<CellId> {
    let mut cell = rng.random_range(0..grid.num_cells());
    let mut out = vec![cell];
    for _ in 1..len {
        let moves: Vec<_> = grid.legal_moves(cell).collect();
        if let Some(&mv) = moves.choose(rng) {
            cell = grid.step(cell, mv).expect("legal");
        }
        out.push(cell);
    }
    out
}

fn random_prior(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // Occasionally certain cells, to exercise degenerate branches.
            match rng.random_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => (rng.random_range(1..20) as f64) * 0.05,
            }
        })
        .collect()
}

/// Builds histories where agent `i` privately observed times `0..slots[i]`
/// of a trace that ends at the current positions.
fn instance_from(
    model: ModelSpec,
    prior_probs: Vec<f64>,
    walks: [Vec<CellId>; NUM_AGENTS],
    slots: [usize; NUM_AGENTS],
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Instance> {
    let len = walks[0].len();
    let positions: Vec<[CellId; NUM_AGENTS]> =
        (0..len).map(|t| [walks[0][t], walks[1][t]]).collect();
    let trace = KnownTrace::new(positions)?;
    let prior = Belief::new(prior_probs, trace.current())?;
    // Hidden truth drawn from the prior, readings through the sensor model.
    let truth: Vec<bool> = prior.probs().iter().map(|&p| rng.random_bool(p)).collect();
    let mut histories = [
        HistorySet::new(Agent::One, trace.clone()),
        HistorySet::new(Agent::Two, trace),
    ];
    for agent in Agent::BOTH {
        let i = agent.index();
        for (t, &cell) in walks[i].iter().enumerate().take(slots[i]) {
            let right = rng.random_bool(model.accuracy_of(agent).get());
            let fire = truth[cell] == right;
            let value = if fire {
                CellValue::Fire
            } else {
                CellValue::Empty
            };
            let time = t as Time;
            histories[i].push_own(ObservationRecord {
                time,
                agent,
                cell,
                value,
            });
            histories[1 - i].push_other_slot(Slot { time, agent, cell });
        }
    }
    Ok(Instance {
        model,
        prior,
        histories,
        horizon,
    })
}

fn random_instance(rng: &mut ChaCha8Rng, max_slots: usize) -> Result<Instance> {
    let grid = random_grid(rng);
    let accuracy = Accuracy::new(0.55 + 0.05 * rng.random_range(0..9) as f64)?;
    let model = ModelSpec::new(grid, accuracy, RewardSpec::NegEntropy)?;
    let slots = [
        rng.random_range(0..=max_slots),
        rng.random_range(0..=max_slots),
    ];
    let len = slots[0].max(slots[1]) + 1;
    let walks = [random_walk(&grid, len, rng), random_walk(&grid, len, rng)];
    let horizon = rng.random_range(1..=2);
    let prior = random_prior(grid.num_cells(), rng);
    instance_from(model, prior, walks, slots, horizon, rng)
}

fn reuse_suite(opts: &SelfcheckOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5245_5553);
    let mut failures = 0;
    let mut worst = 0.0f64;
    let mut cold_mismatch = 0;
    for _ in 0..opts.reuse_cases {
        let grid = random_grid(&mut rng);
        let n = grid.num_cells();
        let table = StateTable::from_fn(n, |_, _| rng.random_range(-1.0..1.0))?;
        let accuracy = Accuracy::new(0.55 + 0.05 * rng.random_range(0..9) as f64)?;
        let model = ModelSpec::new(grid, accuracy, RewardSpec::StateTable(table))?;
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let len = rng.random_range(1..=3);
        let walks = [
            random_walk(&grid, len + 1, &mut rng),
            random_walk(&grid, len + 1, &mut rng),
        ];
        let positions: Vec<[CellId; 2]> = (0..=len).map(|t| [walks[0][t], walks[1][t]]).collect();
        let trace = KnownTrace::new(positions)?;
        let prior = Belief::new(probs, trace.current())?;
        let mut common = HistorySet::new(Agent::One, trace);
        let mut delta = Vec::new();
        #[allow(clippy::needless_range_loop)]
        for t in 0..len {
            for agent in Agent::BOTH {
                let value = if rng.random_bool(0.5) {
                    CellValue::Fire
                } else {
                    CellValue::Empty
                };
                let rec = ObservationRecord {
                    time: t as Time,
                    agent,
                    cell: walks[agent.index()][t],
                    value,
                };
                if rng.random_bool(0.5) {
                    common.push_common(rec);
                } else {
                    delta.push(rec);
                }
            }
        }
        let common_belief = condition_belief(&model, &prior, &common)?;
        let mut full = common.clone();
        for rec in &delta {
            full.push_common(*rec);
        }
        let direct_belief = condition_belief(&model, &prior, &full)?;
        let horizon = rng.random_range(1..=2);
        let candidates = candidate_sequences(&model.grid, full.trace.current(), horizon)?;
        let seq = candidates.choose(&mut rng).expect("non-empty");
        let direct = evaluate_objective(&model, &direct_belief, seq)?;
        let cache = GCache::new();
        let cold = evaluate_objective_reuse(&model, &common_belief, &delta, seq, &cache)?;
        let warm = evaluate_objective_reuse(&model, &common_belief, &delta, seq, &cache)?;
        let err = (cold - direct).abs();
        worst = worst.max(err);
        if err > 1e-9 {
            failures += 1;
        }
        if warm.to_bits() != cold.to_bits() {
            cold_mismatch += 1;
            failures += 1;
        }
    }
    Ok(report(
        Suite::Reuse,
        opts.reuse_cases,
        failures,
        format!("max |reuse - direct| = {worst:.3e}; warm/cold mismatches {cold_mismatch}"),
    ))
}

fn prop1_suite(opts: &SelfcheckOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5052_4f50);
    let tie = opts.tie_break();
    let mut failures = 0;
    let mut deterministic = 0;
    for _ in 0..opts.prop1_cases {
        let inst = random_instance(&mut rng, 2)?;
        let ctx = PlanningContext {
            tie_break: tie,
            mimic_tie_break: tie,
            execution: opts.execution,
            ..PlanningContext::new(&inst.model, &inst.prior, inst.horizon)
        };
        let full = merge_histories(&inst.histories);
        let truth_argmax = ctx.argmax(&full, &ctx.candidates(&full)?)?;
        for h in &inst.histories {
            let dist = optimal_action_distribution(&ctx, h)?;
            if dist.is_deterministic() {
                deterministic += 1;
                let (a, _) = dist.mode().expect("non-empty");
                if *a != truth_argmax {
                    failures += 1;
                }
            }
        }
    }
    Ok(report(
        Suite::Prop1,
        opts.prop1_cases,
        failures,
        format!("{deterministic} agent views with a deterministic optimal action"),
    ))
}

/// Fixed MRAC scenarios. Even indices use beliefs symmetric in the two cells
/// next to the start, where exact ties are common.
fn mrac_instance(index: usize, rng: &mut ChaCha8Rng) -> Result<Instance> {
    if index.is_multiple_of(2) {
        let grid = Grid::new(2, 2)?;
        let model = ModelSpec::new(grid, Accuracy::new(0.75)?, RewardSpec::NegEntropy)?;
        let side = 0.05 * rng.random_range(2..18) as f64;
        let prior = vec![
            0.05 * rng.random_range(1..19) as f64,
            side,
            side,
            0.05 * rng.random_range(1..19) as f64,
        ];
        let slots = [1, rng.random_range(1..=2)];
        let walks = [vec![1, 1, 0], vec![2, 2, 0]];
        instance_from(model, prior, walks, slots, 1, rng)
    } else {
        random_instance(rng, 2)
    }
}

fn mrac_suite(opts: &SelfcheckOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4d52_4143);
    let epsilons = [0.3, 0.5, 0.8];
    let mut failures = 0;
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut attempts = 0;
    while done < opts.mrac_scenarios {
        attempts += 1;
        if attempts > opts.mrac_scenarios * 50 {
            return Err(Error::Config(
                "could not generate enough MRAC scenarios".into(),
            ));
        }
        let inst = mrac_instance(done, &mut rng)?;
        let own = &inst.histories[0];
        if own.other_slots.is_empty() {
            continue;
        }
        let epsilon = Threshold::epsilon(epsilons[done % epsilons.len()])?;
        let honest = PlanningContext {
            execution: opts.execution,
            ..PlanningContext::new(&inst.model, &inst.prior, inst.horizon)
        };
        let reporting = PlanningContext {
            mimic_tie_break: opts.tie_break(),
            ..honest
        };
        let selection = mloas_select(&optimal_action_distribution(&honest, own)?, epsilon)?;
        let Some(action) = selection.action else {
            continue;
        };
        let p_mrac = rprime_selection_distribution(&reporting, own, epsilon)?.mass_of(&action);

        // The other agent's true unshared values, drawn from own's belief.
        let deltas = enumerate_other_deltas(&inst.model, &inst.prior, own)?;
        let mut memo: HashMap<usize, bool> = HashMap::new();
        let mut hits = 0usize;
        for _ in 0..opts.mrac_draws {
            let mut u: f64 = rng.random();
            let mut pick = deltas.len() - 1;
            for (i, d) in deltas.iter().enumerate() {
                if u < d.weight {
                    pick = i;
                    break;
                }
                u -= d.weight;
            }
            let agrees = match memo.get(&pick) {
                Some(&v) => v,
                None => {
                    let theirs = own.mirrored(&deltas[pick].records);
                    let sel =
                        mloas_select(&optimal_action_distribution(&honest, &theirs)?, epsilon)?;
                    let v = sel.action.as_ref() == Some(&action);
                    memo.insert(pick, v);
                    v
                }
            };
            hits += usize::from(agrees);
        }
        let freq = hits as f64 / opts.mrac_draws as f64;
        let err = (freq - p_mrac).abs();
        worst = worst.max(err);
        if err > MRAC_TOLERANCE {
            failures += 1;
        }
        done += 1;
    }
    Ok(report(
        Suite::Mrac,
        done,
        failures,
        format!("{} draws per scenario; max |frequency - p_mrac| = {worst:.4} (tolerance {MRAC_TOLERANCE})", opts.mrac_draws),
    ))
}

fn fullcomm_suite(opts: &SelfcheckOptions) -> Result<SuiteReport> {
    let scenario = &opts.fullcomm_scenario;
    let seeds: Vec<u64> = (0..opts.fullcomm_runs as u64)
        .map(|i| opts.seed.wrapping_add(i))
        .collect();
    let doacpol = PlannerKind::Doacpol {
        epsilon: Threshold::epsilon(0.8)?,
        delta: Threshold::delta(0.1)?,
    };
    let mut forced = ExperimentConfig::for_scenario(scenario, doacpol);
    forced.force_comm = true;
    forced.execution = opts.execution;
    let mut central = ExperimentConfig::for_scenario(scenario, PlannerKind::MpomdpOl);
    central.execution = opts.execution;
    let tie = opts.tie_break();
    let a = run_experiment_with(scenario, &forced, &seeds, tie)?;
    let b = run_experiment_with(scenario, &central, &seeds, tie)?;
    let failures = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.action_trace() != y.action_trace())
        .count();
    Ok(report(
        Suite::FullComm,
        seeds.len(),
        failures,
        format!(
            "{} sessions per run compared action by action",
            scenario.sessions()
        ),
    ))
}

fn check_total(total: f64, worst: &mut f64, failures: &mut usize) {
    let err = (total - 1.0).abs();
    *worst = worst.max(err);
    if err > NORMALIZATION_TOLERANCE {
        *failures += 1;
    }
}

fn unique_temp_dir(tag: &str) -> std::path::PathBuf {
    use std::sync::atomic::{AtomicUsize, Ordering};
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!("doacpol-{tag}-{}-{n}", std::process::id()))
}

fn files_in(dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let bytes = std::fs::read(entry.path()).map_err(|e| Error::io(&entry.path(), e))?;
        out.push((entry.file_name().to_string_lossy().into_owned(), bytes));
    }
    out.sort();
    Ok(out)
}

fn normalization_suite(opts: &SelfcheckOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4e4f_524d);
    let mut failures = 0;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let epsilon = Threshold::epsilon(0.5)?;
    for _ in 0..100 {
        let inst = random_instance(&mut rng, 2)?;
        let ctx = PlanningContext {
            execution: opts.execution,
            ..PlanningContext::new(&inst.model, &inst.prior, inst.horizon)
        };
        for h in &inst.histories {
            let belief = condition_belief(&inst.model, &inst.prior, h)?;
            let space = enumerate_deltas(&inst.model, &belief, &h.other_slots)?;
            check_total(
                space.iter().map(|d| d.weight).sum(),
                &mut worst,
                &mut failures,
            );
            let dist = optimal_action_distribution(&ctx, h)?;
            check_total(dist.total(), &mut worst, &mut failures);
            let rp = rprime_selection_distribution(&ctx, h, epsilon)?;
            check_total(rp.total(), &mut worst, &mut failures);
            let (a, _) = dist.mode().expect("non-empty");
            let gap = performance_gap_distribution(&ctx, h, a, 1)?;
            check_total(gap.total(), &mut worst, &mut failures);
            checked += 4;
        }
    }

    // Identical configuration and seeds give byte-identical output files.
    let mut identical = 0;
    let scenarios = [
        (GridScenario::builtin_2x2(), "DOACPOL-0.3-0.05"),
        (GridScenario::builtin_4x4(), "DOACPOL-0.8-0.1"),
    ];
    for (scenario, label) in &scenarios {
        let mut cfg = ExperimentConfig::for_scenario(scenario, label.parse()?);
        cfg.execution = opts.execution;
        let seeds: Vec<u64> = (0..3).map(|i| opts.seed + i).collect();
        let dirs = [unique_temp_dir("norm"), unique_temp_dir("norm")];
        for d in &dirs {
            write_outputs(d, &run_experiment(scenario, &cfg, &seeds)?)?;
        }
        let same = files_in(&dirs[0])? == files_in(&dirs[1])?;
        for d in &dirs {
            let _ = std::fs::remove_dir_all(d);
        }
        if same {
            identical += 1;
        } else {
            failures += 1;
        }
    }
    Ok(report(
        Suite::Normalization,
        checked + scenarios.len(),
        failures,
        format!(
            "max |total - 1| = {worst:.3e}; {identical}/{} repeated experiments byte-identical",
            scenarios.len()
        ),
    ))
}
