//! Reference planners and a single dispatch point for all planner kinds.
//!
//! * MPOMDP-OL plans on the full joint history; all data is always shared.
//! * DecPOMDP-OL plans on the agent's own history and never communicates.
//! * RVerifyAC plans on the own history, then checks how likely the other
//!   agent is to pick the same action and communicates when that is too low.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{run_planning_session, AgentReport, PlanningContext, SessionConfig, Threshold};
use crate::error::{Error, Result};
use crate::history::{enumerate_other_deltas, merge_histories, synchronize, HistorySet};
use crate::model::NUM_AGENTS;
use crate::planner::JointActionSeq;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlannerKind {
    MpomdpOl,
    DecpomdpOl,
    #[serde(rename = "rverifyac")]
    RVerifyAc {
        epsilon: Threshold,
    },
    Doacpol {
        epsilon: Threshold,
        delta: Threshold,
    },
}

impl PlannerKind {
    /// True when new observations are shared the moment they are made.
    pub fn shares_everything(&self) -> bool {
        matches!(self, PlannerKind::MpomdpOl)
    }

    /// Short algorithm name as accepted on the command line.
    pub fn algorithm(&self) -> &'static str {
        match self {
            PlannerKind::MpomdpOl => "mpomdp-ol",
            PlannerKind::DecpomdpOl => "decpomdp-ol",
            PlannerKind::RVerifyAc { .. } => "rverifyac",
            PlannerKind::Doacpol { .. } => "doacpol",
        }
    }

    /// Builds a kind from an algorithm name; thresholds are ignored where unused.
    pub fn from_algorithm(name: &str, epsilon: f64, delta: f64) -> Result<Self> {
        Ok(match name {
            "mpomdp-ol" => PlannerKind::MpomdpOl,
            "decpomdp-ol" => PlannerKind::DecpomdpOl,
            "rverifyac" => PlannerKind::RVerifyAc {
                epsilon: Threshold::epsilon(epsilon)?,
            },
            "doacpol" => PlannerKind::Doacpol {
                epsilon: Threshold::epsilon(epsilon)?,
                delta: Threshold::delta(delta)?,
            },
            other => return Err(Error::Config(format!("unknown algorithm {other:?}"))),
        })
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlannerKind::MpomdpOl => f.write_str("MPOMDP-OL"),
            PlannerKind::DecpomdpOl => f.write_str("DecPOMDP-OL"),
            PlannerKind::RVerifyAc { epsilon } => write!(f, "RVerifyAC-{}", epsilon.get()),
            PlannerKind::Doacpol { epsilon, delta } => {
                write!(f, "DOACPOL-{}-{}", epsilon.get(), delta.get())
            }
        }
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    /// Parses the display labels, e.g. `DOACPOL-0.3-0.05` or `RVerifyAC-0.8`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown planner label {s:?}"));
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let parts: Vec<&str> = s.split('-').collect();
        match parts.as_slice() {
            ["MPOMDP", "OL"] => Ok(PlannerKind::MpomdpOl),
            ["DecPOMDP", "OL"] => Ok(PlannerKind::DecpomdpOl),
            ["RVerifyAC", e] => Ok(PlannerKind::RVerifyAc {
                epsilon: Threshold::epsilon(num(e)?)?,
            }),
            ["DOACPOL", e, d] => Ok(PlannerKind::Doacpol {
                epsilon: Threshold::epsilon(num(e)?)?,
                delta: Threshold::delta(num(d)?)?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Argmax on the full joint history.
pub fn mpomdp_ol_plan(
    ctx: &PlanningContext<'_>,
    full_history: &HistorySet,
) -> Result<JointActionSeq> {
    ctx.argmax(full_history, &ctx.candidates(full_history)?)
}

/// Argmax on the agent's own history.
pub fn decpomdp_ol_plan(ctx: &PlanningContext<'_>, own: &HistorySet) -> Result<JointActionSeq> {
    ctx.argmax(own, &ctx.candidates(own)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub action: JointActionSeq,
    /// Mass of realizations under which the other agent's own-history argmax
    /// equals `action`.
    pub consistency: f64,
    pub comm: bool,
}

/// Own-history argmax plus its consistency check; communicates iff the
/// consistency mass is at most `1 - ε`. ε = 1 tolerates any inconsistency and
/// never communicates.
pub fn rverifyac_plan(
    ctx: &PlanningContext<'_>,
    own: &HistorySet,
    epsilon: Threshold,
) -> Result<VerifyOutcome> {
    let candidates = ctx.candidates(own)?;
    let action = ctx.argmax(own, &candidates)?;
    let deltas = enumerate_other_deltas(ctx.model, ctx.prior, own)?;
    let agrees = ctx.execution.try_map(&deltas, |d| {
        Ok::<_, Error>(ctx.argmax(&own.mirrored(&d.records), &candidates)? == action)
    })?;
    let consistency: f64 = deltas
        .iter()
        .zip(agrees)
        .filter(|(_, ok)| *ok)
        .map(|(d, _)| d.weight)
        .sum();
    Ok(VerifyOutcome {
        comm: epsilon.get() < 1.0 && consistency <= 1.0 - epsilon.get(),
        action,
        consistency,
    })
}

/// Per-planner extras of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SessionDetails {
    Doacpol {
        reports: Box<[AgentReport; NUM_AGENTS]>,
    },
    RVerifyAc {
        consistency: [f64; NUM_AGENTS],
    },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSession {
    pub actions: [JointActionSeq; NUM_AGENTS],
    pub comm: bool,
    pub details: SessionDetails,
}

/// Runs one planning session of `kind`; synchronizes `histories` in place
/// whenever the planner communicates.
pub fn plan_session(
    kind: PlannerKind,
    ctx: &PlanningContext<'_>,
    histories: &mut [HistorySet; NUM_AGENTS],
    replan_stride: usize,
    force_comm: bool,
) -> Result<PlannedSession> {
    match kind {
        PlannerKind::MpomdpOl => {
            synchronize(histories);
            let a = mpomdp_ol_plan(ctx, &merge_histories(histories))?;
            Ok(PlannedSession {
                actions: [a.clone(), a],
                comm: true,
                details: SessionDetails::None,
            })
        }
        // Never communicates, forced or not.
        PlannerKind::DecpomdpOl => Ok(PlannedSession {
            actions: [
                decpomdp_ol_plan(ctx, &histories[0])?,
                decpomdp_ol_plan(ctx, &histories[1])?,
            ],
            comm: false,
            details: SessionDetails::None,
        }),
        PlannerKind::RVerifyAc { epsilon } => {
            let forced = force_comm;
            if forced {
                synchronize(histories);
            }
            let v1 = rverifyac_plan(ctx, &histories[0], epsilon)?;
            let v2 = rverifyac_plan(ctx, &histories[1], epsilon)?;
            let consistency = [v1.consistency, v2.consistency];
            if v1.comm || v2.comm {
                synchronize(histories);
                let a = mpomdp_ol_plan(ctx, &histories[0])?;
                return Ok(PlannedSession {
                    actions: [a.clone(), a],
                    comm: true,
                    details: SessionDetails::RVerifyAc { consistency },
                });
            }
            Ok(PlannedSession {
                actions: [v1.action, v2.action],
                comm: forced,
                details: SessionDetails::RVerifyAc { consistency },
            })
        }
        PlannerKind::Doacpol { epsilon, delta } => {
            let cfg = SessionConfig {
                epsilon,
                delta,
                replan_stride,
                force_comm,
            };
            let out = run_planning_session(ctx, histories, &cfg)?;
            Ok(PlannedSession {
                actions: out.actions,
                comm: out.comm,
                details: SessionDetails::Doacpol {
                    reports: Box::new(out.reports),
                },
            })
        }
    }
}
