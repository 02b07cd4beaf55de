//! Byzantine agents: placement validation and a library of message
//! strategies.
//!
//! Adversaries do not run the protocol. Their only effect on the network
//! is the per-out-neighbor messages they emit each round, which may differ
//! between recipients.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beliefs::BeliefVector;
use crate::error::{Error, Result};
use crate::graph::{AgentSet, DirectedGraph};

/// Built-in adversary behaviours.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// 0 on the true hypothesis, 1 on every other.
    ZeroOnTruth,
    /// All mass on one chosen false hypothesis.
    Mirror { hypothesis: usize },
    /// i.i.d. uniform `[0, 1]` entries.
    RandomJam,
    /// Alternates zero-on-truth and all-ones across out-neighbors (and
    /// across rounds), so recipients see inconsistent values.
    SplitBrain,
    /// Sends nothing.
    Omission,
}

impl Strategy {
    pub fn id(&self) -> &'static str {
        match self {
            Strategy::ZeroOnTruth => "zero-on-truth",
            Strategy::Mirror { .. } => "mirror",
            Strategy::RandomJam => "random-jam",
            Strategy::SplitBrain => "split-brain",
            Strategy::Omission => "omission",
        }
    }

    /// Checks parameters against the hypothesis count and true index.
    pub fn validate(&self, m: usize, truth: usize) -> Result<()> {
        if let Strategy::Mirror { hypothesis } = *self {
            if hypothesis >= m {
                return Err(Error::Config(format!(
                    "mirror hypothesis {hypothesis} outside 0..{m}"
                )));
            }
            if hypothesis == truth {
                return Err(Error::Config(
                    "mirror hypothesis must be a false hypothesis".into(),
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Mirror { hypothesis } => write!(f, "mirror:{hypothesis}"),
            other => f.write_str(other.id()),
        }
    }
}

/// Parses `zero-on-truth`, `mirror:<k>`, `random-jam`, `split-brain`,
/// `omission`.
impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (id, param) = match s.split_once(':') {
            Some((id, p)) => (id, Some(p)),
            None => (s, None),
        };
        let strategy = match (id, param) {
            ("zero-on-truth", None) => Strategy::ZeroOnTruth,
            ("random-jam", None) => Strategy::RandomJam,
            ("split-brain", None) => Strategy::SplitBrain,
            ("omission", None) => Strategy::Omission,
            ("mirror", Some(p)) => Strategy::Mirror {
                hypothesis: p
                    .parse()
                    .map_err(|_| Error::Config(format!("bad mirror hypothesis `{p}`")))?,
            },
            _ => return Err(Error::Config(format!("unknown adversary strategy `{s}`"))),
        };
        Ok(strategy)
    }
}

/// Which agents are Byzantine, the local bound `f`, and what they send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryConfig {
    pub agents: AgentSet,
    pub f: usize,
    pub strategy: Strategy,
}

impl AdversaryConfig {
    /// `A ⊆ V` and at least one regular agent remains.
    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(&a) = self.agents.iter().next_back() {
            if a >= n {
                return Err(Error::Config(format!(
                    "adversarial agent {a} outside 0..{n}"
                )));
            }
        }
        if self.agents.len() >= n {
            return Err(Error::Config("no regular agents remain".into()));
        }
        Ok(())
    }
}

/// A Byzantine message: one value in `[0, 1]` per hypothesis, not
/// necessarily summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdversaryMessage {
    values: Vec<f64>,
}

impl AdversaryMessage {
    /// Clamps every entry into `[0, 1]` (NaN becomes 0). The flag reports
    /// whether anything changed.
    pub fn clamped(raw: Vec<f64>) -> (Self, bool) {
        let mut changed = false;
        let values = raw
            .into_iter()
            .map(|v| {
                let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                changed |= c.to_bits() != v.to_bits();
                c
            })
            .collect();
        (AdversaryMessage { values }, changed)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.ln()).collect()
    }
}

/// Everything an adversary may look at when choosing a message.
#[derive(Debug, Clone, Copy)]
pub struct NetworkView<'a> {
    pub graph: &'a DirectedGraph,
    /// Actual beliefs dated `t`; `None` for adversarial agents.
    pub actuals: &'a [Option<BeliefVector>],
    /// Local beliefs dated `t`; `None` for adversarial agents.
    pub locals: &'a [Option<BeliefVector>],
}

/// One message request.
#[derive(Debug, Clone, Copy)]
pub struct EmitContext<'a> {
    pub t: usize,
    pub sender: usize,
    pub target: usize,
    /// Position of `target` among the sender's sorted out-neighbors.
    pub target_rank: usize,
    pub truth: usize,
    pub hypothesis_count: usize,
    pub view: Option<NetworkView<'a>>,
}

impl<'a> EmitContext<'a> {
    /// Context without a network snapshot.
    pub fn bare(
        t: usize,
        sender: usize,
        target: usize,
        target_rank: usize,
        truth: usize,
        hypothesis_count: usize,
    ) -> Self {
        EmitContext {
            t,
            sender,
            target,
            target_rank,
            truth,
            hypothesis_count,
            view: None,
        }
    }
}

/// Raw (unclamped) output of a strategy, `None` for omission.
pub fn raw_message<R: Rng + ?Sized>(
    strategy: &Strategy,
    ctx: &EmitContext<'_>,
    rng: &mut R,
) -> Result<Option<Vec<f64>>> {
    let m = ctx.hypothesis_count;
    let zero_on_truth = || {
        (0..m)
            .map(|p| if p == ctx.truth { 0.0 } else { 1.0 })
            .collect()
    };
    Ok(match strategy {
        Strategy::ZeroOnTruth => Some(zero_on_truth()),
        Strategy::Mirror { hypothesis } => {
            if *hypothesis >= m {
                return Err(Error::Config(format!(
                    "mirror hypothesis {hypothesis} outside 0..{m}"
                )));
            }
            Some(
                (0..m)
                    .map(|p| if p == *hypothesis { 1.0 } else { 0.0 })
                    .collect(),
            )
        }
        Strategy::RandomJam => Some((0..m).map(|_| rng.gen::<f64>()).collect()),
        Strategy::SplitBrain => {
            if (ctx.target_rank + ctx.t).is_multiple_of(2) {
                Some(zero_on_truth())
            } else {
                Some(vec![1.0; m])
            }
        }
        Strategy::Omission => None,
    })
}

/// Strategy output clamped to `[0, 1]`; the flag reports clamping.
pub fn emit_message<R: Rng + ?Sized>(
    strategy: &Strategy,
    ctx: &EmitContext<'_>,
    rng: &mut R,
) -> Result<Option<(AdversaryMessage, bool)>> {
    Ok(raw_message(strategy, ctx, rng)?.map(AdversaryMessage::clamped))
}

/// True iff every regular agent has at most `f` adversarial neighbors.
pub fn validate_f_local(g: &DirectedGraph, adversaries: &AgentSet, f: usize) -> bool {
    f_local_violations(g, adversaries, f).is_empty()
}

/// Regular agents with more than `f` adversarial neighbors.
pub fn f_local_violations(g: &DirectedGraph, adversaries: &AgentSet, f: usize) -> AgentSet {
    (0..g.node_count())
        .filter(|i| !adversaries.contains(i))
        .filter(|&i| {
            g.in_neighbors(i)
                .iter()
                .filter(|j| adversaries.contains(j))
                .count()
                > f
        })
        .collect()
}
