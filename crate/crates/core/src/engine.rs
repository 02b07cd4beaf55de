//! Synchronous round-based simulation of the learning protocol.
//!
//! Each round `t → t+1` has a read phase and a write phase. Every regular
//! agent folds its fresh private signal into its local belief, then
//! combines it with the actual beliefs its neighbors held at `t` (or the
//! messages adversarial neighbors sent at `t`). Nothing is written back
//! until every agent has finished reading.
//!
//! Randomness: one master seed, one ChaCha stream per `(purpose, agent)`.
//! Adding or changing an adversary never shifts another agent's signals.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::{
    emit_message, f_local_violations, AdversaryConfig, AdversaryMessage, EmitContext, NetworkView,
};
use crate::beliefs::{
    bayes_update_log, lfrhe_update_traced, min_rule_update, BeliefVector, NORMALIZATION_TOL,
};
use crate::error::{Error, Result};
use crate::graph::{diameter, percolation_closure, unreachable_from, AgentSet, DirectedGraph};
use crate::model::{kl_divergence, source_set, HypothesisSet, ObservationKind, ObservationModel};

/// Aggregation rule for actual beliefs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    MinRule,
    Lfrhe,
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Rule::MinRule => "min_rule",
            Rule::Lfrhe => "lfrhe",
        })
    }
}

/// Initial local and actual beliefs of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPrior {
    pub local: BeliefVector,
    pub actual: BeliefVector,
}

impl AgentPrior {
    pub fn uniform(m: usize) -> Self {
        AgentPrior {
            local: BeliefVector::uniform(m),
            actual: BeliefVector::uniform(m),
        }
    }
}

/// Everything a run depends on. Serializes canonically; the SHA-256 of
/// that serialization is the config fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub hypotheses: HypothesisSet,
    pub graph: DirectedGraph,
    pub model: ObservationModel,
    pub rule: Rule,
    pub adversary: Option<AdversaryConfig>,
    pub priors: Vec<AgentPrior>,
    pub horizon: usize,
    pub seed: u64,
    pub checked_mode: bool,
    /// Record every k-th step (plus the last).
    pub record_every: usize,
}

impl SimulationConfig {
    /// Min-rule, no adversary, uniform priors, `T = 1000`, seed 0.
    pub fn new(hypotheses: HypothesisSet, graph: DirectedGraph, model: ObservationModel) -> Self {
        let m = hypotheses.len();
        let n = graph.node_count();
        SimulationConfig {
            hypotheses,
            graph,
            model,
            rule: Rule::MinRule,
            adversary: None,
            priors: vec![AgentPrior::uniform(m); n],
            horizon: 1000,
            seed: 0,
            checked_mode: false,
            record_every: 1,
        }
    }

    pub fn with_rule(mut self, rule: Rule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_adversary(mut self, adversary: AdversaryConfig) -> Self {
        self.rule = Rule::Lfrhe;
        self.adversary = Some(adversary);
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn checked(mut self, on: bool) -> Self {
        self.checked_mode = on;
        self
    }

    /// Trimming parameter: the adversary bound, or 0 without adversaries.
    pub fn filter_f(&self) -> usize {
        self.adversary.as_ref().map_or(0, |a| a.f)
    }

    pub fn adversaries(&self) -> AgentSet {
        self.adversary
            .as_ref()
            .map(|a| a.agents.clone())
            .unwrap_or_default()
    }

    pub fn regular_agents(&self) -> Vec<usize> {
        let adv = self.adversaries();
        (0..self.graph.node_count())
            .filter(|i| !adv.contains(i))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.node_count();
        let m = self.hypotheses.len();
        if self.model.agent_count() != n {
            return Err(Error::Config(format!(
                "observation model has {} agents, graph has {n}",
                self.model.agent_count()
            )));
        }
        if self.model.hypothesis_count() != m {
            return Err(Error::Config(format!(
                "observation model has {} hypotheses, hypothesis set has {m}",
                self.model.hypothesis_count()
            )));
        }
        if self.priors.len() != n {
            return Err(Error::Config(format!(
                "{} prior pairs for {n} agents",
                self.priors.len()
            )));
        }
        for (i, prior) in self.priors.iter().enumerate() {
            for (what, b) in [("local", &prior.local), ("actual", &prior.actual)] {
                if b.len() != m {
                    return Err(Error::Config(format!(
                        "agent {i} {what} prior has {} entries, expected {m}",
                        b.len()
                    )));
                }
                if !b.is_positive() {
                    return Err(Error::Config(format!(
                        "agent {i} {what} prior must be strictly positive on every hypothesis"
                    )));
                }
                if (b.exp_sum() - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::Config(format!(
                        "agent {i} {what} prior is not normalized"
                    )));
                }
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if let Some(adv) = &self.adversary {
            adv.validate(n)?;
            adv.strategy.validate(m, self.hypotheses.true_index())?;
            if self.rule != Rule::Lfrhe {
                return Err(Error::Config("adversaries require the lfrhe rule".into()));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialization is infallible");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// One condition evaluated by [`precondition_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    /// Hypothesis pair the check refers to, if any.
    pub pair: Option<(usize, usize)>,
    pub passed: bool,
    pub detail: String,
    /// Agents explaining a failure (unreached nodes, stalled set, ...).
    pub witness: AgentSet,
}

/// Learning-guarantee preconditions for a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreconditionReport {
    pub rule: Rule,
    pub checks: Vec<ConditionCheck>,
    /// Diagnostic only.
    pub diameter: Option<usize>,
}

impl PreconditionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub const CHECK_SOURCES_NONEMPTY: &str = "source-set-nonempty";
pub const CHECK_REACHABILITY: &str = "source-reachability";
pub const CHECK_PRIORS: &str = "positive-priors";
pub const CHECK_ROBUSTNESS: &str = "strong-robustness";
pub const CHECK_REDUNDANCY: &str = "source-redundancy";
pub const CHECK_F_LOCAL: &str = "f-local";

/// Evaluates the sufficient conditions for learning under the configured
/// rule. Never fails; every check reports pass/fail with a witness.
///
/// * min-rule: every pair has a source agent, every non-source is
///   reachable from the sources, priors are positive.
/// * lfrhe: strong `(2f+1)`-robustness w.r.t. every source set, at least
///   `2f+1` sources whenever non-sources exist, f-local placement, positive
///   priors of regular agents.
pub fn precondition_report(config: &SimulationConfig) -> PreconditionReport {
    let g = &config.graph;
    let all = g.nodes();
    let mut checks = Vec::new();
    let pair_label = |p: usize, q: usize| {
        format!(
            "({}, {})",
            config.hypotheses.label(p),
            config.hypotheses.label(q)
        )
    };

    for (p, q) in config.hypotheses.pairs() {
        let sources = match source_set(&config.model, p, q) {
            Ok(s) => s,
            Err(e) => {
                checks.push(ConditionCheck {
                    name: CHECK_SOURCES_NONEMPTY.into(),
                    pair: Some((p, q)),
                    passed: false,
                    detail: e.to_string(),
                    witness: AgentSet::new(),
                });
                continue;
            }
        };
        let rest: AgentSet = all.difference(&sources).copied().collect();
        match config.rule {
            Rule::MinRule => {
                checks.push(ConditionCheck {
                    name: CHECK_SOURCES_NONEMPTY.into(),
                    pair: Some((p, q)),
                    passed: !sources.is_empty(),
                    detail: format!("sources {} = {:?}", pair_label(p, q), sources),
                    witness: sources.clone(),
                });
                let unreached = unreachable_from(g, &sources, &rest)
                    .expect("sources and complement are disjoint and in range");
                checks.push(ConditionCheck {
                    name: CHECK_REACHABILITY.into(),
                    pair: Some((p, q)),
                    passed: unreached.is_empty(),
                    detail: if unreached.is_empty() {
                        format!("all non-sources reachable for {}", pair_label(p, q))
                    } else {
                        format!(
                            "unreachable from sources of {}: {:?}",
                            pair_label(p, q),
                            unreached
                        )
                    },
                    witness: unreached,
                });
            }
            Rule::Lfrhe => {
                let r = 2 * config.filter_f() + 1;
                let active =
                    percolation_closure(g, &sources, r).expect("r >= 1 and sources in range");
                let stalled: AgentSet = all.difference(&active).copied().collect();
                checks.push(ConditionCheck {
                    name: CHECK_ROBUSTNESS.into(),
                    pair: Some((p, q)),
                    passed: stalled.is_empty(),
                    detail: if stalled.is_empty() {
                        format!("strongly {r}-robust w.r.t. sources {:?} of {}", sources, pair_label(p, q))
                    } else {
                        format!(
                            "percolation from {:?} with threshold {r} stalls at {:?}; never activated: {:?}",
                            sources, active, stalled
                        )
                    },
                    witness: stalled,
                });
                let redundant = rest.is_empty() || sources.len() >= r;
                checks.push(ConditionCheck {
                    name: CHECK_REDUNDANCY.into(),
                    pair: Some((p, q)),
                    passed: redundant,
                    detail: format!(
                        "{} sources for {} (need {r} when non-sources exist)",
                        sources.len(),
                        pair_label(p, q)
                    ),
                    witness: sources,
                });
            }
        }
    }

    if config.rule == Rule::Lfrhe {
        let f = config.filter_f();
        let violations = f_local_violations(g, &config.adversaries(), f);
        checks.push(ConditionCheck {
            name: CHECK_F_LOCAL.into(),
            pair: None,
            passed: violations.is_empty(),
            detail: if violations.is_empty() {
                format!("every regular agent has at most {f} adversarial neighbor(s)")
            } else {
                format!("regular agents with more than {f} adversarial neighbors: {violations:?}")
            },
            witness: violations,
        });
    }

    let adv = config.adversaries();
    let nonpositive: AgentSet = config
        .priors
        .iter()
        .enumerate()
        .filter(|(i, _)| !adv.contains(i))
        .filter(|(_, p)| !(p.local.is_positive() && p.actual.is_positive()))
        .map(|(i, _)| i)
        .collect();
    checks.push(ConditionCheck {
        name: CHECK_PRIORS.into(),
        pair: None,
        passed: nonpositive.is_empty(),
        detail: if nonpositive.is_empty() {
            "all regular priors strictly positive".into()
        } else {
            format!("agents with a zero prior entry: {nonpositive:?}")
        },
        witness: nonpositive,
    });

    PreconditionReport {
        rule: config.rule,
        checks,
        diameter: diameter(g),
    }
}

/// Local and actual belief of one regular agent at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBeliefs {
    pub agent: usize,
    pub local: BeliefVector,
    pub actual: BeliefVector,
}

/// A message sent by an adversary at step `t` along edge `from → to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMessage {
    pub from: usize,
    pub to: usize,
    pub values: AdversaryMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    /// One entry per regular agent, ordered as `Trace::regular_agents`.
    pub beliefs: Vec<AgentBeliefs>,
    /// Messages dated `t` (consumed by the update to `t + 1`).
    pub messages: Vec<EdgeMessage>,
}

/// Belief history of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub fingerprint: String,
    pub labels: Vec<String>,
    pub true_index: usize,
    pub agent_count: usize,
    pub regular_agents: Vec<usize>,
    pub horizon: usize,
    /// Per hypothesis θ ≠ θ*: min KL divergence `D(l_i(·|θ*) || l_i(·|θ))`
    /// over regular source agents. `None` for θ* or with no regular source.
    pub reference_bounds: Vec<Option<f64>>,
    pub preconditions: PreconditionReport,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    pub fn hypothesis_count(&self) -> usize {
        self.labels.len()
    }

    /// Index of `agent` within each step's `beliefs`.
    pub fn slot(&self, agent: usize) -> Option<usize> {
        self.regular_agents.iter().position(|&a| a == agent)
    }

    pub fn step_at(&self, t: usize) -> Option<&TraceStep> {
        self.steps
            .binary_search_by_key(&t, |s| s.t)
            .ok()
            .map(|k| &self.steps[k])
    }

    pub fn last(&self) -> &TraceStep {
        self.steps.last().expect("a trace always holds step 0")
    }

    /// Final actual belief of `agent` on hypothesis `p`.
    pub fn final_actual(&self, agent: usize, p: usize) -> Option<f64> {
        let slot = self.slot(agent)?;
        Some(self.last().beliefs[slot].actual.prob(p))
    }
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum StreamPurpose {
    Signal = 1,
    JointSignal = 2,
    Adversary = 3,
}

fn substream(seed: u64, purpose: StreamPurpose, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | agent as u64);
    rng
}

fn reference_bounds(config: &SimulationConfig) -> Vec<Option<f64>> {
    let truth = config.hypotheses.true_index();
    let adv = config.adversaries();
    (0..config.hypotheses.len())
        .map(|p| {
            if p == truth {
                return None;
            }
            source_set(&config.model, truth, p)
                .ok()?
                .into_iter()
                .filter(|i| !adv.contains(i))
                .map(|i| {
                    let s = config.model.structure(i);
                    kl_divergence(s.row(truth), s.row(p)).expect("likelihoods are positive")
                })
                .min_by(|a, b| a.total_cmp(b))
        })
        .collect()
}

/// Runs one simulation. Precondition failures are logged and recorded in
/// the trace but never block the run.
pub fn run(config: &SimulationConfig) -> Result<Trace> {
    config.validate()?;
    let report = precondition_report(config);
    if !report.passed() {
        for c in report.failures() {
            log::warn!("precondition {} failed: {}", c.name, c.detail);
        }
    }

    let g = &config.graph;
    let n = g.node_count();
    let m = config.hypotheses.len();
    let truth = config.hypotheses.true_index();
    let f = config.filter_f();
    let adversaries = config.adversaries();
    let regular = config.regular_agents();
    let is_regular: Vec<bool> = (0..n).map(|i| !adversaries.contains(&i)).collect();
    // containment is only guaranteed where at most f neighbors are Byzantine
    let f_local: Vec<bool> = (0..n)
        .map(|i| {
            g.in_neighbors(i)
                .iter()
                .filter(|&&j| !is_regular[j])
                .count()
                <= f
        })
        .collect();

    let log_columns: Vec<Vec<Vec<f64>>> = config
        .model
        .structures()
        .iter()
        .map(|s| {
            (0..s.signal_count())
                .map(|w| s.column(w).iter().map(|l| l.ln()).collect())
                .collect()
        })
        .collect();
    let sampler = config.model.sampler(truth)?;
    let mut signal_rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| substream(config.seed, StreamPurpose::Signal, i))
        .collect();
    let mut joint_rng = substream(config.seed, StreamPurpose::JointSignal, 0);
    let mut adversary_rngs: HashMap<usize, ChaCha8Rng> = adversaries
        .iter()
        .map(|&a| (a, substream(config.seed, StreamPurpose::Adversary, a)))
        .collect();

    let mut locals: Vec<Option<BeliefVector>> = (0..n)
        .map(|i| is_regular[i].then(|| config.priors[i].local.clone()))
        .collect();
    let mut actuals: Vec<Option<BeliefVector>> = (0..n)
        .map(|i| is_regular[i].then(|| config.priors[i].actual.clone()))
        .collect();

    let snapshot = |t: usize,
                    locals: &[Option<BeliefVector>],
                    actuals: &[Option<BeliefVector>],
                    messages: Vec<EdgeMessage>| TraceStep {
        t,
        beliefs: regular
            .iter()
            .map(|&i| AgentBeliefs {
                agent: i,
                local: locals[i].clone().expect("regular agent has state"),
                actual: actuals[i].clone().expect("regular agent has state"),
            })
            .collect(),
        messages,
    };

    let mut steps = Vec::with_capacity(config.horizon / config.record_every + 2);

    for t in 0..config.horizon {
        // signals for step t+1
        let signals: Vec<usize> = match config.model.kind() {
            ObservationKind::Joint => sampler.sample_joint(&mut joint_rng),
            ObservationKind::Independent => (0..n)
                .map(|i| {
                    if is_regular[i] {
                        sampler.sample_agent(i, &mut signal_rngs[i])
                    } else {
                        0
                    }
                })
                .collect(),
        };

        // adversary messages dated t
        let mut messages = Vec::new();
        let mut inbox: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        if let Some(adv) = &config.adversary {
            let view = NetworkView {
                graph: g,
                actuals: &actuals,
                locals: &locals,
            };
            for &a in &adv.agents {
                let rng = adversary_rngs.get_mut(&a).expect("stream per adversary");
                for (rank, &target) in g.out_neighbors(a).iter().enumerate() {
                    if !is_regular[target] {
                        continue;
                    }
                    let ctx = EmitContext {
                        t,
                        sender: a,
                        target,
                        target_rank: rank,
                        truth,
                        hypothesis_count: m,
                        view: Some(view),
                    };
                    if let Some((msg, clamped)) = emit_message(&adv.strategy, &ctx, rng)? {
                        if clamped {
                            log::warn!("step {t}: message {a} -> {target} clamped into [0, 1]");
                        }
                        inbox.insert((a, target), msg.log_values());
                        messages.push(EdgeMessage {
                            from: a,
                            to: target,
                            values: msg,
                        });
                    }
                }
            }
        }

        if t % config.record_every == 0 {
            steps.push(snapshot(t, &locals, &actuals, messages));
        }

        // read phase
        let step = t + 1;
        let at = |agent: usize| {
            move |e: Error| Error::AtStep {
                step,
                agent,
                source: Box::new(e),
            }
        };
        let mut next_locals = vec![None; n];
        let mut next_actuals = vec![None; n];
        for &i in &regular {
            let prior = locals[i].as_ref().expect("regular agent has state");
            let local = bayes_update_log(prior, &log_columns[i][signals[i]]).map_err(at(i))?;

            let neighborhood: Vec<(usize, &[f64])> = g
                .in_neighbors(i)
                .iter()
                .filter_map(|&j| {
                    if is_regular[j] {
                        actuals[j].as_ref().map(|b| (j, b.log_values()))
                    } else {
                        inbox.get(&(j, i)).map(|v| (j, v.as_slice()))
                    }
                })
                .collect();

            let actual = match config.rule {
                Rule::MinRule => {
                    let values: Vec<&[f64]> = neighborhood.iter().map(|(_, v)| *v).collect();
                    min_rule_update(&local, &values).map_err(at(i))?
                }
                Rule::Lfrhe => {
                    let outcome = lfrhe_update_traced(&local, &neighborhood, f).map_err(at(i))?;
                    if config.checked_mode {
                        match &outcome.retained {
                            Some(kept) if f_local[i] => check_containment(
                                step,
                                i,
                                g.in_neighbors(i),
                                &is_regular,
                                &actuals,
                                &neighborhood,
                                kept,
                            )?,
                            Some(_) => {}
                            None if outcome.belief != local => {
                                return Err(Error::Invariant {
                                    step,
                                    agent: i,
                                    detail: "low-degree fallback changed the local belief".into(),
                                })
                            }
                            None => {}
                        }
                    }
                    outcome.belief
                }
            };

            if config.checked_mode {
                check_belief(step, i, "local", &local, truth)?;
                check_belief(step, i, "actual", &actual, truth)?;
            }
            next_locals[i] = Some(local);
            next_actuals[i] = Some(actual);
        }

        // write phase
        locals = next_locals;
        actuals = next_actuals;
    }
    steps.push(snapshot(config.horizon, &locals, &actuals, Vec::new()));

    Ok(Trace {
        fingerprint: config.fingerprint(),
        labels: config.hypotheses.labels().to_vec(),
        true_index: truth,
        agent_count: n,
        regular_agents: regular.clone(),
        horizon: config.horizon,
        reference_bounds: reference_bounds(config),
        preconditions: report,
        steps,
    })
}

fn check_belief(
    step: usize,
    agent: usize,
    what: &str,
    b: &BeliefVector,
    truth: usize,
) -> Result<()> {
    let sum = b.exp_sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Invariant {
            step,
            agent,
            detail: format!("{what} belief sums to {sum}"),
        });
    }
    if !b.log(truth).is_finite() {
        return Err(Error::Invariant {
            step,
            agent,
            detail: format!("{what} belief on the true hypothesis is zero"),
        });
    }
    Ok(())
}

/// Every retained value on θ must lie within the range of the regular
/// neighbors' actual beliefs on θ.
fn check_containment(
    step: usize,
    agent: usize,
    in_neighbors: &[usize],
    is_regular: &[bool],
    actuals: &[Option<BeliefVector>],
    neighborhood: &[(usize, &[f64])],
    kept: &[AgentSet],
) -> Result<()> {
    for (theta, kept) in kept.iter().enumerate() {
        let (lo, hi) = in_neighbors
            .iter()
            .filter(|&&j| is_regular[j])
            .filter_map(|&j| actuals[j].as_ref())
            .map(|b| b.log(theta))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        for &(j, values) in neighborhood {
            if !kept.contains(&j) {
                continue;
            }
            let v = values[theta];
            if !(lo <= v && v <= hi) {
                return Err(Error::Invariant {
                    step,
                    agent,
                    detail: format!(
                        "retained value {} from agent {j} on hypothesis {theta} outside regular range [{}, {}]",
                        v.exp(),
                        lo.exp(),
                        hi.exp()
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Runs independent configurations concurrently. Output order matches
/// input order; each run stays deterministic.
pub fn run_batch(configs: &[SimulationConfig]) -> Vec<Result<Trace>> {
    configs.par_iter().map(run).collect()
}

/// The same configuration over a list of seeds.
pub fn seed_sweep(config: &SimulationConfig, seeds: &[u64]) -> Vec<Result<Trace>> {
    let configs: Vec<_> = seeds.iter().map(|&s| config.clone().with_seed(s)).collect();
    run_batch(&configs)
}
