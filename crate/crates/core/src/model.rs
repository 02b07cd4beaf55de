//! Hypotheses, private signal structures and the observation process.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AgentSet;

/// Rows of a likelihood table must sum to one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Two likelihood rows are considered equal when no entry differs by more
/// than this.
pub const ROW_EQ_TOL: f64 = 1e-12;
/// Joint tables must marginalize to the per-agent structures within this.
pub const MARGINAL_TOL: f64 = 1e-9;
/// Largest product signal space accepted for a joint table.
pub const MAX_JOINT_ENTRIES: usize = 1 << 20;

/// The candidate states of the world and the one generating observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HypothesisRepr")]
pub struct HypothesisSet {
    labels: Vec<String>,
    true_index: usize,
}

#[derive(Deserialize)]
struct HypothesisRepr {
    labels: Vec<String>,
    true_index: usize,
}

impl TryFrom<HypothesisRepr> for HypothesisSet {
    type Error = Error;
    fn try_from(r: HypothesisRepr) -> Result<Self> {
        HypothesisSet::new(r.labels, r.true_index)
    }
}

impl HypothesisSet {
    pub fn new(labels: Vec<String>, true_index: usize) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 hypotheses, got {}",
                labels.len()
            )));
        }
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::InvalidInput(
                "hypothesis labels must be unique".into(),
            ));
        }
        if true_index >= labels.len() {
            return Err(Error::InvalidInput(format!(
                "true hypothesis index {true_index} outside 0..{}",
                labels.len()
            )));
        }
        Ok(HypothesisSet { labels, true_index })
    }

    /// Labels `theta1..thetam`.
    pub fn numbered(m: usize, true_index: usize) -> Result<Self> {
        Self::new((1..=m).map(|k| format!("theta{k}")).collect(), true_index)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, p: usize) -> &str {
        &self.labels[p]
    }

    pub fn true_index(&self) -> usize {
        self.true_index
    }

    /// Every unordered pair `(p, q)` with `p < q`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        let m = self.len();
        (0..m).flat_map(move |p| ((p + 1)..m).map(move |q| (p, q)))
    }
}

/// One agent's private likelihoods: row `p` is `l_i(· | θ_p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalStructure {
    likelihood: Vec<Vec<f64>>,
}

impl SignalStructure {
    /// Validates rows: equal length ≥ 1, strictly positive, summing to 1.
    pub fn new(likelihood: Vec<Vec<f64>>) -> Result<Self> {
        let width = likelihood.first().map_or(0, Vec::len);
        if width == 0 {
            return Err(Error::InvalidInput("signal space must be non-empty".into()));
        }
        for (p, row) in likelihood.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidInput(format!(
                    "likelihood row {p} has {} entries, expected {width}",
                    row.len()
                )));
            }
            if let Some(w) = row.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::Domain(format!(
                    "likelihood row {p}, signal {w} is {}; entries must be strictly positive",
                    row[w]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "likelihood row {p} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(SignalStructure { likelihood })
    }

    /// The same likelihood row for every one of `m` hypotheses.
    pub fn uninformative(m: usize, row: Vec<f64>) -> Result<Self> {
        Self::new(vec![row; m])
    }

    pub fn hypothesis_count(&self) -> usize {
        self.likelihood.len()
    }

    pub fn signal_count(&self) -> usize {
        self.likelihood[0].len()
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.likelihood[p]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.likelihood
    }

    /// `l_i(w | θ)` for every hypothesis θ.
    pub fn column(&self, signal: usize) -> Vec<f64> {
        self.likelihood.iter().map(|row| row[signal]).collect()
    }

    fn rows_equal(&self, p: usize, q: usize) -> bool {
        self.likelihood[p]
            .iter()
            .zip(&self.likelihood[q])
            .all(|(a, b)| (a - b).abs() <= ROW_EQ_TOL)
    }
}

/// Whether agents observe independently or from a correlated joint law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    Independent,
    Joint,
}

/// A full joint likelihood over the product signal space, one row per
/// hypothesis. Profile index uses mixed radix with agent 0 as the least
/// significant digit: `index = Σ_i s_i · Π_{k<i} |S_k|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    rows: Vec<Vec<f64>>,
}

impl JointTable {
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// The network's observation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct ObservationModel {
    structures: Vec<SignalStructure>,
    joint: Option<JointTable>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    structures: Vec<SignalStructure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint: Option<JointTable>,
}

impl TryFrom<ModelRepr> for ObservationModel {
    type Error = Error;
    fn try_from(r: ModelRepr) -> Result<Self> {
        let structures = r
            .structures
            .into_iter()
            .map(|s| SignalStructure::new(s.likelihood))
            .collect::<Result<Vec<_>>>()?;
        match r.joint {
            None => ObservationModel::independent(structures),
            Some(j) => ObservationModel::joint(structures, j.rows),
        }
    }
}

impl From<ObservationModel> for ModelRepr {
    fn from(m: ObservationModel) -> Self {
        ModelRepr {
            structures: m.structures,
            joint: m.joint,
        }
    }
}

impl ObservationModel {
    /// Agents observe independently, each from its own structure.
    pub fn independent(structures: Vec<SignalStructure>) -> Result<Self> {
        check_structures(&structures)?;
        Ok(ObservationModel {
            structures,
            joint: None,
        })
    }

    /// Correlated observations: `rows[p]` is the joint law under `θ_p` over
    /// the product signal space (see [`JointTable`] for index layout). Each
    /// joint row must marginalize to the corresponding per-agent row.
    pub fn joint(structures: Vec<SignalStructure>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = check_structures(&structures)?;
        let radices: Vec<usize> = structures
            .iter()
            .map(SignalStructure::signal_count)
            .collect();
        let size = radices
            .iter()
            .try_fold(1usize, |acc, &r| {
                acc.checked_mul(r).filter(|&s| s <= MAX_JOINT_ENTRIES)
            })
            .ok_or_else(|| {
                Error::Capacity(format!(
                    "joint signal space exceeds {MAX_JOINT_ENTRIES} entries"
                ))
            })?;
        if rows.len() != m {
            return Err(Error::InvalidInput(format!(
                "joint table has {} rows, expected one per hypothesis ({m})",
                rows.len()
            )));
        }
        for (p, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::InvalidInput(format!(
                    "joint row {p} has {} entries, expected {size}",
                    row.len()
                )));
            }
            if row.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::Domain(format!("joint row {p} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "joint row {p} sums to {sum}, expected 1"
                )));
            }
            let mut marginals: Vec<Vec<f64>> = radices.iter().map(|&r| vec![0.0; r]).collect();
            for (index, &mass) in row.iter().enumerate() {
                for (agent, signal) in decode_profile(index, &radices).into_iter().enumerate() {
                    marginals[agent][signal] += mass;
                }
            }
            for (agent, marginal) in marginals.iter().enumerate() {
                let expected = structures[agent].row(p);
                if let Some(w) =
                    (0..marginal.len()).find(|&w| (marginal[w] - expected[w]).abs() > MARGINAL_TOL)
                {
                    return Err(Error::InvalidInput(format!(
                        "joint row {p} marginal for agent {agent}, signal {w} is {}, structure says {}",
                        marginal[w], expected[w]
                    )));
                }
            }
        }
        Ok(ObservationModel {
            structures,
            joint: Some(JointTable { rows }),
        })
    }

    pub fn kind(&self) -> ObservationKind {
        if self.joint.is_some() {
            ObservationKind::Joint
        } else {
            ObservationKind::Independent
        }
    }

    pub fn agent_count(&self) -> usize {
        self.structures.len()
    }

    pub fn hypothesis_count(&self) -> usize {
        self.structures[0].hypothesis_count()
    }

    pub fn structure(&self, agent: usize) -> &SignalStructure {
        &self.structures[agent]
    }

    pub fn structures(&self) -> &[SignalStructure] {
        &self.structures
    }

    pub fn joint_table(&self) -> Option<&JointTable> {
        self.joint.as_ref()
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.agent_count() {
            return Err(Error::InvalidInput(format!(
                "agent {agent} outside 0..{}",
                self.agent_count()
            )));
        }
        Ok(())
    }

    fn check_hypothesis(&self, p: usize) -> Result<()> {
        if p >= self.hypothesis_count() {
            return Err(Error::InvalidInput(format!(
                "hypothesis {p} outside 0..{}",
                self.hypothesis_count()
            )));
        }
        Ok(())
    }

    /// Sampler for observations generated under hypothesis `truth`.
    pub fn sampler(&self, truth: usize) -> Result<SignalSampler> {
        self.check_hypothesis(truth)?;
        let radices = self
            .structures
            .iter()
            .map(SignalStructure::signal_count)
            .collect();
        let weighted = |w: &[f64]| {
            WeightedIndex::new(w).map_err(|e| Error::Domain(format!("bad sampling weights: {e}")))
        };
        let per_agent = self
            .structures
            .iter()
            .map(|s| weighted(s.row(truth)))
            .collect::<Result<Vec<_>>>()?;
        let joint = self
            .joint
            .as_ref()
            .map(|j| weighted(&j.rows[truth]))
            .transpose()?;
        Ok(SignalSampler {
            per_agent,
            joint,
            radices,
        })
    }

    /// One joint observation profile under `truth`, drawn from `rng`.
    pub fn sample_signals<R: Rng + ?Sized>(&self, truth: usize, rng: &mut R) -> Result<Vec<usize>> {
        let sampler = self.sampler(truth)?;
        Ok(match self.kind() {
            ObservationKind::Independent => (0..self.agent_count())
                .map(|i| sampler.sample_agent(i, rng))
                .collect(),
            ObservationKind::Joint => sampler.sample_joint(rng),
        })
    }
}

fn check_structures(structures: &[SignalStructure]) -> Result<usize> {
    let first = structures
        .first()
        .ok_or_else(|| Error::InvalidInput("observation model needs at least one agent".into()))?;
    let m = first.hypothesis_count();
    if m < 2 {
        return Err(Error::InvalidInput("need at least 2 hypotheses".into()));
    }
    if let Some(i) = structures.iter().position(|s| s.hypothesis_count() != m) {
        return Err(Error::InvalidInput(format!(
            "agent {i} has {} likelihood rows, expected {m}",
            structures[i].hypothesis_count()
        )));
    }
    Ok(m)
}

/// Splits a joint profile index into per-agent signals.
pub fn decode_profile(mut index: usize, radices: &[usize]) -> Vec<usize> {
    radices
        .iter()
        .map(|&r| {
            let s = index % r;
            index /= r;
            s
        })
        .collect()
}

/// Precomputed categorical samplers for one true hypothesis.
#[derive(Debug, Clone)]
pub struct SignalSampler {
    per_agent: Vec<WeightedIndex<f64>>,
    joint: Option<WeightedIndex<f64>>,
    radices: Vec<usize>,
}

impl SignalSampler {
    /// Draws agent `agent`'s signal from its marginal.
    pub fn sample_agent<R: Rng + ?Sized>(&self, agent: usize, rng: &mut R) -> usize {
        self.per_agent[agent].sample(rng)
    }

    /// Draws a full profile from the joint table (falls back to independent
    /// per-agent draws from the same stream when there is no joint table).
    pub fn sample_joint<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        match &self.joint {
            Some(j) => decode_profile(j.sample(rng), &self.radices),
            None => self.per_agent.iter().map(|d| d.sample(rng)).collect(),
        }
    }
}

/// `D(p || q) = Σ p(w) ln(p(w)/q(w))` in nats. Terms with `p(w) = 0`
/// contribute zero.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput(format!(
            "distributions have different lengths ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInput(
            "p has a negative or non-finite entry".into(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("p sums to {sum}, expected 1")));
    }
    if let Some(w) = q.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::Domain(format!("q({w}) = {} is not positive", q[w])));
    }
    let d: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pw, _)| pw > 0.0)
        .map(|(&pw, &qw)| pw * (pw / qw).ln())
        .sum();
    Ok(d.max(0.0))
}

/// Source agents for the pair `(p, q)`: agents whose likelihood rows for
/// the two hypotheses differ. Symmetric in `(p, q)`.
pub fn source_set(model: &ObservationModel, p: usize, q: usize) -> Result<AgentSet> {
    model.check_hypothesis(p)?;
    model.check_hypothesis(q)?;
    if p == q {
        return Err(Error::InvalidInput(format!(
            "source set needs two distinct hypotheses, got {p} twice"
        )));
    }
    Ok((0..model.agent_count())
        .filter(|&i| !model.structures[i].rows_equal(p, q))
        .collect())
}

/// Hypotheses that agent `agent` cannot tell apart from `truth` using only
/// its own signals. Always contains `truth`.
pub fn equivalence_set(
    model: &ObservationModel,
    agent: usize,
    truth: usize,
) -> Result<BTreeSet<usize>> {
    model.check_agent(agent)?;
    model.check_hypothesis(truth)?;
    let s = &model.structures[agent];
    Ok((0..model.hypothesis_count())
        .filter(|&p| p == truth || s.rows_equal(p, truth))
        .collect())
}

/// Source set of one unordered hypothesis pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSources {
    pub p: usize,
    pub q: usize,
    pub sources: AgentSet,
}

impl PairSources {
    pub fn identifiable(&self) -> bool {
        !self.sources.is_empty()
    }
}

/// Global identifiability: every pair of hypotheses has a source agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub pairs: Vec<PairSources>,
}

impl IdentifiabilityReport {
    pub fn passed(&self) -> bool {
        self.pairs.iter().all(PairSources::identifiable)
    }
}

pub fn check_identifiability(model: &ObservationModel) -> IdentifiabilityReport {
    let m = model.hypothesis_count();
    let pairs = (0..m)
        .flat_map(|p| ((p + 1)..m).map(move |q| (p, q)))
        .map(|(p, q)| PairSources {
            p,
            q,
            sources: source_set(model, p, q).expect("pair indices are in range and distinct"),
        })
        .collect();
    IdentifiabilityReport { pairs }
}
