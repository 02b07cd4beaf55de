//! Belief vectors and the three update rules: local Bayesian update,
//! min-rule aggregation, and the trimmed min-rule (LFRHE) with its
//! low-degree fallback.
//!
//! Beliefs live in the log domain. The minimum of probabilities is the
//! minimum of their logarithms, so both aggregation rules are exact here,
//! and beliefs on eliminated hypotheses can shrink for thousands of steps
//! without underflowing to zero.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AgentSet;

/// Tolerance on `Σ exp(log_values) = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A probability distribution over hypotheses, stored as natural logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefVector {
    #[serde(with = "log_serde")]
    log_values: Vec<f64>,
}

impl BeliefVector {
    /// Uniform belief over `m` hypotheses.
    pub fn uniform(m: usize) -> Self {
        BeliefVector {
            log_values: vec![-(m as f64).ln(); m],
        }
    }

    /// Normalizes a nonnegative weight vector. Zero weights become `-inf`.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput(
                "belief vector must be non-empty".into(),
            ));
        }
        if let Some(p) = probs.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "belief entry {p} is {}; entries must be finite and nonnegative",
                probs[p]
            )));
        }
        Self::normalize_log(probs.iter().map(|x| x.ln()).collect())
    }

    /// Normalizes arbitrary log-weights with log-sum-exp.
    pub fn normalize_log(mut log_values: Vec<f64>) -> Result<Self> {
        if log_values.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::InvalidInput(
                "log-weights must not be NaN or +inf".into(),
            ));
        }
        let lse = log_sum_exp(&log_values);
        if lse == f64::NEG_INFINITY {
            return Err(Error::Degenerate);
        }
        for v in &mut log_values {
            *v -= lse;
        }
        Ok(BeliefVector { log_values })
    }

    /// Wraps log-values as-is. Caller guarantees they are normalized.
    pub fn from_normalized_log(log_values: Vec<f64>) -> Self {
        BeliefVector { log_values }
    }

    pub fn len(&self) -> usize {
        self.log_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_values.is_empty()
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn log(&self, p: usize) -> f64 {
        self.log_values[p]
    }

    pub fn prob(&self, p: usize) -> f64 {
        self.log_values[p].exp()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_values.iter().map(|x| x.exp()).collect()
    }

    pub fn exp_sum(&self) -> f64 {
        self.log_values.iter().map(|x| x.exp()).sum()
    }

    /// All entries strictly positive (finite in log domain).
    pub fn is_positive(&self) -> bool {
        self.log_values.iter().all(|x| x.is_finite())
    }
}

impl AsRef<[f64]> for BeliefVector {
    fn as_ref(&self) -> &[f64] {
        &self.log_values
    }
}

/// `ln Σ exp(x)`, stable; `-inf` for an all-`-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Local Bayesian update: posterior ∝ likelihood × prior.
pub fn bayes_update(prior: &BeliefVector, likelihood_column: &[f64]) -> Result<BeliefVector> {
    if let Some(p) = likelihood_column
        .iter()
        .position(|&l| !(l > 0.0 && l.is_finite()))
    {
        return Err(Error::Domain(format!(
            "likelihood for hypothesis {p} is {}; must be positive",
            likelihood_column[p]
        )));
    }
    let logs: Vec<f64> = likelihood_column.iter().map(|l| l.ln()).collect();
    bayes_update_log(prior, &logs)
}

/// [`bayes_update`] with a precomputed log-likelihood column.
pub fn bayes_update_log(prior: &BeliefVector, log_likelihood: &[f64]) -> Result<BeliefVector> {
    check_len(prior.len(), log_likelihood.len())?;
    BeliefVector::normalize_log(
        prior
            .log_values
            .iter()
            .zip(log_likelihood)
            .map(|(a, b)| a + b)
            .collect(),
    )
}

fn check_len(m: usize, got: usize) -> Result<()> {
    if m != got {
        return Err(Error::InvalidInput(format!(
            "vector has {got} entries, expected {m}"
        )));
    }
    Ok(())
}

/// Min-rule: per hypothesis, the minimum of the fresh local belief and
/// every neighbor's actual belief (log-values), then normalize. With no
/// neighbors the local belief is returned unchanged.
pub fn min_rule_update<N: AsRef<[f64]>>(
    local_new: &BeliefVector,
    neighbor_actuals: &[N],
) -> Result<BeliefVector> {
    if neighbor_actuals.is_empty() {
        return Ok(local_new.clone());
    }
    BeliefVector::normalize_log(min_rule_numerator(local_new, neighbor_actuals)?)
}

/// Unnormalized min-rule numerator, in log domain.
pub fn min_rule_numerator<N: AsRef<[f64]>>(
    local_new: &BeliefVector,
    neighbor_actuals: &[N],
) -> Result<Vec<f64>> {
    let m = local_new.len();
    let mut mins = local_new.log_values.clone();
    for n in neighbor_actuals {
        let n = n.as_ref();
        check_len(m, n.len())?;
        for (acc, &v) in mins.iter_mut().zip(n) {
            *acc = acc.min(v);
        }
    }
    Ok(mins)
}

/// Per-hypothesis trimming: sort values descending (ties by ascending
/// agent id), drop the first `f` and last `f`, return the kept ids.
pub fn lfrhe_filter(values: &[(usize, f64)], f: usize) -> Result<AgentSet> {
    let mut sorted = values.to_vec();
    Ok(trim(&mut sorted, f)?.iter().map(|(id, _)| *id).collect())
}

/// Sorts in place and returns the middle slice that survives trimming.
fn trim(values: &mut [(usize, f64)], f: usize) -> Result<&[(usize, f64)]> {
    if values.len() < 2 * f + 1 {
        return Err(Error::InvalidInput(format!(
            "trimming {f} from each end needs at least {} values, got {}",
            2 * f + 1,
            values.len()
        )));
    }
    if values.iter().any(|(_, v)| v.is_nan()) {
        return Err(Error::InvalidInput("NaN belief value".into()));
    }
    values.sort_by(|(ia, va), (ib, vb)| {
        vb.partial_cmp(va)
            .unwrap_or(Ordering::Equal)
            .then(ia.cmp(ib))
    });
    let end = values.len() - f;
    Ok(&values[f..end])
}

/// Result of one trimmed update.
#[derive(Debug, Clone, PartialEq)]
pub struct LfrheOutcome {
    pub belief: BeliefVector,
    /// Retained neighbor ids per hypothesis, or `None` when the fallback
    /// (fewer than `2f + 1` neighbors) applied.
    pub retained: Option<Vec<AgentSet>>,
}

/// Trimmed min-rule. With at least `2f + 1` neighbors, each hypothesis is
/// trimmed independently, then the min over the kept values and the local
/// belief is normalized. Otherwise the local belief is returned as-is.
pub fn lfrhe_update<N: AsRef<[f64]>>(
    local_new: &BeliefVector,
    neighbor_actuals: &[(usize, N)],
    f: usize,
) -> Result<BeliefVector> {
    lfrhe_update_traced(local_new, neighbor_actuals, f).map(|o| o.belief)
}

/// [`lfrhe_update`] that also reports which neighbors were kept.
pub fn lfrhe_update_traced<N: AsRef<[f64]>>(
    local_new: &BeliefVector,
    neighbor_actuals: &[(usize, N)],
    f: usize,
) -> Result<LfrheOutcome> {
    let m = local_new.len();
    for (_, n) in neighbor_actuals {
        check_len(m, n.as_ref().len())?;
    }
    if neighbor_actuals.len() < 2 * f + 1 {
        return Ok(LfrheOutcome {
            belief: local_new.clone(),
            retained: None,
        });
    }
    let mut mins = local_new.log_values.clone();
    let mut retained = Vec::with_capacity(m);
    let mut column = Vec::with_capacity(neighbor_actuals.len());
    for (theta, acc) in mins.iter_mut().enumerate() {
        column.clear();
        column.extend(
            neighbor_actuals
                .iter()
                .map(|(id, n)| (*id, n.as_ref()[theta])),
        );
        let kept = trim(&mut column, f)?;
        // fold in neighbor-list order so f = 0 matches the min-rule bitwise
        let mut ids: Vec<usize> = kept.iter().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        for (id, n) in neighbor_actuals {
            if ids.binary_search(id).is_ok() {
                *acc = acc.min(n.as_ref()[theta]);
            }
        }
        retained.push(ids.into_iter().collect());
    }
    Ok(LfrheOutcome {
        belief: BeliefVector::normalize_log(mins)?,
        retained: Some(retained),
    })
}

/// Serializes log-values with `-inf` as `null` so JSON stays valid and
/// round-trips exactly.
mod log_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| x.is_finite().then_some(*x))
            .collect::<Vec<Option<f64>>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::NEG_INFINITY))
            .collect())
    }
}
