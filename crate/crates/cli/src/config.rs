//! Experiment files: a versioned JSON document describing one experiment.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use minlearn_core::engine::AgentPrior;
use minlearn_core::graph::read_edge_list;
use minlearn_core::{
    AdversaryConfig, AgentSet, BeliefVector, DirectedGraph, HypothesisSet, ObservationModel, Rule,
    SignalStructure, SimulationConfig, Strategy, TraceFormat,
};
use serde::Deserialize;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

const PRIOR_SUM_TOL: f64 = 1e-9;

/// On-disk layout. Unknown keys are rejected at every level.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub schema_version: u32,
    pub graph: GraphSpec,
    pub hypotheses: HypothesesSpec,
    pub agents: Vec<AgentSpec>,
    /// Joint signal table: one row per hypothesis over the mixed-radix
    /// signal profiles (agent 0 least significant).
    #[serde(default)]
    pub joint: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub adversary: Option<AdversarySpec>,
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    /// Inline directed edges `[from, to]`.
    Edges {
        n: usize,
        edges: Vec<(usize, usize)>,
    },
    /// Edge-list file, relative to the experiment file.
    EdgeList {
        path: PathBuf,
    },
    Path {
        n: usize,
    },
    Cycle {
        n: usize,
    },
    /// Complete bidirectional graph.
    Complete {
        n: usize,
    },
    Random {
        n: usize,
        p: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesesSpec {
    pub labels: Vec<String>,
    /// Label of the true hypothesis.
    pub truth: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    /// One row per hypothesis, one column per signal.
    pub likelihood: Vec<Vec<f64>>,
    /// Initial local belief; uniform when absent.
    #[serde(default)]
    pub prior: Option<Vec<f64>>,
    /// Initial actual belief; defaults to `prior`.
    #[serde(default)]
    pub actual_prior: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    pub agents: Vec<usize>,
    pub f: usize,
    /// `zero-on-truth`, `mirror:<label or index>`, `random-jam`,
    /// `split-brain` or `omission`.
    pub strategy: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Defaults to `lfrhe` with an adversary section, `min_rule` otherwise.
    #[serde(default)]
    pub rule: Option<Rule>,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    /// Inclusive sweep `a..b`; takes precedence over `seed`.
    #[serde(default)]
    pub seeds: Option<String>,
    #[serde(default)]
    pub checked_mode: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Trace destination, relative to the experiment file.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<TraceFormat>,
    /// Record every k-th step.
    #[serde(default)]
    pub thinning: Option<usize>,
}

/// Inclusive `a..b` range, used for seed sweeps and analysis windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InclusiveRange {
    pub start: u64,
    pub end: u64,
}

impl InclusiveRange {
    pub fn values(&self) -> Vec<u64> {
        (self.start..=self.end).collect()
    }
}

impl FromStr for InclusiveRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| format!("expected `a..b`, got `{s}`"))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u64>()
                .map_err(|_| format!("`{x}` is not a non-negative integer"))
        };
        let (start, end) = (parse(a)?, parse(b)?);
        if start > end {
            return Err(format!("empty range `{s}`"));
        }
        Ok(InclusiveRange { start, end })
    }
}

impl fmt::Display for InclusiveRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// A loaded experiment: the simulation config plus run/output settings.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: SimulationConfig,
    pub seeds: Option<InclusiveRange>,
    pub output: Option<PathBuf>,
    pub format: Option<TraceFormat>,
}

/// Reads and validates an experiment file.
pub fn load_experiment(path: &Path) -> Result<Experiment, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let file =
        parse_experiment(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    file.into_experiment(base)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Parses the JSON text. Errors read `line L, column C: field.path: message`.
pub fn parse_experiment(text: &str) -> Result<ExperimentFile, String> {
    let mut de = serde_json::Deserializer::from_str(text);
    let file: ExperimentFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let inner = e.inner();
        let mut message = inner.to_string();
        if let Some(k) = message.rfind(" at line ") {
            message.truncate(k);
        }
        let at = format!("line {}, column {}", inner.line(), inner.column());
        match e.path().to_string().as_str() {
            "?" | "." => format!("{at}: {message}"),
            field => format!("{at}: {field}: {message}"),
        }
    })?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(format!(
            "schema_version: unsupported version {} (expected {SCHEMA_VERSION})",
            file.schema_version
        ));
    }
    Ok(file)
}

fn field<E: fmt::Display>(name: impl fmt::Display) -> impl FnOnce(E) -> String {
    move |e| format!("{name}: {e}")
}

fn prior(values: &[f64], m: usize, name: &str) -> Result<BeliefVector, String> {
    if values.len() != m {
        return Err(format!(
            "{name}: {} entries for {m} hypotheses",
            values.len()
        ));
    }
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(format!("{name}: entries must be strictly positive"));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > PRIOR_SUM_TOL {
        return Err(format!("{name}: entries sum to {sum}, expected 1"));
    }
    BeliefVector::from_probs(values).map_err(field(name))
}

impl ExperimentFile {
    /// Builds the simulation config. Relative paths resolve against `base`.
    pub fn into_experiment(self, base: &Path) -> Result<Experiment, String> {
        let graph = match &self.graph {
            GraphSpec::Edges { n, edges } => DirectedGraph::new(*n, edges.iter().copied()),
            GraphSpec::EdgeList { path } => read_edge_list(base.join(path)),
            GraphSpec::Path { n } => DirectedGraph::path(*n),
            GraphSpec::Cycle { n } => DirectedGraph::cycle(*n),
            GraphSpec::Complete { n } => DirectedGraph::complete(*n),
            GraphSpec::Random { n, p, seed } => DirectedGraph::random(*n, *p, *seed),
        }
        .map_err(field("graph"))?;
        let n = graph.node_count();

        let labels = self.hypotheses.labels;
        let truth = labels
            .iter()
            .position(|l| *l == self.hypotheses.truth)
            .ok_or_else(|| {
                format!(
                    "hypotheses.truth: `{}` is not a listed label",
                    self.hypotheses.truth
                )
            })?;
        let hypotheses = HypothesisSet::new(labels, truth).map_err(field("hypotheses"))?;
        let m = hypotheses.len();

        if self.agents.len() != n {
            return Err(format!(
                "agents: {} entries for a {n}-node graph",
                self.agents.len()
            ));
        }
        let mut structures = Vec::with_capacity(n);
        let mut priors = Vec::with_capacity(n);
        for (i, agent) in self.agents.iter().enumerate() {
            if agent.likelihood.len() != m {
                return Err(format!(
                    "agents[{i}].likelihood: {} rows for {m} hypotheses",
                    agent.likelihood.len()
                ));
            }
            structures.push(
                SignalStructure::new(agent.likelihood.clone())
                    .map_err(field(format_args!("agents[{i}].likelihood")))?,
            );
            let local = match &agent.prior {
                Some(p) => prior(p, m, &format!("agents[{i}].prior"))?,
                None => BeliefVector::uniform(m),
            };
            let actual = match &agent.actual_prior {
                Some(p) => prior(p, m, &format!("agents[{i}].actual_prior"))?,
                None => local.clone(),
            };
            priors.push(AgentPrior { local, actual });
        }
        let model = match self.joint {
            Some(rows) => ObservationModel::joint(structures, rows).map_err(field("joint"))?,
            None => ObservationModel::independent(structures).map_err(field("agents"))?,
        };

        let adversary = self
            .adversary
            .map(|a| -> Result<AdversaryConfig, String> {
                Ok(AdversaryConfig {
                    agents: a.agents.iter().copied().collect::<AgentSet>(),
                    f: a.f,
                    strategy: parse_strategy(&a.strategy, hypotheses.labels())
                        .map_err(field("adversary.strategy"))?,
                })
            })
            .transpose()?;

        let seeds = self
            .run
            .seeds
            .as_deref()
            .map(str::parse::<InclusiveRange>)
            .transpose()
            .map_err(field("run.seeds"))?;
        if self.output.thinning == Some(0) {
            return Err("output.thinning: must be at least 1".into());
        }

        let rule = self.run.rule.unwrap_or(if adversary.is_some() {
            Rule::Lfrhe
        } else {
            Rule::MinRule
        });
        let mut config = SimulationConfig::new(hypotheses, graph, model)
            .with_rule(rule)
            .with_horizon(self.run.horizon)
            .with_seed(self.run.seed)
            .checked(self.run.checked_mode);
        config.adversary = adversary;
        config.priors = priors;
        config.record_every = self.output.thinning.unwrap_or(1);
        config.validate().map_err(|e| e.to_string())?;

        Ok(Experiment {
            config,
            seeds,
            output: self.output.path.map(|p| base.join(p)),
            format: self.output.format,
        })
    }
}

/// Like [`Strategy::from_str`], but `mirror:` also accepts a label.
pub fn parse_strategy(s: &str, labels: &[String]) -> Result<Strategy, String> {
    if let Some(target) = s.strip_prefix("mirror:") {
        if let Some(k) = labels.iter().position(|l| l == target) {
            return Ok(Strategy::Mirror { hypothesis: k });
        }
    }
    s.parse().map_err(|e: minlearn_core::Error| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "graph": {"kind": "path", "n": 2},
        "hypotheses": {"labels": ["a", "b"], "truth": "a"},
        "agents": [
            {"likelihood": [[0.8, 0.2], [0.2, 0.8]]},
            {"likelihood": [[0.5, 0.5], [0.5, 0.5]]}
        ],
        "run": {"horizon": 10}
    }"#;

    #[test]
    fn minimal_file_builds_min_rule_config() {
        let e = parse_experiment(MINIMAL)
            .unwrap()
            .into_experiment(Path::new(""))
            .unwrap();
        assert_eq!(e.config.rule, Rule::MinRule);
        assert_eq!(e.config.graph.edge_count(), 1);
        assert_eq!(e.config.record_every, 1);
        assert!(e.seeds.is_none() && e.output.is_none());
    }

    #[test]
    fn unknown_keys_name_the_field() {
        let text = MINIMAL.replace("\"horizon\": 10", "\"horizon\": 10, \"speed\": 3");
        let err = parse_experiment(&text).unwrap_err();
        assert!(err.contains("run") && err.contains("speed"), "{err}");
        assert!(
            err.starts_with("line 9, column 38: run.speed: unknown field"),
            "{err}"
        );
        assert!(!err.contains("at line"), "{err}");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let text = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(parse_experiment(&text)
            .unwrap_err()
            .contains("schema_version"));
    }

    #[test]
    fn semantic_errors_carry_the_field() {
        let text = MINIMAL.replace("[0.2, 0.8]]}", "[0.2, 0.7]]}");
        let err = parse_experiment(&text)
            .unwrap()
            .into_experiment(Path::new(""))
            .unwrap_err();
        assert!(err.starts_with("agents[0].likelihood"), "{err}");

        let text = MINIMAL.replace("\"truth\": \"a\"", "\"truth\": \"c\"");
        let err = parse_experiment(&text)
            .unwrap()
            .into_experiment(Path::new(""))
            .unwrap_err();
        assert!(err.starts_with("hypotheses.truth"), "{err}");
    }

    #[test]
    fn adversary_section_defaults_to_lfrhe() {
        let text = MINIMAL.replace(
            "\"run\"",
            "\"adversary\": {\"agents\": [1], \"f\": 0, \"strategy\": \"mirror:b\"}, \"run\"",
        );
        let e = parse_experiment(&text)
            .unwrap()
            .into_experiment(Path::new(""))
            .unwrap();
        assert_eq!(e.config.rule, Rule::Lfrhe);
        assert_eq!(
            e.config.adversary.unwrap().strategy,
            Strategy::Mirror { hypothesis: 1 }
        );
    }

    #[test]
    fn ranges_are_inclusive() {
        let r: InclusiveRange = "1..8".parse().unwrap();
        assert_eq!(r.values().len(), 8);
        assert!("8..1".parse::<InclusiveRange>().is_err());
        assert!("1-8".parse::<InclusiveRange>().is_err());
    }

    #[test]
    fn priors_must_be_positive_and_normalized() {
        assert!(prior(&[0.5, 0.5], 2, "p").is_ok());
        assert!(prior(&[1.0, 0.0], 2, "p").is_err());
        assert!(prior(&[0.5, 0.6], 2, "p").is_err());
        assert!(prior(&[1.0], 2, "p").is_err());
    }
}
