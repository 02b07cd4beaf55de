//! Post-hoc trace analytics and trace files.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryMessage;
use crate::beliefs::BeliefVector;
use crate::engine::{AgentBeliefs, EdgeMessage, PreconditionReport, Trace, TraceStep};
use crate::error::{Error, Result};

/// Default convergence threshold: μ(θ*) ≥ 1 − ε.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// JSONL schema version written into the header record.
pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConvergence {
    pub agent: usize,
    /// First recorded step from which μ(θ*) ≥ 1 − ε holds through the
    /// horizon, or `None`.
    pub time: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub epsilon: f64,
    pub agents: Vec<AgentConvergence>,
    /// Latest per-agent time; `None` if any agent never converges.
    pub network: Option<usize>,
}

impl ConvergenceSummary {
    pub fn all_converged(&self) -> bool {
        self.network.is_some()
    }
}

/// Sustained convergence time of every regular agent.
pub fn convergence_time(trace: &Trace, epsilon: f64) -> Result<ConvergenceSummary> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!(
            "epsilon {epsilon} outside (0, 1)"
        )));
    }
    let threshold = 1.0 - epsilon;
    let truth = trace.true_index;
    let agents: Vec<AgentConvergence> = trace
        .regular_agents
        .iter()
        .enumerate()
        .map(|(slot, &agent)| {
            let time = trace
                .steps
                .iter()
                .rev()
                .take_while(|s| s.beliefs[slot].actual.prob(truth) >= threshold)
                .last()
                .map(|s| s.t);
            AgentConvergence { agent, time }
        })
        .collect();
    let network = agents
        .iter()
        .map(|a| a.time)
        .collect::<Option<Vec<_>>>()
        .map(|ts| ts.into_iter().max().unwrap_or(0));
    Ok(ConvergenceSummary {
        epsilon,
        agents,
        network,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub agent: usize,
    pub hypothesis: usize,
    pub window: (usize, usize),
    /// OLS slope of ln π(θ) against t (nats/step); `None` if π hit zero.
    pub local_slope: Option<f64>,
    /// OLS slope of ln μ(θ) against t.
    pub actual_slope: Option<f64>,
    /// Smallest `D(l_i(·|θ*) || l_i(·|θ))` over regular source agents.
    /// Reported for comparison only.
    pub reference_bound: Option<f64>,
}

/// `[T/4, T]`.
pub fn default_window(trace: &Trace) -> (usize, usize) {
    (trace.horizon / 4, trace.horizon)
}

/// Least-squares slope of `y` against `x`. `None` for fewer than two
/// points, a degenerate `x`, or non-finite `y`.
pub fn ols_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|(_, y)| !y.is_finite()) {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), &(x, y)| {
        (sxy + (x - mx) * (y - my), sxx + (x - mx) * (x - mx))
    });
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Exponential decay rate of `agent`'s beliefs on false hypothesis
/// `theta` over the window `[t0, t1]`.
pub fn decay_rate(
    trace: &Trace,
    agent: usize,
    theta: usize,
    window: (usize, usize),
) -> Result<DecayEstimate> {
    let (t0, t1) = window;
    if !(t0 < t1 && t1 <= trace.horizon) {
        return Err(Error::InvalidInput(format!(
            "window [{t0}, {t1}] must satisfy t0 < t1 <= {}",
            trace.horizon
        )));
    }
    if theta >= trace.hypothesis_count() {
        return Err(Error::InvalidInput(format!(
            "hypothesis {theta} out of range"
        )));
    }
    if theta == trace.true_index {
        return Err(Error::InvalidInput(
            "decay rate is defined for false hypotheses only".into(),
        ));
    }
    let slot = trace
        .slot(agent)
        .ok_or_else(|| Error::InvalidInput(format!("agent {agent} is not a regular agent")))?;
    let in_window: Vec<&TraceStep> = trace
        .steps
        .iter()
        .filter(|s| (t0..=t1).contains(&s.t))
        .collect();
    if in_window.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "window [{t0}, {t1}] holds fewer than two recorded steps"
        )));
    }
    let series = |pick: fn(&AgentBeliefs) -> &BeliefVector| {
        in_window
            .iter()
            .map(|s| (s.t as f64, pick(&s.beliefs[slot]).log(theta)))
            .collect::<Vec<_>>()
    };
    Ok(DecayEstimate {
        agent,
        hypothesis: theta,
        window,
        local_slope: ols_slope(&series(|b| &b.local)),
        actual_slope: ols_slope(&series(|b| &b.actual)),
        reference_bound: trace.reference_bounds.get(theta).copied().flatten(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Jsonl,
}

impl FromStr for TraceFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "jsonl" => Ok(TraceFormat::Jsonl),
            _ => Err(Error::InvalidInput(format!("unknown trace format `{s}`"))),
        }
    }
}

impl fmt::Display for TraceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Jsonl => "jsonl",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceHeader {
    format_version: u32,
    fingerprint: String,
    labels: Vec<String>,
    true_index: usize,
    agent_count: usize,
    regular_agents: Vec<usize>,
    horizon: usize,
    reference_bounds: Vec<Option<f64>>,
    preconditions: PreconditionReport,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum JsonlRecord {
    Header(TraceHeader),
    Belief {
        t: usize,
        agent: usize,
        log_pi: BeliefVector,
        log_mu: BeliefVector,
    },
    Message {
        t: usize,
        from: usize,
        to: usize,
        values: AdversaryMessage,
    },
}

/// Writes `trace` to `destination` atomically (temp file + rename).
///
/// * csv: `t,agent,hypothesis_label,pi,mu`, one row per (step, agent,
///   hypothesis), probabilities with 17 significant digits.
/// * jsonl: a header record (fingerprint, labels, preconditions, ...) then
///   one `belief` record per (step, agent) with log-domain vectors, and one
///   `message` record per adversary message.
pub fn export_trace(trace: &Trace, destination: &Path, format: TraceFormat) -> Result<()> {
    let dir = match destination.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| Error::io(destination, e);
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        match format {
            TraceFormat::Csv => write_csv(trace, &mut out).map_err(|e| match e {
                Error::Io { source, .. } => io(source),
                other => other,
            })?,
            TraceFormat::Jsonl => write_jsonl(trace, &mut out).map_err(io)?,
        }
        out.flush().map_err(io)?;
    }
    tmp.persist(destination).map_err(|e| io(e.error))?;
    Ok(())
}

fn write_csv<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "agent", "hypothesis_label", "pi", "mu"])
        .map_err(csv_err)?;
    for step in &trace.steps {
        for b in &step.beliefs {
            for (p, label) in trace.labels.iter().enumerate() {
                w.write_record([
                    step.t.to_string(),
                    b.agent.to_string(),
                    label.clone(),
                    format!("{:.16e}", b.local.prob(p)),
                    format!("{:.16e}", b.actual.prob(p)),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn write_jsonl<W: Write>(trace: &Trace, mut out: W) -> std::io::Result<()> {
    let mut line = |rec: &JsonlRecord| -> std::io::Result<()> {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")
    };
    line(&JsonlRecord::Header(TraceHeader {
        format_version: TRACE_FORMAT_VERSION,
        fingerprint: trace.fingerprint.clone(),
        labels: trace.labels.clone(),
        true_index: trace.true_index,
        agent_count: trace.agent_count,
        regular_agents: trace.regular_agents.clone(),
        horizon: trace.horizon,
        reference_bounds: trace.reference_bounds.clone(),
        preconditions: trace.preconditions.clone(),
    }))?;
    for step in &trace.steps {
        for b in &step.beliefs {
            line(&JsonlRecord::Belief {
                t: step.t,
                agent: b.agent,
                log_pi: b.local.clone(),
                log_mu: b.actual.clone(),
            })?;
        }
        for msg in &step.messages {
            line(&JsonlRecord::Message {
                t: step.t,
                from: msg.from,
                to: msg.to,
                values: msg.values.clone(),
            })?;
        }
    }
    Ok(())
}

/// Reads a JSONL trace written by [`export_trace`].
pub fn import_trace(path: &Path) -> Result<Trace> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header: Option<TraceHeader> = None;
    let mut steps: Vec<TraceStep> = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let (t, rec) = match rec {
            JsonlRecord::Header(h) => {
                if header.is_some() {
                    return Err(parse_err(lineno, "duplicate header record".into()));
                }
                if h.format_version != TRACE_FORMAT_VERSION {
                    return Err(parse_err(
                        lineno,
                        format!("unsupported trace format version {}", h.format_version),
                    ));
                }
                header = Some(h);
                continue;
            }
            JsonlRecord::Belief { t, .. } | JsonlRecord::Message { t, .. } => (t, rec),
        };
        if header.is_none() {
            return Err(parse_err(lineno, "first record must be the header".into()));
        }
        match steps.last() {
            Some(s) if s.t == t => {}
            Some(s) if s.t > t => {
                return Err(parse_err(lineno, format!("step {t} after step {}", s.t)))
            }
            _ => steps.push(TraceStep {
                t,
                beliefs: Vec::new(),
                messages: Vec::new(),
            }),
        }
        let step = steps.last_mut().expect("pushed above");
        match rec {
            JsonlRecord::Belief {
                agent,
                log_pi,
                log_mu,
                ..
            } => step.beliefs.push(AgentBeliefs {
                agent,
                local: log_pi,
                actual: log_mu,
            }),
            JsonlRecord::Message {
                from, to, values, ..
            } => step.messages.push(EdgeMessage { from, to, values }),
            JsonlRecord::Header(_) => unreachable!(),
        }
    }
    let h = header.ok_or_else(|| parse_err(0, "missing header record".into()))?;
    for s in &steps {
        let agents: Vec<usize> = s.beliefs.iter().map(|b| b.agent).collect();
        if agents != h.regular_agents {
            return Err(parse_err(
                0,
                format!(
                    "step {} lists agents {agents:?}, header says {:?}",
                    s.t, h.regular_agents
                ),
            ));
        }
    }
    if steps.is_empty() {
        return Err(parse_err(0, "trace holds no steps".into()));
    }
    Ok(Trace {
        fingerprint: h.fingerprint,
        labels: h.labels,
        true_index: h.true_index,
        agent_count: h.agent_count,
        regular_agents: h.regular_agents,
        horizon: h.horizon,
        reference_bounds: h.reference_bounds,
        preconditions: h.preconditions,
        steps,
    })
}
