use std::io::Write;
use std::path::{Path, PathBuf};

use minlearn_core::analysis::{
    convergence_time, decay_rate, default_window, export_trace, import_trace, DEFAULT_EPSILON,
};
use minlearn_core::engine::{precondition_report, run, seed_sweep};
use minlearn_core::model::source_set;
use minlearn_core::{AgentSet, TraceFormat};

use crate::config::{load_experiment, Experiment, InclusiveRange};
use crate::{CliError, EXIT_FAILURE, EXIT_OK};

fn set(s: &AgentSet) -> String {
    format!("{s:?}")
}

/// Prints every learning precondition for the configured rule.
pub fn cmd_check(config_path: &Path, out: &mut dyn Write) -> Result<u8, CliError> {
    let exp = load_experiment(config_path)?;
    let config = &exp.config;
    let report = precondition_report(config);
    writeln!(out, "rule: {}", report.rule)?;
    writeln!(
        out,
        "agents: {} ({} regular), hypotheses: {}, diameter: {}",
        config.graph.node_count(),
        config.regular_agents().len(),
        config.hypotheses.len(),
        report
            .diameter
            .map_or_else(|| "undefined".to_string(), |d| d.to_string())
    )?;
    for c in &report.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status} {}: {}", c.name, c.detail)?;
        if !c.passed {
            writeln!(out, "     witness: {}", set(&c.witness))?;
        }
    }
    let failed = report.failures().count();
    writeln!(
        out,
        "result: {}/{} checks passed",
        report.checks.len() - failed,
        report.checks.len()
    )?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
}

/// Prints `S(θp, θq)` for every unordered pair; empty sets are flagged.
pub fn cmd_source_sets(config_path: &Path, out: &mut dyn Write) -> Result<u8, CliError> {
    let exp = load_experiment(config_path)?;
    let config = &exp.config;
    let h = &config.hypotheses;
    let rows: Vec<(String, AgentSet)> = h
        .pairs()
        .map(|(p, q)| {
            let s = source_set(&config.model, p, q).map_err(|e| CliError::Usage(e.to_string()))?;
            Ok((format!("{} | {}", h.label(p), h.label(q)), s))
        })
        .collect::<Result<_, CliError>>()?;
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(4);
    writeln!(out, "{:<width$}  sources", "pair")?;
    let mut empty = 0;
    for (label, s) in &rows {
        if s.is_empty() {
            empty += 1;
            writeln!(out, "{label:<width$}  {{}}  EMPTY")?;
        } else {
            writeln!(out, "{label:<width$}  {}", set(s))?;
        }
    }
    if empty > 0 {
        writeln!(out, "{empty} pair(s) have no source agent")?;
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

/// Flag overrides for `simulate`. `None` keeps the experiment file value.
#[derive(Debug, Clone, Default)]
pub struct SimulateOverrides {
    pub seed: Option<u64>,
    pub seeds: Option<InclusiveRange>,
    pub horizon: Option<usize>,
    pub output: Option<PathBuf>,
    pub format: Option<TraceFormat>,
    pub thin: Option<usize>,
    pub checked: bool,
}

fn infer_format(path: &Path) -> TraceFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => TraceFormat::Csv,
        _ => TraceFormat::Jsonl,
    }
}

/// `dir/stem.ext` becomes `dir/stem_seed<k>.ext`.
pub fn seed_path(base: &Path, seed: u64) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_seed{seed}.{ext}"),
        None => format!("{stem}_seed{seed}"),
    };
    base.with_file_name(name)
}

fn apply(exp: &mut Experiment, o: &SimulateOverrides) -> Result<(), CliError> {
    if o.seed.is_some() && o.seeds.is_some() {
        return Err(CliError::Usage(
            "--seed and --seeds are mutually exclusive".into(),
        ));
    }
    if let Some(t) = o.horizon {
        if t == 0 {
            return Err(CliError::Usage("--horizon must be at least 1".into()));
        }
        exp.config.horizon = t;
    }
    if let Some(k) = o.thin {
        if k == 0 {
            return Err(CliError::Usage("--thin must be at least 1".into()));
        }
        exp.config.record_every = k;
    }
    if let Some(s) = o.seed {
        exp.config.seed = s;
        exp.seeds = None;
    }
    if o.seeds.is_some() {
        exp.seeds = o.seeds;
    }
    if o.output.is_some() {
        exp.output = o.output.clone();
    }
    if o.format.is_some() {
        exp.format = o.format;
    }
    exp.config.checked_mode |= o.checked;
    Ok(())
}

/// Runs the experiment (or a seed sweep) and writes one trace per seed.
pub fn cmd_simulate(
    config_path: &Path,
    overrides: &SimulateOverrides,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let mut exp = load_experiment(config_path)?;
    apply(&mut exp, overrides)?;
    let output = exp.output.clone().ok_or_else(|| {
        CliError::Usage("no output path: set output.path or pass --output".into())
    })?;
    let format = exp.format.unwrap_or_else(|| infer_format(&output));

    let (seeds, results) = match exp.seeds {
        Some(range) => {
            let seeds = range.values();
            let results = seed_sweep(&exp.config, &seeds);
            (seeds, results)
        }
        None => (vec![exp.config.seed], vec![run(&exp.config)]),
    };
    let sweep = exp.seeds.is_some();

    let mut failed = 0;
    for (seed, result) in seeds.iter().zip(results) {
        match result {
            Ok(trace) => {
                let path = if sweep {
                    seed_path(&output, *seed)
                } else {
                    output.clone()
                };
                export_trace(&trace, &path, format).map_err(|e| CliError::Usage(e.to_string()))?;
                let pre = if trace.preconditions.passed() {
                    "preconditions pass".to_string()
                } else {
                    format!(
                        "{} precondition(s) fail",
                        trace.preconditions.failures().count()
                    )
                };
                writeln!(
                    out,
                    "seed {seed}: wrote {} ({} steps recorded, {pre}, fingerprint {})",
                    path.display(),
                    trace.steps.len(),
                    &trace.fingerprint[..12]
                )?;
            }
            Err(e) => {
                failed += 1;
                writeln!(out, "seed {seed}: run aborted: {e}")?;
            }
        }
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
}

fn slope(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

/// Convergence summary and per-false-hypothesis decay estimates of a
/// JSONL trace.
pub fn cmd_analyze(
    trace_path: &Path,
    epsilon: Option<f64>,
    window: Option<InclusiveRange>,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let trace = import_trace(trace_path).map_err(|e| CliError::Usage(e.to_string()))?;
    let epsilon = epsilon.unwrap_or(DEFAULT_EPSILON);
    let summary = convergence_time(&trace, epsilon).map_err(|e| CliError::Usage(e.to_string()))?;
    let window = match window {
        Some(w) => (w.start as usize, w.end as usize),
        None => default_window(&trace),
    };
    let truth = trace.true_index;
    let mut estimates = Vec::new();
    for &agent in &trace.regular_agents {
        for theta in (0..trace.hypothesis_count()).filter(|&p| p != truth) {
            estimates.push(
                decay_rate(&trace, agent, theta, window)
                    .map_err(|e| CliError::Usage(e.to_string()))?,
            );
        }
    }

    writeln!(out, "trace: {}", trace.fingerprint)?;
    writeln!(
        out,
        "horizon: {}, regular agents: {}, truth: {}",
        trace.horizon,
        trace.regular_agents.len(),
        trace.labels[truth]
    )?;
    writeln!(out, "convergence (epsilon {epsilon}):")?;
    for a in &summary.agents {
        match a.time {
            Some(t) => writeln!(out, "  agent {}: t = {t}", a.agent)?,
            None => writeln!(out, "  agent {}: none", a.agent)?,
        }
    }
    match summary.network {
        Some(t) => writeln!(out, "network: t = {t}")?,
        None => writeln!(out, "network: none")?,
    }
    writeln!(out, "decay over [{}, {}] (nats/step):", window.0, window.1)?;
    let width = trace
        .labels
        .iter()
        .map(|l| l.len())
        .max()
        .unwrap_or(0)
        .max(10);
    writeln!(
        out,
        "  {:>5}  {:<width$}  {:>12}  {:>12}  {:>12}",
        "agent", "hypothesis", "local", "actual", "bound"
    )?;
    for e in &estimates {
        writeln!(
            out,
            "  {:>5}  {:<width$}  {:>12}  {:>12}  {:>12}",
            e.agent,
            trace.labels[e.hypothesis],
            slope(e.local_slope),
            slope(e.actual_slope),
            slope(e.reference_bound.map(|d| -d)),
        )?;
    }
    Ok(if summary.all_converged() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_paths_keep_directory_and_extension() {
        assert_eq!(
            seed_path(Path::new("out/run.jsonl"), 3),
            PathBuf::from("out/run_seed3.jsonl")
        );
        assert_eq!(seed_path(Path::new("run"), 1), PathBuf::from("run_seed1"));
    }

    #[test]
    fn format_follows_extension() {
        assert_eq!(infer_format(Path::new("a.csv")), TraceFormat::Csv);
        assert_eq!(infer_format(Path::new("a.jsonl")), TraceFormat::Jsonl);
        assert_eq!(infer_format(Path::new("a")), TraceFormat::Jsonl);
    }
}
