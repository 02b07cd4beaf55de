//! Fixtures shared by the criterion benchmarks.

use minlearn_core::{
    AdversaryConfig, AgentSet, DirectedGraph, HypothesisSet, ObservationModel, Rule,
    SignalStructure, SimulationConfig, Strategy,
};

/// `n` agents on a complete graph; agent `i` separates hypothesis
/// `i % (m - 1) + 1` from the first one, all others are blind.
pub fn complete_network(n: usize, m: usize, horizon: usize) -> SimulationConfig {
    let structures = (0..n)
        .map(|i| {
            let target = i % (m - 1) + 1;
            let rows = (0..m)
                .map(|p| {
                    if p == target {
                        vec![0.2, 0.8]
                    } else {
                        vec![0.8, 0.2]
                    }
                })
                .collect();
            SignalStructure::new(rows).expect("valid rows")
        })
        .collect();
    SimulationConfig::new(
        HypothesisSet::numbered(m, 0).expect("m >= 2"),
        DirectedGraph::complete(n).expect("n >= 1"),
        ObservationModel::independent(structures).expect("consistent structures"),
    )
    .with_horizon(horizon)
}

pub fn adversarial_network(n: usize, m: usize, horizon: usize) -> SimulationConfig {
    complete_network(n, m, horizon)
        .with_rule(Rule::Lfrhe)
        .with_adversary(AdversaryConfig {
            agents: AgentSet::from([n - 1]),
            f: 1,
            strategy: Strategy::RandomJam,
        })
}
