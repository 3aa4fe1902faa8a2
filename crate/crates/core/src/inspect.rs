//! Parameter accounting for a strategy's networks.

use crate::marl::{PolicySet, StrategyKind};
use crate::policy::{LayerSlice, ModelKind, ParamCounts};
use crate::qsim::AnsatzConfig;
use serde::Serialize;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Actor,
    Critic,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Actor => "actor",
            Role::Critic => "critic",
        })
    }
}

/// One trainable network and the agents whose experience updates it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Block {
    pub learner: usize,
    pub role: Role,
    pub agents: Vec<usize>,
    pub layers: Vec<LayerSlice>,
    pub counts: ParamCounts,
}

/// A quantum-weight total that is often quoted for the 13-qubit, 9-layer
/// hybrid actor. The closed form gives a different number, so the report
/// points it out.
pub const QUOTED_QUANTUM_COUNT: usize = 1170;

/// `hybrid_layers × qubits × layers × rotations` for one hybrid actor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClosedForm {
    pub hybrid_layers: usize,
    pub ansatz: AnsatzConfig,
}

impl ClosedForm {
    pub fn per_circuit(&self) -> usize {
        self.ansatz.n_qubits * self.ansatz.n_layers * self.ansatz.entanglement.rotations_per_qubit()
    }

    pub fn per_actor(&self) -> usize {
        self.hybrid_layers * self.per_circuit()
    }

    /// Set when the configuration is the one the quoted total refers to and
    /// the numbers disagree.
    pub fn discrepancy_note(&self) -> Option<String> {
        let a = self.ansatz;
        if (a.n_qubits, a.n_layers) != (13, 9) || self.per_actor() == QUOTED_QUANTUM_COUNT {
            return None;
        }
        Some(format!(
            "note: {QUOTED_QUANTUM_COUNT} quantum weights are sometimes quoted for this 13-qubit, 9-layer setup, \
             but the closed form gives {} ({} per circuit); {QUOTED_QUANTUM_COUNT} would take {:.2} circuits",
            self.per_actor(),
            self.per_circuit(),
            QUOTED_QUANTUM_COUNT as f64 / self.per_circuit() as f64
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub strategy: StrategyKind,
    pub blocks: Vec<Block>,
    pub totals: ParamCounts,
    /// Present for hybrid actors.
    pub closed_form: Option<ClosedForm>,
}

impl ModelReport {
    pub fn new(policies: &PolicySet) -> Self {
        let mut blocks = Vec::new();
        for own in &policies.ownership {
            let model = &policies.models[own.learner];
            let nets = std::iter::once((Role::Actor, &model.actor))
                .chain(model.critic.iter().map(|c| (Role::Critic, c)));
            for (role, net) in nets {
                blocks.push(Block {
                    learner: own.learner,
                    role,
                    agents: own.agents.clone(),
                    layers: net.layout().slices.clone(),
                    counts: net.layout().counts(),
                });
            }
        }
        let totals = blocks
            .iter()
            .fold(ParamCounts::default(), |acc, b| ParamCounts {
                classical: acc.classical + b.counts.classical,
                quantum: acc.quantum + b.counts.quantum,
            });
        let spec = policies.models[0].actor.spec();
        let closed_form = (spec.kind == ModelKind::Quantum).then_some(ClosedForm {
            hybrid_layers: spec.n_hybrid_layers,
            ansatz: spec.ansatz,
        });
        Self {
            strategy: policies.strategy,
            blocks,
            totals,
            closed_form,
        }
    }

    /// Actor block that `agent` acts with.
    pub fn actor_of_agent(&self, agent: usize) -> Option<&Block> {
        self.blocks
            .iter()
            .find(|b| b.role == Role::Actor && b.agents.contains(&agent))
    }
}

impl fmt::Display for ModelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "strategy: {}", self.strategy.name())?;
        for b in &self.blocks {
            writeln!(f)?;
            writeln!(
                f,
                "learner {} {} (agents {:?})",
                b.learner, b.role, b.agents
            )?;
            writeln!(f, "  {:<24} {:<10} {:>8}", "layer", "kind", "params")?;
            for s in &b.layers {
                let kind = match s.kind {
                    crate::policy::ParamKind::Classical => "classical",
                    crate::policy::ParamKind::Quantum => "quantum",
                };
                writeln!(f, "  {:<24} {:<10} {:>8}", s.name, kind, s.len)?;
            }
            writeln!(
                f,
                "  classical {}  quantum {}  total {}",
                b.counts.classical,
                b.counts.quantum,
                b.counts.total()
            )?;
        }
        writeln!(f)?;
        writeln!(f, "ownership")?;
        writeln!(f, "  {:<6} {:<8} {}", "agent", "learner", "acts with")?;
        for agent in 0..crate::marl::N_AGENTS {
            if let Some(b) = self.actor_of_agent(agent) {
                writeln!(
                    f,
                    "  {:<6} {:<8} learner {} actor",
                    agent, b.learner, b.learner
                )?;
            }
        }
        if let Some(cf) = &self.closed_form {
            writeln!(f)?;
            writeln!(
                f,
                "quantum weights per actor: {} hybrid layers x {} qubits x {} layers x {} rotations = {}",
                cf.hybrid_layers,
                cf.ansatz.n_qubits,
                cf.ansatz.n_layers,
                cf.ansatz.entanglement.rotations_per_qubit(),
                cf.per_actor()
            )?;
            if let Some(note) = cf.discrepancy_note() {
                writeln!(f, "{note}")?;
            }
        }
        writeln!(f)?;
        write!(
            f,
            "trainable weights: classical {}  quantum {}  total {}",
            self.totals.classical,
            self.totals.quantum,
            self.totals.total()
        )
    }
}
