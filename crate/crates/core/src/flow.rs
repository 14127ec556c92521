//! DC power flow on the transmission network and one-pass loss estimation
//! on radial feeders.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};
use crate::grid::{BusId, Feeder, FeederTree, NodeId, TransmissionNetwork};

/// Step of the central difference behind [`marginal_loss_saving`], MW.
pub const LOSS_DIFF_STEP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSolution {
    /// Radians, indexed by bus id.
    pub angles: Vec<f64>,
    pub slack_bus: BusId,
}

/// Real power per branch in MW, positive in the from→to direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowVector(pub Vec<f64>);

/// Solves `B' δ = P` with the slack row and column removed.
pub fn solve_dc_angles(network: &TransmissionNetwork, injections_mw: &[f64], power_base: f64) -> Result<AngleSolution> {
    let n = network.bus_count();
    assert_eq!(injections_mw.len(), n, "one injection per bus");
    let net: f64 = injections_mw.iter().sum();
    if net.abs() > 1e-6 {
        return Err(Error::UnbalancedInjections { net_mw: net });
    }
    let slack = network.slack_bus;
    let reduced: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let pos = |bus: usize| reduced.iter().position(|&b| b == bus);
    let k = reduced.len();
    let mut b = vec![0.0; k * k];
    for br in &network.branches {
        let (f, t) = (pos(br.from_bus), pos(br.to_bus));
        if let Some(f) = f {
            b[f * k + f] += br.susceptance;
        }
        if let Some(t) = t {
            b[t * k + t] += br.susceptance;
        }
        if let (Some(f), Some(t)) = (f, t) {
            b[f * k + t] -= br.susceptance;
            b[t * k + f] -= br.susceptance;
        }
    }
    let rhs: Vec<f64> = reduced.iter().map(|&i| injections_mw[i] / power_base).collect();
    let theta = if k == 0 {
        Vec::new()
    } else {
        dense::solve(b, rhs).ok_or(Error::SingularNetwork)?
    };
    let mut angles = vec![0.0; n];
    for (idx, &bus) in reduced.iter().enumerate() {
        angles[bus] = theta[idx];
    }
    Ok(AngleSolution { angles, slack_bus: slack })
}

/// `P_l = base · B_l (δ_from − δ_to)`.
pub fn branch_flows(network: &TransmissionNetwork, angles: &[f64], power_base: f64) -> FlowVector {
    FlowVector(
        network
            .branches
            .iter()
            .map(|br| power_base * br.susceptance * (angles[br.from_bus] - angles[br.to_bus]))
            .collect(),
    )
}

/// Per-bus `Σ_j B_ij(δ_i − δ_j) − P_i` in per-unit.
pub fn nodal_residuals(network: &TransmissionNetwork, angles: &[f64], injections_mw: &[f64], power_base: f64) -> Vec<f64> {
    let mut out: Vec<f64> = injections_mw.iter().map(|p| -p / power_base).collect();
    for br in &network.branches {
        let f = br.susceptance * (angles[br.from_bus] - angles[br.to_bus]);
        out[br.from_bus] += f;
        out[br.to_bus] -= f;
    }
    out
}

/// Net outflow per bus reconstructed from branch flows, MW.
pub fn bus_outflows(network: &TransmissionNetwork, flows: &FlowVector) -> Vec<f64> {
    let mut out = vec![0.0; network.bus_count()];
    for (br, f) in network.branches.iter().zip(&flows.0) {
        out[br.from_bus] += f;
        out[br.to_bus] -= f;
    }
    out
}

/// Feeder operating point after responsive-load reductions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederState {
    /// Indexed like `Feeder::nodes`, MW.
    pub net_load_p: Vec<f64>,
    /// MVAr.
    pub net_load_q: Vec<f64>,
    /// Downstream accumulated flow per branch (indexed like `Feeder::branches`), MW.
    pub branch_flow_p: Vec<f64>,
    pub branch_flow_q: Vec<f64>,
    pub branch_loss: Vec<f64>,
    /// MW.
    pub total_loss: f64,
}

/// Backward sweep with arbitrary net loads; no range checks.
pub(crate) fn sweep(feeder: &Feeder, tree: &FeederTree, net_p: Vec<f64>, net_q: Vec<f64>) -> FeederState {
    let mut sub_p = net_p.clone();
    let mut sub_q = net_q.clone();
    for &u in tree.order.iter().rev() {
        if let Some(p) = tree.parent[u] {
            sub_p[p] += sub_p[u];
            sub_q[p] += sub_q[u];
        }
    }
    let v2 = feeder.nominal_voltage * feeder.nominal_voltage;
    let mut branch_flow_p = Vec::with_capacity(feeder.branches.len());
    let mut branch_flow_q = Vec::with_capacity(feeder.branches.len());
    let mut branch_loss = Vec::with_capacity(feeder.branches.len());
    for (bi, br) in feeder.branches.iter().enumerate() {
        let child = tree.branch_child[bi];
        let (p, q) = (sub_p[child], sub_q[child]);
        branch_flow_p.push(p);
        branch_flow_q.push(q);
        branch_loss.push(br.r * (p * p + q * q) / v2);
    }
    let total_loss = branch_loss.iter().sum();
    FeederState {
        net_load_p: net_p,
        net_load_q: net_q,
        branch_flow_p,
        branch_flow_q,
        branch_loss,
        total_loss,
    }
}

fn radial(feeder: &Feeder) -> Result<FeederTree> {
    feeder.tree().map_err(|v| Error::Invalid(vec![v]))
}

/// One-pass loss estimate `Σ r (P² + Q²) / V_nom²` with the given MW
/// reductions applied to node active loads. Reactive loads stay at base.
pub fn feeder_loss(feeder: &Feeder, reductions: &BTreeMap<NodeId, f64>) -> Result<FeederState> {
    let tree = radial(feeder)?;
    let mut net_p: Vec<f64> = feeder.nodes.iter().map(|n| n.base_load_p).collect();
    let net_q: Vec<f64> = feeder.nodes.iter().map(|n| n.base_load_q).collect();
    for (&node, &mw) in reductions {
        let idx = feeder.node_index(node).ok_or(Error::UnknownNode { dso: feeder.dso, node })?;
        let load = feeder.nodes[idx].base_load_p;
        if !(mw >= 0.0) || mw > load + 1e-9 {
            return Err(Error::ReductionExceedsLoad { node, reduction: mw, load });
        }
        net_p[idx] -= mw;
    }
    Ok(sweep(feeder, &tree, net_p, net_q))
}

/// Loss reduction per MW of load reduction at `node`, evaluated at base
/// load by a central difference of step [`LOSS_DIFF_STEP`].
pub fn marginal_loss_saving(feeder: &Feeder, node: NodeId) -> Result<f64> {
    let tree = radial(feeder)?;
    let idx = feeder.node_index(node).ok_or(Error::UnknownNode { dso: feeder.dso, node })?;
    Ok(saving_at(feeder, &tree, idx))
}

pub(crate) fn saving_at(feeder: &Feeder, tree: &FeederTree, idx: usize) -> f64 {
    let base_p: Vec<f64> = feeder.nodes.iter().map(|n| n.base_load_p).collect();
    let base_q: Vec<f64> = feeder.nodes.iter().map(|n| n.base_load_q).collect();
    let shifted = |delta: f64| {
        let mut p = base_p.clone();
        p[idx] -= delta;
        sweep(feeder, tree, p, base_q.clone()).total_loss
    };
    let h = LOSS_DIFF_STEP;
    (shifted(-h) - shifted(h)) / (2.0 * h)
}
