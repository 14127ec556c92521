//! Network, feeder, bid and market configuration types.
//!
//! Everything is loaded from JSON, then checked by [`validate_system`] and
//! wrapped in a [`ValidatedSystem`], which is immutable from then on.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BusId = usize;
pub type DsoId = u32;
pub type NodeId = u32;

const SCHEDULE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub name: String,
    /// Day-ahead net injection, MW.
    pub scheduled_injection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub id: usize,
    pub from_bus: BusId,
    pub to_bus: BusId,
    /// Per-unit on the system power base.
    pub susceptance: f64,
    /// MW.
    pub flow_limit: f64,
}

/// A transmission-level generator offering regulation around its schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub id: String,
    pub bus: BusId,
    /// Largest downward regulation, MW (≤ 0).
    pub reg_min: f64,
    /// Largest upward regulation, MW (≥ 0).
    pub reg_max: f64,
    /// Currency/MWh, charged on |regulation|.
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TieLine {
    pub id: usize,
    pub transmission_bus: BusId,
    pub dso: DsoId,
    /// MW.
    pub flow_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmissionNetwork {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub description: Vec<String>,
    /// Angle reference.
    #[serde(default)]
    pub slack_bus: BusId,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub ties: Vec<TieLine>,
}

impl TransmissionNetwork {
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn tie_for(&self, dso: DsoId) -> Option<&TieLine> {
        self.ties.iter().find(|t| t.dso == dso)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederNode {
    pub node_id: NodeId,
    /// MW.
    pub base_load_p: f64,
    /// MVAr.
    pub base_load_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederBranch {
    pub from: NodeId,
    pub to: NodeId,
    /// Ohm.
    pub r: f64,
    /// Ohm.
    pub x: f64,
}

/// Radial distribution feeder operated by one DSO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feeder {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub description: Vec<String>,
    pub dso: DsoId,
    /// kV.
    pub nominal_voltage: f64,
    pub root_node: NodeId,
    pub nodes: Vec<FeederNode>,
    pub branches: Vec<FeederBranch>,
    /// Candidate responsive-load sites; empty means unrestricted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rl_locations: Vec<NodeId>,
}

/// Rooted view of a radial feeder.
#[derive(Debug, Clone)]
pub struct FeederTree {
    /// Node indices in breadth-first order from the root.
    pub order: Vec<usize>,
    /// Parent node index per node (None at the root).
    pub parent: Vec<Option<usize>>,
    /// Branch index connecting a node to its parent.
    pub parent_branch: Vec<Option<usize>>,
    /// Downstream (child) node index of every branch.
    pub branch_child: Vec<usize>,
}

impl FeederTree {
    /// Branch indices on the path from `node` up to the root.
    pub fn path_to_root(&self, mut node: usize) -> Vec<usize> {
        let mut path = Vec::new();
        while let (Some(b), Some(p)) = (self.parent_branch[node], self.parent[node]) {
            path.push(b);
            node = p;
        }
        path
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        !self.parent.iter().any(|p| *p == Some(node))
    }
}

impl Feeder {
    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.node_id == id)
    }

    pub fn node(&self, id: NodeId) -> Option<&FeederNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    /// Roots the branch graph at `root_node`. Fails with a violation code
    /// when the graph is not a tree covering every node.
    pub fn tree(&self) -> std::result::Result<FeederTree, Violation> {
        let n = self.nodes.len();
        let root = self.node_index(self.root_node).ok_or_else(|| {
            Violation::new(
                "feeder-root",
                format!("feeder {}: root node {} is not a node", self.dso, self.root_node),
            )
        })?;
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (bi, b) in self.branches.iter().enumerate() {
            let (Some(f), Some(t)) = (self.node_index(b.from), self.node_index(b.to)) else {
                return Err(Violation::new(
                    "feeder-branch-node",
                    format!("feeder {}: branch {}-{} references an unknown node", self.dso, b.from, b.to),
                ));
            };
            adj[f].push((t, bi));
            adj[t].push((f, bi));
        }
        if self.branches.len() + 1 != n {
            return Err(Violation::new(
                "non-radial",
                format!(
                    "feeder {}: {} branches for {} nodes; a radial feeder needs exactly {}",
                    self.dso,
                    self.branches.len(),
                    n,
                    n.saturating_sub(1)
                ),
            ));
        }
        let mut parent = vec![None; n];
        let mut parent_branch = vec![None; n];
        let mut branch_child = vec![usize::MAX; self.branches.len()];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, bi) in &adj[u] {
                if Some(bi) == parent_branch[u] {
                    continue;
                }
                if seen[v] {
                    return Err(Violation::new(
                        "non-radial",
                        format!("feeder {}: cycle through branch {}-{}", self.dso, self.branches[bi].from, self.branches[bi].to),
                    ));
                }
                seen[v] = true;
                parent[v] = Some(u);
                parent_branch[v] = Some(bi);
                branch_child[bi] = v;
                queue.push_back(v);
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Violation::new(
                "feeder-unreachable",
                format!("feeder {}: node {} is not reachable from the root", self.dso, self.nodes[i].node_id),
            ));
        }
        Ok(FeederTree {
            order,
            parent,
            parent_branch,
            branch_child,
        })
    }
}

/// One responsive load's offer of load reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponsiveLoadBid {
    pub id: String,
    pub dso: DsoId,
    #[serde(rename = "node")]
    pub feeder_node: NodeId,
    /// Offered reduction, MW.
    #[serde(rename = "mw")]
    pub quantity: f64,
    /// Minimum reduction when dispatched, MW.
    #[serde(default)]
    pub floor: f64,
    /// Currency/MWh.
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettlementMode {
    #[default]
    PayAsBid,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    #[default]
    PassThrough,
    LossAdjusted,
}

fn default_loss_price() -> f64 {
    10.0
}

fn default_power_base() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    /// Price of the unlimited two-sided slack resource, currency/MWh.
    pub penalty_price: f64,
    /// Hourly cost of conventional balancing, currency/h.
    pub conventional_cost: f64,
    /// Price applied to feeder losses in local markets, currency/MWh.
    #[serde(default = "default_loss_price")]
    pub loss_price: f64,
    #[serde(default)]
    pub settlement_mode: SettlementMode,
    /// MVA.
    #[serde(default = "default_power_base")]
    pub power_base: f64,
    #[serde(default)]
    pub aggregation: AggregationMode,
}

/// Parsed but not yet validated input set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct System {
    pub network: TransmissionNetwork,
    pub feeders: Vec<Feeder>,
    pub bids: Vec<ResponsiveLoadBid>,
    pub config: MarketConfig,
}

/// A machine-readable invariant failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub message: String,
}

impl Violation {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}

/// Checks every type invariant. An empty list means the system is valid.
pub fn validate_system(sys: &System) -> Vec<Violation> {
    let mut out = Vec::new();
    validate_network(&sys.network, &mut out);
    validate_feeders(sys, &mut out);
    validate_bids(sys, &mut out);
    validate_config(sys, &mut out);
    out
}

fn validate_network(net: &TransmissionNetwork, out: &mut Vec<Violation>) {
    let n = net.buses.len();
    if n == 0 {
        out.push(Violation::new("bus-ids", "network has no buses"));
        return;
    }
    for (i, bus) in net.buses.iter().enumerate() {
        if bus.id != i {
            out.push(Violation::new(
                "bus-ids",
                format!("bus at position {i} has id {}; ids must be unique and contiguous from 0", bus.id),
            ));
        }
    }
    let total: f64 = net.buses.iter().map(|b| b.scheduled_injection).sum();
    if total.abs() > SCHEDULE_TOL {
        out.push(Violation::new(
            "schedule-imbalance",
            format!("scheduled injections sum to {total} MW instead of 0"),
        ));
    }
    if net.slack_bus >= n {
        out.push(Violation::new("slack-bus", format!("slack bus {} does not exist", net.slack_bus)));
    }

    let mut adj = vec![Vec::new(); n];
    for br in &net.branches {
        if br.from_bus >= n || br.to_bus >= n {
            out.push(Violation::new(
                "branch-bus",
                format!("branch {} references bus {}-{} outside 0..{n}", br.id, br.from_bus, br.to_bus),
            ));
            continue;
        }
        if br.from_bus == br.to_bus {
            out.push(Violation::new("branch-self-loop", format!("branch {} connects bus {} to itself", br.id, br.from_bus)));
        }
        if !(br.susceptance > 0.0) {
            out.push(Violation::new(
                "branch-susceptance",
                format!("branch {} susceptance {} must be positive", br.id, br.susceptance),
            ));
        }
        if !(br.flow_limit > 0.0) {
            out.push(Violation::new(
                "branch-limit",
                format!("branch {} flow limit {} must be positive", br.id, br.flow_limit),
            ));
        }
        adj[br.from_bus].push(br.to_bus);
        adj[br.to_bus].push(br.from_bus);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    let unreached: Vec<_> = (0..n).filter(|&i| !seen[i]).collect();
    if !unreached.is_empty() {
        out.push(Violation::new("disconnected", format!("buses {unreached:?} are not connected to bus 0")));
    }

    let mut gen_ids = BTreeSet::new();
    for g in &net.generators {
        if !gen_ids.insert(g.id.as_str()) {
            out.push(Violation::new("gen-duplicate", format!("generator id {} is repeated", g.id)));
        }
        if g.bus >= n {
            out.push(Violation::new("gen-bus", format!("generator {} sits on unknown bus {}", g.id, g.bus)));
        }
        if !(g.reg_min <= 0.0 && 0.0 <= g.reg_max) {
            out.push(Violation::new(
                "gen-range",
                format!("generator {} needs reg_min ≤ 0 ≤ reg_max, got [{}, {}]", g.id, g.reg_min, g.reg_max),
            ));
        }
        if !(g.price >= 0.0) {
            out.push(Violation::new("gen-price", format!("generator {} price {} is negative", g.id, g.price)));
        }
    }

    let mut tie_dsos = BTreeSet::new();
    for t in &net.ties {
        if t.transmission_bus >= n {
            out.push(Violation::new(
                "tie-bus",
                format!("tie {} attaches DSO {} to unknown bus {}", t.id, t.dso, t.transmission_bus),
            ));
        }
        if !tie_dsos.insert(t.dso) {
            out.push(Violation::new("tie-dso", format!("DSO {} is attached by more than one tie", t.dso)));
        }
        if !(t.flow_limit > 0.0) {
            out.push(Violation::new("tie-limit", format!("tie {} flow limit {} must be positive", t.id, t.flow_limit)));
        }
    }
}

fn validate_feeders(sys: &System, out: &mut Vec<Violation>) {
    let mut dsos = BTreeSet::new();
    for f in &sys.feeders {
        if !dsos.insert(f.dso) {
            out.push(Violation::new("feeder-duplicate", format!("DSO {} has more than one feeder", f.dso)));
        }
        if sys.network.tie_for(f.dso).is_none() {
            out.push(Violation::new("tie-missing", format!("DSO {} has a feeder but no tie line", f.dso)));
        }
        if !(f.nominal_voltage > 0.0) {
            out.push(Violation::new(
                "feeder-voltage",
                format!("feeder {} nominal voltage {} must be positive", f.dso, f.nominal_voltage),
            ));
        }
        let mut ids = BTreeSet::new();
        for node in &f.nodes {
            if !ids.insert(node.node_id) {
                out.push(Violation::new("feeder-node-duplicate", format!("feeder {}: node {} repeated", f.dso, node.node_id)));
            }
            if !(node.base_load_p >= 0.0) || !node.base_load_q.is_finite() {
                out.push(Violation::new(
                    "feeder-load",
                    format!("feeder {}: node {} load must be finite with P ≥ 0", f.dso, node.node_id),
                ));
            }
        }
        for b in &f.branches {
            if !(b.r >= 0.0) || !b.x.is_finite() {
                out.push(Violation::new(
                    "feeder-resistance",
                    format!("feeder {}: branch {}-{} needs r ≥ 0, got {}", f.dso, b.from, b.to, b.r),
                ));
            }
        }
        for loc in &f.rl_locations {
            if !ids.contains(loc) {
                out.push(Violation::new(
                    "dangling-node",
                    format!("feeder {}: responsive-load location {loc} is not a node", f.dso),
                ));
            }
        }
        if let Err(v) = f.tree() {
            out.push(v);
        }
    }
}

fn validate_bids(sys: &System, out: &mut Vec<Violation>) {
    let feeders: HashMap<DsoId, &Feeder> = sys.feeders.iter().map(|f| (f.dso, f)).collect();
    let mut ids = BTreeSet::new();
    let mut per_node: BTreeMap<(DsoId, NodeId), f64> = BTreeMap::new();
    for bid in &sys.bids {
        if !ids.insert(bid.id.as_str()) {
            out.push(Violation::new("bid-duplicate", format!("bid id {} is repeated", bid.id)));
        }
        if !(0.0 <= bid.floor && bid.floor <= bid.quantity) {
            out.push(Violation::new(
                "bid-range",
                format!("bid {} needs 0 ≤ floor ≤ quantity, got floor {} quantity {}", bid.id, bid.floor, bid.quantity),
            ));
        }
        if !(bid.price >= 0.0) {
            out.push(Violation::new("bid-price", format!("bid {} price {} is negative", bid.id, bid.price)));
        }
        let Some(feeder) = feeders.get(&bid.dso) else {
            out.push(Violation::new("unknown-dso", format!("bid {} references unknown DSO {}", bid.id, bid.dso)));
            continue;
        };
        let Some(node) = feeder.node(bid.feeder_node) else {
            out.push(Violation::new(
                "dangling-node",
                format!("bid {} references node {} absent from the feeder of DSO {}", bid.id, bid.feeder_node, bid.dso),
            ));
            continue;
        };
        if !feeder.rl_locations.is_empty() && !feeder.rl_locations.contains(&bid.feeder_node) {
            out.push(Violation::new(
                "bid-location",
                format!("bid {} sits at node {}, not a listed responsive-load location of DSO {}", bid.id, bid.feeder_node, bid.dso),
            ));
        }
        let total = per_node.entry((bid.dso, bid.feeder_node)).or_default();
        *total += bid.quantity;
        if *total > node.base_load_p + SCHEDULE_TOL {
            out.push(Violation::new(
                "bid-exceeds-load",
                format!(
                    "bids at node {} of DSO {} offer {} MW but the node only consumes {} MW",
                    bid.feeder_node, bid.dso, total, node.base_load_p
                ),
            ));
        }
    }
}

fn validate_config(sys: &System, out: &mut Vec<Violation>) {
    let c = &sys.config;
    let max_price = sys
        .bids
        .iter()
        .map(|b| b.price)
        .chain(sys.network.generators.iter().map(|g| g.price))
        .fold(0.0_f64, f64::max);
    if !(c.penalty_price > max_price) {
        out.push(Violation::new(
            "penalty-price",
            format!("penalty price {} must exceed every bid price (max {max_price})", c.penalty_price),
        ));
    }
    if !(c.loss_price >= 0.0) {
        out.push(Violation::new("loss-price", format!("loss price {} is negative", c.loss_price)));
    }
    if !(c.power_base > 0.0) {
        out.push(Violation::new("power-base", format!("power base {} must be positive", c.power_base)));
    }
    if !c.conventional_cost.is_finite() {
        out.push(Violation::new("conventional-cost", "conventional cost must be finite"));
    }
}

/// A system whose every invariant has been checked. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSystem {
    inner: System,
}

impl ValidatedSystem {
    pub fn new(mut system: System) -> Result<Self> {
        let violations = validate_system(&system);
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        system.feeders.sort_by_key(|f| f.dso);
        Ok(Self { inner: system })
    }

    pub fn system(&self) -> &System {
        &self.inner
    }

    pub fn into_inner(self) -> System {
        self.inner
    }

    pub fn network(&self) -> &TransmissionNetwork {
        &self.inner.network
    }

    pub fn config(&self) -> &MarketConfig {
        &self.inner.config
    }

    pub fn bids(&self) -> &[ResponsiveLoadBid] {
        &self.inner.bids
    }

    /// DSO ids with a tie line, ascending.
    pub fn dsos(&self) -> Vec<DsoId> {
        let set: BTreeSet<DsoId> = self.inner.network.ties.iter().map(|t| t.dso).collect();
        set.into_iter().collect()
    }

    pub fn feeder(&self, dso: DsoId) -> Option<&Feeder> {
        self.inner.feeders.iter().find(|f| f.dso == dso)
    }

    pub fn bids_for(&self, dso: DsoId) -> Vec<ResponsiveLoadBid> {
        self.inner.bids.iter().filter(|b| b.dso == dso).cloned().collect()
    }

    /// Ids of every market participant: generators first, then RLs.
    pub fn participants(&self) -> Vec<String> {
        self.inner
            .network
            .generators
            .iter()
            .map(|g| g.id.clone())
            .chain(self.inner.bids.iter().map(|b| b.id.clone()))
            .collect()
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Schema {
        path: path.to_owned(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("dataset types always serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Parses the input files without checking invariants.
pub fn read_system<P: AsRef<Path>>(network_file: &Path, feeder_files: &[P], bids_file: &Path, config_file: &Path) -> Result<System> {
    let network = read_json(network_file)?;
    let feeders = feeder_files.iter().map(|p| read_json(p.as_ref())).collect::<Result<Vec<Feeder>>>()?;
    let bids = read_json(bids_file)?;
    let config = read_json(config_file)?;
    Ok(System {
        network,
        feeders,
        bids,
        config,
    })
}

/// Parses and validates a dataset.
pub fn load_dataset<P: AsRef<Path>>(
    network_file: &Path,
    feeder_files: &[P],
    bids_file: &Path,
    config_file: &Path,
) -> Result<ValidatedSystem> {
    ValidatedSystem::new(read_system(network_file, feeder_files, bids_file, config_file)?)
}

/// File locations of a dataset laid out as `network.json`,
/// `feeder-<dso>.json`, `bids.json` and `config.json` in one directory.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub network: PathBuf,
    pub feeders: Vec<PathBuf>,
    pub bids: PathBuf,
    pub config: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path, dsos: &[DsoId]) -> Self {
        Self {
            network: dir.join("network.json"),
            feeders: dsos.iter().map(|d| dir.join(format!("feeder-{d}.json"))).collect(),
            bids: dir.join("bids.json"),
            config: dir.join("config.json"),
        }
    }

    /// The bundled 5-bus system with three 13-node feeders.
    pub fn bundled() -> Self {
        Self::in_dir(&crate::bundled_data_dir(), &[1, 2, 3])
    }

    pub fn load(&self) -> Result<ValidatedSystem> {
        load_dataset(&self.network, &self.feeders, &self.bids, &self.config)
    }
}

/// Writes a system in the input file layout; returns the paths written.
pub fn write_dataset(system: &System, dir: &Path) -> Result<DatasetPaths> {
    let dsos: Vec<DsoId> = system.feeders.iter().map(|f| f.dso).collect();
    let paths = DatasetPaths::in_dir(dir, &dsos);
    write_json(&paths.network, &system.network)?;
    for (f, p) in system.feeders.iter().zip(&paths.feeders) {
        write_json(p, f)?;
    }
    write_json(&paths.bids, &system.bids)?;
    write_json(&paths.config, &system.config)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled() -> System {
        DatasetPaths::bundled().load().unwrap().into_inner()
    }

    fn codes(sys: &System) -> Vec<String> {
        validate_system(sys).into_iter().map(|v| v.code).collect()
    }

    #[test]
    fn bundled_dataset_is_valid() {
        assert!(validate_system(&bundled()).is_empty());
    }

    #[test]
    fn positive_reg_min_is_gen_range() {
        let mut sys = bundled();
        sys.network.generators[0].reg_min = 1.0;
        assert_eq!(codes(&sys), ["gen-range"]);
    }

    #[test]
    fn unbalanced_schedule() {
        let mut sys = bundled();
        sys.network.buses[1].scheduled_injection += 0.5;
        assert_eq!(codes(&sys), ["schedule-imbalance"]);
    }

    #[test]
    fn disconnected_bus() {
        let mut sys = bundled();
        sys.network.branches.retain(|b| b.from_bus != 4 && b.to_bus != 4);
        assert!(codes(&sys).contains(&"disconnected".to_owned()));
    }

    #[test]
    fn branch_invariants() {
        let mut sys = bundled();
        sys.network.branches[0].susceptance = 0.0;
        sys.network.branches[1].flow_limit = -1.0;
        sys.network.branches[2].to_bus = sys.network.branches[2].from_bus;
        let c = codes(&sys);
        for code in ["branch-susceptance", "branch-limit", "branch-self-loop"] {
            assert!(c.contains(&code.to_owned()), "{code} missing from {c:?}");
        }
    }

    #[test]
    fn cycle_is_non_radial() {
        let mut sys = bundled();
        sys.feeders[0].branches.push(FeederBranch {
            from: 646,
            to: 611,
            r: 0.1,
            x: 0.1,
        });
        assert!(codes(&sys).contains(&"non-radial".to_owned()));
    }

    #[test]
    fn swapped_branch_leaves_node_unreachable() {
        let mut sys = bundled();
        // keep the branch count but close a loop and orphan node 652
        let b = sys.feeders[1].branches.iter_mut().find(|b| b.to == 652).unwrap();
        b.from = 611;
        b.to = 646;
        let c = codes(&sys);
        assert!(c.contains(&"non-radial".to_owned()) || c.contains(&"feeder-unreachable".to_owned()), "{c:?}");
    }

    #[test]
    fn dangling_node_names_the_node() {
        let mut sys = bundled();
        sys.bids[0].feeder_node = 699;
        let v = validate_system(&sys);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code, "dangling-node");
        assert!(v[0].message.contains("699"));
    }

    #[test]
    fn bid_over_base_load() {
        let mut sys = bundled();
        sys.bids[2].quantity = 50.0;
        assert!(codes(&sys).contains(&"bid-exceeds-load".to_owned()));
    }

    #[test]
    fn unknown_dso() {
        let mut sys = bundled();
        sys.bids[0].dso = 9;
        assert_eq!(codes(&sys), ["unknown-dso"]);
    }

    #[test]
    fn penalty_below_bids() {
        let mut sys = bundled();
        sys.config.penalty_price = 20.0;
        assert_eq!(codes(&sys), ["penalty-price"]);
    }

    #[test]
    fn tree_paths() {
        let sys = bundled();
        let f = &sys.feeders[0];
        let tree = f.tree().unwrap();
        let i675 = f.node_index(675).unwrap();
        let path: Vec<(u32, u32)> = tree
            .path_to_root(i675)
            .into_iter()
            .map(|b| (f.branches[b].from, f.branches[b].to))
            .collect();
        assert_eq!(path, [(692, 675), (671, 692), (632, 671), (650, 632)]);
        assert!(tree.is_leaf(i675));
        assert!(!tree.is_leaf(f.node_index(671).unwrap()));
    }
}
