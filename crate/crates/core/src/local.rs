//! Per-DSO local market: bid aggregation before central clearing and
//! responsive-load dispatch after it.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};
use crate::flow;
use crate::grid::{AggregationMode, DsoId, Feeder, FeederTree, NodeId, ResponsiveLoadBid};

const PRICE_EQ_TOL: f64 = 1e-9;
const MAX_EXACT_RLS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidStep {
    /// MW.
    pub quantity: f64,
    /// Currency/MWh.
    pub price: f64,
    /// Contributing responsive loads, in merit order.
    pub rl_ids: Vec<String>,
}

/// Piecewise-constant offer curve a DSO submits to the central market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteppedBid {
    pub dso: DsoId,
    pub steps: Vec<BidStep>,
}

impl SteppedBid {
    pub fn total_quantity(&self) -> f64 {
        self.steps.iter().map(|s| s.quantity).sum()
    }

    /// Cost of taking `mw` cheapest-first along the curve.
    pub fn cost_of(&self, mut mw: f64) -> f64 {
        let mut cost = 0.0;
        for s in &self.steps {
            let take = mw.min(s.quantity);
            if take <= 0.0 {
                break;
            }
            cost += take * s.price;
            mw -= take;
        }
        cost
    }
}

struct Ranked<'a> {
    bid: &'a ResponsiveLoadBid,
    saving: f64,
    effective_price: f64,
}

fn rank<'a>(bids: &'a [ResponsiveLoadBid], feeder: &Feeder, tree: &FeederTree, mode: AggregationMode, loss_price: f64) -> Result<Vec<Ranked<'a>>> {
    let mut ranked = bids
        .iter()
        .map(|bid| {
            let idx = feeder.node_index(bid.feeder_node).ok_or(Error::UnknownNode {
                dso: feeder.dso,
                node: bid.feeder_node,
            })?;
            let saving = flow::saving_at(feeder, tree, idx);
            let effective_price = match mode {
                AggregationMode::PassThrough => bid.price,
                AggregationMode::LossAdjusted => (bid.price - loss_price * saving).max(0.0),
            };
            Ok(Ranked {
                bid,
                saving,
                effective_price,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        a.effective_price
            .total_cmp(&b.effective_price)
            .then(b.saving.total_cmp(&a.saving))
            .then_with(|| a.bid.id.cmp(&b.bid.id))
    });
    Ok(ranked)
}

fn check_owner(dso: DsoId, bids: &[ResponsiveLoadBid], feeder: &Feeder) -> Result<()> {
    if feeder.dso != dso {
        return Err(Error::ContractViolation(format!("feeder of DSO {} passed for DSO {dso}", feeder.dso)));
    }
    if let Some(b) = bids.iter().find(|b| b.dso != dso) {
        return Err(Error::ContractViolation(format!("bid {} belongs to DSO {}, not {dso}", b.id, b.dso)));
    }
    Ok(())
}

/// Builds the DSO's stepped bid: sort by (effective) price, merge equal
/// prices. In loss-adjusted mode each RL's price is lowered by the value of
/// the feeder loss its reduction avoids, clamped at zero.
pub fn aggregate_bids(dso: DsoId, bids: &[ResponsiveLoadBid], mode: AggregationMode, feeder: &Feeder, loss_price: f64) -> Result<SteppedBid> {
    check_owner(dso, bids, feeder)?;
    let tree = feeder.tree().map_err(|v| Error::Invalid(vec![v]))?;
    let mut steps: Vec<BidStep> = Vec::new();
    for r in rank(bids, feeder, &tree, mode, loss_price)? {
        match steps.last_mut() {
            Some(last) if (last.price - r.effective_price).abs() <= PRICE_EQ_TOL => {
                last.quantity += r.bid.quantity;
                last.rl_ids.push(r.bid.id.clone());
            }
            _ => steps.push(BidStep {
                quantity: r.bid.quantity,
                price: r.effective_price,
                rl_ids: vec![r.bid.id.clone()],
            }),
        }
    }
    Ok(SteppedBid { dso, steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlDispatch {
    pub id: String,
    pub node: NodeId,
    pub price: f64,
    /// Dispatched reduction, MW.
    pub mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDispatch {
    pub dso: DsoId,
    /// Quantity cleared centrally for this DSO, MW.
    pub cleared: f64,
    /// One entry per responsive load, in input order.
    pub dispatch: Vec<RlDispatch>,
    pub bid_cost: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    /// `loss_price × loss_after`.
    pub loss_cost: f64,
    pub objective: f64,
}

impl LocalDispatch {
    pub fn total_dispatched(&self) -> f64 {
        self.dispatch.iter().map(|d| d.mw).sum()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Floor,
    Cap,
    Interior,
}

/// Splits `cleared_mw` over the DSO's responsive loads minimizing
/// `Σ price·mw + loss_price·loss_after` within each RL's `[floor, quantity]`.
///
/// The objective is convex (linear bid cost plus a quadratic in the
/// reductions), so the optimum is a KKT point. Every assignment of RLs to
/// {at floor, at cap, interior} is tried; interior RLs share one marginal
/// cost, which is a small linear solve. The cheapest feasible candidate is
/// the global optimum. Ties go to merit order: lower price, then larger
/// marginal loss saving, then RL id.
pub fn dispatch_local(dso: DsoId, cleared_mw: f64, bids: &[ResponsiveLoadBid], feeder: &Feeder, loss_price: f64) -> Result<LocalDispatch> {
    check_owner(dso, bids, feeder)?;
    let tree = feeder.tree().map_err(|v| Error::Invalid(vec![v]))?;
    let total: f64 = bids.iter().map(|b| b.quantity).sum();
    let floors: f64 = bids.iter().map(|b| b.floor).sum();
    if !(cleared_mw >= floors - 1e-9 && cleared_mw <= total + 1e-9) {
        return Err(Error::ContractViolation(format!(
            "DSO {dso} cleared {cleared_mw} MW but its responsive loads can provide [{floors}, {total}] MW"
        )));
    }
    if bids.len() > MAX_EXACT_RLS {
        return Err(Error::ContractViolation(format!(
            "DSO {dso} has {} responsive loads; exact local dispatch supports at most {MAX_EXACT_RLS}",
            bids.len()
        )));
    }
    let cleared = cleared_mw.clamp(floors, total);

    let k = bids.len();
    let idx: Vec<usize> = bids
        .iter()
        .map(|b| {
            feeder.node_index(b.feeder_node).ok_or(Error::UnknownNode {
                dso,
                node: b.feeder_node,
            })
        })
        .collect::<Result<_>>()?;
    let base_p: Vec<f64> = feeder.nodes.iter().map(|n| n.base_load_p).collect();
    let base_q: Vec<f64> = feeder.nodes.iter().map(|n| n.base_load_q).collect();
    for (b, &i) in bids.iter().zip(&idx) {
        if b.quantity > base_p[i] + 1e-9 {
            return Err(Error::ReductionExceedsLoad {
                node: b.feeder_node,
                reduction: b.quantity,
                load: base_p[i],
            });
        }
    }
    let base = flow::sweep(feeder, &tree, base_p.clone(), base_q.clone());

    // Gradient a + λ H p of the objective in the reductions p.
    let v2 = feeder.nominal_voltage * feeder.nominal_voltage;
    let paths: Vec<Vec<usize>> = idx.iter().map(|&i| tree.path_to_root(i)).collect();
    let mut h = vec![0.0; k * k];
    for r in 0..k {
        for s in 0..k {
            h[r * k + s] = paths[r]
                .iter()
                .filter(|b| paths[s].contains(b))
                .map(|&b| 2.0 * feeder.branches[b].r / v2)
                .sum();
        }
    }
    let saving: Vec<f64> = paths
        .iter()
        .map(|path| path.iter().map(|&b| 2.0 * feeder.branches[b].r * base.branch_flow_p[b] / v2).sum())
        .collect();
    let a: Vec<f64> = (0..k).map(|r| bids[r].price - loss_price * saving[r]).collect();

    // merit priority for tie-breaks
    let mut priority: Vec<usize> = (0..k).collect();
    priority.sort_by(|&x, &y| {
        bids[x]
            .price
            .total_cmp(&bids[y].price)
            .then(saving[y].total_cmp(&saving[x]))
            .then_with(|| bids[x].id.cmp(&bids[y].id))
    });

    let evaluate = |p: &[f64]| -> (f64, f64, f64) {
        let mut net = base_p.clone();
        for (r, &i) in idx.iter().enumerate() {
            net[i] -= p[r];
        }
        let loss = flow::sweep(feeder, &tree, net, base_q.clone()).total_loss;
        let bid_cost: f64 = (0..k).map(|r| bids[r].price * p[r]).sum();
        (bid_cost + loss_price * loss, bid_cost, loss)
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut roles = vec![Role::Floor; k];
    for code in 0..3usize.pow(k as u32) {
        let mut c = code;
        for role in roles.iter_mut() {
            *role = [Role::Floor, Role::Cap, Role::Interior][c % 3];
            c /= 3;
        }
        let Some(p) = kkt_candidate(&roles, bids, &h, &a, loss_price, cleared) else {
            continue;
        };
        let (obj, _, _) = evaluate(&p);
        let replace = match &best {
            None => true,
            Some((b_obj, b_p)) => {
                if obj < b_obj - 1e-9 {
                    true
                } else if obj <= b_obj + 1e-9 {
                    prefers(&p, b_p, &priority) == Ordering::Greater
                } else {
                    false
                }
            }
        };
        if replace {
            best = Some((obj, p));
        }
    }
    let (_, p) = best.ok_or_else(|| Error::ContractViolation(format!("no feasible local dispatch for DSO {dso}")))?;
    let (objective, bid_cost, loss_after) = evaluate(&p);
    Ok(LocalDispatch {
        dso,
        cleared: cleared_mw,
        dispatch: bids
            .iter()
            .zip(&p)
            .map(|(b, &mw)| RlDispatch {
                id: b.id.clone(),
                node: b.feeder_node,
                price: b.price,
                mw,
            })
            .collect(),
        bid_cost,
        loss_before: base.total_loss,
        loss_after,
        loss_cost: loss_price * loss_after,
        objective,
    })
}

/// Lexicographic comparison along merit priority: more MW earlier wins.
fn prefers(p: &[f64], q: &[f64], priority: &[usize]) -> Ordering {
    for &r in priority {
        if p[r] > q[r] + 1e-9 {
            return Ordering::Greater;
        }
        if p[r] < q[r] - 1e-9 {
            return Ordering::Less;
        }
    }
    Ordering::Equal
}

fn kkt_candidate(roles: &[Role], bids: &[ResponsiveLoadBid], h: &[f64], a: &[f64], lambda: f64, cleared: f64) -> Option<Vec<f64>> {
    let k = bids.len();
    let mut p = vec![0.0; k];
    let mut interior = Vec::new();
    for r in 0..k {
        match roles[r] {
            Role::Floor => p[r] = bids[r].floor,
            Role::Cap => p[r] = bids[r].quantity,
            Role::Interior => interior.push(r),
        }
    }
    let fixed: f64 = p.iter().sum();
    let remaining = cleared - fixed;
    if interior.is_empty() {
        return (remaining.abs() <= 1e-9).then_some(p);
    }
    let q = interior.len();
    let dim = q + 1;
    let mut mat = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    for (row, &r) in interior.iter().enumerate() {
        for (col, &s) in interior.iter().enumerate() {
            mat[row * dim + col] = lambda * h[r * k + s];
        }
        mat[row * dim + q] = -1.0;
        let coupling: f64 = (0..k).filter(|s| roles[*s] != Role::Interior).map(|s| h[r * k + s] * p[s]).sum();
        rhs[row] = -a[r] - lambda * coupling;
    }
    for col in 0..q {
        mat[q * dim + col] = 1.0;
    }
    rhs[q] = remaining;
    let sol = dense::solve(mat, rhs)?;
    for (col, &r) in interior.iter().enumerate() {
        let v = sol[col];
        if v < bids[r].floor - 1e-9 || v > bids[r].quantity + 1e-9 {
            return None;
        }
        p[r] = v.clamp(bids[r].floor, bids[r].quantity);
    }
    Some(p)
}

/// Sum of reductions per node, for feeding [`flow::feeder_loss`].
pub fn reductions_by_node(dispatch: &LocalDispatch) -> BTreeMap<NodeId, f64> {
    let mut out = BTreeMap::new();
    for d in &dispatch.dispatch {
        *out.entry(d.node).or_insert(0.0) += d.mw;
    }
    out
}
