//! Reference implementations the library is checked against. None of them
//! reuse library internals beyond the plain data types.

#![allow(dead_code)]

use std::collections::BTreeMap;

use balmarket::grid::{DatasetPaths, DsoId, Feeder, NodeId, ResponsiveLoadBid, TransmissionNetwork, ValidatedSystem};
use balmarket::local::{BidStep, SteppedBid};
use balmarket::lp::LinearProgram;
use rand::Rng;

pub fn bundled() -> ValidatedSystem {
    DatasetPaths::bundled().load().expect("bundled dataset loads")
}

// ---------------------------------------------------------------------------
// feeder loss

/// Recursive sweep: each branch carries the load of everything below it.
pub struct SweepOracle<'a> {
    feeder: &'a Feeder,
    children: BTreeMap<NodeId, Vec<(NodeId, f64)>>,
}

impl<'a> SweepOracle<'a> {
    pub fn new(feeder: &'a Feeder) -> Self {
        let mut children: BTreeMap<NodeId, Vec<(NodeId, f64)>> = BTreeMap::new();
        // orient edges away from the root by breadth-first search
        let mut adj: BTreeMap<NodeId, Vec<(NodeId, f64)>> = BTreeMap::new();
        for b in &feeder.branches {
            adj.entry(b.from).or_default().push((b.to, b.r));
            adj.entry(b.to).or_default().push((b.from, b.r));
        }
        let mut seen = vec![feeder.root_node];
        let mut queue = vec![feeder.root_node];
        while let Some(u) = queue.pop() {
            for &(v, r) in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                if !seen.contains(&v) {
                    seen.push(v);
                    children.entry(u).or_default().push((v, r));
                    queue.push(v);
                }
            }
        }
        Self { feeder, children }
    }

    fn subtree(&self, node: NodeId, p: &BTreeMap<NodeId, f64>, q: &BTreeMap<NodeId, f64>, loss: &mut f64) -> (f64, f64) {
        let mut sp = p[&node];
        let mut sq = q[&node];
        for &(child, r) in self.children.get(&node).map(Vec::as_slice).unwrap_or(&[]) {
            let (cp, cq) = self.subtree(child, p, q, loss);
            let v = self.feeder.nominal_voltage;
            *loss += r * (cp * cp + cq * cq) / (v * v);
            sp += cp;
            sq += cq;
        }
        (sp, sq)
    }

    pub fn loss(&self, reductions: &BTreeMap<NodeId, f64>) -> f64 {
        let mut p: BTreeMap<NodeId, f64> = self.feeder.nodes.iter().map(|n| (n.node_id, n.base_load_p)).collect();
        let q: BTreeMap<NodeId, f64> = self.feeder.nodes.iter().map(|n| (n.node_id, n.base_load_q)).collect();
        for (node, mw) in reductions {
            *p.get_mut(node).expect("node on feeder") -= mw;
        }
        let mut loss = 0.0;
        self.subtree(self.feeder.root_node, &p, &q, &mut loss);
        loss
    }

    pub fn loss_with(&self, node: NodeId, mw: f64) -> f64 {
        self.loss(&BTreeMap::from([(node, mw)]))
    }

    /// Sum of resistance from `node` up to the root.
    pub fn path_resistance(&self, node: NodeId) -> f64 {
        fn walk(o: &SweepOracle, at: NodeId, target: NodeId, acc: f64) -> Option<f64> {
            if at == target {
                return Some(acc);
            }
            o.children
                .get(&at)?
                .iter()
                .find_map(|&(c, r)| walk(o, c, target, acc + r))
        }
        walk(self, self.feeder.root_node, node, 0.0).expect("node reachable")
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        self.children.get(&node).map_or(true, Vec::is_empty)
    }
}

// ---------------------------------------------------------------------------
// local dispatch

/// Cost `Σ price·mw + loss_price·loss` of a dispatch vector.
pub fn local_objective(oracle: &SweepOracle, bids: &[ResponsiveLoadBid], mw: &[f64], loss_price: f64) -> f64 {
    let mut red = BTreeMap::new();
    for (b, &m) in bids.iter().zip(mw) {
        *red.entry(b.feeder_node).or_insert(0.0) += m;
    }
    bids.iter().zip(mw).map(|(b, m)| b.price * m).sum::<f64>() + loss_price * oracle.loss(&red)
}

/// Exhaustive search on a 0.01 MW grid; the last RL takes the remainder.
pub fn grid_dispatch(oracle: &SweepOracle, bids: &[ResponsiveLoadBid], cleared: f64, loss_price: f64) -> (f64, Vec<f64>) {
    const STEP: f64 = 0.01;
    let k = bids.len();
    let mut best = (f64::INFINITY, vec![0.0; k]);
    let mut cur = vec![0.0; k];
    fn rec(
        i: usize,
        left: f64,
        cur: &mut Vec<f64>,
        best: &mut (f64, Vec<f64>),
        oracle: &SweepOracle,
        bids: &[ResponsiveLoadBid],
        loss_price: f64,
    ) {
        let k = bids.len();
        if i == k - 1 {
            if left < bids[i].floor - 1e-9 || left > bids[i].quantity + 1e-9 {
                return;
            }
            cur[i] = left.max(0.0);
            let obj = local_objective(oracle, bids, cur, loss_price);
            if obj < best.0 {
                *best = (obj, cur.clone());
            }
            return;
        }
        let lo = (bids[i].floor / STEP).round() as i64;
        let hi = (bids[i].quantity / STEP).round() as i64;
        for n in lo..=hi {
            let v = n as f64 * STEP;
            if v > left + 1e-9 {
                break;
            }
            cur[i] = v;
            rec(i + 1, left - v, cur, best, oracle, bids, loss_price);
        }
    }
    rec(0, cleared, &mut cur, &mut best, oracle, bids, loss_price);
    best
}

// ---------------------------------------------------------------------------
// central market

#[derive(Debug, Clone)]
pub struct OracleClearing {
    pub cost: f64,
    /// Accepted MW per (dso, step).
    pub steps: BTreeMap<(DsoId, usize), f64>,
    pub generator_mw: f64,
    pub slack: f64,
}

/// Congestion-free clearing by merit order. Upward need goes to generator
/// raises and DSO steps cheapest first, ties by (DSO id, step index);
/// downward need goes to generator cuts. Any remainder is priced at the
/// penalty.
pub fn merit_order(network: &TransmissionNetwork, bids: &[SteppedBid], total_imbalance: f64, penalty: f64) -> OracleClearing {
    let mut out = OracleClearing {
        cost: 0.0,
        steps: BTreeMap::new(),
        generator_mw: 0.0,
        slack: 0.0,
    };
    for b in bids {
        for k in 0..b.steps.len() {
            out.steps.insert((b.dso, k), 0.0);
        }
    }
    if total_imbalance > 0.0 {
        let mut offers: Vec<(f64, f64)> = network.generators.iter().map(|g| (g.price, -g.reg_min)).collect();
        offers.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut need = total_imbalance;
        for (price, cap) in offers {
            let take = need.min(cap);
            out.cost += take * price;
            out.generator_mw -= take;
            need -= take;
        }
        out.slack = need;
        out.cost += need * penalty;
        return out;
    }
    // (price, kind order, dso, step, quantity); generators sort after DSOs at equal price
    let mut offers: Vec<(f64, u8, DsoId, usize, f64)> = Vec::new();
    for g in &network.generators {
        offers.push((g.price, 1, 0, 0, g.reg_max));
    }
    for b in bids {
        for (k, s) in b.steps.iter().enumerate() {
            offers.push((s.price, 0, b.dso, k, s.quantity));
        }
    }
    offers.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));
    let mut tie_room: BTreeMap<DsoId, f64> = network.ties.iter().map(|t| (t.dso, t.flow_limit)).collect();
    let mut need = -total_imbalance;
    for (price, kind, dso, k, qty) in offers {
        let cap = if kind == 0 { qty.min(tie_room[&dso]) } else { qty };
        let take = need.min(cap).max(0.0);
        if kind == 0 {
            *tie_room.get_mut(&dso).unwrap() -= take;
            out.steps.insert((dso, k), take);
        } else {
            out.generator_mw += take;
        }
        out.cost += take * price;
        need -= take;
    }
    out.slack = need;
    out.cost += need * penalty;
    out
}

/// Brute force over every acceptance on a `grid` MW lattice. Among cheapest
/// combinations the one accepting most in (DSO id, step) order wins.
pub fn enumerate_steps(bids: &[SteppedBid], tie_limits: &BTreeMap<DsoId, f64>, need: f64, penalty: f64, grid: f64) -> OracleClearing {
    let mut flat: Vec<(DsoId, usize, &BidStep)> = bids
        .iter()
        .flat_map(|b| b.steps.iter().enumerate().map(move |(k, s)| (b.dso, k, s)))
        .collect();
    flat.sort_by_key(|&(d, k, _)| (d, k));
    let dsos: Vec<DsoId> = tie_limits.keys().copied().collect();
    let group: Vec<usize> = flat.iter().map(|(d, _, _)| dsos.iter().position(|x| x == d).expect("tie per DSO")).collect();
    let room: Vec<i64> = dsos.iter().map(|d| (tie_limits[d] / grid).round() as i64).collect();
    let levels: Vec<i64> = flat.iter().map(|(_, _, s)| (s.quantity / grid).round() as i64).collect();
    let need_units = (need / grid).round() as i64;

    let mut best: Option<(f64, Vec<i64>)> = None;
    let mut cur = vec![0i64; flat.len()];
    let mut used = vec![0i64; dsos.len()];
    loop {
        used.iter_mut().for_each(|u| *u = 0);
        let mut taken = 0;
        let mut cost = 0.0;
        for (i, &n) in cur.iter().enumerate() {
            used[group[i]] += n;
            taken += n;
            cost += n as f64 * grid * flat[i].2.price;
        }
        if taken <= need_units && used.iter().zip(&room).all(|(u, r)| u <= r) {
            cost += (need_units - taken) as f64 * grid * penalty;
            // cur and best are both in (DSO, step) order, so Vec comparison is lexicographic priority
            let better = best.as_ref().map_or(true, |(c, b)| cost < c - 1e-9 || (cost <= c + 1e-9 && cur > *b));
            if better {
                best = Some((cost, cur.clone()));
            }
        }
        let mut i = 0;
        while i < cur.len() && cur[i] == levels[i] {
            cur[i] = 0;
            i += 1;
        }
        if i == cur.len() {
            break;
        }
        cur[i] += 1;
    }
    let (cost, v) = best.expect("zero acceptance is always feasible");
    let taken: i64 = v.iter().sum();
    OracleClearing {
        cost,
        steps: flat.iter().zip(&v).map(|(&(d, k, _), &n)| ((d, k), n as f64 * grid)).collect(),
        generator_mw: 0.0,
        slack: (need_units - taken) as f64 * grid,
    }
}

/// Random stepped bids for DSOs 1..=3: at most six steps in total, 0.25 MW
/// quantities up to 1.5 MW, integer prices (ties are common on purpose).
/// Also returns tie limits and a shortfall, both on the same lattice.
pub fn random_market(rng: &mut impl Rng) -> (Vec<SteppedBid>, BTreeMap<DsoId, f64>, f64) {
    let total_steps = rng.gen_range(1..=6);
    let mut counts = [0usize; 3];
    for _ in 0..total_steps {
        counts[rng.gen_range(0..3)] += 1;
    }
    let mut bids = Vec::new();
    let mut ties = BTreeMap::new();
    for (i, &n) in counts.iter().enumerate() {
        let dso = i as DsoId + 1;
        ties.insert(dso, rng.gen_range(2..=16) as f64 * 0.25);
        if n == 0 {
            continue;
        }
        let mut prices: Vec<u32> = Vec::new();
        while prices.len() < n {
            let p = rng.gen_range(1..=12);
            if !prices.contains(&p) {
                prices.push(p);
            }
        }
        prices.sort_unstable();
        bids.push(SteppedBid {
            dso,
            steps: prices
                .into_iter()
                .map(|p| BidStep {
                    quantity: rng.gen_range(1..=6) as f64 * 0.25,
                    price: p as f64,
                    rl_ids: vec![],
                })
                .collect(),
        });
    }
    let need = rng.gen_range(1..=32) as f64 * 0.25;
    (bids, ties, need)
}

// ---------------------------------------------------------------------------
// linear programs

/// Optimum over every basic solution of a bounded LP (all bounds finite).
/// Returns `None` when no vertex is feasible.
pub fn vertex_optimum(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_variables();
    let m = lp.num_rows();
    let mut a = vec![vec![0.0; n]; m];
    let mut b = vec![0.0; m];
    for (i, row) in lp.rows().iter().enumerate() {
        for &(j, c) in &row.coeffs {
            a[i][j] += c;
        }
        b[i] = row.rhs;
    }
    let c = lp.objective();
    let mut best: Option<f64> = None;
    for basis in subsets(n, m.min(n)) {
        let nonbasic: Vec<usize> = (0..n).filter(|j| !basis.contains(j)).collect();
        for mask in 0..(1u32 << nonbasic.len()) {
            let mut x = vec![0.0; n];
            for (t, &j) in nonbasic.iter().enumerate() {
                let (lo, hi) = lp.bounds(j);
                x[j] = if mask >> t & 1 == 1 { hi } else { lo };
            }
            // A_B x_B = b − A_N x_N
            let rhs: Vec<f64> = (0..m).map(|i| b[i] - nonbasic.iter().map(|&j| a[i][j] * x[j]).sum::<f64>()).collect();
            let Some(xb) = square_solve(&a, &basis, &rhs) else { continue };
            for (t, &j) in basis.iter().enumerate() {
                x[j] = xb[t];
            }
            let feasible = (0..n).all(|j| {
                let (lo, hi) = lp.bounds(j);
                x[j] >= lo - 1e-7 && x[j] <= hi + 1e-7
            }) && lp.residuals(&x).iter().all(|r| r.abs() <= 1e-7);
            if feasible {
                let obj: f64 = c.iter().zip(&x).map(|(c, x)| c * x).sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
    }
    best
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..n {
            cur.push(j);
            rec(j + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Solves the rows of `a` restricted to `cols`; `None` if singular or if the
/// system is over/under-determined and inconsistent.
fn square_solve(a: &[Vec<f64>], cols: &[usize], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = a.len();
    let k = cols.len();
    let mut mat: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut r: Vec<f64> = cols.iter().map(|&j| a[i][j]).collect();
            r.push(rhs[i]);
            r
        })
        .collect();
    let mut row = 0;
    let mut pivots = Vec::new();
    for col in 0..k {
        let Some(p) = (row..m).max_by(|&x, &y| mat[x][col].abs().total_cmp(&mat[y][col].abs())) else { break };
        if mat[p][col].abs() < 1e-10 {
            return None;
        }
        mat.swap(row, p);
        for r in 0..m {
            if r != row {
                let f = mat[r][col] / mat[row][col];
                for c in col..=k {
                    mat[r][c] -= f * mat[row][c];
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    if pivots.len() < k {
        return None;
    }
    // leftover rows must be consistent
    if (row..m).any(|r| mat[r][k].abs() > 1e-7) {
        return None;
    }
    Some((0..k).map(|c| mat[c][k] / mat[c][c]).collect())
}
