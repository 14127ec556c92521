//! TSO real-time balancing market.
//!
//! One LP per hour over bus angles, branch flows, generator regulation
//! (split into up and down parts so both directions are paid), one
//! variable per DSO bid step, the tie-line exchange of every bidding DSO,
//! and a two-sided penalty slack at the imbalance bus:
//!
//! ```text
//! min  Σ_g c_g (up_g + down_g) + Σ_steps c_k x_k + penalty (slack_up + slack_down)
//! s.t. Σ_out f − Σ_in f + Σ_ties τ − Σ_g (up_g − down_g) − (slack_up − slack_down)
//!          = P_DA_i + ΔP_i                               every bus i
//!      f_l − base · B_l (δ_from − δ_to) = 0               every branch
//!      τ_s + Σ_k x_{s,k} = 0                              every bidding DSO
//!      |f_l| ≤ limit_l, |τ_s| ≤ tie limit, δ_slack = 0, step and generator boxes
//! ```
//!
//! τ_s is the change in power delivered from the transmission bus into the
//! DSO, so a load reduction shows up as extra injection at that bus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BusId, DsoId, MarketConfig, SettlementMode, TransmissionNetwork};
use crate::local::{LocalDispatch, SteppedBid};
use crate::lp::{self, LinearProgram, LpSolution};
use crate::REPORT_TOL;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClearingOptions {
    /// Drop every branch flow limit (the congestion-free oracle case).
    pub relax_line_limits: bool,
    /// Remove the penalty slack; clearing may then be infeasible.
    pub disable_slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRegulation {
    pub id: String,
    pub bus: BusId,
    pub price: f64,
    /// Signed regulation, MW; negative is a generation cut.
    pub mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAcceptance {
    pub dso: DsoId,
    pub step: usize,
    pub price: f64,
    pub offered: f64,
    pub accepted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieInjection {
    pub dso: DsoId,
    pub bus: BusId,
    /// Change of power sent into the DSO, MW (−accepted reduction).
    pub mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralClearingResult {
    pub generators: Vec<GeneratorRegulation>,
    pub steps: Vec<StepAcceptance>,
    pub slack_bus: BusId,
    pub slack_up: f64,
    pub slack_down: f64,
    /// Radians per bus.
    pub angles: Vec<f64>,
    /// MW per branch.
    pub flows: Vec<f64>,
    pub ties: Vec<TieInjection>,
    pub objective: f64,
    /// Cost of the last MW of imbalance served at the imbalance bus,
    /// currency/MWh. Negative when the marginal resource is downward
    /// regulation.
    pub marginal_price: f64,
}

impl CentralClearingResult {
    /// Result with no regulation: the day-ahead operating point.
    pub fn idle(network: &TransmissionNetwork, bids: &[SteppedBid], power_base: f64) -> Result<Self> {
        let inj: Vec<f64> = network.buses.iter().map(|b| b.scheduled_injection).collect();
        let angles = crate::flow::solve_dc_angles(network, &inj, power_base)?.angles;
        let flows = crate::flow::branch_flows(network, &angles, power_base).0;
        Ok(Self {
            generators: network
                .generators
                .iter()
                .map(|g| GeneratorRegulation {
                    id: g.id.clone(),
                    bus: g.bus,
                    price: g.price,
                    mw: 0.0,
                })
                .collect(),
            steps: step_list(bids).map(|(dso, step, s)| StepAcceptance {
                dso,
                step,
                price: s.price,
                offered: s.quantity,
                accepted: 0.0,
            })
            .collect(),
            slack_bus: network.slack_bus,
            slack_up: 0.0,
            slack_down: 0.0,
            angles,
            flows,
            ties: bids
                .iter()
                .filter_map(|b| network.tie_for(b.dso))
                .map(|t| TieInjection {
                    dso: t.dso,
                    bus: t.transmission_bus,
                    mw: 0.0,
                })
                .collect(),
            objective: 0.0,
            marginal_price: 0.0,
        })
    }

    /// Total accepted reduction of one DSO, MW.
    pub fn dso_accepted(&self, dso: DsoId) -> f64 {
        self.steps.iter().filter(|s| s.dso == dso).map(|s| s.accepted).sum()
    }

    pub fn slack_cost(&self, penalty_price: f64) -> f64 {
        penalty_price * (self.slack_up + self.slack_down)
    }

    /// Net regulation injected per bus (generators, RL reductions, slack), MW.
    pub fn regulation_by_bus(&self, bus_count: usize) -> Vec<f64> {
        let mut out = vec![0.0; bus_count];
        for g in &self.generators {
            out[g.bus] += g.mw;
        }
        for t in &self.ties {
            out[t.bus] -= t.mw;
        }
        out[self.slack_bus] += self.slack_up - self.slack_down;
        out
    }
}

fn step_list(bids: &[SteppedBid]) -> impl Iterator<Item = (DsoId, usize, &crate::local::BidStep)> {
    bids.iter().flat_map(|b| b.steps.iter().enumerate().map(move |(k, s)| (b.dso, k, s)))
}

/// Bus that hosts the penalty slack: largest |imbalance|, lowest id on
/// ties, the angle reference when there is no imbalance.
pub fn imbalance_bus(network: &TransmissionNetwork, imbalance: &[f64]) -> BusId {
    let mut best = None;
    for (i, v) in imbalance.iter().enumerate() {
        if v.abs() > REPORT_TOL && best.map_or(true, |(_, b): (usize, f64)| v.abs() > b) {
            best = Some((i, v.abs()));
        }
    }
    best.map_or(network.slack_bus, |(i, _)| i)
}

struct Layout {
    angle: Vec<usize>,
    flow: Vec<usize>,
    gen_up: Vec<usize>,
    gen_down: Vec<usize>,
    /// (dso, step index, variable)
    steps: Vec<(DsoId, usize, usize)>,
    /// (bid index, variable)
    ties: Vec<usize>,
    slack_up: usize,
    slack_down: usize,
    balance_rows: Vec<usize>,
    slack_bus: BusId,
}

fn build(network: &TransmissionNetwork, bids: &[SteppedBid], imbalance: &[f64], config: &MarketConfig, opts: ClearingOptions) -> Result<(LinearProgram, Layout)> {
    let n = network.bus_count();
    if imbalance.len() != n {
        return Err(Error::ContractViolation(format!("imbalance has {} entries for {n} buses", imbalance.len())));
    }
    let base = config.power_base;
    let lp_err = |e: lp::LpError| Error::ContractViolation(e.to_string());
    let mut lp = LinearProgram::new();
    let inf = f64::INFINITY;

    let angle = (0..n)
        .map(|i| {
            if i == network.slack_bus {
                lp.add_variable(0.0, 0.0, 0.0)
            } else {
                lp.add_variable(0.0, -inf, inf)
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(lp_err)?;
    let flow = network
        .branches
        .iter()
        .map(|br| {
            let lim = if opts.relax_line_limits { inf } else { br.flow_limit };
            lp.add_variable(0.0, -lim, lim)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(lp_err)?;
    let mut gen_up = Vec::new();
    let mut gen_down = Vec::new();
    for g in &network.generators {
        gen_up.push(lp.add_variable(g.price, 0.0, g.reg_max).map_err(lp_err)?);
        gen_down.push(lp.add_variable(g.price, 0.0, -g.reg_min).map_err(lp_err)?);
    }
    let mut steps = Vec::new();
    for (dso, k, s) in step_list(bids) {
        steps.push((dso, k, lp.add_variable(s.price, 0.0, s.quantity).map_err(lp_err)?));
    }
    let mut ties = Vec::new();
    for b in bids {
        let tie = network
            .tie_for(b.dso)
            .ok_or_else(|| Error::ContractViolation(format!("DSO {} bids but has no tie line", b.dso)))?;
        ties.push(lp.add_variable(0.0, -tie.flow_limit, tie.flow_limit).map_err(lp_err)?);
    }
    let slack_cap = if opts.disable_slack { 0.0 } else { inf };
    let slack_up = lp.add_variable(config.penalty_price, 0.0, slack_cap).map_err(lp_err)?;
    let slack_down = lp.add_variable(config.penalty_price, 0.0, slack_cap).map_err(lp_err)?;
    let slack_bus = imbalance_bus(network, imbalance);

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (l, br) in network.branches.iter().enumerate() {
        rows[br.from_bus].push((flow[l], 1.0));
        rows[br.to_bus].push((flow[l], -1.0));
    }
    for (b, bid) in bids.iter().enumerate() {
        let tie = network.tie_for(bid.dso).expect("checked above");
        rows[tie.transmission_bus].push((ties[b], 1.0));
    }
    for (g, gen) in network.generators.iter().enumerate() {
        rows[gen.bus].push((gen_up[g], -1.0));
        rows[gen.bus].push((gen_down[g], 1.0));
    }
    rows[slack_bus].push((slack_up, -1.0));
    rows[slack_bus].push((slack_down, 1.0));
    let mut balance_rows = Vec::with_capacity(n);
    for (i, coeffs) in rows.iter().enumerate() {
        let rhs = network.buses[i].scheduled_injection + imbalance[i];
        balance_rows.push(lp.add_equality(coeffs, rhs).map_err(lp_err)?);
    }
    for (l, br) in network.branches.iter().enumerate() {
        let b = base * br.susceptance;
        lp.add_equality(&[(flow[l], 1.0), (angle[br.from_bus], -b), (angle[br.to_bus], b)], 0.0)
            .map_err(lp_err)?;
    }
    for (b, bid) in bids.iter().enumerate() {
        let mut coeffs = vec![(ties[b], 1.0)];
        coeffs.extend(steps.iter().filter(|(d, _, _)| *d == bid.dso).map(|&(_, _, v)| (v, 1.0)));
        lp.add_equality(&coeffs, 0.0).map_err(lp_err)?;
    }

    Ok((
        lp,
        Layout {
            angle,
            flow,
            gen_up,
            gen_down,
            steps,
            ties,
            slack_up,
            slack_down,
            balance_rows,
            slack_bus,
        },
    ))
}

/// Clears the central market with line limits and the penalty slack enabled.
pub fn clear_central(network: &TransmissionNetwork, bids: &[SteppedBid], imbalance: &[f64], config: &MarketConfig) -> Result<CentralClearingResult> {
    clear_central_with(network, bids, imbalance, config, ClearingOptions::default())
}

pub fn clear_central_with(
    network: &TransmissionNetwork,
    bids: &[SteppedBid],
    imbalance: &[f64],
    config: &MarketConfig,
    opts: ClearingOptions,
) -> Result<CentralClearingResult> {
    let mut dsos: Vec<DsoId> = bids.iter().map(|b| b.dso).collect();
    dsos.sort_unstable();
    if dsos.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::ContractViolation("more than one stepped bid per DSO".into()));
    }
    let (mut lp, layout) = build(network, bids, imbalance, config, opts)?;
    let first = lp::solve(&lp);
    match first.status {
        lp::LpStatus::Optimal => {}
        lp::LpStatus::Infeasible => return Err(Error::ClearingFailed("infeasible")),
        lp::LpStatus::Unbounded => return Err(Error::ClearingFailed("unbounded")),
        lp::LpStatus::IterationLimit => return Err(Error::ClearingFailed("stalled at the iteration limit")),
    }
    let marginal_price = last_mw_price(network, bids, imbalance, config, opts, &layout, &first)?;
    let solution = tie_break(&mut lp, &layout, bids, first);

    let v = &solution.values;
    let generators = network
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| GeneratorRegulation {
            id: gen.id.clone(),
            bus: gen.bus,
            price: gen.price,
            mw: v[layout.gen_up[g]] - v[layout.gen_down[g]],
        })
        .collect();
    let steps: Vec<StepAcceptance> = step_list(bids)
        .zip(&layout.steps)
        .map(|((dso, step, s), &(_, _, var))| StepAcceptance {
            dso,
            step,
            price: s.price,
            offered: s.quantity,
            accepted: v[var],
        })
        .collect();
    let ties = bids
        .iter()
        .zip(&layout.ties)
        .map(|(b, &var)| TieInjection {
            dso: b.dso,
            bus: network.tie_for(b.dso).expect("checked in build").transmission_bus,
            mw: v[var],
        })
        .collect();
    Ok(CentralClearingResult {
        generators,
        steps,
        slack_bus: layout.slack_bus,
        slack_up: v[layout.slack_up],
        slack_down: v[layout.slack_down],
        angles: layout.angle.iter().map(|&a| v[a]).collect(),
        flows: layout.flow.iter().map(|&f| v[f]).collect(),
        ties,
        objective: base_objective(network, bids, &layout, v, config),
        marginal_price,
    })
}

/// Left derivative of the optimal cost with respect to the imbalance at the
/// imbalance bus. The balance-row dual is ambiguous when a resource sits
/// exactly at its bound, so the price is measured by re-solving with the
/// imbalance shrunk by a small step.
fn last_mw_price(
    network: &TransmissionNetwork,
    bids: &[SteppedBid],
    imbalance: &[f64],
    config: &MarketConfig,
    opts: ClearingOptions,
    layout: &Layout,
    first: &LpSolution,
) -> Result<f64> {
    const STEP: f64 = 1e-3;
    let bus = layout.slack_bus;
    let dp = imbalance[bus];
    if dp.abs() <= REPORT_TOL {
        return Ok(-first.duals[layout.balance_rows[bus]]);
    }
    let h = STEP.min(dp.abs());
    let mut shrunk = imbalance.to_vec();
    shrunk[bus] -= h * dp.signum();
    let (lp, _) = build(network, bids, &shrunk, config, opts)?;
    let sol = lp::solve(&lp);
    if !sol.is_optimal() {
        return Ok(-first.duals[layout.balance_rows[bus]]);
    }
    Ok(-dp.signum() * (first.objective_value - sol.objective_value) / h)
}

fn base_objective(network: &TransmissionNetwork, bids: &[SteppedBid], layout: &Layout, v: &[f64], config: &MarketConfig) -> f64 {
    let gens: f64 = network
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| gen.price * (v[layout.gen_up[g]] + v[layout.gen_down[g]]))
        .sum();
    let steps: f64 = step_list(bids).zip(&layout.steps).map(|((_, _, s), &(_, _, var))| s.price * v[var]).sum();
    gens + steps + config.penalty_price * (v[layout.slack_up] + v[layout.slack_down])
}

/// Among cost-optimal clearings, accept steps in ascending (DSO id, step
/// index) order: hold the optimal cost fixed and maximize each step in turn.
fn tie_break(lp: &mut LinearProgram, layout: &Layout, bids: &[SteppedBid], first: LpSolution) -> LpSolution {
    if layout.steps.len() < 2 || !has_price_ties(bids) {
        return first;
    }
    let costs = lp.objective().to_vec();
    let optimum = first.objective_value;
    let coeffs: Vec<(usize, f64)> = costs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, &c)| (j, c)).collect();
    let mut work = lp.clone();
    if work.add_equality(&coeffs, optimum).is_err() {
        return first;
    }
    let mut current = first;
    let mut order: Vec<&(DsoId, usize, usize)> = layout.steps.iter().collect();
    order.sort_by_key(|(d, k, _)| (*d, *k));
    for &&(_, _, var) in &order {
        let mut obj = vec![0.0; costs.len()];
        obj[var] = -1.0;
        work.set_objective(&obj).expect("finite");
        let sol = lp::solve(&work);
        if !sol.is_optimal() {
            break;
        }
        let (lo, hi) = work.bounds(var);
        let v = sol.values[var].clamp(lo, hi);
        work.set_bounds(var, v, v).expect("within bounds");
        current = sol;
    }
    // report under the original costs
    current.objective_value = costs.iter().zip(&current.values).map(|(c, x)| c * x).sum();
    current
}

fn has_price_ties(bids: &[SteppedBid]) -> bool {
    let prices: Vec<f64> = step_list(bids).map(|(_, _, s)| s.price).collect();
    prices
        .iter()
        .enumerate()
        .any(|(i, p)| prices[i + 1..].iter().any(|q| (p - q).abs() <= 1e-9))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParticipantKind {
    #[serde(rename = "generator")]
    Generator,
    #[serde(rename = "dso")]
    Dso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payment {
    pub participant: String,
    pub kind: ParticipantKind,
    /// Regulation provided, MW (signed for generators).
    pub mw: f64,
    /// Paid by the TSO, currency.
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsoProfit {
    pub dso: DsoId,
    pub revenue: f64,
    /// Paid on to responsive loads at their bid prices.
    pub rl_payments: f64,
    /// `loss_price × (loss_after − loss_before)`; negative when losses fall.
    pub loss_cost_delta: f64,
    pub profit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheaperOption {
    #[serde(rename = "RL")]
    Rl,
    #[serde(rename = "conventional")]
    Conventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementReport {
    pub mode: SettlementMode,
    pub payments: Vec<Payment>,
    pub dso_profits: Vec<DsoProfit>,
    /// Penalty-slack share of the clearing objective.
    pub slack_cost: f64,
    /// Clearing objective without the slack cost.
    pub tso_cost: f64,
    pub conventional_cost: f64,
    pub cheaper_option: CheaperOption,
}

impl SettlementReport {
    pub fn payment(&self, participant: &str) -> Option<&Payment> {
        self.payments.iter().find(|p| p.participant == participant)
    }

    pub fn dso_profit(&self, dso: DsoId) -> Option<&DsoProfit> {
        self.dso_profits.iter().find(|p| p.dso == dso)
    }
}

pub fn dso_name(dso: DsoId) -> String {
    format!("DSO{dso}")
}

/// Pays participants (pay-as-bid or at |marginal price|), computes DSO
/// profits from the local dispatches and compares the TSO's regulation
/// cost with the conventional alternative.
pub fn settle(result: &CentralClearingResult, bids: &[SteppedBid], dispatches: &[LocalDispatch], config: &MarketConfig) -> SettlementReport {
    let uniform = config.settlement_mode == SettlementMode::Uniform;
    let price_of = |own: f64| if uniform { result.marginal_price.abs() } else { own };
    let mut payments: Vec<Payment> = result
        .generators
        .iter()
        .map(|g| Payment {
            participant: g.id.clone(),
            kind: ParticipantKind::Generator,
            mw: g.mw,
            amount: price_of(g.price) * g.mw.abs(),
        })
        .collect();
    let mut dsos: Vec<DsoId> = bids.iter().map(|b| b.dso).collect();
    dsos.sort_unstable();
    dsos.dedup();
    let mut dso_profits = Vec::new();
    for dso in dsos {
        let accepted = result.dso_accepted(dso);
        let revenue: f64 = result
            .steps
            .iter()
            .filter(|s| s.dso == dso)
            .map(|s| price_of(s.price) * s.accepted)
            .sum();
        payments.push(Payment {
            participant: dso_name(dso),
            kind: ParticipantKind::Dso,
            mw: accepted,
            amount: revenue,
        });
        let (rl_payments, loss_cost_delta) = dispatches
            .iter()
            .find(|d| d.dso == dso)
            .map_or((0.0, 0.0), |d| (d.bid_cost, config.loss_price * (d.loss_after - d.loss_before)));
        dso_profits.push(DsoProfit {
            dso,
            revenue,
            rl_payments,
            loss_cost_delta,
            profit: revenue - rl_payments - loss_cost_delta,
        });
    }
    let slack_cost = result.slack_cost(config.penalty_price);
    let tso_cost = result.objective - slack_cost;
    SettlementReport {
        mode: config.settlement_mode,
        payments,
        dso_profits,
        slack_cost,
        tso_cost,
        conventional_cost: config.conventional_cost,
        cheaper_option: if tso_cost <= config.conventional_cost {
            CheaperOption::Rl
        } else {
            CheaperOption::Conventional
        },
    }
}
