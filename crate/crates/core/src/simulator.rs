//! Discrete-time network simulation with lost sales, floor-min production,
//! proportional rationing and shock injection.
//!
//! One step runs in four phases:
//!
//! 1. order sweep, echelon 1 to L: every firm requests `(M - x)+` and each
//!    supplier's demand is the BOM-weighted sum of its customers' requests;
//! 2. fulfillment sweep, echelon L to 1: a firm receives what its suppliers
//!    shipped, produces `min(N, floor((x_r + u_r) / B_r))`, and ships
//!    `min(demand, x + q)` to its customers, rationing when short;
//! 3. distributors draw exogenous demand and serve it from `x + q`;
//! 4. inventories update and costs accrue. Unmet demand is lost.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{DemandError, DemandPmf, DemandSpec};
use crate::network::{FirmId, Network};
use crate::policy::{OrderPolicy, PolicyError, PolicyMode};
use crate::rng::{firm_stream, Purpose};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no policy for firm {0}")]
    MissingPolicy(FirmId),
    #[error("no exogenous demand for distributor {0}")]
    MissingDemand(FirmId),
    #[error("shock targets unknown firm {0}")]
    UnknownFirm(FirmId),
    #[error("invalid shock on {firm}: {reason}")]
    InvalidShock { firm: FirmId, reason: String },
    #[error("negative inventory at {firm}, step {step}")]
    NegativeInventory { firm: FirmId, step: usize },
    #[error("firm {firm}: {source}")]
    Policy { firm: FirmId, source: PolicyError },
    #[error("firm {firm}: {source}")]
    Demand { firm: FirmId, source: DemandError },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockKind {
    /// The firm produces nothing.
    ProductionOutage,
    /// The firm ships nothing.
    ShippingOutage,
    /// Neither production nor shipping.
    FullOutage,
    /// Exogenous demand mean rises by `mean_delta` per step (distributors only).
    DemandShift,
}

/// A disruption active over the inclusive step window `[start, end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shock {
    pub kind: ShockKind,
    pub firm: FirmId,
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub mean_delta: f64,
}

impl Shock {
    pub fn active(&self, k: usize) -> bool {
        self.start <= k && k <= self.end
    }

    fn blocks_production(&self) -> bool {
        matches!(self.kind, ShockKind::ProductionOutage | ShockKind::FullOutage)
    }

    fn blocks_shipping(&self) -> bool {
        matches!(self.kind, ShockKind::ShippingOutage | ShockKind::FullOutage)
    }
}

/// Mean offset of `firm`'s exogenous demand at step `k`.
///
/// Demand-shift windows that touch (`next.start <= prev.end + 1`) form one
/// episode whose increments accumulate; once `k` leaves the episode the mean
/// reverts.
pub fn demand_offset(shocks: &[Shock], firm: FirmId, k: usize) -> f64 {
    let mut shifts: Vec<&Shock> = shocks
        .iter()
        .filter(|s| s.firm == firm && s.kind == ShockKind::DemandShift)
        .collect();
    shifts.sort_by_key(|s| (s.start, s.end));
    let mut acc = 0.0;
    let mut episode_end: Option<usize> = None;
    for s in shifts {
        if s.start > k {
            break;
        }
        if episode_end.is_some_and(|e| s.start > e + 1) {
            acc = 0.0;
        }
        acc += s.mean_delta * (k.min(s.end) - s.start + 1) as f64;
        episode_end = Some(episode_end.map_or(s.end, |e| e.max(s.end)));
    }
    match episode_end {
        Some(e) if k <= e => acc,
        _ => 0.0,
    }
}

/// Largest-remainder proportional rationing.
///
/// When `available` covers every order the orders are filled exactly.
/// Otherwise each customer's ideal share `available * order / total` is
/// floored and leftover units go one at a time by descending fractional
/// remainder, ties to the smaller firm id. Computed in exact integer
/// arithmetic.
pub fn allocate(available: i64, orders: &[(FirmId, i64)]) -> Vec<(FirmId, i64)> {
    let total: i64 = orders.iter().map(|o| o.1.max(0)).sum();
    if total <= available {
        return orders.iter().map(|&(f, o)| (f, o.max(0))).collect();
    }
    let available = available.max(0) as i128;
    let total = total as i128;
    let mut out: Vec<(FirmId, i64)> = Vec::with_capacity(orders.len());
    let mut rems: Vec<(i128, FirmId, usize)> = Vec::with_capacity(orders.len());
    let mut given = 0i128;
    for (idx, &(f, o)) in orders.iter().enumerate() {
        let num = available * o.max(0) as i128;
        let share = num / total;
        given += share;
        out.push((f, share as i64));
        rems.push((num % total, f, idx));
    }
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, _, idx) in rems.iter().take((available - given) as usize) {
        out[idx].1 += 1;
    }
    out
}

/// Simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub policy_mode: PolicyMode,
}

/// Inventories at a step boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimState {
    pub step: usize,
    pub inv_out: Vec<i64>,
    /// `inv_in[i]` pairs `(good, units)` for each input of firm `i`.
    pub inv_in: Vec<Vec<(usize, i64)>>,
}

/// Everything recorded for one firm in one step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub firm: FirmId,
    /// Policy stage consulted.
    pub stage: usize,
    pub omega: i64,
    pub request: i64,
    /// `(good, units)` received from each supplier.
    pub delivered: Vec<(usize, i64)>,
    pub produced: i64,
    pub shipped: i64,
    pub shortage: i64,
    /// Output inventory before this step.
    pub inv_out_before: i64,
    pub inv_out: i64,
    pub inv_in: Vec<(usize, i64)>,
    pub cost_production: f64,
    pub cost_shortage: f64,
    pub cost_holding: f64,
    pub cost_step: f64,
    pub cost_cum: f64,
}

/// Per-step, per-firm record of a run. Rows are step-major, firm-ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub firms: usize,
    pub policy_mode: PolicyMode,
    pub rows: Vec<TraceRow>,
}

impl SimTrace {
    pub fn steps(&self) -> usize {
        self.rows.len() / self.firms.max(1)
    }

    pub fn row(&self, k: usize, firm: FirmId) -> &TraceRow {
        &self.rows[k * self.firms + firm.0]
    }

    pub fn firm_rows(&self, firm: FirmId) -> impl Iterator<Item = &TraceRow> + '_ {
        self.rows.iter().skip(firm.0).step_by(self.firms)
    }

    /// CSV with fixed column order: `k, firm, omega, request, produced,
    /// shipped, shortage, inv_out, inv_in_<good>..., cost_step, cost_cum`.
    /// Input-inventory columns cover every good that is an input anywhere;
    /// cells are empty where the good is not an input of that firm.
    pub fn to_csv(&self, net: &Network) -> String {
        let mut goods: Vec<usize> = net.firms().iter().flat_map(|f| f.bom.inputs().map(|(r, _)| r)).collect();
        goods.sort_unstable();
        goods.dedup();
        let mut out = String::from("k,firm,omega,request,produced,shipped,shortage,inv_out");
        for g in &goods {
            let _ = write!(out, ",inv_in_{g}");
        }
        out.push_str(",cost_step,cost_cum\n");
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.k, r.firm.0, r.omega, r.request, r.produced, r.shipped, r.shortage, r.inv_out
            );
            for g in &goods {
                match r.inv_in.iter().find(|(gg, _)| gg == g) {
                    Some((_, v)) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            let _ = writeln!(out, ",{:.6},{:.6}", r.cost_step, r.cost_cum);
        }
        out
    }
}

/// Cumulative cost series, per firm and for the whole network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostLedger {
    /// `firms[i][k]`: cumulative cost of firm `i` through step `k`.
    pub firms: Vec<Vec<f64>>,
    /// `network[k] = sum_i firms[i][k]`.
    pub network: Vec<f64>,
}

impl CostLedger {
    fn new(n: usize) -> Self {
        CostLedger { firms: vec![Vec::new(); n], network: Vec::new() }
    }

    /// Appends one step of per-firm cost deltas.
    pub fn accrue(&mut self, deltas: &[f64]) {
        let mut total = 0.0;
        for (series, &d) in self.firms.iter_mut().zip(deltas) {
            let cum = series.last().copied().unwrap_or(0.0) + d;
            series.push(cum);
            total += cum;
        }
        self.network.push(total);
    }

    pub fn total(&self) -> f64 {
        self.network.last().copied().unwrap_or(0.0)
    }

    /// `k, firm, cum_cost` with `firm` either an index or `network`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,firm,cum_cost\n");
        for k in 0..self.network.len() {
            for (i, series) in self.firms.iter().enumerate() {
                let _ = writeln!(out, "{k},{i},{:.6}", series[k]);
            }
            let _ = writeln!(out, "{k},network,{:.6}", self.network[k]);
        }
        out
    }
}

/// Step cost `c q + s shortage + h holding`.
pub fn step_cost(params: &crate::network::FirmParams, produced: i64, shortage: i64, holding: i64) -> (f64, f64, f64) {
    (
        params.production_cost * produced as f64,
        params.shortage_penalty * shortage as f64,
        params.holding_cost * holding as f64,
    )
}

/// A network simulation in progress.
pub struct Simulator<'a, P: OrderPolicy> {
    net: &'a Network,
    policies: Vec<&'a P>,
    demand: Vec<Option<DemandSpec>>,
    shocks: Vec<Shock>,
    mode: PolicyMode,
    demand_rng: Vec<ChaCha8Rng>,
    order: Vec<Vec<FirmId>>,
    state: SimState,
    ledger: CostLedger,
    cum: Vec<f64>,
}

impl<'a, P: OrderPolicy> Simulator<'a, P> {
    /// Validates inputs and draws initial inventories uniformly from
    /// `[0, x^U]` (outputs) and `[0, B_ir x^U]` (inputs).
    pub fn new(
        net: &'a Network,
        policies: &'a BTreeMap<FirmId, P>,
        demand: &BTreeMap<FirmId, DemandSpec>,
        shocks: &[Shock],
        cfg: &SimConfig,
    ) -> Result<Self, SimError> {
        let mut pols = Vec::with_capacity(net.len());
        for id in net.ids() {
            pols.push(policies.get(&id).ok_or(SimError::MissingPolicy(id))?);
        }
        let mut dem = vec![None; net.len()];
        for id in net.distributors() {
            let spec = demand.get(&id).ok_or(SimError::MissingDemand(id))?;
            spec.to_pmf().map_err(|source| SimError::Demand { firm: id, source })?;
            dem[id.0] = Some(spec.clone());
        }
        for s in shocks {
            if !net.contains(s.firm) {
                return Err(SimError::UnknownFirm(s.firm));
            }
            if s.start > s.end {
                return Err(SimError::InvalidShock { firm: s.firm, reason: "start after end".into() });
            }
            if s.kind == ShockKind::DemandShift && !net.is_distributor(s.firm) {
                return Err(SimError::InvalidShock {
                    firm: s.firm,
                    reason: "demand shifts apply to distributors only".into(),
                });
            }
        }

        let mut inv_out = Vec::with_capacity(net.len());
        let mut inv_in = Vec::with_capacity(net.len());
        for f in net.firms() {
            let mut rng = firm_stream(cfg.seed, f.id, Purpose::InitialInventory);
            let upper = f.params.inv_upper.max(0);
            inv_out.push(rng.gen_range(0..=upper));
            inv_in.push(
                f.bom
                    .inputs()
                    .map(|(r, q)| (r, rng.gen_range(0..=upper * q as i64)))
                    .collect(),
            );
        }
        Ok(Simulator {
            net,
            policies: pols,
            demand: dem,
            shocks: shocks.to_vec(),
            mode: cfg.policy_mode,
            demand_rng: net.ids().map(|id| firm_stream(cfg.seed, id, Purpose::Demand)).collect(),
            order: net.echelon_order(),
            state: SimState { step: 0, inv_out, inv_in },
            ledger: CostLedger::new(net.len()),
            cum: vec![0.0; net.len()],
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    fn blocked(&self, firm: FirmId, k: usize, pred: fn(&Shock) -> bool) -> bool {
        self.shocks.iter().any(|s| s.firm == firm && s.active(k) && pred(s))
    }

    /// Advances one step and returns the trace rows, one per firm in id order.
    pub fn step(&mut self) -> Result<Vec<TraceRow>, SimError> {
        let net = self.net;
        let n = net.len();
        let k = self.state.step;

        // 1. orders, downstream first
        let mut request = vec![0i64; n];
        let mut omega = vec![0i64; n];
        let mut stages = vec![0usize; n];
        for group in &self.order {
            for &i in group {
                let pol = self.policies[i.0];
                let stage = self.mode.stage(k, pol.horizon());
                stages[i.0] = stage;
                request[i.0] = pol
                    .optimal_request(stage, self.state.inv_out[i.0])
                    .map_err(|source| SimError::Policy { firm: i, source })?;
                omega[i.0] = net
                    .customers_of(i)
                    .iter()
                    .map(|&j| request[j.0] * net.bom_qty(j, i) as i64)
                    .sum();
            }
        }

        // 2-3. fulfillment and production, upstream first
        let mut shipments: Vec<Vec<(FirmId, i64)>> = vec![Vec::new(); n];
        let mut rows: Vec<Option<TraceRow>> = vec![None; n];
        let mut deltas = vec![0.0; n];
        for group in self.order.iter().rev() {
            for &i in group {
                let firm = net.firm(i);
                let delivered: Vec<(usize, i64)> = net
                    .suppliers_of(i)
                    .iter()
                    .map(|&r| {
                        let got = shipments[r.0].iter().find(|(c, _)| *c == i).map_or(0, |s| s.1);
                        (r.0, got)
                    })
                    .collect();
                let produced = if self.blocked(i, k, Shock::blocks_production) {
                    0
                } else if firm.bom.is_raw() {
                    request[i.0]
                } else {
                    firm.bom
                        .inputs()
                        .zip(self.state.inv_in[i.0].iter().zip(&delivered))
                        .map(|((_, q), (&(_, have), &(_, got)))| (have + got) / q as i64)
                        .fold(request[i.0], i64::min)
                };
                let before = self.state.inv_out[i.0];
                let available = before + produced;
                let no_ship = self.blocked(i, k, Shock::blocks_shipping);

                let shipped = if net.is_distributor(i) {
                    let spec = self.demand[i.0].as_ref().ok_or(SimError::MissingDemand(i))?;
                    let offset = demand_offset(&self.shocks, i, k);
                    let pmf: DemandPmf = spec
                        .shifted_pmf(offset)
                        .map_err(|source| SimError::Demand { firm: i, source })?;
                    omega[i.0] = pmf.sample(&mut self.demand_rng[i.0]);
                    if no_ship {
                        0
                    } else {
                        omega[i.0].min(available)
                    }
                } else {
                    let orders: Vec<(FirmId, i64)> = net
                        .customers_of(i)
                        .iter()
                        .map(|&j| (j, request[j.0] * net.bom_qty(j, i) as i64))
                        .collect();
                    let alloc = if no_ship {
                        orders.iter().map(|&(j, _)| (j, 0)).collect()
                    } else {
                        allocate(available, &orders)
                    };
                    let total = alloc.iter().map(|a| a.1).sum();
                    shipments[i.0] = alloc;
                    total
                };

                // 4. update and accrue
                let inv_out = available - shipped;
                let shortage = omega[i.0] - shipped;
                let mut inv_in = self.state.inv_in[i.0].clone();
                for ((slot, (_, q)), &(_, got)) in inv_in.iter_mut().zip(firm.bom.inputs()).zip(&delivered) {
                    slot.1 += got - produced * q as i64;
                }
                if inv_out < 0 || inv_in.iter().any(|s| s.1 < 0) {
                    return Err(SimError::NegativeInventory { firm: i, step: k });
                }
                let (cp, cs, ch) = step_cost(&firm.params, produced, shortage, inv_out);
                let cost = cp + cs + ch;
                self.cum[i.0] += cost;
                deltas[i.0] = cost;
                self.state.inv_out[i.0] = inv_out;
                self.state.inv_in[i.0] = inv_in.clone();
                rows[i.0] = Some(TraceRow {
                    k,
                    firm: i,
                    stage: stages[i.0],
                    omega: omega[i.0],
                    request: request[i.0],
                    delivered,
                    produced,
                    shipped,
                    shortage,
                    inv_out_before: before,
                    inv_out,
                    inv_in,
                    cost_production: cp,
                    cost_shortage: cs,
                    cost_holding: ch,
                    cost_step: cost,
                    cost_cum: 0.0,
                });
            }
        }
        self.ledger.accrue(&deltas);
        self.state.step += 1;
        Ok(rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let mut r = r.expect("every firm visited");
                r.cost_cum = self.ledger.firms[i][k];
                r
            })
            .collect())
    }
}

/// Result of a full run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub trace: SimTrace,
    pub ledger: CostLedger,
}

/// Runs `cfg.steps` steps from a seeded random initial state.
pub fn run<P: OrderPolicy>(
    net: &Network,
    policies: &BTreeMap<FirmId, P>,
    demand: &BTreeMap<FirmId, DemandSpec>,
    shocks: &[Shock],
    cfg: &SimConfig,
) -> Result<SimOutput, SimError> {
    let mut sim = Simulator::new(net, policies, demand, shocks, cfg)?;
    let mut rows = Vec::with_capacity(cfg.steps * net.len());
    for _ in 0..cfg.steps {
        rows.extend(sim.step()?);
    }
    Ok(SimOutput {
        trace: SimTrace { firms: net.len(), policy_mode: cfg.policy_mode, rows },
        ledger: sim.ledger,
    })
}
