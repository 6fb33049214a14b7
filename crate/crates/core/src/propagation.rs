//! Monte Carlo estimation of upstream demand.
//!
//! Echelons are processed downstream first. Once every firm in echelons
//! `1..=e` has a policy, the subnetwork of those firms is simulated under
//! ideal upstream supply and the aggregate orders reaching each echelon
//! `e + 1` firm are turned into that firm's demand pmf.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{pmf_from_samples, DemandError, DemandModel, DemandPmf};
use crate::network::{FirmId, Network};
use crate::policy::{compute_policy, PolicyError, PolicyMode, PolicyTable, SolverInstance};
use crate::rng::{firm_stream, Purpose};

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("distributor {0} has no demand pmf")]
    MissingDistributorPmf(FirmId),
    #[error("solving {firm}: {source}")]
    Solver { firm: FirmId, source: PolicyError },
    #[error("estimating demand for {firm}: {source}")]
    Demand { firm: FirmId, source: DemandError },
    #[error("invalid propagation config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub replicates: usize,
    /// Steps per replicate.
    pub horizon: usize,
    /// Leading steps discarded from every replicate. `None` means `4 L`.
    #[serde(default)]
    pub warmup: Option<usize>,
    pub base_seed: u64,
    #[serde(default)]
    pub policy_mode: PolicyMode,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig { replicates: 200, horizon: 250, warmup: None, base_seed: 0, policy_mode: PolicyMode::Receding }
    }
}

impl PropagationConfig {
    pub fn warmup_for(&self, net: &Network) -> usize {
        self.warmup.unwrap_or(4 * net.depth())
    }

    fn check(&self, net: &Network) -> Result<(), PropagationError> {
        if self.replicates == 0 || self.horizon == 0 {
            return Err(PropagationError::Config("replicates and horizon must be positive".into()));
        }
        let w = self.warmup_for(net);
        if w >= self.horizon {
            return Err(PropagationError::Config(format!("warmup {w} must be below horizon {}", self.horizon)));
        }
        Ok(())
    }
}

/// Demand model for every firm: exogenous for distributors, estimated for
/// suppliers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkDemand {
    pub models: BTreeMap<FirmId, DemandModel>,
}

impl NetworkDemand {
    pub fn get(&self, firm: FirmId) -> Option<&DemandModel> {
        self.models.get(&firm)
    }

    /// Stage-0 pmf of each firm.
    pub fn pmfs(&self) -> impl Iterator<Item = (FirmId, &DemandPmf)> + '_ {
        self.models.iter().map(|(&f, m)| (f, m.stage(0)))
    }

    /// `firm,value,probability` rows for every firm and support point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("firm,value,probability\n");
        for (f, pmf) in self.pmfs() {
            for (v, p) in pmf.iter() {
                out.push_str(&format!("{},{v},{p:.12}\n", f.0));
            }
        }
        out
    }
}

/// One order quantity seen by `supplier` in one replicate step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrderRecord {
    pub replicate: usize,
    pub step: usize,
    pub supplier: FirmId,
    pub quantity: i64,
}

/// Groups order quantities by supplier; each multiset is returned sorted.
pub fn collect_orders(records: &[OrderRecord]) -> BTreeMap<FirmId, Vec<i64>> {
    let mut out: BTreeMap<FirmId, Vec<i64>> = BTreeMap::new();
    for r in records {
        out.entry(r.supplier).or_default().push(r.quantity);
    }
    for v in out.values_mut() {
        v.sort_unstable();
    }
    out
}

/// Warmup check: relative change of the per-step mean order between the
/// first and second half of the post-warmup window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub first_half_mean: f64,
    pub second_half_mean: f64,
}

impl DriftReport {
    pub fn relative(&self) -> f64 {
        let scale = self.first_half_mean.abs().max(self.second_half_mean.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.second_half_mean - self.first_half_mean).abs() / scale
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Propagation {
    pub demand: NetworkDemand,
    pub policies: BTreeMap<FirmId, PolicyTable>,
    pub drift: BTreeMap<FirmId, DriftReport>,
}

fn solve(net: &Network, id: FirmId, model: &DemandModel, horizon: usize) -> Result<PolicyTable, PropagationError> {
    let inst = SolverInstance::new(net.firm(id).params.clone(), model.clone(), horizon);
    compute_policy(&inst).map_err(|source| PropagationError::Solver { firm: id, source })
}

/// Simulates echelons `1..=e` with full delivery and returns the orders
/// reaching `targets`.
fn simulate_subnetwork(
    net: &Network,
    members: &[FirmId],
    targets: &[FirmId],
    policies: &BTreeMap<FirmId, PolicyTable>,
    exogenous: &BTreeMap<FirmId, DemandPmf>,
    cfg: &PropagationConfig,
    warmup: usize,
) -> Vec<OrderRecord> {
    let lookup: Vec<(FirmId, &PolicyTable, Option<&DemandPmf>)> =
        members.iter().map(|&i| (i, &policies[&i], exogenous.get(&i))).collect();
    let per_replicate: Vec<Vec<OrderRecord>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.base_seed.wrapping_add(r as u64);
            let n = net.len();
            let mut x = vec![0i64; n];
            let mut demand_rng: Vec<Option<_>> = (0..n).map(|_| None).collect();
            for &id in members {
                let mut rng = firm_stream(seed, id, Purpose::InitialInventory);
                x[id.0] = rng.gen_range(0..=net.firm(id).params.inv_upper.max(0));
                if net.is_distributor(id) {
                    demand_rng[id.0] = Some(firm_stream(seed, id, Purpose::Demand));
                }
            }
            // firms outside the subnetwork never post orders
            let mut request = vec![0i64; n];
            let mut out = Vec::with_capacity((cfg.horizon - warmup) * targets.len());
            for k in 0..cfg.horizon {
                for &(i, pol, _) in &lookup {
                    let stage = cfg.policy_mode.stage(k, pol.horizon());
                    request[i.0] = pol.optimal_request(stage, x[i.0]).expect("stage within horizon");
                }
                for &(i, _, pmf) in &lookup {
                    let omega = match (pmf, demand_rng[i.0].as_mut()) {
                        (Some(pmf), Some(rng)) => pmf.sample(rng),
                        _ => orders_to(net, i, &request),
                    };
                    x[i.0] = (x[i.0] + request[i.0] - omega).max(0);
                }
                if k >= warmup {
                    for &u in targets {
                        out.push(OrderRecord { replicate: r, step: k, supplier: u, quantity: orders_to(net, u, &request) });
                    }
                }
            }
            out
        })
        .collect();
    per_replicate.into_iter().flatten().collect()
}

/// `sum_j N_j B_ju` over customers `j` of `u`.
fn orders_to(net: &Network, u: FirmId, request: &[i64]) -> i64 {
    net.customers_of(u).iter().map(|&j| request[j.0] * net.bom_qty(j, u) as i64).sum()
}

fn drift(records: &[OrderRecord], firm: FirmId, warmup: usize, horizon: usize) -> DriftReport {
    let mid = warmup + (horizon - warmup) / 2;
    let (mut a, mut na, mut b, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for r in records.iter().filter(|r| r.supplier == firm) {
        if r.step < mid {
            a += r.quantity as f64;
            na += 1;
        } else {
            b += r.quantity as f64;
            nb += 1;
        }
    }
    DriftReport {
        first_half_mean: if na > 0 { a / na as f64 } else { 0.0 },
        second_half_mean: if nb > 0 { b / nb as f64 } else { 0.0 },
    }
}

/// Solves every firm's policy and estimates every supplier's demand.
pub fn propagate(
    net: &Network,
    exogenous: &BTreeMap<FirmId, DemandPmf>,
    solver_horizon: usize,
    cfg: &PropagationConfig,
) -> Result<Propagation, PropagationError> {
    cfg.check(net)?;
    let warmup = cfg.warmup_for(net);
    let mut models: BTreeMap<FirmId, DemandModel> = BTreeMap::new();
    for id in net.distributors() {
        let pmf = exogenous.get(&id).ok_or(PropagationError::MissingDistributorPmf(id))?;
        models.insert(id, DemandModel::stationary(pmf.clone()));
    }

    let order = net.echelon_order();
    let mut policies: BTreeMap<FirmId, PolicyTable> = BTreeMap::new();
    let mut drifts = BTreeMap::new();
    let mut members: Vec<FirmId> = Vec::new();
    for (e, group) in order.iter().enumerate() {
        let solved: Vec<(FirmId, PolicyTable)> = group
            .par_iter()
            .map(|&id| solve(net, id, &models[&id], solver_horizon).map(|t| (id, t)))
            .collect::<Result<_, _>>()?;
        policies.extend(solved);
        members.extend(group.iter().copied());

        let Some(next) = order.get(e + 1) else { break };
        let records = simulate_subnetwork(net, &members, next, &policies, exogenous, cfg, warmup);
        let samples = collect_orders(&records);
        for &u in next {
            let pmf = pmf_from_samples(samples.get(&u).map_or(&[][..], |v| v.as_slice()))
                .map_err(|source| PropagationError::Demand { firm: u, source })?;
            models.insert(u, DemandModel::stationary(pmf));
            drifts.insert(u, drift(&records, u, warmup, cfg.horizon));
        }
    }
    Ok(Propagation { demand: NetworkDemand { models }, policies, drift: drifts })
}

/// Loose upper bound on a supplier's per-step demand:
/// `sum_j (x_j^U - x_j^L + D_j) B_ju` over customers `j`.
pub fn conservation_bound(net: &Network, demand: &NetworkDemand, u: FirmId) -> i64 {
    net.customers_of(u)
        .iter()
        .map(|&j| {
            let p = &net.firm(j).params;
            let d = demand.get(j).map_or(0, |m| m.stage(0).max());
            (p.inv_upper - p.inv_lower + d) * net.bom_qty(j, u) as i64
        })
        .sum()
}
