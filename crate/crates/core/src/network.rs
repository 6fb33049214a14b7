//! Supply network graph: firms, bills of materials, echelons and cost parameters.
//!
//! Every firm makes exactly one good and good `i` is made only by firm `i`, so
//! goods and firms share one index space. Material flows from a supplier `j` to
//! a customer `i` whenever `B[i][j] > 0`.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a firm (and of the single good that firm makes).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FirmId(pub usize);

impl FirmId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for FirmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Per-firm cost and inventory-bound parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmParams {
    /// Production cost per unit (`c`).
    pub production_cost: f64,
    /// Penalty per unit of unmet demand (`s`).
    pub shortage_penalty: f64,
    /// Holding cost per unit left in output inventory (`h`).
    pub holding_cost: f64,
    /// Lower inventory bound `x^L`. May be negative at the solver level.
    pub inv_lower: i64,
    /// Upper inventory bound `x^U`.
    pub inv_upper: i64,
}

impl FirmParams {
    pub fn new(c: f64, s: f64, h: f64, inv_lower: i64, inv_upper: i64) -> Self {
        FirmParams {
            production_cost: c,
            shortage_penalty: s,
            holding_cost: h,
            inv_lower,
            inv_upper,
        }
    }

    fn check(&self, firm: usize) -> Result<(), NetworkError> {
        if self.inv_lower > self.inv_upper {
            return Err(NetworkError::Bounds {
                firm,
                lower: self.inv_lower,
                upper: self.inv_upper,
            });
        }
        for (name, v) in [
            ("production_cost", self.production_cost),
            ("shortage_penalty", self.shortage_penalty),
            ("holding_cost", self.holding_cost),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NetworkError::NonPositiveCost { firm, name, value: v });
            }
        }
        Ok(())
    }
}

/// One nonzero bill-of-materials entry: `qty` units of `good` per unit of output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BomEntry {
    pub good: usize,
    pub qty: u32,
}

/// Declarative description of one firm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub bom: Vec<BomEntry>,
    #[serde(flatten)]
    pub params: FirmParams,
}

/// Declarative network description; `firms[i]` describes firm `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub firms: Vec<FirmSpec>,
    /// Optional explicit `(supplier, customer)` edges. When given they must
    /// match the nonzero BOM entries exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network has no firms")]
    Empty,
    #[error("supply graph has a cycle through firm v{0}")]
    Cycle(usize),
    #[error("edge (v{supplier}, v{customer}) has no matching bill-of-materials entry, or vice versa")]
    BomMismatch { supplier: usize, customer: usize },
    #[error("firm v{firm}: lower bound {lower} exceeds upper bound {upper}")]
    Bounds { firm: usize, lower: i64, upper: i64 },
    #[error("firm v{firm}: {name} must be positive and finite, got {value}")]
    NonPositiveCost { firm: usize, name: &'static str, value: f64 },
    #[error("firm v{firm}: bill of materials references unknown good {good}")]
    UnknownGood { firm: usize, good: usize },
    #[error("firm v{firm}: bill of materials lists itself as an input")]
    SelfInput { firm: usize },
    #[error("firm v{firm}: good {good} listed twice in bill of materials")]
    DuplicateInput { firm: usize, good: usize },
}

/// Dense bill of materials: `coefficients[r]` units of good `r` per unit output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bom {
    pub coefficients: Vec<u32>,
}

impl Bom {
    pub fn get(&self, good: usize) -> u32 {
        self.coefficients.get(good).copied().unwrap_or(0)
    }

    /// Nonzero entries in ascending good order.
    pub fn inputs(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > 0)
            .map(|(r, &q)| (r, q))
    }

    pub fn is_raw(&self) -> bool {
        self.coefficients.iter().all(|&q| q == 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Firm {
    pub id: FirmId,
    pub name: Option<String>,
    pub bom: Bom,
    pub params: FirmParams,
}

/// Validated, immutable supply network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    firms: Vec<Firm>,
    edges: BTreeSet<(FirmId, FirmId)>,
    echelon: Vec<usize>,
    suppliers: Vec<Vec<FirmId>>,
    customers: Vec<Vec<FirmId>>,
}

/// Builds and validates a network. Echelons are `1 + longest path to a
/// distributor`, so every customer sits in a strictly lower echelon.
pub fn build_network(spec: &NetworkSpec) -> Result<Network, NetworkError> {
    let n = spec.firms.len();
    if n == 0 {
        return Err(NetworkError::Empty);
    }
    let mut firms = Vec::with_capacity(n);
    for (i, fs) in spec.firms.iter().enumerate() {
        fs.params.check(i)?;
        let mut coefficients = vec![0u32; n];
        for e in &fs.bom {
            if e.good >= n {
                return Err(NetworkError::UnknownGood { firm: i, good: e.good });
            }
            if e.good == i && e.qty > 0 {
                return Err(NetworkError::SelfInput { firm: i });
            }
            if coefficients[e.good] > 0 {
                return Err(NetworkError::DuplicateInput { firm: i, good: e.good });
            }
            coefficients[e.good] = e.qty;
        }
        firms.push(Firm {
            id: FirmId(i),
            name: fs.name.clone(),
            bom: Bom { coefficients },
            params: fs.params.clone(),
        });
    }

    let mut edges = BTreeSet::new();
    for f in &firms {
        for (r, _) in f.bom.inputs() {
            edges.insert((FirmId(r), f.id));
        }
    }
    if let Some(explicit) = &spec.edges {
        let mut given = BTreeSet::new();
        for &(s, c) in explicit {
            if s >= n || c >= n {
                return Err(NetworkError::UnknownGood { firm: c.min(n - 1), good: s.max(c) });
            }
            given.insert((FirmId(s), FirmId(c)));
        }
        if let Some(&(s, c)) = given.symmetric_difference(&edges).next() {
            return Err(NetworkError::BomMismatch { supplier: s.0, customer: c.0 });
        }
    }

    let mut suppliers = vec![Vec::new(); n];
    let mut customers = vec![Vec::new(); n];
    for &(s, c) in &edges {
        suppliers[c.0].push(s);
        customers[s.0].push(c);
    }

    let echelon = compute_echelons(&customers)?;
    Ok(Network {
        firms,
        edges,
        echelon,
        suppliers,
        customers,
    })
}

/// Longest-path levels over out-edges, with cycle detection (Kahn's algorithm
/// on the reversed graph: sinks first).
fn compute_echelons(customers: &[Vec<FirmId>]) -> Result<Vec<usize>, NetworkError> {
    let n = customers.len();
    let mut remaining: Vec<usize> = customers.iter().map(Vec::len).collect();
    let mut suppliers_of = vec![Vec::new(); n];
    for (s, cs) in customers.iter().enumerate() {
        for c in cs {
            suppliers_of[c.0].push(s);
        }
    }
    let mut level = vec![0usize; n];
    let mut ready: Vec<usize> = (0..n).filter(|&i| remaining[i] == 0).collect();
    let mut done = 0;
    while let Some(i) = ready.pop() {
        done += 1;
        level[i] = 1 + customers[i].iter().map(|c| level[c.0]).max().unwrap_or(0);
        for &s in &suppliers_of[i] {
            remaining[s] -= 1;
            if remaining[s] == 0 {
                ready.push(s);
            }
        }
    }
    if done < n {
        let stuck = (0..n).find(|&i| remaining[i] > 0).unwrap_or(0);
        return Err(NetworkError::Cycle(stuck));
    }
    Ok(level)
}

impl Network {
    pub fn len(&self) -> usize {
        self.firms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.firms.is_empty()
    }

    pub fn firms(&self) -> &[Firm] {
        &self.firms
    }

    pub fn firm(&self, id: FirmId) -> &Firm {
        &self.firms[id.0]
    }

    pub fn contains(&self, id: FirmId) -> bool {
        id.0 < self.firms.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = FirmId> + '_ {
        (0..self.firms.len()).map(FirmId)
    }

    pub fn edges(&self) -> &BTreeSet<(FirmId, FirmId)> {
        &self.edges
    }

    pub fn echelon(&self, id: FirmId) -> usize {
        self.echelon[id.0]
    }

    /// Number of echelons `L`.
    pub fn depth(&self) -> usize {
        self.echelon.iter().copied().max().unwrap_or(0)
    }

    /// In-neighbors: firms this firm buys from, ascending.
    pub fn suppliers_of(&self, id: FirmId) -> &[FirmId] {
        &self.suppliers[id.0]
    }

    /// Out-neighbors: firms this firm sells to, ascending.
    pub fn customers_of(&self, id: FirmId) -> &[FirmId] {
        &self.customers[id.0]
    }

    pub fn is_distributor(&self, id: FirmId) -> bool {
        self.customers[id.0].is_empty()
    }

    pub fn distributors(&self) -> Vec<FirmId> {
        self.ids().filter(|&i| self.is_distributor(i)).collect()
    }

    /// `B[customer][supplier]`.
    pub fn bom_qty(&self, customer: FirmId, supplier: FirmId) -> u32 {
        self.firms[customer.0].bom.get(supplier.0)
    }

    /// Firms grouped by echelon `1..=L`, ascending id within each group.
    pub fn echelon_order(&self) -> Vec<Vec<FirmId>> {
        let mut groups = vec![Vec::new(); self.depth()];
        for id in self.ids() {
            groups[self.echelon[id.0] - 1].push(id);
        }
        groups
    }

    /// Reconstructs a spec that builds back into this exact network.
    pub fn to_spec(&self) -> NetworkSpec {
        NetworkSpec {
            firms: self
                .firms
                .iter()
                .map(|f| FirmSpec {
                    name: f.name.clone(),
                    bom: f.bom.inputs().map(|(good, qty)| BomEntry { good, qty }).collect(),
                    params: f.params.clone(),
                })
                .collect(),
            edges: Some(self.edges.iter().map(|&(s, c)| (s.0, c.0)).collect()),
        }
    }

    /// Advisory check of the price-ordering rules used to draw plausible costs:
    /// `sum_j B_ij s_j <= c_i <= s_i` and `s_i >= s_j` for every input `j`.
    pub fn validate_costs(&self) -> ValidationReport {
        let mut warnings = Vec::new();
        for f in &self.firms {
            let p = &f.params;
            let input_cost: f64 = f
                .bom
                .inputs()
                .map(|(r, q)| q as f64 * self.firms[r].params.shortage_penalty)
                .sum();
            if !f.bom.is_raw() && p.production_cost < input_cost {
                warnings.push(CostWarning::CostBelowInputs {
                    firm: f.id,
                    production_cost: p.production_cost,
                    input_cost,
                });
            }
            if p.production_cost > p.shortage_penalty {
                warnings.push(CostWarning::CostAbovePenalty {
                    firm: f.id,
                    production_cost: p.production_cost,
                    shortage_penalty: p.shortage_penalty,
                });
            }
            for &s in &self.suppliers[f.id.0] {
                let sp = self.firms[s.0].params.shortage_penalty;
                if p.shortage_penalty < sp {
                    warnings.push(CostWarning::PenaltyBelowInput {
                        firm: f.id,
                        input: s,
                        shortage_penalty: p.shortage_penalty,
                        input_penalty: sp,
                    });
                }
            }
        }
        ValidationReport { warnings }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum CostWarning {
    CostBelowInputs { firm: FirmId, production_cost: f64, input_cost: f64 },
    CostAbovePenalty { firm: FirmId, production_cost: f64, shortage_penalty: f64 },
    PenaltyBelowInput { firm: FirmId, input: FirmId, shortage_penalty: f64, input_penalty: f64 },
}

impl fmt::Display for CostWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostWarning::CostBelowInputs { firm, production_cost, input_cost } => write!(
                f,
                "{firm}: production cost {production_cost} below input cost {input_cost}"
            ),
            CostWarning::CostAbovePenalty { firm, production_cost, shortage_penalty } => write!(
                f,
                "{firm}: production cost {production_cost} above shortage penalty {shortage_penalty}"
            ),
            CostWarning::PenaltyBelowInput { firm, input, shortage_penalty, input_penalty } => write!(
                f,
                "{firm}: shortage penalty {shortage_penalty} below that of input {input} ({input_penalty})"
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub warnings: Vec<CostWarning>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Draws `(c, s, h)` for every firm so that the network passes
/// [`Network::validate_costs`]. Firms are visited from the top echelon down so
/// input penalties are known first; each draw is rejected until it satisfies
/// both price rules.
pub fn draw_costs<R: Rng>(net: &Network, rng: &mut R) -> Vec<(f64, f64, f64)> {
    let mut out = vec![(0.0, 0.0, 0.0); net.len()];
    for group in net.echelon_order().iter().rev() {
        for &id in group {
            let firm = net.firm(id);
            let input_cost: f64 = firm
                .bom
                .inputs()
                .map(|(r, q)| q as f64 * out[r].1)
                .sum();
            let max_input_penalty = net
                .suppliers_of(id)
                .iter()
                .map(|s| out[s.0].1)
                .fold(0.0f64, f64::max);
            loop {
                let c = round2(if firm.bom.is_raw() {
                    rng.gen_range(1.0..5.0)
                } else {
                    input_cost + rng.gen_range(0.5..4.0)
                });
                let s = round2(rng.gen_range(c..c * 2.0 + 2.0));
                let h = round2(rng.gen_range(0.05..0.5));
                if input_cost <= c && c <= s && s >= max_input_penalty && h > 0.0 {
                    out[id.0] = (c, s, h);
                    break;
                }
            }
        }
    }
    out
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}
