//! Optimal threshold ordering policy for a single firm.
//!
//! The firm minimizes expected production plus holding/shortage cost over a
//! finite horizon `T`, choosing on-hand stock `y` in the band
//! `[x^L + D^k, x^U]` with `y >= x`. The optimal request has order-up-to form
//! `N = (M^k - x)+`; the thresholds come from a backward recursion over two
//! tabulated functions:
//!
//! * `F^k(y)`: right difference of the expected cost-to-go in on-hand stock,
//! * `G^k(y)`: the expected holding/shortage cost plus next-stage cost-to-go.
//!
//! On integer grids `G^k(y+1) - G^k(y) = F^k(y)` holds exactly. The threshold
//! is the first grid point where `F^k` reaches `-c`, clamped to the band.
//!
//! [`brute_force_dp`] is an independent exhaustive Bellman solver used to
//! check the recursion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{DemandModel, DemandPmf};
use crate::network::FirmParams;

/// Two values of `F` closer than this are treated as equal when comparing
/// against `-c`. Covers float accumulation only; all expectations are finite
/// sums.
pub const LEVEL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("infeasible bounds at stage {stage}: x^L + D = {floor} exceeds x^U = {upper}")]
    InfeasibleBounds { stage: usize, floor: i64, upper: i64 },
    #[error("stage {stage} out of range for horizon {horizon}")]
    StageOutOfRange { stage: usize, horizon: usize },
    #[error("inventory {x} is outside the tabulated grid [{lo}, {hi}] at stage {stage}")]
    GridMiss { stage: usize, x: i64, lo: i64, hi: i64 },
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),
    #[error(transparent)]
    Demand(#[from] crate::demand::DemandError),
}

/// Holding/shortage penalty `s (-u)+ + h (u)+`.
pub fn penalty(params: &FirmParams, u: i64) -> f64 {
    if u < 0 {
        params.shortage_penalty * (-u) as f64
    } else {
        params.holding_cost * u as f64
    }
}

/// Right derivative of [`penalty`]: `-s` below zero, `+h` at and above zero.
pub fn penalty_subgradient(params: &FirmParams, u: i64) -> f64 {
    if u < 0 {
        -params.shortage_penalty
    } else {
        params.holding_cost
    }
}

/// One firm's finite-horizon ordering problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverInstance {
    pub params: FirmParams,
    pub demand: DemandModel,
    pub horizon: usize,
}

impl SolverInstance {
    pub fn new(params: FirmParams, demand: DemandModel, horizon: usize) -> Self {
        SolverInstance { params, demand, horizon }
    }

    pub fn stationary(params: FirmParams, pmf: DemandPmf, horizon: usize) -> Self {
        Self::new(params, DemandModel::stationary(pmf), horizon)
    }

    /// Lower end of the on-hand band at stage `k`: `x^L + D^k`.
    pub fn band_floor(&self, k: usize) -> i64 {
        self.params.inv_lower + self.demand.stage(k).max()
    }

    pub fn check(&self) -> Result<(), PolicyError> {
        if self.horizon == 0 {
            return Err(PolicyError::ZeroHorizon);
        }
        self.demand.check_horizon(self.horizon)?;
        for k in 0..self.horizon {
            let floor = self.band_floor(k);
            if floor > self.params.inv_upper {
                return Err(PolicyError::InfeasibleBounds {
                    stage: k,
                    floor,
                    upper: self.params.inv_upper,
                });
            }
        }
        Ok(())
    }
}

/// Which branch of the threshold rule produced a stage's threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdCase {
    /// `F^min < -c <= F^max`: first grid point with `F >= -c`.
    Interior,
    /// `-c <= F^min`: pinned to `x^L + D^k`.
    Lower,
    /// `F^max < -c`: pinned to `x^U`.
    Upper,
}

/// How a finite-horizon policy is applied over a longer simulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Every step uses the stage-0 threshold.
    #[default]
    Receding,
    /// Step `k` uses stage `min(k, T - 1)`.
    FiniteHorizon,
}

impl PolicyMode {
    pub fn stage(self, step: usize, horizon: usize) -> usize {
        match self {
            PolicyMode::Receding => 0,
            PolicyMode::FiniteHorizon => step.min(horizon.saturating_sub(1)),
        }
    }
}

/// Tabulated recursion for one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTable {
    pub threshold: i64,
    pub case: ThresholdCase,
    /// Feasible on-hand band `[x^L + D^k, x^U]`.
    pub band: (i64, i64),
    /// Grid starts here and ends at `x^U`.
    pub grid_min: i64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl StageTable {
    pub fn grid_max(&self) -> i64 {
        self.grid_min + self.f.len() as i64 - 1
    }

    pub fn on_grid(&self, y: i64) -> bool {
        y >= self.grid_min && y <= self.grid_max()
    }

    pub fn f_at(&self, y: i64) -> Option<f64> {
        self.on_grid(y).then(|| self.f[(y - self.grid_min) as usize])
    }

    pub fn g_at(&self, y: i64) -> Option<f64> {
        self.on_grid(y).then(|| self.g[(y - self.grid_min) as usize])
    }

    /// `F^min = F(x^L + D^k)` and `F^max = F(x^U)`.
    pub fn f_range(&self) -> (f64, f64) {
        (self.f_at(self.band.0).unwrap(), self.f_at(self.band.1).unwrap())
    }
}

/// Solver output: per-stage thresholds and the tabulated `F`/`G` functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub params: FirmParams,
    pub stages: Vec<StageTable>,
}

impl PolicyTable {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn threshold(&self, k: usize) -> Result<i64, PolicyError> {
        self.stage(k).map(|s| s.threshold)
    }

    pub fn thresholds(&self) -> Vec<i64> {
        self.stages.iter().map(|s| s.threshold).collect()
    }

    pub fn stage(&self, k: usize) -> Result<&StageTable, PolicyError> {
        self.stages
            .get(k)
            .ok_or(PolicyError::StageOutOfRange { stage: k, horizon: self.horizon() })
    }

    /// Order-up-to request `(M^k - x)+`.
    pub fn optimal_request(&self, k: usize, x: i64) -> Result<i64, PolicyError> {
        Ok((self.threshold(k)? - x).max(0))
    }

    /// Optimal expected cost from stage `k` with inventory `x`; zero at `k = T`.
    pub fn cost_to_go(&self, k: usize, x: i64) -> Result<f64, PolicyError> {
        if k == self.horizon() {
            return Ok(0.0);
        }
        let st = self.stage(k)?;
        if !st.on_grid(x) {
            return Err(PolicyError::GridMiss { stage: k, x, lo: st.grid_min, hi: st.grid_max() });
        }
        Ok(stage_cost_to_go(st, self.params.production_cost, x))
    }
}

/// Anything that maps (stage, inventory) to an order quantity.
pub trait OrderPolicy {
    fn horizon(&self) -> usize;
    fn optimal_request(&self, k: usize, x: i64) -> Result<i64, PolicyError>;
}

impl OrderPolicy for PolicyTable {
    fn horizon(&self) -> usize {
        PolicyTable::horizon(self)
    }

    fn optimal_request(&self, k: usize, x: i64) -> Result<i64, PolicyError> {
        PolicyTable::optimal_request(self, k, x)
    }
}

/// The thresholds of a [`PolicyTable`] without the tabulated functions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub thresholds: Vec<i64>,
}

impl From<&PolicyTable> for ThresholdSchedule {
    fn from(t: &PolicyTable) -> Self {
        ThresholdSchedule { thresholds: t.thresholds() }
    }
}

impl OrderPolicy for ThresholdSchedule {
    fn horizon(&self) -> usize {
        self.thresholds.len()
    }

    fn optimal_request(&self, k: usize, x: i64) -> Result<i64, PolicyError> {
        let m = self
            .thresholds
            .get(k)
            .ok_or(PolicyError::StageOutOfRange { stage: k, horizon: self.thresholds.len() })?;
        Ok((m - x).max(0))
    }
}

/// `c (M - x) + G(M)` at or below the threshold, `G(x)` above it.
fn stage_cost_to_go(st: &StageTable, c: f64, x: i64) -> f64 {
    if x <= st.threshold {
        c * (st.threshold - x) as f64 + st.g_at(st.threshold).unwrap()
    } else {
        st.g_at(x).unwrap()
    }
}

/// Whether the next-stage policy orders at post-demand inventory `x`: either
/// `x` is below the next band floor (an order is forced), or `F(x) <= -c`.
fn orders_at(next: &StageTable, c: f64, x: i64) -> bool {
    x < next.band.0 || next.f_at(x).unwrap() <= -c + LEVEL_TOL
}

/// Runs the backward recursion and returns the optimal thresholds.
pub fn compute_policy(inst: &SolverInstance) -> Result<PolicyTable, PolicyError> {
    inst.check()?;
    let p = &inst.params;
    let c = p.production_cost;
    let horizon = inst.horizon;
    let d_max = inst.demand.max_over(horizon);
    let upper = p.inv_upper;

    let mut stages: Vec<StageTable> = Vec::with_capacity(horizon);
    for k in (0..horizon).rev() {
        let pmf = inst.demand.stage(k);
        let grid_min = p.inv_lower - (horizon - 1 - k) as i64 * d_max;
        let width = (upper - grid_min + 1) as usize;
        let mut f = Vec::with_capacity(width);
        let mut g = Vec::with_capacity(width);
        let next = stages.last();
        // right derivative and value of the post-demand cost at each reachable x
        let x_min = grid_min - pmf.max();
        let post: Vec<(f64, f64)> = (x_min..=upper - pmf.min())
            .map(|x| {
                let mut df = penalty_subgradient(p, x);
                let mut val = penalty(p, x);
                if let Some(nx) = next {
                    if orders_at(nx, c, x) {
                        df -= c;
                        val += c * (nx.threshold - x) as f64 + nx.g_at(nx.threshold).unwrap();
                    } else {
                        df += nx.f_at(x).unwrap();
                        val += nx.g_at(x).unwrap();
                    }
                }
                (df, val)
            })
            .collect();
        for y in grid_min..=upper {
            let mut fy = 0.0;
            let mut gy = 0.0;
            for (w, prob) in pmf.iter() {
                let (df, val) = post[(y - w - x_min) as usize];
                fy += prob * df;
                gy += prob * val;
            }
            f.push(fy);
            g.push(gy);
        }

        let band = (p.inv_lower + pmf.max(), upper);
        let at = |y: i64| f[(y - grid_min) as usize];
        let (f_min, f_max) = (at(band.0), at(band.1));
        let (threshold, case) = if -c <= f_min + LEVEL_TOL {
            (band.0, ThresholdCase::Lower)
        } else if -c <= f_max + LEVEL_TOL {
            let m = (band.0..=band.1)
                .find(|&y| at(y) >= -c - LEVEL_TOL)
                .expect("F reaches -c inside the band");
            (m, ThresholdCase::Interior)
        } else {
            (band.1, ThresholdCase::Upper)
        };
        stages.push(StageTable { threshold, case, band, grid_min, f, g });
    }
    stages.reverse();
    Ok(PolicyTable { params: p.clone(), stages })
}

/// Exhaustive Bellman solution on the state grid `[x^L, x^U]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleTables {
    pub inv_lower: i64,
    /// `values[k][x - x^L]` for `k` in `0..=T`.
    pub values: Vec<Vec<f64>>,
    /// `actions[k][x - x^L]` for `k` in `0..T`.
    pub actions: Vec<Vec<i64>>,
}

impl OracleTables {
    pub fn value(&self, k: usize, x: i64) -> f64 {
        self.values[k][(x - self.inv_lower) as usize]
    }

    pub fn action(&self, k: usize, x: i64) -> i64 {
        self.actions[k][(x - self.inv_lower) as usize]
    }
}

const ORACLE_MAX_SUPPORT: usize = 64;
const ORACLE_MAX_HORIZON: usize = 16;
const ORACLE_MAX_WIDTH: i64 = 512;

/// Minimizes `c y + E[f(y - w) + V^{k+1}(y - w)]` over every feasible integer
/// `y` in `[max(x, x^L + D^k), x^U]`. Ties go to the smallest `y`.
pub fn brute_force_dp(inst: &SolverInstance) -> Result<OracleTables, PolicyError> {
    inst.check()?;
    let p = &inst.params;
    let (lo, hi) = (p.inv_lower, p.inv_upper);
    let width = hi - lo + 1;
    let support = (0..inst.horizon).map(|k| inst.demand.stage(k).probs().len()).max().unwrap_or(0);
    if width > ORACLE_MAX_WIDTH || inst.horizon > ORACLE_MAX_HORIZON || support > ORACLE_MAX_SUPPORT {
        return Err(PolicyError::InstanceTooLarge(format!(
            "grid width {width}, horizon {}, support {support}",
            inst.horizon
        )));
    }
    let c = p.production_cost;
    let n = width as usize;
    let mut values = vec![vec![0.0; n]; inst.horizon + 1];
    let mut actions = vec![vec![0i64; n]; inst.horizon];
    for k in (0..inst.horizon).rev() {
        let pmf = inst.demand.stage(k);
        let floor = lo + pmf.max();
        let q: Vec<f64> = (floor..=hi)
            .map(|y| {
                let exp: f64 = pmf
                    .iter()
                    .map(|(w, prob)| {
                        let next = y - w;
                        prob * (penalty(p, next) + values[k + 1][(next - lo) as usize])
                    })
                    .sum();
                c * y as f64 + exp
            })
            .collect();
        for x in lo..=hi {
            let start = x.max(floor);
            let slice = &q[(start - floor) as usize..];
            let best = slice.iter().copied().fold(f64::INFINITY, f64::min);
            let tol = 1e-9 * best.abs().max(1.0);
            let arg = slice.iter().position(|&v| v <= best + tol).unwrap();
            let y = start + arg as i64;
            values[k][(x - lo) as usize] = slice[arg] - c * x as f64;
            actions[k][(x - lo) as usize] = y - x;
        }
    }
    Ok(OracleTables { inv_lower: lo, values, actions })
}
