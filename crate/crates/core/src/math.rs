//! Fee-aware portfolio arithmetic.
//!
//! Conventions: every vector has `m + 1` entries and index 0 is cash. Cash is
//! quoted in itself, so its price and relative price are always exactly 1.
//!
//! A trading period runs as follows. Holdings chosen at the end of the
//! previous period (`w_prev`) drift with prices by the relative price vector
//! `y`, giving the evolved weights `w'` and the pre-fee value
//! `p' = p_prev * (y . w_prev)`. The portfolio is then rebalanced to the target
//! weights, and commissions shrink the value by the transaction remainder
//! factor `mu`, so `p = mu * p'`.

use alloc::vec::Vec;
use thiserror::Error;

/// Tolerance for "weights sum to one".
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
/// Convergence tolerance of the remainder-factor solver.
pub const MU_TOLERANCE: f64 = 1e-12;
/// Iteration cap for both stages of the remainder-factor solver.
pub const MU_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("price at index {index} must be positive and finite, got {value}")]
    NonPositivePrice { index: usize, value: f64 },
    #[error("cash entry must be exactly 1, got {0}")]
    CashNotUnit(f64),
    #[error("invalid portfolio weights: {0}")]
    InvalidWeights(&'static str),
    #[error("portfolio growth y.w must be positive, got {0}")]
    NonPositiveGrowth(f64),
    #[error("invalid commission rates: purchase {purchase}, sell {sell}")]
    InvalidFees { purchase: f64, sell: f64 },
    #[error("portfolio value must be positive and finite, got {0}")]
    NonPositiveValue(f64),
    #[error("transaction remainder did not converge (evolved {evolved:?}, target {target:?})")]
    NonConvergence { evolved: Vec<f64>, target: Vec<f64> },
}

/// Closing prices for one period, cash first.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MathError> {
        check_unit_cash(&values)?;
        Ok(Self(values))
    }

    /// Builds the vector from asset closes, prepending the cash quote.
    pub fn from_closes(closes: &[f64]) -> Result<Self, MathError> {
        let mut values = Vec::with_capacity(closes.len() + 1);
        values.push(1.0);
        values.extend_from_slice(closes);
        Self::new(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Element-wise ratio of consecutive price vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePriceVector(Vec<f64>);

impl RelativePriceVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MathError> {
        check_unit_cash(&values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_unit_cash(values: &[f64]) -> Result<(), MathError> {
    if values.is_empty() {
        return Err(MathError::DimensionMismatch { expected: 1, found: 0 });
    }
    for (index, &value) in values.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(MathError::NonPositivePrice { index, value });
        }
    }
    if values[0] != 1.0 {
        return Err(MathError::CashNotUnit(values[0]));
    }
    Ok(())
}

/// Capital allocation over cash and `m` assets: non-negative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioVector(Vec<f64>);

impl PortfolioVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, MathError> {
        if weights.is_empty() {
            return Err(MathError::InvalidWeights("empty weight vector"));
        }
        let mut sum = 0.0;
        for &w in &weights {
            if !w.is_finite() {
                return Err(MathError::InvalidWeights("non-finite weight"));
            }
            if !(0.0..=1.0).contains(&w) {
                return Err(MathError::InvalidWeights("weight outside [0, 1]"));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(MathError::InvalidWeights("weights do not sum to 1"));
        }
        Ok(Self(weights))
    }

    /// Everything in cash.
    pub fn all_cash(assets: usize) -> Self {
        let mut w = alloc::vec![0.0; assets + 1];
        w[0] = 1.0;
        Self(w)
    }

    pub fn uniform(assets: usize) -> Self {
        let n = assets + 1;
        Self(alloc::vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn cash(&self) -> f64 {
        self.0[0]
    }

    /// Number of risky assets (`m`).
    pub fn assets(&self) -> usize {
        self.0.len() - 1
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Sum of absolute weight differences over every entry, cash included.
    pub fn turnover(&self, other: &PortfolioVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Proportional commission rates for buying and selling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommissionSchedule {
    purchase: f64,
    sell: f64,
}

impl Default for CommissionSchedule {
    /// 0.05% each way, 0.1% in total.
    fn default() -> Self {
        Self { purchase: 0.0005, sell: 0.0005 }
    }
}

impl CommissionSchedule {
    pub fn new(purchase: f64, sell: f64) -> Result<Self, MathError> {
        let ok = |c: f64| c.is_finite() && (0.0..1.0).contains(&c);
        if !ok(purchase) || !ok(sell) || purchase + sell >= 1.0 {
            return Err(MathError::InvalidFees { purchase, sell });
        }
        Ok(Self { purchase, sell })
    }

    pub fn free() -> Self {
        Self { purchase: 0.0, sell: 0.0 }
    }

    /// Splits a total round-trip rate evenly between purchase and sale.
    pub fn symmetric(total: f64) -> Result<Self, MathError> {
        Self::new(total / 2.0, total / 2.0)
    }

    pub fn purchase(&self) -> f64 {
        self.purchase
    }

    pub fn sell(&self) -> f64 {
        self.sell
    }

    /// `c_s + c_p - c_s * c_p`, the cost of selling one unit of value and
    /// buying another asset with the proceeds.
    pub fn round_trip(&self) -> f64 {
        self.sell + self.purchase - self.sell * self.purchase
    }
}

/// Outcome of one trading period.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Transaction remainder factor in (0, 1].
    pub mu: f64,
    /// `y . w_prev`, growth before fees.
    pub gross_growth: f64,
    pub rate_of_return: f64,
    pub log_return: f64,
    pub new_value: f64,
    pub evolved_weights: PortfolioVector,
}

impl StepResult {
    /// `mu * (y . w_prev)`, the net value multiplier of the period.
    pub fn net_growth(&self) -> f64 {
        self.mu * self.gross_growth
    }
}

pub fn relative_prices(prev: &PriceVector, curr: &PriceVector) -> Result<RelativePriceVector, MathError> {
    if prev.len() != curr.len() {
        return Err(MathError::DimensionMismatch { expected: prev.len(), found: curr.len() });
    }
    let values = prev.0.iter().zip(&curr.0).map(|(p, c)| c / p).collect();
    RelativePriceVector::new(values)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weights after prices move, before any rebalancing: `(y * w) / (y . w)`.
pub fn evolve_weights(w_prev: &PortfolioVector, y: &RelativePriceVector) -> Result<PortfolioVector, MathError> {
    if w_prev.len() != y.len() {
        return Err(MathError::DimensionMismatch { expected: w_prev.len(), found: y.len() });
    }
    let growth = dot(&y.0, &w_prev.0);
    if !(growth.is_finite() && growth > 0.0) {
        return Err(MathError::NonPositiveGrowth(growth));
    }
    let weights = y.0.iter().zip(&w_prev.0).map(|(yi, wi)| yi * wi / growth).collect();
    Ok(PortfolioVector(weights))
}

/// Right-hand side of the implicit remainder-factor equation
///
/// `mu = [1 - c_p w'_0 - (c_s + c_p - c_s c_p) sum_i (w'_i - mu w_i)^+] / (1 - c_p w_0)`
///
/// with `w'` the evolved and `w` the target weights.
#[derive(Debug, Clone, Copy)]
struct RemainderEquation<'a> {
    evolved: &'a [f64],
    target: &'a [f64],
    purchase: f64,
    round_trip: f64,
}

impl RemainderEquation<'_> {
    fn rhs(&self, mu: f64) -> f64 {
        let sold: f64 = self.evolved[1..]
            .iter()
            .zip(&self.target[1..])
            .map(|(e, t)| (e - mu * t).max(0.0))
            .sum();
        (1.0 - self.purchase * self.evolved[0] - self.round_trip * sold) / (1.0 - self.purchase * self.target[0])
    }

    fn residual(&self, mu: f64) -> f64 {
        mu - self.rhs(mu)
    }
}

/// Fraction of portfolio value left after rebalancing from `w_evolved` to
/// `w_target` under `fees`.
///
/// The right-hand side is non-decreasing in `mu` with slope below the
/// round-trip rate, so plain fixed-point iteration contracts. Bisection on
/// `mu - rhs(mu)` over `(0, 1]` is kept as a fallback.
pub fn transaction_remainder(
    w_evolved: &PortfolioVector,
    w_target: &PortfolioVector,
    fees: &CommissionSchedule,
) -> Result<f64, MathError> {
    if w_evolved.len() != w_target.len() {
        return Err(MathError::DimensionMismatch { expected: w_evolved.len(), found: w_target.len() });
    }
    let eq = RemainderEquation {
        evolved: &w_evolved.0,
        target: &w_target.0,
        purchase: fees.purchase,
        round_trip: fees.round_trip(),
    };

    let mut mu = 1.0 - (fees.purchase + fees.sell) * w_evolved.turnover(w_target) / 2.0;
    for _ in 0..MU_MAX_ITERATIONS {
        let next = eq.rhs(mu);
        if !next.is_finite() {
            break;
        }
        if (next - mu).abs() < MU_TOLERANCE {
            // rounding can leave the fixed point a hair above one
            let next = next.min(1.0);
            if next > 0.0 {
                return Ok(next);
            }
            break;
        }
        mu = next;
    }

    log::debug!("fixed-point iteration for mu failed to converge, bisecting");
    bisect_remainder(&eq).ok_or_else(|| MathError::NonConvergence {
        evolved: w_evolved.0.clone(),
        target: w_target.0.clone(),
    })
}

fn bisect_remainder(eq: &RemainderEquation<'_>) -> Option<f64> {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    if eq.residual(hi) < 0.0 || eq.residual(lo) > 0.0 {
        return None;
    }
    for _ in 0..MU_MAX_ITERATIONS {
        if hi - lo < MU_TOLERANCE * 1e-3 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eq.residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (hi > 0.0).then_some(hi)
}

/// Advances the portfolio by one period: grow by `y`, then rebalance to
/// `w_target` paying commissions.
pub fn step_portfolio(
    p_prev: f64,
    w_prev: &PortfolioVector,
    w_target: &PortfolioVector,
    y: &RelativePriceVector,
    fees: &CommissionSchedule,
) -> Result<StepResult, MathError> {
    if !(p_prev.is_finite() && p_prev > 0.0) {
        return Err(MathError::NonPositiveValue(p_prev));
    }
    let gross_growth = dot(&y.0, &w_prev.0);
    let evolved_weights = evolve_weights(w_prev, y)?;
    let mu = transaction_remainder(&evolved_weights, w_target, fees)?;
    let net = mu * gross_growth;
    Ok(StepResult {
        mu,
        gross_growth,
        rate_of_return: net - 1.0,
        log_return: libm::log(net),
        new_value: p_prev * net,
        evolved_weights,
    })
}

/// `p0 * prod(mu_t * y_t . w_{t-1})`.
pub fn terminal_value(p0: f64, steps: &[StepResult]) -> f64 {
    steps.iter().fold(p0, |p, s| p * s.net_growth())
}

/// `p0 * exp(sum r_t)`, the log-return form of [`terminal_value`].
pub fn terminal_value_from_log_returns(p0: f64, log_returns: impl IntoIterator<Item = f64>) -> f64 {
    p0 * libm::exp(log_returns.into_iter().sum::<f64>())
}
