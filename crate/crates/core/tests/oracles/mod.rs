//! Naive reference implementations used as test oracles. Written for
//! obviousness, not speed, and sharing no code with the library.

#![allow(dead_code)]

use std::cmp::Ordering;

use rand::Rng;
use sigfolio_core::panel::{Ohlcv, SparsePanel};
use sigfolio_core::signals::OverlapScope;
use sigfolio_core::{Day, PricePanel, SignalRecord};

/// Transaction remainder by plain bisection on `mu - rhs(mu)` over (0, 1].
pub fn mu_bisection(evolved: &[f64], target: &[f64], purchase: f64, sell: f64) -> f64 {
    let round_trip = purchase + sell - purchase * sell;
    let rhs = |mu: f64| {
        let mut positive_part = 0.0;
        for i in 1..evolved.len() {
            let d = evolved[i] - mu * target[i];
            if d > 0.0 {
                positive_part += d;
            }
        }
        (1.0 - purchase * evolved[0] - round_trip * positive_part) / (1.0 - purchase * target[0])
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - rhs(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// GAE straight from its definition: a discounted sum of TD errors up to the
/// end of the episode or fragment.
pub fn gae_brute(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut out = vec![0.0; n];
    for t in 0..n {
        let mut weight = 1.0;
        for k in t..n {
            let next = if dones[k] {
                0.0
            } else if k + 1 < n {
                values[k + 1]
            } else {
                bootstrap
            };
            let delta = rewards[k] + gamma * next - values[k];
            out[t] += weight * delta;
            if dones[k] {
                break;
            }
            weight *= gamma * lambda;
        }
    }
    out
}

/// Forward fill per symbol; a leading gap takes the first real bar. Imputed
/// bars have zero volume.
pub fn fill_missing_naive(sparse: &SparsePanel) -> (Vec<Ohlcv>, Vec<bool>) {
    let t_len = sparse.calendar.len();
    let mut bars = Vec::new();
    let mut mask = Vec::new();
    for s in 0..sparse.symbols.len() {
        for t in 0..t_len {
            if let Some(bar) = sparse.cells[s * t_len + t] {
                bars.push(bar);
                mask.push(false);
                continue;
            }
            let before = (0..t).rev().find_map(|u| sparse.cells[s * t_len + u]);
            let after = (t + 1..t_len).find_map(|u| sparse.cells[s * t_len + u]);
            let source = before.or(after).expect("symbol has a bar");
            bars.push(Ohlcv { volume: 0.0, ..source });
            mask.push(true);
        }
    }
    (bars, mask)
}

/// Mean that returns the common value exactly when all inputs are equal.
pub fn mean_exact(values: &[f64]) -> f64 {
    if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return values[0];
    }
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    sum / values.len() as f64
}

pub fn record_order(a: &SignalRecord, b: &SignalRecord) -> Ordering {
    (&a.symbol, &a.expert_id, a.start_date, a.close_date)
        .cmp(&(&b.symbol, &b.expert_id, b.start_date, b.close_date))
        .then(a.expected_return.total_cmp(&b.expected_return))
        .then(a.expected_risk.total_cmp(&b.expected_risk))
}

fn same_group(a: &SignalRecord, b: &SignalRecord, scope: OverlapScope) -> bool {
    a.symbol == b.symbol && (scope == OverlapScope::AcrossExperts || a.expert_id == b.expert_id)
}

/// Day-by-day overlap resolution: walk every calendar day, collect the
/// covering signals of each group and emit one record per expert for every
/// maximal run of days with the same covering set.
pub fn resolve_overlaps_naive(records: &[SignalRecord], scope: OverlapScope) -> Vec<SignalRecord> {
    let mut sorted = records.to_vec();
    sorted.sort_by(record_order);
    let mut done = vec![false; sorted.len()];
    let mut out = Vec::new();
    for i in 0..sorted.len() {
        if done[i] {
            continue;
        }
        let group: Vec<usize> = (0..sorted.len()).filter(|&j| same_group(&sorted[i], &sorted[j], scope)).collect();
        for &j in &group {
            done[j] = true;
        }
        let first = group.iter().map(|&j| sorted[j].start_date.0).min().unwrap();
        let last = group.iter().map(|&j| sorted[j].close_date.0).max().unwrap();
        let covering = |d: i32| -> Vec<usize> {
            group.iter().copied().filter(|&j| sorted[j].start_date.0 <= d && d <= sorted[j].close_date.0).collect()
        };
        let mut d = first;
        while d <= last {
            let set = covering(d);
            let mut end = d;
            while end < last && covering(end + 1) == set {
                end += 1;
            }
            if !set.is_empty() {
                let ret: Vec<f64> = set.iter().map(|&j| sorted[j].expected_return).collect();
                let risk: Vec<f64> = set.iter().map(|&j| sorted[j].expected_risk).collect();
                let mut experts: Vec<_> = set.iter().map(|&j| sorted[j].expert_id.clone()).collect();
                experts.sort();
                experts.dedup();
                for e in experts {
                    out.push(SignalRecord {
                        expert_id: e,
                        symbol: sorted[i].symbol.clone(),
                        start_date: Day(d),
                        close_date: Day(end),
                        expected_return: mean_exact(&ret),
                        expected_risk: mean_exact(&risk),
                    });
                }
            }
            d = end + 1;
        }
    }
    out.sort_by(record_order);
    out
}

/// `(active, instant_return)` for every (expert, symbol, day), experts in
/// sorted id order, computed by scanning all records for every cell.
pub fn instant_returns_naive(records: &[SignalRecord], panel: &PricePanel, scope: OverlapScope) -> Vec<(bool, f64)> {
    let mut sorted = records.to_vec();
    sorted.sort_by(record_order);
    let mut experts: Vec<_> = sorted.iter().map(|r| r.expert_id.clone()).collect();
    experts.sort();
    experts.dedup();
    let cal = panel.calendar();
    // trading-day span of each record, None when it covers no trading day
    let spans: Vec<Option<(usize, usize, usize)>> = sorted
        .iter()
        .map(|r| {
            let s = panel.symbols().iter().position(|x| *x == r.symbol)?;
            let start = cal.iter().position(|d| *d >= r.start_date)?;
            let close = cal.iter().rposition(|d| *d <= r.close_date)?;
            (start <= close).then_some((s, start, close))
        })
        .collect();
    let mut out = Vec::new();
    for e in &experts {
        for s in 0..panel.assets() {
            for t in 0..panel.days() {
                let covers = |j: usize| matches!(spans[j], Some((sym, a, b)) if sym == s && a <= t && t <= b);
                let own = (0..sorted.len()).any(|j| covers(j) && sorted[j].expert_id == *e);
                if !own {
                    out.push((false, 0.0));
                    continue;
                }
                let values: Vec<f64> = (0..sorted.len())
                    .filter(|&j| covers(j) && (scope == OverlapScope::AcrossExperts || sorted[j].expert_id == *e))
                    .map(|j| {
                        let start = spans[j].unwrap().1;
                        let base = panel.close(s, start);
                        (panel.close(s, t) - base) / base
                    })
                    .collect();
                out.push((true, mean_exact(&values)));
            }
        }
    }
    out
}

/// Uniform-ish random point on the simplex with `n` entries, sometimes with
/// exact zeros.
pub fn random_weights<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { -rng.random_range(1e-9f64..1.0).ln() })
        .collect();
    if w.iter().sum::<f64>() == 0.0 {
        w[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Largest gradient mismatch per parameter group of `snapshot`, comparing
/// `analytic` against central differences of `loss` with step `h`. The
/// mismatch is `|g - fd| / max(|g|, |fd|, floor)`.
pub fn finite_difference_errors(
    snapshot: &sigfolio_core::PolicySnapshot,
    analytic: &[f64],
    loss: impl Fn(&sigfolio_core::PolicySnapshot) -> f64,
    h: f64,
    floor: f64,
) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    for group in snapshot.config().layout() {
        let mut worst = 0.0f64;
        for i in group.offset..group.offset + group.len {
            let mut plus = snapshot.params().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let at = |p: Vec<f64>| loss(&sigfolio_core::PolicySnapshot::new(*snapshot.config(), snapshot.version(), p).unwrap());
            let fd = (at(plus) - at(minus)) / (2.0 * h);
            let diff = (analytic[i] - fd).abs();
            worst = worst.max(diff / analytic[i].abs().max(fd.abs()).max(floor));
        }
        out.push((group.name, worst));
    }
    out
}
