//! Model selection (BIC, ICL), clustering and estimation metrics, marginal
//! cutoffs and per-class summaries.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::em::{fit, EmConfig, FitResult};
use crate::emissions::gamma_ln_pdf;
use crate::error::{Error, Result};
use crate::markov::stationary_distribution;
use crate::model::MixtureHmmParams;
use crate::sequences::SegmentedSubject;

/// Free parameter count `(K−1) + K(M + M²) + 3M`.
pub fn nu_k(k: usize, m: usize) -> usize {
    (k - 1) + k * (m + m * m) + 3 * m
}

/// Number of observed time points over all subjects and segments.
pub fn n_observations(data: &[SegmentedSubject]) -> usize {
    data.iter().map(|s| s.n_observations()).sum()
}

/// `loglik − ν/2 · log N`
pub fn bic_value(loglik: f64, nu: usize, n_obs: usize) -> f64 {
    loglik - 0.5 * nu as f64 * (n_obs as f64).ln()
}

/// `Σ_i log τ_{i,ẑ_i}` for the MAP partition ẑ; always ≤ 0.
pub fn map_entropy(tau: &[Vec<f64>], partition: &[usize]) -> f64 {
    tau.iter()
        .zip(partition)
        .map(|(row, &z)| if row[z] > 0.0 { row[z].ln() } else { 0.0 })
        .sum()
}

pub fn bic(fit: &FitResult, data: &[SegmentedSubject]) -> f64 {
    bic_value(fit.loglik, nu_k(fit.params.k(), fit.params.m()), n_observations(data))
}

pub fn icl(fit: &FitResult, data: &[SegmentedSubject]) -> f64 {
    bic(fit, data) + map_entropy(&fit.tau, &fit.partition)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub loglik: f64,
    #[serde(rename = "nu_K")]
    pub nu_k: usize,
    pub bic: f64,
    pub icl: f64,
    pub entropy: f64,
}

impl SelectionRow {
    pub fn from_fit(fit: &FitResult, data: &[SegmentedSubject]) -> Self {
        let nu = nu_k(fit.params.k(), fit.params.m());
        let bic = bic_value(fit.loglik, nu, n_observations(data));
        let entropy = map_entropy(&fit.tau, &fit.partition);
        Self { k: fit.params.k(), loglik: fit.loglik, nu_k: nu, bic, icl: bic + entropy, entropy }
    }
}

/// Result of fitting every candidate K.
#[derive(Debug)]
pub struct Selection {
    /// One entry per requested K, in the requested order.
    pub fits: Vec<(usize, Result<FitResult>)>,
    pub rows: Vec<SelectionRow>,
    pub best_bic: Option<usize>,
    pub best_icl: Option<usize>,
}

impl Selection {
    /// Fit for a given K when it succeeded.
    pub fn fit_for(&self, k: usize) -> Option<&FitResult> {
        self.fits.iter().find(|(kk, _)| *kk == k).and_then(|(_, f)| f.as_ref().ok())
    }

    /// CSV `K,loglik,nu_K,bic,icl,entropy`; K values whose fits failed get
    /// `NA` in every numeric column except `nu_K`.
    pub fn write_csv<W: Write>(&self, m: usize, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["K", "loglik", "nu_K", "bic", "icl", "entropy"])?;
        for (k, f) in &self.fits {
            match f {
                Ok(_) => {
                    let r = self.rows.iter().find(|r| r.k == *k).expect("row for every fit");
                    w.write_record([
                        k.to_string(),
                        r.loglik.to_string(),
                        r.nu_k.to_string(),
                        r.bic.to_string(),
                        r.icl.to_string(),
                        r.entropy.to_string(),
                    ])?;
                }
                Err(_) => {
                    let nu = nu_k(*k, m).to_string();
                    w.write_record([k.to_string(), "NA".into(), nu, "NA".into(), "NA".into(), "NA".into()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn argmax_by(rows: &[SelectionRow], key: impl Fn(&SelectionRow) -> f64) -> Option<usize> {
    let mut best: Option<&SelectionRow> = None;
    for r in rows {
        if best.map_or(true, |b| key(r) > key(b)) {
            best = Some(r);
        }
    }
    best.map(|r| r.k)
}

/// Fits every K in `ks` with fresh restarts and picks the maximizer of each
/// criterion. Ties go to the first K listed.
pub fn select_components(
    data: &[SegmentedSubject],
    ks: &[usize],
    m: usize,
    config: &EmConfig,
) -> Result<Selection> {
    config.validate()?;
    if ks.is_empty() {
        return Err(crate::error::invalid("empty K range"));
    }
    let fits: Vec<(usize, Result<FitResult>)> =
        ks.par_iter().map(|&k| (k, fit(data, k, m, config))).collect();
    for (_, f) in &fits {
        if let Err(e @ Error::InvalidInput(_)) = f {
            return Err(Error::InvalidInput(e.to_string()));
        }
    }
    let rows: Vec<SelectionRow> =
        fits.iter().filter_map(|(_, f)| f.as_ref().ok().map(|f| SelectionRow::from_fit(f, data))).collect();
    let best_bic = argmax_by(&rows, |r| r.bic);
    let best_icl = argmax_by(&rows, |r| r.icl);
    Ok(Selection { fits, rows, best_bic, best_icl })
}

/// Pair-counting adjusted Rand index. Two partitions that both put every
/// item in one cluster (or both in singletons) score 1.
pub fn adjusted_rand_index<A, B>(p1: &[A], p2: &[B]) -> Result<f64>
where
    A: Eq + std::hash::Hash,
    B: Eq + std::hash::Hash,
{
    if p1.len() != p2.len() {
        return Err(Error::DimensionMismatch(format!(
            "partitions have lengths {} and {}",
            p1.len(),
            p2.len()
        )));
    }
    let n = p1.len();
    let choose2 = |x: u64| (x * x.saturating_sub(1) / 2) as f64;
    let mut cells: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (a, b) in p1.iter().zip(p2) {
        *cells.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = cells.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Per-block mean squared errors after label alignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParameterMse {
    pub a: f64,
    pub epsilon: f64,
    pub shape: f64,
    pub rate: f64,
    pub delta: f64,
}

impl ParameterMse {
    fn total(&self, k: usize, m: usize) -> f64 {
        // summed squared error, used only for ranking alignments
        self.a * (k * m * m) as f64
            + (self.epsilon + self.shape + self.rate) * m as f64
            + self.delta * k as f64
    }
}

/// Alignment search is exhaustive up to this many joint permutations.
pub const EXHAUSTIVE_ALIGNMENT_LIMIT: usize = 100_000;

fn block_mse(est: &MixtureHmmParams, truth: &MixtureHmmParams, cp: &[usize], sp: &[usize]) -> ParameterMse {
    let (k, m) = (truth.k(), truth.m());
    let mut a = 0.0;
    for kk in 0..k {
        let ea = &est.trans[cp[kk]];
        for h in 0..m {
            for l in 0..m {
                a += (ea.get(sp[h], sp[l]) - truth.trans[kk].get(h, l)).powi(2);
            }
        }
    }
    let (mut eps, mut shape, mut rate) = (0.0, 0.0, 0.0);
    for h in 0..m {
        let (e, t) = (&est.emissions[sp[h]], &truth.emissions[h]);
        eps += (e.epsilon - t.epsilon).powi(2);
        shape += (e.shape - t.shape).powi(2);
        rate += (e.rate - t.rate).powi(2);
    }
    let delta: f64 = (0..k).map(|kk| (est.delta[cp[kk]] - truth.delta[kk]).powi(2)).sum();
    ParameterMse {
        a: a / (k * m * m) as f64,
        epsilon: eps / m as f64,
        shape: shape / m as f64,
        rate: rate / m as f64,
        delta: delta / k as f64,
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

fn factorial(n: usize) -> usize {
    (1..=n).fold(1usize, |acc, x| acc.saturating_mul(x))
}

/// Greedy assignment: repeatedly match the cheapest remaining pair.
/// `perm[t]` is the estimated label given to true label `t`.
fn greedy_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for _ in 0..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for t in (0..n).filter(|&t| perm[t] == usize::MAX) {
            for e in (0..n).filter(|&e| !used[e]) {
                let c = cost(t, e);
                if best.map_or(true, |(b, _, _)| c < b) {
                    best = Some((c, t, e));
                }
            }
        }
        let (_, t, e) = best.expect("unmatched labels remain");
        perm[t] = e;
        used[e] = true;
    }
    perm
}

/// Squared errors of `est` against `truth` under the (class, state) relabeling
/// that minimizes the total squared error. States are permuted globally,
/// since emissions are shared by every class.
///
/// Returns the block means and the alignment (`perm[i]` is the estimated
/// label matched to true label `i`).
pub fn aligned_parameter_mse(
    est: &MixtureHmmParams,
    truth: &MixtureHmmParams,
) -> Result<(ParameterMse, Vec<usize>, Vec<usize>)> {
    let (k, m) = (truth.k(), truth.m());
    if est.k() != k || est.m() != m {
        return Err(Error::DimensionMismatch(format!(
            "estimate has K={}, M={} but truth has K={k}, M={m}",
            est.k(),
            est.m()
        )));
    }
    if factorial(k).saturating_mul(factorial(m)) <= EXHAUSTIVE_ALIGNMENT_LIMIT {
        let cps = permutations(k);
        let sps = permutations(m);
        let mut best: Option<(f64, ParameterMse, usize, usize)> = None;
        for (si, sp) in sps.iter().enumerate() {
            for (ci, cp) in cps.iter().enumerate() {
                let mse = block_mse(est, truth, cp, sp);
                let total = mse.total(k, m);
                if best.as_ref().map_or(true, |b| total < b.0) {
                    best = Some((total, mse, ci, si));
                }
            }
        }
        let (_, mse, ci, si) = best.expect("at least one permutation");
        return Ok((mse, cps[ci].clone(), sps[si].clone()));
    }
    let sp = greedy_assignment(m, |t, e| {
        let (a, b) = (&truth.emissions[t], &est.emissions[e]);
        (a.epsilon - b.epsilon).powi(2) + (a.shape - b.shape).powi(2) + (a.rate - b.rate).powi(2)
    });
    let cp = greedy_assignment(k, |t, e| {
        let mut c = (truth.delta[t] - est.delta[e]).powi(2);
        for h in 0..m {
            for l in 0..m {
                c += (truth.trans[t].get(h, l) - est.trans[e].get(sp[h], sp[l])).powi(2);
            }
        }
        c
    });
    Ok((block_mse(est, truth, &cp, &sp), cp, sp))
}

/// Boundaries of the marginal most-probable-state map over `y > 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalCutoffs {
    /// Increasing boundaries on `(0, ∞)`.
    pub boundaries: Vec<f64>,
    /// State (0-based) of each interval; one more entry than `boundaries`.
    pub interval_states: Vec<usize>,
    /// State with the largest `P(X = h) ε_h`, to which `y = 0` is assigned.
    pub zero_state: usize,
    /// More crossings than `M − 1`, or the intervals are not in increasing
    /// state order.
    pub irregular: bool,
}

const CUTOFF_GRID_POINTS: usize = 20_000;
const CUTOFF_TOL: f64 = 1e-6;

/// Scans a log-spaced grid for changes of `argmax_h P(X=h)·g(y; h)` and
/// refines each change by bisection on the log-score difference.
pub fn marginal_cutoffs(params: &MixtureHmmParams) -> MarginalCutoffs {
    let m = params.m();
    let w = params.marginal_state_weights();
    let zero_scores: Vec<f64> = (0..m).map(|h| w[h] * params.emissions[h].epsilon).collect();
    let zero_state = crate::inference::argmax_first(&zero_scores);
    if m == 1 {
        return MarginalCutoffs { boundaries: vec![], interval_states: vec![0], zero_state, irregular: false };
    }
    let score = |h: usize, y: f64| {
        let e = &params.emissions[h];
        w[h].ln() + (1.0 - e.epsilon).ln() + gamma_ln_pdf(y, e.shape, e.rate)
    };
    let best_at = |y: f64| {
        let s: Vec<f64> = (0..m).map(|h| score(h, y)).collect();
        crate::inference::argmax_first(&s)
    };
    let max_mean = params
        .emissions
        .iter()
        .map(|e| e.shape / e.rate)
        .fold(0.0, f64::max);
    let min_mean = params
        .emissions
        .iter()
        .map(|e| e.shape / e.rate)
        .fold(f64::INFINITY, f64::min);
    let lo = (min_mean * 1e-8).max(1e-300).ln();
    let hi = (max_mean * 1e3).ln();
    let step = (hi - lo) / (CUTOFF_GRID_POINTS - 1) as f64;
    let mut boundaries = Vec::new();
    let mut states = vec![best_at(lo.exp())];
    let mut prev_y = lo.exp();
    for i in 1..CUTOFF_GRID_POINTS {
        let y = (lo + step * i as f64).exp();
        let cur = best_at(y);
        let last = *states.last().unwrap();
        if cur != last {
            // f > 0 where the old state still wins
            let f = |x: f64| score(last, x) - score(cur, x);
            let (mut a, mut b) = (prev_y, y);
            while b - a > CUTOFF_TOL * a.max(1.0) {
                let mid = 0.5 * (a + b);
                if f(mid) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            boundaries.push(0.5 * (a + b));
            states.push(cur);
        }
        prev_y = y;
    }
    let irregular = boundaries.len() > m - 1 || states.windows(2).any(|s| s[0] >= s[1]);
    MarginalCutoffs { boundaries, interval_states: states, zero_state, irregular }
}

/// Long-run share of time in each state for every class, `stationary(A_k)`.
pub fn mean_time_per_state(params: &MixtureHmmParams) -> Result<Vec<Vec<f64>>> {
    params
        .trans
        .iter()
        .map(|a| stationary_distribution(a).map(|p| p.probs().to_vec()))
        .collect()
}
