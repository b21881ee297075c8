//! Scaled forward/backward recursions, posterior tables, likelihood and
//! Viterbi decoding.
//!
//! Emission likelihoods at each time are rescaled by their maximum over
//! states before entering the recursions, and the forward vector is
//! renormalized at every step. The log of both factors is kept, so the
//! segment log-likelihood is the sum of per-step log scales. Backward
//! vectors share the forward normalizers, which makes `α̂_t · β̂_t` a
//! probability vector at every `t`.

use rayon::prelude::*;

use crate::emissions::ZigKernel;
use crate::error::{invalid, Error, Result};
use crate::markov::TransitionMatrix;
use crate::model::MixtureHmmParams;
use crate::sequences::SegmentedSubject;
use crate::special::log_sum_exp;

/// Emission likelihoods of one segment, rescaled per time step.
#[derive(Debug, Clone)]
pub(crate) struct EmissionTable {
    m: usize,
    /// `exp(log g(y_t; h) − offset_t)`, row-major (T+1)×M.
    scaled: Vec<f64>,
    /// `max_h log g(y_t; h)`
    offsets: Vec<f64>,
}

impl EmissionTable {
    pub(crate) fn new(segment: &[f64], kernels: &[ZigKernel]) -> Result<Self> {
        let m = kernels.len();
        let mut scaled = vec![0.0; segment.len() * m];
        let mut offsets = Vec::with_capacity(segment.len());
        for (t, &y) in segment.iter().enumerate() {
            let ln_y = if y > 0.0 { y.ln() } else { 0.0 };
            let row = &mut scaled[t * m..(t + 1) * m];
            let mut max = f64::NEG_INFINITY;
            for (slot, k) in row.iter_mut().zip(kernels) {
                *slot = k.ln_density(y, ln_y);
                max = max.max(*slot);
            }
            if max == f64::NEG_INFINITY || max.is_nan() {
                return Err(Error::ZeroLikelihood { t });
            }
            row.iter_mut().for_each(|v| *v = (*v - max).exp());
            offsets.push(max);
        }
        Ok(Self { m, scaled, offsets })
    }

    #[inline]
    fn row(&self, t: usize) -> &[f64] {
        &self.scaled[t * self.m..(t + 1) * self.m]
    }

    fn len(&self) -> usize {
        self.offsets.len()
    }
}

pub(crate) fn kernels(params: &MixtureHmmParams) -> Vec<ZigKernel> {
    params.emissions.iter().map(ZigKernel::new).collect()
}

/// Normalized forward table of one segment under one component.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub m: usize,
    /// `P(X_t = h | y_0..y_t)`, row-major (T+1)×M.
    pub alpha: Vec<f64>,
    /// Per-step normalizer in rescaled-emission units.
    pub scale: Vec<f64>,
    /// `log p(y_t | y_0..y_{t−1})`
    pub log_scale: Vec<f64>,
    pub loglik: f64,
}

impl ForwardPass {
    pub fn alpha_at(&self, t: usize) -> &[f64] {
        &self.alpha[t * self.m..(t + 1) * self.m]
    }
}

/// Scaled backward table; `β̂_T = 1`.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub m: usize,
    pub beta: Vec<f64>,
    /// Likelihood rebuilt from `Σ_h π_h g(y_0) β_0(h)`.
    pub loglik: f64,
}

impl BackwardPass {
    pub fn beta_at(&self, t: usize) -> &[f64] {
        &self.beta[t * self.m..(t + 1) * self.m]
    }
}

fn forward_table(table: &EmissionTable, pi: &[f64], a: &TransitionMatrix) -> Result<ForwardPass> {
    let m = table.m;
    let n = table.len();
    let mut alpha = vec![0.0; n * m];
    let mut scale = Vec::with_capacity(n);
    let mut log_scale = Vec::with_capacity(n);
    let mut loglik = 0.0;
    for t in 0..n {
        let g = table.row(t);
        let (prev, cur) = alpha.split_at_mut(t * m);
        let cur = &mut cur[..m];
        if t == 0 {
            for h in 0..m {
                cur[h] = pi[h] * g[h];
            }
        } else {
            let prev = &prev[(t - 1) * m..];
            cur.iter_mut().for_each(|v| *v = 0.0);
            for (h, &ah) in prev.iter().enumerate() {
                if ah == 0.0 {
                    continue;
                }
                for (v, &p) in cur.iter_mut().zip(a.row(h)) {
                    *v += ah * p;
                }
            }
            for (v, &gh) in cur.iter_mut().zip(g) {
                *v *= gh;
            }
        }
        let c: f64 = cur.iter().sum();
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::ZeroLikelihood { t });
        }
        cur.iter_mut().for_each(|v| *v /= c);
        let ls = c.ln() + table.offsets[t];
        scale.push(c);
        log_scale.push(ls);
        loglik += ls;
    }
    Ok(ForwardPass { m, alpha, scale, log_scale, loglik })
}

fn backward_table(
    table: &EmissionTable,
    fwd: &ForwardPass,
    pi: &[f64],
    a: &TransitionMatrix,
) -> BackwardPass {
    let m = table.m;
    let n = table.len();
    let mut beta = vec![0.0; n * m];
    beta[(n - 1) * m..].iter_mut().for_each(|v| *v = 1.0);
    let mut weighted = vec![0.0; m];
    for t in (0..n - 1).rev() {
        let g = table.row(t + 1);
        let (cur, next) = beta.split_at_mut((t + 1) * m);
        let next = &next[..m];
        for l in 0..m {
            weighted[l] = g[l] * next[l];
        }
        let c = fwd.scale[t + 1];
        let cur = &mut cur[t * m..];
        for h in 0..m {
            let s: f64 = a.row(h).iter().zip(&weighted).map(|(p, w)| p * w).sum();
            cur[h] = s / c;
        }
    }
    let g0 = table.row(0);
    let start: f64 = (0..m).map(|h| pi[h] * g0[h] * beta[h]).sum();
    let loglik = start.ln() + table.offsets[0] + fwd.log_scale[1..].iter().sum::<f64>();
    BackwardPass { m, beta, loglik }
}

fn check_component(params: &MixtureHmmParams, k: usize) -> Result<()> {
    if k >= params.k() {
        return Err(invalid(format!("component {k} out of range for K = {}", params.k())));
    }
    Ok(())
}

fn checked_table(segment: &[f64], params: &MixtureHmmParams) -> Result<EmissionTable> {
    if segment.is_empty() {
        return Err(invalid("segment is empty"));
    }
    if let Some(y) = segment.iter().find(|y| !(y.is_finite() && **y >= 0.0)) {
        return Err(invalid(format!("observation {y} is not a nonnegative number")));
    }
    EmissionTable::new(segment, &kernels(params))
}

/// Forward recursion for one segment under component `k` (0-based).
pub fn forward(segment: &[f64], k: usize, params: &MixtureHmmParams) -> Result<ForwardPass> {
    check_component(params, k)?;
    let table = checked_table(segment, params)?;
    forward_table(&table, params.pis[k].probs(), &params.trans[k])
}

/// Backward recursion for one segment under component `k` (0-based).
pub fn backward(segment: &[f64], k: usize, params: &MixtureHmmParams) -> Result<BackwardPass> {
    check_component(params, k)?;
    let table = checked_table(segment, params)?;
    let pi = params.pis[k].probs();
    let fwd = forward_table(&table, pi, &params.trans[k])?;
    Ok(backward_table(&table, &fwd, pi, &params.trans[k]))
}

/// Posterior quantities for one subject.
#[derive(Debug, Clone)]
pub struct PosteriorTables {
    pub k: usize,
    pub m: usize,
    /// `P(Z = k | y)`
    pub tau: Vec<f64>,
    /// `log p(y | Z = k)` summed over segments.
    pub loglik_by_component: Vec<f64>,
    /// `log p(y)`
    pub loglik: f64,
    /// `gamma[k][s]`: (T_s+1)×M state posteriors under component k.
    pub gamma: Vec<Vec<Vec<f64>>>,
    /// `xi[k][s]`: T_s×M×M pair posteriors, entry `(t−1, h, l)` for `X_{t−1}=h, X_t=l`.
    pub xi: Vec<Vec<Vec<f64>>>,
    /// `eta[s]`: (T_s+1)×M class-averaged state posteriors.
    pub eta: Vec<Vec<f64>>,
}

impl PosteriorTables {
    pub fn gamma(&self, k: usize, s: usize, t: usize, h: usize) -> f64 {
        self.gamma[k][s][t * self.m + h]
    }

    /// Pair posterior for `X_{t−1} = h, X_t = l`, `t ≥ 1`.
    pub fn xi(&self, k: usize, s: usize, t: usize, h: usize, l: usize) -> f64 {
        self.xi[k][s][((t - 1) * self.m + h) * self.m + l]
    }

    pub fn eta(&self, s: usize, t: usize, h: usize) -> f64 {
        self.eta[s][t * self.m + h]
    }
}

fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_w);
    log_w.iter().map(|&l| (l - lse).exp()).collect()
}

fn class_log_joint(params: &MixtureHmmParams, ll: &[f64]) -> Vec<f64> {
    params.delta.iter().zip(ll).map(|(d, l)| d.ln() + l).collect()
}

fn subject_tables(subject: &SegmentedSubject, params: &MixtureHmmParams) -> Result<Vec<EmissionTable>> {
    if subject.segments.is_empty() {
        return Err(invalid(format!("subject {} has no segments", subject.subject_id)));
    }
    let ks = kernels(params);
    subject
        .segments
        .iter()
        .map(|seg| {
            if seg.is_empty() {
                return Err(invalid(format!("subject {} has an empty segment", subject.subject_id)));
            }
            EmissionTable::new(seg, &ks)
        })
        .collect()
}

/// Full posterior tables of one subject.
pub fn posteriors(subject: &SegmentedSubject, params: &MixtureHmmParams) -> Result<PosteriorTables> {
    let (kk, m) = (params.k(), params.m());
    let tables = subject_tables(subject, params)?;
    let mut passes: Vec<Vec<ForwardPass>> = Vec::with_capacity(kk);
    let mut ll = vec![0.0; kk];
    for k in 0..kk {
        let pi = params.pis[k].probs();
        let fwd: Vec<ForwardPass> =
            tables.iter().map(|tb| forward_table(tb, pi, &params.trans[k])).collect::<Result<_>>()?;
        ll[k] = fwd.iter().map(|f| f.loglik).sum();
        passes.push(fwd);
    }
    let log_joint = class_log_joint(params, &ll);
    let loglik = log_sum_exp(&log_joint);
    let tau = normalize_log_weights(&log_joint);

    let mut gamma = Vec::with_capacity(kk);
    let mut xi = Vec::with_capacity(kk);
    let mut eta: Vec<Vec<f64>> = tables.iter().map(|tb| vec![0.0; tb.len() * m]).collect();
    for k in 0..kk {
        let a = &params.trans[k];
        let pi = params.pis[k].probs();
        let mut gk = Vec::with_capacity(tables.len());
        let mut xk = Vec::with_capacity(tables.len());
        for (s, (tb, fwd)) in tables.iter().zip(&passes[k]).enumerate() {
            let bwd = backward_table(tb, fwd, pi, a);
            let n = tb.len();
            let mut g = vec![0.0; n * m];
            for t in 0..n {
                let row = &mut g[t * m..(t + 1) * m];
                let (al, be) = (fwd.alpha_at(t), bwd.beta_at(t));
                for h in 0..m {
                    row[h] = al[h] * be[h];
                }
                let z: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= z);
                for h in 0..m {
                    eta[s][t * m + h] += tau[k] * row[h];
                }
            }
            let mut x = vec![0.0; n.saturating_sub(1) * m * m];
            for t in 1..n {
                let (al, be, gt) = (fwd.alpha_at(t - 1), bwd.beta_at(t), tb.row(t));
                let block = &mut x[(t - 1) * m * m..t * m * m];
                for h in 0..m {
                    for l in 0..m {
                        block[h * m + l] = al[h] * a.get(h, l) * gt[l] * be[l];
                    }
                }
                let z: f64 = block.iter().sum();
                block.iter_mut().for_each(|v| *v /= z);
            }
            gk.push(g);
            xk.push(x);
        }
        gamma.push(gk);
        xi.push(xk);
    }
    Ok(PosteriorTables { k: kk, m, tau, loglik_by_component: ll, loglik, gamma, xi, eta })
}

/// `log p(y | Z = k)` for every component (forward passes only).
pub fn component_logliks(subject: &SegmentedSubject, params: &MixtureHmmParams) -> Result<Vec<f64>> {
    let tables = subject_tables(subject, params)?;
    (0..params.k())
        .map(|k| {
            let pi = params.pis[k].probs();
            tables
                .iter()
                .map(|tb| forward_table(tb, pi, &params.trans[k]).map(|f| f.loglik))
                .sum::<Result<f64>>()
        })
        .collect()
}

/// `log P(Z = k | y)` for every component.
pub fn class_log_posteriors(subject: &SegmentedSubject, params: &MixtureHmmParams) -> Result<Vec<f64>> {
    let joint = class_log_joint(params, &component_logliks(subject, params)?);
    let lse = log_sum_exp(&joint);
    Ok(joint.into_iter().map(|l| l - lse).collect())
}

/// `Σ_i log Σ_k δ_k Π_s p(y_is | k)`
pub fn total_loglik(data: &[SegmentedSubject], params: &MixtureHmmParams) -> Result<f64> {
    let per_subject: Vec<f64> = data
        .par_iter()
        .map(|s| component_logliks(s, params).map(|ll| log_sum_exp(&class_log_joint(params, &ll))))
        .collect::<Result<_>>()?;
    Ok(per_subject.iter().sum())
}

/// Per-subject sums of unweighted posteriors under each component, later
/// weighted by the class posterior.
#[derive(Debug, Clone)]
pub(crate) struct SubjectStats {
    pub tau: Vec<f64>,
    pub loglik: f64,
    /// K×M Σ_t γ
    pub occupancy: Vec<f64>,
    /// K×M Σ_s γ_s(0)
    pub initial: Vec<f64>,
    /// K×M×M Σ_t ξ
    pub transitions: Vec<f64>,
    /// K×M Σ_t γ·1{y=0}
    pub zero: Vec<f64>,
    /// K×M Σ_t γ·1{y>0}, Σ γ·y, Σ γ·log y
    pub pos_weight: Vec<f64>,
    pub pos_sum: Vec<f64>,
    pub pos_sum_log: Vec<f64>,
}

pub(crate) fn subject_stats(
    subject: &SegmentedSubject,
    params: &MixtureHmmParams,
    ks: &[ZigKernel],
) -> Result<SubjectStats> {
    let (kk, m) = (params.k(), params.m());
    let tables: Vec<EmissionTable> =
        subject.segments.iter().map(|seg| EmissionTable::new(seg, ks)).collect::<Result<_>>()?;
    let mut occupancy = vec![0.0; kk * m];
    let mut initial = vec![0.0; kk * m];
    let mut transitions = vec![0.0; kk * m * m];
    let mut zero = vec![0.0; kk * m];
    let mut pos_weight = vec![0.0; kk * m];
    let mut pos_sum = vec![0.0; kk * m];
    let mut pos_sum_log = vec![0.0; kk * m];
    let mut ll = vec![0.0; kk];
    let mut gamma_row = vec![0.0; m];
    let mut weighted = vec![0.0; m];
    let mut beta_next = vec![0.0; m];
    let mut beta_cur = vec![0.0; m];
    for k in 0..kk {
        let a = &params.trans[k];
        let pi = params.pis[k].probs();
        let off = k * m;
        for (tb, seg) in tables.iter().zip(&subject.segments) {
            let fwd = forward_table(tb, pi, a)?;
            ll[k] += fwd.loglik;
            let n = tb.len();
            beta_next.iter_mut().for_each(|v| *v = 1.0);
            for t in (0..n).rev() {
                // γ_t from α̂_t and β̂_t (held in beta_next)
                let al = fwd.alpha_at(t);
                let mut z = 0.0;
                for h in 0..m {
                    gamma_row[h] = al[h] * beta_next[h];
                    z += gamma_row[h];
                }
                let y = seg[t];
                let ln_y = if y > 0.0 { y.ln() } else { 0.0 };
                for h in 0..m {
                    let g = gamma_row[h] / z;
                    occupancy[off + h] += g;
                    if y == 0.0 {
                        zero[off + h] += g;
                    } else {
                        pos_weight[off + h] += g;
                        pos_sum[off + h] += g * y;
                        pos_sum_log[off + h] += g * ln_y;
                    }
                    if t == 0 {
                        initial[off + h] += g;
                    }
                }
                if t == 0 {
                    break;
                }
                // ξ_t and β̂_{t−1}
                let gt = tb.row(t);
                for l in 0..m {
                    weighted[l] = gt[l] * beta_next[l];
                }
                let prev = fwd.alpha_at(t - 1);
                let c = fwd.scale[t];
                let mut zx = 0.0;
                for h in 0..m {
                    let mut s = 0.0;
                    for (p, w) in a.row(h).iter().zip(&weighted) {
                        s += p * w;
                    }
                    beta_cur[h] = s / c;
                    zx += prev[h] * s;
                }
                let block = &mut transitions[k * m * m..(k + 1) * m * m];
                for h in 0..m {
                    let ph = prev[h] / zx;
                    if ph == 0.0 {
                        continue;
                    }
                    for (l, (&p, &w)) in a.row(h).iter().zip(&weighted).enumerate() {
                        block[h * m + l] += ph * p * w;
                    }
                }
                std::mem::swap(&mut beta_next, &mut beta_cur);
            }
        }
    }
    let log_joint = class_log_joint(params, &ll);
    let loglik = log_sum_exp(&log_joint);
    let tau = normalize_log_weights(&log_joint);
    Ok(SubjectStats { tau, loglik, occupancy, initial, transitions, zero, pos_weight, pos_sum, pos_sum_log })
}

/// Most probable state path of one segment under component `k`.
/// Ties go to the lower state index.
pub fn viterbi(segment: &[f64], k: usize, params: &MixtureHmmParams) -> Result<Vec<usize>> {
    check_component(params, k)?;
    let table = checked_table(segment, params)?;
    let m = params.m();
    let n = segment.len();
    let log_a: Vec<f64> = params.trans[k].as_slice().iter().map(|p| p.ln()).collect();
    let pi = params.pis[k].probs();
    let log_g = |t: usize, h: usize| table.row(t)[h].ln();
    let mut score: Vec<f64> = (0..m).map(|h| pi[h].ln() + log_g(0, h)).collect();
    let mut back = vec![0usize; n * m];
    let mut next = vec![0.0; m];
    for t in 1..n {
        for l in 0..m {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for h in 0..m {
                let v = score[h] + log_a[h * m + l];
                if v > best {
                    best = v;
                    arg = h;
                }
            }
            back[t * m + l] = arg;
            next[l] = best + log_g(t, l);
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut last = 0;
    let mut best = f64::NEG_INFINITY;
    for (h, &v) in score.iter().enumerate() {
        if v > best {
            best = v;
            last = h;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::ZeroLikelihood { t: n - 1 });
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t * m + path[t]];
    }
    Ok(path)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_first(xs: &[f64]) -> usize {
    let mut arg = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[arg] {
            arg = i;
        }
    }
    arg
}

/// MAP class, Viterbi paths under that class and state posteriors η.
#[derive(Debug, Clone)]
pub struct DecodedSubject {
    pub map_class: usize,
    pub tau: Vec<f64>,
    pub paths: Vec<Vec<usize>>,
    pub eta: Vec<Vec<f64>>,
}

pub fn decode_subject(subject: &SegmentedSubject, params: &MixtureHmmParams) -> Result<DecodedSubject> {
    let post = posteriors(subject, params)?;
    let map_class = argmax_first(&post.tau);
    let paths = subject
        .segments
        .iter()
        .map(|seg| viterbi(seg, map_class, params))
        .collect::<Result<_>>()?;
    Ok(DecodedSubject { map_class, tau: post.tau, paths, eta: post.eta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::ZigParams;
    use crate::markov::StationaryLaw;

    fn two_by_two(delta: f64) -> MixtureHmmParams {
        MixtureHmmParams::new(
            vec![delta, 1.0 - delta],
            vec![StationaryLaw::uniform(2), StationaryLaw::uniform(2)],
            vec![
                TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap(),
                TransitionMatrix::new(vec![vec![0.1, 0.9], vec![0.9, 0.1]]).unwrap(),
            ],
            vec![ZigParams::new(0.1, 1.0, 1.0).unwrap(), ZigParams::new(0.1, 5.0, 1.0).unwrap()],
        )
        .unwrap()
    }

    fn single_state(eps: f64, shape: f64, rate: f64) -> MixtureHmmParams {
        MixtureHmmParams::new(
            vec![1.0],
            vec![StationaryLaw::uniform(1)],
            vec![TransitionMatrix::identity(1)],
            vec![ZigParams::new(eps, shape, rate).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn single_state_collapse() {
        let p = single_state(0.0, 2.0, 1.5);
        let f = forward(&[0.7], 0, &p).unwrap();
        let expected = crate::emissions::gamma_ln_pdf(0.7, 2.0, 1.5);
        assert!((f.loglik - expected).abs() < 1e-14);
        let b = backward(&[0.7], 0, &p).unwrap();
        assert_eq!(b.beta, vec![1.0]);
        assert_eq!(viterbi(&[0.7, 3.0, 0.1], 0, &p).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn all_zero_segment_with_atom_state() {
        let p = MixtureHmmParams::new(
            vec![1.0],
            vec![StationaryLaw::uniform(2)],
            vec![TransitionMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()],
            vec![ZigParams::new(1.0, 1.0, 1.0).unwrap(), ZigParams::new(0.0, 2.0, 1.0).unwrap()],
        )
        .unwrap();
        let f = forward(&[0.0; 20], 0, &p).unwrap();
        assert!(f.loglik.is_finite());
        assert!((f.loglik - 20.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn impossible_emission_is_reported() {
        let p = single_state(0.0, 2.0, 1.0);
        assert!(matches!(forward(&[1.0, 0.0, 1.0], 0, &p), Err(Error::ZeroLikelihood { t: 1 })));
        // reachable-state failure: state 2 emits only zeros but state 1 cannot move there
        let q = MixtureHmmParams::new(
            vec![1.0],
            vec![StationaryLaw::new(vec![1.0, 0.0]).unwrap()],
            vec![TransitionMatrix::identity(2)],
            vec![ZigParams::new(0.0, 1.0, 1.0).unwrap(), ZigParams::new(1.0, 1.0, 1.0).unwrap()],
        )
        .unwrap();
        assert!(matches!(forward(&[1.0, 0.0], 0, &q), Err(Error::ZeroLikelihood { t: 1 })));
    }

    #[test]
    fn rejects_bad_segments() {
        let p = two_by_two(0.5);
        assert!(forward(&[], 0, &p).is_err());
        assert!(forward(&[1.0, -1.0], 0, &p).is_err());
        assert!(forward(&[1.0], 2, &p).is_err());
    }

    #[test]
    fn forward_backward_agree() {
        let p = two_by_two(0.4);
        let seg = [0.0, 0.3, 4.2, 5.5, 0.0, 1.1, 7.9];
        for k in 0..2 {
            let f = forward(&seg, k, &p).unwrap();
            let b = backward(&seg, k, &p).unwrap();
            assert!((f.loglik - b.loglik).abs() <= 1e-10 * f.loglik.abs());
            for t in 0..seg.len() {
                let s: f64 = f.alpha_at(t).iter().zip(b.beta_at(t)).map(|(x, y)| x * y).sum();
                assert!((s - 1.0).abs() < 1e-10, "t={t} sum={s}");
            }
        }
    }

    #[test]
    fn identical_components_keep_prior() {
        let base = two_by_two(0.3);
        let p = MixtureHmmParams::new(
            vec![0.3, 0.7],
            vec![base.pis[0].clone(), base.pis[0].clone()],
            vec![base.trans[0].clone(), base.trans[0].clone()],
            base.emissions.clone(),
        )
        .unwrap();
        let subj = SegmentedSubject::from_segments("a", vec![vec![0.1, 3.0, 0.0, 2.2], vec![4.0]]).unwrap();
        let post = posteriors(&subj, &p).unwrap();
        assert!((post.tau[0] - 0.3).abs() < 1e-12);
        assert!((post.tau[1] - 0.7).abs() < 1e-12);
        let d = decode_subject(&subj, &p).unwrap();
        assert_eq!(d.map_class, 1);
    }

    #[test]
    fn tie_goes_to_first_class() {
        let base = two_by_two(0.5);
        let p = MixtureHmmParams::new(
            vec![0.5, 0.5],
            vec![base.pis[0].clone(), base.pis[0].clone()],
            vec![base.trans[0].clone(), base.trans[0].clone()],
            base.emissions.clone(),
        )
        .unwrap();
        let subj = SegmentedSubject::from_segments("a", vec![vec![1.0, 2.0]]).unwrap();
        let d = decode_subject(&subj, &p).unwrap();
        assert_eq!(d.tau[0], d.tau[1]);
        assert_eq!(d.map_class, 0);
        assert_eq!(argmax_first(&[0.2, 0.5, 0.5]), 1);
    }

    #[test]
    fn single_component_tau_is_one() {
        let p = single_state(0.2, 2.0, 1.0);
        let subj = SegmentedSubject::from_segments("a", vec![vec![0.0, 1.0, 2.0]]).unwrap();
        let post = posteriors(&subj, &p).unwrap();
        assert_eq!(post.tau, vec![1.0]);
        let seg_ll = forward(&[0.0, 1.0, 2.0], 0, &p).unwrap().loglik;
        assert!((total_loglik(&[subj], &p).unwrap() - seg_ll).abs() < 1e-12);
    }

    #[test]
    fn forced_path_with_deterministic_rows() {
        let p = MixtureHmmParams::new(
            vec![1.0],
            vec![StationaryLaw::new(vec![1.0, 0.0, 0.0]).unwrap()],
            vec![TransitionMatrix::new(vec![
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0],
            ])
            .unwrap()],
            vec![
                ZigParams::new(0.2, 1.0, 1.0).unwrap(),
                ZigParams::new(0.2, 2.0, 1.0).unwrap(),
                ZigParams::new(0.2, 3.0, 1.0).unwrap(),
            ],
        )
        .unwrap();
        let path = viterbi(&[9.0, 0.1, 0.5, 9.0, 0.0], 0, &p).unwrap();
        assert_eq!(path, vec![0, 1, 2, 0, 1]);
    }

    #[test]
    fn viterbi_ties_prefer_lower_state() {
        let p = MixtureHmmParams::new(
            vec![1.0],
            vec![StationaryLaw::uniform(2)],
            vec![TransitionMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()],
            vec![ZigParams::new(0.3, 2.0, 1.0).unwrap(), ZigParams::new(0.3, 2.0, 1.0).unwrap()],
        )
        .unwrap();
        assert_eq!(viterbi(&[1.0, 0.0, 2.0], 0, &p).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn long_sequences_do_not_underflow() {
        let p = two_by_two(0.5);
        let mut seg = Vec::with_capacity(100_000);
        let mut x = 0usize;
        for t in 0..100_000u64 {
            if t % 7 == 0 {
                x = 1 - x;
            }
            seg.push(if x == 0 { 0.5 + (t % 3) as f64 * 0.1 } else { 5.0 + (t % 5) as f64 });
        }
        let subj = SegmentedSubject::from_segments("long", vec![seg.clone()]).unwrap();
        let ll = total_loglik(&[subj], &p).unwrap();
        assert!(ll.is_finite());
        let f = forward(&seg, 0, &p).unwrap();
        assert!(f.loglik.is_finite() && f.loglik < 0.0);
        let path = viterbi(&seg, 0, &p).unwrap();
        assert_eq!(path.len(), seg.len());
    }

    #[test]
    fn streaming_stats_match_tables() {
        let p = two_by_two(0.35);
        let subj = SegmentedSubject::from_segments(
            "a",
            vec![vec![0.0, 0.4, 6.1, 3.3, 0.0], vec![2.0, 0.0], vec![5.0]],
        )
        .unwrap();
        let post = posteriors(&subj, &p).unwrap();
        let st = subject_stats(&subj, &p, &kernels(&p)).unwrap();
        assert!((st.loglik - post.loglik).abs() < 1e-12);
        for k in 0..2 {
            assert!((st.tau[k] - post.tau[k]).abs() < 1e-14);
            for h in 0..2 {
                let occ: f64 = (0..3)
                    .map(|s| (0..subj.segments[s].len()).map(|t| post.gamma(k, s, t, h)).sum::<f64>())
                    .sum();
                assert!((st.occupancy[k * 2 + h] - occ).abs() < 1e-12);
                for l in 0..2 {
                    let pairs: f64 = (0..3)
                        .map(|s| (1..subj.segments[s].len()).map(|t| post.xi(k, s, t, h, l)).sum::<f64>())
                        .sum();
                    assert!((st.transitions[k * 4 + h * 2 + l] - pairs).abs() < 1e-12);
                }
            }
        }
    }
}
