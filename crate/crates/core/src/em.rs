//! EM estimation with random restarts.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emissions::{gamma_mle_from_sums, GammaSums, ZigParams};
use crate::error::{invalid, Error, Result};
use crate::inference::{argmax_first, kernels, subject_stats};
use crate::markov::{stationary_distribution, StationaryLaw, TransitionMatrix};
use crate::model::MixtureHmmParams;
use crate::rng::stream_rng;
use crate::sequences::SegmentedSubject;

/// Smallest transition probability kept by the M-step.
pub const TRANSITION_FLOOR: f64 = 1e-10;

/// Zero share given to every state except the lowest at initialization.
const INIT_EPSILON_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop when `|ℓ_new − ℓ_old| ≤ rel_tol · |ℓ_old|`.
    pub rel_tol: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Set `π_k` to the stationary law of `A_k` after every M-step instead of
    /// the free multinomial update.
    pub stationary_init: bool,
    pub min_state_occupancy: f64,
    #[serde(default)]
    pub init: InitStrategy,
}

/// How each restart draws its starting point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Quantile emissions, random diagonally dominant chains, uniform `δ`.
    #[default]
    Random,
    /// Quantile emissions, chains from k-means++ clusters of the subjects'
    /// empirical transition frequencies. Suited to long sequences, where a
    /// single random chain tends to capture every subject.
    SubjectClusters,
}

impl InitStrategy {
    pub fn name(self) -> &'static str {
        match self {
            InitStrategy::Random => "random",
            InitStrategy::SubjectClusters => "subject_clusters",
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random" => Ok(InitStrategy::Random),
            "subject_clusters" | "clusters" => Ok(InitStrategy::SubjectClusters),
            _ => Err(invalid(format!("unknown init strategy '{s}' (random, subject_clusters)"))),
        }
    }
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-8,
            restarts: 50,
            seed: 0,
            stationary_init: true,
            min_state_occupancy: 1e-6,
            init: InitStrategy::Random,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(invalid("rel_tol must be positive"));
        }
        if self.restarts == 0 {
            return Err(invalid("restarts must be at least 1"));
        }
        if !(self.min_state_occupancy >= 0.0) {
            return Err(invalid("min_state_occupancy must be nonnegative"));
        }
        Ok(())
    }
}

/// Expected sufficient statistics of one E-step.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    pub k: usize,
    pub m: usize,
    pub n_subjects: usize,
    /// `Σ_i τ_ik`
    pub n_k: Vec<f64>,
    /// K×M expected occupancy `Σ_i τ_ik Σ_s Σ_t γ`
    pub n_kh: Vec<f64>,
    /// K×M expected segment-start occupancy
    pub n_kh0: Vec<f64>,
    /// K×M×M expected transition counts
    pub n_khl: Vec<f64>,
    /// Expected occupancy of each state over all classes.
    pub occupancy: Vec<f64>,
    /// `w_h`: expected number of zeros emitted by state h.
    pub zero_weight: Vec<f64>,
    /// Weighted sums over positive observations, one per state.
    pub positive: Vec<GammaSums>,
    pub loglik: f64,
    /// n×K class posteriors.
    pub tau: Vec<Vec<f64>>,
}

impl SufficientStats {
    pub fn n_kh(&self, k: usize, h: usize) -> f64 {
        self.n_kh[k * self.m + h]
    }

    pub fn n_khl(&self, k: usize, h: usize, l: usize) -> f64 {
        self.n_khl[(k * self.m + h) * self.m + l]
    }
}

/// E-step over all subjects. Subjects are processed in parallel and reduced
/// in input order, so the result does not depend on the worker count.
pub fn e_step(data: &[SegmentedSubject], params: &MixtureHmmParams) -> Result<SufficientStats> {
    if data.is_empty() {
        return Err(invalid("no subjects"));
    }
    let (kk, m) = (params.k(), params.m());
    let ks = kernels(params);
    let per_subject: Vec<_> = data
        .par_iter()
        .map(|s| subject_stats(s, params, &ks))
        .collect::<Result<_>>()?;
    let mut st = SufficientStats {
        k: kk,
        m,
        n_subjects: data.len(),
        n_k: vec![0.0; kk],
        n_kh: vec![0.0; kk * m],
        n_kh0: vec![0.0; kk * m],
        n_khl: vec![0.0; kk * m * m],
        occupancy: vec![0.0; m],
        zero_weight: vec![0.0; m],
        positive: vec![GammaSums::default(); m],
        loglik: 0.0,
        tau: Vec::with_capacity(data.len()),
    };
    for s in per_subject {
        st.loglik += s.loglik;
        for k in 0..kk {
            let w = s.tau[k];
            st.n_k[k] += w;
            for h in 0..m {
                let i = k * m + h;
                st.n_kh[i] += w * s.occupancy[i];
                st.n_kh0[i] += w * s.initial[i];
                st.occupancy[h] += w * s.occupancy[i];
                st.zero_weight[h] += w * s.zero[i];
                let p = &mut st.positive[h];
                p.weight += w * s.pos_weight[i];
                p.sum += w * s.pos_sum[i];
                p.sum_log += w * s.pos_sum_log[i];
            }
            for (dst, src) in st.n_khl[k * m * m..(k + 1) * m * m]
                .iter_mut()
                .zip(&s.transitions[k * m * m..(k + 1) * m * m])
            {
                *dst += w * src;
            }
        }
        st.tau.push(s.tau);
    }
    Ok(st)
}

/// M-step. `previous` supplies starting shapes for the gamma solver.
pub fn m_step(
    stats: &SufficientStats,
    config: &EmConfig,
    previous: Option<&MixtureHmmParams>,
) -> Result<MixtureHmmParams> {
    let (kk, m) = (stats.k, stats.m);
    let n = stats.n_subjects as f64;
    let floor = config.min_state_occupancy;
    let mut delta = Vec::with_capacity(kk);
    for k in 0..kk {
        if !(stats.n_k[k] > floor) {
            return Err(Error::Degenerate(format!(
                "class {} has expected size {:e}",
                k + 1,
                stats.n_k[k]
            )));
        }
        delta.push(stats.n_k[k] / n);
    }
    let total: f64 = delta.iter().sum();
    delta.iter_mut().for_each(|d| *d /= total);

    let mut trans = Vec::with_capacity(kk);
    let mut pis = Vec::with_capacity(kk);
    for k in 0..kk {
        for h in 0..m {
            if !(stats.n_kh(k, h) > floor) {
                return Err(Error::Degenerate(format!(
                    "state {} of class {} has expected occupancy {:e}",
                    h + 1,
                    k + 1,
                    stats.n_kh(k, h)
                )));
            }
        }
        let mut rows = vec![0.0; m * m];
        for h in 0..m {
            let row = &mut rows[h * m..(h + 1) * m];
            let out: f64 = (0..m).map(|l| stats.n_khl(k, h, l)).sum();
            if out > 0.0 {
                for l in 0..m {
                    row[l] = (stats.n_khl(k, h, l) / out).max(TRANSITION_FLOOR);
                }
            } else {
                // state only ever seen at a segment end
                row.iter_mut().for_each(|v| *v = 1.0);
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let a = TransitionMatrix::from_flat(m, rows)?;
        let (a, pi) = if config.stationary_init {
            let n0 = &stats.n_kh0[k * m..(k + 1) * m];
            let counts = &stats.n_khl[k * m * m..(k + 1) * m * m];
            match previous {
                Some(prev) => constrained_update(a, &prev.trans[k], n0, counts)?,
                None => {
                    let pi = stationary_distribution(&a)?;
                    (a, pi)
                }
            }
        } else {
            let starts: Vec<f64> = stats.n_kh0[k * m..(k + 1) * m].to_vec();
            let s: f64 = starts.iter().sum();
            if !(s > 0.0) {
                return Err(Error::Degenerate(format!("class {} has no segment starts", k + 1)));
            }
            (a, StationaryLaw::new(starts.into_iter().map(|v| v / s).collect())?)
        };
        trans.push(a);
        pis.push(pi);
    }

    let mut emissions = Vec::with_capacity(m);
    for h in 0..m {
        let occ = stats.occupancy[h];
        if !(occ > floor) {
            return Err(Error::Degenerate(format!("state {} has expected occupancy {occ:e}", h + 1)));
        }
        let eps = stats.zero_weight[h] / occ;
        let init = previous.map(|p| p.emissions[h].shape);
        let (a, b) = gamma_mle_from_sums(&stats.positive[h], init).map_err(|e| {
            Error::Degenerate(format!("state {}: {e}", h + 1))
        })?;
        emissions.push(ZigParams::clamped(eps, a, b));
    }
    MixtureHmmParams::new(delta, pis, trans, emissions)
}

/// Expected complete-data objective of one class when the initial law is
/// tied to the transition matrix.
fn class_objective(a: &TransitionMatrix, pi: &StationaryLaw, n0: &[f64], counts: &[f64]) -> f64 {
    let start: f64 = n0.iter().zip(pi.probs()).filter(|(n, _)| **n > 0.0).map(|(n, p)| n * p.ln()).sum();
    let moves: f64 = counts
        .iter()
        .zip(a.as_slice())
        .filter(|(n, _)| **n > 0.0)
        .map(|(n, p)| n * p.ln())
        .sum();
    start + moves
}

/// With `π = stationary(A)` the transition update has no closed form. The
/// frequency estimate maximizes the transition part only, so it is accepted
/// when the full objective does not drop; otherwise the step toward it is
/// halved. Keeping the objective nondecreasing preserves the EM ascent
/// property.
fn constrained_update(
    target: TransitionMatrix,
    old: &TransitionMatrix,
    n0: &[f64],
    counts: &[f64],
) -> Result<(TransitionMatrix, StationaryLaw)> {
    let old_pi = stationary_distribution(old)?;
    let base = class_objective(old, &old_pi, n0, counts);
    let mut step = 1.0;
    for _ in 0..40 {
        let cand = if step == 1.0 {
            target.clone()
        } else {
            let mixed: Vec<f64> = old
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(o, t)| (1.0 - step) * o + step * t)
                .collect();
            TransitionMatrix::from_weights(old.size(), mixed)?
        };
        let pi = stationary_distribution(&cand)?;
        if class_objective(&cand, &pi, n0, counts) >= base {
            return Ok((cand, pi));
        }
        step *= 0.5;
    }
    Ok((old.clone(), old_pi))
}

/// Random starting point: quantile-binned emissions, diagonally dominant
/// random transition matrices, uniform class weights.
pub fn initialize<R: Rng + ?Sized>(
    data: &[SegmentedSubject],
    k: usize,
    m: usize,
    rng: &mut R,
) -> Result<MixtureHmmParams> {
    check_sizes(data, k, m)?;
    let emissions = initial_emissions(data, m)?;
    let mut trans = Vec::with_capacity(k);
    let mut pis = Vec::with_capacity(k);
    for _ in 0..k {
        let a = random_transition(m, rng)?;
        pis.push(stationary_distribution(&a)?);
        trans.push(a);
    }
    MixtureHmmParams::new(vec![1.0 / k as f64; k], pis, trans, emissions)
}

fn check_sizes(data: &[SegmentedSubject], k: usize, m: usize) -> Result<()> {
    if k == 0 || m == 0 {
        return Err(invalid("K and M must be at least 1"));
    }
    if data.len() < k {
        return Err(invalid(format!("{} subjects cannot support {k} classes", data.len())));
    }
    Ok(())
}

/// Moment-matched gamma per quantile bin of the pooled positive values.
/// Zeros are attributed to the lowest bin.
fn initial_emissions(data: &[SegmentedSubject], m: usize) -> Result<Vec<ZigParams>> {
    let mut positives: Vec<f64> = Vec::new();
    let mut zeros = 0usize;
    for s in data {
        for seg in &s.segments {
            for &y in seg {
                if y > 0.0 {
                    positives.push(y);
                } else {
                    zeros += 1;
                }
            }
        }
    }
    if positives.len() < 2 * m {
        return Err(invalid(format!(
            "{} positive observations are too few for {m} states",
            positives.len()
        )));
    }
    positives.sort_by(f64::total_cmp);
    let np = positives.len();
    let mut emissions = Vec::with_capacity(m);
    for h in 0..m {
        let bin = &positives[h * np / m..(h + 1) * np / m];
        let len = bin.len() as f64;
        let mean = bin.iter().sum::<f64>() / len;
        let var = bin.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / len;
        let (shape, rate) = if var > 0.0 { (mean * mean / var, mean / var) } else { (1.0, 1.0 / mean) };
        let eps = if h == 0 {
            zeros as f64 / (zeros as f64 + len)
        } else {
            INIT_EPSILON_FLOOR
        };
        emissions.push(ZigParams::clamped(eps.max(INIT_EPSILON_FLOOR), shape, rate));
    }
    Ok(emissions)
}

const KMEANS_ROUNDS: usize = 20;

/// Starting point from a partition of the subjects. Observations are
/// labelled with their most likely state under the quantile emissions, each
/// subject is summarized by its row-normalized transition frequencies, and
/// those summaries are clustered by k-means with k-means++ seeding. Each
/// class chain is the pooled transition count of its cluster plus one, and
/// `δ` the cluster shares.
pub fn initialize_clustered<R: Rng + ?Sized>(
    data: &[SegmentedSubject],
    k: usize,
    m: usize,
    rng: &mut R,
) -> Result<MixtureHmmParams> {
    check_sizes(data, k, m)?;
    let emissions = initial_emissions(data, m)?;
    let label = |y: f64| {
        let scores: Vec<f64> =
            emissions.iter().map(|e| e.log_density(y).unwrap_or(f64::NEG_INFINITY)).collect();
        argmax_first(&scores)
    };
    let counts: Vec<Vec<f64>> = data
        .par_iter()
        .map(|s| {
            let mut c = vec![0.0; m * m];
            for seg in &s.segments {
                let states: Vec<usize> = seg.iter().map(|&y| label(y)).collect();
                for w in states.windows(2) {
                    c[w[0] * m + w[1]] += 1.0;
                }
            }
            c
        })
        .collect();
    let features: Vec<Vec<f64>> = counts
        .iter()
        .map(|c| {
            let mut f = c.clone();
            for row in f.chunks_mut(m) {
                let total: f64 = row.iter().sum();
                let fill = 1.0 / m as f64;
                row.iter_mut().for_each(|v| *v = if total > 0.0 { *v / total } else { fill });
            }
            f
        })
        .collect();
    let assignment = kmeans(&features, k, rng);
    let mut pooled = vec![vec![1.0; m * m]; k];
    let mut sizes = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        sizes[c] += 1;
        pooled[c].iter_mut().zip(&counts[i]).for_each(|(p, x)| *p += x);
    }
    let mut trans = Vec::with_capacity(k);
    let mut pis = Vec::with_capacity(k);
    for weights in pooled {
        let a = TransitionMatrix::from_weights(m, weights)?;
        pis.push(stationary_distribution(&a)?);
        trans.push(a);
    }
    let delta = sizes.iter().map(|&s| s as f64 / data.len() as f64).collect();
    MixtureHmmParams::new(delta, pis, trans, emissions)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd iterations from k-means++ seeds. Every cluster keeps at least one
/// point: an emptied cluster takes the point farthest from its center.
fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    let mut centers = vec![points[rng.gen_range(0..n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> =
            points.iter().map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            d.iter()
                .position(|&x| {
                    u -= x;
                    u <= 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[next].clone());
    }
    let nearest = |p: &[f64], centers: &[Vec<f64>]| {
        let d: Vec<f64> = centers.iter().map(|c| -sq_dist(p, c)).collect();
        argmax_first(&d)
    };
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..KMEANS_ROUNDS {
        let mut sizes = vec![0usize; k];
        assignment.iter().for_each(|&c| sizes[c] += 1);
        for c in 0..k {
            if sizes[c] == 0 {
                let far = (0..n)
                    .filter(|&i| sizes[assignment[i]] > 1)
                    .max_by(|&i, &j| {
                        sq_dist(&points[i], &centers[assignment[i]])
                            .total_cmp(&sq_dist(&points[j], &centers[assignment[j]]))
                    })
                    .expect("n >= k leaves a cluster with two points");
                sizes[assignment[far]] -= 1;
                assignment[far] = c;
                sizes[c] = 1;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assignment).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            for (d, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let mut sizes = vec![0usize; k];
    assignment.iter().for_each(|&c| sizes[c] += 1);
    for c in 0..k {
        if sizes[c] == 0 {
            let donor = (0..n).find(|&i| sizes[assignment[i]] > 1).expect("n >= k");
            sizes[assignment[donor]] -= 1;
            assignment[donor] = c;
            sizes[c] = 1;
        }
    }
    assignment
}

fn random_transition<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<TransitionMatrix> {
    if m == 1 {
        return Ok(TransitionMatrix::identity(1));
    }
    let mut rows = vec![0.0; m * m];
    for h in 0..m {
        let diag = rng.gen_range(0.6..0.95);
        let draws: Vec<f64> = (0..m - 1).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        let mut it = draws.iter();
        for l in 0..m {
            rows[h * m + l] = if l == h {
                diag
            } else {
                ((1.0 - diag) * it.next().unwrap() / total).max(TRANSITION_FLOOR)
            };
        }
        let s: f64 = rows[h * m..(h + 1) * m].iter().sum();
        rows[h * m..(h + 1) * m].iter_mut().for_each(|v| *v /= s);
    }
    TransitionMatrix::from_flat(m, rows)
}

/// Outcome of one EM run from one starting point.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub params: MixtureHmmParams,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub tau: Vec<Vec<f64>>,
    pub n_iterations: usize,
    pub converged: bool,
    /// Largest relative loglik decrease between consecutive iterations.
    pub max_relative_decrease: f64,
}

/// Iterates EM from `start` until the relative loglik change drops below
/// `rel_tol` or `max_iter` M-steps have been taken.
pub fn run_em(
    data: &[SegmentedSubject],
    start: MixtureHmmParams,
    config: &EmConfig,
) -> Result<RunResult> {
    config.validate()?;
    let mut params = start;
    let mut stats = e_step(data, &params)?;
    let mut trace = vec![stats.loglik];
    let mut converged = false;
    let mut max_dec: f64 = 0.0;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let next = m_step(&stats, config, Some(&params))?;
        let next_stats = e_step(data, &next)?;
        iterations += 1;
        let (old, new) = (stats.loglik, next_stats.loglik);
        if !new.is_finite() {
            return Err(Error::Estimation(format!("log-likelihood became {new}")));
        }
        max_dec = max_dec.max((old - new) / old.abs().max(f64::MIN_POSITIVE));
        trace.push(new);
        params = next;
        stats = next_stats;
        if (new - old).abs() <= config.rel_tol * old.abs() {
            converged = true;
            break;
        }
    }
    Ok(RunResult {
        params,
        loglik: stats.loglik,
        loglik_trace: trace,
        tau: stats.tau,
        n_iterations: iterations,
        converged,
        max_relative_decrease: max_dec,
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Estimates in canonical labeling.
    pub params: MixtureHmmParams,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    /// n×K class posteriors in the canonical class order.
    pub tau: Vec<Vec<f64>>,
    /// MAP class per subject (0-based).
    pub partition: Vec<usize>,
    pub n_iterations: usize,
    pub converged: bool,
    /// Index of the winning restart.
    pub restart_index: usize,
    pub n_degenerate: usize,
    pub max_relative_decrease: f64,
}

impl FitResult {
    pub fn from_run(run: RunResult, restart_index: usize, n_degenerate: usize) -> Self {
        let (params, comp_perm, _) = run.params.canonicalize();
        let tau: Vec<Vec<f64>> = run
            .tau
            .iter()
            .map(|row| comp_perm.iter().map(|&c| row[c]).collect())
            .collect();
        let partition = tau.iter().map(|row| argmax_first(row)).collect();
        Self {
            params,
            loglik: run.loglik,
            loglik_trace: run.loglik_trace,
            tau,
            partition,
            n_iterations: run.n_iterations,
            converged: run.converged,
            restart_index,
            n_degenerate,
            max_relative_decrease: run.max_relative_decrease,
        }
    }
}

/// Best of `config.restarts` EM runs from random starts. Restart `r` draws
/// its start from the stream `(seed, r)`; failed runs are discarded.
pub fn fit(data: &[SegmentedSubject], k: usize, m: usize, config: &EmConfig) -> Result<FitResult> {
    config.validate()?;
    let runs: Vec<Result<RunResult>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(config.seed, r as u64);
            let start = match config.init {
                InitStrategy::Random => initialize(data, k, m, &mut rng)?,
                InitStrategy::SubjectClusters => initialize_clustered(data, k, m, &mut rng)?,
            };
            run_em(data, start, config)
        })
        .collect();
    let mut best: Option<(usize, RunResult)> = None;
    let mut failures = 0;
    let mut last_err = None;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                if best.as_ref().map_or(true, |(_, b)| run.loglik > b.loglik) {
                    best = Some((r, run));
                }
            }
            Err(e @ Error::InvalidInput(_)) => return Err(e),
            Err(e) => {
                failures += 1;
                last_err = Some(e);
            }
        }
    }
    match best {
        Some((r, run)) => Ok(FitResult::from_run(run, r, failures)),
        None => Err(Error::Degenerate(format!(
            "all {} restarts failed; last error: {}",
            config.restarts,
            last_err.map(|e| e.to_string()).unwrap_or_default()
        ))),
    }
}
