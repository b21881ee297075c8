//! Sampling from the generative model, the four two-class benchmark cases,
//! missingness injection and the simulation-study harnesses.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::em::{fit, EmConfig};
use crate::emissions::ZigParams;
use crate::error::{invalid, Error, Result};
use crate::inference::{argmax_first, class_log_posteriors, viterbi};
use crate::markov::{draw_index, sample_chain, StationaryLaw, TransitionMatrix};
use crate::model::MixtureHmmParams;
use crate::rng::{derive_seed, stream_rng};
use crate::selection::{adjusted_rand_index, aligned_parameter_mse, ParameterMse};
use crate::sequences::{segment_on_missing, RawSeries, SegmentedSubject};

/// The four two-class, two-state benchmark settings. They differ in the
/// persistence `e` of the transition matrices and the shape of state 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Hard,
    MediumHard,
    MediumEasy,
    Easy,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::Hard, Case::MediumHard, Case::MediumEasy, Case::Easy];

    /// `(e, a₂)`
    pub fn settings(self) -> (f64, f64) {
        match self {
            Case::Hard => (0.75, 3.0),
            Case::MediumHard => (0.90, 3.0),
            Case::MediumEasy => (0.75, 5.0),
            Case::Easy => (0.90, 5.0),
        }
    }

    /// δ = (½, ½), ε = (0.1, 0.1), a = (1, a₂), b = (1, 1),
    /// A₁ = [[e, 1−e], [1−e, e]], A₂ = [[1−e, e], [e, 1−e]].
    pub fn params(self) -> MixtureHmmParams {
        let (e, a2) = self.settings();
        let a1 = TransitionMatrix::new(vec![vec![e, 1.0 - e], vec![1.0 - e, e]]).expect("valid rows");
        let a2m = TransitionMatrix::new(vec![vec![1.0 - e, e], vec![e, 1.0 - e]]).expect("valid rows");
        MixtureHmmParams::new(
            vec![0.5, 0.5],
            vec![StationaryLaw::uniform(2), StationaryLaw::uniform(2)],
            vec![a1, a2m],
            vec![
                ZigParams::new(0.1, 1.0, 1.0).expect("valid"),
                ZigParams::new(0.1, a2, 1.0).expect("valid"),
            ],
        )
        .expect("benchmark parameters are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            Case::Hard => "hard",
            Case::MediumHard => "medium_hard",
            Case::MediumEasy => "medium_easy",
            Case::Easy => "easy",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "hard" => Ok(Case::Hard),
            "medium_hard" | "medium" => Ok(Case::MediumHard),
            "medium_easy" => Ok(Case::MediumEasy),
            "easy" => Ok(Case::Easy),
            _ => Err(invalid(format!("unknown case '{s}' (hard, medium_hard, medium_easy, easy)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Missingness {
    None,
    /// One run of 10 missing values per subject.
    Mcar1,
    /// Two runs of 20 missing values per subject.
    Mcar2,
    /// Each value observed with probability `e^y / (1 + e^y)`.
    Mnar,
}

impl Missingness {
    pub const ALL: [Missingness; 4] = [Missingness::None, Missingness::Mcar1, Missingness::Mcar2, Missingness::Mnar];

    pub fn name(self) -> &'static str {
        match self {
            Missingness::None => "none",
            Missingness::Mcar1 => "mcar1",
            Missingness::Mcar2 => "mcar2",
            Missingness::Mnar => "mnar",
        }
    }

    /// `(count, length)` of the MCAR runs.
    pub fn runs(self) -> &'static [(usize, usize)] {
        match self {
            Missingness::Mcar1 => &[(1, 10)],
            Missingness::Mcar2 => &[(2, 20)],
            _ => &[],
        }
    }
}

impl fmt::Display for Missingness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Missingness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "none" | "no" => Ok(Missingness::None),
            "mcar1" => Ok(Missingness::Mcar1),
            "mcar2" => Ok(Missingness::Mcar2),
            "mnar" => Ok(Missingness::Mnar),
            _ => Err(invalid(format!("unknown missingness '{s}' (none, mcar1, mcar2, mnar)"))),
        }
    }
}

/// One simulated dataset with its latent truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    /// Series on times `0..=T`.
    pub series: Vec<RawSeries>,
    /// True class of each subject (0-based).
    pub z: Vec<usize>,
    /// True state path of each subject, `T + 1` entries.
    pub x: Vec<Vec<usize>>,
}

impl SimulatedDataset {
    pub fn segmented(&self) -> Result<Vec<SegmentedSubject>> {
        self.series.iter().map(|s| segment_on_missing(s, 1)).collect()
    }
}

/// Draws `n` subjects with observations at `t = 0..=t_len`.
pub fn sample_dataset<R: Rng + ?Sized>(
    params: &MixtureHmmParams,
    n: usize,
    t_len: usize,
    rng: &mut R,
) -> SimulatedDataset {
    let mut series = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for i in 0..n {
        let z = draw_index(&params.delta, rng);
        let x = sample_chain(&params.pis[z], &params.trans[z], t_len, rng);
        let values = x.iter().map(|&h| Some(params.emissions[h].sample(rng))).collect();
        series.push(RawSeries {
            subject_id: (i + 1).to_string(),
            times: (0..=t_len as i64).collect(),
            values,
        });
        zs.push(z);
        xs.push(x);
    }
    SimulatedDataset { series, z: zs, x: xs }
}

/// Masks `count` runs of `length` consecutive values per subject at uniform,
/// non-overlapping positions.
pub fn apply_mcar<R: Rng + ?Sized>(
    series: &mut [RawSeries],
    runs: &[(usize, usize)],
    rng: &mut R,
) -> Result<()> {
    const MAX_ATTEMPTS: usize = 10_000;
    for s in series.iter_mut() {
        let len = s.values.len();
        let needed: usize = runs.iter().map(|(c, l)| c * l).sum();
        if needed > len || runs.iter().any(|&(c, l)| c > 0 && l == 0) {
            return Err(invalid(format!(
                "subject {}: missing runs need {needed} slots but the series has {len}",
                s.subject_id
            )));
        }
        let mut placed: Vec<(usize, usize)> = Vec::new();
        for &(count, length) in runs {
            for _ in 0..count {
                let mut attempts = 0;
                loop {
                    let start = rng.gen_range(0..=len - length);
                    let end = start + length;
                    if placed.iter().all(|&(a, b)| end <= a || start >= b) {
                        placed.push((start, end));
                        break;
                    }
                    attempts += 1;
                    if attempts == MAX_ATTEMPTS {
                        return Err(invalid(format!(
                            "subject {}: could not place a missing run of length {length}",
                            s.subject_id
                        )));
                    }
                }
            }
        }
        for (a, b) in placed {
            s.values[a..b].iter_mut().for_each(|v| *v = None);
        }
    }
    Ok(())
}

/// Keeps each observed value with probability `e^y / (1 + e^y)`.
pub fn apply_mnar<R: Rng + ?Sized>(series: &mut [RawSeries], rng: &mut R) {
    for s in series.iter_mut() {
        for v in s.values.iter_mut() {
            if let Some(y) = *v {
                let keep = 1.0 / (1.0 + (-y).exp());
                if rng.gen::<f64>() >= keep {
                    *v = None;
                }
            }
        }
    }
}

pub fn apply_missingness<R: Rng + ?Sized>(
    series: &mut [RawSeries],
    missingness: Missingness,
    rng: &mut R,
) -> Result<()> {
    match missingness {
        Missingness::None => Ok(()),
        Missingness::Mcar1 | Missingness::Mcar2 => apply_mcar(series, missingness.runs(), rng),
        Missingness::Mnar => {
            apply_mnar(series, rng);
            Ok(())
        }
    }
}

/// Simulation setting: true parameters, size and missingness.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub params: MixtureHmmParams,
    pub n: usize,
    /// Observations at `t = 0..=t_len`.
    pub t_len: usize,
    pub missingness: Missingness,
    pub replicates: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn from_case(case: Case, n: usize, t_len: usize) -> Self {
        Self { params: case.params(), n, t_len, missingness: Missingness::None, replicates: 1, seed: 0 }
    }

    /// Dataset of replicate `r`, with missingness applied.
    pub fn sample(&self, r: usize) -> Result<SimulatedDataset> {
        let mut rng = stream_rng(self.seed, r as u64);
        let mut d = sample_dataset(&self.params, self.n, self.t_len, &mut rng);
        apply_missingness(&mut d.series, self.missingness, &mut rng)?;
        Ok(d)
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisclassificationRow {
    #[serde(rename = "T")]
    pub t_len: usize,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    pub error_rate: f64,
}

/// Classification of single subjects under the true parameters. For each
/// `T` and replicate one subject is drawn and the largest log posterior
/// ratio `log P(Z=k | y) − log P(Z=z | y)` over wrong classes `k ≠ z`
/// is recorded, together with whether the MAP class is wrong.
pub fn misclassification_experiment(
    params: &MixtureHmmParams,
    t_grid: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<Vec<MisclassificationRow>> {
    if params.k() < 2 {
        return Err(invalid("misclassification needs at least two classes"));
    }
    if replicates == 0 {
        return Err(invalid("replicates must be at least 1"));
    }
    t_grid
        .iter()
        .map(|&t_len| {
            let grid_seed = derive_seed(seed, t_len as u64);
            let outcomes: Vec<(f64, bool)> = (0..replicates)
                .into_par_iter()
                .map(|r| {
                    let mut rng = stream_rng(grid_seed, r as u64);
                    let d = sample_dataset(params, 1, t_len, &mut rng);
                    let subject = SegmentedSubject::from_segments(
                        "1",
                        vec![d.series[0].values.iter().map(|v| v.expect("complete")).collect()],
                    )?;
                    let lp = class_log_posteriors(&subject, params)?;
                    let z = d.z[0];
                    let ratio = lp
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != z)
                        .map(|(_, &l)| l - lp[z])
                        .fold(f64::NEG_INFINITY, f64::max);
                    Ok((ratio, argmax_first(&lp) != z))
                })
                .collect::<Result<_>>()?;
            let mut ratios: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
            ratios.sort_by(f64::total_cmp);
            let errors = outcomes.iter().filter(|o| o.1).count();
            Ok(MisclassificationRow {
                t_len,
                median: quantile(&ratios, 0.5),
                q05: quantile(&ratios, 0.05),
                q95: quantile(&ratios, 0.95),
                error_rate: errors as f64 / replicates as f64,
            })
        })
        .collect()
}

pub fn write_misclassification_csv<W: Write>(rows: &[MisclassificationRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Scores of one fitted replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateScore {
    pub partition_ari: f64,
    pub state_ari: f64,
    pub mse: ParameterMse,
    pub loglik: f64,
}

/// Fits one dataset and compares it with the truth. State ARI pools all
/// observed time points, with states decoded by Viterbi under each
/// subject's MAP class.
pub fn score_replicate(
    data: &SimulatedDataset,
    truth: &MixtureHmmParams,
    config: &EmConfig,
) -> Result<ReplicateScore> {
    let segmented = data.segmented()?;
    let f = fit(&segmented, truth.k(), truth.m(), config)?;
    let partition_ari = adjusted_rand_index(&f.partition, &data.z)?;
    let mut est_states = Vec::new();
    let mut true_states = Vec::new();
    for (i, subj) in segmented.iter().enumerate() {
        for (seg, &start) in subj.segments.iter().zip(&subj.segment_starts) {
            let path = viterbi(seg, f.partition[i], &f.params)?;
            for (j, &h) in path.iter().enumerate() {
                est_states.push(h);
                true_states.push(data.x[i][start as usize + j]);
            }
        }
    }
    let state_ari = adjusted_rand_index(&est_states, &true_states)?;
    let (mse, _, _) = aligned_parameter_mse(&f.params, truth)?;
    Ok(ReplicateScore { partition_ari, state_ari, mse, loglik: f.loglik })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub missingness: Missingness,
    pub partition_ari: f64,
    pub state_ari: f64,
    #[serde(rename = "mse_A")]
    pub mse_a: f64,
    pub mse_epsilon: f64,
    #[serde(rename = "mse_a")]
    pub mse_shape: f64,
    #[serde(rename = "mse_b")]
    pub mse_rate: f64,
    pub mse_delta: f64,
    pub n_ok: usize,
    pub n_degenerate: usize,
}

#[derive(Debug, Clone)]
pub struct ConvergenceCell {
    pub row: ConvergenceRow,
    /// Per-replicate scores; `None` where every restart failed.
    pub replicates: Vec<Option<ReplicateScore>>,
}

/// Averages fit quality over replicates for each `(n, T, missingness)` cell.
/// Replicate `r` of cell `c` uses data stream `(seed, c, r)` and fits with
/// EM seed derived from the same stream.
pub fn convergence_experiment(
    truth: &MixtureHmmParams,
    cells: &[(usize, usize, Missingness)],
    replicates: usize,
    config: &EmConfig,
    seed: u64,
) -> Result<Vec<ConvergenceCell>> {
    if replicates == 0 {
        return Err(invalid("replicates must be at least 1"));
    }
    cells
        .iter()
        .enumerate()
        .map(|(c, &(n, t_len, missingness))| {
            let spec = ScenarioSpec {
                params: truth.clone(),
                n,
                t_len,
                missingness,
                replicates,
                seed: derive_seed(seed, c as u64),
            };
            let scores: Vec<Option<ReplicateScore>> = (0..replicates)
                .into_par_iter()
                .map(|r| {
                    let data = spec.sample(r)?;
                    let cfg = EmConfig { seed: derive_seed(spec.seed ^ 0xE3, r as u64), ..config.clone() };
                    match score_replicate(&data, truth, &cfg) {
                        Ok(s) => Ok(Some(s)),
                        Err(Error::InvalidInput(m)) => Err(Error::InvalidInput(m)),
                        Err(_) => Ok(None),
                    }
                })
                .collect::<Result<_>>()?;
            let ok: Vec<&ReplicateScore> = scores.iter().flatten().collect();
            let mean = |f: &dyn Fn(&ReplicateScore) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|s| f(s)).sum::<f64>() / ok.len() as f64
                }
            };
            let row = ConvergenceRow {
                n,
                t_len,
                missingness,
                partition_ari: mean(&|s| s.partition_ari),
                state_ari: mean(&|s| s.state_ari),
                mse_a: mean(&|s| s.mse.a),
                mse_epsilon: mean(&|s| s.mse.epsilon),
                mse_shape: mean(&|s| s.mse.shape),
                mse_rate: mean(&|s| s.mse.rate),
                mse_delta: mean(&|s| s.mse.delta),
                n_ok: ok.len(),
                n_degenerate: replicates - ok.len(),
            };
            Ok(ConvergenceCell { row, replicates: scores })
        })
        .collect()
}

pub fn write_convergence_csv<W: Write>(cells: &[ConvergenceCell], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in cells {
        w.serialize(&c.row)?;
    }
    w.flush()?;
    Ok(())
}
