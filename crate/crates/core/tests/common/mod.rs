//! Brute-force references shared by the integration tests.
#![allow(dead_code)]

use mhmm::{MixtureHmmParams, SegmentedSubject, StationaryLaw, TransitionMatrix, ZigParams};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::gamma;

/// ZIG density written out directly, without going through log space.
pub fn zig_density(p: &ZigParams, y: f64) -> f64 {
    if y == 0.0 {
        p.epsilon
    } else {
        (1.0 - p.epsilon) * p.rate.powf(p.shape) * y.powf(p.shape - 1.0) * (-p.rate * y).exp() / gamma(p.shape)
    }
}

/// Exact posteriors from summing over every (z, x) configuration.
pub struct Enumerated {
    pub likelihood: f64,
    pub tau: Vec<f64>,
    /// `gamma[k][s][t][h]`
    pub gamma: Vec<Vec<Vec<Vec<f64>>>>,
    /// `xi[k][s][t-1][h][l]`
    pub xi: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
}

pub fn enumerate(subject: &SegmentedSubject, p: &MixtureHmmParams) -> Enumerated {
    let (kk, m) = (p.k(), p.m());
    let lens: Vec<usize> = subject.segments.iter().map(|s| s.len()).collect();
    let total: usize = lens.iter().sum();
    let configs = m.pow(total as u32);
    let mut class_mass = vec![0.0; kk];
    let mut gamma_acc: Vec<Vec<Vec<Vec<f64>>>> =
        (0..kk).map(|_| lens.iter().map(|&l| vec![vec![0.0; m]; l]).collect()).collect();
    let mut xi_acc: Vec<Vec<Vec<Vec<Vec<f64>>>>> = (0..kk)
        .map(|_| lens.iter().map(|&l| vec![vec![vec![0.0; m]; m]; l.saturating_sub(1)]).collect())
        .collect();
    let mut path = vec![0usize; total];
    for k in 0..kk {
        for code in 0..configs {
            let mut c = code;
            for slot in path.iter_mut() {
                *slot = c % m;
                c /= m;
            }
            let mut w = p.delta[k];
            let mut offset = 0;
            for (s, seg) in subject.segments.iter().enumerate() {
                let xs = &path[offset..offset + lens[s]];
                w *= p.pis[k].probs()[xs[0]] * zig_density(&p.emissions[xs[0]], seg[0]);
                for t in 1..xs.len() {
                    w *= p.trans[k].get(xs[t - 1], xs[t]) * zig_density(&p.emissions[xs[t]], seg[t]);
                }
                offset += lens[s];
            }
            class_mass[k] += w;
            let mut offset = 0;
            for s in 0..lens.len() {
                let xs = &path[offset..offset + lens[s]];
                for t in 0..xs.len() {
                    gamma_acc[k][s][t][xs[t]] += w;
                    if t > 0 {
                        xi_acc[k][s][t - 1][xs[t - 1]][xs[t]] += w;
                    }
                }
                offset += lens[s];
            }
        }
    }
    let likelihood: f64 = class_mass.iter().sum();
    let tau = class_mass.iter().map(|c| c / likelihood).collect();
    for k in 0..kk {
        for s in gamma_acc[k].iter_mut() {
            for row in s.iter_mut() {
                row.iter_mut().for_each(|v| *v /= class_mass[k]);
            }
        }
        for s in xi_acc[k].iter_mut() {
            for block in s.iter_mut() {
                for row in block.iter_mut() {
                    row.iter_mut().for_each(|v| *v /= class_mass[k]);
                }
            }
        }
    }
    Enumerated { likelihood, tau, gamma: gamma_acc, xi: xi_acc }
}

fn simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Arbitrary valid parameters; initial laws are not tied to the chains.
pub fn random_params<R: Rng>(k: usize, m: usize, rng: &mut R) -> MixtureHmmParams {
    let trans = (0..k)
        .map(|_| TransitionMatrix::new((0..m).map(|_| simplex(m, rng)).collect()).unwrap())
        .collect();
    let pis = (0..k).map(|_| StationaryLaw::new(simplex(m, rng)).unwrap()).collect();
    let emissions = (0..m)
        .map(|_| {
            ZigParams::new(rng.gen_range(0.01..0.5), rng.gen_range(0.5..5.0), rng.gen_range(0.2..3.0)).unwrap()
        })
        .collect();
    MixtureHmmParams::new(simplex(k, rng), pis, trans, emissions).unwrap()
}

/// Segments of the given lengths with 20% zeros and gamma(2, 1) positives.
pub fn random_subject<R: Rng>(lens: &[usize], rng: &mut R) -> SegmentedSubject {
    let g = Gamma::new(2.0, 1.0).unwrap();
    let segments = lens
        .iter()
        .map(|&l| (0..l).map(|_| if rng.gen::<f64>() < 0.2 { 0.0 } else { g.sample(rng) }).collect())
        .collect();
    SegmentedSubject::from_segments("r", segments).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Relative agreement for probabilities, with an absolute floor for entries
/// that are essentially zero.
pub fn prob_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) || (a - b).abs() <= 1e-14
}
