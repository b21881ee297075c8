//! Finite-state Markov chain utilities: validation, stationary law,
//! spectral quantities, a total-variation mixing bound, and sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic M×M matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(invalid("transition matrix must be square"));
        }
        Self::from_flat(size, rows.into_iter().flatten().collect())
    }

    pub fn from_flat(size: usize, entries: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(invalid("transition matrix needs at least one state"));
        }
        if entries.len() != size * size {
            return Err(invalid(format!(
                "expected {} entries for a {size}x{size} matrix, got {}",
                size * size,
                entries.len()
            )));
        }
        let m = Self { size, entries };
        for h in 0..size {
            let row = m.row(h);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(invalid(format!("row {} has an entry outside [0, 1]", h + 1)));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid(format!("row {} sums to {s}, not 1", h + 1)));
            }
        }
        Ok(m)
    }

    /// Normalizes each row of a nonnegative matrix to sum to one.
    pub fn from_weights(size: usize, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != size * size {
            return Err(invalid("weight matrix has the wrong number of entries"));
        }
        for h in 0..size {
            let row = &mut weights[h * size..(h + 1) * size];
            let s: f64 = row.iter().sum();
            if !(s > 0.0 && s.is_finite()) || row.iter().any(|&w| w < 0.0) {
                return Err(invalid(format!("row {} cannot be normalized", h + 1)));
            }
            row.iter_mut().for_each(|w| *w /= s);
        }
        Self::from_flat(size, weights)
    }

    pub fn identity(size: usize) -> Self {
        let mut entries = vec![0.0; size * size];
        for h in 0..size {
            entries[h * size + h] = 1.0;
        }
        Self { size, entries }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.size + to]
    }

    #[inline]
    pub fn row(&self, from: usize) -> &[f64] {
        &self.entries[from * self.size..(from + 1) * self.size]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|h| self.row(h).to_vec()).collect()
    }

    /// Same chain with states relabeled: new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.size;
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                entries[i * m + j] = self.get(perm[i], perm[j]);
            }
        }
        Self { size: m, entries }
    }

    pub fn mul(&self, other: &TransitionMatrix) -> TransitionMatrix {
        let m = self.size;
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..m {
                    entries[i * m + j] += a * other.get(k, j);
                }
            }
        }
        TransitionMatrix { size: m, entries }
    }

    /// `A^d` by repeated squaring.
    pub fn power(&self, mut d: u64) -> TransitionMatrix {
        let mut result = TransitionMatrix::identity(self.size);
        let mut base = self.clone();
        while d > 0 {
            if d & 1 == 1 {
                result = result.mul(&base);
            }
            d >>= 1;
            if d > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    /// States that are not mutually reachable with state 0 on the support graph.
    pub fn unreachable_states(&self) -> Vec<usize> {
        let forward = self.reach(0, false);
        let backward = self.reach(0, true);
        (0..self.size).filter(|&h| !(forward[h] && backward[h])).collect()
    }

    pub fn is_irreducible(&self) -> bool {
        self.unreachable_states().is_empty()
    }

    fn reach(&self, start: usize, reverse: bool) -> Vec<bool> {
        let mut seen = vec![false; self.size];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(h) = stack.pop() {
            for l in 0..self.size {
                let p = if reverse { self.get(l, h) } else { self.get(h, l) };
                if p > 0.0 && !seen[l] {
                    seen[l] = true;
                    stack.push(l);
                }
            }
        }
        seen
    }
}

/// Probability vector over states (initial or stationary law of a chain).
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryLaw(Vec<f64>);

impl StationaryLaw {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("probability vector is empty"));
        }
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(invalid("probability vector has an entry outside [0, 1]"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(invalid(format!("probability vector sums to {s}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(size: usize) -> Self {
        Self(vec![1.0 / size as f64; size])
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0 && s.is_finite()) || weights.iter().any(|&w| w < 0.0) {
            return Err(invalid("weights cannot be normalized to a probability vector"));
        }
        Self::new(weights.into_iter().map(|w| w / s).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&i| self.0[i]).collect())
    }

    /// `‖π^T A − π^T‖∞`
    pub fn stationarity_residual(&self, a: &TransitionMatrix) -> f64 {
        let m = a.size();
        (0..m)
            .map(|l| {
                let v: f64 = (0..m).map(|h| self.0[h] * a.get(h, l)).sum();
                (v - self.0[l]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Unique stationary law of an irreducible chain.
///
/// Solves `(Aᵀ − I) π = 0` stacked with `1ᵀ π = 1` in the least-squares sense.
pub fn stationary_distribution(a: &TransitionMatrix) -> Result<StationaryLaw> {
    let unreachable = a.unreachable_states();
    if !unreachable.is_empty() {
        return Err(Error::Reducible {
            unreachable: unreachable.into_iter().map(|h| h + 1).collect(),
        });
    }
    let m = a.size();
    if m == 1 {
        return Ok(StationaryLaw(vec![1.0]));
    }
    let mut system = DMatrix::<f64>::zeros(m + 1, m);
    for i in 0..m {
        for j in 0..m {
            system[(i, j)] = a.get(j, i) - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..m {
        system[(m, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m + 1);
    rhs[m] = 1.0;
    let svd = system.clone().svd(true, true);
    let solve = |b: &DVector<f64>| {
        svd.solve(b, 1e-14)
            .map_err(|e| Error::Estimation(format!("stationary law solve failed: {e}")))
    };
    let mut solution = solve(&rhs)?;
    // iterative refinement recovers digits lost to near-identity matrices
    for _ in 0..3 {
        let residual = &rhs - &system * &solution;
        if residual.amax() <= 1e-16 {
            break;
        }
        solution += solve(&residual)?;
    }
    let mut probs: Vec<f64> = solution.iter().map(|&p| p.max(0.0)).collect();
    let s: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= s);
    let law = StationaryLaw(probs);
    Ok(law)
}

/// Spectral summary of a transition matrix, excluding its unit eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectrum {
    /// Second-largest eigenvalue modulus, ν*.
    pub nu_star: f64,
    /// Largest real part among the remaining eigenvalues, ν₂.
    pub nu2: f64,
    /// max(0, ν₂)
    pub nu2_bar: f64,
}

pub fn spectrum(a: &TransitionMatrix) -> Spectrum {
    let m = a.size();
    let rest: Vec<(f64, f64)> = match m {
        1 => Vec::new(),
        2 => vec![(a.get(0, 0) + a.get(1, 1) - 1.0, 0.0)],
        _ => {
            let mat = DMatrix::from_row_slice(m, m, a.as_slice());
            let mut eig: Vec<(f64, f64)> =
                mat.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
            let unit = eig
                .iter()
                .enumerate()
                .min_by(|x, y| {
                    let dx = (x.1 .0 - 1.0).hypot(x.1 .1);
                    let dy = (y.1 .0 - 1.0).hypot(y.1 .1);
                    dx.total_cmp(&dy)
                })
                .map(|(i, _)| i)
                .expect("nonempty spectrum");
            eig.remove(unit);
            eig
        }
    };
    if rest.is_empty() {
        return Spectrum { nu_star: 0.0, nu2: 0.0, nu2_bar: 0.0 };
    }
    let nu_star = rest.iter().map(|&(re, im)| re.hypot(im)).fold(0.0, f64::max);
    let nu2 = rest.iter().map(|&(re, _)| re).fold(f64::NEG_INFINITY, f64::max);
    Spectrum { nu_star, nu2, nu2_bar: nu2.max(0.0) }
}

/// ν*, the second-largest absolute eigenvalue.
pub fn second_eigenvalue_modulus(a: &TransitionMatrix) -> f64 {
    spectrum(a).nu_star
}

/// Number of steps after which every row of `A^D` is within total
/// variation `eta` of the stationary law:
/// `(1 / (1 − ν*)) · log(1 / (eta · min_h π_h))`, floored at zero.
pub fn mixing_time_bound(a: &TransitionMatrix, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    let pi = stationary_distribution(a)?;
    let nu_star = second_eigenvalue_modulus(a);
    if nu_star >= 1.0 - 1e-12 {
        return Err(Error::NotErgodic { nu_star });
    }
    let min_pi = pi.probs().iter().copied().fold(f64::INFINITY, f64::min);
    let bound = (1.0 / (eta * min_pi)).ln() / (1.0 - nu_star);
    Ok(bound.max(0.0))
}

/// `max_h ‖A^d[h, ·] − π‖_TV`
pub fn max_tv_distance(a: &TransitionMatrix, pi: &StationaryLaw, d: u64) -> f64 {
    let p = a.power(d);
    (0..a.size())
        .map(|h| 0.5 * p.row(h).iter().zip(pi.probs()).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Draws an index from a probability vector.
#[inline]
pub fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative total; take the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples states `x_0 … x_T` (length `T + 1`).
pub fn sample_chain<R: Rng + ?Sized>(
    pi: &StationaryLaw,
    a: &TransitionMatrix,
    t_len: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut states = Vec::with_capacity(t_len + 1);
    let mut x = draw_index(pi.probs(), rng);
    states.push(x);
    for _ in 0..t_len {
        x = draw_index(a.row(x), rng);
        states.push(x);
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sym(e: f64) -> TransitionMatrix {
        TransitionMatrix::new(vec![vec![e, 1.0 - e], vec![1.0 - e, e]]).unwrap()
    }

    fn random_stochastic(m: usize, rng: &mut ChaCha8Rng) -> TransitionMatrix {
        let w: Vec<f64> = (0..m * m).map(|_| rng.gen_range(0.05..1.0)).collect();
        TransitionMatrix::from_weights(m, w).unwrap()
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(TransitionMatrix::new(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.0], vec![1.0]]).is_err());
        assert!(TransitionMatrix::new(vec![]).is_err());
    }

    #[test]
    fn stationary_uniform_examples() {
        let pi = stationary_distribution(&sym(0.5)).unwrap();
        assert!((pi.probs()[0] - 0.5).abs() < 1e-12);
        for &e in &[0.01, 0.25, 0.75, 0.9, 0.999] {
            let pi = stationary_distribution(&sym(e)).unwrap();
            assert!((pi.probs()[0] - 0.5).abs() < 1e-12, "e={e}");
            let anti = TransitionMatrix::new(vec![vec![1.0 - e, e], vec![e, 1.0 - e]]).unwrap();
            let pi = stationary_distribution(&anti).unwrap();
            assert!((pi.probs()[1] - 0.5).abs() < 1e-12, "e={e}");
        }
    }

    #[test]
    fn stationary_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_stochastic(4, &mut rng);
            let pi = stationary_distribution(&a).unwrap();
            assert!(pi.stationarity_residual(&a) <= 1e-10);
            let limit = a.power(200);
            for h in 0..4 {
                for l in 0..4 {
                    assert!((limit.get(h, l) - pi.probs()[l]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn reducible_is_rejected() {
        let err = stationary_distribution(&TransitionMatrix::identity(2)).unwrap_err();
        match err {
            Error::Reducible { unreachable } => assert_eq!(unreachable, vec![2]),
            other => panic!("unexpected {other:?}"),
        }
        let absorbing =
            TransitionMatrix::new(vec![vec![0.5, 0.5, 0.0], vec![0.0, 1.0, 0.0], vec![0.3, 0.3, 0.4]])
                .unwrap();
        assert!(!absorbing.is_irreducible());
        assert!(mixing_time_bound(&absorbing, 0.01).is_err());
    }

    #[test]
    fn spectrum_two_state() {
        let s = spectrum(&sym(0.9));
        assert!((s.nu_star - 0.8).abs() < 1e-12);
        assert!((s.nu2 - 0.8).abs() < 1e-12);
        let anti = spectrum(&TransitionMatrix::new(vec![vec![0.1, 0.9], vec![0.9, 0.1]]).unwrap());
        assert!((anti.nu_star - 0.8).abs() < 1e-12);
        assert!((anti.nu2 + 0.8).abs() < 1e-12);
        assert_eq!(anti.nu2_bar, 0.0);
    }

    #[test]
    fn spectrum_periodic_three_cycle() {
        let cyc = TransitionMatrix::new(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert!((second_eigenvalue_modulus(&cyc) - 1.0).abs() < 1e-10);
        assert!(matches!(mixing_time_bound(&cyc, 0.01), Err(Error::NotErgodic { .. })));
    }

    #[test]
    fn mixing_bound_formula() {
        let b = mixing_time_bound(&sym(0.9), 0.01).unwrap();
        assert!((b - 5.0 * 200f64.ln()).abs() < 1e-10);
        assert!((b - 26.49).abs() < 0.01);
        // eta ≥ 1/min π makes the bound vacuous
        assert!(mixing_time_bound(&sym(0.9), 2.0).unwrap() < 1e-12);
        assert_eq!(mixing_time_bound(&sym(0.9), 5.0).unwrap(), 0.0);
        assert!(mixing_time_bound(&sym(0.9), 0.0).is_err());
    }

    #[test]
    fn mixing_bound_guarantee_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = random_stochastic(3, &mut rng);
            let pi = stationary_distribution(&a).unwrap();
            for &eta in &[1e-2, 1e-3, 1e-6] {
                let d = mixing_time_bound(&a, eta).unwrap().ceil() as u64;
                assert!(max_tv_distance(&a, &pi, d) <= eta);
            }
        }
    }

    #[test]
    fn mixing_bound_monotone_in_eta() {
        let a = sym(0.75);
        let mut prev = f64::INFINITY;
        for i in 1..50 {
            let eta = i as f64 * 0.05;
            let b = mixing_time_bound(&a, eta).unwrap();
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn power_and_tv() {
        let a = sym(0.9);
        let p = a.power(3);
        // (2e − 1)^3 = 0.512 governs the off-stationary part
        assert!((p.get(0, 0) - (0.5 + 0.5 * 0.512)).abs() < 1e-14);
        let pi = stationary_distribution(&a).unwrap();
        assert!((max_tv_distance(&a, &pi, 3) - 0.5 * 0.512).abs() < 1e-14);
        assert_eq!(a.power(0), TransitionMatrix::identity(2));
    }

    #[test]
    fn absorbing_row_continuation() {
        let a = TransitionMatrix::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let start = StationaryLaw::new(vec![1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let path = sample_chain(&start, &a, 100, &mut rng);
        assert_eq!(path.len(), 101);
        assert!(path.iter().all(|&x| x == 0));
    }

    #[test]
    fn sampled_chain_statistics() {
        let a = TransitionMatrix::new(vec![
            vec![0.7, 0.2, 0.1],
            vec![0.3, 0.5, 0.2],
            vec![0.25, 0.25, 0.5],
        ])
        .unwrap();
        let pi = stationary_distribution(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 1_000_000;
        let path = sample_chain(&pi, &a, t, &mut rng);
        let mut counts = [[0usize; 3]; 3];
        let mut occ = [0usize; 3];
        for w in path.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        for &x in &path {
            occ[x] += 1;
        }
        for h in 0..3 {
            let n: usize = counts[h].iter().sum();
            for l in 0..3 {
                let p = a.get(h, l);
                let se = (p * (1.0 - p) / n as f64).sqrt();
                let emp = counts[h][l] as f64 / n as f64;
                assert!((emp - p).abs() < 3.0 * se, "({h},{l}) {emp} vs {p}");
            }
            // occupancy is autocorrelated; the integrated autocorrelation of
            // this chain is small, so widen the iid error by a factor of 3
            let p = pi.probs()[h];
            let se = 3.0 * (p * (1.0 - p) / path.len() as f64).sqrt();
            let emp = occ[h] as f64 / path.len() as f64;
            assert!((emp - p).abs() < 3.0 * se, "state {h}: {emp} vs {p}");
        }
    }

    #[test]
    fn permutation_relabels() {
        let a = TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.4, 0.6]]).unwrap();
        let p = a.permuted(&[1, 0]);
        assert_eq!(p.get(0, 0), 0.6);
        assert_eq!(p.get(1, 0), 0.1);
    }
}
