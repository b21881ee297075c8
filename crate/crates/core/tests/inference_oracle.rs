mod common;

use common::{enumerate, prob_close, random_params, random_subject, rel_close};
use mhmm::em::e_step;
use mhmm::inference::{backward, forward, posteriors, total_loglik, viterbi};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn posteriors_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..40 {
        let k = rng.gen_range(1..=2);
        let m = rng.gen_range(1..=3);
        let p = random_params(k, m, &mut rng);
        let lens = if rng.gen_bool(0.5) { vec![rng.gen_range(1..=7)] } else { vec![3, 2] };
        let subj = random_subject(&lens, &mut rng);
        let oracle = enumerate(&subj, &p);
        let post = posteriors(&subj, &p).unwrap();
        assert!(rel_close(post.loglik, oracle.likelihood.ln(), 1e-10));
        for kk in 0..k {
            assert!(prob_close(post.tau[kk], oracle.tau[kk], 1e-10));
            for (s, &len) in lens.iter().enumerate() {
                for t in 0..len {
                    for h in 0..m {
                        assert!(prob_close(post.gamma(kk, s, t, h), oracle.gamma[kk][s][t][h], 1e-10));
                    }
                }
                for t in 1..len {
                    for h in 0..m {
                        for l in 0..m {
                            assert!(prob_close(post.xi(kk, s, t, h, l), oracle.xi[kk][s][t - 1][h][l], 1e-10));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn viterbi_matches_enumerated_best_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..30 {
        let m = rng.gen_range(2..=3);
        let p = random_params(1, m, &mut rng);
        let len = rng.gen_range(1..=6);
        let subj = random_subject(&[len], &mut rng);
        let seg = &subj.segments[0];
        let mut best = (f64::NEG_INFINITY, vec![]);
        for code in 0..m.pow(len as u32) {
            let path: Vec<usize> = (0..len).map(|t| code / m.pow(t as u32) % m).collect();
            let mut w = p.pis[0].probs()[path[0]] * common::zig_density(&p.emissions[path[0]], seg[0]);
            for t in 1..len {
                w *= p.trans[0].get(path[t - 1], path[t]) * common::zig_density(&p.emissions[path[t]], seg[t]);
            }
            if w > best.0 {
                best = (w, path);
            }
        }
        assert_eq!(viterbi(seg, 0, &p).unwrap(), best.1);
    }
}

#[test]
fn sufficient_statistics_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_params(2, 2, &mut rng);
    let subjects: Vec<_> = (0..3).map(|_| random_subject(&[4, 2], &mut rng)).collect();
    let st = e_step(&subjects, &p).unwrap();
    let mut n_k = [0.0; 2];
    let mut n_khl = [0.0; 8];
    let mut n_kh0 = [0.0; 4];
    let mut zero_w = [0.0; 2];
    for subj in &subjects {
        let o = enumerate(subj, &p);
        for k in 0..2 {
            n_k[k] += o.tau[k];
            for (s, seg) in subj.segments.iter().enumerate() {
                for h in 0..2 {
                    n_kh0[k * 2 + h] += o.tau[k] * o.gamma[k][s][0][h];
                    for (t, &y) in seg.iter().enumerate() {
                        if y == 0.0 {
                            zero_w[h] += o.tau[k] * o.gamma[k][s][t][h];
                        }
                    }
                    for t in 1..seg.len() {
                        for l in 0..2 {
                            n_khl[(k * 2 + h) * 2 + l] += o.tau[k] * o.xi[k][s][t - 1][h][l];
                        }
                    }
                }
            }
        }
    }
    for k in 0..2 {
        assert!(rel_close(st.n_k[k], n_k[k], 1e-10));
    }
    for i in 0..8 {
        assert!(rel_close(st.n_khl[i], n_khl[i], 1e-10));
    }
    for i in 0..4 {
        assert!(rel_close(st.n_kh0[i], n_kh0[i], 1e-10));
    }
    for h in 0..2 {
        assert!(prob_close(st.zero_weight[h], zero_w[h], 1e-10));
    }
    let transitions: f64 = st.n_khl.iter().sum();
    assert!(rel_close(transitions, 3.0 * 4.0, 1e-12));
}

#[test]
fn label_permutations_leave_likelihood_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_params(2, 3, &mut rng);
    let data: Vec<_> = (0..4).map(|_| random_subject(&[30, 12], &mut rng)).collect();
    let base = total_loglik(&data, &p).unwrap();
    let pc = p.permute_components(&[1, 0]);
    assert!(rel_close(total_loglik(&data, &pc).unwrap(), base, 1e-12));
    let sp = [2, 0, 1];
    let ps = p.permute_states(&sp);
    assert!(rel_close(total_loglik(&data, &ps).unwrap(), base, 1e-12));
    let a = posteriors(&data[0], &p).unwrap();
    let b = posteriors(&data[0], &pc).unwrap();
    assert!(prob_close(a.tau[0], b.tau[1], 1e-12));
    let c = posteriors(&data[0], &ps).unwrap();
    for t in 0..30 {
        for (new, &old) in sp.iter().enumerate() {
            assert!(prob_close(c.eta(0, t, new), a.eta(0, t, old), 1e-10));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn posterior_tables_are_normalized(seed in any::<u64>(), k in 1usize..=3, m in 1usize..=4, len in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(k, m, &mut rng);
        let subj = random_subject(&[len, 5], &mut rng);
        let post = posteriors(&subj, &p).unwrap();
        prop_assert!((post.tau.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for kk in 0..k {
            for (s, seg) in subj.segments.iter().enumerate() {
                for t in 0..seg.len() {
                    let g: f64 = (0..m).map(|h| post.gamma(kk, s, t, h)).sum();
                    prop_assert!((g - 1.0).abs() < 1e-10);
                    let e: f64 = (0..m).map(|h| post.eta(s, t, h)).sum();
                    prop_assert!((e - 1.0).abs() < 1e-10);
                }
                for t in 1..seg.len() {
                    let x: f64 = (0..m).flat_map(|h| (0..m).map(move |l| (h, l))).map(|(h, l)| post.xi(kk, s, t, h, l)).sum();
                    prop_assert!((x - 1.0).abs() < 1e-10);
                    for l in 0..m {
                        let col: f64 = (0..m).map(|h| post.xi(kk, s, t, h, l)).sum();
                        prop_assert!((col - post.gamma(kk, s, t, l)).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn forward_and_backward_likelihoods_agree(seed in any::<u64>(), m in 1usize..=4, len in 1usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(1, m, &mut rng);
        let subj = random_subject(&[len], &mut rng);
        let f = forward(&subj.segments[0], 0, &p).unwrap();
        let b = backward(&subj.segments[0], 0, &p).unwrap();
        prop_assert!(rel_close(f.loglik, b.loglik, 1e-10));
        for t in 0..len {
            let s: f64 = f.alpha_at(t).iter().zip(b.beta_at(t)).map(|(x, y)| x * y).sum();
            prop_assert!((s - 1.0).abs() < 1e-10);
        }
    }
}
