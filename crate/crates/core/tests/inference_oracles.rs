//! Exhaustive-enumeration checks for chain inference and assignment.

use privtrack::dcrf::{dcrf_score, forward_backward, viterbi, ChainModel};
use privtrack::tracker::hungarian;
use proptest::prelude::*;

fn all_sequences(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &l in sizes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..l).map(move |k| {
                    let mut p = prefix.clone();
                    p.push(k);
                    p
                })
            })
            .collect();
    }
    out
}

/// Best labeling by enumeration. Sequences are compared with the reversed
/// sequence as the secondary key, so ties go to the smallest label at the
/// latest differing slice.
fn brute_best(m: &ChainModel) -> (Vec<usize>, f64) {
    let sizes: Vec<usize> = (0..m.len()).map(|t| m.labels_at(t)).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for seq in all_sequences(&sizes) {
        let s = m.score(&seq).unwrap();
        let better = match &best {
            None => true,
            Some((b, bs)) => s > *bs || (s == *bs && seq.iter().rev().lt(b.iter().rev())),
        };
        if better {
            best = Some((seq, s));
        }
    }
    best.unwrap()
}

fn chain(max_t: usize, max_l: usize, ragged: bool) -> impl Strategy<Value = ChainModel> {
    (1..=max_t, 1..=max_l)
        .prop_flat_map(move |(t, l)| {
            let sizes = if ragged { prop::collection::vec(1..=max_l, t).boxed() } else { Just(vec![l; t]).boxed() };
            sizes
        })
        .prop_flat_map(|sizes| {
            let unary = sizes.iter().map(|&l| prop::collection::vec(-3.0f64..3.0, l)).collect::<Vec<_>>();
            let pairwise = sizes
                .windows(2)
                .map(|w| prop::collection::vec(prop::collection::vec(-3.0f64..3.0, w[1]), w[0]))
                .collect::<Vec<_>>();
            (unary, pairwise)
        })
        .prop_map(|(u, p)| ChainModel::new(u, p).unwrap())
}

/// Integer-valued potentials produce many exact ties.
fn tied_chain() -> impl Strategy<Value = ChainModel> {
    (1usize..=5, 1usize..=3).prop_flat_map(|(t, l)| {
        (
            prop::collection::vec(prop::collection::vec(-1i32..=1, l), t),
            prop::collection::vec(prop::collection::vec(prop::collection::vec(-1i32..=1, l), l), t - 1),
        )
            .prop_map(|(u, p)| {
                let f = |v: i32| v as f64;
                ChainModel::new(
                    u.into_iter().map(|r| r.into_iter().map(f).collect()).collect(),
                    p.into_iter().map(|b| b.into_iter().map(|r| r.into_iter().map(f).collect()).collect()).collect(),
                )
                .unwrap()
            })
    })
}

fn brute_log_z(m: &ChainModel) -> f64 {
    let sizes: Vec<usize> = (0..m.len()).map(|t| m.labels_at(t)).collect();
    all_sequences(&sizes).iter().map(|s| m.score(s).unwrap().exp()).sum::<f64>().ln()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn viterbi_matches_enumeration(m in chain(5, 3, false)) {
        let (labels, score) = viterbi(&m);
        let (best, best_score) = brute_best(&m);
        prop_assert_eq!(&labels, &best);
        prop_assert_eq!(score, best_score);
        prop_assert_eq!(m.score(&labels).unwrap(), score);
    }

    #[test]
    fn viterbi_tie_break_matches_enumeration(m in tied_chain()) {
        let (labels, score) = viterbi(&m);
        let (best, best_score) = brute_best(&m);
        prop_assert_eq!(labels, best);
        prop_assert_eq!(score, best_score);
    }

    #[test]
    fn ragged_chains_match_enumeration(m in chain(5, 3, true)) {
        let (labels, _) = viterbi(&m);
        prop_assert_eq!(labels, brute_best(&m).0);
        let fb = forward_backward(&m);
        prop_assert!(((fb.log_z.exp() - brute_log_z(&m).exp()) / brute_log_z(&m).exp()).abs() < 1e-9);
    }

    #[test]
    fn partition_matches_enumeration(m in chain(4, 3, false)) {
        let fb = forward_backward(&m);
        let z = brute_log_z(&m).exp();
        prop_assert!(((fb.log_z.exp() - z) / z).abs() < 1e-9);
    }

    #[test]
    fn marginals_match_enumeration(m in chain(4, 3, false)) {
        let fb = forward_backward(&m);
        let sizes: Vec<usize> = (0..m.len()).map(|t| m.labels_at(t)).collect();
        let z = brute_log_z(&m).exp();
        let mut expect: Vec<Vec<f64>> = sizes.iter().map(|&l| vec![0.0; l]).collect();
        for seq in all_sequences(&sizes) {
            let p = m.score(&seq).unwrap().exp() / z;
            for (t, &k) in seq.iter().enumerate() {
                expect[t][k] += p;
            }
        }
        for (row, want) in fb.marginals.iter().zip(&expect) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (a, b) in row.iter().zip(want) {
                prop_assert!((0.0..=1.0).contains(a));
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalized_score_is_shift_invariant(m in chain(4, 3, false), shifts in prop::collection::vec(-50.0f64..50.0, 4)) {
        let (labels, _) = viterbi(&m);
        let base = dcrf_score(&m, &labels).unwrap();
        prop_assert!(base <= 0.0);
        let mut shifted = m.clone();
        for t in 0..m.len() {
            shifted.shift_unary(t, shifts[t]);
        }
        prop_assert_eq!(&viterbi(&shifted).0, &labels);
        prop_assert!((dcrf_score(&shifted, &labels).unwrap() - base).abs() < 1e-9);
        let sizes: Vec<usize> = (0..m.len()).map(|t| m.labels_at(t)).collect();
        for seq in all_sequences(&sizes) {
            prop_assert!(dcrf_score(&m, &seq).unwrap() <= base + 1e-12);
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum cost over all injective row→column maps of a padded square matrix,
/// then the lexicographically smallest optimal real-pair list.
fn brute_assignment(cost: &[Vec<f64>]) -> (Vec<(usize, usize)>, f64) {
    let (n, m) = (cost.len(), cost[0].len());
    let k = n.max(m);
    let at = |i: usize, j: usize| if i < n && j < m { cost[i][j] } else { 0.0 };
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in permutations(k) {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| at(i, j)).sum();
        let better = match &best {
            None => true,
            Some((bp, bc)) => c < *bc - 1e-9 || ((c - bc).abs() <= 1e-9 && p < *bp),
        };
        if better {
            best = Some((p, c));
        }
    }
    let (p, _) = best.unwrap();
    let pairs: Vec<(usize, usize)> = p.into_iter().enumerate().filter(|&(i, j)| i < n && j < m).collect();
    let total = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    (pairs, total)
}

fn matrix(int: bool) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=6, 1usize..=6).prop_flat_map(move |(n, m)| {
        let cell = if int { (0i32..4).prop_map(f64::from).boxed() } else { (-5.0f64..5.0).boxed() };
        prop::collection::vec(prop::collection::vec(cell, m), n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hungarian_matches_enumeration(cost in matrix(false)) {
        let got = hungarian(&cost);
        let (pairs, total) = brute_assignment(&cost);
        prop_assert!((got.cost - total).abs() < 1e-9);
        prop_assert_eq!(got.pairs.len(), cost.len().min(cost[0].len()));
        prop_assert_eq!(got.pairs, pairs);
    }

    #[test]
    fn hungarian_ties_match_enumeration(cost in matrix(true)) {
        let got = hungarian(&cost);
        let (pairs, total) = brute_assignment(&cost);
        prop_assert_eq!(got.cost, total);
        prop_assert_eq!(got.pairs, pairs);
    }
}
