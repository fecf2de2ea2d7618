use super::*;
use crate::graph::{generate_ws, unobserved_mask, NodePartition};
use crate::matching::MatchResult;
use ndarray::Array3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pairwise_auc(s: &[f64], l: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in l.iter().enumerate() {
        for (j, &lj) in l.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

#[test]
fn auc_small_example() {
    let v = auc(&[0.9, 0.4, 0.6, 0.1], &[true, true, false, false]).unwrap();
    assert!((v - 0.75).abs() < 1e-12);
}

#[test]
fn auc_extremes_and_ties() {
    assert_eq!(auc(&[1.0, 0.0], &[true, false]).unwrap(), 1.0);
    assert_eq!(auc(&[0.0, 1.0], &[true, false]).unwrap(), 0.0);
    assert_eq!(auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
}

#[test]
fn auc_single_class_is_undefined() {
    assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(GinError::UndefinedAuc)));
    assert!(matches!(auc(&[0.1, 0.2], &[false, false]), Err(GinError::UndefinedAuc)));
    assert!(auc(&[0.1], &[true, false]).is_err());
}

proptest! {
    #[test]
    fn auc_matches_pairwise_count(v in prop::collection::vec((0u8..6, any::<bool>()), 2..40)) {
        let s: Vec<f64> = v.iter().map(|x| x.0 as f64).collect();
        let l: Vec<bool> = v.iter().map(|x| x.1).collect();
        prop_assume!(l.iter().any(|&b| b) && l.iter().any(|&b| !b));
        prop_assert!((auc(&s, &l).unwrap() - pairwise_auc(&s, &l)).abs() < 1e-12);
    }

    #[test]
    fn auc_monotone_invariant(v in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40)) {
        let s: Vec<f64> = v.iter().map(|x| x.0).collect();
        let l: Vec<bool> = v.iter().map(|x| x.1).collect();
        prop_assume!(l.iter().any(|&b| b) && l.iter().any(|&b| !b));
        let t: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        prop_assert!((auc(&s, &l).unwrap() - auc(&t, &l).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auc_negation_complements(v in prop::collection::vec((0u8..4, any::<bool>()), 2..40)) {
        let s: Vec<f64> = v.iter().map(|x| x.0 as f64).collect();
        let l: Vec<bool> = v.iter().map(|x| x.1).collect();
        prop_assume!(l.iter().any(|&b| b) && l.iter().any(|&b| !b));
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auc(&s, &l).unwrap() + auc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mi_symmetric_nonnegative(seed in 0u64..1000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Array3::from_shape_fn((50, 5, 1), |_| r.random::<f64>());
        let m = mi_baseline(&x, Dynamics::Cmn { coupling: 1.0, r: 1.0 }, 16).unwrap();
        for i in 0..5 {
            prop_assert_eq!(m[[i, i]], 0.0);
            for j in 0..5 {
                prop_assert_eq!(m[[i, j]], m[[j, i]]);
                prop_assert!(m[[i, j]] >= 0.0);
            }
        }
    }
}

fn entropy(counts: &[usize]) -> f64 {
    let t: usize = counts.iter().sum();
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t as f64;
            -p * p.ln()
        })
        .sum()
}

#[test]
fn mi_matches_entropy_identity() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let t = 300;
    let a: Vec<usize> = (0..t).map(|_| r.random_range(0..2)).collect();
    let b: Vec<usize> = a.iter().map(|&v| if r.random_bool(0.2) { 1 - v } else { v }).collect();
    let x = Array3::from_shape_fn((t, 2, 2), |(s, i, k)| {
        let v = if i == 0 { a[s] } else { b[s] };
        if k == v { 1.0 } else { 0.0 }
    });
    let m = mi_baseline(&x, Dynamics::Voter, 16).unwrap();
    let mut ha = [0; 2];
    let mut hb = [0; 2];
    let mut hab = [0; 4];
    for s in 0..t {
        ha[a[s]] += 1;
        hb[b[s]] += 1;
        hab[a[s] * 2 + b[s]] += 1;
    }
    let oracle = entropy(&ha) + entropy(&hb) - entropy(&hab);
    assert!((m[[0, 1]] - oracle).abs() < 1e-12);
}

#[test]
fn mi_of_identical_series_is_entropy() {
    let x = Array3::from_shape_fn((64, 2, 1), |(s, _, _)| (s % 16) as f64 / 16.0 + 0.01);
    let m = mi_baseline(&x, Dynamics::Cmn { coupling: 1.0, r: 1.0 }, 16).unwrap();
    assert!((m[[0, 1]] - 16f64.ln()).abs() < 1e-12);
}

fn regress_out(y: &[f64], zs: &[Vec<f64>]) -> Vec<f64> {
    // Gram-Schmidt residual of y against span{1, zs}.
    let t = y.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut cols = vec![vec![1.0; t]];
    cols.extend(zs.iter().cloned());
    for mut c in cols {
        for b in &basis {
            let d: f64 = c.iter().zip(b).map(|(x, y)| x * y).sum();
            c.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(c.iter().map(|x| x / norm).collect());
    }
    let mut r = y.to_vec();
    for b in &basis {
        let d: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
        r.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
    }
    r
}

#[test]
fn pcorr_matches_residual_correlation() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let t = 500;
    let n = 4;
    let mut x = Array3::zeros((t, n, 1));
    for s in 0..t {
        let z: f64 = r.random();
        x[[s, 0, 0]] = z;
        x[[s, 1, 0]] = 0.7 * z + 0.3 * r.random::<f64>();
        x[[s, 2, 0]] = 0.5 * x[[s, 1, 0]] + 0.5 * r.random::<f64>();
        x[[s, 3, 0]] = r.random();
    }
    let p = pcorr_baseline(&x, 0.0).unwrap();
    let col = |i: usize| (0..t).map(|s| x[[s, i, 0]]).collect::<Vec<f64>>();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let rest: Vec<Vec<f64>> = (0..n).filter(|&k| k != i && k != j).map(col).collect();
            let ri = regress_out(&col(i), &rest);
            let rj = regress_out(&col(j), &rest);
            let num: f64 = ri.iter().zip(&rj).map(|(a, b)| a * b).sum();
            let den = (ri.iter().map(|a| a * a).sum::<f64>() * rj.iter().map(|a| a * a).sum::<f64>()).sqrt();
            assert!((p[[i, j]] - (num / den).abs()).abs() < 1e-9, "{i} {j}");
        }
    }
    assert!(p[[0, 1]] > p[[0, 2]]);
}

#[test]
fn pcorr_rejects_constant_series() {
    let mut x = Array3::from_elem((20, 3, 1), 0.5);
    x[[3, 0, 0]] = 0.2;
    x[[5, 2, 0]] = 0.9;
    assert!(matches!(pcorr_baseline(&x, 1e-4), Err(GinError::ZeroVariance(1))));
}

#[test]
fn completion_counts_and_perfect_scores() {
    let g = generate_ws(10, 4, 0.2, 1).unwrap();
    let a = g.adjacency().clone();
    let p = NodePartition::new(10, &[8, 9]).unwrap();
    let mask = unobserved_mask(&p);
    let (rep, cm) = score_completion(&a, &a, &mask, None, 0.5).unwrap();
    assert_eq!(rep.scored_entries, mask.upper_pairs().len());
    assert_eq!(rep.unobs_auc, 1.0);
    assert_eq!(rep.unobs_acc, 1.0);
    assert_eq!(cm.count(Outcome::FP) + cm.count(Outcome::FN), 0);
    assert_eq!(cm.count(Outcome::TP) + cm.count(Outcome::TN), rep.scored_entries);
    let flipped = a.mapv(|v| 1.0 - v);
    let (rep, cm) = score_completion(&a, &flipped, &mask, None, 0.5).unwrap();
    assert_eq!(rep.unobs_auc, 0.0);
    assert_eq!(rep.unobs_tpr, 0.0);
    assert_eq!(cm.count(Outcome::FP) + cm.count(Outcome::FN), rep.scored_entries);
}

#[test]
fn completion_applies_matching() {
    let g = generate_ws(12, 4, 0.3, 2).unwrap();
    let a = g.adjacency().clone();
    let p = NodePartition::new(12, &[9, 10, 11]).unwrap();
    let mask = unobserved_mask(&p);
    let m = MatchResult {
        hidden: vec![9, 10, 11],
        permutation: vec![1, 2, 0],
        objective: 0.0,
        iterations: 0,
        converged: true,
        trace: Vec::new(),
    };
    let inverse = MatchResult {
        permutation: vec![2, 0, 1],
        ..m.clone()
    };
    let shuffled = apply_match(&a, &inverse).unwrap();
    let (rep, _) = score_completion(&a, &shuffled, &mask, Some(&m), 0.5).unwrap();
    assert_eq!(rep.unobs_auc, 1.0);
    assert!(rep.matched);
}

#[test]
fn contrast_csv_shape() {
    let a = generate_ws(6, 2, 0.0, 0).unwrap().adjacency().clone();
    let mask = unobserved_mask(&NodePartition::new(6, &[5]).unwrap());
    let (_, cm) = score_completion(&a, &a, &mask, None, 0.5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    cm.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.split(',').count() == 6));
    assert!(rows[0].ends_with("TP") || rows[0].ends_with("TN"));
}

#[test]
fn state_scores() {
    let t = ndarray::array![[0.2, 0.8], [0.6, 0.4], [0.1, 0.9]];
    let p = ndarray::array![[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];
    assert!((score_states(&p, &t, Dynamics::Voter).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let c = Dynamics::Cmn { coupling: 1.0, r: 1.0 };
    let x = ndarray::array![[0.5], [0.1]];
    let y = ndarray::array![[0.3], [0.4]];
    assert!((score_states(&x, &y, c).unwrap() - (0.04 + 0.09) / 2.0).abs() < 1e-12);
    assert!(score_states(&x, &t, c).is_err());
}

#[test]
fn structure_rows_and_report_roundtrip() {
    let g = generate_ws(10, 4, 0.1, 3).unwrap();
    let rows = compare_structure(&g, &g).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.delta == 0.0));
    let a = g.adjacency().clone();
    let mask = unobserved_mask(&NodePartition::new(10, &[0]).unwrap());
    let (mut rep, _) = score_completion(&a, &a, &mask, None, 0.5).unwrap();
    rep.structure = rows;
    let dir = tempfile::tempdir().unwrap();
    rep.save(dir.path().join("r.json")).unwrap();
    assert_eq!(EvalReport::load(dir.path().join("r.json")).unwrap(), rep);
    write_stat_table(&rep.structure, dir.path().join("s.csv")).unwrap();
}
