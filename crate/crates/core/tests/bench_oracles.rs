mod support;

use num_rational::Ratio;
use odpc::bench::{auroc, auroc_ratio, make_split, openness, pca_2d, ClassCatalog, Protocol};
use proptest::prelude::*;
use rand::Rng;
use support::fixtures::{gaussian_matrix, rng, to_rows};
use support::oracles::{auroc_pairs, jacobi_eigen, Rows};

#[test]
fn rank_auroc_equals_pair_counting_exactly() {
    for seed in 0..100u64 {
        let mut r = rng(seed);
        let n_id = r.random_range(1..=500);
        let n_ood = r.random_range(1..=500);
        // coarse grid on half the instances to force ties
        let levels = if seed % 2 == 0 { 0 } else { r.random_range(2..20) };
        let mut draw = |n: usize, shift: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v: f64 = r.random::<f64>() + shift;
                    if levels == 0 {
                        v
                    } else {
                        (v * levels as f64).floor()
                    }
                })
                .collect()
        };
        let id = draw(n_id, 0.0);
        let ood = draw(n_ood, 0.3);
        let (num, den) = auroc_pairs(&id, &ood);
        assert_eq!(auroc_ratio(&id, &ood).unwrap(), Ratio::new(num, den), "seed {seed}");
    }
}

fn centred(rows: &Rows) -> (Rows, Vec<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let c = rows.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    (c, mean)
}

/// Best rank-2 approximation from the leading eigenvectors of `X X^T`.
fn rank2_via_gram(rows: &Rows) -> Rows {
    let (c, mean) = centred(rows);
    let n = c.len();
    let gram: Rows =
        (0..n).map(|i| (0..n).map(|j| c[i].iter().zip(&c[j]).map(|(a, b)| a * b).sum()).collect()).collect();
    let (_, u) = jacobi_eigen(gram);
    (0..n)
        .map(|i| {
            (0..mean.len())
                .map(|j| {
                    let mut v = mean[j];
                    for comp in 0..2 {
                        let mut proj = 0.0;
                        for (m, cm) in c.iter().enumerate() {
                            proj += u[m][comp] * cm[j];
                        }
                        v += u[i][comp] * proj;
                    }
                    v
                })
                .collect()
        })
        .collect()
}

/// Best rank-2 approximation from the leading eigenvectors of `X^T X`.
fn rank2_via_covariance(rows: &Rows) -> Rows {
    let (c, mean) = centred(rows);
    let d = mean.len();
    let cov: Rows = (0..d).map(|a| (0..d).map(|b| c.iter().map(|r| r[a] * r[b]).sum()).collect()).collect();
    let (_, v) = jacobi_eigen(cov);
    c.iter()
        .map(|r| {
            let coef: Vec<f64> = (0..2).map(|k| (0..d).map(|j| r[j] * v[j][k]).sum()).collect();
            (0..d).map(|j| mean[j] + coef[0] * v[j][0] + coef[1] * v[j][1]).collect()
        })
        .collect()
}

#[test]
fn pca_reconstruction_matches_eigendecomposition_wide() {
    for seed in 0..5u64 {
        let x = gaussian_matrix(&mut rng(seed), 10, 512);
        let p = pca_2d(x.view()).unwrap();
        let oracle = rank2_via_gram(&to_rows(&x));
        let ours = to_rows(&p.reconstruct());
        for (a, b) in ours.iter().flatten().zip(oracle.iter().flatten()) {
            assert!((a - b).abs() < 1e-6, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn pca_reconstruction_matches_eigendecomposition_tall() {
    for seed in 10..15u64 {
        let x = gaussian_matrix(&mut rng(seed), 60, 7);
        let p = pca_2d(x.view()).unwrap();
        let oracle = rank2_via_covariance(&to_rows(&x));
        for (a, b) in to_rows(&p.reconstruct()).iter().flatten().zip(oracle.iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn pca_components_are_orthonormal_with_sign_convention() {
    let x = gaussian_matrix(&mut rng(3), 40, 30);
    let p = pca_2d(x.view()).unwrap();
    let c = &p.components;
    for i in 0..2 {
        for j in 0..2 {
            let d = c.row(i).dot(&c.row(j));
            assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
        let lead = c.row(i).iter().copied().find(|v| v.abs() > 1e-12).unwrap();
        assert!(lead > 0.0);
    }
    assert!(p.variances[0] >= p.variances[1]);
}

fn distinct(v: Vec<f64>) -> Vec<f64> {
    let mut seen = std::collections::HashSet::new();
    v.into_iter().filter(|x| seen.insert(x.to_bits())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auroc_swaps_to_complement(
        a in prop::collection::vec(-1e3f64..1e3, 1..60),
        b in prop::collection::vec(-1e3f64..1e3, 1..60),
    ) {
        let a = distinct(a);
        let b: Vec<f64> = distinct(b).into_iter().filter(|x| !a.contains(x)).collect();
        prop_assume!(!b.is_empty());
        let s = auroc_ratio(&a, &b).unwrap() + auroc_ratio(&b, &a).unwrap();
        prop_assert_eq!(s, Ratio::from_integer(1));
    }

    #[test]
    fn auroc_ignores_increasing_transforms(
        a in prop::collection::vec(-5f64..5.0, 1..60),
        b in prop::collection::vec(-5f64..5.0, 1..60),
        scale in 0.1f64..10.0,
        shift in -3f64..3.0,
    ) {
        let f = |v: &Vec<f64>| v.iter().map(|x| (scale * x + shift).exp()).collect::<Vec<_>>();
        let g = |v: &Vec<f64>| v.iter().map(|x| x * x * x).collect::<Vec<_>>();
        let base = auroc(&a, &b).unwrap();
        prop_assert_eq!(auroc(&f(&a), &f(&b)).unwrap(), base);
        prop_assert_eq!(auroc(&g(&a), &g(&b)).unwrap(), base);
    }

    #[test]
    fn auroc_in_unit_interval(
        a in prop::collection::vec(-5f32..5.0, 1..40),
        b in prop::collection::vec(-5f32..5.0, 1..40),
    ) {
        let v = auroc(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn openness_increases_with_test_classes(train in 1usize..100, extra in 0usize..300) {
        let lo = openness(train, train + extra).unwrap();
        let hi = openness(train, train + extra + 1).unwrap();
        prop_assert!(hi > lo);
        prop_assert!((0.0..100.0).contains(&lo));
    }

    #[test]
    fn splits_are_disjoint_and_sized(seed in 0u64..1_000_000, which in 0usize..4) {
        let (protocol, catalog) = [
            (Protocol::Cifar10_6v4, ClassCatalog::cifar10()),
            (Protocol::CifarPlus10, ClassCatalog::cifar_plus()),
            (Protocol::CifarPlus50, ClassCatalog::cifar_plus()),
            (Protocol::Cifar100_20v80, ClassCatalog::cifar100()),
        ][which].clone();
        let s = make_split(protocol, &catalog, seed).unwrap();
        prop_assert_eq!((s.known_classes.len(), s.unknown_classes.len()), protocol.class_counts());
        prop_assert!(s.known_classes.iter().all(|k| !s.unknown_classes.contains(k)));
        prop_assert_eq!(s.n_total_test_classes, s.n_train_classes + s.n_unknown);
        prop_assert_eq!(make_split(protocol, &catalog, seed).unwrap(), s);
    }
}
