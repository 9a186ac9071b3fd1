use std::collections::BTreeMap;

use dmri_core::reliability::{
    aggregate_cov, cov_within_subject, region_means, scn_build, scn_mae, scn_repeatability, RegionStat, RegionStats,
    RegionalTable, ScnMatrix,
};
use dmri_core::volume::identity_affine;
use dmri_core::{LabelVolume, Volume4D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

fn random_table(subjects: usize, regions: usize, seed: u64) -> RegionalTable {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    RegionalTable {
        regions: (1..=regions as u32).collect(),
        rows: (0..subjects).map(|_| (0..regions).map(|_| rng.gen_range(0.2..0.8)).collect()).collect(),
    }
}

#[test]
fn pearson_matches_brute_force() {
    let t = random_table(5, 6, 1);
    let m = scn_build(&t).unwrap();
    for i in 0..6 {
        let xi: Vec<f64> = t.rows.iter().map(|r| r[i]).collect();
        assert_eq!(m.get(i, i), 1.0);
        for j in 0..6 {
            let xj: Vec<f64> = t.rows.iter().map(|r| r[j]).collect();
            if i != j {
                assert!((m.get(i, j) - brute_pearson(&xi, &xj)).abs() < 1e-12);
            }
            assert_eq!(m.get(i, j), m.get(j, i));
        }
    }
}

#[test]
fn pearson_is_affine_invariant() {
    let t = random_table(7, 4, 2);
    let mut scaled = t.clone();
    for row in &mut scaled.rows {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (j as f64 + 0.5) * 3.0 * *v - 2.0 * j as f64;
        }
    }
    let (a, b) = (scn_build(&t).unwrap(), scn_build(&scaled).unwrap());
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn duplicated_region_correlates_exactly() {
    let mut t = random_table(5, 3, 3);
    for row in &mut t.rows {
        row[2] = row[0];
    }
    assert_eq!(scn_build(&t).unwrap().get(0, 2), 1.0);
}

#[test]
fn checkerboard_region_means() {
    let dims = [4, 4, 2];
    let n = 32;
    let values: Vec<f64> = (0..n).map(|i| if (i % 4 + (i / 4) % 4 + i / 16) % 2 == 0 { 1.0 } else { 2.0 }).collect();
    let labels: Vec<u32> = (0..n).map(|i| if i % 4 < 2 { 1 } else { 2 }).collect();
    let map = Volume4D::new([4, 4, 2, 1], [1.0; 3], identity_affine([1.0; 3]), values.clone()).unwrap();
    let stats = region_means(&map, &LabelVolume::new(dims, labels.clone()).unwrap()).unwrap();
    for region in [1u32, 2] {
        let (mut sum, mut count) = (0.0, 0);
        for i in 0..n {
            if labels[i] == region {
                sum += values[i];
                count += 1;
            }
        }
        assert_eq!(stats[&region].count, count);
        assert!((stats[&region].mean - sum / count as f64).abs() < 1e-15);
    }
}

fn stats(values: &[(u32, f64)]) -> RegionStats {
    values.iter().map(|&(l, m)| (l, RegionStat { mean: m, count: 10 })).collect()
}

#[test]
fn cov_symmetry_and_scale_invariance() {
    let a = stats(&[(1, 0.41), (2, 0.77)]);
    let b = stats(&[(1, 0.44), (2, 0.70)]);
    assert_eq!(cov_within_subject(&a, &b).unwrap(), cov_within_subject(&b, &a).unwrap());
    let c = 4.0;
    let sa = stats(&[(1, 0.41 * c), (2, 0.77 * c)]);
    let sb = stats(&[(1, 0.44 * c), (2, 0.70 * c)]);
    let x = cov_within_subject(&a, &b).unwrap();
    let y = cov_within_subject(&sa, &sb).unwrap();
    for (p, q) in x.values().zip(y.values()) {
        assert!((p - q).abs() <= 1e-12 * p.abs());
    }
}

#[test]
fn aggregate_cov_matches_enumeration() {
    // 3 subjects, WM = {1, 2}, GM = {10, 11, 12}
    let session = |seed: u64| -> Vec<RegionStats> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..3).map(|_| [1, 2, 10, 11, 12].iter().map(|&r| (r, RegionStat { mean: rng.gen_range(0.3..0.9), count: 5 })).collect()).collect()
    };
    let (s1, s2) = (session(10), session(11));
    let per_subject: Vec<BTreeMap<u32, f64>> =
        s1.iter().zip(&s2).map(|(a, b)| cov_within_subject(a, b).unwrap()).collect();
    for class in [vec![1u32, 2], vec![10, 11, 12]] {
        let mut subject_sum = 0.0;
        for k in 0..3 {
            let mut region_sum = 0.0;
            for r in &class {
                let (x1, x2) = (s1[k][r].mean, s2[k][r].mean);
                let mean = (x1 + x2) / 2.0;
                let sd = (((x1 - mean).powi(2) + (x2 - mean).powi(2)) / 2.0).sqrt();
                region_sum += 100.0 * sd / mean;
            }
            subject_sum += region_sum / class.len() as f64;
        }
        let expected = subject_sum / 3.0;
        assert!((aggregate_cov(&per_subject, &class).unwrap() - expected).abs() < 1e-10);
    }
}

fn random_scn(regions: usize, seed: u64) -> ScnMatrix {
    scn_build(&random_table(8, regions, seed)).unwrap()
}

#[test]
fn repeatability_matches_enumeration() {
    let (a, b) = (random_scn(3, 20), random_scn(3, 21));
    let expected = ((a.get(0, 1) - b.get(0, 1)).abs() + (a.get(0, 2) - b.get(0, 2)).abs() + (a.get(1, 2) - b.get(1, 2)).abs()) / 3.0;
    assert!((scn_repeatability(&a, &b).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn scn_mae_is_a_pseudometric() {
    let mut violations = 0;
    for t in 0..200 {
        let (a, b, c) = (random_scn(5, 3 * t), random_scn(5, 3 * t + 1), random_scn(5, 3 * t + 2));
        assert_eq!(scn_mae(&a, &a).unwrap(), 0.0);
        assert_eq!(scn_mae(&a, &b).unwrap(), scn_mae(&b, &a).unwrap());
        if scn_mae(&a, &c).unwrap() > scn_mae(&a, &b).unwrap() + scn_mae(&b, &c).unwrap() + 1e-12 {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}
