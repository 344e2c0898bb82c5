use haoi_core::hand_model::Vec3;
use haoi_core::metrics::{
    displacement_errors, diversity, fid, interaction_volume, mmodality, resample, VoxelSet,
};
use haoi_core::rng::seeded;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_rows(n: usize, mean: [f64; 2], mix: [[f64; 2]; 2], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let z: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
            (0..2).map(|i| mean[i] + mix[i][0] * z[0] + mix[i][1] * z[1]).collect()
        })
        .collect()
}

fn oracle_moments(rows: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = rows.len() as f64;
    let f = rows[0].len();
    let mu: Vec<f64> = (0..f).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let cov = DMatrix::from_fn(f, f, |a, b| {
        rows.iter().map(|r| (r[a] - mu[a]) * (r[b] - mu[b])).sum::<f64>() / (n - 1.0)
    });
    (mu, cov)
}

/// FID through the eigenvalues of the (non-symmetric) product `Σ_r Σ_g`.
fn oracle_fid(real: &[Vec<f64>], gen: &[Vec<f64>]) -> f64 {
    let (mr, cr) = oracle_moments(real);
    let (mg, cg) = oracle_moments(gen);
    let product = &cr * &cg;
    let cross: f64 = product.complex_eigenvalues().iter().map(|l| l.re.max(0.0).sqrt()).sum();
    let shift: f64 = mr.iter().zip(&mg).map(|(a, b)| (a - b) * (a - b)).sum();
    shift + cr.trace() + cg.trace() - 2.0 * cross
}

#[test]
fn fid_matches_product_eigenvalue_oracle() {
    let a = gaussian_rows(10_000, [0.0, 0.0], [[1.0, 0.0], [0.3, 0.5]], 1);
    let b = gaussian_rows(10_000, [0.4, -0.2], [[0.7, 0.2], [0.0, 1.3]], 2);
    let got = fid(&a, &b).unwrap();
    let want = oracle_fid(&a, &b);
    assert!(!got.ridge_applied);
    assert!((got.value - want).abs() <= 1e-6, "{} vs {want}", got.value);
    let back = fid(&b, &a).unwrap().value;
    assert!((got.value - back).abs() <= 1e-9, "{} vs {back}", got.value);
}

#[test]
fn fid_self_comparison_is_zero() {
    let mut rng = seeded(3);
    for (n, f) in [(50, 4), (5, 8), (200, 16)] {
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..f).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect()).collect();
        let r = fid(&a, &a).unwrap();
        assert!(r.value <= 1e-6, "n {n} f {f}: {}", r.value);
        assert_eq!(r.ridge_applied, n <= f);
    }
}

#[test]
fn fid_shared_covariance_reduces_to_mean_shift() {
    let a = gaussian_rows(300, [0.0, 0.0], [[1.0, 0.0], [0.5, 0.8]], 4);
    let v = [0.3, -1.1];
    let b: Vec<Vec<f64>> = a.iter().map(|r| vec![r[0] + v[0], r[1] + v[1]]).collect();
    let got = fid(&a, &b).unwrap().value;
    assert!((got - (v[0] * v[0] + v[1] * v[1])).abs() < 1e-9, "{got}");
}

#[test]
fn fid_rejects_mismatched_or_tiny_sets() {
    assert!(fid(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
    assert!(fid(&[vec![1.0], vec![2.0]], &[vec![1.0, 0.0], vec![2.0, 0.0]]).is_err());
}

fn oracle_diversity(rows: &[Vec<f64>]) -> f64 {
    let unit: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter().map(|x| x / n).collect()
        })
        .collect();
    let n = rows.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += 1.0 - unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    total / (n * (n - 1)) as f64
}

#[test]
fn diversity_matches_double_loop() {
    let mut rng = seeded(5);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..7).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
    assert!((diversity(&rows).unwrap() - oracle_diversity(&rows)).abs() <= 1e-12);
}

#[test]
fn mmodality_matches_double_loop() {
    let mut rng = seeded(6);
    let groups: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|_| (0..4).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect())
        .collect();
    let mut want = 0.0;
    for g in &groups {
        let mut s = 0.0;
        let mut pairs = 0.0;
        for i in 0..g.len() {
            for j in 0..i {
                s += g[i].iter().zip(&g[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                pairs += 1.0;
            }
        }
        want += s / pairs / groups.len() as f64;
    }
    assert!((mmodality(&groups).unwrap() - want).abs() <= 1e-12);
    let one = vec![vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.5]]];
    assert!((mmodality(&one).unwrap() - 0.5).abs() < 1e-15);
    assert!(mmodality(&[vec![vec![1.0]]]).is_err());
}

fn random_scene(seed: u64) -> (Vec<Vec3>, VoxelSet) {
    let mut rng = seeded(seed);
    let mut p = || Vec3::new(rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1);
    let object: Vec<Vec3> = (0..300).map(|_| p()).collect();
    let hand: Vec<Vec3> = (0..40).map(|_| p()).collect();
    (hand, VoxelSet::from_points(&object, 0.01).unwrap())
}

/// Exhaustive voxel-by-vertex scan.
fn oracle_iv(hand: &[Vec3], voxels: &VoxelSet, eps: f64) -> f64 {
    let mut count = 0;
    for cell in &voxels.cells {
        let c = Vec3::new(
            (cell[0] as f64 + 0.5) * voxels.size,
            (cell[1] as f64 + 0.5) * voxels.size,
            (cell[2] as f64 + 0.5) * voxels.size,
        );
        let min = hand.iter().map(|v| (v - c).norm()).fold(f64::INFINITY, f64::min);
        if min < eps {
            count += 1;
        }
    }
    count as f64 * (voxels.size * 100.0).powi(3)
}

#[test]
fn interaction_volume_matches_exhaustive_scan() {
    for seed in 0..20 {
        let (hand, voxels) = random_scene(seed);
        for eps in [0.004, 0.01, 0.02] {
            let got = interaction_volume(&hand, &voxels, eps).unwrap();
            assert_eq!(got, oracle_iv(&hand, &voxels, eps), "seed {seed} eps {eps}");
        }
    }
}

#[test]
fn interaction_volume_grows_with_epsilon() {
    for seed in 100..120 {
        let (hand, voxels) = random_scene(seed);
        let small = interaction_volume(&hand, &voxels, 0.008).unwrap();
        let large = interaction_volume(&hand, &voxels, 0.016).unwrap();
        assert!(large >= small, "seed {seed}: {small} > {large}");
    }
}

#[test]
fn interaction_volume_single_center_with_neighbors() {
    let grid: Vec<Vec3> = (0..27)
        .map(|i| Vec3::new((i % 3) as f64 * 0.01 + 0.005, ((i / 3) % 3) as f64 * 0.01 + 0.005, (i / 9) as f64 * 0.01 + 0.005))
        .collect();
    let voxels = VoxelSet::from_points(&grid, 0.01).unwrap();
    let hand = [Vec3::new(0.015, 0.015, 0.015)];
    let got = interaction_volume(&hand, &voxels, 0.01).unwrap();
    assert_eq!(got, oracle_iv(&hand, &voxels, 0.01));
    let alone = interaction_volume(&hand, &voxels, 0.0099).unwrap();
    assert!((alone - 1.0).abs() < 1e-9, "{alone}");
    let wider = interaction_volume(&hand, &voxels, 0.0101).unwrap();
    assert!((wider - 7.0).abs() < 1e-9, "{wider}");
}

#[test]
fn displacement_examples() {
    let truth: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
    assert_eq!(displacement_errors(&truth, &truth).unwrap(), (0.0, 0.0));
    let delta = Vec3::new(0.1, -0.2, 0.2);
    let shifted: Vec<Vec3> = truth.iter().map(|p| p + delta).collect();
    let (ade, fde) = displacement_errors(&shifted, &truth).unwrap();
    assert!((ade - delta.norm()).abs() < 1e-12 && (fde - delta.norm()).abs() < 1e-12);
    let (ade, fde) = displacement_errors(&[Vec3::new(1.0, 2.0, 2.0)], &[Vec3::zeros()]).unwrap();
    assert_eq!((ade, fde), (3.0, 3.0));
}

fn vec3s() -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..20)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
}

proptest! {
    #[test]
    fn diversity_stays_in_range(rows in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 3), 2..8), flip in any::<bool>()) {
        let rows: Vec<Vec<f64>> = rows.into_iter().enumerate()
            .map(|(i, r)| if flip && i % 2 == 0 { r.iter().map(|x| -x).collect() } else { r })
            .collect();
        let d = diversity(&rows).unwrap();
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&d));
    }

    #[test]
    fn displacement_bounded_by_worst_frame(a in vec3s(), shift in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)) {
        let b: Vec<Vec3> = a.iter().enumerate().map(|(i, p)| p + Vec3::new(shift.0, shift.1 * i as f64, shift.2)).collect();
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        let (ade, fde) = displacement_errors(&a, &b).unwrap();
        prop_assert!(ade <= worst + 1e-12 && fde <= worst + 1e-12);
    }

    #[test]
    fn resample_endpoints_fixed(a in vec3s(), n in 2usize..40) {
        let r = resample(&a, n).unwrap();
        prop_assert_eq!(r.len(), n);
        prop_assert!((r[0] - a[0]).norm() < 1e-12);
        prop_assert!((r[n - 1] - a[a.len() - 1]).norm() < 1e-12);
    }
}
