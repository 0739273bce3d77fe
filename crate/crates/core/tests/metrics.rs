mod common;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use splatslam::dataio::TrajectoryRecord;
use splatslam::eval::{align_umeyama, ate_rmse, psnr, ssim, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
use splatslam::imaging::RgbImage;

fn trajectory(rng: &mut impl Rng, n: usize) -> Vec<TrajectoryRecord> {
    (0..n)
        .map(|i| {
            let t = i as f64 * 0.1;
            TrajectoryRecord {
                timestamp: t,
                translation: Vector3::new(t.sin(), (0.7 * t).cos(), 0.3 * t) + Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)),
                rotation: UnitQuaternion::from_euler_angles(0.1 * t, 0.2, -0.05 * t),
            }
        })
        .collect()
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
}

#[test]
fn ate_is_invariant_under_rigid_transforms() {
    let mut r = common::rng(1);
    for _ in 0..20 {
        let gt = trajectory(&mut r, 40);
        let noisy: Vec<_> = gt
            .iter()
            .map(|g| TrajectoryRecord { translation: g.translation + Vector3::from_fn(|_, _| r.random_range(-0.02..0.02)), ..*g })
            .collect();
        let base = ate_rmse(&noisy, &gt, false, 0.02).unwrap().rmse;
        let q = UnitQuaternion::from_euler_angles(r.random_range(-3.0..3.0), r.random_range(-1.5..1.5), r.random_range(-3.0..3.0));
        let t = Vector3::from_fn(|_, _| r.random_range(-5.0..5.0));
        let moved: Vec<_> = noisy.iter().map(|e| TrajectoryRecord { translation: q * e.translation + t, rotation: q * e.rotation, ..*e }).collect();
        let after = ate_rmse(&moved, &gt, false, 0.02).unwrap().rmse;
        assert!((after - base).abs() <= 1e-9, "{base} vs {after}");
    }
}

#[test]
fn ate_of_identical_trajectories_is_zero() {
    let gt = trajectory(&mut common::rng(2), 10);
    assert!(ate_rmse(&gt, &gt, false, 0.02).unwrap().rmse < 1e-12);
}

#[test]
fn similarity_alignment_recovers_scale() {
    let mut r = common::rng(3);
    let gt: Vec<Vector3<f64>> = trajectory(&mut r, 30).iter().map(|t| t.translation).collect();
    let est: Vec<_> = gt.iter().map(|p| p * 0.5 + Vector3::new(1.0, 2.0, 3.0)).collect();
    let a = align_umeyama(&est, &gt, true).unwrap();
    assert!((a.scale - 2.0).abs() < 1e-9);
    assert!(a.rmse() < 1e-9);
}

/// With i.i.d. isotropic noise of std `s` per axis and a 6-DOF fit over `n`
/// points, the expected squared residual is `s^2 (3 n - 6) / n`.
#[test]
fn ate_noise_band() {
    let mut r = common::rng(4);
    let (n, s) = (400, 0.01);
    let normal = Normal::new(0.0, s).unwrap();
    let expected = (s * s * (3 * n - 6) as f64 / n as f64).sqrt();
    let mut acc = 0.0;
    let trials = 20;
    for _ in 0..trials {
        let gt = trajectory(&mut r, n);
        let est: Vec<_> = gt
            .iter()
            .map(|g| TrajectoryRecord { translation: g.translation + Vector3::from_fn(|_, _| normal.sample(&mut r)), ..*g })
            .collect();
        acc += ate_rmse(&est, &gt, false, 0.02).unwrap().rmse;
    }
    let mean = acc / trials as f64;
    assert!((mean / expected - 1.0).abs() < 0.03, "mean {mean}, expected {expected}");
}

#[test]
fn psnr_uniform_offset_is_20_db() {
    let mut r = common::rng(5);
    let a = RgbImage::from_fn(16, 16, |_, _| [r.random_range(0.0..0.9), r.random_range(0.0..0.9), r.random_range(0.0..0.9)]);
    let b = RgbImage { data: a.data.iter().map(|p| [p[0] + 0.1, p[1] + 0.1, p[2] + 0.1]).collect(), ..a.clone() };
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
}

#[test]
fn ssim_of_identical_images_is_one() {
    let mut r = common::rng(6);
    for (w, h) in [(11, 11), (16, 16), (40, 23)] {
        let a = random_image(&mut r, w, h);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }
}

/// Direct 2-D weighted window at every valid position.
fn naive_ssim(a: &RgbImage, b: &RgbImage) -> f64 {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut weights = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
    for j in 0..SSIM_WINDOW {
        for i in 0..SSIM_WINDOW {
            let (dx, dy) = (i as f64 - half, j as f64 - half);
            weights[j * SSIM_WINDOW + i] = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let (ow, oh) = (a.width - SSIM_WINDOW + 1, a.height - SSIM_WINDOW + 1);
    let mut acc = 0.0;
    for c in 0..3 {
        for y in 0..oh {
            for x in 0..ow {
                let (mut ma, mut mb) = (0.0, 0.0);
                for j in 0..SSIM_WINDOW {
                    for i in 0..SSIM_WINDOW {
                        let wgt = weights[j * SSIM_WINDOW + i];
                        ma += wgt * a.get(x + i, y + j)[c];
                        mb += wgt * b.get(x + i, y + j)[c];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for j in 0..SSIM_WINDOW {
                    for i in 0..SSIM_WINDOW {
                        let wgt = weights[j * SSIM_WINDOW + i];
                        let (da, db) = (a.get(x + i, y + j)[c] - ma, b.get(x + i, y + j)[c] - mb);
                        va += wgt * da * da;
                        vb += wgt * db * db;
                        cov += wgt * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            }
        }
    }
    acc / (3 * ow * oh) as f64
}

#[test]
fn ssim_matches_naive_reference() {
    let mut r = common::rng(7);
    for _ in 0..5 {
        let a = random_image(&mut r, 16, 16);
        let b = RgbImage { data: a.data.iter().map(|p| p.map(|v| (v + r.random_range(-0.2..0.2)).clamp(0.0, 1.0))).collect(), ..a.clone() };
        let (fast, slow) = (ssim(&a, &b).unwrap(), naive_ssim(&a, &b));
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
    }
    let a = random_image(&mut r, 16, 16);
    let b = random_image(&mut r, 16, 16);
    assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-6);
}

#[test]
fn ssim_rejects_small_and_mismatched_images() {
    let a = RgbImage::new(8, 8);
    assert!(ssim(&a, &a).is_err());
    assert!(ssim(&RgbImage::new(16, 16), &RgbImage::new(16, 17)).is_err());
}
