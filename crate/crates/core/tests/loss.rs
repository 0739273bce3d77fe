mod common;

use common::*;
use rand::Rng;
use splatslam::depth_filter::DepthMap;
use splatslam::imaging::RgbImage;
use splatslam::rasterizer::{render, RenderConfig};
use splatslam::slam::loss_from_render;

const LAMBDAS: [f64; 5] = [0.0, 0.25, 0.5, 0.9, 1.0];

#[test]
fn total_is_affine_in_lambda() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let k = intrinsics(24, 20);
        let map = random_scene(&mut r, 10, &k);
        let pose = random_pose(&mut r, 0.05, 0.05);
        let out = render(&map, &pose, &k, &RenderConfig::default());
        let n = k.pixel_count();
        let rgb = RgbImage::from_fn(24, 20, |_, _| [r.random(), r.random(), r.random()]);
        let values = (0..n).map(|_| if r.random_bool(0.2) { 0.0 } else { r.random_range(0.5..4.0) }).collect();
        let depth = DepthMap::from_values(24, 20, values);

        // Independent e_pho / e_geo.
        let e_pho = out.color.data.iter().zip(&rgb.data).map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>()).sum::<f64>() / (3 * n) as f64;
        let mask: Vec<usize> = (0..n).filter(|&i| depth.valid[i] && out.alpha[i] > 0.5).collect();
        let e_geo = if mask.is_empty() { 0.0 } else { mask.iter().map(|&i| (out.depth[i] - depth.values[i]).abs()).sum::<f64>() / mask.len() as f64 };

        let pho_only = loss_from_render(&out, &rgb, &depth, 1.0, 0.5);
        let geo_only = loss_from_render(&out, &rgb, &depth, 0.0, 0.5);
        for lambda in LAMBDAS {
            let l = loss_from_render(&out, &rgb, &depth, lambda, 0.5);
            assert!((l.e_pho - e_pho).abs() < 1e-12);
            assert!((l.e_geo - e_geo).abs() < 1e-12);
            assert!((l.total - (lambda * e_pho + (1.0 - lambda) * e_geo)).abs() < 1e-12);
            // Per-pixel gradients scale the same way.
            for i in 0..n {
                for c in 0..3 {
                    assert!((l.grad_color[i][c] - lambda * pho_only.grad_color[i][c]).abs() < 1e-15);
                }
                assert!((l.grad_depth[i] - (1.0 - lambda) * geo_only.grad_depth[i]).abs() < 1e-15);
                if !depth.valid[i] {
                    assert_eq!(l.grad_depth[i], 0.0);
                }
            }
        }
    }
}

#[test]
fn empty_geometric_mask_is_reported() {
    let k = intrinsics(8, 8);
    let map = random_scene(&mut rng(1), 3, &k);
    let out = render(&map, &splatslam::geometry::SE3Pose::identity(), &k, &RenderConfig::default());
    let depth = DepthMap::from_values(8, 8, vec![0.0; 64]);
    let l = loss_from_render(&out, &RgbImage::new(8, 8), &depth, 0.5, 0.5);
    assert!(l.no_valid_pixels);
    assert_eq!(l.e_geo, 0.0);
    assert_eq!(l.total, 0.5 * l.e_pho);
}
