//! Trajectory and image metrics.

use crate::dataio::{associate, TrajectoryRecord};
use crate::imaging::RgbImage;
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("need at least 3 matched poses, have {0}")]
    TooFewPoses(usize),
    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("image {0:?} is smaller than the 11x11 SSIM window")]
    TooSmall((usize, usize)),
}

/// `gt ≈ scale * rotation * est + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
    /// Per-point residual norms after alignment.
    pub residuals: Vec<f64>,
    /// The points were (near) collinear; only a translation was fitted.
    pub degenerate: bool,
}

impl Alignment {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation * p + self.translation
    }

    pub fn rmse(&self) -> f64 {
        let n = self.residuals.len().max(1) as f64;
        (self.residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt()
    }
}

/// Least-squares rigid (or similarity) alignment of `est` onto `gt`.
pub fn align_umeyama(est: &[Vector3<f64>], gt: &[Vector3<f64>], with_scale: bool) -> Result<Alignment, EvalError> {
    assert_eq!(est.len(), gt.len(), "point lists must be paired");
    let n = est.len();
    if n < 3 {
        return Err(EvalError::TooFewPoses(n));
    }
    let nf = n as f64;
    let mu_e = est.iter().sum::<Vector3<f64>>() / nf;
    let mu_g = gt.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let (de, dg) = (e - mu_e, g - mu_g);
        cov += dg * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= nf;
    var_e /= nf;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv = svd.singular_values;
    let mut spread = [0.0; 3];
    // Collinearity shows up in the spread of the estimate, not only in `cov`.
    let sym = {
        let mut m = Matrix3::zeros();
        for e in est {
            let d = e - mu_e;
            m += d * d.transpose();
        }
        m / nf
    };
    spread.copy_from_slice(sym.symmetric_eigenvalues().as_slice());
    spread.sort_by(|a, b| b.total_cmp(a));
    let degenerate = !(spread[0] > 1e-18) || spread[1] <= 1e-10 * spread[0];

    let (rotation, scale, translation) = if degenerate {
        log::warn!("degenerate alignment (collinear poses); using translation only");
        (Matrix3::identity(), 1.0, mu_g - mu_e)
    } else {
        let mut s = Matrix3::identity();
        if u.determinant() * v_t.determinant() < 0.0 {
            s[(2, 2)] = -1.0;
        }
        let r = u * s * v_t;
        sv[2] *= s[(2, 2)];
        let scale = if with_scale { sv.sum() / var_e } else { 1.0 };
        (r, scale, mu_g - scale * r * mu_e)
    };
    let mut a = Alignment { rotation, translation, scale, residuals: Vec::new(), degenerate };
    a.residuals = est.iter().zip(gt).map(|(e, g)| (g - a.apply(e)).norm()).collect();
    Ok(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteReport {
    pub rmse: f64,
    pub matched: usize,
    pub alignment: Alignment,
}

/// ATE-RMSE between two camera-to-world trajectories, matched by timestamp
/// within `max_dt`.
pub fn ate_rmse(
    est: &[TrajectoryRecord],
    gt: &[TrajectoryRecord],
    with_scale: bool,
    max_dt: f64,
) -> Result<AteReport, EvalError> {
    let te: Vec<f64> = est.iter().map(|r| r.timestamp).collect();
    let tg: Vec<f64> = gt.iter().map(|r| r.timestamp).collect();
    let pairs = associate(&te, &tg, max_dt);
    let pe: Vec<_> = pairs.iter().map(|&(i, _)| est[i].translation).collect();
    let pg: Vec<_> = pairs.iter().map(|&(_, j)| gt[j].translation).collect();
    let alignment = align_umeyama(&pe, &pg, with_scale)?;
    Ok(AteReport { rmse: alignment.rmse(), matched: pairs.len(), alignment })
}

fn check_shape(a: &RgbImage, b: &RgbImage) -> Result<(), EvalError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(EvalError::ShapeMismatch((a.width, a.height), (b.width, b.height)))
    }
}

/// Peak signal-to-noise ratio for images in [0, 1]; `+inf` when identical.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64, EvalError> {
    check_shape(a, b)?;
    let mut se = 0.0;
    for (x, y) in a.data.iter().zip(&b.data) {
        for c in 0..3 {
            se += (x[c] - y[c]).powi(2);
        }
    }
    let mse = se / (3 * a.data.len()).max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, w) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *w = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable Gaussian filter over the valid region only.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Local SSIM formula. Written so identical inputs give exactly 1.
#[inline]
pub fn ssim_formula(mu_a: f64, mu_b: f64, e_aa: f64, e_bb: f64, e_ab: f64) -> f64 {
    let (var_a, var_b, cov) = (e_aa - mu_a * mu_a, e_bb - mu_b * mu_b, e_ab - mu_a * mu_b);
    let num = (2.0 * (mu_a * mu_b) + SSIM_C1) * (2.0 * cov + SSIM_C2);
    let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
    num / den
}

/// Mean SSIM over the valid region, per channel, averaged over channels.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, EvalError> {
    check_shape(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(EvalError::TooSmall((w, h)));
    }
    let k = ssim_kernel();
    let mut total = 0.0;
    for c in 0..3 {
        let xa: Vec<f64> = a.data.iter().map(|p| p[c]).collect();
        let xb: Vec<f64> = b.data.iter().map(|p| p[c]).collect();
        let sq = |x: &[f64]| x.iter().map(|v| v * v).collect::<Vec<_>>();
        let ab: Vec<f64> = xa.iter().zip(&xb).map(|(p, q)| p * q).collect();
        let mu_a = filter_valid(&xa, w, h, &k);
        let mu_b = filter_valid(&xb, w, h, &k);
        let e_aa = filter_valid(&sq(&xa), w, h, &k);
        let e_bb = filter_valid(&sq(&xb), w, h, &k);
        let e_ab = filter_valid(&ab, w, h, &k);
        let n = mu_a.len();
        let sum: f64 = (0..n).map(|i| ssim_formula(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i])).sum();
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// One row of the per-sequence metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub sequence: String,
    pub ate_rmse_m: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub frames: usize,
    pub keyframes: usize,
    pub aligned_scale: Option<f64>,
}

impl MetricsRow {
    pub const HEADER: &'static str = "sequence,ate_rmse_m,psnr_db,ssim,frames,keyframes,aligned_scale";

    pub fn to_csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
        format!(
            "{},{},{},{},{},{},{}",
            self.sequence.replace(',', "_"),
            f(self.ate_rmse_m),
            f(self.psnr_db),
            f(self.ssim),
            self.frames,
            self.keyframes,
            f(self.aligned_scale)
        )
    }
}
