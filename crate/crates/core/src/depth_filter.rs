//! Interquartile-range filtering of dense depth priors.
//!
//! Monocular depth networks produce locally inconsistent values at depth
//! discontinuities; their distribution is left-skewed with a heavy right
//! tail. The filter computes Tukey fences `[Q1 - k IQR, Q3 + k IQR]` per
//! region and marks everything outside invalid. Depth values are never
//! modified, only the mask.

use crate::imaging::quantile_sorted;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DepthError {
    #[error("depth map has {0} valid pixels, need at least 2")]
    EmptyDepth(usize),
}

/// Per-pixel metric depth with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    /// Scale applied at load time (meters per stored unit).
    pub units_scale: f64,
}

impl DepthMap {
    /// Validity is derived from the values: finite and strictly positive.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        let valid = values.iter().map(|&z| z.is_finite() && z > 0.0).collect();
        Self { width, height, values, valid, units_scale: 1.0 }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_values(&self) -> Vec<f64> {
        self.values.iter().zip(&self.valid).filter(|(_, &ok)| ok).map(|(&z, _)| z).collect()
    }

    /// Median of the valid depths, or `None` when there are none.
    pub fn median(&self) -> Option<f64> {
        let mut v = self.valid_values();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(quantile_sorted(&v, 0.5))
    }

    /// Nearest-sample downsampling (top-left of each block). Depth is not
    /// averaged so discontinuities do not produce phantom surfaces.
    pub fn downsample(&self, factor: usize) -> DepthMap {
        if factor <= 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut values = Vec::with_capacity(w * h);
        let mut valid = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let i = v * factor * self.width + u * factor;
                values.push(self.values[i]);
                valid.push(self.valid[i]);
            }
        }
        DepthMap { width: w, height: h, values, valid, units_scale: self.units_scale }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Global,
    Patch,
}

impl std::str::FromStr for FilterMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "global" => Ok(FilterMode::Global),
            "patch" => Ok(FilterMode::Patch),
            other => Err(format!("unknown filter mode `{other}` (expected global|patch)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqrConfig {
    /// Patch side length in pixels; patches are non-overlapping.
    pub window: usize,
    /// Fence multiplier.
    pub k: f64,
    pub mode: FilterMode,
    /// Regions with fewer valid pixels pass through unfiltered.
    pub min_samples: usize,
}

impl Default for IqrConfig {
    fn default() -> Self {
        Self { window: 16, k: 1.5, mode: FilterMode::Patch, min_samples: 16 }
    }
}

/// Tukey fences of a set of samples. Returns `None` for an empty set.
pub fn tukey_fences(samples: &mut [f64], k: f64) -> Option<(f64, f64)> {
    if samples.is_empty() {
        return None;
    }
    samples.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(samples, 0.25);
    let q3 = quantile_sorted(samples, 0.75);
    let iqr = q3 - q1;
    Some((q1 - k * iqr, q3 + k * iqr))
}

/// Mask IQR outliers. Applied once per frame in the pipeline: re-filtering
/// a filtered map can tighten the fences further.
pub fn iqr_filter(depth: &DepthMap, cfg: &IqrConfig) -> DepthMap {
    let mut out = depth.clone();
    let (w, h) = (depth.width, depth.height);
    let win = match cfg.mode {
        FilterMode::Global => w.max(h).max(1),
        FilterMode::Patch => cfg.window.max(1),
    };
    let mut samples = Vec::with_capacity(win * win);
    for y0 in (0..h).step_by(win) {
        for x0 in (0..w).step_by(win) {
            let (x1, y1) = ((x0 + win).min(w), (y0 + win).min(h));
            samples.clear();
            for v in y0..y1 {
                for u in x0..x1 {
                    let i = v * w + u;
                    if depth.valid[i] {
                        samples.push(depth.values[i]);
                    }
                }
            }
            if samples.len() < cfg.min_samples {
                continue;
            }
            let Some((lo, hi)) = tukey_fences(&mut samples, cfg.k) else { continue };
            for v in y0..y1 {
                for u in x0..x1 {
                    let i = v * w + u;
                    if out.valid[i] && !(depth.values[i] >= lo && depth.values[i] <= hi) {
                        out.valid[i] = false;
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub skewness: f64,
    pub valid_fraction: f64,
}

/// Summary statistics over valid pixels. Skewness is the moment
/// coefficient `m3 / m2^1.5`, defined as 0 for constant data.
pub fn depth_stats(depth: &DepthMap) -> Result<DepthStats, DepthError> {
    let mut v = depth.valid_values();
    if v.len() < 2 {
        return Err(DepthError::EmptyDepth(v.len()));
    }
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let (m2, m3) = v.iter().fold((0.0, 0.0), |(a, b), &x| {
        let d = x - mean;
        (a + d * d, b + d * d * d)
    });
    let (m2, m3) = (m2 / n, m3 / n);
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    Ok(DepthStats {
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
        skewness,
        valid_fraction: v.len() as f64 / depth.values.len().max(1) as f64,
    })
}

/// Histogram of valid depths over `bins` equal-width bins spanning
/// `[min, max]`. Returns `(lo, hi, count)` triples.
pub fn depth_histogram(depth: &DepthMap, bins: usize) -> Vec<(f64, f64, usize)> {
    let v = depth.valid_values();
    if v.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for z in v {
        let b = (((z - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

/// CSV table `bin_lo,bin_hi,count` for the histogram report.
pub fn histogram_csv(hist: &[(f64, f64, usize)]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for (lo, hi, c) in hist {
        s.push_str(&format!("{lo:.6},{hi:.6},{c}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_is_untouched() {
        let d = DepthMap::from_values(32, 32, vec![2.5; 1024]);
        let f = iqr_filter(&d, &IqrConfig::default());
        assert_eq!(f, d);
    }

    #[test]
    fn single_extreme_outlier_is_masked() {
        let mut vals = vec![1.0; 256];
        vals[77] = 100.0;
        let d = DepthMap::from_values(16, 16, vals);
        let f = iqr_filter(&d, &IqrConfig::default());
        assert!(!f.valid[77]);
        assert_eq!(f.valid_count(), 255);
        assert_eq!(f.values, d.values);
    }

    #[test]
    fn small_regions_pass_through() {
        let mut vals = vec![1.0; 9];
        vals[4] = 50.0;
        let d = DepthMap::from_values(3, 3, vals);
        let f = iqr_filter(&d, &IqrConfig::default());
        assert_eq!(f.valid_count(), 9);
    }

    #[test]
    fn invalid_stays_invalid() {
        let mut vals: Vec<f64> = (0..256).map(|i| 1.0 + (i % 7) as f64 * 0.01).collect();
        vals[3] = 0.0;
        let d = DepthMap::from_values(16, 16, vals);
        let f = iqr_filter(&d, &IqrConfig::default());
        assert!(!f.valid[3]);
    }

    #[test]
    fn stats_on_five_values() {
        let d = DepthMap::from_values(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let s = depth_stats(&d).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!((s.min, s.max), (1.0, 5.0));
        assert_eq!(s.skewness, 0.0);
        assert_eq!(s.valid_fraction, 1.0);
    }

    #[test]
    fn stats_constant_and_empty() {
        let d = DepthMap::from_values(4, 1, vec![3.0; 4]);
        assert_eq!(depth_stats(&d).unwrap().skewness, 0.0);
        let d = DepthMap::from_values(2, 1, vec![0.0, 1.0]);
        assert_eq!(depth_stats(&d), Err(DepthError::EmptyDepth(1)));
    }

    #[test]
    fn right_tail_gives_positive_skew() {
        let mut vals = vec![1.0; 99];
        vals.push(10.0);
        let d = DepthMap::from_values(100, 1, vals);
        assert!(depth_stats(&d).unwrap().skewness > 0.0);
    }

    #[test]
    fn histogram_counts_everything() {
        let d = DepthMap::from_values(4, 1, vec![1.0, 1.5, 2.0, 4.0]);
        let h = depth_histogram(&d, 3);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 4);
        assert_eq!(h[2].2, 1);
        assert!(histogram_csv(&h).starts_with("bin_lo,bin_hi,count\n"));
    }
}
