//! Plain row-major image buffers used throughout the pipeline.

/// RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![[0.0; 3]; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> [f64; 3] {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, c: [f64; 3]) {
        self.data[v * self.width + u] = c;
    }

    pub fn same_shape(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Rec. 601 luma.
    pub fn luminance(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]).collect(),
        }
    }

    /// Box-filter downsampling by an integer factor; trailing rows/columns
    /// that do not fill a block are dropped.
    pub fn downsample(&self, factor: usize) -> RgbImage {
        if factor <= 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f64;
        RgbImage::from_fn(w, h, |u, v| {
            let mut acc = [0.0; 3];
            for dv in 0..factor {
                for du in 0..factor {
                    let c = self.get(u * factor + du, v * factor + dv);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            acc.map(|x| x * norm)
        })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|c| c.map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        let data = bytes
            .chunks_exact(3)
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();
        Self { width, height, data }
    }
}

/// Single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    /// Sobel gradient magnitude with replicated borders.
    pub fn sobel_magnitude(&self) -> GrayImage {
        let (w, h) = (self.width as isize, self.height as isize);
        let at = |u: isize, v: isize| self.get(u.clamp(0, w - 1) as usize, v.clamp(0, h - 1) as usize);
        let mut out = GrayImage::new(self.width, self.height);
        for v in 0..h {
            for u in 0..w {
                let gx = (at(u + 1, v - 1) + 2.0 * at(u + 1, v) + at(u + 1, v + 1))
                    - (at(u - 1, v - 1) + 2.0 * at(u - 1, v) + at(u - 1, v + 1));
                let gy = (at(u - 1, v + 1) + 2.0 * at(u, v + 1) + at(u + 1, v + 1))
                    - (at(u - 1, v - 1) + 2.0 * at(u, v - 1) + at(u + 1, v - 1));
                out.data[(v * w + u) as usize] = (gx * gx + gy * gy).sqrt();
            }
        }
        out
    }
}

/// Quantile of already sorted data by linear interpolation between order
/// statistics: position `(n - 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}
