use ndarray::{Array2, ArrayView2};

use super::NetError;

/// A height-normalized text line. Ink is high intensity; every column is one
/// time step of the recognizer.
#[derive(Debug, Clone, PartialEq)]
pub struct LineImage {
    pixels: Array2<f64>,
}

impl LineImage {
    /// Wrap an array of intensities in `[0, 1]`, shape `height x width`.
    pub fn new(pixels: Array2<f64>) -> Result<Self, NetError> {
        if pixels.is_empty() {
            return Err(NetError::EmptyImage);
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(NetError::IntensityOutOfRange(*v));
        }
        Ok(LineImage { pixels })
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn pixels(&self) -> ArrayView2<'_, f64> {
        self.pixels.view()
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }
}

/// Linear resampling along one axis with pixel-center alignment.
fn resample_axis(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Scale `raw` (ink high) to `target_height` rows, keeping the aspect ratio,
/// and stretch the intensities to `[0, 1]`. A constant image maps to zeros.
pub fn normalize_line(raw: ArrayView2<f64>, target_height: usize) -> Result<LineImage, NetError> {
    let (h, w) = raw.dim();
    if h == 0 || w == 0 || target_height == 0 {
        return Err(NetError::EmptyImage);
    }
    let mut img = if h == target_height {
        raw.to_owned()
    } else {
        let new_w = ((w as f64 * target_height as f64 / h as f64).round() as usize).max(1);
        let rows = resample_axis(h, target_height);
        let cols = resample_axis(w, new_w);
        Array2::from_shape_fn((target_height, new_w), |(y, x)| {
            let (y0, y1, fy) = rows[y];
            let (x0, x1, fx) = cols[x];
            let top = raw[[y0, x0]] * (1.0 - fx) + raw[[y0, x1]] * fx;
            let bottom = raw[[y1, x0]] * (1.0 - fx) + raw[[y1, x1]] * fx;
            top * (1.0 - fy) + bottom * fy
        })
    };
    let (lo, hi) = img
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(NetError::NonFinite);
    }
    if hi > lo {
        if lo != 0.0 || hi != 1.0 {
            img.mapv_inplace(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0));
        }
    } else {
        img.fill(0.0);
    }
    LineImage::new(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_at_target_height() {
        let raw = array![[0.0, 0.5, 1.0], [0.25, 0.75, 0.0]];
        let line = normalize_line(raw.view(), 2).unwrap();
        assert_eq!(line.pixels(), raw.view());
    }

    #[test]
    fn constant_image_becomes_zero() {
        let raw = Array2::from_elem((4, 7), 0.0);
        let line = normalize_line(raw.view(), 4).unwrap();
        assert!(line.pixels().iter().all(|&v| v == 0.0));
        let raw = Array2::from_elem((4, 7), 0.6);
        assert!(normalize_line(raw.view(), 8).unwrap().pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn halving_matches_block_average() {
        let raw = Array2::from_shape_fn((8, 12), |(y, x)| ((y * 13 + x * 7) % 11) as f64 / 10.0);
        let line = normalize_line(raw.view(), 4).unwrap();
        assert_eq!(line.height(), 4);
        assert_eq!(line.width(), 6);
        // oracle: mean of each 2x2 block, then min-max stretch
        let blocks = Array2::from_shape_fn((4, 6), |(y, x)| {
            (raw[[2 * y, 2 * x]] + raw[[2 * y + 1, 2 * x]] + raw[[2 * y, 2 * x + 1]] + raw[[2 * y + 1, 2 * x + 1]]) / 4.0
        });
        let lo = blocks.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = blocks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (a, b) in line.pixels().iter().zip(blocks.iter()) {
            assert!((a - (b - lo) / (hi - lo)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_area_is_rejected() {
        let raw = Array2::<f64>::zeros((0, 5));
        assert!(matches!(normalize_line(raw.view(), 4), Err(NetError::EmptyImage)));
    }

    #[test]
    fn out_of_range_pixels_are_rejected() {
        assert!(LineImage::new(array![[1.5]]).is_err());
    }
}
