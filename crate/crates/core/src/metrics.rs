//! Overlap scores between binary masks.
//!
//! A pair of empty masks (or empty boundary bands) scores 1.0.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub const DEFAULT_BOUNDARY_DISTANCE: usize = 2;

fn overlap(a: &BinaryMask, b: &BinaryMask) -> (usize, usize, usize) {
    let mut inter = 0;
    let (mut na, mut nb) = (0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    (inter, na, nb)
}

/// `2|A∩B| / (|A| + |B|)`.
pub fn dice_score(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_shape(b, "dice_score")?;
    let (i, na, nb) = overlap(a, b);
    Ok(if na + nb == 0 {
        1.0
    } else {
        2.0 * i as f64 / (na + nb) as f64
    })
}

/// `|A∩B| / |A∪B|`.
pub fn iou_score(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_shape(b, "iou_score")?;
    let (i, na, nb) = overlap(a, b);
    let union = na + nb - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// Foreground pixels within Chebyshev distance `d` of the background.
/// Pixels outside the image count as background, so a full mask's band is
/// its border ring of width `d`.
pub fn boundary_band(m: &BinaryMask, d: usize) -> BinaryMask {
    let (h, w) = m.shape();
    // Square dilation of the complement is separable: rows, then columns.
    // Prefix sums give each window's background count in O(1).
    let mut rows = vec![false; h * w];
    let mut prefix = vec![0usize; w.max(h) + 1];
    for y in 0..h {
        for x in 0..w {
            prefix[x + 1] = prefix[x] + !m.get(y, x) as usize;
        }
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(d), (x + d).min(w - 1));
            let touches_edge = x < d || x + d >= w;
            rows[y * w + x] = touches_edge || prefix[hi + 1] > prefix[lo];
        }
    }
    BinaryMask::from_fn(h, w, |y, x| {
        if !m.get(y, x) {
            return false;
        }
        if y < d || y + d >= h {
            return true;
        }
        (y - d..=y + d).any(|yy| rows[yy * w + x])
    })
}

/// IoU of the boundary bands of `a` and `b` at distance `d ≥ 1`.
pub fn boundary_iou(a: &BinaryMask, b: &BinaryMask, d: usize) -> Result<f64> {
    a.check_same_shape(b, "boundary_iou")?;
    if d == 0 {
        return Err(Error::contract("boundary_iou: distance must be >= 1"));
    }
    iou_score(&boundary_band(a, d), &boundary_band(b, d))
}

/// Mean, population standard deviation and standard error of a sample.
///
/// The standard error uses the sample (n − 1) deviation; it is 0 for fewer
/// than two values. An empty sample gives NaN everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Summary {
                n,
                mean: f64::NAN,
                std: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let stderr = if n > 1 {
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Summary {
            n,
            mean,
            std: (ss / n as f64).sqrt(),
            stderr,
        }
    }
}
