//! Binary masks and the mask utilities used around inference.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Row-major `h × w` mask holding only 0 and 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(h: usize, w: usize) -> Self {
        BinaryMask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::contract(format!(
                "mask {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::contract(format!(
                "mask value {} at index {i} is not 0 or 1",
                data[i]
            )));
        }
        Ok(BinaryMask { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x) as u8);
            }
        }
        BinaryMask { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v as u8;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    pub fn complement(&self) -> Self {
        BinaryMask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Foreground as 0.0 / 1.0 values.
    pub fn to_values<T: Scalar>(&self) -> Vec<T> {
        self.data
            .iter()
            .map(|&v| if v == 1 { T::one() } else { T::zero() })
            .collect()
    }

    /// Rotates counter-clockwise by `k` quarter turns.
    pub fn rot90(&self, k: usize) -> Self {
        let (data, h, w) = rot90_slice(&self.data, self.h, self.w, k);
        BinaryMask { h, w, data }
    }

    pub fn flip_horizontal(&self) -> Self {
        BinaryMask {
            h: self.h,
            w: self.w,
            data: flip_h_slice(&self.data, self.h, self.w),
        }
    }

    pub(crate) fn check_same_shape(&self, other: &BinaryMask, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::contract(format!(
                "{what}: mask shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Counter-clockwise rotation of a row-major plane by `k` quarter turns.
/// Returns the rotated data and its `(h, w)`.
pub(crate) fn rot90_slice<V: Copy>(src: &[V], h: usize, w: usize, k: usize) -> (Vec<V>, usize, usize) {
    match k % 4 {
        0 => (src.to_vec(), h, w),
        1 => {
            // out(y, x) = in(x, w-1-y), out is w × h
            let mut out = Vec::with_capacity(src.len());
            for y in 0..w {
                for x in 0..h {
                    out.push(src[x * w + (w - 1 - y)]);
                }
            }
            (out, w, h)
        }
        2 => (src.iter().rev().copied().collect(), h, w),
        _ => {
            // out(y, x) = in(h-1-x, y)
            let mut out = Vec::with_capacity(src.len());
            for y in 0..w {
                for x in 0..h {
                    out.push(src[(h - 1 - x) * w + y]);
                }
            }
            (out, w, h)
        }
    }
}

pub(crate) fn flip_h_slice<V: Copy>(src: &[V], h: usize, w: usize) -> Vec<V> {
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        out.extend(src[y * w..(y + 1) * w].iter().rev());
    }
    out
}

/// Pixel adjacency used for connected components.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::contract(format!("connectivity must be 4 or 8, got {v}"))),
        }
    }
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }
}

/// Labels connected foreground components. Labels start at 1 and follow the
/// row-major order of each component's first pixel; background is 0.
/// Returns the label plane and each component's size (index = label − 1).
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let (h, w) = mask.shape();
    let mut labels = vec![0u32; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for &(dy, dx) in connectivity.offsets() {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.data[j] == 1 && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps only the component with the largest area. On a tie the component
/// whose first pixel comes earliest in row-major order wins. An empty mask
/// stays empty.
pub fn largest_component(mask: &BinaryMask, connectivity: Connectivity) -> BinaryMask {
    let (labels, sizes) = label_components(mask, connectivity);
    let mut best: Option<(usize, u32)> = None;
    for (i, &s) in sizes.iter().enumerate() {
        if best.is_none_or(|(bs, _)| s > bs) {
            best = Some((s, i as u32 + 1));
        }
    }
    let keep = best.map_or(0, |(_, l)| l);
    BinaryMask {
        h: mask.h,
        w: mask.w,
        data: labels.iter().map(|&l| (keep != 0 && l == keep) as u8).collect(),
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(Error::contract(format!("threshold {theta} must lie in (0, 1)")))
    }
}

/// Foreground where `prob ≥ theta`. The tensor's trailing two dims are the
/// plane; all leading dims must be 1.
pub fn binarize<T: Scalar>(prob: &Tensor<T>, theta: f64) -> Result<BinaryMask> {
    check_theta(theta)?;
    let shape = prob.shape();
    if shape.len() < 2 || shape[..shape.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::contract(format!(
            "binarize: expected a single plane, got shape {shape:?}"
        )));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let t = T::lit(theta);
    Ok(BinaryMask {
        h,
        w,
        data: prob.data().iter().map(|&p| (p >= t) as u8).collect(),
    })
}

/// Binarizes every sample of an `[N, 1, H, W]` probability batch.
pub fn binarize_batch<T: Scalar>(prob: &Tensor<T>, theta: f64) -> Result<Vec<BinaryMask>> {
    check_theta(theta)?;
    let (n, c, h, w) = prob.dims4()?;
    if c != 1 {
        return Err(Error::contract(format!("binarize_batch: expected 1 channel, got {c}")));
    }
    let t = T::lit(theta);
    Ok((0..n)
        .map(|i| BinaryMask {
            h,
            w,
            data: prob.data()[i * h * w..(i + 1) * h * w]
                .iter()
                .map(|&p| (p >= t) as u8)
                .collect(),
        })
        .collect())
}

/// Stacks masks into an `[N, 1, H, W]` tensor of 0/1 values.
pub fn masks_to_tensor<T: Scalar>(masks: &[BinaryMask]) -> Result<Tensor<T>> {
    let Some(first) = masks.first() else {
        return Err(Error::contract("masks_to_tensor: empty batch"));
    };
    let mut data = Vec::with_capacity(masks.len() * first.data.len());
    for m in masks {
        first.check_same_shape(m, "masks_to_tensor")?;
        data.extend(m.to_values::<T>());
    }
    Tensor::from_vec(&[masks.len(), 1, first.h, first.w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(h, w, |y, x| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn rejects_non_binary_values() {
        assert!(BinaryMask::from_vec(1, 2, vec![0, 2]).is_err());
        assert!(BinaryMask::from_vec(1, 2, vec![0]).is_err());
    }

    #[test]
    fn rotation_cycles() {
        let m = mask(&["#..", "##."]);
        let r = m.rot90(1);
        assert_eq!(r.shape(), (3, 2));
        // top-right of the original moves to the top-left corner
        assert_eq!(r, mask(&["..", ".#", "##"]));
        assert_eq!(m.rot90(1).rot90(3), m);
        assert_eq!(m.rot90(2), m.rot90(1).rot90(1));
        assert_eq!(m.flip_horizontal().flip_horizontal(), m);
    }

    #[test]
    fn largest_of_five_and_three() {
        let m = mask(&["###..", "##...", ".....", "...##", "....#"]);
        let out = largest_component(&m, Connectivity::Four);
        assert_eq!(out, mask(&["###..", "##...", ".....", ".....", "....."]));
    }

    #[test]
    fn single_component_unchanged_and_empty_stays_empty() {
        let m = mask(&[".#.", "###", ".#."]);
        assert_eq!(largest_component(&m, Connectivity::Four), m);
        let e = BinaryMask::zeros(3, 3);
        assert_eq!(largest_component(&e, Connectivity::Eight), e);
    }

    #[test]
    fn tie_goes_to_earliest_first_pixel() {
        let m = mask(&["#.#", "#.#"]);
        assert_eq!(largest_component(&m, Connectivity::Four), mask(&["#..", "#.."]));
    }

    #[test]
    fn diagonal_touch_depends_on_connectivity() {
        let m = mask(&["#..", ".#.", "..#"]);
        assert_eq!(largest_component(&m, Connectivity::Eight), m);
        assert_eq!(largest_component(&m, Connectivity::Four).count(), 1);
        assert!(Connectivity::try_from(6).is_err());
    }

    #[test]
    fn binarize_is_inclusive_at_threshold() {
        let p = Tensor::from_vec(&[1, 1, 1, 3], vec![0.5f32, 0.49, 0.9]).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().data(), &[1, 0, 1]);
        assert!(binarize(&Tensor::<f32>::zeros(&[4, 4]), 0.5).unwrap().is_empty());
        assert!(binarize(&p, 1.0).is_err());
        assert!(binarize(&Tensor::<f32>::zeros(&[2, 1, 4, 4]), 0.5).is_err());
    }
}
