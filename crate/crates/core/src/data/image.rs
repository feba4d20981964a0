use crate::error::{Error, Result};
use crate::mask::{flip_h_slice, rot90_slice, BinaryMask};
use crate::nn::Tensor;

/// Integer samples exactly as stored in a PNM file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    /// Row-major, channels interleaved.
    pub samples: Vec<u16>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, maxval: u16, samples: Vec<u16>) -> Result<Self> {
        if samples.len() != width * height * channels {
            return Err(Error::contract(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                samples.len()
            )));
        }
        if maxval == 0 {
            return Err(Error::contract("maxval must be >= 1"));
        }
        if let Some(s) = samples.iter().find(|&&s| s > maxval) {
            return Err(Error::contract(format!("sample {s} exceeds maxval {maxval}")));
        }
        Ok(RawImage {
            width,
            height,
            channels,
            maxval,
            samples,
        })
    }
}

/// Single-channel floating-point image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::contract(format!(
                "image {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(GrayImage { h, w, data })
    }

    pub fn filled(h: usize, w: usize, v: f32) -> Self {
        GrayImage {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        GrayImage { h, w, data }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.w + x] = v;
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        (self.data.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<GrayImage> {
        if y0 + h > self.h || x0 + w > self.w {
            return Err(Error::contract(format!(
                "crop {h}x{w} at ({y0}, {x0}) exceeds image {}x{}",
                self.h, self.w
            )));
        }
        Ok(GrayImage::from_fn(h, w, |y, x| self.get(y0 + y, x0 + x)))
    }

    /// Rotates counter-clockwise by `k` quarter turns.
    pub fn rot90(&self, k: usize) -> GrayImage {
        let (data, h, w) = rot90_slice(&self.data, self.h, self.w, k);
        GrayImage { h, w, data }
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        GrayImage {
            h: self.h,
            w: self.w,
            data: flip_h_slice(&self.data, self.h, self.w),
        }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Reads a single-channel raw image as `sample / maxval`.
    pub fn from_raw(raw: &RawImage) -> Result<GrayImage> {
        if raw.channels != 1 {
            return Err(Error::contract(format!(
                "expected a single-channel image, got {} channels",
                raw.channels
            )));
        }
        let scale = raw.maxval as f32;
        Ok(GrayImage {
            h: raw.height,
            w: raw.width,
            data: raw.samples.iter().map(|&s| s as f32 / scale).collect(),
        })
    }

    /// Quantizes values clipped to `[0, 1]` onto `0..=maxval`.
    pub fn to_raw(&self, maxval: u16) -> RawImage {
        let m = maxval as f32;
        RawImage {
            width: self.w,
            height: self.h,
            channels: 1,
            maxval,
            samples: self
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * m).round() as u16)
                .collect(),
        }
    }
}

impl BinaryMask {
    /// Nonzero samples become foreground.
    pub fn from_raw(raw: &RawImage) -> Result<BinaryMask> {
        if raw.channels != 1 {
            return Err(Error::contract(format!(
                "mask image must be single-channel, got {} channels",
                raw.channels
            )));
        }
        BinaryMask::from_vec(
            raw.height,
            raw.width,
            raw.samples.iter().map(|&s| (s > 0) as u8).collect(),
        )
    }

    /// 8-bit image with foreground at 255.
    pub fn to_raw(&self) -> RawImage {
        RawImage {
            width: self.width(),
            height: self.height(),
            channels: 1,
            maxval: 255,
            samples: self.data().iter().map(|&v| v as u16 * 255).collect(),
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<BinaryMask> {
        if y0 + h > self.height() || x0 + w > self.width() {
            return Err(Error::contract(format!(
                "crop {h}x{w} at ({y0}, {x0}) exceeds mask {:?}",
                self.shape()
            )));
        }
        Ok(BinaryMask::from_fn(h, w, |y, x| self.get(y0 + y, x0 + x)))
    }
}

/// Luminance `0.299R + 0.587G + 0.114B` of a 3-channel image, scaled to `[0, 1]`.
pub fn to_grayscale(rgb: &RawImage) -> Result<GrayImage> {
    if rgb.channels != 3 {
        return Err(Error::contract(format!(
            "to_grayscale expects 3 channels, got {}",
            rgb.channels
        )));
    }
    let scale = rgb.maxval as f64;
    let data = rgb
        .samples
        .chunks_exact(3)
        .map(|px| ((0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64) / scale) as f32)
        .collect();
    Ok(GrayImage {
        h: rgb.height,
        w: rgb.width,
        data,
    })
}

/// Reads a `P5` or `P6` file as a grayscale image in `[0, 1]`.
pub fn read_gray(path: impl AsRef<std::path::Path>) -> Result<GrayImage> {
    let raw = super::read_pnm(path)?;
    if raw.channels == 3 {
        to_grayscale(&raw)
    } else {
        GrayImage::from_raw(&raw)
    }
}

/// Min-max rescale to `[0, 1]`; a constant image maps to zeros.
pub fn normalize(image: &GrayImage) -> GrayImage {
    let (lo, hi) = image
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let data = if range > 0.0 {
        image.data.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; image.data.len()]
    };
    GrayImage {
        h: image.h,
        w: image.w,
        data,
    }
}

/// Stacks equally sized images into an `[N, 1, H, W]` tensor.
pub fn images_to_tensor<'a>(images: impl IntoIterator<Item = &'a GrayImage>) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut shape = None;
    let mut n = 0;
    for img in images {
        match shape {
            None => shape = Some(img.shape()),
            Some(s) if s != img.shape() => {
                return Err(Error::contract(format!(
                    "cannot batch images of shape {s:?} and {:?}",
                    img.shape()
                )))
            }
            _ => {}
        }
        data.extend_from_slice(&img.data);
        n += 1;
    }
    let Some((h, w)) = shape else {
        return Err(Error::contract("cannot batch zero images"));
    };
    Tensor::from_vec(&[n, 1, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_coefficients() {
        let px = |r, g, b| RawImage::new(1, 1, 3, 255, vec![r, g, b]).unwrap();
        assert_eq!(to_grayscale(&px(255, 255, 255)).unwrap().data()[0], 1.0);
        assert!((to_grayscale(&px(0, 255, 0)).unwrap().data()[0] - 0.587).abs() < 1e-6);
        assert!((to_grayscale(&px(77, 77, 77)).unwrap().data()[0] - 77.0 / 255.0).abs() < 1e-6);
        let gray = RawImage::new(1, 1, 1, 255, vec![3]).unwrap();
        assert_eq!(to_grayscale(&gray).unwrap_err().category(), "contract");
    }

    #[test]
    fn normalize_examples() {
        let img = GrayImage::new(1, 3, vec![0.0, 128.0, 255.0]).unwrap();
        let n = normalize(&img);
        assert_eq!(n.data()[0], 0.0);
        assert!((n.data()[1] - 128.0 / 255.0).abs() < 1e-7);
        assert_eq!(n.data()[2], 1.0);
        assert_eq!(normalize(&n), n);
        assert!(normalize(&GrayImage::filled(2, 2, 0.7))
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn raw_roundtrip_and_crop() {
        let img = GrayImage::from_fn(4, 5, |y, x| (y * 5 + x) as f32 / 19.0);
        assert_eq!(GrayImage::from_raw(&img.to_raw(19)).unwrap(), img);
        let c = img.crop(1, 2, 2, 3).unwrap();
        assert_eq!(c.get(0, 0), img.get(1, 2));
        assert!(img.crop(3, 0, 2, 1).is_err());
    }
}
