//! Binary PGM (`P5`) read/write and binary PPM (`P6`) read.
//!
//! Samples wider than 8 bits (maxval > 255) are stored as two big-endian bytes.

use std::path::Path;

use super::RawImage;
use crate::error::{Error, Result};

struct Header<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl Header<'_> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(self.what, self.pos, reason)
    }

    /// Skips whitespace and `#` comments.
    fn skip_space(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.err(format!("expected {field}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(self.what, start, format!("{field} out of range")))
    }
}

/// Decodes a `P5` or `P6` image.
pub fn decode_pnm(bytes: &[u8], what: &str) -> Result<RawImage> {
    let mut h = Header {
        buf: bytes,
        pos: 0,
        what,
    };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(h.err("missing PNM magic"));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        c @ (b'1'..=b'4') => {
            return Err(h.err(format!(
                "unsupported PNM variant P{} (only binary P5/P6 are supported)",
                c as char
            )))
        }
        _ => return Err(h.err("missing PNM magic")),
    };
    h.pos = 2;
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(h.err(format!("maxval {maxval} outside 1..=65535")));
    }
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return Err(h.err("expected a single whitespace byte after maxval"));
    }
    h.pos += 1;
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let n = width * height * channels;
    let payload = &bytes[h.pos..];
    if payload.len() < n * bytes_per {
        return Err(Error::format(
            what,
            bytes.len(),
            format!(
                "truncated payload: {width}x{height}x{channels} needs {} bytes, found {}",
                n * bytes_per,
                payload.len()
            ),
        ));
    }
    let samples: Vec<u16> = if bytes_per == 1 {
        payload[..n].iter().map(|&b| b as u16).collect()
    } else {
        payload[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(i) = samples.iter().position(|&s| s as usize > maxval) {
        return Err(Error::format(
            what,
            h.pos + i * bytes_per,
            format!("sample {} exceeds maxval {maxval}", samples[i]),
        ));
    }
    RawImage::new(width, height, channels, maxval as u16, samples)
}

/// Encodes a single-channel image as `P5`.
pub fn encode_pgm(image: &RawImage) -> Result<Vec<u8>> {
    if image.channels != 1 {
        return Err(Error::contract(format!(
            "PGM holds one channel, image has {}",
            image.channels
        )));
    }
    let mut out = format!("P5\n{} {}\n{}\n", image.width, image.height, image.maxval).into_bytes();
    if image.maxval > 255 {
        for s in &image.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(image.samples.iter().map(|&s| s as u8));
    }
    Ok(out)
}

/// Reads a `P5` grayscale image.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<RawImage> {
    let raw = read_pnm(&path)?;
    if raw.channels != 1 {
        return Err(Error::format(
            path.as_ref().display().to_string(),
            0,
            "expected a P5 grayscale image, found P6",
        ));
    }
    Ok(raw)
}

/// Reads a `P5` or `P6` image.
pub fn read_pnm(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, &path.display().to_string())
}

pub fn write_pgm(image: &RawImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(image)?).map_err(|e| Error::io(path, e))
}
