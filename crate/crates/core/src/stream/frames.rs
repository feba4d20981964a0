//! `CVS1` frame-stream files.
//!
//! ```text
//! "CVS1"
//! u32 LE width, u32 LE height, u32 LE n_frames
//! f32 LE fps
//! u8 bit depth (16), 3 reserved zero bytes
//! n_frames × width × height u16 LE samples, row-major
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const STREAM_MAGIC: &[u8; 4] = b"CVS1";
const HEADER_LEN: usize = 24;

/// A sequence of equally sized 16-bit frames captured at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStream {
    width: usize,
    height: usize,
    fps: f32,
    frames: Vec<Vec<u16>>,
}

impl FrameStream {
    pub fn new(width: usize, height: usize, fps: f32, frames: Vec<Vec<u16>>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::contract(format!("fps must be positive, got {fps}")));
        }
        if let Some(i) = frames.iter().position(|f| f.len() != width * height) {
            return Err(Error::contract(format!(
                "frame {i} has {} samples, expected {width}x{height}",
                frames[i].len()
            )));
        }
        Ok(FrameStream {
            width,
            height,
            fps,
            frames,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[Vec<u16>] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &[u16] {
        &self.frames[i]
    }
}

pub fn encode_stream(stream: &FrameStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 2 * stream.width * stream.height * stream.n_frames());
    out.extend_from_slice(STREAM_MAGIC);
    out.extend_from_slice(&(stream.width as u32).to_le_bytes());
    out.extend_from_slice(&(stream.height as u32).to_le_bytes());
    out.extend_from_slice(&(stream.n_frames() as u32).to_le_bytes());
    out.extend_from_slice(&stream.fps.to_le_bytes());
    out.extend_from_slice(&[16, 0, 0, 0]);
    for f in &stream.frames {
        for s in f {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    out
}

pub fn decode_stream(bytes: &[u8], what: &str) -> Result<FrameStream> {
    let fail = |offset: usize, reason: String| Error::format(what, offset, reason);
    if bytes.len() < HEADER_LEN {
        return Err(fail(
            bytes.len(),
            format!("truncated header: need {HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..4] != STREAM_MAGIC {
        return Err(fail(0, format!("bad magic {:?}, expected \"CVS1\"", &bytes[..4])));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (width, height, n) = (u32_at(4), u32_at(8), u32_at(12));
    let fps = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if bytes[20] != 16 {
        return Err(fail(20, format!("unsupported bit depth {}, expected 16", bytes[20])));
    }
    if bytes[21..24] != [0, 0, 0] {
        return Err(fail(21, "reserved bytes must be zero".into()));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(fail(16, format!("fps must be positive, got {fps}")));
    }
    let frame_bytes = 2 * width * height;
    let payload = bytes.len() - HEADER_LEN;
    let need = frame_bytes
        .checked_mul(n)
        .ok_or_else(|| fail(12, "frame count overflows".into()))?;
    if payload < need {
        let complete = if frame_bytes == 0 { 0 } else { payload / frame_bytes };
        return Err(fail(
            HEADER_LEN + complete * frame_bytes,
            format!("truncated payload: header declares {n} frames, only {complete} present"),
        ));
    }
    if payload > need {
        return Err(fail(HEADER_LEN + need, "trailing bytes after last frame".into()));
    }
    let frames = bytes[HEADER_LEN..]
        .chunks_exact(frame_bytes.max(1))
        .take(n)
        .map(|f| f.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
        .collect::<Vec<Vec<u16>>>();
    let frames = if frame_bytes == 0 { vec![Vec::new(); n] } else { frames };
    FrameStream::new(width, height, fps, frames)
}

pub fn write_stream(stream: &FrameStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_stream(stream)).map_err(|e| Error::io(path, e))
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<FrameStream> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stream(&bytes, &path.display().to_string())
}
