use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::pnm::{read_pgm, write_pgm};
use super::GrayImage;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Which imaging domain a sample comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    /// Large annotated dataset used for pretraining.
    Source,
    /// Small dataset the model is adapted to.
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Config(format!(
                "unknown domain {other:?} (expected source|target)"
            ))),
        }
    }
}

/// One square training patch with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub source_id: String,
    /// `(row, col)` within the grid it was cut from.
    pub grid_pos: (usize, usize),
    pub domain: Domain,
}

impl PatchRecord {
    pub fn new(
        image: GrayImage,
        mask: BinaryMask,
        source_id: impl Into<String>,
        grid_pos: (usize, usize),
        domain: Domain,
    ) -> Result<Self> {
        if image.shape() != mask.shape() {
            return Err(Error::contract(format!(
                "patch image {:?} and mask {:?} differ in shape",
                image.shape(),
                mask.shape()
            )));
        }
        Ok(PatchRecord {
            image,
            mask,
            source_id: source_id.into(),
            grid_pos,
            domain,
        })
    }

    pub fn size(&self) -> usize {
        self.image.height()
    }
}

/// Cuts a `grid_n × grid_n` grid of non-overlapping `patch`-sized squares,
/// row-major. With `centered` the grid covers the central
/// `grid_n·patch` square; otherwise it starts at the top-left corner.
pub fn extract_patch_grid(
    image: &GrayImage,
    mask: &BinaryMask,
    grid_n: usize,
    patch: usize,
    centered: bool,
    source_id: &str,
    domain: Domain,
) -> Result<Vec<PatchRecord>> {
    if image.shape() != mask.shape() {
        return Err(Error::contract(format!(
            "image {:?} and mask {:?} differ in shape",
            image.shape(),
            mask.shape()
        )));
    }
    if grid_n == 0 || patch == 0 {
        return Err(Error::contract("grid_n and patch must be >= 1"));
    }
    let side = grid_n * patch;
    let (h, w) = image.shape();
    if h < side || w < side {
        return Err(Error::contract(format!(
            "image {h}x{w} too small: a {grid_n}x{grid_n} grid of {patch}px patches needs at least {side}x{side}"
        )));
    }
    let (y0, x0) = if centered {
        ((h - side) / 2, (w - side) / 2)
    } else {
        (0, 0)
    };
    let mut out = Vec::with_capacity(grid_n * grid_n);
    for row in 0..grid_n {
        for col in 0..grid_n {
            let (y, x) = (y0 + row * patch, x0 + col * patch);
            out.push(PatchRecord {
                image: image.crop(y, x, patch, patch)?,
                mask: mask.crop(y, x, patch, patch)?,
                source_id: source_id.to_string(),
                grid_pos: (row, col),
                domain,
            });
        }
    }
    Ok(out)
}

/// Keeps records whose positive fraction is strictly above `min_fraction`.
pub fn filter_by_label_area(records: Vec<PatchRecord>, min_fraction: f64) -> Vec<PatchRecord> {
    records
        .into_iter()
        .filter(|r| r.mask.fraction() > min_fraction)
        .collect()
}

/// Seeded shuffle, then the first `round(n·val_fraction)` items (at least
/// one, at most `n − 1`) become the validation set.
pub fn split_train_val<T>(records: Vec<T>, val_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if records.len() < 2 {
        return Err(Error::contract(format!(
            "split_train_val needs at least 2 records, got {}",
            records.len()
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::contract(format!(
            "val_fraction {val_fraction} must lie in (0, 1)"
        )));
    }
    let n = records.len();
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<T>> = records.into_iter().map(Some).collect();
    let val = order[..n_val].iter().map(|&i| slots[i].take().unwrap()).collect();
    let train = order[n_val..].iter().map(|&i| slots[i].take().unwrap()).collect();
    Ok((train, val))
}

fn cache_stem(r: &PatchRecord) -> String {
    format!("{}_{}_{}", r.source_id, r.grid_pos.0, r.grid_pos.1)
}

/// Writes `<source>_<row>_<col>.img.pgm` (16-bit) and `.mask.pgm` (8-bit) pairs.
pub fn write_patch_cache(dir: impl AsRef<Path>, records: &[PatchRecord]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(records.len());
    for r in records {
        let stem = cache_stem(r);
        let img = dir.join(format!("{stem}.img.pgm"));
        write_pgm(&r.image.to_raw(65535), &img)?;
        write_pgm(&r.mask.to_raw(), dir.join(format!("{stem}.mask.pgm")))?;
        written.push(img);
    }
    Ok(written)
}

/// Loads every image/mask pair of a cache directory, ordered by file name.
pub fn read_patch_cache(dir: impl AsRef<Path>, domain: Domain) -> Result<Vec<PatchRecord>> {
    let dir = dir.as_ref();
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".img.pgm") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    let mut out = Vec::with_capacity(stems.len());
    for stem in stems {
        let mut parts = stem.rsplitn(3, '_');
        let (col, row, source) = (parts.next(), parts.next(), parts.next());
        let parse = |s: Option<&str>| s.and_then(|v| v.parse::<usize>().ok());
        let (Some(col), Some(row), Some(source)) = (parse(col), parse(row), source) else {
            return Err(Error::format(
                dir.join(format!("{stem}.img.pgm")).display().to_string(),
                0,
                "file name is not <source>_<row>_<col>.img.pgm",
            ));
        };
        let image = GrayImage::from_raw(&read_pgm(dir.join(format!("{stem}.img.pgm")))?)?;
        let mask = BinaryMask::from_raw(&read_pgm(dir.join(format!("{stem}.mask.pgm")))?)?;
        out.push(PatchRecord::new(image, mask, source, (row, col), domain)?);
    }
    Ok(out)
}
