//! Image I/O, patch extraction, augmentation and dataset bookkeeping.

mod augment;
mod image;
mod manifest;
mod patch;
pub mod pnm;

pub use augment::{add_gaussian_noise, augment, AugmentPolicy};
pub use image::{images_to_tensor, normalize, read_gray, to_grayscale, GrayImage, RawImage};
pub use manifest::{read_manifest, write_manifest, ManifestEntry, MANIFEST_HEADER};
pub use patch::{
    extract_patch_grid, filter_by_label_area, read_patch_cache, split_train_val, write_patch_cache, Domain, PatchRecord,
};
pub use pnm::{read_pgm, read_pnm, write_pgm};
