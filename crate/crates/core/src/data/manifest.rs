//! Dataset manifests: CSV with header `image_path,mask_path,domain,source_id`.
//! Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use super::Domain;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["image_path", "mask_path", "domain", "source_id"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub domain: Domain,
    pub source_id: String,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    Error::format(path.display().to_string(), offset, e.to_string())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(Error::format(
            path.display().to_string(),
            0,
            format!(
                "header must be {}, got {}",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        let domain = rec[2]
            .parse::<Domain>()
            .map_err(|e| Error::format(path.display().to_string(), offset, e.to_string()))?;
        out.push(ManifestEntry {
            image_path: base.join(rec[0].trim()),
            mask_path: base.join(rec[1].trim()),
            domain,
            source_id: rec[3].trim().to_string(),
        });
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(MANIFEST_HEADER).map_err(|e| csv_err(path, e))?;
    for e in entries {
        w.write_record([
            e.image_path.to_string_lossy().as_ref(),
            e.mask_path.to_string_lossy().as_ref(),
            &e.domain.to_string(),
            &e.source_id,
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let entries = vec![ManifestEntry {
            image_path: "a.pgm".into(),
            mask_path: "a_mask.pgm".into(),
            domain: Domain::Target,
            source_id: "a".into(),
        }];
        write_manifest(&path, &entries).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back[0].image_path, dir.path().join("a.pgm"));
        assert_eq!(back[0].domain, Domain::Target);
    }

    #[test]
    fn bad_header_and_domain_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "img,mask\nx,y\n").unwrap();
        assert_eq!(read_manifest(&path).unwrap_err().category(), "format");
        std::fs::write(&path, "image_path,mask_path,domain,source_id\nx,y,moon,z\n").unwrap();
        assert_eq!(read_manifest(&path).unwrap_err().category(), "format");
    }
}
