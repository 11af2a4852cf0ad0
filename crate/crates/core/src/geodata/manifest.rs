use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One line of a dataset manifest: `tile_id, optical_path, dsm_path, label_path`.
/// Relative paths resolve against the manifest's directory. The label path may
/// be `-` for unlabeled tiles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub tile_id: String,
    pub optical: PathBuf,
    pub dsm: PathBuf,
    pub label: Option<PathBuf>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

pub(crate) fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out: Vec<ManifestEntry> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len();
        let row = line.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = row.split(',').map(str::trim).collect();
        if f.len() != 4 || f[..3].iter().any(|s| s.is_empty()) {
            return Err(Error::Parse {
                offset: here,
                message: format!("manifest row {row:?}: expected tile_id, optical_path, dsm_path, label_path"),
            });
        }
        if out.iter().any(|e| e.tile_id == f[0]) {
            return Err(Error::Parse {
                offset: here,
                message: format!("tile id {} listed twice", f[0]),
            });
        }
        out.push(ManifestEntry {
            tile_id: f[0].to_owned(),
            optical: base.join(f[1]),
            dsm: base.join(f[2]),
            label: (!f[3].is_empty() && f[3] != "-").then(|| base.join(f[3])),
        });
    }
    Ok(out)
}
