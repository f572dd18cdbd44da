//! Dataset manifests: one tab-separated record per line,
//! `id<TAB>image_path<TAB>voice_path<TAB>label<TAB>class_name`.
//!
//! Relative paths resolve against the manifest's directory. Loading validates
//! id uniqueness, label contiguity, and file existence.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub voice_path: PathBuf,
    pub label: usize,
    pub class_name: String,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub n_classes: usize,
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    let mut ids = BTreeSet::new();
    let mut labels = BTreeSet::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, image, voice, label, class_name] = fields.as_slice() else {
            return Err(Error::Format(format!(
                "manifest line {}: expected 5 tab-separated fields, got {}",
                lineno,
                fields.len()
            )));
        };
        if !ids.insert(id.to_string()) {
            return Err(Error::Format(format!("manifest line {}: duplicate id {:?}", lineno, id)));
        }
        let label: usize = label
            .parse()
            .map_err(|_| Error::Format(format!("manifest line {}: bad label {:?}", lineno, label)))?;
        labels.insert(label);
        let image_path = dir.join(image);
        let voice_path = dir.join(voice);
        for p in [&image_path, &voice_path] {
            if !p.exists() {
                return Err(Error::Format(format!(
                    "manifest line {}: referenced file {} does not exist",
                    lineno,
                    p.display()
                )));
            }
        }
        records.push(ManifestRecord {
            id: id.to_string(),
            image_path,
            voice_path,
            label,
            class_name: class_name.to_string(),
        });
    }
    if records.is_empty() {
        return Err(Error::Format("manifest: no records".into()));
    }
    let n_classes = labels.len();
    let contiguous = labels.iter().cloned().eq(0..n_classes);
    if !contiguous {
        return Err(Error::Format(format!(
            "manifest: labels must be contiguous 0..{}, got {:?}",
            n_classes - 1,
            labels
        )));
    }
    Ok(Manifest { records, n_classes })
}

/// Write a manifest with paths stored relative to `dir` when possible.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut out = String::new();
    for r in records {
        let rel = |p: &Path| {
            p.strip_prefix(dir)
                .map(|s| s.to_path_buf())
                .unwrap_or_else(|_| p.to_path_buf())
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.id,
            rel(&r.image_path).display(),
            rel(&r.voice_path).display(),
            r.label,
            r.class_name
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
