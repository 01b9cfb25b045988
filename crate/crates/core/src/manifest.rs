//! Dataset manifests: line-oriented `id class split path` records, with
//! paths resolved relative to the manifest file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::attack::{PriorImage, PriorSet};
use crate::error::{Error, Result};
use crate::netpbm;
use crate::synth::{Dataset, Split};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub id: u64,
    pub class: usize,
    pub split: Split,
    pub path: PathBuf,
}

/// Write all images (P5/P6) plus `manifest.txt` into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    let ext = if dataset.shape[0] == 3 { "ppm" } else { "pgm" };
    let mut lines = String::new();
    for sample in &dataset.samples {
        let rel = format!("images/img_{:05}.{ext}", sample.id);
        netpbm::write_image(&sample.image, &dir.join(&rel))?;
        lines.push_str(&format!(
            "{} {} {} {}\n",
            sample.id,
            sample.class,
            sample.split.as_str(),
            rel
        ));
    }
    let manifest = dir.join("manifest.txt");
    crate::fsutil::write_atomic(&manifest, lines.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (ix, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Manifest {
                line: ix + 1,
                message: format!("expected `id class split path`, got {raw:?}"),
            });
        }
        let id = fields[0].parse::<u64>().map_err(|_| Error::Manifest {
            line: ix + 1,
            message: format!("invalid id {:?}", fields[0]),
        })?;
        let class = fields[1].parse::<usize>().map_err(|_| Error::Manifest {
            line: ix + 1,
            message: format!("invalid class {:?}", fields[1]),
        })?;
        let split = Split::parse(fields[2]).ok_or_else(|| Error::Manifest {
            line: ix + 1,
            message: format!("invalid split {:?} (victim|prior|train)", fields[2]),
        })?;
        entries.push(ManifestEntry {
            id,
            class,
            split,
            path: base.join(fields[3]),
        });
    }
    Ok(entries)
}

pub fn load_image_entries(entries: &[ManifestEntry], split: Split) -> Result<Vec<(u64, usize, Tensor)>> {
    entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| Ok((e.id, e.class, netpbm::read_image(&e.path)?)))
        .collect()
}

/// Load the prior split as a `PriorSet`.
pub fn load_priors(entries: &[ManifestEntry]) -> Result<PriorSet> {
    let items = entries
        .iter()
        .filter(|e| e.split == Split::Prior)
        .map(|e| {
            Ok(PriorImage {
                image: Arc::new(netpbm::read_image(&e.path)?),
                class: e.class,
                id: e.id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PriorSet { items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SyntheticSpec};

    #[test]
    fn dataset_round_trip_through_manifest() {
        let spec = SyntheticSpec {
            victims_per_class: 2,
            priors_per_class: 2,
            train_per_class: 1,
            classes: 2,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), ds.samples.len());

        let priors = load_priors(&entries).unwrap();
        assert_eq!(priors.items.len(), 4);
        for p in &priors.items {
            let original = ds.samples.iter().find(|s| s.id == p.id).unwrap();
            assert_eq!(original.class, p.class);
            let max_err = original
                .image
                .data()
                .iter()
                .zip(p.image.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err <= 1.0 / 131070.0 + 1e-15);
        }
    }

    #[test]
    fn malformed_manifest_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        std::fs::write(&path, "0 1 victim img.pgm\n1 2 nowhere img.pgm\n").unwrap();
        match read_manifest(&path) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected manifest error, got {other:?}"),
        }
    }
}
