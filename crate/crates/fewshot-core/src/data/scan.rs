//! Directory-tree ingestion and the dataset manifest.
//!
//! Layout: `<root>/<split>/<class>/<file>.{png,jpg,jpeg}` with the splits
//! `train`, `val`, `test` all present and an identical class set in each.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{resize_bilinear, FewShotDataset, ImageSample, Split, MAX_PER_CLASS};
use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Scan result: the decoded dataset plus any non-fatal warnings (currently
/// only the per-class cap).
#[derive(Debug)]
pub struct ScanReport {
    pub dataset: FewShotDataset,
    pub warnings: Vec<String>,
}

/// Serializable summary of a scanned tree.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub image_size: usize,
    pub classes: Vec<String>,
    /// split -> class -> count
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub content_hash: String,
}

impl DatasetManifest {
    pub fn from_dataset(dataset: &FewShotDataset) -> Self {
        let mut counts = BTreeMap::new();
        for split in Split::ALL {
            let mut per_class = BTreeMap::new();
            for (c, class) in dataset.classes().iter().enumerate() {
                per_class.insert(class.clone(), dataset.samples(c, split).len());
            }
            counts.insert(split.as_str().to_string(), per_class);
        }
        DatasetManifest {
            image_size: dataset.image_size(),
            classes: dataset.classes().to_vec(),
            counts,
            content_hash: format!("{:016x}", dataset.manifest_hash()),
        }
    }
}

fn sorted_dirs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let p = entry.path();
        if p.is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), p));
        }
    }
    out.sort();
    Ok(out)
}

fn sorted_image_files(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let p = entry.path();
        let ext = p
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if p.is_file() && matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn decode_image(path: &Path, image_size: usize) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| CoreError::Decode {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, pixel) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = pixel.0[c] as f32 / 255.0;
        }
    }
    Ok(resize_bilinear(&Tensor::from_vec(&[3, h, w], data), image_size, image_size))
}

pub fn scan_dataset(root: &Path, image_size: usize) -> Result<ScanReport> {
    scan_dataset_with_cap(root, image_size, MAX_PER_CLASS)
}

pub(crate) fn scan_dataset_with_cap(
    root: &Path,
    image_size: usize,
    cap: usize,
) -> Result<ScanReport> {
    if !root.is_dir() {
        return Err(CoreError::Layout(format!("dataset root '{}' is not a directory", root.display())));
    }
    for split in Split::ALL {
        if !root.join(split.as_str()).is_dir() {
            return Err(CoreError::Layout(format!(
                "missing split directory '{}' under '{}'",
                split.as_str(),
                root.display()
            )));
        }
    }

    // Class set comes from train; the others must match exactly.
    let train_classes = sorted_dirs(&root.join(Split::Train.as_str()))?;
    if train_classes.is_empty() {
        return Err(CoreError::Layout(format!("no class directories under '{}/train'", root.display())));
    }
    for split in [Split::Val, Split::Test] {
        let found = sorted_dirs(&root.join(split.as_str()))?;
        let names: Vec<&String> = found.iter().map(|(n, _)| n).collect();
        let expected: Vec<&String> = train_classes.iter().map(|(n, _)| n).collect();
        if names != expected {
            return Err(CoreError::Layout(format!(
                "class set mismatch in split '{}': found {names:?}, expected {expected:?}",
                split.as_str()
            )));
        }
    }

    let mut warnings = Vec::new();
    let mut classes = Vec::with_capacity(train_classes.len());
    let mut groups = Vec::with_capacity(train_classes.len());
    for (class_name, _) in &train_classes {
        let mut per_split: [Vec<ImageSample>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (si, split) in Split::ALL.iter().enumerate() {
            let dir = root.join(split.as_str()).join(class_name);
            let mut files = sorted_image_files(&dir)?;
            if files.is_empty() {
                return Err(CoreError::Layout(format!(
                    "class '{class_name}' has no images in split '{}'",
                    split.as_str()
                )));
            }
            if files.len() > cap {
                warnings.push(format!(
                    "class '{class_name}' split '{}' holds {} images; capped at {cap}",
                    split.as_str(),
                    files.len()
                ));
                files.truncate(cap);
            }
            for file in files {
                let rel = file
                    .strip_prefix(root)
                    .unwrap_or(&file)
                    .to_string_lossy()
                    .replace('\\', "/");
                per_split[si].push(ImageSample {
                    id: rel,
                    pixels: decode_image(&file, image_size)?,
                    class_label: class_name.clone(),
                    split: *split,
                });
            }
        }
        classes.push(class_name.clone());
        groups.push(per_split);
    }

    Ok(ScanReport { dataset: FewShotDataset::new(classes, groups, image_size)?, warnings })
}

/// Write a dataset to disk in the standard layout, one PNG per sample.
pub fn write_dataset(dataset: &FewShotDataset, root: &Path) -> Result<()> {
    for split in Split::ALL {
        for (c, class) in dataset.classes().iter().enumerate() {
            let dir = root.join(split.as_str()).join(class);
            fs::create_dir_all(&dir).map_err(|e| CoreError::io(dir.display().to_string(), e))?;
            for sample in dataset.samples(c, split) {
                let size = dataset.image_size();
                let mut img = image::RgbImage::new(size as u32, size as u32);
                let data = sample.pixels.data();
                for y in 0..size {
                    for x in 0..size {
                        let at = |c: usize| (data[(c * size + y) * size + x] * 255.0).round() as u8;
                        img.put_pixel(x as u32, y as u32, image::Rgb([at(0), at(1), at(2)]));
                    }
                }
                let name = sample.id.rsplit('/').next().unwrap_or(&sample.id);
                let path = dir.join(format!("{name}.png"));
                img.save(&path)
                    .map_err(|e| CoreError::Decode { path: path.display().to_string(), msg: e.to_string() })?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthConfig};

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("fewshot-scan-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn toy_dataset() -> FewShotDataset {
        synth_generate(&SynthConfig { n_classes: 4, per_class: 10, image_size: 8, seed: 3 }).unwrap()
    }

    #[test]
    fn round_trip_write_then_scan() {
        let dir = temp_dir("roundtrip");
        let ds = toy_dataset();
        write_dataset(&ds, &dir).unwrap();
        let report = scan_dataset(&dir, 8).unwrap();
        assert_eq!(report.dataset.classes(), ds.classes());
        // 4 classes x 3 splits, 10 per class total.
        assert_eq!(
            report.dataset.split_len(Split::Train)
                + report.dataset.split_len(Split::Val)
                + report.dataset.split_len(Split::Test),
            40
        );
        assert!(report.warnings.is_empty());
        // Re-scan of the unchanged tree gives an identical manifest.
        let again = scan_dataset(&dir, 8).unwrap();
        assert_eq!(
            DatasetManifest::from_dataset(&report.dataset),
            DatasetManifest::from_dataset(&again.dataset)
        );
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_split_is_a_layout_error() {
        let dir = temp_dir("missing-split");
        let ds = toy_dataset();
        write_dataset(&ds, &dir).unwrap();
        fs::remove_dir_all(dir.join("val")).unwrap();
        let err = scan_dataset(&dir, 8).unwrap_err();
        assert!(err.to_string().contains("val"), "{err}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn empty_class_dir_is_a_layout_error() {
        let dir = temp_dir("empty-class");
        let ds = toy_dataset();
        write_dataset(&ds, &dir).unwrap();
        let victim = dir.join("test").join("class2");
        for f in fs::read_dir(&victim).unwrap() {
            fs::remove_file(f.unwrap().path()).unwrap();
        }
        let err = scan_dataset(&dir, 8).unwrap_err();
        assert!(err.to_string().contains("class2"), "{err}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn class_set_mismatch_is_reported() {
        let dir = temp_dir("mismatch");
        let ds = toy_dataset();
        write_dataset(&ds, &dir).unwrap();
        fs::remove_dir_all(dir.join("test").join("class3")).unwrap();
        let err = scan_dataset(&dir, 8).unwrap_err();
        assert!(err.to_string().contains("class set mismatch"), "{err}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn cap_produces_warning_and_truncates() {
        let dir = temp_dir("cap");
        let ds = toy_dataset();
        write_dataset(&ds, &dir).unwrap();
        let report = scan_dataset_with_cap(&dir, 8, 2).unwrap();
        assert!(!report.warnings.is_empty());
        for (c, _) in report.dataset.classes().iter().enumerate() {
            assert!(report.dataset.samples(c, Split::Train).len() <= 2);
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn undecodable_file_is_a_decode_error() {
        let dir = temp_dir("decode");
        let ds = toy_dataset();
        write_dataset(&ds, &dir).unwrap();
        fs::write(dir.join("train/class0/broken.png"), b"not a png").unwrap();
        let err = scan_dataset(&dir, 8).unwrap_err();
        assert!(matches!(err, CoreError::Decode { .. }), "{err}");
        fs::remove_dir_all(&dir).unwrap();
    }
}
