//! Dataset ingestion, preprocessing, fold planning, and the synthetic
//! generator.
//!
//! On-disk layout: `root/<CLASS_NAME>/<file>.png|.jpg|.jpeg`. Class names are
//! the subdirectory names, sorted lexicographically and mapped to labels
//! 0..K−1 in that order.

pub mod kfold;
pub mod preprocess;
pub mod synth;

use crate::error::{Error, Result};
use image::RgbImage;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
    pub class_names: Vec<String>,
    /// Non-image files encountered and skipped during the scan.
    pub skipped_non_images: usize,
    /// Human-readable scan warnings (empty classes, skip counts).
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Decode every item into memory. Undecodable items are dropped and
    /// reported, not fatal.
    pub fn decode(&self) -> DecodedDataset {
        let mut images = Vec::with_capacity(self.items.len());
        let mut labels = Vec::with_capacity(self.items.len());
        let mut failures = Vec::new();
        for item in &self.items {
            match image::open(&item.path) {
                Ok(img) => {
                    images.push(img.to_rgb8());
                    labels.push(item.label);
                }
                Err(e) => failures.push((item.path.clone(), e.to_string())),
            }
        }
        DecodedDataset {
            images,
            labels,
            class_names: self.class_names.clone(),
            decode_failures: failures,
        }
    }
}

/// A dataset with all images decoded to RGB in memory.
#[derive(Clone, Debug)]
pub struct DecodedDataset {
    pub images: Vec<RgbImage>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub decode_failures: Vec<(PathBuf, String)>,
}

impl DecodedDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| {
            let e = e.to_ascii_lowercase();
            e == "png" || e == "jpg" || e == "jpeg"
        })
        .unwrap_or(false)
}

/// Scans `root_dir/<class>/<file>` into a dataset. Classes are the sorted
/// subdirectory names; non-image files are skipped and counted.
pub fn load_dataset(root_dir: &Path) -> Result<Dataset> {
    let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(root_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(Error::Input(format!(
            "{} contains no class subdirectories",
            root_dir.display()
        )));
    }
    class_dirs.sort_by_key(|p| p.file_name().map(|n| n.to_os_string()));

    let class_names: Vec<String> = class_dirs
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();

    let mut items = Vec::new();
    let mut skipped = 0usize;
    let mut warnings = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort_by_key(|p| p.file_name().map(|n| n.to_os_string()));
        let mut count = 0;
        for f in files {
            if is_image_file(&f) {
                items.push(DatasetItem { path: f, label });
                count += 1;
            } else {
                skipped += 1;
            }
        }
        if count == 0 {
            warnings.push(format!(
                "class '{}' has no images",
                class_names[label]
            ));
        }
    }
    if skipped > 0 {
        warnings.push(format!("skipped {skipped} non-image files"));
    }
    Ok(Dataset {
        items,
        class_names,
        skipped_non_images: skipped,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_png(path: &Path) {
        let img = RgbImage::from_pixel(4, 4, image::Rgb([128, 64, 32]));
        img.save_with_format(path, image::ImageFormat::Png).unwrap();
    }

    #[test]
    fn sorted_class_mapping_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["C", "A", "B"] {
            let d = dir.path().join(class);
            fs::create_dir(&d).unwrap();
            write_png(&d.join("1.png"));
            write_png(&d.join("2.png"));
        }
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.class_names, vec!["A", "B", "C"]);
        assert_eq!(ds.len(), 6);
        let mut per_class = [0usize; 3];
        for item in &ds.items {
            per_class[item.label] += 1;
        }
        assert_eq!(per_class, [2, 2, 2]);
    }

    #[test]
    fn non_image_files_are_counted_not_loaded() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("A");
        fs::create_dir(&d).unwrap();
        write_png(&d.join("ok.png"));
        fs::write(d.join("notes.txt"), "not an image").unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.skipped_non_images, 1);
    }

    #[test]
    fn empty_class_dir_is_listed_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("A")).unwrap();
        write_png(&dir.path().join("A").join("x.png"));
        fs::create_dir(dir.path().join("B")).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.class_names, vec!["A", "B"]);
        assert_eq!(ds.len(), 1);
        assert!(ds.warnings.iter().any(|w| w.contains("'B'")), "{:?}", ds.warnings);
    }

    #[test]
    fn no_subdirectories_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("stray.png"), b"junk").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Input(_))));
    }

    #[test]
    fn undecodable_image_is_collected_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("A");
        fs::create_dir(&d).unwrap();
        write_png(&d.join("good.png"));
        fs::write(d.join("bad.png"), b"this is not a png").unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        let decoded = ds.decode();
        assert_eq!(decoded.len(), 1);
        assert_eq!(decoded.decode_failures.len(), 1);
        assert!(decoded.decode_failures[0].0.ends_with("bad.png"));
    }

    #[test]
    fn synth_round_trips_through_loader() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth::synth_generate(4, 3, 16, 9, dir.path()).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.class_names, vec!["A", "B", "C", "D"]);
        let decoded = ds.decode();
        assert_eq!(decoded.len(), 12);
        assert!(decoded.decode_failures.is_empty());
    }

    #[test]
    fn synth_same_seed_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth::synth_generate(2, 2, 16, 5, a.path()).unwrap();
        synth::synth_generate(2, 2, 16, 5, b.path()).unwrap();
        for class in ["A", "B"] {
            for img in ["img_0000.png", "img_0001.png"] {
                let fa = fs::read(a.path().join(class).join(img)).unwrap();
                let fb = fs::read(b.path().join(class).join(img)).unwrap();
                assert_eq!(fa, fb, "{class}/{img} differs");
            }
        }
        let c = tempfile::tempdir().unwrap();
        synth::synth_generate(2, 2, 16, 6, c.path()).unwrap();
        let fa = fs::read(a.path().join("A").join("img_0000.png")).unwrap();
        let fc = fs::read(c.path().join("A").join("img_0000.png")).unwrap();
        assert_ne!(fa, fc);
    }
}
