//! Dataset splits on disk and training-set loading.

use std::fs;
use std::path::{Path, PathBuf};

use crate::degradation::{Split, SplitManifest};
use crate::error::{Error, Result};
use crate::io::{list_images, load_image, resize_bilinear};
use crate::tensor::Tensor;

/// Fraction of images assigned to training.
pub const TRAIN_RATIO: f64 = 0.7;

/// Seeded split of the images in `dir`.
pub fn split_dataset(dir: &Path, ratio: f64, seed: u64) -> Result<SplitManifest> {
    let paths = list_images(dir)?;
    if paths.len() < 2 {
        return Err(Error::Dataset(format!(
            "{}: need at least 2 images to split, found {}",
            dir.display(),
            paths.len()
        )));
    }
    SplitManifest::new(paths, ratio, seed)
}

/// Reads a `path,split,seed` CSV. Every listed path must exist; the error
/// names all missing ones.
pub fn read_manifest(path: &Path) -> Result<SplitManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, why: &str| Error::Dataset(format!("{}:{line}: {why}", path.display()));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "path,split,seed" => {}
        _ => return Err(bad(1, "expected header `path,split,seed`")),
    }
    let mut entries = Vec::new();
    let mut seed = None;
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        // paths may contain commas; the last two fields may not
        let mut f = line.rsplitn(3, ',');
        let (s, sp, p) = match (f.next(), f.next(), f.next()) {
            (Some(s), Some(sp), Some(p)) => (s, sp, p),
            _ => return Err(bad(i + 1, "expected 3 fields")),
        };
        let split = match sp.trim() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(bad(i + 1, &format!("unknown split `{other}`"))),
        };
        let s: u64 = s.trim().parse().map_err(|_| bad(i + 1, "seed is not an integer"))?;
        if *seed.get_or_insert(s) != s {
            return Err(bad(i + 1, "rows disagree on the seed"));
        }
        entries.push((PathBuf::from(p), split));
    }
    let missing: Vec<String> = entries
        .iter()
        .filter(|(p, _)| !p.is_file())
        .map(|(p, _)| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Dataset(format!("missing images: {}", missing.join(", "))));
    }
    let n_train = entries.iter().filter(|(_, s)| *s == Split::Train).count();
    Ok(SplitManifest {
        train_ratio: if entries.is_empty() {
            0.0
        } else {
            n_train as f64 / entries.len() as f64
        },
        entries,
        seed: seed.unwrap_or(0),
    })
}

/// Training images from a directory (all images) or a manifest CSV (its
/// train split), each resized to `size × size`.
pub fn load_training_set(source: &Path, size: usize) -> Result<Vec<Tensor>> {
    let paths: Vec<PathBuf> = if source.is_dir() {
        list_images(source)?
    } else {
        read_manifest(source)?.paths(Split::Train).cloned().collect()
    };
    if paths.is_empty() {
        return Err(Error::Dataset(format!("{}: no training images", source.display())));
    }
    paths.iter().map(|p| resize_bilinear(&load_image(p)?, size, size)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::save_image;

    fn write_images(dir: &Path, n: usize) -> Vec<PathBuf> {
        (0..n)
            .map(|i| {
                let p = dir.join(format!("img{i:02}.png"));
                save_image(&Tensor::full([1, 3, 6, 5], i as f32 / 20.0), &p).unwrap();
                p
            })
            .collect()
    }

    #[test]
    fn split_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), 10);
        let m = split_dataset(dir.path(), TRAIN_RATIO, 42).unwrap();
        assert_eq!((m.count(Split::Train), m.count(Split::Test)), (7, 3));
        assert_eq!(m, split_dataset(dir.path(), TRAIN_RATIO, 42).unwrap());

        let small = tempfile::tempdir().unwrap();
        write_images(small.path(), 3);
        let m = split_dataset(small.path(), TRAIN_RATIO, 42).unwrap();
        assert_eq!((m.count(Split::Train), m.count(Split::Test)), (2, 1));

        let one = tempfile::tempdir().unwrap();
        write_images(one.path(), 1);
        assert!(split_dataset(one.path(), TRAIN_RATIO, 42).is_err());
    }

    #[test]
    fn manifest_round_trip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_images(dir.path(), 4);
        let m = split_dataset(dir.path(), 0.5, 9).unwrap();
        let csv = dir.path().join("m.csv");
        fs::write(&csv, m.to_csv()).unwrap();
        let back = read_manifest(&csv).unwrap();
        assert_eq!((back.entries.clone(), back.seed), (m.entries.clone(), 9));

        fs::remove_file(&paths[1]).unwrap();
        fs::remove_file(&paths[3]).unwrap();
        let e = read_manifest(&csv).unwrap_err().to_string();
        assert!(e.contains("img01.png") && e.contains("img03.png"), "{e}");
    }

    #[test]
    fn training_set_resized() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), 3);
        let set = load_training_set(dir.path(), 8).unwrap();
        assert_eq!(set.len(), 3);
        assert!(set.iter().all(|t| t.dims() == [1, 3, 8, 8]));
        let empty = tempfile::tempdir().unwrap();
        assert!(load_training_set(empty.path(), 8).is_err());
    }
}
