use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use ndarray::Array3;
use rayon::prelude::*;

use super::split::{DatasetSplit, LabeledImage, Source};
use super::Image;
use crate::error::{Error, Result};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Sorted names of the subdirectories of `root`.
pub fn discover_class_names(root: impl AsRef<Path>) -> Result<Vec<String>> {
    let root = root.as_ref();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::Dataset(format!("{} has no class subdirectories", root.display())));
    }
    Ok(names)
}

fn decode(path: &Path, size: (usize, usize), channels: usize) -> Result<Image> {
    let fail = |reason: String| Error::Image {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(fail("file is empty".into()));
    }
    let img = image::load_from_memory(&bytes).map_err(|e| fail(e.to_string()))?;
    let img = img.resize_exact(size.1 as u32, size.0 as u32, FilterType::Triangle);
    let (h, w) = size;
    let pixels = if channels == 1 {
        let g = img.to_luma8();
        Array3::from_shape_fn((1, h, w), |(_, y, x)| g.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0)
    } else {
        let rgb = img.to_rgb8();
        Array3::from_shape_fn((3, h, w), |(c, y, x)| rgb.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0)
    };
    Ok(Image::new(pixels))
}

/// Load `root/<class_name>/<file>.{png,jpg}`. Labels are the index of the
/// class name in `class_names`; ids follow lexicographic path order.
pub fn load_image_folder(
    root: impl AsRef<Path>,
    image_size: (usize, usize),
    class_names: &[String],
    channels: usize,
) -> Result<DatasetSplit> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} does not exist", root.display())));
    }
    if class_names.len() < 2 {
        return Err(Error::invalid("an image folder needs at least 2 classes"));
    }
    if !matches!(channels, 1 | 3) {
        return Err(Error::invalid(format!("channels must be 1 or 3, got {channels}")));
    }
    if image_size.0 == 0 || image_size.1 == 0 {
        return Err(Error::invalid("image size must be positive"));
    }
    let mut files: Vec<(PathBuf, usize)> = Vec::new();
    for (label, name) in class_names.iter().enumerate() {
        let dir = root.join(name);
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if is_image_file(&path) {
                paths.push(path);
            }
        }
        if paths.is_empty() {
            return Err(Error::Dataset(format!("class directory {} has no PNG/JPEG files", dir.display())));
        }
        files.extend(paths.into_iter().map(|p| (p, label)));
    }
    files.sort();
    let images = files
        .par_iter()
        .enumerate()
        .map(|(i, (path, label))| {
            Ok(LabeledImage {
                id: i as u64,
                image: decode(path, image_size, channels)?,
                clean_label: *label,
                source: Source::File(path.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let name = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "train".into());
    DatasetSplit::new(name, class_names.len(), images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};

    fn fixture(root: &Path) -> Vec<String> {
        for (c, name) in ["cats", "dogs"].iter().enumerate() {
            let dir = root.join(name);
            fs::create_dir_all(&dir).unwrap();
            for i in 0..3 {
                let img = GrayImage::from_fn(40, 20, |x, _| Luma([(x * 6 + c as u32 * 10 + i) as u8]));
                img.save(dir.join(format!("{i}.png"))).unwrap();
            }
        }
        vec!["cats".into(), "dogs".into()]
    }

    #[test]
    fn loads_two_classes_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let names = fixture(dir.path());
        let a = load_image_folder(dir.path(), (32, 32), &names, 1).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a.clean_labels(), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(a.images()[0].image.height(), 32);
        let b = load_image_folder(dir.path(), (32, 32), &names, 3).unwrap();
        let ids_a: Vec<_> = a.images().iter().map(|s| (s.id, s.clean_label, s.source.clone())).collect();
        let ids_b: Vec<_> = b.images().iter().map(|s| (s.id, s.clean_label, s.source.clone())).collect();
        assert_eq!(ids_a, ids_b);
        assert_eq!(discover_class_names(dir.path()).unwrap(), names);
    }

    #[test]
    fn empty_file_is_named_in_the_error() {
        let dir = tempfile::tempdir().unwrap();
        let names = fixture(dir.path());
        fs::write(dir.path().join("dogs").join("broken.png"), b"").unwrap();
        let err = load_image_folder(dir.path(), (8, 8), &names, 1).unwrap_err().to_string();
        assert!(err.contains("broken.png"), "{err}");
    }

    #[test]
    fn missing_root_and_empty_class_fail() {
        let dir = tempfile::tempdir().unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(load_image_folder(dir.path().join("nope"), (8, 8), &names, 1).is_err());
        fs::create_dir_all(dir.path().join("a")).unwrap();
        fs::create_dir_all(dir.path().join("b")).unwrap();
        let err = load_image_folder(dir.path(), (8, 8), &names, 1).unwrap_err().to_string();
        assert!(err.contains("no PNG/JPEG"), "{err}");
    }
}
