//! Sample directories: `image.ppm`, `annotations.json` and one `mask_NNN.pgm`
//! per instance (0 or 255). A dataset is a directory of sample directories
//! plus `manifest.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pnm::Pnm;
use super::{image_from_rgb8, GeneratorReport, Instance, Sample};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mask::Mask;

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationFile {
    instances: Vec<AnnotationEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationEntry {
    class: usize,
    #[serde(rename = "box")]
    bbox: BBox,
    mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub count: usize,
    pub image_size: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorReport>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_sample(dir: &Path, sample: &Sample) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = sample.size();
    Pnm::rgb(n, n, sample.image_rgb8()).save(&dir.join("image.ppm"))?;
    let mut entries = Vec::with_capacity(sample.instances.len());
    for (i, inst) in sample.instances.iter().enumerate() {
        let name = format!("mask_{i:03}.pgm");
        let pixels = inst.mask.data().iter().map(|&v| v * 255).collect();
        Pnm::grey(inst.mask.width(), inst.mask.height(), pixels).save(&dir.join(&name))?;
        entries.push(AnnotationEntry {
            class: inst.class,
            bbox: inst.bbox,
            mask: name,
        });
    }
    let json = serde_json::to_vec_pretty(&AnnotationFile { instances: entries })?;
    write_file(&dir.join("annotations.json"), &json)
}

/// Reads and validates one sample directory.
pub fn load_sample(dir: &Path, num_classes: usize) -> Result<Sample> {
    let image_path = dir.join("image.ppm");
    let img = Pnm::load(&image_path)?;
    if img.channels != 3 || img.width != img.height {
        return Err(Error::format(&image_path, "raster", "expected a square RGB image"));
    }
    let ann_path = dir.join("annotations.json");
    let text = std::fs::read(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let ann: AnnotationFile =
        serde_json::from_slice(&text).map_err(|e| Error::format(&ann_path, "instances", e.to_string()))?;
    let mut instances = Vec::with_capacity(ann.instances.len());
    for entry in ann.instances {
        let mask_path = dir.join(&entry.mask);
        let m = Pnm::load(&mask_path)?;
        if m.channels != 1 || m.width != img.width || m.height != img.height {
            return Err(Error::format(&mask_path, "raster", "mask must be grey and match the image size"));
        }
        let data = m
            .pixels
            .iter()
            .map(|&v| match v {
                0 => Ok(0),
                255 => Ok(1),
                other => Err(Error::format(&mask_path, "raster", format!("mask value {other} is not 0 or 255"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        instances.push(Instance {
            class: entry.class,
            bbox: entry.bbox,
            mask: Mask::from_vec(m.height, m.width, data)?,
        });
    }
    let sample = Sample {
        image: image_from_rgb8(img.height, img.width, &img.pixels),
        instances,
    };
    sample
        .validate(num_classes)
        .map_err(|e| Error::Validation(format!("{}: {e}", dir.display())))?;
    Ok(sample)
}

pub fn save_dataset(dir: &Path, samples: &[Sample], class_names: &[&str], report: Option<GeneratorReport>) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<String> = (0..samples.len()).map(|i| format!("sample_{i:05}")).collect();
    for (s, name) in samples.iter().zip(&names) {
        save_sample(&dir.join(name), s)?;
    }
    let manifest = DatasetManifest {
        count: samples.len(),
        image_size: samples.first().map_or(0, Sample::size),
        class_names: class_names.iter().map(|s| s.to_string()).collect(),
        samples: names,
        generator: report,
    };
    write_file(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    let path: PathBuf = dir.join("manifest.json");
    let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&text).map_err(|e| Error::format(&path, "manifest", e.to_string()))?;
    if manifest.samples.len() != manifest.count {
        return Err(Error::format(&path, "count", "does not match the sample list"));
    }
    let samples = manifest
        .samples
        .iter()
        .map(|name| load_sample(&dir.join(name), manifest.class_names.len()))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SynthConfig, CLASS_NAMES};

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (samples, report) = generate_dataset(9, 3, &SynthConfig::default());
        save_dataset(dir.path(), &samples, &CLASS_NAMES, Some(report.clone())).unwrap();
        let (m, back) = load_dataset(dir.path()).unwrap();
        assert_eq!(back, samples);
        assert_eq!(m.generator, Some(report));
    }

    #[test]
    fn out_of_range_box_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let (samples, _) = generate_dataset(1, 1, &SynthConfig::default());
        save_sample(dir.path(), &samples[0]).unwrap();
        let p = dir.path().join("annotations.json");
        let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        v["instances"][0]["box"][2] = serde_json::json!(1.25);
        std::fs::write(&p, serde_json::to_vec(&v).unwrap()).unwrap();
        assert!(matches!(load_sample(dir.path(), 3), Err(Error::Validation(_))));
    }

    #[test]
    fn truncated_mask_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let (samples, _) = generate_dataset(2, 1, &SynthConfig::default());
        save_sample(dir.path(), &samples[0]).unwrap();
        let p = dir.path().join("mask_000.pgm");
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        match load_sample(dir.path(), 3) {
            Err(Error::Format { path, .. }) => assert!(path.ends_with("mask_000.pgm")),
            other => panic!("{other:?}"),
        }
    }
}
