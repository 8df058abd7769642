//! On-disk dataset layout: `train/` and `val/` directories of PNG crops
//! (8-bit RGB, 16-bit depth in millimeters) plus `manifest.json`.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::{ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use sixd_core::{CameraIntrinsics, DepthMap, Pose5D, RigidTransform, SymmetrySpec};

use crate::dataset::{Dataset, Sample, SampleKey, Split, SynthConfig};
use crate::error::SynthError;
use crate::render::ObjectSpec;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRecord {
    pub class_id: usize,
    pub name: String,
    pub symmetry: SymmetrySpec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: usize,
    pub split: Split,
    pub rgb: String,
    pub depth: Option<String>,
    pub class_id: usize,
    pub target: Pose5D<f64>,
    pub occlusion_fraction: f64,
    pub crop_center: [f64; 2],
    pub crop_origin: [i64; 2],
    pub pose: RigidTransform<f64>,
    pub source: SampleKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config: SynthConfig,
    pub intrinsics: CameraIntrinsics<f64>,
    pub classes: Vec<ClassRecord>,
    pub objects: Vec<ObjectSpec>,
    pub samples: Vec<SampleRecord>,
}

fn split_dir(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
    }
}

impl Manifest {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let symmetries = ds.class_symmetries();
        let classes = symmetries
            .iter()
            .enumerate()
            .map(|(c, sym)| ClassRecord {
                class_id: c,
                name: ds
                    .objects
                    .iter()
                    .find(|o| o.class_id == c)
                    .map(|o| o.name.clone())
                    .unwrap_or_default(),
                symmetry: *sym,
            })
            .collect();
        let samples = ds
            .samples
            .iter()
            .map(|s| {
                let dir = split_dir(s.split);
                SampleRecord {
                    id: s.id,
                    split: s.split,
                    rgb: format!("{dir}/{:06}.png", s.id),
                    depth: s.depth_crop.as_ref().map(|_| format!("{dir}/{:06}_depth.png", s.id)),
                    class_id: s.class_id,
                    target: s.target,
                    occlusion_fraction: s.occlusion_fraction,
                    crop_center: s.crop_center,
                    crop_origin: s.crop_origin,
                    pose: s.pose,
                    source: s.key,
                }
            })
            .collect();
        Self {
            version: MANIFEST_VERSION,
            seed: ds.config.seed,
            config: ds.config.clone(),
            intrinsics: ds.intrinsics,
            classes,
            objects: ds.objects.clone(),
            samples,
        }
    }
}

/// Depth in meters to 16-bit millimeters (0 stays invalid, saturating).
pub fn depth_to_png(depth: &DepthMap) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    ImageBuffer::from_fn(depth.width as u32, depth.height as u32, |x, y| {
        let d = depth.get(x as usize, y as usize);
        let mm = if d > 0.0 && d.is_finite() { (d as f64 * 1000.0).round().clamp(1.0, 65535.0) } else { 0.0 };
        Luma([mm as u16])
    })
}

pub fn depth_from_png(img: &ImageBuffer<Luma<u16>, Vec<u16>>) -> DepthMap {
    let mut d = DepthMap::new(img.width() as usize, img.height() as usize);
    for (x, y, p) in img.enumerate_pixels() {
        d.set(x as usize, y as usize, p.0[0] as f32 / 1000.0);
    }
    d
}

/// Writes the dataset under `dir` and returns its manifest.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<Manifest, SynthError> {
    let manifest = Manifest::from_dataset(ds);
    fs::create_dir_all(dir.join("train"))?;
    fs::create_dir_all(dir.join("val"))?;
    for (s, rec) in ds.samples.iter().zip(&manifest.samples) {
        s.input.save(dir.join(&rec.rgb))?;
        if let (Some(depth), Some(path)) = (&s.depth_crop, &rec.depth) {
            depth_to_png(depth).save(dir.join(path))?;
        }
    }
    write_manifest(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn write_manifest(m: &Manifest, path: &Path) -> Result<(), SynthError> {
    let f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(f, m)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest, SynthError> {
    let m: Manifest = serde_json::from_slice(&fs::read(path)?)?;
    if m.version != MANIFEST_VERSION {
        return Err(SynthError::Dataset(format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}

/// Reads a dataset written by [`save_dataset`]. Depth comes back quantized
/// to millimeters.
pub fn load_dataset(dir: &Path) -> Result<Dataset, SynthError> {
    let m = read_manifest(&dir.join(MANIFEST_FILE))?;
    let crop = m.config.crop_size as u32;
    let mut samples = Vec::with_capacity(m.samples.len());
    for rec in &m.samples {
        let input: RgbImage = image::open(dir.join(&rec.rgb))?.to_rgb8();
        if input.dimensions() != (crop, crop) {
            return Err(SynthError::Dataset(format!("{}: expected a {crop}x{crop} crop", rec.rgb)));
        }
        let depth_crop = match &rec.depth {
            Some(p) => Some(depth_from_png(&image::open(dir.join(p))?.to_luma16())),
            None => None,
        };
        samples.push(Sample {
            id: rec.id,
            key: rec.source,
            split: rec.split,
            input,
            target: rec.target,
            class_id: rec.class_id,
            occlusion_fraction: rec.occlusion_fraction,
            crop_center: rec.crop_center,
            crop_origin: rec.crop_origin,
            depth_crop,
            pose: rec.pose,
        });
    }
    Ok(Dataset {
        config: m.config,
        objects: m.objects,
        intrinsics: m.intrinsics,
        samples,
    })
}
