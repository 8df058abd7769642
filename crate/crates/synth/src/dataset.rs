//! Dataset configuration, the per-sample generation pipeline and the
//! train/validation split.

use std::f64::consts::TAU;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sixd_core::{
    canonicalize_symmetry, CameraIntrinsics, DepthMap, Pose5D, Quaternion, Real, RigidTransform, SymmetrySpec,
};

use crate::augment::{occlude, rotate_augment, MAX_OCCLUSION};
use crate::error::SynthError;
use crate::image::{crop_with_jitter, encode_focus, overlay};
use crate::render::{render_polyhedron, Coloring, ObjectSpec, Polyhedron, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Side of the square rendered frame in pixels.
    pub image_size: usize,
    pub crop_size: usize,
    /// Maximum crop-center jitter in pixels; `crop_size / 16` when unset.
    pub jitter_max: Option<usize>,
    pub sequences: usize,
    pub views_per_sequence: usize,
    pub rotations_per_view: usize,
    pub max_occlusion_fraction: f64,
    pub focus_blend: f64,
    pub split_ratio: f64,
    pub seed: u64,
    pub focal_length: f64,
    /// Distance from the camera to the object origin in meters.
    pub object_distance: f64,
    /// Canonicalize targets with each class's symmetry; hemisphere only when
    /// false.
    pub canonicalize_targets: bool,
    pub store_depth: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            crop_size: 64,
            jitter_max: None,
            sequences: 2,
            views_per_sequence: 8,
            rotations_per_view: 12,
            max_occlusion_fraction: 0.5,
            focus_blend: 1.0,
            split_ratio: 0.8,
            seed: 0,
            focal_length: 200.0,
            object_distance: 0.6,
            canonicalize_targets: true,
            store_depth: true,
        }
    }
}

impl SynthConfig {
    /// Capture counts of the full-size setup: 3 sequences of 20 views with
    /// 60 in-plane rotations and 320-pixel crops.
    pub fn paper_scale() -> Self {
        Self {
            image_size: 480,
            crop_size: 320,
            sequences: 3,
            views_per_sequence: 20,
            rotations_per_view: 60,
            focal_length: 750.0,
            ..Self::default()
        }
    }

    pub fn jitter(&self) -> usize {
        self.jitter_max.unwrap_or(self.crop_size / 16)
    }

    pub fn samples_per_object(&self) -> usize {
        self.sequences * self.views_per_sequence * self.rotations_per_view
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics<f64>, SynthError> {
        Ok(CameraIntrinsics::centered(self.focal_length, self.image_size, self.image_size)?)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.image_size == 0 || self.crop_size == 0 {
            return bad("image_size and crop_size must be positive".into());
        }
        if 2 * self.jitter() >= self.crop_size {
            return bad(format!("jitter_max {} must be below crop_size / 2", self.jitter()));
        }
        if self.samples_per_object() == 0 {
            return bad("sequences, views_per_sequence and rotations_per_view must be positive".into());
        }
        if !(0.0..=MAX_OCCLUSION).contains(&self.max_occlusion_fraction) {
            return bad(format!("max_occlusion_fraction {} outside [0, 0.5]", self.max_occlusion_fraction));
        }
        if !(0.0..=1.0).contains(&self.focus_blend) {
            return bad(format!("focus_blend {} outside [0, 1]", self.focus_blend));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio {} outside (0, 1)", self.split_ratio));
        }
        if !(self.focal_length > 0.0) || !(self.object_distance > 0.0) {
            return bad("focal_length and object_distance must be positive".into());
        }
        Ok(())
    }
}

/// Where a sample comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleKey {
    pub object: usize,
    pub sequence: usize,
    pub view: usize,
    pub rotation: usize,
}

/// Sample keys in generation order: object, sequence, view, rotation.
pub fn plan(num_objects: usize, cfg: &SynthConfig) -> Vec<SampleKey> {
    let mut keys = Vec::with_capacity(num_objects * cfg.samples_per_object());
    for object in 0..num_objects {
        for sequence in 0..cfg.sequences {
            for view in 0..cfg.views_per_sequence {
                for rotation in 0..cfg.rotations_per_view {
                    keys.push(SampleKey {
                        object,
                        sequence,
                        view,
                        rotation,
                    });
                }
            }
        }
    }
    keys
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// One training crop with its targets.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: usize,
    pub key: SampleKey,
    pub split: Split,
    /// Focus-encoded crop.
    pub input: RgbImage,
    pub target: Pose5D<f64>,
    pub class_id: usize,
    pub occlusion_fraction: f64,
    /// Full-image coordinates of the crop center.
    pub crop_center: [f64; 2],
    /// Full-image pixel of the crop's top-left pixel.
    pub crop_origin: [i64; 2],
    pub depth_crop: Option<DepthMap>,
    /// Ground-truth object pose in the camera frame.
    pub pose: RigidTransform<f64>,
}

/// Uniformly distributed rotation from three uniforms (Shoemake).
pub fn random_rotation<R: Rng>(rng: &mut R) -> Quaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    Quaternion::new(b * (TAU * u3).cos(), a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin())
}

/// Stream offsets keep the per-sample, per-sequence and split generators
/// disjoint.
const SEQUENCE_STREAM: u64 = 1 << 40;
const SPLIT_STREAM: u64 = u64::MAX;

/// Orientation of a turntable view: each sequence rests the object in a
/// random pose, views turn it about the camera's vertical axis.
pub fn view_orientation(cfg: &SynthConfig, key: &SampleKey) -> Quaternion<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SEQUENCE_STREAM + (key.object * cfg.sequences + key.sequence) as u64);
    let rest = random_rotation(&mut rng);
    let phase: f64 = rng.gen_range(0.0..TAU);
    let yaw = phase + TAU * key.view as f64 / cfg.views_per_sequence as f64;
    (Quaternion::ry(yaw) * rest).normalize().expect("unit product")
}

fn target_rotation(q: Quaternion<f64>, symmetry: &SymmetrySpec<f64>, canonicalize: bool) -> Quaternion<f64> {
    if canonicalize {
        canonicalize_symmetry(q, symmetry)
    } else {
        q.canonicalize_hemisphere()
    }
}

struct Prepared<'a> {
    objects: &'a [ObjectSpec],
    polys: Vec<Polyhedron>,
    backgrounds: &'a [RgbImage],
    cfg: &'a SynthConfig,
    intrinsics: CameraIntrinsics<f64>,
}

/// Generates sample `id`. Random values are drawn from a generator private
/// to the sample, always in the same order (rotation angle, occlusion level,
/// background, occluder side, jitter x, jitter y), so changing the
/// occlusion cap alone changes nothing but the occluders.
fn generate_sample(p: &Prepared<'_>, id: usize, key: SampleKey) -> Result<Sample, SynthError> {
    let cfg = p.cfg;
    let object = &p.objects[key.object];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(id as u64);
    let angle: f64 = rng.gen_range(0.0..TAU);
    let occlusion_level: f64 = rng.gen::<f64>() * cfg.max_occlusion_fraction;
    let bg = &p.backgrounds[rng.gen_range(0..p.backgrounds.len())];

    let pose = RigidTransform::new(view_orientation(cfg, &key), [0.0, 0.0, cfg.object_distance]);
    let size = [cfg.image_size, cfg.image_size];
    let capture = render_polyhedron(&p.polys[key.object], object.class_id, &pose, &p.intrinsics, size)?;
    let capture = rotate_augment(&capture, angle);
    if capture.mask.is_empty() {
        return Err(SynthError::EmptyMask);
    }
    let background = fit_background(bg, cfg.image_size);
    let comp = overlay(&capture.rgb, &capture.mask, &capture.depth, capture.center, &background, [0, 0])?;
    let mut encoded = encode_focus(&comp.rgb, &comp.mask, cfg.focus_blend)?;
    let occ = occlude(&mut encoded, &comp.mask, occlusion_level, &mut rng)?;
    let (input, window, uv) = crop_with_jitter(&encoded, comp.center, cfg.crop_size, cfg.jitter(), &mut rng);
    let q = target_rotation(capture.pose.rotation, &object.symmetry, cfg.canonicalize_targets);
    Ok(Sample {
        id,
        key,
        split: Split::Train,
        input,
        target: Pose5D::new(uv[0], uv[1], q)?,
        class_id: object.class_id,
        occlusion_fraction: occ.realized,
        crop_center: window.center(),
        crop_origin: window.origin,
        depth_crop: cfg.store_depth.then(|| window.crop_depth(&comp.depth)),
        pose: capture.pose,
    })
}

/// Background resized by tiling (or cut) to `size x size`.
fn fit_background(bg: &RgbImage, size: usize) -> RgbImage {
    if bg.dimensions() == (size as u32, size as u32) {
        return bg.clone();
    }
    RgbImage::from_fn(size as u32, size as u32, |x, y| *bg.get_pixel(x % bg.width(), y % bg.height()))
}

/// Seeded random partition: `round(n * ratio)` ids go to training.
pub fn split_ids(n: usize, ratio: f64, seed: u64) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * ratio).round() as usize;
    let mut out = vec![Split::Val; n];
    for &i in &order[..n_train.min(n)] {
        out[i] = Split::Train;
    }
    out
}

/// Generated samples in id order, with split labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: SynthConfig,
    pub objects: Vec<ObjectSpec>,
    pub intrinsics: CameraIntrinsics<f64>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.split == Split::Train)
    }

    pub fn val(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.split == Split::Val)
    }

    /// Symmetry of each class id (the first object with that id wins).
    pub fn class_symmetries(&self) -> Vec<SymmetrySpec<f64>> {
        let n = self.objects.iter().map(|o| o.class_id + 1).max().unwrap_or(0);
        (0..n)
            .map(|c| {
                self.objects
                    .iter()
                    .find(|o| o.class_id == c)
                    .map(|o| o.symmetry)
                    .unwrap_or_else(SymmetrySpec::none)
            })
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.class_symmetries().len()
    }
}

/// Renders, augments, encodes and crops every sample. Deterministic for a
/// given input; `threads` only changes the schedule.
pub fn generate_dataset(
    objects: &[ObjectSpec],
    backgrounds: &[RgbImage],
    cfg: &SynthConfig,
    threads: usize,
) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    if objects.is_empty() {
        return Err(SynthError::EmptyInput("no objects"));
    }
    if backgrounds.is_empty() || backgrounds.iter().any(|b| b.width() == 0 || b.height() == 0) {
        return Err(SynthError::EmptyInput("no backgrounds"));
    }
    let prepared = Prepared {
        objects,
        polys: objects.iter().map(ObjectSpec::polyhedron).collect::<Result<_, _>>()?,
        backgrounds,
        cfg,
        intrinsics: cfg.intrinsics()?,
    };
    let keys = plan(objects.len(), cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| SynthError::InvalidConfig(format!("thread pool: {e}")))?;
    let mut samples: Vec<Sample> = pool.install(|| {
        keys.par_iter()
            .enumerate()
            .map(|(id, key)| generate_sample(&prepared, id, *key))
            .collect::<Result<Vec<_>, _>>()
    })?;
    for (s, split) in samples.iter_mut().zip(split_ids(keys.len(), cfg.split_ratio, cfg.seed)) {
        s.split = split;
    }
    Ok(Dataset {
        config: cfg.clone(),
        objects: objects.to_vec(),
        intrinsics: prepared.intrinsics,
        samples,
    })
}

/// Smooth two-tone noise texture for compositing.
pub fn procedural_background(size: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = 8usize;
    let grid: Vec<[f64; 3]> = (0..(cells + 1) * (cells + 1))
        .map(|_| [rng.gen_range(20.0..200.0), rng.gen_range(20.0..200.0), rng.gen_range(20.0..200.0)])
        .collect();
    let step = size.max(1) as f64 / cells as f64;
    RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let (gx, gy) = (x as f64 / step, y as f64 / step);
        let (ix, iy) = ((gx.floor() as usize).min(cells - 1), (gy.floor() as usize).min(cells - 1));
        let (fx, fy) = (gx - ix as f64, gy - iy as f64);
        let at = |i: usize, j: usize| grid[j * (cells + 1) + i];
        let mut c = [0u8; 3];
        for (k, v) in c.iter_mut().enumerate() {
            let top = at(ix, iy)[k] * (1.0 - fx) + at(ix + 1, iy)[k] * fx;
            let bottom = at(ix, iy + 1)[k] * (1.0 - fx) + at(ix + 1, iy + 1)[k] * fx;
            *v = (top * (1.0 - fy) + bottom * fy).round() as u8;
        }
        Rgb(c)
    })
}

/// Channels-first network input scaled to `[-1, 1]`.
pub fn image_to_chw<T: Real>(img: &RgbImage) -> Vec<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![T::zero(); 3 * w * h];
    for (x, y, p) in img.enumerate_pixels() {
        for k in 0..3 {
            out[k * w * h + y as usize * w + x as usize] = T::lit(p.0[k] as f64 / 127.5 - 1.0);
        }
    }
    out
}

/// The three asymmetric default objects: a block, a pentagonal frustum and
/// a house-shaped extrusion, each with distinct face colors.
pub fn toy_objects() -> Vec<ObjectSpec> {
    vec![
        ObjectSpec {
            name: "block".into(),
            class_id: 0,
            shape: Shape::Box { size: [0.11, 0.075, 0.05] },
            coloring: Coloring::Distinct { seed: 11 },
            symmetry: SymmetrySpec::none(),
        },
        ObjectSpec {
            name: "frustum".into(),
            class_id: 1,
            shape: Shape::Frustum {
                sides: 5,
                bottom_radius: 0.055,
                top_radius: 0.03,
                height: 0.07,
            },
            coloring: Coloring::Distinct { seed: 12 },
            symmetry: SymmetrySpec::none(),
        },
        ObjectSpec {
            name: "house".into(),
            class_id: 2,
            shape: Shape::Extrusion {
                polygon: vec![[-0.045, -0.035], [0.045, -0.035], [0.045, 0.02], [0.0, 0.05], [-0.045, 0.02]],
                height: 0.06,
            },
            coloring: Coloring::Distinct { seed: 13 },
            symmetry: SymmetrySpec::none(),
        },
    ]
}

/// Rotation-symmetric "dumbbell" stand-in: a 32-sided prism about z with
/// differently colored caps, so the only symmetry is the twist about z. A
/// single narrow side face carries a label color, like a printed label on
/// an otherwise symmetric object.
pub fn symmetric_object(class_id: usize) -> ObjectSpec {
    ObjectSpec {
        name: "dumbbell".into(),
        class_id,
        shape: Shape::Frustum {
            sides: 32,
            bottom_radius: 0.04,
            top_radius: 0.04,
            height: 0.11,
        },
        coloring: Coloring::Banded {
            side: [70, 110, 190],
            top: [230, 200, 40],
            bottom: [40, 170, 90],
            label: Some([240, 240, 240]),
        },
        symmetry: SymmetrySpec::continuous([0.0, 0.0, 1.0]).expect("unit axis"),
    }
}

/// Instances of one object family (blocks of varying proportions sharing a
/// class and color scheme) for held-out-instance evaluation.
pub fn block_family() -> Vec<ObjectSpec> {
    [[0.11, 0.075, 0.05], [0.10, 0.08, 0.045], [0.12, 0.07, 0.055], [0.105, 0.07, 0.05]]
        .iter()
        .enumerate()
        .map(|(i, size)| ObjectSpec {
            name: format!("block_{i}"),
            class_id: 0,
            shape: Shape::Box { size: *size },
            coloring: Coloring::Distinct { seed: 11 },
            symmetry: SymmetrySpec::none(),
        })
        .collect()
}
