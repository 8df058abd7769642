//! Synthetic training data for 5D pose regression: a toy turntable
//! renderer, compositing with red focus encoding, rotation, occlusion and
//! crop-jitter augmentation, and seeded dataset generation with an on-disk
//! PNG + JSON layout.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod image;
pub mod io;
pub mod render;

pub use augment::{occlude, occlude_from, rotate_augment, Occlusion, Side, MAX_OCCLUSION};
pub use dataset::{
    block_family, generate_dataset, image_to_chw, plan, procedural_background, random_rotation, split_ids,
    symmetric_object, toy_objects, view_orientation, Dataset, Sample, SampleKey, Split, SynthConfig,
};
pub use error::SynthError;
pub use ::image::RgbImage;
pub use image::{
    background_subtract, blend_channel, crop_with_jitter, encode_focus, overlay, Composite, CropWindow, Mask, RED,
};
pub use io::{load_dataset, read_manifest, save_dataset, write_manifest, Manifest, MANIFEST_FILE};
pub use render::{
    center_depth_offset, render_polyhedron, render_toy_capture, Capture, Coloring, ObjectSpec, Polyhedron, Shape,
};
