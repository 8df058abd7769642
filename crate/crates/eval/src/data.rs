//! Conversion from generated datasets to network training data.

use sixd_net::{TrainSample, TrainingData};
use sixd_synth::{image_to_chw, Dataset, Sample};

pub fn train_sample(s: &Sample) -> TrainSample<f32> {
    TrainSample {
        input: image_to_chw(&s.input),
        target: s.target.cast(),
        class_id: s.class_id,
        occlusion_fraction: s.occlusion_fraction,
    }
}

/// Train and validation splits of `ds` as `f32` network samples.
pub fn training_data(ds: &Dataset) -> TrainingData<f32> {
    TrainingData {
        train: ds.train().map(train_sample).collect(),
        val: ds.val().map(train_sample).collect(),
        symmetries: ds.class_symmetries().iter().map(|s| s.cast()).collect(),
        crop_size: ds.config.crop_size,
    }
}

/// `[channels, height, width]` of the crops in `ds`.
pub fn input_shape(ds: &Dataset) -> [usize; 3] {
    [3, ds.config.crop_size, ds.config.crop_size]
}

/// `count` procedural backgrounds of side `size`, seeded from `seed`.
pub fn procedural_backgrounds(count: usize, size: usize, seed: u64) -> Vec<sixd_synth::RgbImage> {
    (0..count as u64)
        .map(|i| sixd_synth::procedural_background(size, seed.wrapping_mul(31).wrapping_add(1000 + i)))
        .collect()
}
