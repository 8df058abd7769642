use sixd_core::SymmetrySpec;
use sixd_net::Network;
use sixd_synth::{image_to_chw, Sample};

use crate::error::EvalError;
use crate::metrics::EvalRecord;

/// Runs `net` on each sample and scores it against the sample's target.
/// `class_map` rewrites class ids before prediction (for per-class models).
pub fn predict_records<'a>(
    net: &Network<f32>,
    samples: impl IntoIterator<Item = &'a Sample>,
    symmetries: &[SymmetrySpec<f64>],
    crop_size: usize,
    class_map: impl Fn(usize) -> usize,
) -> Result<Vec<EvalRecord>, EvalError> {
    samples
        .into_iter()
        .map(|s| {
            let pred = net.predict_for_class(&image_to_chw::<f32>(&s.input), class_map(s.class_id))?;
            let sym = symmetries.get(s.class_id).copied().unwrap_or_else(SymmetrySpec::none);
            let mut r = EvalRecord::new(
                s.id,
                s.class_id,
                pred.cast(),
                s.target,
                s.occlusion_fraction,
                &sym,
                crop_size,
            );
            r.ground_truth = Some(s.pose);
            Ok(r)
        })
        .collect()
}
