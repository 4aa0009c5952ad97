//! Inference averaged over several input resolutions.

use cjade_nn::Tensor;

use super::{ModelArtifact, ModelError};
use crate::image::{fit_center, resize_bilinear};

pub const DEFAULT_SCALES: [f64; 3] = [1.0, 0.75, 0.5];

/// The view of `image` the model sees at one scale: bilinear resize by
/// `scale`, then centred on the model's input canvas.
pub fn scale_view(image: &Tensor, scale: f64, input_size: usize) -> Tensor {
    let side = ((input_size as f64 * scale).round() as usize).max(1);
    let resized = resize_bilinear(image, side, side);
    fit_center(&resized, input_size)
}

/// Mean of the logits over `scales`. Accepts one `[C, H, W]` image of any
/// spatial size; it is first resized to the model input.
pub fn multiscale_forward_with(
    model: &ModelArtifact,
    image: &Tensor,
    scales: &[f64],
) -> Result<Tensor, ModelError> {
    let size = model.input_size();
    let base = match *image.shape() {
        [c, _, _] if c == model.meta.input_shape[0] => resize_bilinear(image, size, size),
        ref s => {
            return Err(ModelError::Invalid(format!(
                "multi-scale input must be one [C, H, W] image, got {s:?}"
            )))
        }
    };
    if scales.is_empty() {
        return Err(ModelError::Invalid("empty scale set".into()));
    }
    let views: Vec<Tensor> = scales.iter().map(|&s| scale_view(&base, s, size)).collect();
    let refs: Vec<&Tensor> = views.iter().collect();
    let batch = Tensor::stack(&refs)?;
    let logits = model.network.forward(&batch)?;
    let classes = model.class_count();
    let mut mean = vec![0.0f64; classes];
    for row in logits.data().chunks(classes) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    let n = scales.len() as f64;
    Ok(Tensor::new(
        vec![1, classes],
        mean.into_iter().map(|m| (m / n) as f32).collect(),
    )?)
}

pub fn multiscale_forward(model: &ModelArtifact, image: &Tensor) -> Result<Tensor, ModelError> {
    multiscale_forward_with(model, image, &DEFAULT_SCALES)
}
