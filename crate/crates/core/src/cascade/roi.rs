use cjade_nn::Tensor;

use super::CascadeError;
use crate::image::crop;
use crate::protocol::RoiBox;

/// Crops `image` to the cells of `activation` at or above mean + 1σ,
/// upscaled to pixels and grown by `margin` × image side on every edge.
/// An empty selection keeps the whole image.
pub fn extract_roi(
    image: &Tensor,
    activation: &Tensor,
    margin: f64,
) -> Result<(Tensor, RoiBox), CascadeError> {
    let [_, h, w] = *image.shape() else {
        return Err(CascadeError::Roi(format!(
            "image shape {:?}",
            image.shape()
        )));
    };
    let [mh, mw] = *activation.shape() else {
        return Err(CascadeError::Roi(format!(
            "activation map must be [H, W], got {:?}",
            activation.shape()
        )));
    };
    if mh == 0 || mw == 0 || h % mh != 0 || w % mw != 0 || h / mh != w / mw {
        return Err(CascadeError::Roi(format!(
            "{mh}x{mw} map does not upscale to a {h}x{w} image by one integer factor"
        )));
    }
    if u16::try_from(h.max(w)).is_err() {
        return Err(CascadeError::Roi(format!(
            "image side {} exceeds u16",
            h.max(w)
        )));
    }
    let s = h / mh;
    let a = activation.data();
    let n = a.len() as f64;
    let mean = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = a.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let threshold = mean + var.sqrt();

    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for (i, &v) in a.iter().enumerate() {
        if v as f64 >= threshold && v.is_finite() {
            let (y, x) = (i / mw, i % mw);
            bounds = Some(match bounds {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
    }
    let (x0, y0, x1, y1) = match bounds {
        Some((x0, y0, x1, y1)) => (x0 * s, y0 * s, (x1 + 1) * s, (y1 + 1) * s),
        None => (0, 0, w, h),
    };
    let grow_x = (margin.clamp(0.0, 1.0) * w as f64).ceil() as usize;
    let grow_y = (margin.clamp(0.0, 1.0) * h as f64).ceil() as usize;
    let (x0, y0) = (x0.saturating_sub(grow_x), y0.saturating_sub(grow_y));
    let (x1, y1) = ((x1 + grow_x).min(w), (y1 + grow_y).min(h));
    let roi = RoiBox {
        x: x0 as u16,
        y: y0 as u16,
        width: (x1 - x0) as u16,
        height: (y1 - y0) as u16,
    };
    Ok((crop(image, x0, y0, x1 - x0, y1 - y0), roi))
}
