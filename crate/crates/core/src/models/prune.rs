//! Unstructured global magnitude pruning with mask-frozen fine-tuning.

use serde::{Deserialize, Serialize};

use super::train::{evaluate, train_masked, Labeled, TrainConfig};
use super::{ModelArtifact, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    pub kind: String,
    pub weights: usize,
    pub zeros: usize,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub target_sparsity: f64,
    pub achieved_sparsity: f64,
    pub per_layer: Vec<LayerSparsity>,
    /// Non-zero trainable parameters before and after.
    pub params_before: usize,
    pub params_after: usize,
    pub val_accuracy_before: f64,
    pub val_accuracy_after: f64,
}

fn nonzero_trainable(model: &ModelArtifact) -> usize {
    model
        .network
        .weights()
        .params
        .iter()
        .filter(|p| p.role.is_trainable())
        .map(|p| p.value.data().iter().filter(|&&v| v != 0.0).count())
        .sum()
}

/// Zeroes the `round(target * n)` prunable weights of smallest magnitude,
/// ties broken by storage position. Returns the keep-masks.
pub fn apply_magnitude_mask(
    model: &mut ModelArtifact,
    target: f64,
) -> Result<Vec<Option<Vec<bool>>>, ModelError> {
    if !(0.0..1.0).contains(&target) {
        return Err(ModelError::Sparsity(target));
    }
    let params = &mut model.network.weights_mut().params;
    let mut ranked: Vec<(f32, usize, usize)> = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        if p.role.is_prunable() {
            ranked.extend(
                p.value
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v.abs(), pi, j)),
            );
        }
    }
    let k = (target * ranked.len() as f64).round() as usize;
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut masks: Vec<Option<Vec<bool>>> = params
        .iter()
        .map(|p| p.role.is_prunable().then(|| vec![true; p.value.len()]))
        .collect();
    for &(_, pi, j) in &ranked[..k] {
        masks[pi].as_mut().expect("prunable")[j] = false;
        params[pi].value.data_mut()[j] = 0.0;
    }
    Ok(masks)
}

fn layer_sparsity(model: &ModelArtifact) -> (f64, Vec<LayerSparsity>) {
    let mut per_layer = Vec::new();
    let (mut total, mut zeros) = (0usize, 0usize);
    for (li, layer) in model.spec().layers.iter().enumerate() {
        let (mut w, mut z) = (0usize, 0usize);
        for p in model.network.layer_params(li) {
            if p.role.is_prunable() {
                w += p.value.len();
                z += p.value.data().iter().filter(|&&v| v == 0.0).count();
            }
        }
        if w > 0 {
            per_layer.push(LayerSparsity {
                layer: li,
                kind: layer.kind_name().to_string(),
                weights: w,
                zeros: z,
                sparsity: z as f64 / w as f64,
            });
            total += w;
            zeros += z;
        }
    }
    (zeros as f64 / total.max(1) as f64, per_layer)
}

/// Prunes a copy of `model` to `target` sparsity and fine-tunes it for
/// `finetune.epochs` epochs with the pruned positions frozen at zero.
pub fn prune_magnitude<T: Labeled>(
    model: &ModelArtifact,
    target: f64,
    finetune: &TrainConfig,
    train_set: &[T],
    val_set: &[T],
) -> Result<(ModelArtifact, PruneReport), ModelError> {
    if !(0.0..1.0).contains(&target) {
        return Err(ModelError::Sparsity(target));
    }
    let val_accuracy_before = evaluate(model, val_set)?;
    let params_before = nonzero_trainable(model);
    let mut pruned = model.clone();
    if target > 0.0 {
        let masks = apply_magnitude_mask(&mut pruned, target)?;
        if finetune.epochs > 0 {
            train_masked(&mut pruned, train_set, val_set, finetune, Some(masks))?;
        }
    }
    let val_accuracy_after = evaluate(&pruned, val_set)?;
    if target > 0.0 {
        pruned.meta.val_accuracy = Some(val_accuracy_after);
    }
    let (achieved_sparsity, per_layer) = layer_sparsity(&pruned);
    let report = PruneReport {
        target_sparsity: target,
        achieved_sparsity: if target > 0.0 { achieved_sparsity } else { 0.0 },
        per_layer,
        params_before,
        params_after: nonzero_trainable(&pruned),
        val_accuracy_before,
        val_accuracy_after,
    };
    Ok((pruned, report))
}
