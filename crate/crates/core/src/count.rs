//! Parameter and multiply-accumulate counters.
//!
//! Both are pure functions of the model description. Parameter counts cover
//! conv weights and biases, batch-norm scale/shift plus both running
//! statistics (four values per channel, matching what a checkpoint stores),
//! and dense weights and biases. MAC counts cover conv and dense layers only
//! — normalization, activations, and pooling are excluded — for a single
//! input image.

use crate::model::{activation_shapes, plan_skips, LayerKind, ModelSpec};
use crate::Result;

/// Total learnable + stored parameter count, skip-path projections included.
pub fn count_params(spec: &ModelSpec) -> Result<u64> {
    let shapes = activation_shapes(spec)?;
    let mut total = 0u64;
    for (i, l) in spec.layers.iter().enumerate() {
        let (c, _, _) = shapes[i];
        total += match *l {
            LayerKind::Conv { out_ch, k, .. } => (out_ch * c * k * k + out_ch) as u64,
            LayerKind::BatchNorm => 4 * c as u64,
            LayerKind::Dense { out } => (out * c + out) as u64,
            _ => 0,
        };
    }
    for p in plan_skips(spec, &shapes)?.proj.iter().flatten() {
        total += (p.out_ch * p.in_ch + p.out_ch) as u64; // 1x1 conv
        total += 4 * p.out_ch as u64; // its batch norm
    }
    Ok(total)
}

/// Multiply-accumulate count for one forward pass over a single image of
/// height/width `input_hw` (channel count comes from the spec).
pub fn count_macs(spec: &ModelSpec, input_hw: (usize, usize)) -> Result<u64> {
    let mut sized = spec.clone();
    sized.input.1 = input_hw.0;
    sized.input.2 = input_hw.1;
    let shapes = activation_shapes(&sized)?;
    let mut total = 0u64;
    for (i, l) in sized.layers.iter().enumerate() {
        let (c, _, _) = shapes[i];
        total += match *l {
            LayerKind::Conv { out_ch, k, .. } => {
                let (_, oh, ow) = shapes[i + 1];
                (out_ch * c * k * k * oh * ow) as u64
            }
            LayerKind::Dense { out } => (out * c) as u64,
            _ => 0,
        };
    }
    for p in plan_skips(&sized, &shapes)?.proj.iter().flatten() {
        total += (p.out_ch * p.in_ch * p.out_h * p.out_w) as u64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn single_conv() -> ModelSpec {
        ModelSpec {
            name: "one-conv".into(),
            input: (1, 4, 4),
            num_classes: 16,
            layers: vec![
                LayerKind::Conv { out_ch: 1, k: 3, stride: 1, pad: 1 },
                LayerKind::Flatten,
                LayerKind::Dense { out: 16 },
            ],
            blocks: vec![],
            skips: vec![],
        }
    }

    #[test]
    fn three_by_three_conv_counts_ten_params() {
        let spec = single_conv();
        // 9 weights + 1 bias for the conv; the head adds 16*16 + 16.
        assert_eq!(count_params(&spec).unwrap(), 10 + 16 * 16 + 16);
    }

    #[test]
    fn one_by_one_conv_on_4x4_counts_sixteen_macs() {
        let spec = ModelSpec {
            name: "pointwise".into(),
            input: (1, 4, 4),
            num_classes: 16,
            layers: vec![
                LayerKind::Conv { out_ch: 1, k: 1, stride: 1, pad: 0 },
                LayerKind::Flatten,
                LayerKind::Dense { out: 16 },
            ],
            blocks: vec![],
            skips: vec![],
        };
        assert_eq!(count_macs(&spec, (4, 4)).unwrap(), 16 + 16 * 16);
    }

    #[test]
    fn counters_are_pure_functions_of_the_spec() {
        let spec = single_conv();
        assert_eq!(count_params(&spec).unwrap(), count_params(&spec.clone()).unwrap());
        assert_eq!(
            count_macs(&spec, (4, 4)).unwrap(),
            count_macs(&spec.clone(), (4, 4)).unwrap()
        );
    }

    #[test]
    fn macs_follow_the_requested_input_size() {
        let spec = ModelSpec {
            name: "scalable".into(),
            input: (1, 4, 4),
            num_classes: 2,
            layers: vec![
                LayerKind::Conv { out_ch: 2, k: 1, stride: 1, pad: 0 },
                LayerKind::MaxPool { k: 4, stride: 4 },
                LayerKind::Flatten,
                LayerKind::Dense { out: 2 },
            ],
            blocks: vec![],
            skips: vec![],
        };
        // Conv contributes 2*h*w MACs; pooling and the head stay fixed
        // relative to the 4x4-divisible sizes chosen here.
        let m4 = count_macs(&spec, (4, 4)).unwrap();
        let m8 = count_macs(&spec, (8, 8)).unwrap();
        assert_eq!(m4, 2 * 16 + 2 * 2);
        assert_eq!(m8, 2 * 64 + (2 * 2 * 2) * 2);
    }
}
