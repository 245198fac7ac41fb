//! Built-in model descriptions.
//!
//! Every entry can also be built at reduced width: a divisor shrinks all
//! conv filter counts and the hidden classifier width (never below one),
//! which keeps the topology while making desk-scale runs cheap.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Error;
use crate::model::{Block, LayerKind, ModelSpec, SkipEdge};
use crate::Result;

const ZOO: &[&str] = &["vgg16-cifar", "conv4-mnist", "conv4-mini", "resnet18-cifar", "resnet18-mini"];

fn scaled(ch: usize, divisor: usize) -> usize {
    core::cmp::max(1, ch / divisor)
}

fn name_with_divisor(base: &str, divisor: usize) -> String {
    if divisor == 1 {
        base.into()
    } else {
        format!("{base}-d{divisor}")
    }
}

/// 13-conv VGG with batch norm and a compact 512-512-10 classifier head,
/// sized for 32x32 RGB inputs.
pub fn vgg16(divisor: usize) -> ModelSpec {
    let plan: &[&[usize]] = &[&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut layers = Vec::new();
    for group in plan {
        for &ch in *group {
            layers.push(LayerKind::Conv { out_ch: scaled(ch, divisor), k: 3, stride: 1, pad: 1 });
            layers.push(LayerKind::BatchNorm);
            layers.push(LayerKind::ReLU);
        }
        layers.push(LayerKind::MaxPool { k: 2, stride: 2 });
    }
    layers.push(LayerKind::Flatten);
    layers.push(LayerKind::Dense { out: scaled(512, divisor) });
    layers.push(LayerKind::ReLU);
    layers.push(LayerKind::Dense { out: 10 });
    ModelSpec {
        name: name_with_divisor("vgg16-cifar", divisor),
        input: (3, 32, 32),
        num_classes: 10,
        layers,
        blocks: Vec::new(),
        skips: Vec::new(),
    }
}

/// Four-conv MNIST model: 64-128-256-512 filters, pools after the first and
/// last conv, 512-wide hidden classifier.
pub fn conv4(divisor: usize) -> ModelSpec {
    let mut layers = Vec::new();
    for (i, ch) in [64usize, 128, 256, 512].into_iter().enumerate() {
        layers.push(LayerKind::Conv { out_ch: scaled(ch, divisor), k: 3, stride: 1, pad: 1 });
        layers.push(LayerKind::BatchNorm);
        layers.push(LayerKind::ReLU);
        if i == 0 {
            layers.push(LayerKind::MaxPool { k: 2, stride: 2 });
        }
    }
    layers.push(LayerKind::MaxPool { k: 2, stride: 2 });
    layers.push(LayerKind::Flatten);
    layers.push(LayerKind::Dense { out: scaled(512, divisor) });
    layers.push(LayerKind::ReLU);
    layers.push(LayerKind::Dense { out: 10 });
    let name = match divisor {
        1 => "conv4-mnist".into(),
        8 => "conv4-mini".into(),
        d => format!("conv4-mnist-d{d}"),
    };
    ModelSpec {
        name,
        input: (1, 28, 28),
        num_classes: 10,
        layers,
        blocks: Vec::new(),
        skips: Vec::new(),
    }
}

/// 18-layer residual model for 32x32 inputs: a stem conv plus eight
/// two-conv blocks with identity or projected skip connections, downsampling
/// at the third, fifth, and seventh block.
pub fn resnet18(divisor: usize, num_classes: usize) -> ModelSpec {
    let mut layers = Vec::new();
    let mut blocks = Vec::new();
    // Stem.
    layers.push(LayerKind::Conv { out_ch: scaled(64, divisor), k: 3, stride: 1, pad: 1 });
    layers.push(LayerKind::BatchNorm);
    layers.push(LayerKind::ReLU);
    blocks.push(Block { start: 0, end: 2 });
    let widths = [64usize, 64, 128, 128, 256, 256, 512, 512];
    for (i, ch) in widths.into_iter().enumerate() {
        let stride = if i == 2 || i == 4 || i == 6 { 2 } else { 1 };
        let start = layers.len();
        layers.push(LayerKind::Conv { out_ch: scaled(ch, divisor), k: 3, stride, pad: 1 });
        layers.push(LayerKind::BatchNorm);
        layers.push(LayerKind::ReLU);
        layers.push(LayerKind::Conv { out_ch: scaled(ch, divisor), k: 3, stride: 1, pad: 1 });
        layers.push(LayerKind::BatchNorm);
        layers.push(LayerKind::ReLU);
        blocks.push(Block { start, end: layers.len() - 1 });
    }
    layers.push(LayerKind::MaxPool { k: 4, stride: 4 });
    layers.push(LayerKind::Flatten);
    layers.push(LayerKind::Dense { out: scaled(512, divisor) });
    layers.push(LayerKind::ReLU);
    layers.push(LayerKind::Dense { out: num_classes });
    let skips = (0..8).map(|i| SkipEdge { from: i, to: i + 1 }).collect();
    ModelSpec {
        name: name_with_divisor("resnet18-cifar", divisor),
        input: (3, 32, 32),
        num_classes,
        layers,
        blocks,
        skips,
    }
}

/// Looks a model up by zoo name.
pub fn build_model(name: &str) -> Result<ModelSpec> {
    match name {
        "vgg16-cifar" => Ok(vgg16(1)),
        "conv4-mnist" => Ok(conv4(1)),
        "conv4-mini" => Ok(conv4(8)),
        "resnet18-cifar" => Ok(resnet18(1, 100)),
        "resnet18-mini" => Ok(ModelSpec { name: "resnet18-mini".into(), ..resnet18(8, 10) }),
        other => Err(Error::Config(format!(
            "unknown model '{other}'; available: {}",
            ZOO.join(", ")
        ))),
    }
}
