//! Model descriptions and the assembled, trainable network.
//!
//! A [`ModelSpec`] is a declarative layer list plus optional residual
//! structure (blocks and skip edges). [`Network::assemble`] validates the
//! description, propagates activation shapes, and materializes parameter
//! storage; skip connections whose endpoint shapes differ automatically get
//! a 1x1 convolution + batch-norm projection on the skip path.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::layer::{relu_backward, relu_forward, BatchNorm, BnCache, Conv, Dense, MaxPool, PoolCache};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor4;
use crate::Result;

/// One layer of a model description. Only output-defining attributes are
/// stored; input widths are inferred during assembly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum LayerKind {
    Conv { out_ch: usize, k: usize, stride: usize, pad: usize },
    BatchNorm,
    ReLU,
    MaxPool { k: usize, stride: usize },
    Flatten,
    Dense { out: usize },
}

/// Inclusive range of layer indices forming one residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Block {
    pub start: usize,
    pub end: usize,
}

/// Connects the output of block `from` to the pre-activation of the final
/// ReLU of block `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkipEdge {
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub name: String,
    /// Input (channels, height, width).
    pub input: (usize, usize, usize),
    pub num_classes: usize,
    pub layers: Vec<LayerKind>,
    pub blocks: Vec<Block>,
    pub skips: Vec<SkipEdge>,
}

impl ModelSpec {
    /// Stable byte encoding of the architecture, used for checkpoint
    /// compatibility digests.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        fn push_u32(out: &mut Vec<u8>, v: usize) {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let mut out = Vec::new();
        out.extend_from_slice(b"MSPEC1");
        push_u32(&mut out, self.name.len());
        out.extend_from_slice(self.name.as_bytes());
        push_u32(&mut out, self.input.0);
        push_u32(&mut out, self.input.1);
        push_u32(&mut out, self.input.2);
        push_u32(&mut out, self.num_classes);
        push_u32(&mut out, self.layers.len());
        for l in &self.layers {
            match *l {
                LayerKind::Conv { out_ch, k, stride, pad } => {
                    out.push(1);
                    push_u32(&mut out, out_ch);
                    push_u32(&mut out, k);
                    push_u32(&mut out, stride);
                    push_u32(&mut out, pad);
                }
                LayerKind::BatchNorm => out.push(2),
                LayerKind::ReLU => out.push(3),
                LayerKind::MaxPool { k, stride } => {
                    out.push(4);
                    push_u32(&mut out, k);
                    push_u32(&mut out, stride);
                }
                LayerKind::Flatten => out.push(5),
                LayerKind::Dense { out: o } => {
                    out.push(6);
                    push_u32(&mut out, o);
                }
            }
        }
        push_u32(&mut out, self.blocks.len());
        for b in &self.blocks {
            push_u32(&mut out, b.start);
            push_u32(&mut out, b.end);
        }
        push_u32(&mut out, self.skips.len());
        for s in &self.skips {
            push_u32(&mut out, s.from);
            push_u32(&mut out, s.to);
        }
        out
    }

    /// Layer indices holding convolutions, in order.
    pub fn conv_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, LayerKind::Conv { .. }).then_some(i))
            .collect()
    }
}

/// Parameter state for one assembled layer.
#[derive(Clone, Debug)]
pub enum LayerState {
    Conv(Conv),
    Bn(BatchNorm),
    ReLU,
    Pool(MaxPool),
    Flatten,
    Dense(Dense),
}

/// 1x1 convolution + batch norm aligning a skip path to its target shape.
#[derive(Clone, Debug)]
pub struct Projection {
    pub conv: Conv,
    pub bn: BatchNorm,
}

enum Cache {
    Conv { x: Tensor4 },
    Bn(BnCache),
    Relu { y: Tensor4 },
    Pool(PoolCache),
    Flatten { c: usize, h: usize, w: usize },
    Dense { x: Tensor4 },
}

struct ProjCache {
    x: Tensor4,
    bn: BnCache,
}

/// Activation record of one training forward pass.
pub struct Tape {
    caches: Vec<Cache>,
    proj: Vec<Option<ProjCache>>,
}

/// Assembled network: validated spec plus parameter and bookkeeping state.
#[derive(Clone, Debug)]
pub struct Network {
    spec: ModelSpec,
    layers: Vec<LayerState>,
    projections: Vec<Option<Projection>>,
    frozen: Vec<bool>,
    /// For every conv layer: the original filter index of each currently
    /// surviving filter, in order.
    survivors: BTreeMap<usize, Vec<u32>>,
    /// For every conv layer: its as-assembled filter count.
    orig_widths: BTreeMap<usize, u32>,
    /// Input shape (c, h, w) of each layer.
    in_shapes: Vec<(usize, usize, usize)>,
    /// For each skip edge: layer index after which the source activation is
    /// captured (`usize::MAX` means the model input itself).
    stash_after: Vec<usize>,
    /// For each skip edge: the ReLU layer index where the addition lands.
    add_at: Vec<usize>,
}

/// Shape inference for a spec; returns per-layer input shapes plus the final
/// output shape as the last element.
pub fn activation_shapes(spec: &ModelSpec) -> Result<Vec<(usize, usize, usize)>> {
    let (c0, h0, w0) = spec.input;
    if c0 == 0 || h0 == 0 || w0 == 0 {
        return Err(Error::Config(format!("input shape ({c0},{h0},{w0}) has a zero dimension")));
    }
    if spec.layers.is_empty() {
        return Err(Error::Config("model has no layers".into()));
    }
    let mut shapes = Vec::with_capacity(spec.layers.len() + 1);
    let mut cur = (c0, h0, w0);
    let mut flattened = false;
    for (i, l) in spec.layers.iter().enumerate() {
        shapes.push(cur);
        let (c, h, w) = cur;
        cur = match *l {
            LayerKind::Conv { out_ch, k, stride, pad } => {
                if flattened {
                    return Err(Error::Config(format!("layer {i}: conv after flatten")));
                }
                if out_ch == 0 || k == 0 || stride == 0 {
                    return Err(Error::Config(format!("layer {i}: conv with zero attribute")));
                }
                if h + 2 * pad < k || w + 2 * pad < k {
                    return Err(Error::Config(format!(
                        "layer {i}: kernel {k} exceeds padded input {h}x{w}"
                    )));
                }
                (out_ch, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1)
            }
            LayerKind::BatchNorm => {
                if flattened {
                    return Err(Error::Config(format!("layer {i}: batch norm after flatten")));
                }
                cur
            }
            LayerKind::ReLU => cur,
            LayerKind::MaxPool { k, stride } => {
                if flattened {
                    return Err(Error::Config(format!("layer {i}: pool after flatten")));
                }
                if k == 0 || stride == 0 || h < k || w < k {
                    return Err(Error::Config(format!(
                        "layer {i}: pool window {k} does not fit input {h}x{w}"
                    )));
                }
                (c, (h - k) / stride + 1, (w - k) / stride + 1)
            }
            LayerKind::Flatten => {
                if flattened {
                    return Err(Error::Config(format!("layer {i}: repeated flatten")));
                }
                flattened = true;
                (c * h * w, 1, 1)
            }
            LayerKind::Dense { out } => {
                if !flattened {
                    return Err(Error::Config(format!("layer {i}: dense before flatten")));
                }
                if out == 0 {
                    return Err(Error::Config(format!("layer {i}: dense with zero width")));
                }
                (out, 1, 1)
            }
        };
    }
    shapes.push(cur);
    Ok(shapes)
}

/// Derived geometry of one skip-path projection.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ProjPlan {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) struct SkipPlan {
    pub stash_after: Vec<usize>,
    pub add_at: Vec<usize>,
    pub proj: Vec<Option<ProjPlan>>,
}

/// Validates residual structure and decides, per skip edge, whether the
/// source must pass through a strided 1x1 conv + batch norm to match the
/// landing shape.
pub(crate) fn plan_skips(spec: &ModelSpec, shapes: &[(usize, usize, usize)]) -> Result<SkipPlan> {
    let nl = spec.layers.len();
    for (bi, b) in spec.blocks.iter().enumerate() {
        if b.start > b.end || b.end >= nl {
            return Err(Error::Config(format!(
                "block {bi} range {}..={} is out of bounds",
                b.start, b.end
            )));
        }
        if bi > 0 && spec.blocks[bi - 1].end >= b.start {
            return Err(Error::Config(format!("block {bi} overlaps its predecessor")));
        }
    }
    let mut plan = SkipPlan {
        stash_after: Vec::with_capacity(spec.skips.len()),
        add_at: Vec::with_capacity(spec.skips.len()),
        proj: Vec::with_capacity(spec.skips.len()),
    };
    let mut seen_targets = BTreeMap::new();
    for (si, s) in spec.skips.iter().enumerate() {
        let (fb, tb) = (s.from, s.to);
        if fb >= spec.blocks.len() || tb >= spec.blocks.len() || fb >= tb {
            return Err(Error::Config(format!(
                "skip edge {si} ({fb} -> {tb}) does not reference increasing valid blocks"
            )));
        }
        if seen_targets.insert(tb, si).is_some() {
            return Err(Error::Config(format!("block {tb} is the target of two skip edges")));
        }
        let end = spec.blocks[tb].end;
        if spec.layers[end] != LayerKind::ReLU {
            return Err(Error::Config(format!(
                "skip edge {si} lands on layer {end}, which is not a relu"
            )));
        }
        let src_layer = spec.blocks[fb].end;
        let src_shape = shapes[src_layer + 1];
        let dst_shape = shapes[end]; // input of the final relu
        plan.stash_after.push(src_layer);
        plan.add_at.push(end);
        if src_shape == dst_shape {
            plan.proj.push(None);
        } else {
            let (sc, sh, sw) = src_shape;
            let (dc, dh, dw) = dst_shape;
            if dh == 0 || dw == 0 || sh % dh != 0 || sw % dw != 0 {
                return Err(Error::Config(format!(
                    "skip edge {si}: cannot map {sh}x{sw} onto {dh}x{dw} with a strided 1x1 conv"
                )));
            }
            let stride = sh / dh;
            if (sh - 1) / stride + 1 != dh || (sw - 1) / stride + 1 != dw {
                return Err(Error::Config(format!(
                    "skip edge {si}: stride {stride} projection misses target {dh}x{dw}"
                )));
            }
            plan.proj.push(Some(ProjPlan { in_ch: sc, out_ch: dc, stride, out_h: dh, out_w: dw }));
        }
    }
    Ok(plan)
}

impl Network {
    /// Validates a spec and materializes zero-initialized parameters.
    pub fn assemble(spec: ModelSpec) -> Result<Network> {
        let shapes = activation_shapes(&spec)?;
        let out_shape = shapes[spec.layers.len()];
        match spec.layers.last() {
            Some(LayerKind::Dense { .. }) => {}
            _ => return Err(Error::Config("model must end with a dense layer".into())),
        }
        if out_shape.0 != spec.num_classes {
            return Err(Error::Config(format!(
                "final layer emits {} values but the model declares {} classes",
                out_shape.0, spec.num_classes
            )));
        }

        // Residual structure.
        let nl = spec.layers.len();
        let skip_plan = plan_skips(&spec, &shapes)?;
        let projections: Vec<Option<Projection>> = skip_plan
            .proj
            .iter()
            .map(|p| {
                p.as_ref().map(|p| Projection {
                    conv: Conv::new(p.in_ch, p.out_ch, 1, p.stride, 0),
                    bn: BatchNorm::new(p.out_ch),
                })
            })
            .collect();
        let (stash_after, add_at) = (skip_plan.stash_after, skip_plan.add_at);

        // Parameter storage.
        let mut layers = Vec::with_capacity(nl);
        for (i, l) in spec.layers.iter().enumerate() {
            let (c, _, _) = shapes[i];
            layers.push(match *l {
                LayerKind::Conv { out_ch, k, stride, pad } => {
                    LayerState::Conv(Conv::new(c, out_ch, k, stride, pad))
                }
                LayerKind::BatchNorm => LayerState::Bn(BatchNorm::new(c)),
                LayerKind::ReLU => LayerState::ReLU,
                LayerKind::MaxPool { k, stride } => LayerState::Pool(MaxPool { k, stride }),
                LayerKind::Flatten => LayerState::Flatten,
                LayerKind::Dense { out } => LayerState::Dense(Dense::new(c, out)),
            });
        }

        let mut survivors = BTreeMap::new();
        let mut orig_widths = BTreeMap::new();
        for i in spec.conv_layers() {
            if let LayerKind::Conv { out_ch, .. } = spec.layers[i] {
                survivors.insert(i, (0..out_ch as u32).collect());
                orig_widths.insert(i, out_ch as u32);
            }
        }

        Ok(Network {
            frozen: vec![false; nl],
            spec,
            layers,
            projections,
            survivors,
            orig_widths,
            in_shapes: shapes,
            stash_after,
            add_at,
        })
    }

    /// Fills all weights with Kaiming-uniform draws derived from `seed`.
    pub fn init(&mut self, seed: u64) {
        let mut rng = Rng::new(derive_seed(seed, &[0x696e_6974]));
        fn fill_conv(conv: &mut Conv, rng: &mut Rng) {
            let fan_in = (conv.in_ch * conv.k * conv.k) as f32;
            let bound = libm::sqrtf(6.0 / fan_in);
            for v in conv.w.iter_mut() {
                *v = rng.uniform(-bound, bound);
            }
            let bb = 1.0 / libm::sqrtf(fan_in);
            for v in conv.b.iter_mut() {
                *v = rng.uniform(-bb, bb);
            }
        }
        for l in &mut self.layers {
            match l {
                LayerState::Conv(c) => fill_conv(c, &mut rng),
                LayerState::Dense(d) => {
                    let fan_in = d.in_f as f32;
                    let bound = libm::sqrtf(6.0 / fan_in);
                    for v in d.w.iter_mut() {
                        *v = rng.uniform(-bound, bound);
                    }
                    let bb = 1.0 / libm::sqrtf(fan_in);
                    for v in d.b.iter_mut() {
                        *v = rng.uniform(-bb, bb);
                    }
                }
                LayerState::Bn(b) => {
                    b.gamma.fill(1.0);
                    b.beta.fill(0.0);
                    b.running_mean.fill(0.0);
                    b.running_var.fill(1.0);
                }
                _ => {}
            }
        }
        for p in self.projections.iter_mut().flatten() {
            fill_conv(&mut p.conv, &mut rng);
            p.bn.gamma.fill(1.0);
            p.bn.beta.fill(0.0);
            p.bn.running_mean.fill(0.0);
            p.bn.running_var.fill(1.0);
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerState] {
        &self.layers
    }

    pub fn projections(&self) -> &[Option<Projection>] {
        &self.projections
    }

    /// Input shape (c, h, w) of layer `i`; index `len()` holds the output.
    pub fn in_shape(&self, i: usize) -> (usize, usize, usize) {
        self.in_shapes[i]
    }

    pub fn survivors(&self, layer: usize) -> Option<&[u32]> {
        self.survivors.get(&layer).map(|v| v.as_slice())
    }

    pub fn freeze(&mut self, layer: usize) -> Result<()> {
        if layer >= self.layers.len() {
            return Err(Error::InvalidRequest(format!("freeze: no layer {layer}")));
        }
        self.frozen[layer] = true;
        Ok(())
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.fill(false);
    }

    pub fn is_frozen(&self, layer: usize) -> bool {
        self.frozen[layer]
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let (_, c, h, w) = x.shape();
        if (c, h, w) != self.spec.input {
            return Err(Error::InvalidRequest(format!(
                "input shape ({c},{h},{w}) does not match the model input {:?}",
                self.spec.input
            )));
        }
        Ok(())
    }

    /// Inference forward pass (running batch-norm statistics).
    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut stashes: Vec<Option<Tensor4>> = vec![None; self.spec.skips.len()];
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(e) = self.add_edge_at(i) {
                let stash = stashes[e].take().expect("stash captured before use");
                let skip = match &self.projections[e] {
                    Some(p) => p.bn.forward_eval(&p.conv.forward(&stash)),
                    None => stash,
                };
                cur.add_assign(&skip)?;
            }
            cur = match l {
                LayerState::Conv(c) => c.forward(&cur),
                LayerState::Bn(b) => b.forward_eval(&cur),
                LayerState::ReLU => relu_forward(cur),
                LayerState::Pool(p) => p.forward(&cur).0,
                LayerState::Flatten => {
                    let (n, c, h, w) = cur.shape();
                    cur.into_shape(n, c * h * w, 1, 1)?
                }
                LayerState::Dense(d) => d.forward(&cur),
            };
            for (e, &after) in self.stash_after.iter().enumerate() {
                if after == i {
                    stashes[e] = Some(cur.clone());
                }
            }
        }
        Ok(cur)
    }

    fn add_edge_at(&self, layer: usize) -> Option<usize> {
        self.add_at.iter().position(|&a| a == layer)
    }

    /// Training forward pass; batch-norm layers consume batch statistics and
    /// update running ones (unless frozen).
    pub fn forward_train(&mut self, x: &Tensor4) -> Result<(Tensor4, Tape)> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut proj_caches: Vec<Option<ProjCache>> = Vec::new();
        proj_caches.resize_with(self.spec.skips.len(), || None);
        let mut stashes: Vec<Option<Tensor4>> = vec![None; self.spec.skips.len()];
        for i in 0..self.layers.len() {
            if let Some(e) = self.add_edge_at(i) {
                let stash = stashes[e].take().expect("stash captured before use");
                match &mut self.projections[e] {
                    Some(p) => {
                        let mid = p.conv.forward(&stash);
                        let (skip, bnc) = p.bn.forward_train(&mid, true);
                        cur.add_assign(&skip)?;
                        proj_caches[e] = Some(ProjCache { x: stash, bn: bnc });
                    }
                    None => cur.add_assign(&stash)?,
                }
            }
            let frozen = self.frozen[i];
            match &mut self.layers[i] {
                LayerState::Conv(c) => {
                    let y = c.forward(&cur);
                    caches.push(Cache::Conv { x: core::mem::replace(&mut cur, y) });
                }
                LayerState::Bn(b) => {
                    let (y, bc) = b.forward_train(&cur, !frozen);
                    caches.push(Cache::Bn(bc));
                    cur = y;
                }
                LayerState::ReLU => {
                    cur = relu_forward(cur);
                    caches.push(Cache::Relu { y: cur.clone() });
                }
                LayerState::Pool(p) => {
                    let (y, pc) = p.forward(&cur);
                    caches.push(Cache::Pool(pc));
                    cur = y;
                }
                LayerState::Flatten => {
                    let (n, c, h, w) = cur.shape();
                    caches.push(Cache::Flatten { c, h, w });
                    cur = cur.into_shape(n, c * h * w, 1, 1)?;
                }
                LayerState::Dense(d) => {
                    let y = d.forward(&cur);
                    caches.push(Cache::Dense { x: core::mem::replace(&mut cur, y) });
                }
            }
            for (e, &after) in self.stash_after.iter().enumerate() {
                if after == i {
                    stashes[e] = Some(cur.clone());
                }
            }
        }
        Ok((cur, Tape { caches, proj: proj_caches }))
    }

    /// Backpropagates `dlogits` through the tape, overwriting every layer's
    /// gradient buffers (frozen layers included — updates skip them instead).
    pub fn backward(&mut self, tape: &Tape, dlogits: &Tensor4) -> Result<()> {
        let mut grad = dlogits.clone();
        let mut pending: Vec<Option<Tensor4>> = Vec::new();
        pending.resize_with(self.spec.skips.len(), || None);
        for i in (0..self.layers.len()).rev() {
            for (e, &after) in self.stash_after.iter().enumerate() {
                if after == i {
                    if let Some(p) = pending[e].take() {
                        grad.add_assign(&p)?;
                    }
                }
            }
            let add_edge = self.add_edge_at(i);
            match (&mut self.layers[i], &tape.caches[i]) {
                (LayerState::ReLU, Cache::Relu { y }) => {
                    let dpre = relu_backward(y, &grad);
                    if let Some(e) = add_edge {
                        let branch = match &mut self.projections[e] {
                            Some(p) => {
                                let pc = tape.proj[e].as_ref().expect("projection cache");
                                let dmid = p.bn.backward(&pc.bn, &dpre);
                                p.conv.backward(&pc.x, &dmid)
                            }
                            None => dpre.clone(),
                        };
                        pending[e] = Some(branch);
                    }
                    grad = dpre;
                }
                (LayerState::Conv(c), Cache::Conv { x }) => grad = c.backward(x, &grad),
                (LayerState::Bn(b), Cache::Bn(bc)) => grad = b.backward(bc, &grad),
                (LayerState::Pool(p), Cache::Pool(pc)) => grad = p.backward(pc, &grad),
                (LayerState::Flatten, Cache::Flatten { c, h, w }) => {
                    let n = grad.n();
                    grad = grad.into_shape(n, *c, *h, *w)?;
                }
                (LayerState::Dense(d), Cache::Dense { x }) => grad = d.backward(x, &grad),
                _ => {
                    return Err(Error::InvalidRequest(
                        "activation record does not match the network".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Fresh zeroed velocity buffers matching [`Network::sgd_step`]'s order.
    pub fn velocities(&self) -> Vec<Vec<f32>> {
        let mut v = Vec::new();
        for l in &self.layers {
            match l {
                LayerState::Conv(c) => {
                    v.push(vec![0.0; c.w.len()]);
                    v.push(vec![0.0; c.b.len()]);
                }
                LayerState::Bn(b) => {
                    v.push(vec![0.0; b.gamma.len()]);
                    v.push(vec![0.0; b.beta.len()]);
                }
                LayerState::Dense(d) => {
                    v.push(vec![0.0; d.w.len()]);
                    v.push(vec![0.0; d.b.len()]);
                }
                _ => {}
            }
        }
        for p in self.projections.iter().flatten() {
            v.push(vec![0.0; p.conv.w.len()]);
            v.push(vec![0.0; p.conv.b.len()]);
            v.push(vec![0.0; p.bn.gamma.len()]);
            v.push(vec![0.0; p.bn.beta.len()]);
        }
        v
    }

    /// One SGD-with-momentum update from the stored gradients. Frozen layers
    /// keep their parameters (their velocity entries are left untouched).
    pub fn sgd_step(&mut self, lr: f32, momentum: f32, vel: &mut [Vec<f32>]) {
        fn update(w: &mut [f32], g: &[f32], v: &mut [f32], lr: f32, mu: f32) {
            for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = mu * *vi + gi;
                *wi -= lr * *vi;
            }
        }
        let mut slot = 0;
        for (i, l) in self.layers.iter_mut().enumerate() {
            let frozen = self.frozen[i];
            match l {
                LayerState::Conv(c) => {
                    if !frozen {
                        update(&mut c.w, &c.dw, &mut vel[slot], lr, momentum);
                        update(&mut c.b, &c.db, &mut vel[slot + 1], lr, momentum);
                    }
                    slot += 2;
                }
                LayerState::Bn(b) => {
                    if !frozen {
                        update(&mut b.gamma, &b.dgamma, &mut vel[slot], lr, momentum);
                        update(&mut b.beta, &b.dbeta, &mut vel[slot + 1], lr, momentum);
                    }
                    slot += 2;
                }
                LayerState::Dense(d) => {
                    if !frozen {
                        update(&mut d.w, &d.dw, &mut vel[slot], lr, momentum);
                        update(&mut d.b, &d.db, &mut vel[slot + 1], lr, momentum);
                    }
                    slot += 2;
                }
                _ => {}
            }
        }
        for p in self.projections.iter_mut().flatten() {
            update(&mut p.conv.w, &p.conv.dw, &mut vel[slot], lr, momentum);
            update(&mut p.conv.b, &p.conv.db, &mut vel[slot + 1], lr, momentum);
            update(&mut p.bn.gamma, &p.bn.dgamma, &mut vel[slot + 2], lr, momentum);
            update(&mut p.bn.beta, &p.bn.dbeta, &mut vel[slot + 3], lr, momentum);
            slot += 4;
        }
    }

    /// All parameter tensors in checkpoint order: for each layer its
    /// weights/bias (conv, dense) or scale/shift/running-mean/running-var
    /// (batch norm), then the same for every skip-path projection.
    pub fn tensor_slabs(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for l in &self.layers {
            match l {
                LayerState::Conv(c) => out.extend([c.w.as_slice(), c.b.as_slice()]),
                LayerState::Bn(b) => out.extend([
                    b.gamma.as_slice(),
                    b.beta.as_slice(),
                    b.running_mean.as_slice(),
                    b.running_var.as_slice(),
                ]),
                LayerState::Dense(d) => out.extend([d.w.as_slice(), d.b.as_slice()]),
                _ => {}
            }
        }
        for p in self.projections.iter().flatten() {
            out.extend([
                p.conv.w.as_slice(),
                p.conv.b.as_slice(),
                p.bn.gamma.as_slice(),
                p.bn.beta.as_slice(),
                p.bn.running_mean.as_slice(),
                p.bn.running_var.as_slice(),
            ]);
        }
        out
    }

    /// Mutable view of the same tensors, in the same order.
    pub fn tensor_slabs_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerState::Conv(c) => out.extend([c.w.as_mut_slice(), c.b.as_mut_slice()]),
                LayerState::Bn(b) => out.extend([
                    b.gamma.as_mut_slice(),
                    b.beta.as_mut_slice(),
                    b.running_mean.as_mut_slice(),
                    b.running_var.as_mut_slice(),
                ]),
                LayerState::Dense(d) => out.extend([d.w.as_mut_slice(), d.b.as_mut_slice()]),
                _ => {}
            }
        }
        for p in self.projections.iter_mut().flatten() {
            out.extend([
                p.conv.w.as_mut_slice(),
                p.conv.b.as_mut_slice(),
                p.bn.gamma.as_mut_slice(),
                p.bn.beta.as_mut_slice(),
                p.bn.running_mean.as_mut_slice(),
                p.bn.running_var.as_mut_slice(),
            ]);
        }
        out
    }

    /// Internal hook for surgery: simultaneous access to spec, layers,
    /// projections, survivors, and shapes.
    pub(crate) fn parts_mut(
        &mut self,
    ) -> (
        &mut ModelSpec,
        &mut Vec<LayerState>,
        &mut BTreeMap<usize, Vec<u32>>,
        &mut Vec<(usize, usize, usize)>,
    ) {
        (&mut self.spec, &mut self.layers, &mut self.survivors, &mut self.in_shapes)
    }

    pub(crate) fn refresh_shapes(&mut self) -> Result<()> {
        self.in_shapes = activation_shapes(&self.spec)?;
        Ok(())
    }

    /// Residual blocks whose final layer receives a skip addition, as
    /// (block_end_layer, edge_index) pairs.
    pub fn skip_landings(&self) -> Vec<(usize, usize)> {
        self.add_at.iter().enumerate().map(|(e, &l)| (l, e)).collect()
    }

    /// Layer indices whose output feeds a skip edge.
    pub fn skip_source_layers(&self) -> &[usize] {
        &self.stash_after
    }

    /// Layer indices where a skip addition lands (final ReLU of a block).
    pub fn skip_landing_layers(&self) -> &[usize] {
        &self.add_at
    }

    /// Filter count the conv layer was assembled with, before any surgery.
    pub fn original_width(&self, layer: usize) -> Option<u32> {
        self.orig_widths.get(&layer).copied()
    }

    #[cfg(test)]
    pub(crate) fn layers_mut_internal(&mut self) -> &mut Vec<LayerState> {
        &mut self.layers
    }
}
