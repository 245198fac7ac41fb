//! Structural surgery: filter removal with downstream reconciliation,
//! filter-selection strategies, and prune masks.
//!
//! Removing output filters from a convolution shrinks that layer's weights
//! and bias, slices its batch norm, and deletes the matching input channels
//! of whatever consumes the activation next — the following convolution, or
//! the classifier head through the flatten index map. Removals that would
//! change the channel count flowing across a skip connection are refused.
//!
//! Filter identity is tracked in the *original* index space: every mask and
//! selection result refers to filter ids of the as-assembled network, no
//! matter how many rounds of surgery happened in between.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::model::{LayerKind, LayerState, ModelSpec, Network};
use crate::rng::Rng;
use crate::Result;

/// Removed original-space filter ids per conv layer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PruneMask(pub BTreeMap<usize, Vec<u32>>);

impl PruneMask {
    pub fn is_empty(&self) -> bool {
        self.0.values().all(|v| v.is_empty())
    }

    pub fn removed_total(&self) -> usize {
        self.0.values().map(|v| v.len()).sum()
    }

    /// Checks invariants against the architecture the mask refers to:
    /// sorted unique ids, in range, and at least one survivor per layer.
    pub fn validate(&self, original: &ModelSpec) -> Result<()> {
        for (&layer, ids) in &self.0 {
            let width = match original.layers.get(layer) {
                Some(LayerKind::Conv { out_ch, .. }) => *out_ch as u32,
                _ => {
                    return Err(Error::InvalidRequest(format!(
                        "mask names layer {layer}, which is not a conv layer"
                    )))
                }
            };
            for pair in ids.windows(2) {
                if pair[1] <= pair[0] {
                    return Err(Error::InvalidRequest(format!(
                        "mask for layer {layer} is not sorted strictly ascending"
                    )));
                }
            }
            if let Some(&max) = ids.last() {
                if max >= width {
                    return Err(Error::InvalidRequest(format!(
                        "mask for layer {layer} removes filter {max}, width is {width}"
                    )));
                }
            }
            if ids.len() >= width as usize && width > 0 {
                return Err(Error::InvalidRequest(format!(
                    "mask for layer {layer} removes all {width} filters"
                )));
            }
        }
        Ok(())
    }

    /// Merges additional removals in; duplicate ids are rejected.
    pub fn extend(&mut self, layer: usize, ids: &[u32]) -> Result<()> {
        let slot = self.0.entry(layer).or_default();
        for &id in ids {
            match slot.binary_search(&id) {
                Ok(_) => {
                    return Err(Error::InvalidRequest(format!(
                        "filter {id} of layer {layer} is already in the mask"
                    )))
                }
                Err(pos) => slot.insert(pos, id),
            }
        }
        Ok(())
    }
}

/// How filters are chosen for removal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum SelectionStrategy {
    Random { seed: u64 },
    L1Norm,
    L2Norm,
}

/// What the reconciliation walk must touch downstream of a shrunk conv.
enum Touch {
    Bn(usize),
    NextConv(usize),
    DenseCols { dense: usize, flatten: usize },
}

/// Plans the downstream walk for removing output channels of `layer`,
/// refusing walks that would cross a skip connection with changed channels.
fn reconciliation_plan(net: &Network, layer: usize) -> Result<Vec<Touch>> {
    let spec = net.spec();
    match spec.layers.get(layer) {
        Some(LayerKind::Conv { .. }) => {}
        Some(_) => {
            return Err(Error::Constraint(format!("layer {layer} is not a conv layer")));
        }
        None => return Err(Error::InvalidRequest(format!("no layer {layer}"))),
    }
    let mut plan = Vec::new();
    let mut flatten_at = None;
    for i in layer + 1..spec.layers.len() {
        if net.skip_source_layers().contains(&i) || net.skip_landing_layers().contains(&i) {
            return Err(Error::Constraint(format!(
                "removing filters from layer {layer} would change the channel count \
                 crossing the skip connection at layer {i}"
            )));
        }
        match spec.layers[i] {
            LayerKind::BatchNorm => plan.push(Touch::Bn(i)),
            LayerKind::ReLU => {}
            LayerKind::MaxPool { .. } => {}
            LayerKind::Conv { .. } => {
                plan.push(Touch::NextConv(i));
                return Ok(plan);
            }
            LayerKind::Flatten => flatten_at = Some(i),
            LayerKind::Dense { .. } => {
                let flatten = flatten_at.expect("assembly places flatten before dense");
                plan.push(Touch::DenseCols { dense: i, flatten });
                return Ok(plan);
            }
        }
    }
    Err(Error::Constraint(format!("layer {layer} has no downstream consumer to reconcile")))
}

/// Conv layers whose filters can currently be removed.
pub fn prunable_layers(net: &Network) -> Vec<usize> {
    net.spec()
        .conv_layers()
        .into_iter()
        .filter(|&l| reconciliation_plan(net, l).is_ok())
        .collect()
}

fn gather_rows(v: &[f32], row_len: usize, keep: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(keep.len() * row_len);
    for &r in keep {
        out.extend_from_slice(&v[r * row_len..(r + 1) * row_len]);
    }
    out
}

fn gather_at(v: &[f32], keep: &[usize]) -> Vec<f32> {
    keep.iter().map(|&i| v[i]).collect()
}

/// Deletes input-channel blocks from a conv weight tensor laid out as
/// (out, in, k, k).
fn gather_in_channels(w: &[f32], out_ch: usize, in_old: usize, kk: usize, keep: &[usize]) -> Vec<f32> {
    let mut new = Vec::with_capacity(out_ch * keep.len() * kk);
    for f in 0..out_ch {
        let row = &w[f * in_old * kk..(f + 1) * in_old * kk];
        for &c in keep {
            new.extend_from_slice(&row[c * kk..(c + 1) * kk]);
        }
    }
    new
}

/// Returns a copy of `net` with the given original-space filter ids removed
/// from `layer` and every downstream consumer reconciled. The source network
/// is untouched; surviving parameter values are preserved exactly.
pub fn remove_filters(net: &Network, layer: usize, original_ids: &[u32]) -> Result<Network> {
    let mut out = net.clone();
    if original_ids.is_empty() {
        return Ok(out);
    }
    let survivors = net
        .survivors(layer)
        .ok_or_else(|| Error::InvalidRequest(format!("layer {layer} is not a conv layer")))?;

    let mut ids = original_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != original_ids.len() {
        return Err(Error::InvalidRequest(format!("duplicate filter ids for layer {layer}")));
    }
    let mut removed_pos = Vec::with_capacity(ids.len());
    for id in &ids {
        match survivors.binary_search(id) {
            Ok(p) => removed_pos.push(p),
            Err(_) => {
                return Err(Error::InvalidRequest(format!(
                    "filter {id} of layer {layer} is not among the surviving filters"
                )))
            }
        }
    }
    if removed_pos.len() >= survivors.len() {
        return Err(Error::InvalidRequest(format!(
            "removing {} of {} filters would leave layer {layer} empty",
            removed_pos.len(),
            survivors.len()
        )));
    }
    let keep: Vec<usize> =
        (0..survivors.len()).filter(|p| !removed_pos.contains(p)).collect();
    let kept_ids: Vec<u32> = keep.iter().map(|&p| survivors[p]).collect();

    let plan = reconciliation_plan(net, layer)?;

    {
        let (spec, layers, survivors_map, shapes) = out.parts_mut();
        match &mut layers[layer] {
            LayerState::Conv(c) => {
                let row = c.in_ch * c.k * c.k;
                c.w = gather_rows(&c.w, row, &keep);
                c.b = gather_at(&c.b, &keep);
                c.out_ch = keep.len();
                c.dw = vec![0.0; c.w.len()];
                c.db = vec![0.0; c.b.len()];
            }
            _ => unreachable!("validated as conv"),
        }
        if let LayerKind::Conv { out_ch, .. } = &mut spec.layers[layer] {
            *out_ch = keep.len();
        }
        survivors_map.insert(layer, kept_ids);

        for touch in &plan {
            match *touch {
                Touch::Bn(i) => {
                    if let LayerState::Bn(b) = &mut layers[i] {
                        b.gamma = gather_at(&b.gamma, &keep);
                        b.beta = gather_at(&b.beta, &keep);
                        b.running_mean = gather_at(&b.running_mean, &keep);
                        b.running_var = gather_at(&b.running_var, &keep);
                        b.dgamma = vec![0.0; keep.len()];
                        b.dbeta = vec![0.0; keep.len()];
                        b.ch = keep.len();
                    }
                }
                Touch::NextConv(i) => {
                    if let LayerState::Conv(c) = &mut layers[i] {
                        let kk = c.k * c.k;
                        c.w = gather_in_channels(&c.w, c.out_ch, c.in_ch, kk, &keep);
                        c.in_ch = keep.len();
                        c.dw = vec![0.0; c.w.len()];
                    }
                }
                Touch::DenseCols { dense, flatten } => {
                    let (_, fh, fw) = shapes[flatten];
                    let hw = fh * fw;
                    let feature_keep: Vec<usize> = keep
                        .iter()
                        .flat_map(|&c| c * hw..(c + 1) * hw)
                        .collect();
                    if let LayerState::Dense(d) = &mut layers[dense] {
                        let new_w: Vec<f32> = d
                            .w
                            .chunks_exact(d.in_f)
                            .flat_map(|row| feature_keep.iter().map(|&i| row[i]))
                            .collect();
                        d.w = new_w;
                        d.in_f = feature_keep.len();
                        d.dw = vec![0.0; d.w.len()];
                    }
                }
            }
        }
    }
    out.refresh_shapes()?;
    Ok(out)
}

/// Replays a whole mask onto a network (typically freshly assembled),
/// layer by ascending index.
pub fn apply_mask(net: &Network, mask: &PruneMask) -> Result<Network> {
    let mut cur = net.clone();
    for (&layer, ids) in &mask.0 {
        if ids.is_empty() {
            continue;
        }
        cur = remove_filters(&cur, layer, ids)?;
    }
    Ok(cur)
}

/// The removals that produced this network, in original filter ids.
pub fn mask_of(net: &Network) -> PruneMask {
    let mut mask = BTreeMap::new();
    for layer in net.spec().conv_layers() {
        let (Some(surv), Some(width)) = (net.survivors(layer), net.original_width(layer)) else {
            continue;
        };
        let removed: Vec<u32> = (0..width).filter(|id| surv.binary_search(id).is_err()).collect();
        if !removed.is_empty() {
            mask.insert(layer, removed);
        }
    }
    PruneMask(mask)
}

/// Picks `n` filters of `layer` for removal, returned as sorted original
/// ids. Norm strategies take the filters with the smallest weight-slab norm
/// (bias excluded), ties resolved toward the lower filter index.
pub fn select_filters(
    net: &Network,
    layer: usize,
    n: usize,
    strategy: SelectionStrategy,
) -> Result<Vec<u32>> {
    let survivors = net
        .survivors(layer)
        .ok_or_else(|| Error::InvalidRequest(format!("layer {layer} is not a conv layer")))?;
    if n == 0 || n >= survivors.len() {
        return Err(Error::InvalidRequest(format!(
            "cannot select {n} of {} surviving filters in layer {layer}",
            survivors.len()
        )));
    }
    let conv = match &net.layers()[layer] {
        LayerState::Conv(c) => c,
        _ => unreachable!("survivor map only tracks conv layers"),
    };
    let picked: Vec<u32> = match strategy {
        SelectionStrategy::Random { seed } => {
            let mut rng = Rng::new(seed);
            rng.choose_k(survivors, n)
        }
        SelectionStrategy::L1Norm | SelectionStrategy::L2Norm => {
            let row = conv.in_ch * conv.k * conv.k;
            let mut scored: Vec<(f32, usize)> = (0..conv.out_ch)
                .map(|f| {
                    let slab = &conv.w[f * row..(f + 1) * row];
                    let norm = match strategy {
                        SelectionStrategy::L1Norm => slab.iter().map(|v| v.abs()).sum::<f32>(),
                        _ => libm::sqrtf(slab.iter().map(|v| v * v).sum::<f32>()),
                    };
                    (norm, f)
                })
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut ids: Vec<u32> = scored[..n].iter().map(|&(_, f)| survivors[f]).collect();
            ids.sort_unstable();
            ids
        }
    };
    Ok(picked)
}

/// Number of filters a ratio removes from a layer that originally had
/// `n_orig` filters: nearest integer, at least 1 when the ratio is positive,
/// and always leaving one survivor.
pub fn removal_target(ratio: f64, n_orig: usize) -> usize {
    if ratio <= 0.0 || n_orig == 0 {
        return 0;
    }
    let raw = libm::round(ratio * n_orig as f64) as usize;
    raw.max(1).min(n_orig - 1)
}
