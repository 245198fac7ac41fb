//! Structural properties of filter removal: zeroing a filter is
//! behaviourally identical to cutting it out (absent batch norm), randomly
//! drawn valid masks always reconcile shapes, and residual constraints
//! reject what they must.

use prunesense_core::model::{LayerKind, LayerState, ModelSpec, Network};
use prunesense_core::rng::Rng;
use prunesense_core::surgery::{apply_mask, mask_of, prunable_layers, remove_filters, PruneMask};
use prunesense_core::tensor::Tensor4;
use prunesense_core::zoo;

fn micro_net() -> Network {
    let spec = ModelSpec {
        name: "zero-out-micro".into(),
        input: (2, 8, 8),
        num_classes: 4,
        layers: vec![
            LayerKind::Conv { out_ch: 6, k: 3, stride: 1, pad: 1 },
            LayerKind::ReLU,
            LayerKind::MaxPool { k: 2, stride: 2 },
            LayerKind::Conv { out_ch: 5, k: 3, stride: 1, pad: 1 },
            LayerKind::ReLU,
            LayerKind::Flatten,
            LayerKind::Dense { out: 4 },
        ],
        blocks: vec![],
        skips: vec![],
    };
    let mut net = Network::assemble(spec).unwrap();
    net.init(23);
    net
}

fn random_input(rng: &mut Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
    let mut x = Tensor4::zeros(n, c, h, w);
    for v in x.as_mut_slice() {
        *v = rng.uniform(-1.0, 1.0);
    }
    x
}

/// Zeroes the weights and bias of the named filters in place.
fn zero_filters(net: &mut Network, layer: usize, ids: &[u32]) {
    // Locate this conv's weight/bias slab offsets by walking the layers in
    // slab order.
    let row_len;
    {
        match &net.layers()[layer] {
            LayerState::Conv(c) => row_len = c.in_ch * c.k * c.k,
            _ => panic!("layer {layer} is not a conv"),
        }
    }
    let mut slab_idx = 0;
    let mut w_slab = None;
    for (i, l) in net.layers().iter().enumerate() {
        match l {
            LayerState::Conv(_) | LayerState::Dense(_) => {
                if i == layer {
                    w_slab = Some(slab_idx);
                }
                slab_idx += 2;
            }
            LayerState::Bn(_) => slab_idx += 4,
            _ => {}
        }
    }
    let w_slab = w_slab.unwrap();
    let mut slabs = net.tensor_slabs_mut();
    for &f in ids {
        let f = f as usize;
        slabs[w_slab][f * row_len..(f + 1) * row_len].fill(0.0);
        slabs[w_slab + 1][f] = 0.0;
    }
}

#[test]
fn zeroed_filters_behave_like_removed_filters() {
    let net = micro_net();
    let mut rng = Rng::new(90);
    let x = random_input(&mut rng, 3, 2, 8, 8);

    for (first, second) in [(vec![1u32, 4], vec![0u32, 2]), (vec![0], vec![4]), (vec![2, 3, 5], vec![1, 3])]
    {
        let mut cut = remove_filters(&net, 0, &first).unwrap();
        cut = remove_filters(&cut, 3, &second).unwrap();
        let y_cut = cut.forward_eval(&x).unwrap();

        let mut zeroed = net.clone();
        zero_filters(&mut zeroed, 0, &first);
        zero_filters(&mut zeroed, 3, &second);
        let y_zero = zeroed.forward_eval(&x).unwrap();

        assert_eq!(y_cut.shape(), y_zero.shape());
        for (i, (&a, &b)) in y_cut.as_slice().iter().zip(y_zero.as_slice()).enumerate() {
            assert!(
                (a - b).abs() <= 1e-5,
                "logit {i} differs: removed {a} vs zeroed {b}"
            );
        }
    }
}

/// Draws a valid mask: a random subset of prunable layers, each losing a
/// random count in [1, width-1].
fn random_mask(rng: &mut Rng, net: &Network) -> PruneMask {
    let mut mask = PruneMask::default();
    for &layer in &prunable_layers(net) {
        if rng.next_f32() < 0.3 {
            continue;
        }
        let width = net.original_width(layer).unwrap();
        let count = 1 + (rng.next_u64() as u32 % (width - 1));
        let pool: Vec<u32> = (0..width).collect();
        let ids = rng.choose_k(&pool, count as usize);
        if !ids.is_empty() {
            mask.extend(layer, &ids).unwrap();
        }
    }
    mask
}

#[test]
fn random_valid_masks_never_break_shapes() {
    let mut rng = Rng::new(91);
    let mut checked = 0;

    let conv4 = {
        let mut n = Network::assemble(zoo::build_model("conv4-mini").unwrap()).unwrap();
        n.init(5);
        n
    };
    let resnet = {
        let mut n = Network::assemble(zoo::build_model("resnet18-mini").unwrap()).unwrap();
        n.init(6);
        n
    };

    for net in [&conv4, &resnet] {
        let (c, h, w) = net.spec().input;
        let probe = random_input(&mut rng, 1, c, h, w);
        for _ in 0..100 {
            let mask = random_mask(&mut rng, net);
            let pruned = apply_mask(net, &mask).unwrap();
            // The mask reads back exactly.
            assert_eq!(mask_of(&pruned), mask);
            // Forward still produces a classifier output.
            let y = pruned.forward_eval(&probe).unwrap();
            assert_eq!(y.shape(), (1, net.spec().num_classes, 1, 1));
            checked += 1;
        }
    }
    assert_eq!(checked, 200);
}

#[test]
fn residual_block_second_conv_stays_protected() {
    let mut net = Network::assemble(zoo::build_model("resnet18-mini").unwrap()).unwrap();
    net.init(7);
    let prunable = prunable_layers(&net);
    assert_eq!(prunable, vec![3, 9, 15, 21, 27, 33, 39, 45]);
    // Second conv of the first residual block, and the stem conv, are out.
    for layer in [6usize, 0] {
        let err = remove_filters(&net, layer, &[0]).unwrap_err();
        let msg = format!("{err:?}");
        assert!(
            msg.contains("Constraint"),
            "layer {layer} should be constraint-protected, got {msg}"
        );
    }
    // Every prunable layer accepts a removal and the network still runs.
    let (c, h, w) = net.spec().input;
    let probe = random_input(&mut Rng::new(8), 1, c, h, w);
    for &layer in &prunable {
        let pruned = remove_filters(&net, layer, &[0]).unwrap();
        pruned.forward_eval(&probe).unwrap();
    }
}

#[test]
fn mask_survives_serialization_roundtrip() {
    let net = micro_net();
    let mut rng = Rng::new(92);
    let mask = random_mask(&mut rng, &net);
    let json = serde_json::to_string(&mask).unwrap();
    let back: PruneMask = serde_json::from_str(&json).unwrap();
    assert_eq!(mask, back);
}
