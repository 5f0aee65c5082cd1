use ldb_core::network::{build_preset, cross_entropy_loss, read_checkpoint, write_checkpoint, PresetOptions};
use ldb_core::{LayerSet, LdbError, Network, NetworkBuilder, Tensor};

fn mlp4() -> Network {
    build_preset("mlp-4", &[5], 3, &PresetOptions { width: 6, init_seed: 11 }).unwrap()
}

fn batch() -> (Tensor, Vec<usize>) {
    let x: Vec<f64> = (0..20).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
    (Tensor::new(vec![4, 5], x).unwrap(), vec![0, 1, 2, 1])
}

fn grads(net: &mut Network, selected: &LayerSet) -> (Tensor, Vec<(usize, Tensor, Tensor)>) {
    let (x, y) = batch();
    let logits = net.forward(&x).unwrap();
    let (_, g) = cross_entropy_loss(&logits, &y).unwrap();
    let dx = net.backward_selective(&g, selected, None).unwrap();
    let per_layer = net
        .param_layer_ids()
        .iter()
        .map(|&id| {
            let l = net.layer(id);
            (id, l.weight_grad.clone().unwrap(), l.bias_grad.clone().unwrap())
        })
        .collect();
    (dx, per_layer)
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn empty_selection_still_propagates_to_the_input() {
    let mut net = mlp4();
    let all = net.all_param_layers();
    let (dx_full, _) = grads(&mut net, &all);
    let (dx_none, layers) = grads(&mut net, &LayerSet::new());
    assert_eq!(bits(&dx_full), bits(&dx_none));
    for (id, gw, gb) in layers {
        assert_eq!(gw.max_abs(), 0.0, "layer {id}");
        assert_eq!(gb.max_abs(), 0.0, "layer {id}");
    }
}

#[test]
fn first_and_last_layer_selected() {
    let mut net = mlp4();
    let ids = net.param_layer_ids().to_vec();
    assert_eq!(ids.len(), 4);
    let selected: LayerSet = [ids[0], ids[3]].into_iter().collect();
    let all = net.all_param_layers();
    let (_, full) = grads(&mut net, &all);
    let (_, part) = grads(&mut net, &selected);
    for ((id, fw, fb), (_, pw, pb)) in full.iter().zip(&part) {
        if selected.contains(id) {
            assert_eq!(bits(fw), bits(pw), "layer {id}");
            assert_eq!(bits(fb), bits(pb), "layer {id}");
        } else {
            assert_eq!(pw.max_abs(), 0.0, "layer {id}");
            assert_eq!(pb.max_abs(), 0.0, "layer {id}");
        }
    }
}

/// Single dense layer, softmax cross-entropy: dW[i][o] = sum_b x[b][i] (p[b][o] - y[b][o]) / B.
#[test]
fn dense_gradient_matches_closed_form() {
    let mut net = NetworkBuilder::new(&[2]).dense(2).unwrap().build(0);
    let l = net.layer_mut(0);
    l.weights = Some(Tensor::new(vec![2, 2], vec![0.5, -0.25, 1.0, 0.0]).unwrap());
    l.bias = Some(Tensor::new(vec![2], vec![0.1, -0.1]).unwrap());
    let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
    let y = [0usize, 1];
    let logits = net.forward(&x).unwrap();
    let (_, g) = cross_entropy_loss(&logits, &y).unwrap();
    net.backward(&g).unwrap();

    let xs = [[1.0, 2.0], [-1.0, 0.5]];
    let w = [[0.5, -0.25], [1.0, 0.0]];
    let b = [0.1, -0.1];
    let mut dw = [[0.0; 2]; 2];
    let mut db = [0.0; 2];
    for (r, xr) in xs.iter().enumerate() {
        let z: Vec<f64> = (0..2).map(|o| xr[0] * w[0][o] + xr[1] * w[1][o] + b[o]).collect();
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for o in 0..2 {
            let d = (e[o] / s - if o == y[r] { 1.0 } else { 0.0 }) / 2.0;
            db[o] += d;
            for i in 0..2 {
                dw[i][o] += xr[i] * d;
            }
        }
    }
    let l = net.layer(0);
    let gw = l.weight_grad.as_ref().unwrap().data();
    for i in 0..2 {
        for o in 0..2 {
            assert!((gw[i * 2 + o] - dw[i][o]).abs() < 1e-12);
        }
    }
    for o in 0..2 {
        assert!((l.bias_grad.as_ref().unwrap().data()[o] - db[o]).abs() < 1e-12);
    }
}

#[test]
fn backward_without_forward_is_rejected() {
    let mut net = mlp4();
    let g = Tensor::zeros(&[4, 3]);
    assert!(matches!(net.backward(&g), Err(LdbError::Config(_))));
}

#[test]
fn selecting_a_relu_is_rejected() {
    let mut net = mlp4();
    let (x, y) = batch();
    let (_, g) = cross_entropy_loss(&net.forward(&x).unwrap(), &y).unwrap();
    let relu: LayerSet = [1].into_iter().collect();
    assert!(matches!(net.backward_selective(&g, &relu, None), Err(LdbError::Config(_))));
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let net = mlp4();
    let mut buf = Vec::new();
    write_checkpoint(&net, &mut buf).unwrap();
    let mut other = build_preset("mlp-4", &[5], 3, &PresetOptions { width: 6, init_seed: 99 }).unwrap();
    read_checkpoint(&mut other, buf.as_slice()).unwrap();
    for ((_, w1, b1), (_, w2, b2)) in net.params().zip(other.params()) {
        assert_eq!(bits(w1), bits(w2));
        assert_eq!(bits(b1), bits(b2));
    }

    let mut wider = build_preset("mlp-4", &[5], 3, &PresetOptions { width: 7, init_seed: 0 }).unwrap();
    assert!(read_checkpoint(&mut wider, buf.as_slice()).is_err());
    let mut truncated = other.clone();
    assert!(read_checkpoint(&mut truncated, &buf[..buf.len() - 3]).is_err());
    let mut garbage = buf.clone();
    garbage[0] ^= 0xff;
    assert!(matches!(read_checkpoint(&mut other, garbage.as_slice()), Err(LdbError::Format { .. })));
}

#[test]
fn presets_have_expected_shapes() {
    let cnn = build_preset("cnn-small", &[1, 8, 8], 4, &PresetOptions::default()).unwrap();
    assert_eq!(cnn.output_shape(), &[4]);
    let x = Tensor::zeros(&[2, 1, 8, 8]);
    assert_eq!(cnn.infer(&x).unwrap().shape(), &[2, 4]);
    let res = build_preset("resnet-toy", &[6], 3, &PresetOptions::default()).unwrap();
    assert_eq!(res.infer(&Tensor::zeros(&[1, 6])).unwrap().shape(), &[1, 3]);
    assert!(build_preset("mlp-0", &[6], 3, &PresetOptions::default()).is_err());
    assert!(build_preset("vgg", &[6], 3, &PresetOptions::default()).is_err());
}
