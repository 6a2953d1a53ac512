use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::*;
use crate::seed;

fn loss_weights(n: usize, s: u64) -> Vec<f64> {
    let mut rng = seed::rng(s);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Gradient check of `sum(r * output)` for a random projection `r`.
fn check_net(mut net: Network<f64>, batch: usize, s: u64) -> GradCheckReport {
    let mut rng = seed::rng(s);
    let x: Vec<f64> = (0..batch * net.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let input = Tensor::matrix(batch, net.input_len(), x.clone()).unwrap();
    let r = loss_weights(batch * net.output_len(), s + 1);
    let (_, cache) = net.forward(&input).unwrap();
    let (grads, _) = net.backward(&cache, &r).unwrap();
    let loss = |nets: &[Network<f64>]| {
        let y = nets[0].predict(&x, batch).unwrap();
        y.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
    };
    finite_difference_check(core::slice::from_mut(&mut net), &[grads], 1e-3, loss)
}

#[test]
fn identity_dense_passes_input_through() {
    let mut w = vec![0.0f32; 9];
    for i in 0..3 {
        w[i * 3 + i] = 1.0;
    }
    let net = Network::new(vec![Layer::dense_from(3, 3, w, vec![0.0; 3]).unwrap()]).unwrap();
    let x = vec![0.5, -2.0, 7.25, 1.0, 2.0, 3.0];
    assert_eq!(net.predict(&x, 2).unwrap(), x);
}

#[test]
fn zero_weights_give_bias() {
    let net = Network::new(vec![Layer::dense_from(4, 2, vec![0.0; 8], vec![0.3, -1.5]).unwrap()]).unwrap();
    assert_eq!(net.predict(&[9.0, 8.0, 7.0, 6.0], 1).unwrap(), vec![0.3, -1.5]);
}

#[test]
fn two_layer_hand_computed() {
    // W1 = [[1, 2], [3, 4]], b1 = [0.5, -0.5]; W2 = [[2, -1]], b2 = [1]
    // x = [1, -1]: h = [1-2+0.5, 3-4-0.5] = [-0.5, -1.5]; y = -1 + 1.5 + 1 = 1.5
    let net = Network::new(vec![
        Layer::dense_from(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -0.5]).unwrap(),
        Layer::dense_from(2, 1, vec![2.0, -1.0], vec![1.0]).unwrap(),
    ])
    .unwrap();
    assert_eq!(net.predict(&[1.0, -1.0], 1).unwrap(), vec![1.5]);
}

#[test]
fn shape_mismatch_is_an_error() {
    let net = Network::new(vec![Layer::dense_from(2, 1, vec![1.0, 1.0], vec![0.0]).unwrap()]).unwrap();
    assert!(matches!(net.predict(&[1.0, 2.0, 3.0], 1), Err(NnError::ShapeMismatch { .. })));
    let bad = Network::new(vec![Layer::<f32>::tanh(3), Layer::tanh(4)]);
    assert!(bad.is_err());
}

#[test]
fn dense_tanh_softplus_gradients() {
    let mut rng = seed::rng(11);
    let net = Network::<f64>::new(vec![
        Layer::dense(5, 7, &mut rng),
        Layer::tanh(7),
        Layer::dense(7, 4, &mut rng),
        Layer::softplus(4),
        Layer::dense(4, 3, &mut rng),
    ])
    .unwrap();
    assert!(net.param_count() <= 500);
    let report = check_net(net, 3, 5);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
    assert_eq!(report.checked, 5 * 7 + 7 + 7 * 4 + 4 + 4 * 3 + 3);
}

#[test]
fn conv_gradients() {
    let mut rng = seed::rng(12);
    let g = ConvGeometry::conv(2, 3, 7, 8);
    assert_eq!((g.out_height, g.out_width), (4, 4));
    let net = Network::<f64>::new(vec![Layer::conv(g, &mut rng), Layer::tanh(3 * 16), Layer::dense(48, 2, &mut rng)]).unwrap();
    assert!(net.param_count() <= 500);
    let report = check_net(net, 2, 6);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn transposed_conv_gradients() {
    let mut rng = seed::rng(13);
    // 3x4 -> 5x8 (odd height, even width) then 5x8 -> 10x16
    let a = ConvGeometry::transposed(2, 3, 3, 4, 5, 8);
    let b = ConvGeometry::transposed(3, 1, 5, 8, 10, 16);
    let net = Network::<f64>::new(vec![
        Layer::conv_transpose(a, &mut rng),
        Layer::tanh(3 * 40),
        Layer::conv_transpose(b, &mut rng),
    ])
    .unwrap();
    assert!(net.param_count() <= 500);
    let report = check_net(net, 2, 7);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    // <conv(x), y> == <x, tconv(y)> with shared weights and zero bias.
    let mut rng = seed::rng(14);
    let c = ConvGeometry::conv(2, 3, 9, 10);
    let conv = Layer::<f64>::conv(c, &mut rng);
    let t = ConvGeometry::transposed(3, 2, c.out_height, c.out_width, 9, 10);
    // tconv weight layout [in=3, out=2] equals conv layout [out=3, in=2]
    let tconv = Layer { kind: LayerKind::ConvTranspose2d { geometry: t }, frozen: false, weight: conv.weight.clone(), bias: vec![0.0; 2] };
    let x: Vec<f64> = (0..2 * 90).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..3 * c.out_height * c.out_width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cx = Network::new(vec![conv]).unwrap().predict(&x, 1).unwrap();
    let ty = Network::new(vec![tconv]).unwrap().predict(&y, 1).unwrap();
    let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
}

#[test]
fn zero_output_gradient_and_frozen_layers() {
    let mut rng = seed::rng(15);
    let mut net = Network::<f32>::new(vec![Layer::dense(3, 4, &mut rng), Layer::tanh(4), Layer::dense(4, 2, &mut rng)]).unwrap();
    let input = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
    let (_, cache) = net.forward(&input).unwrap();
    let (g, gx) = net.backward(&cache, &[0.0; 4]).unwrap();
    assert!(g.is_zero());
    assert!(gx.iter().all(|&v| v == 0.0));

    net.layers_mut()[0].frozen = true;
    let (_, cache) = net.forward(&input).unwrap();
    let (g, _) = net.backward(&cache, &[1.0; 4]).unwrap();
    let first = g.layers[0].as_ref().unwrap();
    assert!(first.weight.iter().chain(&first.bias).all(|&v| v == 0.0));
    assert!(g.layers[2].as_ref().unwrap().weight.iter().any(|&v| v != 0.0));
}

#[test]
fn stale_cache_is_rejected() {
    let mut rng = seed::rng(16);
    let mut net = Network::<f32>::new(vec![Layer::dense(2, 2, &mut rng)]).unwrap();
    let (_, cache) = net.forward(&Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
    let mut adam = AdamState::new(&net, AdamConfig::default());
    let (g, _) = net.backward(&cache, &[1.0, 1.0]).unwrap();
    adam.step(&mut net, &g).unwrap();
    assert!(matches!(net.backward(&cache, &[1.0, 1.0]), Err(NnError::StaleCache { .. })));
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut rng = seed::rng(17);
    let mut net = Network::<f32>::new(vec![Layer::dense(3, 2, &mut rng)]).unwrap();
    let before = net.clone();
    let mut adam = AdamState::new(&net, AdamConfig::default());
    let zero = Gradients::zeros_like(&net);
    adam.step(&mut net, &zero).unwrap();
    assert_eq!(adam.step, 1);
    assert_eq!(net.layers(), before.layers());
    assert_eq!(net.version(), before.version() + 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut rng = seed::rng(18);
    let mut net = Network::<f32>::new(vec![Layer::dense(3, 2, &mut rng)]).unwrap();
    let before = net.clone();
    let mut g = Gradients::zeros_like(&net);
    for (i, v) in g.layers[0].as_mut().unwrap().weight.iter_mut().enumerate() {
        *v = if i % 2 == 0 { 0.7 } else { -3.0 };
    }
    g.layers[0].as_mut().unwrap().bias.fill(1e-3);
    let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
    let mut adam = AdamState::new(&net, cfg);
    adam.step(&mut net, &g).unwrap();
    // m_hat = g and v_hat = g^2 after one step, so each update is lr * g/(|g| + eps).
    let (a, b) = (&before.layers()[0], &net.layers()[0]);
    let ga = g.layers[0].as_ref().unwrap();
    for ((p0, p1), gv) in a.weight.iter().chain(&a.bias).zip(b.weight.iter().chain(&b.bias)).zip(ga.weight.iter().chain(&ga.bias)) {
        let expected = -0.01 * gv / (gv.abs() + 1e-8);
        assert!(((p1 - p0) - expected).abs() < 1e-6, "{} vs {expected}", p1 - p0);
    }
}

#[test]
fn adam_minimizes_quadratic() {
    // f(w) = sum_i c_i (w_i - t_i)^2 on the parameters of one dense layer.
    let mut rng = seed::rng(19);
    let mut net = Network::<f32>::new(vec![Layer::dense(4, 3, &mut rng)]).unwrap();
    let n = net.param_count();
    let target: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let curv: Vec<f32> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let eval = |net: &Network<f32>| -> (f32, Vec<f32>) {
        let l = &net.layers()[0];
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(n);
        for (i, p) in l.weight.iter().chain(&l.bias).enumerate() {
            let d = p - target[i];
            loss += curv[i] * d * d;
            grad.push(2.0 * curv[i] * d);
        }
        (loss, grad)
    };
    let (initial, _) = eval(&net);
    let mut adam = AdamState::new(&net, AdamConfig { lr: 0.05, ..AdamConfig::default() });
    for _ in 0..200 {
        let (_, flat) = eval(&net);
        let mut g = Gradients::zeros_like(&net);
        let lg = g.layers[0].as_mut().unwrap();
        let w = lg.weight.len();
        lg.weight.copy_from_slice(&flat[..w]);
        lg.bias.copy_from_slice(&flat[w..]);
        adam.step(&mut net, &g).unwrap();
    }
    let (fin, _) = eval(&net);
    assert!(fin * 100.0 <= initial, "{initial} -> {fin}");
}

#[test]
fn adam_rejects_non_finite() {
    let mut rng = seed::rng(20);
    let mut net = Network::<f32>::new(vec![Layer::dense(2, 2, &mut rng)]).unwrap();
    let before = net.clone();
    let mut g = Gradients::zeros_like(&net);
    g.layers[0].as_mut().unwrap().weight[1] = f32::NAN;
    let mut adam = AdamState::new(&net, AdamConfig::default());
    assert_eq!(adam.step(&mut net, &g), Err(NnError::NonFinite("gradient")));
    assert_eq!(net, before);
    assert_eq!(adam.step, 0);
}

#[test]
fn clipping_caps_global_norm() {
    let mut rng = seed::rng(21);
    let net = Network::<f32>::new(vec![Layer::dense(2, 2, &mut rng)]).unwrap();
    let mut g = Gradients::zeros_like(&net);
    g.layers[0].as_mut().unwrap().weight.copy_from_slice(&[30.0, 40.0, 0.0, 0.0]);
    let before = clip_global_norm(&mut [&mut g], 10.0);
    assert!((before - 50.0).abs() < 1e-9);
    assert!((libm::sqrt(g.norm_sq()) - 10.0).abs() < 1e-4);
    let mut small = Gradients::zeros_like(&net);
    small.layers[0].as_mut().unwrap().bias[0] = 0.5;
    clip_global_norm(&mut [&mut small], 10.0);
    assert_eq!(small.layers[0].as_ref().unwrap().bias[0], 0.5);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = seed::rng(22);
    let a = Network::<f32>::new(vec![Layer::conv(ConvGeometry::conv(1, 2, 6, 6), &mut rng), Layer::tanh(18)]).unwrap();
    let mut b = Network::<f32>::new(vec![Layer::dense(18, 3, &mut rng)]).unwrap();
    b.set_frozen(true);
    let mut blob = Vec::new();
    let ma = a.export(&mut blob);
    let mb = b.export(&mut blob);
    let bytes = encode_blob(&blob);
    let decoded = decode_blob(&bytes).unwrap();
    let a2 = Network::import(&ma, &decoded).unwrap();
    let b2 = Network::import(&mb, &decoded).unwrap();
    assert_eq!(a2, a);
    assert_eq!(b2, b);
    assert!(b2.is_frozen());
    let x: Vec<f32> = (0..36).map(|i| i as f32 / 36.0).collect();
    let ya = a.predict(&x, 1).unwrap();
    let ya2 = a2.predict(&x, 1).unwrap();
    assert!(ya.iter().zip(&ya2).all(|(p, q)| p.to_bits() == q.to_bits()));

    assert!(matches!(Network::import(&mb, &decoded[..decoded.len() - 1]), Err(NnError::BlobSize { .. })));
    assert!(decode_blob(&bytes[..bytes.len() - 2]).is_err());
    let mut wrong = ma.clone();
    wrong.param_count += 1;
    assert!(Network::import(&wrong, &decoded).is_err());
}
