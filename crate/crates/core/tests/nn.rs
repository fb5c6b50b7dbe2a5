use plugtrack::nn::gradcheck::layer_gradient_error;
use plugtrack::nn::{
    checkpoint, AdamState, BatchNorm, Dense, Init, Layer, Lstm, Mode, Module, Sequential,
    Standardize, StepKey, Tensor,
};
use plugtrack::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn randomize(layer: &mut Layer, rng: &mut ChaCha8Rng) {
    for p in layer.params_mut() {
        for v in p.iter_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
}

const TOL: f64 = 1e-3;

#[test]
fn dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let (i, o, b) = (
            rng.random_range(1..6),
            rng.random_range(1..6),
            rng.random_range(1..5),
        );
        let mut l = Layer::Dense(Dense::new(i, o, Init::Xavier, &mut rng));
        randomize(&mut l, &mut rng);
        let x = random_tensor(&[b, i], &mut rng);
        let err = layer_gradient_error(&l, &x, Mode::Train, &StepKey::default(), 7).unwrap();
        assert!(err < TOL, "dense {i}x{o}: {err}");
    }
}

#[test]
fn lstm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for layers in 1..=2 {
        let l = Layer::Lstm(Lstm::new(3, 4, layers, &mut rng));
        let x = random_tensor(&[2, 5, 3], &mut rng);
        let err = layer_gradient_error(&l, &x, Mode::Train, &StepKey::default(), 8).unwrap();
        assert!(err < TOL, "lstm with {layers} layers: {err}");
    }
}

#[test]
fn batchnorm_gradients_in_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bn = BatchNorm::new(4);
    bn.running_mean = vec![0.1, -0.2, 0.3, 0.0];
    bn.running_var = vec![0.5, 1.5, 2.0, 0.9];
    let mut l = Layer::BatchNorm(bn);
    randomize(&mut l, &mut rng);
    let x = random_tensor(&[6, 4], &mut rng);
    for mode in [Mode::Train, Mode::Eval] {
        let err = layer_gradient_error(&l, &x, mode, &StepKey::default(), 9).unwrap();
        assert!(err < TOL, "{mode:?}: {err}");
    }
}

#[test]
fn elementwise_layer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&[3, 5], &mut rng);
    let layers = [
        Layer::Relu,
        Layer::Sigmoid,
        Layer::dropout(0.3).unwrap(),
        Layer::Standardize(Standardize {
            shift: vec![0.1, 0.2, -0.3, 0.0, 1.0],
            scale: vec![2.0, 0.5, 1.0, 3.0, 0.25],
        }),
    ];
    for l in &layers {
        let err = layer_gradient_error(l, &x, Mode::Train, &StepKey::new(1, 2, 3), 10).unwrap();
        assert!(err < TOL, "{:?}: {err}", l.kind());
    }
}

#[test]
fn dense_identity_and_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut d = Dense::new(3, 3, Init::Zeros, &mut rng);
    for i in 0..3 {
        d.weight[i * 3 + i] = 1.0;
    }
    let mut l = Layer::Dense(d);
    let x = random_tensor(&[2, 3], &mut rng);
    let (y, cache) = l.forward(&x, Mode::Train, &StepKey::default(), 0).unwrap();
    assert_eq!(y, x);

    // dx = g W^T for a non-symmetric W.
    randomize(&mut l, &mut rng);
    let (_, cache2) = l.forward(&x, Mode::Train, &StepKey::default(), 0).unwrap();
    let g = random_tensor(&[2, 3], &mut rng);
    let (dx, _) = l.backward(&cache2, &g).unwrap();
    let w = l.params()[0].to_vec();
    for r in 0..2 {
        for i in 0..3 {
            let expect: f64 = (0..3).map(|o| g.row(r)[o] * w[i * 3 + o]).sum();
            assert!((dx.row(r)[i] - expect).abs() < 1e-12);
        }
    }
    drop(cache);
}

#[test]
fn relu_blocks_gradient_at_negative_input() {
    let mut l = Layer::Relu;
    let x = Tensor::from_rows(&[[-1.0, 2.0]]).unwrap();
    let (_, c) = l.forward(&x, Mode::Train, &StepKey::default(), 0).unwrap();
    let (dx, _) = l
        .backward(&c, &Tensor::from_rows(&[[5.0, 5.0]]).unwrap())
        .unwrap();
    assert_eq!(dx.data(), &[0.0, 5.0]);
}

#[test]
fn zero_rate_dropout_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&[4, 4], &mut rng);
    let mut l = Layer::dropout(0.0).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        assert_eq!(l.forward(&x, mode, &StepKey::new(1, 1, 1), 3).unwrap().0, x);
    }
    assert!(Layer::dropout(1.0).is_err());
}

#[test]
fn dropout_masks_depend_only_on_key() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&[8, 8], &mut rng);
    let mut l = Layer::dropout(0.5).unwrap();
    let a = l
        .forward(&x, Mode::Train, &StepKey::new(1, 2, 3), 4)
        .unwrap()
        .0;
    let b = l
        .forward(&x, Mode::Train, &StepKey::new(1, 2, 3), 4)
        .unwrap()
        .0;
    let c = l
        .forward(&x, Mode::Train, &StepKey::new(1, 2, 4), 4)
        .unwrap()
        .0;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn lstm_zero_input_with_zero_bias_gives_zero_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut lstm = Lstm::new(8, 16, 2, &mut rng);
    for layer in &mut lstm.layers {
        layer.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    let (h, _) = lstm.forward(&Tensor::zeros(&[3, 5, 8])).unwrap();
    assert!(h.data().iter().all(|v| *v == 0.0));
}

#[test]
fn lstm_recurrent_blocks_are_orthogonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let lstm = Lstm::new(4, 6, 1, &mut rng);
    let h = 6;
    let w = &lstm.layers[0].w_hh;
    for gate in 0..4 {
        for a in 0..h {
            for b in 0..h {
                let dot: f64 = (0..h)
                    .map(|k| w[k * 4 * h + gate * h + a] * w[k * 4 * h + gate * h + b])
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "gate {gate}");
            }
        }
    }
    // Forget gate bias is one, the rest zero.
    let bias = &lstm.layers[0].bias;
    assert!(bias[h..2 * h].iter().all(|b| *b == 1.0));
    assert!(bias[..h].iter().chain(&bias[2 * h..]).all(|b| *b == 0.0));
}

#[test]
fn lstm_parameter_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let l = Layer::Lstm(Lstm::new(8, 128, 2, &mut rng));
    assert_eq!(l.num_params(), 70_144 + 131_584);
}

#[test]
fn batchnorm_eval_ignores_batch_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut l = Layer::BatchNorm(BatchNorm::new(3));
    for k in 0..4 {
        let x = random_tensor(&[5, 3], &mut rng);
        l.forward(&x, Mode::Train, &StepKey::new(0, 0, k), 0)
            .unwrap();
    }
    let a = random_tensor(&[1, 3], &mut rng);
    let others = random_tensor(&[4, 3], &mut rng);
    let alone = l.infer(&a).unwrap();
    let mut rows = vec![a.row(0).to_vec()];
    rows.extend((0..4).map(|r| others.row(r).to_vec()));
    let together = l.infer(&Tensor::from_rows(&rows).unwrap()).unwrap();
    assert_eq!(alone.row(0), together.row(0));
}

#[test]
fn batchnorm_needs_two_samples_to_train() {
    let mut l = Layer::BatchNorm(BatchNorm::new(2));
    let x = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
    assert!(l.forward(&x, Mode::Train, &StepKey::default(), 0).is_err());
    assert!(l.forward(&x, Mode::Eval, &StepKey::default(), 0).is_ok());
}

fn small_net(seed: u64) -> Sequential {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Sequential::new(
        "net",
        vec![
            Layer::Dense(Dense::new(3, 8, Init::He, &mut rng)),
            Layer::BatchNorm(BatchNorm::new(8)),
            Layer::Relu,
            Layer::dropout(0.2).unwrap(),
            Layer::Dense(Dense::new(8, 2, Init::Xavier, &mut rng)),
            Layer::Sigmoid,
        ],
        0,
    )
}

fn train_steps(net: &mut Sequential, steps: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = random_tensor(&[16, 3], &mut rng);
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::new(0.01, &sizes).unwrap();
    let mut losses = Vec::new();
    for s in 0..steps {
        let (y, cache) = net
            .forward(&x, Mode::Train, &StepKey::new(5, 0, s))
            .unwrap();
        // Pull every output toward 0.25.
        let g: Vec<f64> = y.data().iter().map(|v| v - 0.25).collect();
        losses.push(g.iter().map(|v| v * v / 2.0).sum());
        let (_, grads) = net
            .backward(&cache, &Tensor::from_vec(y.shape(), g).unwrap())
            .unwrap();
        adam.update(net.params_mut(), &grads).unwrap();
    }
    losses
}

#[test]
fn training_is_bit_reproducible() {
    let (mut a, mut b) = (small_net(3), small_net(3));
    let la = train_steps(&mut a, 20);
    let lb = train_steps(&mut b, 20);
    assert_eq!(la, lb);
    assert_eq!(checkpoint::to_bytes(&a), checkpoint::to_bytes(&b));
    assert!(la.last().unwrap() < &la[0]);
}

#[test]
fn checkpoint_round_trip_restores_params_and_buffers() {
    let mut a = small_net(4);
    train_steps(&mut a, 5);
    let bytes = checkpoint::to_bytes(&a);
    let mut b = small_net(5);
    checkpoint::from_bytes(&mut b, &bytes).unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    checkpoint::save(&a, &path).unwrap();
    let mut c = small_net(6);
    checkpoint::load(&mut c, &path).unwrap();
    assert_eq!(a, c);
}

#[test]
fn checkpoint_rejects_mismatch_and_corruption() {
    let a = small_net(4);
    let bytes = checkpoint::to_bytes(&a);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut other = Sequential::new(
        "net",
        vec![Layer::Dense(Dense::new(3, 9, Init::He, &mut rng))],
        0,
    );
    assert!(matches!(
        checkpoint::from_bytes(&mut other, &bytes),
        Err(Error::Checkpoint(_))
    ));

    let mut b = small_net(4);
    let mut truncated = bytes.clone();
    truncated.truncate(bytes.len() - 3);
    assert!(checkpoint::from_bytes(&mut b, &truncated).is_err());

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(checkpoint::from_bytes(&mut b, &trailing).is_err());

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(checkpoint::from_bytes(&mut b, &bad_magic).is_err());

    // A NaN weight in the last array.
    let mut nan = bytes;
    let n = nan.len();
    nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(checkpoint::from_bytes(&mut b, &nan).is_err());
}

#[test]
fn lstm_rejects_wrong_input_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let lstm = Lstm::new(8, 4, 1, &mut rng);
    assert!(lstm.forward(&Tensor::zeros(&[2, 5, 7])).is_err());
    assert!(lstm.forward(&Tensor::zeros(&[2, 8])).is_err());
}
