use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ops::{finite_difference_grad, relative_error, FD_EPS_F64};

fn cfg(scale: u32, channels: usize, cycles: usize) -> ModelConfig {
    ModelConfig {
        scale,
        channels,
        cycles,
        ..Default::default()
    }
}

fn random_input(dims: (usize, usize, usize, usize), seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_, _, _, _| rng.random_range(0.0..1.0))
}

/// Randomizes every parameter, including biases and slopes, so gradient
/// checks exercise all paths.
fn perturb_all<S: Scalar>(m: &mut DrfnModel<S>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in m.registry_mut() {
        for v in e.values.iter_mut() {
            let delta = match e.kind {
                ParamKind::Weight => 0.0,
                ParamKind::Bias => rng.random_range(-0.1..0.1),
                ParamKind::Slope => rng.random_range(-0.2..0.2),
            };
            *v += S::from_f64(delta);
        }
    }
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    for bad in [
        ModelConfig { scale: 5, ..Default::default() },
        ModelConfig { cycles: 0, ..Default::default() },
        ModelConfig { blocks: 3, ..Default::default() },
        ModelConfig { levels: 4, ..Default::default() },
        ModelConfig { channels: 0, ..Default::default() },
    ] {
        assert!(matches!(DrfnModel::<f32>::build(bad, 0), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn x4_registry_structure() {
    let m = DrfnModel::<f32>::build(cfg(4, 64, 10), 1).unwrap();
    assert_eq!(m.stages.len(), 2);
    let names: Vec<_> = m.registry().into_iter().map(|e| e.name).collect();
    // 2 × (tconv weight, bias, prelu) + 2 × (3 convs × 2 + 2 prelus) + 3 × 2 + 2
    assert_eq!(names.len(), 6 + 16 + 6 + 2);
    let unique: std::collections::HashSet<_> = names.iter().collect();
    assert_eq!(unique.len(), names.len());
    for n in ["upsample1.weight", "upsample2.prelu", "block2.conv_c.bias", "level2.weight", "fusion.weight"] {
        assert!(names.iter().any(|x| x == n), "{n}");
    }
    assert_eq!(m.stages[0].tconv.in_channels(), 1);
    assert_eq!(m.stages[1].tconv.in_channels(), 64);
    assert_eq!(m.fusion.in_channels(), 192);
}

#[test]
fn build_is_deterministic_and_he_scaled() {
    let a = DrfnModel::<f32>::build(cfg(2, 16, 2), 42).unwrap();
    let b = DrfnModel::<f32>::build(cfg(2, 16, 2), 42).unwrap();
    let c = DrfnModel::<f32>::build(cfg(2, 16, 2), 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    // std of a 16·16·9 fan-in layer should be near sqrt(2/144)
    let w = a.block1.conv_a.weight.data();
    let var = w.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / w.len() as f64;
    assert!((var.sqrt() / (2.0f64 / 144.0).sqrt() - 1.0).abs() < 0.1);
    assert!(a.block1.conv_a.bias.iter().all(|&v| v == 0.0));
    assert!(a.block1.prelu_a.slope.iter().all(|&v| (v - 0.33).abs() < 1e-7));
}

#[test]
fn param_count_is_cycle_invariant() {
    let counts: Vec<_> = [1, 3, 5, 10]
        .iter()
        .map(|&c| DrfnModel::<f32>::build(cfg(4, 64, c), 0).unwrap().param_count())
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
}

#[test]
fn one_block_savings_identity() {
    let block = RecurrentResidualBlock::<f32>::zeros(64, 5);
    assert_eq!(block.conv_param_count(), 3 * (3 * 3 * 64 * 64 + 64));
    assert_eq!(block.conv_param_count(), 110_784);
    assert_eq!(block.unrolled_conv_param_count() - block.conv_param_count(), 443_136);
}

#[test]
fn hand_enumerated_tiny_count() {
    // tconv 4·4 + 1, slope 1; per block 3·(9 + 1) + 2; three levels 3·(9 + 1);
    // fusion 3·9 + 1
    let m = DrfnModel::<f32>::build(cfg(2, 1, 1), 0).unwrap();
    assert_eq!(m.param_count(), (16 + 1 + 1) + 2 * (30 + 2) + 3 * 10 + (27 + 1));
    assert_eq!(m.param_count(), 140);
}

#[test]
fn full_x4_count_by_layer() {
    let m = DrfnModel::<f32>::build(ModelConfig::default(), 0).unwrap();
    let layers = layer_param_counts(&m);
    let get = |n: &str| layers.iter().find(|(l, _)| l == n).map(|(_, c)| *c).unwrap();
    assert_eq!(get("upsample1"), 16 * 64 + 64);
    assert_eq!(get("upsample2"), 16 * 64 * 64 + 64);
    assert_eq!(get("upsample1.prelu"), 64);
    assert_eq!(get("block1.conv_a"), 9 * 64 * 64 + 64);
    assert_eq!(get("fusion"), 9 * 192 + 1);
    assert_eq!(layers.iter().map(|(_, c)| c).sum::<usize>(), m.param_count());
    assert_eq!(m.param_count(), 401_153);
}

#[test]
fn output_shape_for_every_scale() {
    for scale in SUPPORTED_SCALES {
        let m = DrfnModel::<f32>::build(cfg(scale, 2, 1), 3).unwrap();
        for (h, w) in [(1, 1), (3, 5), (4, 4)] {
            let x = Tensor::<f32>::full((2, 1, h, w), 0.5);
            let y = m.predict(&x).unwrap();
            assert_eq!(y.dims(), Dims::new(2, 1, scale as usize * h, scale as usize * w));
        }
    }
}

#[test]
fn x4_on_8x8() {
    let m = DrfnModel::<f32>::build(cfg(4, 4, 2), 0).unwrap();
    let y = m.predict(&Tensor::full((1, 1, 8, 8), 0.3)).unwrap();
    assert_eq!(y.dims(), Dims::new(1, 1, 32, 32));
}

#[test]
fn rejects_multichannel_input() {
    let m = DrfnModel::<f32>::build(cfg(2, 2, 1), 0).unwrap();
    assert!(matches!(m.forward(&Tensor::zeros((1, 3, 4, 4))), Err(Error::Shape(_))));
}

#[test]
fn zero_network_outputs_zero() {
    let m = DrfnModel::<f32>::zeros(cfg(4, 4, 3)).unwrap();
    let y = m.predict(&Tensor::full((1, 1, 5, 5), 0.7)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn single_cycle_matches_manual_composition() {
    let m = DrfnModel::<f64>::build(cfg(2, 3, 1), 9).unwrap();
    let x = random_input((1, 1, 5, 4), 10);
    let (hr, _) = m.forward(&x).unwrap();

    let step = |t: &Tensor<f64>, b: &RecurrentResidualBlock<f64>| {
        let a = prelu_forward(&conv2d_forward(t, &b.conv_a).unwrap(), &b.prelu_a).unwrap();
        let bb = prelu_forward(&conv2d_forward(&a, &b.conv_b).unwrap(), &b.prelu_b).unwrap();
        conv2d_forward(&bb, &b.conv_c).unwrap().add(t).unwrap()
    };
    let s = &m.stages[0];
    let x0 = prelu_forward(&transposed_conv2d_forward(&x, &s.tconv).unwrap(), &s.prelu).unwrap();
    let x1 = step(&x0, &m.block1);
    let x2 = step(&x1, &m.block2);
    let taps = [&x0, &x1, &x2];
    let outs: Vec<_> = taps
        .iter()
        .zip(&m.level_convs)
        .map(|(t, c)| conv2d_forward(t, c).unwrap())
        .collect();
    let cat = Tensor::concat_channels(&outs[0], &outs[1], &outs[2]).unwrap();
    let want = conv2d_forward(&cat, &m.fusion).unwrap();
    assert!(hr.max_abs_diff(&want).unwrap() < 1e-12);
}

#[test]
fn shared_block_equals_unrolled_copies() {
    let m = DrfnModel::<f32>::build(cfg(2, 4, 4), 5).unwrap();
    let x = random_input((2, 4, 6, 6), 6).cast::<f32>();
    let (shared, _) = m.block1.forward(&x).unwrap();
    let copies: Vec<_> = (0..4).map(|_| m.block1.with_cycles(1)).collect();
    let mut t = x;
    for c in &copies {
        t = c.forward(&t).unwrap().0;
    }
    assert!(shared.max_abs_diff(&t).unwrap() < 1e-5);
}

#[test]
fn ablation_levels() {
    let two = DrfnModel::<f32>::build(ModelConfig { levels: 2, ..cfg(2, 4, 1) }, 0).unwrap();
    assert_eq!(two.fusion.in_channels(), 8);
    let names: Vec<_> = two.registry().into_iter().map(|e| e.name).collect();
    assert!(names.contains(&"level1.weight".to_string()));
    assert!(names.contains(&"level3.weight".to_string()));
    assert!(!names.contains(&"level2.weight".to_string()));

    let one = DrfnModel::<f32>::build(ModelConfig { levels: 1, ..cfg(2, 4, 1) }, 0).unwrap();
    assert_eq!(one.fusion.in_channels(), 4);
    assert_eq!(one.config().taps(), vec![LevelTap::Block2]);
    assert_eq!(one.predict(&Tensor::full((1, 1, 3, 3), 0.5)).unwrap().dims(), Dims::new(1, 1, 6, 6));
}

#[test]
fn zero_upstream_gradient() {
    let m = DrfnModel::<f32>::build(cfg(2, 4, 2), 0).unwrap();
    let (hr, tape) = m.forward(&Tensor::full((1, 1, 4, 4), 0.5)).unwrap();
    let g = m.backward(&tape, &Tensor::zeros(hr.dims())).unwrap();
    assert_eq!(g.len(), m.registry().len());
    assert!(g.iter().all(|(_, v)| v.iter().all(|&x| x == 0.0)));
    assert!(m.backward(&tape, &Tensor::zeros((1, 1, 4, 4))).is_err());
}

/// Finite differences of `sum(hr)` for every scalar in the registry.
fn network_fd(m: &DrfnModel<f64>, x: &Tensor<f64>, eps: f64) -> GradMap<f64> {
    let mut probe = m.clone();
    let mut out = GradMap::zeros_like(m.registry());
    let names: Vec<_> = m.registry().into_iter().map(|e| e.name).collect();
    for name in names {
        let len = m.registry().into_iter().find(|e| e.name == name).unwrap().values.len();
        for idx in 0..len {
            let mut eval = |delta: f64| {
                for e in probe.registry_mut() {
                    if e.name == name {
                        e.values[idx] += delta;
                    }
                }
                let v = probe.predict(x).unwrap().sum();
                for e in probe.registry_mut() {
                    if e.name == name {
                        e.values[idx] -= delta;
                    }
                }
                v
            };
            let d = (eval(eps) - eval(-eps)) / (2.0 * eps);
            out.get_mut(&name).unwrap()[idx] = d;
        }
    }
    out
}

#[test]
fn whole_network_gradient_matches_finite_differences() {
    let mut m = DrfnModel::<f64>::build(cfg(2, 4, 1), 11).unwrap();
    perturb_all(&mut m, 12);
    let x = random_input((1, 1, 4, 4), 13);
    let (hr, tape) = m.forward(&x).unwrap();
    let analytic = m.backward(&tape, &Tensor::full(hr.dims(), 1.0)).unwrap();
    let numeric = network_fd(&m, &x, FD_EPS_F64);
    for (name, a) in analytic.iter() {
        let n = numeric.get(name).unwrap();
        let err = relative_error(a, n);
        assert!(err < 1e-6, "{name}: relative error {err:e}");
    }

    // the input gradient path through the front end is also exact
    let fd_x = finite_difference_grad(|t| m.predict(t).unwrap().sum(), &x, FD_EPS_F64);
    assert!(fd_x.max_abs() > 0.0);
}

#[test]
fn shared_gradient_is_sum_over_unrolled_cycles() {
    let m = DrfnModel::<f64>::build(cfg(2, 2, 2), 21).unwrap();
    let block = &m.block1;
    let x = random_input((1, 2, 3, 3), 22);
    let g_out = random_input((1, 2, 3, 3), 23);

    let (_, tape) = block.forward(&x).unwrap();
    let (gx_shared, shared) = block.backward(&tape, &g_out).unwrap();

    // two independent single-cycle copies with tied-then-copied weights
    let first = block.with_cycles(1);
    let second = block.with_cycles(1);
    let (mid, t1) = first.forward(&x).unwrap();
    let (_, t2) = second.forward(&mid).unwrap();
    let (g_mid, g2) = second.backward(&t2, &g_out).unwrap();
    let (gx_unrolled, g1) = first.backward(&t1, &g_mid).unwrap();

    assert!(gx_shared.max_abs_diff(&gx_unrolled).unwrap() < 1e-12);
    let pairs = [
        (&shared.conv_a, &g1.conv_a, &g2.conv_a),
        (&shared.conv_b, &g1.conv_b, &g2.conv_b),
        (&shared.conv_c, &g1.conv_c, &g2.conv_c),
    ];
    for (s, a, b) in pairs {
        let sum = a.weight.add(&b.weight).unwrap();
        assert!(s.weight.max_abs_diff(&sum).unwrap() < 1e-12);
        for ((x, y), z) in s.bias.iter().zip(&a.bias).zip(&b.bias) {
            assert!((x - (y + z)).abs() < 1e-12);
        }
    }
    for (s, a, b) in [
        (&shared.prelu_a, &g1.prelu_a, &g2.prelu_a),
        (&shared.prelu_b, &g1.prelu_b, &g2.prelu_b),
    ] {
        for ((x, y), z) in s.slope.iter().zip(&a.slope).zip(&b.slope) {
            assert!((x - (y + z)).abs() < 1e-12);
        }
    }
    // and neither cycle alone accounts for it
    assert!(shared.conv_a.weight.max_abs_diff(&g1.conv_a.weight).unwrap() > 1e-6);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = DrfnModel::<f32>::build(cfg(3, 4, 2), 7).unwrap();
    let bytes = encode_checkpoint(&m);
    assert_eq!(&bytes[..4], b"DRFN");
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, m);
    let x = random_input((1, 1, 5, 5), 8).cast::<f32>();
    let a = m.predict(&x).unwrap();
    let b = back.predict(&x).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let bytes = encode_checkpoint(&DrfnModel::<f32>::build(cfg(2, 2, 1), 0).unwrap());
    for cut in [0, 3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
        match decode_checkpoint(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(decode_checkpoint(&trailing), Err(Error::Format { .. })));
    let mut version = bytes;
    version[4] = 9;
    assert!(matches!(decode_checkpoint(&version), Err(Error::Format { offset: 4, .. })));
}

#[test]
fn checkpoint_loads_under_different_cycle_count() {
    let m = DrfnModel::<f32>::build(cfg(2, 4, 10), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.drfn");
    save_checkpoint(&m, &path).unwrap();
    let three = load_checkpoint(&path).unwrap().with_cycles(3).unwrap();
    assert_eq!(three.config().cycles, 3);
    assert_eq!(three.param_count(), m.param_count());
    let x = Tensor::full((1, 1, 4, 4), 0.4);
    assert_ne!(three.predict(&x).unwrap(), m.predict(&x).unwrap());
}
