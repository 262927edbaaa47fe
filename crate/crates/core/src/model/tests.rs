use super::*;
use crate::error::Error;
use crate::numerics::{BatchNormMode, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(dims.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn run<F>(store: &ParamStore, mode: BatchNormMode, x: &Tensor, f: F) -> Tensor
where
    F: FnOnce(&mut Session, crate::numerics::Var) -> crate::Result<crate::numerics::Var>,
{
    let mut g = Graph::new();
    let mut s = Session::frozen(&mut g, store, mode);
    let xv = s.graph.constant(x.clone());
    let y = f(&mut s, xv).unwrap();
    g.value(y).clone()
}

#[test]
fn conv_block_param_count_by_hand() {
    let mut store = ParamStore::new(0);
    let block = ConvBlock::new(&mut store, "b", 8, 16, 5);
    assert_eq!(block.params(), 8 * 5 + 8 * 16 + 16 + 32);
    assert_eq!(block.params(), 216);
    assert_eq!(store.count(), 216);
}

#[test]
fn conv_block_keeps_time_and_is_finite_on_zeros() {
    let mut store = ParamStore::new(1);
    let block = ConvBlock::new(&mut store, "b", 3, 5, 7);
    let x = Tensor::zeros(vec![2, 3, 4, 11]);
    let y = run(&store, BatchNormMode::Train, &x, |s, x| block.forward(s, x));
    assert_eq!(y.dims(), &[2, 5, 4, 11]);
    assert!(y.is_finite());
    let again = run(&store, BatchNormMode::Train, &x, |s, x| block.forward(s, x));
    assert!(y.bit_eq(&again));
}

#[test]
fn hand_counted_macs() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![1, 4, 10]));
    let w = g.constant(Tensor::zeros(vec![8, 4]));
    g.pointwise_conv(x, w, None).unwrap();
    assert_eq!(g.total_macs(), 320);

    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![1, 4, 10]));
    let k = g.constant(Tensor::zeros(vec![4, 3]));
    g.depthwise_conv1d(x, k, 1, crate::numerics::Padding::Same).unwrap();
    assert_eq!(g.total_macs(), 120);
}

#[test]
fn eca_kernel_examples() {
    assert_eq!(eca_kernel_size(64), 3);
    assert_eq!(eca_kernel_size(1), 1);
    // t = 2 sits midway between 1 and 3
    assert_eq!(eca_kernel_size(8), 1);
    // t = 4 sits midway between 3 and 5
    assert_eq!(eca_kernel_size(128), 3);
    assert_eq!(eca_kernel_size(512), 5);
    for c in 1..2000 {
        assert_eq!(eca_kernel_size(c) % 2, 1);
    }
}

fn attention(kind: AttentionKind, c: usize, f: usize, seed: u64) -> (ParamStore, Attention) {
    let cfg = ModelConfig { channels: c, freq_bins: f, ..ModelConfig::tiny(kind, Placement::All) };
    let mut store = ParamStore::new(seed);
    let a = Attention::new(&mut store, "att", kind, &cfg, f).unwrap();
    (store, a)
}

#[test]
fn zeroed_attention_halves_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in AttentionKind::MODULES {
        for trial in 0..10 {
            let (mut store, a) = attention(kind, 6, 5, trial);
            store.update_each(|_, _, t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
            let x = random(&[2, 6, 5, 7], &mut rng);
            for mode in [BatchNormMode::Train, BatchNormMode::Eval] {
                let y = run(&store, mode, &x, |s, x| a.forward(s, x));
                assert!(y.bit_eq(&x.map(|v| 0.5 * v)), "{kind:?}");
            }
        }
    }
}

#[test]
fn attention_weights_lie_in_the_open_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in AttentionKind::MODULES {
        let (store, a) = attention(kind, 8, 6, 9);
        let x = random(&[3, 8, 6, 5], &mut rng).map(|v| 4.0 * v);
        let w = run(&store, BatchNormMode::Train, &x, |s, x| a.weights(s, x));
        let expect: &[usize] = if kind == AttentionKind::C2d { &[3, 8, 6] } else { &[3, 8] };
        assert_eq!(w.dims(), expect);
        assert!(w.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}

#[test]
fn attention_parameter_counts() {
    let (store, a) = attention(AttentionKind::Eca, 64, 5, 0);
    assert_eq!((a.params(), store.count()), (3, 3));
    let (store, a) = attention(AttentionKind::Se, 64, 5, 0);
    assert_eq!(a.params(), 2 * 64 * 8 + 64 + 8);
    assert_eq!(store.count(), a.params());
    let (store, a) = attention(AttentionKind::C2d, 3, 40, 0);
    assert_eq!(a.params(), 36 + 8 + 36 + 1);
    assert_eq!(store.count(), a.params());
    // squeeze hidden never drops to zero
    let (_, a) = attention(AttentionKind::Se, 3, 5, 0);
    assert!(matches!(a, Attention::Se { hidden: 1, .. }));
}

#[test]
fn c2d_scale_is_constant_over_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (store, a) = attention(AttentionKind::C2d, 4, 6, 2);
    let x = random(&[2, 4, 6, 9], &mut rng);
    let y = run(&store, BatchNormMode::Train, &x, |s, x| a.forward(s, x));
    for row in 0..2 * 4 * 6 {
        let xs = &x.data()[row * 9..][..9];
        let ys = &y.data()[row * 9..][..9];
        let r0 = ys[0] / xs[0];
        for (a, b) in xs.iter().zip(ys) {
            assert!((b / a - r0).abs() < 1e-12);
        }
    }
}

#[test]
fn se_squeeze_is_linear_in_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[1, 3, 4, 5], &mut rng);
    let squeeze = |x: &Tensor| {
        let mut g = Graph::new();
        let v = g.constant(x.clone().reshape(vec![1, 3, 20]).unwrap());
        let p = g.mean_last(v).unwrap();
        g.value(p).clone()
    };
    let a = squeeze(&x);
    let b = squeeze(&x.map(|v| 2.5 * v));
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((2.5 * u - v).abs() < 1e-12);
    }
}

#[test]
fn zero_weight_block_collapses_to_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = ModelConfig::tiny(AttentionKind::None, Placement::None);
    let mut store = ParamStore::new(0);
    let block = MixerBlock::new(&mut store, "blk", &cfg);
    store.update_each(|_, name, t| {
        if !name.ends_with("gamma") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    });
    let x = random(&[2, cfg.channels, cfg.freq_bins, cfg.frames], &mut rng);
    let y = run(&store, BatchNormMode::Train, &x, |s, x| block.forward(s, x));
    assert!(y.bit_eq(&x));
}

#[test]
fn zero_mixer_outputs_zero_and_shapes_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..5 {
        let cfg = ModelConfig {
            channels: rng.gen_range(1..6),
            freq_bins: rng.gen_range(2..9),
            frames: rng.gen_range(2..13),
            kernel_freq: [1, 3, 5][trial % 3],
            kernel_time: [3, 5, 1][trial % 3],
            kernel_1d: [3, 4, 5][trial % 3],
            mixer_ratio: [0.5, 1.0, 2.0][trial % 3],
            ..ModelConfig::tiny(AttentionKind::None, Placement::None)
        };
        let dims = [2, cfg.channels, cfg.freq_bins, cfg.frames];
        let mut store = ParamStore::new(trial as u64);
        let block = MixerBlock::new(&mut store, "blk", &cfg);
        let x = random(&dims, &mut rng);
        let y = run(&store, BatchNormMode::Train, &x, |s, x| block.forward(s, x));
        assert_eq!(y.dims(), &dims);

        let mut store = ParamStore::new(0);
        let mixer = MixerLayer::new(&mut store, "mix", &cfg);
        let y = run(&store, BatchNormMode::Eval, &x, |s, x| mixer.forward(s, x));
        assert_eq!(y.dims(), &dims);
        store.update_each(|_, _, t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        let y = run(&store, BatchNormMode::Eval, &x, |s, x| mixer.forward(s, x));
        assert!(y.data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn config_rules() {
    ModelConfig::default().validate().unwrap();
    let bad = ModelConfig::default().with_attention(AttentionKind::Se, Placement::None);
    assert!(matches!(FcaNet::build(&bad, 0), Err(Error::Config(_))));
    let bad = ModelConfig::default().with_attention(AttentionKind::None, Placement::Pre);
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let bad = ModelConfig { channels: 0, ..ModelConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    assert_eq!("C2D".parse::<AttentionKind>().unwrap(), AttentionKind::C2d);
    assert!("cbam".parse::<AttentionKind>().is_err());
}

fn every_variant(base: &ModelConfig) -> Vec<ModelConfig> {
    let mut out = vec![base.with_attention(AttentionKind::None, Placement::None)];
    for kind in AttentionKind::MODULES {
        for p in Placement::INSERTING {
            out.push(base.with_attention(kind, p));
        }
    }
    out
}

#[test]
fn footprint_matches_store_and_engine() {
    for cfg in every_variant(&ModelConfig::tiny(AttentionKind::None, Placement::None)) {
        let net = FcaNet::build(&cfg, 1).unwrap();
        let fp = net.footprint();
        assert_eq!(fp.params, net.store().count(), "{}", cfg.variant_name());
        assert_eq!(fp.macs, net.measured_macs().unwrap(), "{}", cfg.variant_name());
        assert!(fp.macs >= fp.params as u64);
    }
}

#[test]
fn attention_count_and_overhead_per_placement() {
    let base = ModelConfig::tiny(AttentionKind::None, Placement::None);
    let plain = count_footprint(&base).unwrap();
    for kind in AttentionKind::MODULES {
        for (p, n) in [(Placement::Pre, 1), (Placement::Post, 1), (Placement::All, base.blocks), (Placement::Final, 1)] {
            let net = FcaNet::build(&base.with_attention(kind, p), 0).unwrap();
            let atts = net.attentions();
            assert_eq!(atts.len(), n);
            assert!(atts.iter().all(|a| a.kind() == kind));
            if p == Placement::All {
                assert_eq!(net.footprint().params, plain.params + n * atts[0].params());
            }
        }
    }
}

#[test]
fn more_blocks_cost_more() {
    let cfg = ModelConfig::default();
    let a = count_footprint(&cfg).unwrap();
    let b = count_footprint(&ModelConfig { blocks: 2 * cfg.blocks, ..cfg }).unwrap();
    assert!(b.params > a.params && b.macs > a.macs);
}

#[test]
fn builds_are_deterministic_and_share_weights_across_variants() {
    let cfg = ModelConfig::tiny(AttentionKind::C2d, Placement::All);
    let a = FcaNet::build(&cfg, 5).unwrap();
    let b = FcaNet::build(&cfg, 5).unwrap();
    assert_eq!(a.store(), b.store());
    let plain = FcaNet::build(&cfg.with_attention(AttentionKind::None, Placement::None), 5).unwrap();
    for (name, t) in plain.store().names().iter().zip(plain.store().values()) {
        assert!(a.store().by_name(name).unwrap().bit_eq(t), "{name}");
    }
}

#[test]
fn logits_shape_and_input_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = ModelConfig::tiny(AttentionKind::Eca, Placement::Final);
    let net = FcaNet::build(&cfg, 0).unwrap();
    let y = net.predict(&random(&net.input_dims(3), &mut rng)).unwrap();
    assert_eq!(y.dims(), &[3, 12]);
    assert!(matches!(net.predict(&Tensor::zeros(vec![1, 1, 8, 13])), Err(Error::Shape(_))));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = ModelConfig::tiny(AttentionKind::C2d, Placement::Pre);
    let mut net = FcaNet::build(&cfg, 3).unwrap();
    // move the running statistics away from their initial values
    let x = random(&net.input_dims(4), &mut rng);
    let mut g = Graph::new();
    let updates = {
        let mut s = Session::frozen(&mut g, net.store(), BatchNormMode::Train);
        let xv = s.graph.constant(x.clone());
        net.forward(&mut s, xv).unwrap();
        s.bn_updates
    };
    net.store_mut().apply_bn_updates(&g, &updates).unwrap();

    let bytes = net.to_checkpoint().unwrap();
    let back = FcaNet::from_checkpoint(&bytes).unwrap();
    assert_eq!(back.config(), net.config());
    assert_eq!(back.store().bn_states(), net.store().bn_states());
    assert!(back.predict(&x).unwrap().bit_eq(&net.predict(&x).unwrap()));
    assert_eq!(back.to_checkpoint().unwrap(), bytes);

    assert!(matches!(FcaNet::from_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(matches!(FcaNet::from_checkpoint(&wrong), Err(Error::Format(_))));
}
