use glance_core::autodiff::{AdamConfig, AdamState, Graph};
use glance_core::data::{generate_dataset, DatasetConfig, DomainSpec};
use glance_core::model::{build_model, forward_personalized, forward_standard, ArchitectureScale, ForwardOptions, ModelVariant};
use glance_core::persist::{
    config_hash, decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, parse_config, render_config,
    save_checkpoint, CONFIG_KEYS,
};
use glance_core::train::{Experiment, Regime, RegimeConfig};
use glance_core::{Error, Model32};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scale() -> ArchitectureScale {
    ArchitectureScale { input_size: 16, n_blocks: 2, base_channels: 2, embedding_dim: 16, ..ArchitectureScale::desk() }
}

fn forward_bits(w: &Model32, personalized: bool) -> Vec<u32> {
    let cfg = DatasetConfig { image_size: 16, subjects_per_domain: 5, per_class: 1, ..Default::default() };
    let ds = generate_dataset(&cfg, &[DomainSpec::primary()]).unwrap();
    let idx: Vec<usize> = (0..6).collect();
    let mut g = Graph::new(&w.store);
    let x = g.input(ds.inputs::<f32>(&idx)).unwrap();
    let opts = ForwardOptions { decoder: true, ..ForwardOptions::eval() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let nodes = if personalized {
        let b = g.input(ds.inputs::<f32>(&[0, 0, 0, 0, 0, 0])).unwrap();
        let o = forward_personalized(&mut g, w, x, b, &opts, &mut rng).unwrap();
        vec![o.class_probs, o.current_reconstruction.unwrap()]
    } else {
        let o = forward_standard(&mut g, w, x, &opts, &mut rng).unwrap();
        vec![o.class_probs, o.reconstruction.unwrap()]
    };
    nodes.into_iter().flat_map(|n| g.value(n).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn checkpoint_preserves_forward_outputs_bit_exactly() {
    for variant in [
        ModelVariant::default(),
        ModelVariant { personalized: true, ..Default::default() },
        ModelVariant { domain_head: true, skip_connections: false, ..Default::default() },
    ] {
        let w: Model32 = build_model(scale(), variant, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.glhg");
        save_checkpoint(&path, &w, None, "h").unwrap();
        let back = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back.weights.variant, variant);
        assert!(back.weights.store.bit_identical(&w.store));
        assert_eq!(forward_bits(&back.weights, variant.personalized), forward_bits(&w, variant.personalized));
    }
}

#[test]
fn optimizer_state_round_trips() {
    let mut w: Model32 = build_model(scale(), ModelVariant::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut adam = AdamState::new(&w.store, AdamConfig::with_lr(1e-3));
    for (_, p) in w.store.iter_mut() {
        let g = vec![0.01f32; p.tensor.len()];
        p.tensor.set_grad(g).unwrap();
    }
    adam.step(&mut w.store).unwrap();
    let bytes = encode_checkpoint(&w, Some(&adam), "abc");
    let back = decode_checkpoint::<f32>(&bytes).unwrap();
    let restored = back.adam.unwrap();
    assert_eq!(restored.step_count(), 1);
    assert_eq!(restored.moments(), adam.moments());
    assert_eq!(back.config_hash, "abc");
}

#[test]
fn hash_mismatch_is_refused_unless_forced() {
    let w: Model32 = build_model(scale(), ModelVariant::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.glhg");
    save_checkpoint(&path, &w, None, "aaaa").unwrap();
    assert!(matches!(load_checkpoint_for::<f32>(&path, "bbbb", false), Err(Error::ConfigHashMismatch { .. })));
    assert!(load_checkpoint_for::<f32>(&path, "bbbb", true).is_ok());
    assert!(load_checkpoint_for::<f32>(&path, "aaaa", false).is_ok());
}

#[test]
fn damaged_checkpoints_are_format_errors() {
    let w: Model32 = build_model(scale(), ModelVariant::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let bytes = encode_checkpoint(&w, None, "h");
    let offset = |r: glance_core::Result<_>| match r {
        Err(Error::Format { offset, .. }) => offset,
        other => panic!("expected a format error, got {:?}", other.map(|_: glance_core::persist::Checkpoint<f32>| ())),
    };
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(offset(decode_checkpoint::<f32>(&bad)), 0);
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert_eq!(offset(decode_checkpoint::<f32>(&bad)), 4);
    let mut bad = bytes.clone();
    let mid = bytes.len() / 2;
    bad[mid] ^= 0xff;
    offset(decode_checkpoint::<f32>(&bad));
    offset(decode_checkpoint::<f32>(&bytes[..bytes.len() - 3]));
}

#[test]
fn config_parses_renders_and_hashes() {
    let text = "# desk run\nregime = multidomain\nlabel_fraction = 0.1\nseeds = 3,4\nper_class = 12\nlambda3 = 5\n";
    let exp = parse_config(text).unwrap();
    assert_eq!(exp.regime.regime, Regime::Multidomain);
    assert_eq!(exp.n_domains, 2);
    assert_eq!(exp.regime.label_fraction, 0.1);
    assert_eq!(exp.regime.seeds, vec![3, 4]);
    assert_eq!(exp.data.per_class, 12);
    assert_eq!(exp.regime.loss_weights.lambda3, 5.0);
    assert_eq!(exp.regime.lr, 1e-4);
    let rendered = render_config(&exp);
    for key in CONFIG_KEYS {
        assert!(rendered.lines().any(|l| l.starts_with(&format!("{key} ="))), "{key} missing");
    }
    let again = parse_config(&rendered).unwrap();
    assert_eq!(again, exp);
    assert_eq!(config_hash(&again), config_hash(&exp));
    assert_eq!(config_hash(&exp).len(), 64);
    let mut other = exp.clone();
    other.regime.seeds = vec![5];
    assert_ne!(config_hash(&other), config_hash(&exp));
}

#[test]
fn scale_preset_applies_before_individual_keys() {
    let exp = parse_config("embedding_dim = 64\nscale = full\n").unwrap();
    assert_eq!(exp.regime.scale, ArchitectureScale { embedding_dim: 64, ..ArchitectureScale::full() });
    assert_eq!(exp.data.image_size, 96);
    let p = parse_config("regime = personalized").unwrap();
    assert_eq!((p.regime.lr, p.regime.batch_size), (1e-3, 16));
}

#[test]
fn config_errors_name_the_line() {
    for (text, line) in [
        ("regime = standard\nbogus = 1\n", 2),
        ("lr = 1e-3\nlr = 1e-4\n", 2),
        ("\n\nper_class = many\n", 3),
        ("regime = sideways\n", 1),
        ("no equals sign\n", 1),
    ] {
        match parse_config(text) {
            Err(Error::Config(msg)) => assert!(msg.contains(&format!("line {line}")), "{text:?}: {msg}"),
            other => panic!("{text:?} parsed: {other:?}"),
        }
    }
    let exp = Experiment::new("x", RegimeConfig::new(Regime::Standard));
    assert!(parse_config(&render_config(&exp).replace("label_fraction = 1", "label_fraction = 0.5")).is_err());
}
