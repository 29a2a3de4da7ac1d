mod common;

use nanet_core::model::{
    autoencoder_nodes, classifier_graph, joint_loss, nanet_graph, param_specs, AutoencoderConfig, ClassifierConfig,
    LayerKind, Mode, NanetParams, INPUT_MEAN,
};
use nanet_core::{rng, Error};
use nanet_tensor::{Graph, Tensor, TensorError};
use rand::Rng;

fn random_batch(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut r = rng::stream(seed, &[77]);
    Tensor::new(vec![n, 1, h, w], (0..n * h * w).map(|_| r.gen::<f32>()).collect()).unwrap()
}

#[test]
fn parameter_counts_are_frozen() {
    let default = NanetParams::init(AutoencoderConfig::default(), ClassifierConfig::default(), 0).unwrap();
    let ae: usize = default
        .names()
        .iter()
        .zip(default.tensors())
        .filter(|(n, _)| n.starts_with("ae."))
        .map(|(_, t)| t.numel())
        .sum();
    let cls: usize = default
        .names()
        .iter()
        .zip(default.tensors())
        .filter(|(n, _)| n.starts_with("cls."))
        .map(|(_, t)| t.numel())
        .sum();
    assert_eq!(ae, 1_925_025);
    assert_eq!(cls, 25_654_106);
    assert_eq!(default.num_scalars(), 1_925_025 + 25_654_106);

    let desk = NanetParams::init(AutoencoderConfig::desk(), ClassifierConfig::default(), 0).unwrap();
    assert_eq!(desk.num_scalars(), 481_745 + 25_654_106);
}

#[test]
fn classifier_layer_sizes() {
    let p = NanetParams::init(AutoencoderConfig::desk(), ClassifierConfig::default(), 0).unwrap();
    let count = |name: &str| {
        p.get(&format!("{name}.weight")).unwrap().numel() + p.get(&format!("{name}.bias")).unwrap().numel()
    };
    assert_eq!(count("cls.conv1"), 7_808);
    assert_eq!(count("cls.conv2"), 307_392);
    assert_eq!(count("cls.conv3"), 442_624);
    for l in ["cls.conv4", "cls.conv5", "cls.conv6"] {
        assert_eq!(count(l), 590_080);
    }
    assert_eq!(count("cls.fc1"), 18_876_416);
    assert_eq!(count("cls.fc2"), 4_196_352);
    assert_eq!(count("cls.fc3"), 53_274);
}

#[test]
fn nine_weight_layers_with_expected_kernels() {
    let specs = param_specs(&AutoencoderConfig::default(), &ClassifierConfig::default());
    let layers: Vec<_> = specs.iter().filter(|s| s.name.starts_with("cls.") && !s.is_bias).collect();
    assert_eq!(layers.len(), 9);
    let mut kernels: Vec<usize> = layers.iter().filter(|s| s.kind == LayerKind::Conv).map(|s| s.shape[2]).collect();
    kernels.sort_unstable();
    assert_eq!(kernels, [3, 3, 3, 3, 5, 11]);
    assert!(layers.iter().filter(|s| s.kind == LayerKind::Conv).all(|s| s.shape[2] == s.shape[3]));
    assert_eq!(layers.iter().filter(|s| s.kind == LayerKind::Linear).count(), 3);
    assert_eq!(layers.last().unwrap().shape[0], 26);
}

#[test]
fn names_are_unique() {
    let p = NanetParams::init(AutoencoderConfig::default(), ClassifierConfig::default(), 0).unwrap();
    let set: std::collections::HashSet<_> = p.names().iter().collect();
    assert_eq!(set.len(), p.names().len());
}

#[test]
fn init_is_seeded_with_zero_hidden_biases() {
    let a = NanetParams::init(AutoencoderConfig::desk(), ClassifierConfig::default(), 4).unwrap();
    let b = NanetParams::init(AutoencoderConfig::desk(), ClassifierConfig::default(), 4).unwrap();
    let c = NanetParams::init(AutoencoderConfig::desk(), ClassifierConfig::default(), 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.get("cls.fc1.weight"), c.get("cls.fc1.weight"));
    for (name, t) in a.names().iter().zip(a.tensors()) {
        if name == "ae.head.bias" {
            let out = 1.0 / (1.0 + (-t.data()[0] as f64).exp());
            assert!((out - INPUT_MEAN).abs() < 1e-6, "{out}");
        } else if name.ends_with(".bias") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn init_std_matches_kaiming_uniform() {
    let ae = AutoencoderConfig::default();
    let cls = ClassifierConfig::default();
    let p = NanetParams::init(ae.clone(), cls.clone(), 1).unwrap();
    let mut checked = 0;
    for spec in param_specs(&ae, &cls).iter().filter(|s| !s.is_bias && s.fan_in() >= 1000) {
        let data = p.get(&spec.name).unwrap().data();
        let n = data.len() as f64;
        let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let std = (data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        let expected = (2.0 / spec.fan_in() as f64).sqrt() / 3f64.sqrt();
        assert!((std - expected).abs() / expected < 0.15, "{}: {std} vs {expected}", spec.name);
        checked += 1;
    }
    assert!(checked >= 8, "only {checked} layers checked");
}

#[test]
fn autoencoder_preserves_shape() {
    let p = NanetParams::init(AutoencoderConfig::default(), ClassifierConfig::default(), 2).unwrap();
    for h in [32, 64, 96, 224] {
        for w in [32, 64, 96, 224] {
            let out = p.denoise(&random_batch(1, h, w, 0)).unwrap();
            assert_eq!(out.shape(), &[1, 1, h, w]);
            assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
    let out = p.denoise(&random_batch(3, 64, 32, 1)).unwrap();
    assert_eq!(out.shape(), &[3, 1, 64, 32]);
}

#[test]
fn bottleneck_is_eight_by_eight_for_64() {
    let p = NanetParams::init(AutoencoderConfig::default(), ClassifierConfig::default(), 2).unwrap();
    let mut g = Graph::new();
    let bound = p.bind(&mut g, |_| false);
    let x = g.constant(random_batch(2, 64, 64, 3));
    let nodes = autoencoder_nodes(&mut g, &bound, &p.autoencoder, x).unwrap();
    assert_eq!(g.value(nodes.bottleneck).shape(), &[2, 256, 8, 8]);
}

#[test]
fn indivisible_input_is_shape_mismatch() {
    let p = NanetParams::init(AutoencoderConfig::desk(), ClassifierConfig::default(), 2).unwrap();
    let err = p.denoise(&random_batch(1, 36, 36, 0)).unwrap_err();
    assert!(matches!(err, Error::Tensor(TensorError::ShapeMismatch(_))));
    assert_eq!(err.kind(), "ShapeMismatch");
}

#[test]
fn classifier_emits_26_logits() {
    let p = NanetParams::init(AutoencoderConfig::desk(), ClassifierConfig::default(), 2).unwrap();
    for (n, size) in [(1, 64), (2, 224), (1, 32)] {
        let batch = random_batch(n, size, size, 5);
        let logits = p.logits(&batch, Mode::ClassifierOnly).unwrap();
        assert_eq!(logits.shape(), &[n, 26]);
        assert_eq!(logits, p.logits(&batch, Mode::ClassifierOnly).unwrap());
    }
}

#[test]
fn classifier_rejects_wrong_channels() {
    let p = NanetParams::init(AutoencoderConfig::desk(), ClassifierConfig::default(), 2).unwrap();
    let mut g = Graph::new();
    let bound = p.bind(&mut g, |_| false);
    let x = g.constant(Tensor::zeros(vec![1, 3, 64, 64]));
    let r = classifier_graph(&mut g, &bound, &p.classifier, x, false, &mut rng::stream(0, &[]));
    assert!(matches!(r, Err(Error::Tensor(TensorError::ShapeMismatch(_)))));
}

#[test]
fn dropout_only_acts_in_training() {
    let p = NanetParams::init(common::toy_autoencoder(), common::toy_classifier(), 3).unwrap();
    let batch = random_batch(2, 32, 32, 6);
    let run = |training: bool, seed: u64| {
        let mut g = Graph::new();
        let bound = p.bind(&mut g, |_| false);
        let x = g.constant(batch.clone());
        let nodes = nanet_graph(&mut g, &bound, &p, x, Mode::Nanet, training, &mut rng::stream(seed, &[])).unwrap();
        g.value(nodes.logits).clone()
    };
    assert_eq!(run(false, 1), run(false, 2));
    assert_eq!(run(true, 1), run(true, 1));
    assert_ne!(run(true, 1), run(true, 2));
}

#[test]
fn joint_loss_is_exact_sum() {
    let p = NanetParams::init(common::toy_autoencoder(), common::toy_classifier(), 3).unwrap();
    let mut g = Graph::new();
    let bound = p.bind(&mut g, |_| true);
    let x = g.constant(random_batch(4, 32, 32, 8));
    let nodes = nanet_graph(&mut g, &bound, &p, x, Mode::Nanet, true, &mut rng::stream(0, &[])).unwrap();
    assert_eq!(g.value(nodes.reconstruction.unwrap()).shape(), &[4, 1, 32, 32]);
    assert_eq!(g.value(nodes.logits).shape(), &[4, 26]);
    let (total, mse, ce) = joint_loss(&mut g, &nodes, x, &[0, 5, 25, 7]).unwrap();
    let (t, m, c) = (g.value(total).item(), g.value(mse.unwrap()).item(), g.value(ce).item());
    assert_eq!(t.to_bits(), (m + c).to_bits());
}

#[test]
fn classifier_only_mode_skips_autoencoder() {
    let p = NanetParams::init(common::toy_autoencoder(), common::toy_classifier(), 3).unwrap();
    let batch = random_batch(2, 32, 32, 9);
    let mut g = Graph::new();
    let bound = p.bind(&mut g, |n| n.starts_with("cls."));
    let x = g.constant(batch.clone());
    let nodes = nanet_graph(&mut g, &bound, &p, x, Mode::ClassifierOnly, false, &mut rng::stream(0, &[])).unwrap();
    assert!(nodes.reconstruction.is_none());
    let (total, mse, ce) = joint_loss(&mut g, &nodes, x, &[1, 2]).unwrap();
    assert!(mse.is_none());
    assert_eq!(g.value(total).item().to_bits(), g.value(ce).item().to_bits());
    assert_eq!(g.value(nodes.logits), &p.logits(&batch, Mode::ClassifierOnly).unwrap());
}

/// Central differences of the joint loss with respect to single scalars.
#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let mut p = NanetParams::init(common::toy_autoencoder(), common::toy_classifier(), 12).unwrap();
    let batch = random_batch(2, 32, 32, 13);
    let labels = [3usize, 17];
    let loss_and_grads = |p: &NanetParams, want_grads: bool| -> (f32, Vec<Vec<f32>>) {
        let mut g = Graph::new();
        let bound = p.bind(&mut g, |_| true);
        let x = g.constant(batch.clone());
        let nodes = nanet_graph(&mut g, &bound, p, x, Mode::Nanet, true, &mut rng::stream(99, &[])).unwrap();
        let (total, _, _) = joint_loss(&mut g, &nodes, x, &labels).unwrap();
        let loss = g.value(total).item();
        if !want_grads {
            return (loss, Vec::new());
        }
        g.backward(total).unwrap();
        (loss, bound.vars().iter().map(|&v| g.grad_or_zeros(v)).collect())
    };
    let (_, grads) = loss_and_grads(&p, true);

    let mut pick = rng::stream(14, &[]);
    let weights: Vec<usize> = (0..p.names().len()).filter(|&i| p.names()[i].ends_with(".weight")).collect();
    let h = 5e-3f32;
    let (mut diff2, mut norm2) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let t = weights[pick.gen_range(0..weights.len())];
        let j = pick.gen_range(0..p.tensors()[t].numel());
        let orig = p.tensors()[t].data()[j];
        p.tensors_mut()[t].data_mut()[j] = orig + h;
        let (up, _) = loss_and_grads(&p, false);
        p.tensors_mut()[t].data_mut()[j] = orig - h;
        let (down, _) = loss_and_grads(&p, false);
        p.tensors_mut()[t].data_mut()[j] = orig;
        let numeric = (up as f64 - down as f64) / (2.0 * h as f64);
        let analytic = grads[t][j] as f64;
        diff2 += (numeric - analytic).powi(2);
        norm2 += numeric.powi(2).max(analytic.powi(2));
    }
    let rel = diff2.sqrt() / norm2.sqrt().max(1e-12);
    assert!(norm2 > 0.0);
    assert!(rel <= 1e-2, "relative error {rel}");
}
