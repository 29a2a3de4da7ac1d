//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nanet_core::checkpoint::Checkpoint;
use nanet_core::dataset::{instance_stream, Condition, DatasetManifest, Split};
use nanet_core::eval::{evaluate, EvalReport, ReportFile};
use nanet_core::gradcam::grad_cam;
use nanet_core::image::ImageBuffer;
use nanet_core::metrics::{compute_metrics, round2, ConfusionMatrix};
use nanet_core::model::{
    autoencoder_graph, classifier_graph, joint_loss, nanet_graph, param_specs, AutoencoderConfig, ClassifierConfig,
    LayerKind, Mode, NanetParams,
};
use nanet_core::morse::{alphabet, decode_sequence, encode_letter, NUM_LETTERS};
use nanet_core::rng;
use nanet_tensor::gradcheck::{check_primitive, PRIMITIVES};
use nanet_tensor::{Graph, Tensor};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["nanet"];
    argv.extend_from_slice(args);
    let code = nanet_cli::run(argv, &mut out, &mut err);
    if code == 0 {
        Ok(String::from_utf8_lossy(&out).trim().to_string())
    } else {
        Err(format!("`nanet {}` exited {code}: {}", args.join(" "), String::from_utf8_lossy(&err).trim()))
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst32 = 0.0f64;
    let mut worst64 = 0.0f64;
    for &op in PRIMITIVES {
        let mut shapes = BTreeSet::new();
        let mut seed = 0;
        while shapes.len() < 5 {
            ensure(seed < 200, format!("{op}: fewer than 5 distinct shapes in 200 seeds"))?;
            let c64 = check_primitive::<f64>(op, seed, 1e-3).map_err(|e| e.to_string())?;
            let c32 = check_primitive::<f32>(op, seed, 1e-3).map_err(|e| e.to_string())?;
            ensure(c64.rel_err <= 1e-6, format!("{op} f64 {:?}: rel err {:e}", c64.shapes, c64.rel_err))?;
            ensure(c32.rel_err <= 1e-3, format!("{op} f32 {:?}: rel err {:e}", c32.shapes, c32.rel_err))?;
            worst64 = worst64.max(c64.rel_err);
            worst32 = worst32.max(c32.rel_err);
            shapes.insert(c64.shapes);
            seed += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} primitives x 5 shapes, max rel err f32 {worst32:.2e}, f64 {worst64:.2e}, {:.1}s",
        PRIMITIVES.len(),
        elapsed.as_secs_f64()
    ))
}

fn loss_identities() -> Outcome {
    let mut r = rng::stream(11, &[]);
    let x = Tensor::new(vec![2, 1, 8, 8], (0..128).map(|_| r.gen::<f32>()).collect()).unwrap();
    let mut g = Graph::new();
    let a = g.constant(x.clone());
    let b = g.constant(x);
    let m = g.mse(a, b).map_err(|e| e.to_string())?;
    let mse_self = g.value(m).item();
    ensure(mse_self == 0.0, format!("mse(x, x) = {mse_self}"))?;

    let logits = g.constant(Tensor::zeros(vec![4, NUM_LETTERS]));
    let ce = g.cross_entropy(logits, &[0, 7, 13, 25]).map_err(|e| e.to_string())?;
    let ce_uniform = g.value(ce).item() as f64;
    let ln26 = (NUM_LETTERS as f64).ln();
    ensure((ce_uniform - ln26).abs() <= 1e-5, format!("uniform ce {ce_uniform} vs ln 26 {ln26}"))?;

    let ae = AutoencoderConfig { stage_channels: vec![4, 8], bottleneck_channels: 8, ..AutoencoderConfig::desk() };
    let cls = ClassifierConfig { channels: [8; 6], fc_hidden: [16, 16], ..ClassifierConfig::default() };
    let params = NanetParams::init(ae, cls, 3).unwrap();
    let batch = Tensor::new(vec![2, 1, 32, 32], (0..2048).map(|_| r.gen::<f32>()).collect()).unwrap();
    let mut g = Graph::new();
    let bound = params.bind(&mut g, |_| true);
    let x = g.constant(batch);
    let nodes = nanet_graph(&mut g, &bound, &params, x, Mode::Nanet, true, &mut rng::stream(5, &[]))
        .map_err(|e| e.to_string())?;
    let (total, mse, ce) = joint_loss(&mut g, &nodes, x, &[3, 19]).map_err(|e| e.to_string())?;
    let (t, m, c) = (g.value(total).item(), g.value(mse.unwrap()).item(), g.value(ce).item());
    ensure((m + c).to_bits() == t.to_bits(), format!("total {t} != mse {m} + ce {c}"))?;
    Ok(format!("mse(x,x) = 0, uniform ce = {ce_uniform:.7}, total {t} = mse + ce bit-exact"))
}

fn synth_dataset(dir: &Path) -> Result<(String, DatasetManifest), String> {
    let start = Instant::now();
    cli(&["synth", "--out", path_str(dir), "--seed", "7"])?;
    let elapsed = start.elapsed();
    let m = DatasetManifest::load(dir).map_err(|e| e.to_string())?;
    let clean = m.items.iter().filter(|i| i.condition == Condition::Clean).count();
    ensure(clean == 1040, format!("{clean} clean images"))?;
    for c in Condition::ALL {
        let n = m.items(Split::Test, c).count();
        ensure(n == 260, format!("{n} test images for {c}"))?;
    }
    let mut partners = BTreeSet::new();
    for c in Condition::NOISY {
        for item in m.items(Split::Test, c) {
            let clean = m.clean_of(item).ok_or(format!("{} has no clean partner", item.path))?;
            ensure(clean.split == Split::Test, format!("{} pairs with a training image", item.path))?;
            ensure(partners.insert((c, clean.path.clone())), format!("{} paired twice for {c}", clean.path))?;
        }
    }
    ensure(partners.len() == 780, format!("{} noisy/clean pairs", partners.len()))?;

    let p = m.noise_specs.saltpepper.p as f64;
    let (mut flipped, mut total) = (0u64, 0u64);
    let (mut sum, mut sum_sq, mut count) = (0.0f64, 0.0f64, 0u64);
    for item in m.items(Split::Test, Condition::SaltPepper) {
        let clean = m.load_image(m.clean_of(item).unwrap()).map_err(|e| e.to_string())?;
        let noisy = m.load_image(item).map_err(|e| e.to_string())?;
        ensure(clean.values().iter().all(|&v| v == 0.0 || v == 1.0), "clean glyph image is not binary")?;
        flipped += clean.values().iter().zip(noisy.values()).filter(|(a, b)| a != b).count() as u64;
        total += clean.values().len() as u64;
    }
    let q = p / 2.0;
    let expected = total as f64 * q;
    let sigma = (total as f64 * q * (1.0 - q)).sqrt();
    let z = (flipped as f64 - expected) / sigma;
    ensure(z.abs() <= 4.0, format!("salt-and-pepper visible flips {flipped}, expected {expected:.0}, z {z:.2}"))?;

    for (k, item) in m.items(Split::Test, Condition::Gaussian).enumerate() {
        let clean = m.load_image(m.clean_of(item).unwrap()).map_err(|e| e.to_string())?;
        let mut stream = instance_stream(m.seed, item.letter, item.instance, Condition::Gaussian).unwrap();
        let deltas = m.noise_specs.gaussian.additive_deltas(clean.values().len(), &mut stream).unwrap().unwrap();
        if k % 10 == 0 {
            let rebuilt: Vec<f32> =
                clean.values().iter().zip(&deltas).map(|(&c, &d)| (c + d).clamp(0.0, 1.0)).collect();
            let rebuilt = ImageBuffer::new(clean.height(), clean.width(), rebuilt).unwrap();
            let stored = m.load_image(item).map_err(|e| e.to_string())?;
            ensure(rebuilt.to_bytes() == stored.to_bytes(), format!("{} does not match its deltas", item.path))?;
        }
        for d in deltas {
            sum += d as f64;
            sum_sq += (d as f64).powi(2);
            count += 1;
        }
    }
    let mean = sum / count as f64;
    let std = ((sum_sq - count as f64 * mean * mean) / (count as f64 - 1.0)).sqrt();
    ensure((0.195..=0.205).contains(&std), format!("gaussian delta std {std}"))?;
    ensure(elapsed < Duration::from_secs(120), format!("synth took {elapsed:?}"))?;
    Ok((
        format!(
            "1040 clean, 260 per test condition, 780 pairs, s&p z {z:.2}, gaussian std {std:.4}, synth {:.1}s",
            elapsed.as_secs_f64()
        ),
        m,
    ))
}

fn codec() -> Outcome {
    let mut codes = std::collections::HashSet::new();
    for letter in 'A'..='Z' {
        let seq = encode_letter(letter).map_err(|e| e.to_string())?;
        let back = decode_sequence(seq.symbols()).map_err(|e| e.to_string())?;
        ensure(back == letter, format!("{letter} decodes to {back}"))?;
        codes.insert(seq.symbols().to_vec());
    }
    ensure(codes.len() == 26, format!("{} distinct codes", codes.len()))?;
    ensure(alphabet().count() == 26, "alphabet size")?;
    Ok("26 letters round-trip, 26 distinct codes".into())
}

fn shapes() -> Outcome {
    let params = NanetParams::init(AutoencoderConfig::desk(), ClassifierConfig::default(), 1).unwrap();
    let mut r = rng::stream(2, &[]);
    for size in [32, 64, 96, 224] {
        let batch = Tensor::new(vec![1, 1, size, size], (0..size * size).map(|_| r.gen::<f32>()).collect()).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, |_| false);
        let x = g.constant(batch);
        let y = autoencoder_graph(&mut g, &bound, &params.autoencoder, x).map_err(|e| e.to_string())?;
        ensure(g.value(y).shape() == [1, 1, size, size], format!("autoencoder {size}: {:?}", g.value(y).shape()))?;
    }
    for size in [64, 224] {
        let batch =
            Tensor::new(vec![2, 1, size, size], (0..2 * size * size).map(|_| r.gen::<f32>()).collect()).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, |_| false);
        let x = g.constant(batch);
        let nodes =
            classifier_graph(&mut g, &bound, &params.classifier, x, false, &mut r).map_err(|e| e.to_string())?;
        ensure(
            g.value(nodes.logits).shape() == [2, 26],
            format!("classifier {size}: {:?}", g.value(nodes.logits).shape()),
        )?;
    }
    let specs = param_specs(&AutoencoderConfig::default(), &ClassifierConfig::default());
    let layers: Vec<_> = specs.iter().filter(|s| s.name.starts_with("cls.") && !s.is_bias).collect();
    ensure(layers.len() == 9, format!("{} classifier weight layers", layers.len()))?;
    let mut kernels: Vec<usize> = layers.iter().filter(|s| s.kind == LayerKind::Conv).map(|s| s.shape[2]).collect();
    kernels.sort_unstable();
    ensure(kernels == [3, 3, 3, 3, 5, 11], format!("conv kernels {kernels:?}"))?;
    Ok("autoencoder keeps 32/64/96/224, 26 logits at 64 and 224, 9 layers with kernels {11, 5, 3x4}".into())
}

struct DeskRun {
    nanet_ckpt: PathBuf,
    nanet_report: ReportFile,
    baseline_report: ReportFile,
    nanet_eval: EvalReport,
    train_secs: f64,
}

fn train_and_eval(data: &Path, dir: &Path, mode: &str) -> Result<(PathBuf, ReportFile, f64), String> {
    let ckpt = dir.join(format!("{mode}.ckpt"));
    let report = dir.join(format!("{mode}.json"));
    let start = Instant::now();
    cli(&[
        "train",
        "--data",
        path_str(data),
        "--out",
        path_str(&ckpt),
        "--preset",
        "desk",
        "--mode",
        mode,
        "--seed",
        "0",
    ])?;
    let secs = start.elapsed().as_secs_f64();
    cli(&["eval", "--ckpt", path_str(&ckpt), "--data", path_str(data), "--report", path_str(&report)])?;
    Ok((ckpt, ReportFile::load(&report).map_err(|e| e.to_string())?, secs))
}

fn desk_run(data: &Path, dir: &Path, manifest: &DatasetManifest) -> Result<DeskRun, String> {
    let train = manifest.items(Split::Train, Condition::Clean).count();
    ensure(train == 780, format!("{train} training images"))?;
    let (nanet_ckpt, nanet_report, train_secs) = train_and_eval(data, dir, "nanet")?;
    let (_, baseline_report, _) = train_and_eval(data, dir, "classifier-only")?;
    let ckpt = Checkpoint::load(&nanet_ckpt).map_err(|e| e.to_string())?;
    let nanet_eval = evaluate(&ckpt, manifest, &Condition::ALL).map_err(|e| e.to_string())?;
    Ok(DeskRun { nanet_ckpt, nanet_report, baseline_report, nanet_eval, train_secs })
}

fn accuracy(r: &ReportFile, c: Condition) -> f64 {
    r.entries().into_iter().find(|(k, _)| *k == c).map_or(f64::NAN, |(_, e)| e.accuracy)
}

fn desk_accuracy(run: &DeskRun) -> Outcome {
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    let clean = accuracy(&run.nanet_report, Condition::Clean);
    parts.push(format!("clean {clean:.2}%"));
    if clean.is_nan() || clean < 90.0 {
        failures.push(format!("clean accuracy {clean:.2}% < 90%"));
    }
    let mut wins = 0;
    for c in Condition::NOISY {
        let (n, b) = (accuracy(&run.nanet_report, c), accuracy(&run.baseline_report, c));
        parts.push(format!("{c} {n:.2}% (classifier-only {b:.2}%)"));
        if n.is_nan() || n < 65.0 {
            failures.push(format!("{c} accuracy {n:.2}% < 65%"));
        }
        if n >= b {
            wins += 1;
        }
    }
    if wins < 2 {
        failures.push(format!("NANet >= classifier-only on {wins}/3 noisy conditions"));
    }
    if run.train_secs > 45.0 * 60.0 * 1.1 {
        failures.push(format!("NANet training took {:.0}s", run.train_secs));
    }
    let summary = format!("{}, {wins}/3 wins, NANet training {:.0}s", parts.join(", "), run.train_secs);
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", failures.join("; ")))
    }
}

fn denoising(run: &DeskRun) -> Outcome {
    let mut parts = Vec::new();
    for c in Condition::NOISY {
        let r = run.nanet_eval.get(c).ok_or(format!("no {c} report"))?;
        let (d, n) = (r.psnr_denoised.ok_or("no denoised psnr")?, r.psnr_noisy.ok_or("no noisy psnr")?);
        ensure(d > n, format!("{c}: denoised {d:.2} dB <= noisy {n:.2} dB"))?;
        parts.push(format!("{c} {d:.2} > {n:.2} dB"));
    }
    Ok(parts.join(", "))
}

fn determinism(data: &Path, dir: &Path, manifest: &DatasetManifest, run: &DeskRun) -> Outcome {
    let mut reports = Vec::new();
    for k in 0..2 {
        let ckpt = dir.join(format!("short{k}.ckpt"));
        let report = dir.join(format!("short{k}.json"));
        cli(&[
            "train",
            "--data",
            path_str(data),
            "--out",
            path_str(&ckpt),
            "--preset",
            "desk",
            "--epochs",
            "1",
            "--seed",
            "3",
        ])?;
        cli(&["eval", "--ckpt", path_str(&ckpt), "--data", path_str(data), "--report", path_str(&report)])?;
        reports.push((std::fs::read(&ckpt).unwrap(), std::fs::read(&report).unwrap()));
    }
    ensure(reports[0].0 == reports[1].0, "same-seed checkpoints differ")?;
    ensure(reports[0].1 == reports[1].1, "same-seed report JSON differs")?;

    let original = Checkpoint::load(&run.nanet_ckpt).map_err(|e| e.to_string())?;
    let saved = dir.join("roundtrip.ckpt");
    original.save(&saved).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&saved).map_err(|e| e.to_string())?;
    ensure(
        loaded.params == original.params && loaded.config == original.config,
        "checkpoint round trip changed contents",
    )?;
    let bits =
        |p: &NanetParams| p.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    ensure(bits(&loaded.params) == bits(&original.params), "checkpoint round trip changed bits")?;
    ensure(std::fs::read(&saved).unwrap() == std::fs::read(&run.nanet_ckpt).unwrap(), "re-saved file differs")?;
    let reloaded = evaluate(&loaded, manifest, &Condition::ALL).map_err(|e| e.to_string())?;
    ensure(reloaded == run.nanet_eval, "evaluate(load(save(p))) != evaluate(p)")?;
    ensure(reloaded.to_json() == run.nanet_eval.to_json(), "report JSON differs after reload")?;
    Ok("same-seed training gives identical checkpoint and report bytes, checkpoint round trip bit-exact, evaluation unchanged".into())
}

fn metrics() -> Outcome {
    let mut r = rng::stream(99, &[]);
    for trial in 0..100 {
        let k = r.gen_range(2..=NUM_LETTERS);
        let mut pairs = Vec::new();
        for _ in 0..r.gen_range(1..400) {
            let t = r.gen_range(0..k);
            let p = if r.gen_bool(0.6) { t } else { r.gen_range(0..k) };
            pairs.push((t, p));
        }
        let mut cm = ConfusionMatrix::new(k);
        for &(t, p) in &pairs {
            cm.record(t, p);
        }
        let m = compute_metrics(&cm).map_err(|e| e.to_string())?;
        let n = pairs.len() as f64;
        let acc = pairs.iter().filter(|(t, p)| t == p).count() as f64 / n * 100.0;
        let (mut prec, mut rec, mut f1) = (0.0, 0.0, 0.0);
        for c in 0..k {
            let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
            let predicted = pairs.iter().filter(|&&(_, p)| p == c).count() as f64;
            let actual = pairs.iter().filter(|&&(t, _)| t == c).count() as f64;
            let pc = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let rc = if actual > 0.0 { tp / actual } else { 0.0 };
            prec += pc;
            rec += rc;
            f1 += if pc + rc > 0.0 { 2.0 * pc * rc / (pc + rc) } else { 0.0 };
        }
        let brute = [acc, prec / k as f64 * 100.0, rec / k as f64 * 100.0, f1 / k as f64 * 100.0];
        let fast = [m.accuracy, m.precision, m.recall, m.f1];
        for (b, f) in brute.iter().zip(fast) {
            ensure((b - f).abs() <= 1e-9, format!("matrix {trial}: brute force {brute:?} vs {fast:?}"))?;
        }
    }
    let mut cm = ConfusionMatrix::new(NUM_LETTERS);
    for i in 0..260 {
        let t = i % NUM_LETTERS;
        cm.record(t, if i < 252 { t } else { (t + 1) % NUM_LETTERS });
    }
    let acc = compute_metrics(&cm).map_err(|e| e.to_string())?.accuracy;
    let text = serde_json::to_string(&round2(acc)).unwrap();
    ensure(text == "96.92", format!("252/260 formats as {text}"))?;
    Ok("100 random matrices match brute force, 252/260 -> 96.92".into())
}

fn grad_cam_contract(run: &DeskRun, manifest: &DatasetManifest) -> Outcome {
    let ckpt = Checkpoint::load(&run.nanet_ckpt).map_err(|e| e.to_string())?;
    let item = manifest.items(Split::Test, Condition::Gaussian).next().ok_or("no test image")?;
    let image = manifest.load_image(item).map_err(|e| e.to_string())?;
    let mut peaks = BTreeMap::new();
    for target in [None, Some(item.class())] {
        let cam = grad_cam(&ckpt, &image, target).map_err(|e| e.to_string())?;
        ensure((cam.height(), cam.width()) == (image.height(), image.width()), "heatmap size differs from input")?;
        ensure(cam.values().iter().all(|v| (0.0..=1.0).contains(v)), "heatmap outside [0, 1]")?;
        peaks.insert(format!("{target:?}"), cam.values().iter().cloned().fold(0.0f32, f32::max));
    }
    let mut flat = ckpt.clone();
    for name in ["cls.fc3.weight", "cls.fc3.bias"] {
        flat.params.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let cam = grad_cam(&flat, &image, Some(0)).map_err(|e| e.to_string())?;
    ensure(cam.values().iter().all(|&v| v == 0.0), "zero gradient gives a non-zero map")?;
    Ok(format!("{}x{} map in [0, 1], zero gradient gives a zero map", image.height(), image.width()))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let data = work.path().join("data");
    let runs = work.path().join("runs");
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |n: u32, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("criterion {n:>2}: PASS  {detail}"),
            Err(detail) => println!("criterion {n:>2}: FAIL  {detail}"),
        }
        results.push((n, outcome));
    };

    report(1, gradients());
    report(2, loss_identities());
    let manifest = match synth_dataset(&data) {
        Ok((detail, m)) => {
            report(3, Ok(detail));
            Some(m)
        }
        Err(e) => {
            report(3, Err(e));
            DatasetManifest::load(&data).ok()
        }
    };
    report(4, codec());
    report(5, shapes());
    let run = match &manifest {
        Some(m) => desk_run(&data, &runs, m),
        None => Err("no dataset".to_string()),
    };
    match (&run, &manifest) {
        (Ok(run), Some(m)) => {
            report(6, desk_accuracy(run));
            report(7, denoising(run));
            report(8, determinism(&data, &runs, m, run));
        }
        _ => {
            let reason = run.as_ref().err().cloned().unwrap_or_default();
            for n in [6, 7, 8] {
                report(n, Err(format!("desk run failed: {reason}")));
            }
        }
    }
    report(9, metrics());
    match (&run, &manifest) {
        (Ok(run), Some(m)) => report(10, grad_cam_contract(run, m)),
        _ => report(10, Err("desk run failed".into())),
    }

    let failed: Vec<u32> = results.iter().filter(|(_, o)| o.is_err()).map(|(n, _)| *n).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
