//! Acceptance gate: each test checks one numbered criterion at its
//! stated tolerance and prints a single PASS/FAIL line.

use std::collections::BTreeMap;

use coldstream_cli::config::RunFile;
use coldstream_cli::data::{
    DataFormat, DatasetManifest, Normalization, SyntheticKind, SyntheticSpec,
};
use coldstream_cli::execute_run;
use coldstream_core::augment::{cutmix, mixup, AugFeatures, ImgF};
use coldstream_core::linalg::Matrix;
use coldstream_core::metrics::{self, OmegaInputs, Prediction};
use coldstream_core::net::{
    self, backward, forward, loss_multiclass, LossTarget, Mode, NetworkParams,
};
use coldstream_core::ntrf::{
    hidden_norm_check, iterate_drift, median, perturb_weights, random_unit, taylor_residual,
};
use coldstream_core::replay::{
    dequantize_pixel, quantize_pixel, Codec, EvictionPolicy, Example, Features, ReplayBuffer,
};
use coldstream_core::stream::{
    evaluate_task, initialize, order_stream, step, EtaSchedule, MultitaskReplay, Ordering,
    StreamConfig, TaskData,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(criterion: u8, name: &str, pass: bool) {
    println!(
        "criterion {criterion:02} [{name}]: {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion:02} [{name}] failed");
}

fn blob_spec(classes: usize, per_class: usize, noise: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        kind: SyntheticKind::SphereBlobs,
        d: 16,
        classes,
        per_class,
        test_per_class: 50,
        lambda_sep: 1e-4,
        noise,
        seed,
        group_size: None,
    }
}

fn base_config(seed: u64) -> StreamConfig {
    StreamConfig {
        mode: Mode::Practical,
        m: 64,
        depth: 3,
        eta: EtaSchedule::Constant { eta: 0.05 },
        replay_samples: 16,
        capacity: 200,
        ordering: Ordering::ClassIid,
        seed,
        ..StreamConfig::default()
    }
}

/// Run a class-incremental stream and return (seen-class accuracy,
/// accuracy on the first streamed class).
fn forgetting_run(config: &StreamConfig, task: &TaskData) -> (f64, f64) {
    let mut state = initialize(config, std::slice::from_ref(task)).unwrap();
    let ordered = order_stream(&task.train, config.ordering, config.seed).unwrap();
    let first_class = ordered[0].label;
    for e in &ordered {
        step(&mut state, config, e).unwrap();
    }
    let seen = &state.seen_classes[&task.task_id];
    let (preds, rows, labels) = evaluate_task(&state.model, &task.test, seen).unwrap();
    let acc = metrics::topk_accuracy(&rows, &labels, 1).unwrap();
    let first: Vec<&Prediction> = preds.iter().filter(|p| p.label == first_class).collect();
    let first_acc = first.iter().filter(|p| p.predicted == p.label).count() as f64
        / first.len().max(1) as f64;
    (acc, first_acc)
}

fn synthetic_task(spec: &SyntheticSpec) -> TaskData {
    let (train, test) = coldstream_cli::data::gen_synthetic(spec).unwrap();
    TaskData {
        task_id: 0,
        num_classes: spec.classes,
        train,
        test,
    }
}

#[test]
fn acceptance_01_forgetting_delta() {
    let mut replay_acc = Vec::new();
    let mut replay_first = Vec::new();
    let mut ablation_first = Vec::new();
    for seed in 0..5u64 {
        let task = synthetic_task(&blob_spec(4, 500, 0.1, seed));
        let mut config = base_config(seed);
        let (acc, first) = forgetting_run(&config, &task);
        replay_acc.push(acc);
        replay_first.push(first);
        config.replay_samples = 0;
        let (_, first0) = forgetting_run(&config, &task);
        ablation_first.push(first0);
    }
    let acc = median(&mut replay_acc);
    let first = median(&mut replay_first);
    let first0 = median(&mut ablation_first);
    println!("  seen-class acc {acc:.3}, first-class {first:.3}, B=0 first-class {first0:.3}");
    check(
        1,
        "forgetting delta",
        acc >= 0.90 && first >= 0.85 && first0 <= 0.50,
    );
}

#[test]
fn acceptance_02_augmentation_benefit() {
    let mut with_aug = Vec::new();
    let mut without = Vec::new();
    for seed in 0..5u64 {
        let spec = SyntheticSpec {
            kind: SyntheticKind::BlobImages,
            d: 64,
            classes: 4,
            per_class: 30,
            test_per_class: 50,
            lambda_sep: 0.0,
            noise: 2.0,
            seed,
            group_size: None,
        };
        let task = synthetic_task(&spec);
        let mut config = base_config(seed);
        config.policy.crop.enabled = true;
        config.policy.crop.pad = 1;
        config.policy.hflip.enabled = true;
        config.policy.mix.enabled = true;
        config.policy.mix.p_choose_mixup = 1.0; // mixup only
        let (acc_aug, _) = forgetting_run(&config, &task);
        with_aug.push(acc_aug);
        let plain = base_config(seed);
        let (acc_plain, _) = forgetting_run(&plain, &task);
        without.push(acc_plain);
    }
    let aug = median(&mut with_aug);
    let plain = median(&mut without);
    println!("  augmented acc {aug:.3}, plain acc {plain:.3}");
    check(2, "augmentation benefit direction", aug >= plain);
}

#[test]
fn acceptance_03_omega_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;
    for _ in 0..1000 {
        let t = rng.gen_range(1..20);
        let streaming: Vec<f64> = (0..t).map(|_| rng.gen::<f64>()).collect();
        let offline: Vec<f64> = (0..t).map(|_| rng.gen::<f64>() + 0.1).collect();
        let got = metrics::omega_all(&OmegaInputs {
            streaming: streaming.clone(),
            offline: offline.clone(),
        })
        .unwrap();
        let brute: f64 = streaming
            .iter()
            .zip(offline.iter())
            .map(|(a, o)| a / o)
            .sum::<f64>()
            / t as f64;
        if (got - brute).abs() > 1e-12 {
            ok = false;
        }
    }
    let identity = metrics::omega_all(&OmegaInputs {
        streaming: vec![0.4, 0.7, 0.9],
        offline: vec![0.4, 0.7, 0.9],
    })
    .unwrap();
    check(3, "omega_all oracle", ok && identity == 1.0);
}

#[test]
fn acceptance_04_ece_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n_bins = 15;
    let mut ok = true;
    for _ in 0..1000 {
        let n = rng.gen_range(1..50);
        let preds: Vec<Prediction> = (0..n)
            .map(|_| Prediction {
                predicted: rng.gen_range(0..4),
                confidence: rng.gen(),
                label: rng.gen_range(0..4),
            })
            .collect();
        let got = metrics::ece(&preds, n_bins).unwrap();
        // naive per-sample accumulation
        let mut conf_sum = vec![0.0; n_bins];
        let mut acc_sum = vec![0.0; n_bins];
        let mut count = vec![0usize; n_bins];
        for p in &preds {
            let bin = ((p.confidence * n_bins as f64) as usize).min(n_bins - 1);
            conf_sum[bin] += p.confidence;
            acc_sum[bin] += if p.predicted == p.label { 1.0 } else { 0.0 };
            count[bin] += 1;
        }
        let brute: f64 = (0..n_bins)
            .filter(|&b| count[b] > 0)
            .map(|b| {
                let k = count[b] as f64;
                k / n as f64 * ((acc_sum[b] / k) - (conf_sum[b] / k)).abs()
            })
            .sum();
        if (got - brute).abs() > 1e-12 {
            ok = false;
        }
    }
    let perfect: Vec<Prediction> = (0..10)
        .map(|i| Prediction { predicted: i, confidence: 1.0, label: i })
        .collect();
    let anti: Vec<Prediction> = (0..10)
        .map(|i| Prediction { predicted: i, confidence: 1.0, label: i + 1 })
        .collect();
    let zero = metrics::ece(&perfect, n_bins).unwrap();
    let one = metrics::ece(&anti, n_bins).unwrap();
    check(4, "ece oracle", ok && zero == 0.0 && one == 1.0);
}

fn loss_at(params: &NetworkParams, x: &[f64], target: &LossTarget) -> f64 {
    let trace = forward(params.view(), x).unwrap();
    loss_multiclass(&trace.output, target).unwrap()
}

#[test]
fn acceptance_05_gradient_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for trial in 0..20u64 {
        let d = rng.gen_range(2..=5);
        let m = rng.gen_range(4..=8);
        let depth = rng.gen_range(3..=4);
        let k = rng.gen_range(2..=4);
        let mut params = net::init_params(d, m, depth, k, trial, Mode::Practical).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
        let target = LossTarget::Hard(rng.gen_range(0..k));
        let trace = forward(params.view(), &x).unwrap();
        let grads = backward(&params, &trace, &target).unwrap();

        let h = 1e-4;
        let mut check_entry = |layer: usize, idx: usize| {
            let analytic = {
                let g = match layer {
                    0 => &grads.w1,
                    l if l == depth - 1 => &grads.w_out,
                    l => &grads.w_mid[l - 1],
                };
                g.data()[idx]
            };
            fn mat(p: &mut NetworkParams, layer: usize) -> &mut Matrix {
                match layer {
                    0 => &mut p.w1,
                    l if l == p.depth - 1 => &mut p.w_out,
                    l => &mut p.w_mid[l - 1],
                }
            }
            let orig = mat(&mut params, layer).data()[idx];
            mat(&mut params, layer).data_mut()[idx] = orig + h;
            let plus = loss_at(&params, &x, &target);
            mat(&mut params, layer).data_mut()[idx] = orig - h;
            let minus = loss_at(&params, &x, &target);
            mat(&mut params, layer).data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / scale);
        };
        for layer in 0..depth {
            let len = match layer {
                0 => d * m,
                l if l == depth - 1 => k * m,
                _ => m * m,
            };
            for _ in 0..10 {
                let idx = rng.gen_range(0..len);
                check_entry(layer, idx);
            }
        }
    }
    println!("  max relative error {worst:.2e}");
    check(5, "gradient correctness", worst <= 1e-4);
}

#[test]
fn acceptance_06_taylor_residual_trend() {
    let d = 16;
    let mut at_small = Vec::new();
    let mut at_big = Vec::new();
    for seed in 0..50u64 {
        let params = net::init_params(d, 1024, 3, 1, seed, Mode::Theory).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let x = random_unit(d, &mut rng);
        let xi = vec![0.0; d];
        for (omega, bucket) in [(0.1, &mut at_big), (0.025, &mut at_small)] {
            let w2 = perturb_weights(&params, omega, seed + 1000);
            bucket.push(taylor_residual(&params, &w2, &x, &xi).unwrap());
        }
    }
    let small = median(&mut at_small);
    let big = median(&mut at_big);
    println!("  median residual omega=0.025: {small:.3e}, omega=0.1: {big:.3e}");
    check(6, "taylor residual omega trend", small <= big / 3.0);
}

#[test]
fn acceptance_07_hidden_norm_concentration() {
    let d = 16;
    let params = net::init_params(d, 2048, 3, 1, 7, Mode::Theory).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let inputs: Vec<Vec<f64>> = (0..100).map(|_| random_unit(d, &mut rng)).collect();
    let rate = hidden_norm_check(&params, &inputs, &vec![0.0; d]).unwrap();
    println!("  pass rate {rate:.3}");
    check(7, "hidden norm concentration", rate >= 0.95);
}

fn drift_at_width(m: usize, seed: u64) -> f64 {
    let kappa = 10.0;
    let eta = kappa * (m as f64).powf(-1.5);
    let spec = SyntheticSpec {
        kind: SyntheticKind::TwoClassMargin,
        d: 16,
        classes: 2,
        per_class: 250,
        test_per_class: 10,
        lambda_sep: 1e-4,
        noise: 0.0,
        seed,
        group_size: None,
    };
    let task = synthetic_task(&spec);
    let config = StreamConfig {
        mode: Mode::Theory,
        m,
        depth: 3,
        eta: EtaSchedule::Constant { eta },
        replay_samples: 4,
        capacity: 200,
        ordering: Ordering::Iid,
        seed,
        ..StreamConfig::default()
    };
    let mut state = initialize(&config, &[task.clone()]).unwrap();
    let init = net::init_params(16, m, 3, 1, seed, Mode::Theory).unwrap();
    let ordered = order_stream(&task.train, config.ordering, config.seed).unwrap();
    for e in &ordered {
        step(&mut state, &config, e).unwrap();
    }
    assert_eq!(state.t, 500);
    iterate_drift(&init, &state.model).unwrap()
}

#[test]
fn acceptance_08_drift_scaling() {
    let mut narrow = Vec::new();
    let mut wide = Vec::new();
    for seed in 0..5u64 {
        narrow.push(drift_at_width(256, seed));
        wide.push(drift_at_width(1024, seed));
    }
    let narrow = median(&mut narrow);
    let wide = median(&mut wide);
    println!("  median drift m=256: {narrow:.4e}, m=1024: {wide:.4e}");
    check(8, "iterate drift sqrt(m) scaling", wide <= 0.75 * narrow);
}

#[test]
fn acceptance_09_quantization_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ok = true;
    for bits in 1..=8u8 {
        let step = 1u32 << (8 - bits);
        for _ in 0..1000 {
            let p: u8 = rng.gen();
            let level = quantize_pixel(p, bits).unwrap();
            let recon = dequantize_pixel(level, bits).unwrap();
            if (recon as i32 - p as i32).unsigned_abs() >= step {
                ok = false;
            }
            if bits == 8 && recon != p {
                ok = false;
            }
        }
    }
    let case = dequantize_pixel(quantize_pixel(255, 4).unwrap(), 4).unwrap();
    check(9, "quantization contract", ok && case == 240);
}

#[test]
fn acceptance_10_mix_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a_img = ImgF { h: 8, w: 8, c: 1, data: vec![10.0; 64] };
    let b_img = ImgF { h: 8, w: 8, c: 1, data: vec![250.0; 64] };
    let a_vec = AugFeatures::Vector(vec![0.2; 16]);
    let b_vec = AugFeatures::Vector(vec![0.9; 16]);
    let mut ok = true;
    for i in 0..10_000 {
        let lam: f64 = rng.gen();
        let label = if i % 2 == 0 {
            let (_, y) = mixup(&a_vec, 0, &b_vec, 1, lam, 3).unwrap();
            y
        } else {
            let (img, y, lam_adj) = cutmix(&a_img, 0, &b_img, 1, lam, 3, &mut rng).unwrap();
            let from_b = img.data.iter().filter(|&&v| v == 250.0).count();
            if (from_b as f64 / 64.0 - (1.0 - lam_adj)).abs() > 1e-12 {
                ok = false;
            }
            y
        };
        let sum: f64 = label.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || label.iter().any(|&v| v < 0.0) {
            ok = false;
        }
    }
    check(10, "mix conservation", ok);
}

#[test]
fn acceptance_11_buffer_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let capacity = 64;
    let mut buffer = ReplayBuffer::new(capacity, Codec::Identity, EvictionPolicy::ClassBalancedRandom).unwrap();
    let mut ok = true;
    for t in 0..100_000u32 {
        let label = rng.gen_range(0..10u32);
        let e = Example {
            features: Features::Vector(vec![t as f64, label as f64]),
            label,
            task_id: 0,
            group_id: None,
        };
        let before: BTreeMap<u32, usize> = buffer.class_counts().clone();
        let full = buffer.len() == capacity;
        buffer.store(&e, &mut rng).unwrap();
        if buffer.len() > capacity {
            ok = false;
        }
        // class_counts consistent with entries
        if t % 1000 == 0 {
            let mut recount: BTreeMap<u32, usize> = BTreeMap::new();
            for entry in buffer.entries() {
                *recount.entry(entry.label).or_insert(0) += 1;
            }
            if &recount != buffer.class_counts() {
                ok = false;
            }
        }
        // eviction must hit a maximal class of (before + inserted)
        if full {
            let mut with_insert = before.clone();
            *with_insert.entry(label).or_insert(0) += 1;
            let max = with_insert.values().copied().max().unwrap();
            let after = buffer.class_counts();
            let mut evicted: Vec<u32> = Vec::new();
            for (&c, &n) in &with_insert {
                if after.get(&c).copied().unwrap_or(0) < n {
                    evicted.push(c);
                }
            }
            if evicted.len() != 1 || with_insert[&evicted[0]] != max {
                ok = false;
            }
        }
    }
    check(11, "buffer invariants", ok);
}

#[test]
fn acceptance_12_multitask_retention() {
    let mut with_replay = Vec::new();
    let mut without = Vec::new();
    for seed in 0..5u64 {
        // task 1 is long and noisy so trunk drift accrues; task 0 is hard
        // enough that its head depends on the fitted trunk
        let spec_a = blob_spec(4, 500, 0.25, seed);
        let mut spec_b = blob_spec(4, 4000, 0.5, seed + 100);
        spec_b.test_per_class = 10;
        let task_a = synthetic_task(&spec_a);
        let mut task_b = synthetic_task(&spec_b);
        task_b.task_id = 1;
        for e in task_b.train.iter_mut().chain(task_b.test.iter_mut()) {
            e.task_id = 1;
        }
        for strategy in [MultitaskReplay::FullSep, MultitaskReplay::None] {
            let config = StreamConfig {
                mode: Mode::Practical,
                m: 16,
                depth: 3,
                eta: EtaSchedule::Constant { eta: 0.015 },
                replay_samples: 8,
                capacity: 100,
                ordering: Ordering::Iid,
                seed,
                multitask_replay: strategy,
                ..StreamConfig::default()
            };
            let tasks = vec![task_a.clone(), task_b.clone()];
            let mut state = initialize(&config, &tasks).unwrap();
            for task in &tasks {
                let ordered = order_stream(&task.train, config.ordering, config.seed).unwrap();
                for e in &ordered {
                    step(&mut state, &config, e).unwrap();
                }
            }
            let seen = &state.seen_classes[&0];
            let (_, rows, labels) = evaluate_task(&state.model, &task_a.test, seen).unwrap();
            let acc = metrics::topk_accuracy(&rows, &labels, 1).unwrap();
            match strategy {
                MultitaskReplay::FullSep => with_replay.push(acc),
                _ => without.push(acc),
            }
        }
    }
    let kept = median(&mut with_replay);
    let dropped = median(&mut without);
    println!("  task-1 acc with cross-task replay {kept:.3}, without {dropped:.3}");
    check(12, "multi-task retention", kept >= 0.80 && dropped <= 0.50);
}

#[test]
fn acceptance_13_determinism() {
    let mut run = RunFile::default();
    run.stream.m = 32;
    run.stream.seed = 13;
    run.stream.eval_every = 200;
    run.dataset.push(DatasetManifest {
        name: "blobs".into(),
        format: DataFormat::Synthetic,
        classes: 4,
        task_id: 0,
        images: None,
        labels: None,
        test_images: None,
        test_labels: None,
        csv: None,
        test_csv: None,
        synthetic: Some(blob_spec(4, 100, 0.1, 13)),
        normalization: Normalization::None,
        group_column: None,
    });
    let mut a = Vec::new();
    execute_run(&run, &mut a).unwrap();
    let mut b = Vec::new();
    execute_run(&run, &mut b).unwrap();
    check(13, "byte-identical logs", !a.is_empty() && a == b);
}
