//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each and exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use attnct::data::{expand_training_set, generate_synthetic, AugmentationSpec, Gray, Sample, SynthSpec};
use attnct::explain::{grad_cam, localization_score, occlusion_heatmap, OcclusionSpec};
use attnct::gradcheck::GradCheck;
use attnct::metrics::{default_thresholds, roc_curve, threshold_sweep, ConfusionMatrix, ScoredSample};
use attnct::net::container::{load_model, read_model, save_model, write_model};
use attnct::net::{attention_module_forward, residual_unit_forward, LayerCtx};
use attnct::train::{evaluate, predict_samples, train};
use attnct::{
    build_network, AttentionForm, AttentionModuleConfig, AttentionNetConfig, BatchNormState, Mode, Network,
    OptimizerConfig, OptimizerKind, ParamStore, Result, Tape, Tensor, TrainConfig, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- criterion 1

fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let proj = Tensor::randn(t.value(y).shape(), 1.0, &mut rng(seed));
    let p = t.leaf(proj);
    let m = t.mul(y, p)?;
    Ok(t.sum(m))
}

type OpFn = fn(&mut Tape, &[Var]) -> Result<Var>;

fn op_cases() -> Vec<(&'static str, OpFn, Vec<Vec<usize>>)> {
    vec![
        (
            "conv2d",
            |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                weighted_sum(t, y, 1)
            },
            vec![vec![2, 2, 5, 5], vec![3, 2, 3, 3], vec![3]],
        ),
        (
            "maxpool2d",
            |t, v| {
                let p = t.maxpool2d(v[0], 2, 2)?;
                weighted_sum(t, p, 2)
            },
            vec![vec![2, 2, 6, 6]],
        ),
        (
            "interp_up2",
            |t, v| {
                let u = t.interp_up2(v[0])?;
                weighted_sum(t, u, 3)
            },
            vec![vec![1, 2, 3, 4]],
        ),
        (
            "relu",
            |t, v| {
                let r = t.relu(v[0]);
                weighted_sum(t, r, 4)
            },
            vec![vec![3, 7]],
        ),
        (
            "sigmoid",
            |t, v| {
                let s = t.sigmoid(v[0]);
                weighted_sum(t, s, 5)
            },
            vec![vec![3, 7]],
        ),
        (
            "add/mul/scale",
            |t, v| {
                let a = t.add(v[0], v[1])?;
                let m = t.mul(a, v[1])?;
                let s = t.scale(m, 0.7);
                weighted_sum(t, s, 6)
            },
            vec![vec![2, 3], vec![2, 3]],
        ),
        (
            "(1+M)*T",
            |t, v| {
                let h = t.scalar_add_one_mul(v[0], v[1])?;
                weighted_sum(t, h, 7)
            },
            vec![vec![2, 2, 3, 3], vec![2, 2, 3, 3]],
        ),
        (
            "batchnorm2d train",
            |t, v| {
                let mut st = BatchNormState::new(2);
                let y = t.batchnorm2d(v[0], v[1], v[2], &mut st, Mode::Train)?;
                weighted_sum(t, y, 8)
            },
            vec![vec![2, 2, 3, 3], vec![2], vec![2]],
        ),
        (
            "batchnorm2d eval",
            |t, v| {
                let mut st = BatchNormState::with_stats(vec![0.3, -0.2], vec![1.5, 0.8])?;
                let y = t.batchnorm2d(v[0], v[1], v[2], &mut st, Mode::Eval)?;
                weighted_sum(t, y, 9)
            },
            vec![vec![2, 2, 3, 3], vec![2], vec![2]],
        ),
        (
            "gap/dense/reshape/bce",
            |t, v| {
                let g = t.global_avg_pool(v[0])?;
                let d = t.dense(g, v[1], v[2])?;
                let flat = t.reshape(d, &[2])?;
                let s = t.sigmoid(flat);
                t.bce_loss(s, &[1.0, 0.0])
            },
            vec![vec![2, 3, 2, 2], vec![3, 1], vec![1]],
        ),
    ]
}

/// One point of the tiny-network check: BCE of a batch of two in train mode,
/// differentiated with respect to every parameter and the input.
fn network_point(seed: u64) -> Result<attnct::gradcheck::GradCheckReport> {
    let net = build_network(&AttentionNetConfig::tiny(), seed)?;
    let store: &ParamStore = &net.params;
    let paths: Vec<String> = store.tensors().map(|(k, _)| k.clone()).collect();
    let mut inputs: Vec<Tensor> = store.tensors().map(|(_, t)| t.clone()).collect();
    let mut r = rng(1000 + seed);
    for (p, t) in paths.iter().zip(inputs.iter_mut()) {
        if p.ends_with(".gamma") || p.ends_with(".beta") || p.ends_with(".bias") {
            let noise = Tensor::randn(t.shape(), 0.3, &mut r);
            t.data_mut().iter_mut().zip(noise.data()).for_each(|(v, n)| *v += n);
        }
    }
    inputs.push(Tensor::uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut r));
    let check = GradCheck {
        kink_tol: None,
        max_coords: Some(6),
        seed,
        ..GradCheck::default()
    };
    check.run(
        |tape: &mut Tape, vars: &[Var]| {
            let mut ctx = LayerCtx::from_tape(std::mem::take(tape), store, Mode::Train, false);
            for (p, v) in paths.iter().zip(vars) {
                ctx.bind(p.clone(), *v);
            }
            let (_, scores) = net.forward_on(&mut ctx, *vars.last().expect("input"))?;
            let loss = ctx.tape.bce_loss(scores, &[1.0, 0.0])?;
            *tape = ctx.finish().tape;
            Ok(loss)
        },
        &inputs,
    )
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let tol = 1e-4;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut points = 0;
    for (name, f, shapes) in op_cases() {
        for seed in 0..20u64 {
            let report = GradCheck::default().run_kink_free(
                f,
                |attempt| {
                    let mut r = rng(seed * 1000 + attempt as u64);
                    shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut r)).collect()
                },
                100,
            );
            match report {
                Ok(rep) => {
                    points += 1;
                    worst = worst.max(rep.max_rel_error);
                    if rep.max_rel_error >= tol {
                        failures.push(format!("{name} seed {seed}: {:.2e}", rep.max_rel_error));
                    }
                }
                Err(e) => failures.push(format!("{name} seed {seed}: {e}")),
            }
        }
    }
    let mut net_worst: f64 = 0.0;
    let mut net_coords = 0;
    let mut net_skipped = 0;
    for seed in 0..20u64 {
        match network_point(seed) {
            Ok(rep) => {
                points += 1;
                net_worst = net_worst.max(rep.max_rel_error);
                net_coords += rep.checked;
                net_skipped += rep.skipped_kinks;
                if rep.max_rel_error >= tol {
                    failures.push(format!("network seed {seed}: {:.2e}", rep.max_rel_error));
                }
            }
            Err(e) => failures.push(format!("network seed {seed}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 120.0 {
        failures.push(format!("runtime {secs:.1}s exceeds 120s"));
    }
    outcome(
        failures.is_empty(),
        format!(
            "{points} points; worst op error {worst:.2e}, tiny network {net_worst:.2e} over {net_coords} \
             coordinates ({net_skipped} kink-crossing probes skipped); {secs:.1}s{}",
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join("; ")) }
        ),
    )
}

// ---------------------------------------------------------------- criteria 2, 3

fn module_cfg(c: usize) -> AttentionModuleConfig {
    AttentionModuleConfig {
        pre_units: 1,
        trunk_units: 2,
        mask_levels: 1,
        channels: c,
    }
}

fn criterion_2() -> Outcome {
    let mut p = ParamStore::new();
    p.init_attention_module("a", &module_cfg(4), &mut rng(2)).expect("init");
    // mask logits pinned at −30 for every input
    p.get_mut("a.mask.head.conv2.weight").expect("weight").data_mut().fill(0.0);
    p.get_mut("a.mask.head.conv2.bias").expect("bias").data_mut().fill(-30.0);
    let mut r = rng(20);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let mode = if i % 2 == 0 { Mode::Train } else { Mode::Eval };
        let x = Tensor::randn(&[2, 4, 8, 8], 1.0, &mut r);
        let mut ctx = LayerCtx::new(&p, mode, false);
        let xv = ctx.input(x);
        let out = attention_module_forward(&mut ctx, xv, "a", &module_cfg(4), AttentionForm::Residual).expect("fwd");
        let trunk_only = residual_unit_forward(&mut ctx, out.trunk, "a.post1", 1).expect("post");
        worst = worst.max(ctx.tape.value(out.output).max_abs_diff(ctx.tape.value(trunk_only)));
    }
    outcome(worst < 1e-9, format!("100 inputs, max |module − trunk path| = {worst:.2e} (tol 1e-9)"))
}

fn criterion_3() -> Outcome {
    let net = build_network(&AttentionNetConfig::tiny(), 3).expect("net");
    let mut r = rng(30);
    let (mut n, mut inside, mut lo, mut hi) = (0usize, 0usize, f64::INFINITY, f64::NEG_INFINITY);
    let layer = "stage1.attention.mask";
    while n < 100_000 {
        // inputs far outside the training range push the mask towards saturation
        let scale = [1.0, 10.0, 100.0, 1000.0][(n / 1024) % 4];
        let x = Tensor::randn(&[4, 1, 16, 16], scale, &mut r);
        for mode in [Mode::Train, Mode::Eval] {
            let out = net.forward(&x, mode, &[layer]).expect("fwd");
            for &v in out.captures[layer].data() {
                n += 1;
                inside += (v > 0.0 && v < 1.0) as usize;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    outcome(
        inside == n,
        format!("{inside}/{n} mask activations strictly inside (0,1); range [{lo:.3e}, {hi:.17}]"),
    )
}

// ---------------------------------------------------------------- criteria 4, 5

fn random_set(r: &mut ChaCha8Rng, n: usize) -> Vec<ScoredSample> {
    let levels = r.random_range(2..=50);
    let mut out: Vec<ScoredSample> = (0..n)
        .map(|_| {
            let label = r.random_range(0..=1u8);
            let k = (r.random_range(0..levels) + 2 * label as usize).min(levels);
            ScoredSample::new(label, k as f64 / levels as f64)
        })
        .collect();
    out[0].label = 0;
    out[1].label = 1;
    out
}

fn mann_whitney(s: &[ScoredSample]) -> f64 {
    let pos: Vec<f64> = s.iter().filter(|x| x.label == 1).map(|x| x.score).collect();
    let neg: Vec<f64> = s.iter().filter(|x| x.label == 0).map(|x| x.score).collect();
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            wins += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..=500);
        let s = random_set(&mut r, n);
        let auc = roc_curve(&s).expect("roc").auc;
        worst = worst.max((auc - mann_whitney(&s)).abs());
    }
    outcome(worst < 1e-12, format!("100 sets, max |AUC − Mann–Whitney| = {worst:.2e} (tol 1e-12)"))
}

fn recount(s: &[ScoredSample], t: f64) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for x in s {
        match (x.label == 1, x.score > t) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    cm
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    let grid = default_thresholds();
    let (mut monotone, mut counts) = (true, true);
    for _ in 0..100 {
        let n = r.random_range(2..=500);
        let s = random_set(&mut r, n);
        let rows = threshold_sweep(&s, &grid).expect("sweep");
        for (row, &t) in rows.iter().zip(&grid) {
            counts &= row.confusion == recount(&s, t);
        }
        for w in rows.windows(2) {
            monotone &= w[1].sensitivity <= w[0].sensitivity && w[1].specificity >= w[0].specificity;
        }
    }
    outcome(
        monotone && counts,
        format!("100 sets × {} thresholds: monotone={monotone}, recount matches={counts}", grid.len()),
    )
}

// ---------------------------------------------------------------- criteria 6, 7

const C6_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const C6_EPOCHS: usize = 20;

fn refs(s: &[Sample]) -> Vec<&Sample> {
    s.iter().collect()
}

fn criterion_6(models: &mut Vec<(Network, Vec<Sample>)>) -> Outcome {
    let start = Instant::now();
    let mut good = 0;
    let mut lines = Vec::new();
    for &seed in &C6_SEEDS {
        let set = generate_synthetic(&SynthSpec {
            n_per_class: 75,
            test_fraction: 1.0 / 3.0,
            height: 128,
            width: 128,
            seed,
        })
        .expect("synthetic set");
        let mut net = build_network(&AttentionNetConfig::default(), seed).expect("net");
        let tc = TrainConfig {
            epochs: C6_EPOCHS,
            seed,
            ..TrainConfig::default()
        };
        let oc = OptimizerConfig::new(OptimizerKind::RmsProp, 0.01);
        let t0 = Instant::now();
        let res = train(&mut net, &set.train, &tc, &oc, &mut |_, _| Ok(()));
        if let Err(e) = res {
            lines.push(format!("seed {seed}: training failed: {e}"));
            continue;
        }
        let acc = evaluate(&net, &refs(&set.train), 0.5).expect("eval").accuracy().unwrap_or(0.0);
        let scores = predict_samples(&net, &refs(&set.test)).expect("scores");
        let labelled: Vec<ScoredSample> =
            set.test.iter().zip(&scores).map(|(s, &p)| ScoredSample::new(s.label, p)).collect();
        let auc = roc_curve(&labelled).expect("roc").auc;
        let ok = acc >= 0.95 && auc >= 0.95;
        good += ok as usize;
        lines.push(format!(
            "seed {seed}: train acc {acc:.3}, test AUC {auc:.3} ({:.0}s) {}",
            t0.elapsed().as_secs_f64(),
            if ok { "ok" } else { "short" }
        ));
        models.push((net, set.test));
    }
    let secs = start.elapsed().as_secs_f64();
    for l in &lines {
        println!("    {l}");
    }
    outcome(
        good >= 4 && secs < 1800.0,
        format!("{good}/5 seeds reach train acc ≥ 0.95 and test AUC ≥ 0.95 after {C6_EPOCHS} epochs; {secs:.0}s"),
    )
}

fn mask_area(mask: &Gray) -> f64 {
    mask.data.iter().filter(|&&m| m > 0.5).count() as f64 / mask.data.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_7(models: &[(Network, Vec<Sample>)]) -> Outcome {
    let Some((net, test)) = models.first() else {
        return outcome(false, "no trained model available from criterion 6");
    };
    let positives: Vec<&Sample> = test.iter().filter(|s| s.label == 1 && s.mask.is_some()).collect();
    let layer = net.default_explain_layer();
    let (mut occ, mut gc, mut areas) = (Vec::new(), Vec::new(), Vec::new());
    for s in &positives {
        let mask = s.mask.as_ref().expect("mask");
        let area = mask_area(mask);
        let x = s.tensor();
        let o = occlusion_heatmap(net, &x, &OcclusionSpec::default()).expect("occlusion");
        let g = grad_cam(net, &x, &layer).expect("grad-cam");
        occ.push(localization_score(&o.grid, mask).expect("score") / area);
        gc.push(localization_score(&g.grid, mask).expect("score") / area);
        areas.push(area);
    }
    let (mo, mg) = (median(occ), median(gc));
    outcome(
        positives.len() >= 20 && mo >= 2.0 && mg >= 2.0,
        format!(
            "{} class-1 images (median mask area {:.4}); median localization/area: occlusion {mo:.2}, Grad-CAM {mg:.2} (need ≥ 2)",
            positives.len(),
            median(areas)
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let mut r = rng(8);
    let sample = |label: u8, i: usize, r: &mut ChaCha8Rng| Sample {
        image: Gray::new(8, 8, (0..64).map(|_| r.random::<f64>()).collect()).expect("image"),
        label,
        id: format!("{label}/{i}"),
        mask: None,
    };
    let class: Vec<Sample> = (0..764).map(|i| sample(1, i, &mut r)).collect();
    let out = expand_training_set(&class, &AugmentationSpec::default(), 4).expect("expand");
    let labels_kept = out.iter().all(|s| s.label == 1);
    let originals_kept = class.iter().enumerate().all(|(i, s)| out[4 * i] == *s);
    let mut both: Vec<Sample> = class.clone();
    both.extend((0..400).map(|i| sample(0, i, &mut r)));
    let out2 = expand_training_set(&both, &AugmentationSpec::default(), 4).expect("expand");
    let pos = out2.iter().filter(|s| s.label == 1).count();
    let neg = out2.len() - pos;
    outcome(
        out.len() == 3056 && labels_kept && originals_kept && (pos, neg) == (3056, 1600),
        format!("764 → {}; labels kept {labels_kept}; two-class 764/400 → {pos}/{neg}", out.len()),
    )
}

// ---------------------------------------------------------------- criterion 9

fn attnct(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_attnct"))
        .args(args)
        .env_remove("ATTNCT_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn criterion_9() -> Outcome {
    let run = || -> std::result::Result<(bool, bool, bool, f64), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d = dir.path();
        let data = d.join("data");
        attnct(&["synth", "--out", p(&data), "--n", "12", "--size", "32", "--seed", "9"])?;
        let cfg = d.join("run.cfg");
        std::fs::write(
            &cfg,
            "net.input_height=32\nnet.input_width=32\nnet.stem_kernel=3\nnet.stem_stride=1\n\
             net.stage_channels=8,16\ntrain.epochs=3\ntrain.batch_size=8\nsplit.augmentation_factor=1\nseed=9\n",
        )
        .map_err(|e| e.to_string())?;
        for k in ["a", "b"] {
            let out = d.join(format!("train_{k}"));
            attnct(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out)])?;
            let model = out.join("model.attnct");
            attnct(&["eval", "--model", p(&model), "--data", p(&data), "--out", p(&d.join(format!("eval_{k}")))])?;
        }
        let same = |a: &Path, b: &Path| std::fs::read(a).ok() == std::fs::read(b).ok() && a.exists();
        let epochs = same(&d.join("train_a/epochs.csv"), &d.join("train_b/epochs.csv"));
        let model = same(&d.join("train_a/model.attnct"), &d.join("train_b/model.attnct"));
        let scores = same(&d.join("eval_a/scores.csv"), &d.join("eval_b/scores.csv"));

        // save → load → eval against the in-memory network
        let set = generate_synthetic(&SynthSpec {
            n_per_class: 12,
            height: 32,
            width: 32,
            seed: 9,
            ..SynthSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let cfg = AttentionNetConfig {
            input_height: 32,
            input_width: 32,
            stem_kernel: 3,
            stem_stride: 1,
            stage_channels: vec![8, 16],
            ..AttentionNetConfig::default()
        };
        let mut net = build_network(&cfg, 9).map_err(|e| e.to_string())?;
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 9,
            ..TrainConfig::default()
        };
        train(&mut net, &set.train, &tc, &OptimizerConfig::new(OptimizerKind::RmsProp, 0.01), &mut |_, _| Ok(()))
            .map_err(|e| e.to_string())?;
        let before = predict_samples(&net, &refs(&set.test)).map_err(|e| e.to_string())?;
        let path = d.join("inproc.attnct");
        save_model(&net, &[], &path).map_err(|e| e.to_string())?;
        let back = load_model(&path).map_err(|e| e.to_string())?.network;
        let after = predict_samples(&back, &refs(&set.test)).map_err(|e| e.to_string())?;
        let diff = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok((epochs, scores, model, diff))
    };
    match run() {
        Ok((e, s, m, diff)) => outcome(
            e && s && m && diff < 1e-6,
            format!(
                "identical epochs.csv {e}, scores.csv {s}, model container {m}; save→load score drift {diff:.2e} (tol 1e-6)"
            ),
        ),
        Err(e) => outcome(false, format!("run failed: {e}")),
    }
}

// ---------------------------------------------------------------- criterion 10

fn criterion_10() -> Outcome {
    let mut net = build_network(&AttentionNetConfig::default(), 10).expect("net");
    // move the running statistics away from their initial values
    let mut r = rng(100);
    let warm = Tensor::uniform(&[4, 1, 128, 128], 0.0, 1.0, &mut r);
    let f = net.record(&warm, Mode::Train, false).expect("record");
    for (k, st) in f.rec.norms {
        *net.params.norm_mut(&k).expect("norm") = st;
    }
    let mut buf = Vec::new();
    write_model(&net, &[], &mut buf).expect("write");
    let back = read_model(&buf[..]).expect("read").network;
    let layout = |n: &Network| -> Vec<(String, Vec<usize>)> {
        n.params.tensors().map(|(k, t)| (k.clone(), t.shape().to_vec())).collect()
    };
    let same_layout = layout(&net) == layout(&back);
    let inputs: Vec<Tensor> = (0..100).map(|_| Tensor::uniform(&[1, 128, 128], 0.0, 1.0, &mut r)).collect();
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let a = net.predict(&refs).expect("predict");
    let b = back.predict(&refs).expect("predict");
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    outcome(
        same_layout && diff < 1e-6,
        format!(
            "{} tensors, layout identical {same_layout}; max score drift over 100 inputs {diff:.2e} (tol 1e-6)",
            layout(&net).len()
        ),
    )
}

fn main() {
    let mut models = Vec::new();
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, o: Outcome| {
        println!("criterion {n:>2} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(n);
        }
    };
    report(1, "gradient correctness", criterion_1());
    report(2, "saturated-off mask gives trunk path", criterion_2());
    report(3, "mask range", criterion_3());
    report(4, "AUC oracle", criterion_4());
    report(5, "threshold sweep", criterion_5());
    report(6, "desk-scale training", criterion_6(&mut models));
    report(7, "saliency localization", criterion_7(&models));
    report(8, "augmentation bookkeeping", criterion_8());
    report(9, "determinism", criterion_9());
    report(10, "serialization round trip", criterion_10());
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
