use attnct::gradcheck::GradCheck;
use attnct::net::container::{load_model, read_model, write_model};
use attnct::net::{
    attention_module_forward, combine, mask_branch_forward, residual_unit_forward, LayerCtx,
};
use attnct::{
    build_network, AttentionForm, AttentionModuleConfig, AttentionNetConfig, Error, Mode, ParamStore, Tape,
    Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_store(c_in: usize, c_out: usize, stride: usize, seed: u64) -> ParamStore {
    let mut p = ParamStore::new();
    p.init_residual_unit("u", c_in, c_out, stride, &mut rng(seed)).unwrap();
    p
}

fn run_unit(p: &ParamStore, x: &Tensor, stride: usize, mode: Mode) -> attnct::Result<Tensor> {
    let mut ctx = LayerCtx::new(p, mode, false);
    let xv = ctx.input(x.clone());
    let y = residual_unit_forward(&mut ctx, xv, "u", stride)?;
    Ok(ctx.tape.value(y).clone())
}

#[test]
fn residual_unit_zero_branch_is_identity() {
    let mut p = unit_store(3, 3, 1, 1);
    p.get_mut("u.conv2.weight").unwrap().data_mut().fill(0.0);
    let x = Tensor::randn(&[2, 3, 6, 6], 1.0, &mut rng(2));
    for mode in [Mode::Train, Mode::Eval] {
        let y = run_unit(&p, &x, 1, mode).unwrap();
        assert_eq!(y, x);
    }
}

#[test]
fn residual_unit_shapes_and_projection() {
    let x = Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng(3));
    let y = run_unit(&unit_store(3, 3, 1, 4), &x, 1, Mode::Train).unwrap();
    assert_eq!(y.shape(), x.shape());
    let y = run_unit(&unit_store(3, 5, 2, 4), &x, 2, Mode::Train).unwrap();
    assert_eq!(y.shape(), &[2, 5, 4, 4]);

    // an identity-shortcut unit asked to change resolution must refuse
    let err = run_unit(&unit_store(3, 3, 1, 4), &x, 2, Mode::Train).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    // input channels disagree with a projection-free unit
    let x4 = Tensor::randn(&[1, 4, 8, 8], 1.0, &mut rng(5));
    assert!(matches!(run_unit(&unit_store(3, 3, 1, 4), &x4, 1, Mode::Train), Err(Error::Config(_))));
}

/// Checks gradients of `weighted_sum(net(x))` w.r.t. every parameter in `store`
/// and the input, sampling `coords` coordinates per tensor.
fn check_store<F>(store: &ParamStore, input_shape: &[usize], seed: u64, coords: usize, build: F) -> f64
where
    F: Fn(&mut LayerCtx<'_>, Var) -> attnct::Result<Var>,
{
    let paths: Vec<String> = store.tensors().map(|(k, _)| k.clone()).collect();
    let mut inputs: Vec<Tensor> = store.tensors().map(|(_, t)| t.clone()).collect();
    let mut r = rng(seed);
    // perturb BN affine parameters away from 1/0 so their gradients are generic
    for (p, t) in paths.iter().zip(inputs.iter_mut()) {
        if p.ends_with(".gamma") || p.ends_with(".beta") || p.ends_with(".bias") {
            let noise = Tensor::randn(t.shape(), 0.3, &mut r);
            for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
        }
    }
    inputs.push(Tensor::randn(input_shape, 1.0, &mut r));
    let out_proj_seed = seed ^ 0xabc;
    let check = GradCheck {
        kink_tol: None,
        max_coords: Some(coords),
        seed,
        ..GradCheck::default()
    };
    let report = check
        .run(
            |tape: &mut Tape, vars: &[Var]| {
                let mut ctx = LayerCtx::from_tape(std::mem::take(tape), store, Mode::Train, false);
                for (p, v) in paths.iter().zip(vars) {
                    ctx.bind(p.clone(), *v);
                }
                let x = *vars.last().unwrap();
                let y = build(&mut ctx, x)?;
                let proj = Tensor::randn(ctx.tape.value(y).shape(), 1.0, &mut rng(out_proj_seed));
                let pv = ctx.input(proj);
                let m = ctx.tape.mul(y, pv)?;
                let s = ctx.tape.sum(m);
                *tape = ctx.finish().tape;
                Ok(s)
            },
            &inputs,
        )
        .unwrap();
    assert!(report.checked > 0);
    report.max_rel_error
}

#[test]
fn residual_unit_gradients() {
    for seed in 0..3 {
        let store = unit_store(2, 3, 2, seed);
        let err = check_store(&store, &[2, 2, 6, 6], seed, 6, |ctx, x| residual_unit_forward(ctx, x, "u", 2));
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

fn mask_store(c: usize, levels: usize, seed: u64) -> ParamStore {
    let mut p = ParamStore::new();
    p.init_mask_branch("m", c, levels, &mut rng(seed)).unwrap();
    p
}

#[test]
fn mask_branch_shape_symmetry_and_range() {
    let x = Tensor::randn(&[2, 3, 16, 16], 1.0, &mut rng(7));
    for levels in [1, 2, 3] {
        let p = mask_store(3, levels, 8);
        let mut ctx = LayerCtx::new(&p, Mode::Train, false);
        let xv = ctx.input(x.clone());
        let m = mask_branch_forward(&mut ctx, xv, "m", levels).unwrap();
        assert_eq!(ctx.tape.value(m).shape(), x.shape());
    }
    // 1000 samples through r=1 on 16×16
    let p = mask_store(2, 1, 9);
    let mut r = rng(10);
    for _ in 0..(1000 / 8) {
        let x = Tensor::randn(&[8, 2, 16, 16], 3.0, &mut r);
        let mut ctx = LayerCtx::new(&p, Mode::Train, false);
        let xv = ctx.input(x);
        let m = mask_branch_forward(&mut ctx, xv, "m", 1).unwrap();
        assert!(ctx.tape.value(m).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn mask_branch_rejects_indivisible_extent() {
    let p = mask_store(1, 2, 1);
    let mut ctx = LayerCtx::new(&p, Mode::Train, false);
    let xv = ctx.input(Tensor::zeros(&[1, 1, 6, 6]));
    assert!(matches!(mask_branch_forward(&mut ctx, xv, "m", 2), Err(Error::Config(_))));
}

#[test]
fn mask_branch_gradients() {
    for seed in 0..2 {
        let store = mask_store(2, 1, seed);
        let err = check_store(&store, &[2, 2, 8, 8], seed, 4, |ctx, x| mask_branch_forward(ctx, x, "m", 1));
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

fn module_cfg(c: usize) -> AttentionModuleConfig {
    AttentionModuleConfig {
        pre_units: 1,
        trunk_units: 2,
        mask_levels: 1,
        channels: c,
    }
}

fn module_store(c: usize, seed: u64) -> ParamStore {
    let mut p = ParamStore::new();
    p.init_attention_module("a", &module_cfg(c), &mut rng(seed)).unwrap();
    p
}

#[test]
fn saturated_off_mask_reduces_to_trunk_path() {
    let mut p = module_store(3, 11);
    p.get_mut("a.mask.head.conv2.weight").unwrap().data_mut().fill(0.0);
    p.get_mut("a.mask.head.conv2.bias").unwrap().data_mut().fill(-30.0);
    let cfg = module_cfg(3);
    let mut r = rng(12);
    for mode in [Mode::Train, Mode::Eval] {
        for _ in 0..5 {
            let x = Tensor::randn(&[2, 3, 8, 8], 1.0, &mut r);
            let mut ctx = LayerCtx::new(&p, mode, false);
            let xv = ctx.input(x);
            let out = attention_module_forward(&mut ctx, xv, "a", &cfg, AttentionForm::Residual).unwrap();
            let trunk_path = residual_unit_forward(&mut ctx, out.trunk, "a.post1", 1).unwrap();
            let d = ctx.tape.value(out.output).max_abs_diff(ctx.tape.value(trunk_path));
            assert!(d < 1e-9, "{d}");
        }
    }
}

#[test]
fn half_mask_scales_trunk_by_one_and_a_half() {
    let mut tape = Tape::new();
    let f = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut rng(13));
    let fv = tape.leaf(f.clone());
    let m = tape.leaf(Tensor::full(f.shape(), 0.5));
    let h = combine(&mut tape, AttentionForm::Residual, m, fv).unwrap();
    for (a, b) in tape.value(h).data().iter().zip(f.data()) {
        assert_eq!(*a, 1.5 * b);
    }
}

#[test]
fn residual_minus_naive_is_trunk() {
    let p = module_store(2, 14);
    let cfg = module_cfg(2);
    let x = Tensor::randn(&[2, 2, 8, 8], 1.0, &mut rng(15));
    let mut ctx = LayerCtx::new(&p, Mode::Eval, false);
    let xv = ctx.input(x);
    let out = attention_module_forward(&mut ctx, xv, "a", &cfg, AttentionForm::Residual).unwrap();
    let naive = combine(&mut ctx.tape, AttentionForm::Naive, out.mask, out.trunk).unwrap();
    let res = ctx.tape.value(out.combined);
    let nv = ctx.tape.value(naive);
    let t = ctx.tape.value(out.trunk);
    for i in 0..t.len() {
        assert!((res.data()[i] - nv.data()[i] - t.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn attention_module_gradients() {
    let store = module_store(2, 16);
    let cfg = module_cfg(2);
    let err = check_store(&store, &[2, 2, 8, 8], 16, 3, |ctx, x| {
        Ok(attention_module_forward(ctx, x, "a", &cfg, AttentionForm::Residual)?.output)
    });
    assert!(err < 1e-4, "{err}");
}

fn conv_count(ci: usize, co: usize, k: usize) -> usize {
    co * ci * k * k + co
}

fn unit_count(ci: usize, co: usize, stride: usize) -> usize {
    let proj = if ci != co || stride != 1 { conv_count(ci, co, 1) } else { 0 };
    2 * ci + conv_count(ci, co, 3) + 2 * co + conv_count(co, co, 3) + proj
}

#[test]
fn default_parameter_count_matches_hand_tally() {
    let (p, t, r) = (1, 2, 1);
    let chans = [16, 32, 64];
    let mut total = conv_count(1, 16, 7);
    for (i, &c) in chans.iter().enumerate() {
        if i > 0 {
            total += unit_count(chans[i - 1], c, 2);
        }
        let mask = (2 * r + 1) * unit_count(c, c, 1) + 2 * (2 * c + conv_count(c, c, 1));
        total += (2 * p + t) * unit_count(c, c, 1) + mask;
    }
    total += 2 * unit_count(64, 64, 1) + 2 * 64 + (64 + 1);
    let net = build_network(&AttentionNetConfig::default(), 0).unwrap();
    assert_eq!(net.params.param_count(), total);
}

#[test]
fn default_network_scores_batch() {
    let net = build_network(&AttentionNetConfig::default(), 1).unwrap();
    let x = Tensor::uniform(&[2, 1, 128, 128], 0.0, 1.0, &mut rng(17));
    let out = net.forward(&x, Mode::Eval, &[]).unwrap();
    assert_eq!(out.scores.shape(), &[2]);
    assert!(out.scores.data().iter().all(|&s| s > 0.0 && s < 1.0));
}

#[test]
fn builds_are_seed_deterministic() {
    let cfg = AttentionNetConfig::tiny();
    assert_eq!(build_network(&cfg, 5).unwrap(), build_network(&cfg, 5).unwrap());
    assert_ne!(build_network(&cfg, 5).unwrap().params, build_network(&cfg, 6).unwrap().params);
}

#[test]
fn eval_forward_is_pure_and_per_sample() {
    let net = build_network(&AttentionNetConfig::tiny(), 2).unwrap();
    let x = Tensor::uniform(&[4, 1, 16, 16], 0.0, 1.0, &mut rng(18));
    let a = net.forward(&x, Mode::Eval, &[]).unwrap().scores;
    let b = net.forward(&x, Mode::Eval, &[]).unwrap().scores;
    assert_eq!(a, b);
    let perm = [2, 0, 3, 1];
    let items: Vec<Tensor> = perm.iter().map(|&i| x.batch_item(i)).collect();
    let refs: Vec<&Tensor> = items.iter().collect();
    let xp = Tensor::stack_batch(&refs).unwrap();
    let c = net.forward(&xp, Mode::Eval, &[]).unwrap().scores;
    for (k, &i) in perm.iter().enumerate() {
        assert!((c.data()[k] - a.data()[i]).abs() < 1e-12);
    }
    // concurrent read-only inference agrees
    let scores: Vec<Tensor> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..3).map(|_| s.spawn(|| net.forward(&x, Mode::Eval, &[]).unwrap().scores)).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(scores.iter().all(|s| *s == a));
}

#[test]
fn train_mode_differs_from_eval_under_shifted_batch() {
    let net = build_network(&AttentionNetConfig::tiny(), 3).unwrap();
    // running stats are 0/1; a batch with a large mean shift has very different batch stats
    let x = Tensor::uniform(&[3, 1, 16, 16], 5.0, 6.0, &mut rng(19));
    let tr = net.forward(&x, Mode::Train, &[]).unwrap().scores;
    let ev = net.forward(&x, Mode::Eval, &[]).unwrap().scores;
    assert!(tr.max_abs_diff(&ev) > 1e-6);
}

#[test]
fn capture_lookup() {
    let net = build_network(&AttentionNetConfig::default(), 4).unwrap();
    let x = Tensor::uniform(&[1, 1, 128, 128], 0.0, 1.0, &mut rng(20));
    let out = net.forward(&x, Mode::Eval, &["stage3.attention", "head.features"]).unwrap();
    assert_eq!(out.captures["stage3.attention"].shape(), &[1, 64, 8, 8]);
    match net.forward(&x, Mode::Eval, &["stage9"]) {
        Err(Error::Lookup { valid, .. }) => assert!(valid.contains(&"stage2.attention.mask".to_string())),
        other => panic!("expected lookup error, got {:?}", other.map(|o| o.scores)),
    }
    let bad = Tensor::zeros(&[1, 1, 64, 64]);
    let msg = net.forward(&bad, Mode::Eval, &[]).unwrap_err().to_string();
    assert!(msg.contains("128") && msg.contains("64"), "{msg}");
}

#[test]
fn tiny_network_end_to_end_gradients() {
    let net = build_network(&AttentionNetConfig::tiny(), 21).unwrap();
    for seed in 0..3 {
        let err = check_store(&net.params, &[2, 1, 16, 16], seed, 2, |ctx, x| {
            Ok(net.forward_on(ctx, x)?.0)
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn container_round_trip() {
    let mut net = build_network(&AttentionNetConfig::tiny(), 22).unwrap();
    net.epoch = 7;
    // give the running statistics non-default values
    let x = Tensor::uniform(&[4, 1, 16, 16], 0.0, 1.0, &mut rng(23));
    let f = net.record(&x, Mode::Train, false).unwrap();
    for (k, st) in f.rec.norms {
        *net.params.norm_mut(&k).unwrap() = st;
    }
    let mut buf = Vec::new();
    write_model(&net, &[("note".into(), "x".into())], &mut buf).unwrap();
    assert_eq!(&buf[..8], b"ATTNCT1\0");
    let loaded = read_model(&buf[..]).unwrap();
    assert_eq!(loaded.header["note"], "x");
    let back = loaded.network;
    assert_eq!(back.epoch, 7);
    assert_eq!(back.config, net.config);
    let a: Vec<_> = net.params.tensors().map(|(k, t)| (k.clone(), t.shape().to_vec())).collect();
    let b: Vec<_> = back.params.tensors().map(|(k, t)| (k.clone(), t.shape().to_vec())).collect();
    assert_eq!(a, b);
    let sa = net.forward(&x, Mode::Eval, &[]).unwrap().scores;
    let sb = back.forward(&x, Mode::Eval, &[]).unwrap().scores;
    assert!(sa.max_abs_diff(&sb) < 1e-6);

    // saving the loaded model reproduces the bytes
    let mut again = Vec::new();
    write_model(&back, &[("note".into(), "x".into())], &mut again).unwrap();
    assert_eq!(buf, again);

    assert!(read_model(&b"NOTMODEL"[..]).is_err());
    let mut truncated = buf.clone();
    truncated.truncate(buf.len() - 3);
    assert!(read_model(&truncated[..]).is_err());
    assert!(load_model(std::path::Path::new("/nonexistent/model.attnct")).is_err());
}
