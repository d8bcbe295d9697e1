use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use attnct::data::{expand_training_set, generate_synthetic, load_dataset, read_image, resize, write_dataset, SynthSpec};
use attnct::explain::{
    grad_cam, grad_cam_pp, localization_score, occlusion_heatmap, render_overlay, saliency_csv, Method, SaliencyMap,
};
use attnct::metrics::{
    self, confusion_at, csv_metric, fmt_metric, pr_curve, roc_curve, score_histogram, scored, threshold_sweep,
    ConfusionMatrix,
};
use attnct::net::container::{load_model, save_model};
use attnct::plot::{histogram_chart, line_chart};
use attnct::train::{self, evaluate, hyperparameter_sweep, predict_samples, reference_grid, sweep_table, EPOCH_CSV_HEADER};
use attnct::{build_network, Error, Gray, Network, OptimizerConfig, Result, Sample, Tensor};

use crate::config::{RunConfig, RUN_CONFIG_FILE, SEED_ENV};
use crate::{ConfigArgs, EvalArgs, ExplainArgs, SweepArgs, SynthArgs, TrainArgs};

pub const MODEL_FILE: &str = "model.attnct";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(io(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io(path))
}

fn resolve(a: &ConfigArgs) -> Result<RunConfig> {
    RunConfig::resolve(a.config.as_deref(), &a.set, a.seed)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Usage(format!("missing --{what} (or `{what}=` in the config file)")))
}

/// Refuses output locations inside the input dataset.
fn guard_output(data: &Path, out: &Path) -> Result<()> {
    let abs = |p: &Path| std::path::absolute(p).map_err(io(p));
    let (d, o) = (abs(data)?, abs(out)?);
    if o.starts_with(&d) {
        return Err(Error::Usage(format!(
            "output directory {} lies inside the dataset {}; choose another location",
            out.display(),
            data.display()
        )));
    }
    Ok(())
}

fn write_run_config(out: &Path, cfg: &RunConfig, command: &str) -> Result<()> {
    write(&out.join(RUN_CONFIG_FILE), cfg.to_text(command))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn shape_text(h: usize, w: usize) -> String {
    format!("1×{h}×{w}")
}

fn image_tensor(g: &Gray) -> Tensor {
    Tensor::from_vec(&[1, g.height, g.width], g.data.clone()).expect("image extents match its data")
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?,
            Err(_) => 0,
        },
    };
    let spec = SynthSpec {
        n_per_class: a.n,
        test_fraction: a.test_fraction,
        height: a.size,
        width: a.size,
        seed,
    };
    let out = &a.out;
    if out.exists() {
        let mut entries = fs::read_dir(out).map_err(io(out))?;
        if entries.next().is_some() {
            if !a.force {
                return Err(Error::Usage(format!(
                    "{} is not empty; pass --force to replace the generated files",
                    out.display()
                )));
            }
            for dir in ["covid", "non_covid", "masks"] {
                let p = out.join(dir);
                if p.exists() {
                    fs::remove_dir_all(&p).map_err(io(&p))?;
                }
            }
            for file in [attnct::data::SPLIT_FILE, MANIFEST_FILE, RUN_CONFIG_FILE] {
                let p = out.join(file);
                if p.exists() {
                    fs::remove_file(&p).map_err(io(&p))?;
                }
            }
        }
    }
    let set = generate_synthetic(&spec)?;
    create_dir(out)?;
    let files = write_dataset(out, &set.train, &set.test)?;
    let sep = set.separability;
    let count = |s: &[Sample], l: u8| s.iter().filter(|x| x.label == l).count();
    let mut m = String::new();
    let _ = writeln!(m, "generator=synthetic_blobs");
    let _ = writeln!(m, "seed={seed}");
    let _ = writeln!(m, "n_per_class={}", a.n);
    let _ = writeln!(m, "height={}\nwidth={}", a.size, a.size);
    let _ = writeln!(m, "test_fraction={}", a.test_fraction);
    let _ = writeln!(m, "samples={}", set.train.len() + set.test.len());
    let _ = writeln!(m, "train.covid={}\ntrain.non_covid={}", count(&set.train, 1), count(&set.train, 0));
    let _ = writeln!(m, "test.covid={}\ntest.non_covid={}", count(&set.test, 1), count(&set.test, 0));
    let _ = writeln!(m, "files={}", files.len());
    let _ = writeln!(m, "separability.feature=mean_intensity");
    let _ = writeln!(m, "separability.threshold={}", sep.threshold);
    let _ = writeln!(m, "separability.train_accuracy={}", sep.train_accuracy);
    let _ = writeln!(m, "separability.test_accuracy={}", sep.test_accuracy);
    let _ = writeln!(m, "separability.pass={}", sep.test_accuracy >= 0.9);
    write(&out.join(MANIFEST_FILE), &m)?;
    let cfg = format!(
        "# resolved configuration for `attnct synth`\nseed={seed}\nout={}\nsynth.n={}\nsynth.size={}\nsynth.test_fraction={}\n",
        out.display(),
        a.n,
        a.size,
        a.test_fraction
    );
    write(&out.join(RUN_CONFIG_FILE), cfg)?;
    println!(
        "wrote {} train and {} test images to {} (mean-intensity separability: test accuracy {:.3})",
        set.train.len(),
        set.test.len(),
        out.display(),
        sep.test_accuracy
    );
    Ok(())
}

fn curve_svgs(out: &Path, epochs_csv: &str) -> Result<()> {
    let sens = line_chart(epochs_csv, "epoch", &["train_sens", "val_sens"], "Sensitivity per epoch", false)?;
    write(&out.join("sensitivity.svg"), sens)?;
    let spec = line_chart(epochs_csv, "epoch", &["train_spec", "val_spec"], "Specificity per epoch", false)?;
    write(&out.join("specificity.svg"), spec)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = resolve(&a.cfg)?;
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
    let data_dir = required(&cfg.data, "data")?.to_path_buf();
    let out = required(&cfg.out, "out")?.to_path_buf();
    guard_output(&data_dir, &out)?;
    let ds = load_dataset(&data_dir, &cfg.split, Some((cfg.net.input_height, cfg.net.input_width)))?;
    let expanded = expand_training_set(&ds.train, &cfg.augment, cfg.split.augmentation_factor + 1)?;
    create_dir(&out)?;
    write_run_config(&out, &cfg, "train")?;

    let mut net = build_network(&cfg.net, cfg.seed)?;
    let log_path = out.join("epochs.csv");
    let mut log = File::create(&log_path).map_err(io(&log_path))?;
    writeln!(log, "{EPOCH_CSV_HEADER}").map_err(io(&log_path))?;
    let ckpt_dir = out.join("checkpoints");
    let header = cfg.model_header();
    let every = cfg.train.checkpoint_every;
    let mut sink = |rec: &attnct::EpochRecord, n: &Network| -> Result<()> {
        writeln!(log, "{}", rec.csv_row()).map_err(io(&log_path))?;
        log.flush().map_err(io(&log_path))?;
        println!(
            "epoch {:>3}  loss {:.5}  train sens {} spec {}  val sens {} spec {}",
            rec.epoch,
            rec.train_loss,
            fmt_metric(rec.train_sens),
            fmt_metric(rec.train_spec),
            fmt_metric(rec.val_sens),
            fmt_metric(rec.val_spec)
        );
        if every > 0 && rec.epoch % every == 0 {
            create_dir(&ckpt_dir)?;
            save_model(n, &header, &ckpt_dir.join(format!("epoch_{:04}.attnct", rec.epoch)))?;
        }
        Ok(())
    };
    let result = train::train(&mut net, &expanded, &cfg.train, &cfg.optim, &mut sink);
    drop(log);
    result?;
    save_model(&net, &header, &out.join(MODEL_FILE))?;
    let epochs_csv = fs::read_to_string(&log_path).map_err(io(&log_path))?;
    curve_svgs(&out, &epochs_csv)?;

    let threshold = cfg.train.eval_threshold;
    let train_refs: Vec<&Sample> = ds.train.iter().collect();
    let train_acc = evaluate(&net, &train_refs, threshold)?.accuracy();
    let mut summary = format!(
        "epochs={}\ntrain_samples={}\ntrain_samples_augmented={}\ntrain_accuracy={}\n",
        net.epoch,
        ds.train.len(),
        expanded.len(),
        csv_metric(train_acc)
    );
    if !ds.test.is_empty() {
        let test_refs: Vec<&Sample> = ds.test.iter().collect();
        let acc = evaluate(&net, &test_refs, threshold)?.accuracy();
        let _ = writeln!(summary, "test_samples={}\ntest_accuracy={}", ds.test.len(), csv_metric(acc));
    }
    write(&out.join("train_summary.txt"), &summary)?;
    println!(
        "final train accuracy {} (threshold {threshold}); model written to {}",
        fmt_metric(train_acc),
        out.join(MODEL_FILE).display()
    );
    Ok(())
}

/// Parses `optimizer,learning_rate` lines (comma or whitespace separated).
pub fn parse_grid(text: &str, origin: &str, base: &OptimizerConfig) -> Result<Vec<OptimizerConfig>> {
    let mut grid = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = |m: String| Error::Config(format!("{origin}:{}: {m}", i + 1));
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let [kind, lr] = fields[..] else {
            return Err(at(format!("expected `optimizer,learning_rate`, found `{line}`")));
        };
        let mut oc = base.clone();
        oc.kind = kind.parse().map_err(|e: Error| at(e.to_string()))?;
        oc.learning_rate = lr.parse().map_err(|_| at(format!("cannot parse learning rate `{lr}`")))?;
        oc.validate().map_err(|e| at(e.to_string()))?;
        grid.push(oc);
    }
    if grid.is_empty() {
        return Err(Error::Input(format!("{origin}: optimizer grid is empty")));
    }
    Ok(grid)
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let mut cfg = resolve(&a.cfg)?;
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
    let data_dir = required(&cfg.data, "data")?.to_path_buf();
    let out = required(&cfg.out, "out")?.to_path_buf();
    guard_output(&data_dir, &out)?;
    let grid = match &a.grid {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io(p))?;
            parse_grid(&text, &p.display().to_string(), &cfg.optim)?
        }
        None => reference_grid(),
    };
    let ds = load_dataset(&data_dir, &cfg.split, Some((cfg.net.input_height, cfg.net.input_width)))?;
    if ds.test.is_empty() {
        return Err(Error::Config(
            "the sweep scores a held-out split; provide split.csv or set split.mode=fraction:<f>".into(),
        ));
    }
    let expanded = expand_training_set(&ds.train, &cfg.augment, cfg.split.augmentation_factor + 1)?;
    create_dir(&out)?;
    write_run_config(&out, &cfg, "sweep")?;
    let mut grid_text = String::from("optimizer,learning_rate\n");
    for oc in &grid {
        let _ = writeln!(grid_text, "{},{}", oc.kind, oc.learning_rate);
    }
    write(&out.join("grid.csv"), grid_text)?;
    let rows = hyperparameter_sweep(&grid, &cfg.net, &cfg.train, &expanded, &ds.test, &cfg.repeat_seeds())?;
    write(&out.join("sweep.csv"), train::sweep_csv(&rows))?;
    let table = sweep_table(&rows);
    write(&out.join("sweep.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn compute_map(net: &Network, x: &Tensor, method: Method, layer: &str, cfg: &RunConfig) -> Result<SaliencyMap> {
    match method {
        Method::GradCam => grad_cam(net, x, layer),
        Method::GradCamPp => grad_cam_pp(net, x, layer),
        Method::Occlusion => occlusion_heatmap(net, x, &cfg.occlusion),
    }
}

fn check_layer(net: &Network, layer: &str) -> Result<()> {
    let valid = net.capture_points();
    if valid.iter().any(|l| l == layer) {
        Ok(())
    } else {
        Err(Error::Usage(format!("unknown layer `{layer}`; valid layers: {}", valid.join(", "))))
    }
}

fn confusion_text(cm: &ConfusionMatrix, threshold: f64) -> String {
    format!(
        "threshold={threshold} (score > threshold predicts covid)\n\
         {:<18}{:>18}{:>22}\n{:<18}{:>18}{:>22}\n{:<18}{:>18}{:>22}\n",
        "",
        "predicted covid",
        "predicted non_covid",
        "actual covid",
        cm.tp,
        cm.fn_,
        "actual non_covid",
        cm.fp,
        cm.tn
    )
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = resolve(&a.cfg)?;
    for (v, slot) in [(&a.model, &mut cfg.model), (&a.data, &mut cfg.data), (&a.out, &mut cfg.out)] {
        if v.is_some() {
            *slot = v.clone();
        }
    }
    if let Some(t) = &a.thresholds {
        cfg.set("eval.thresholds", t).map_err(|m| Error::Usage(format!("--thresholds: {m}")))?;
    }
    if let Some(t) = a.threshold {
        cfg.train.eval_threshold = t;
    }
    if a.resize {
        cfg.eval_resize = true;
    }
    if let Some(m) = &a.localize {
        cfg.eval_localize = Some(m.parse()?);
    }
    let model_path = required(&cfg.model, "model")?.to_path_buf();
    let data_dir = required(&cfg.data, "data")?.to_path_buf();
    let out = required(&cfg.out, "out")?.to_path_buf();
    guard_output(&data_dir, &out)?;
    let net = load_model(&model_path)?.network;
    cfg.net = net.config.clone();
    cfg.finish()?;

    let (h, w) = (net.config.input_height, net.config.input_width);
    let geometry = cfg.eval_resize.then_some((h, w));
    let ds = load_dataset(&data_dir, &cfg.split, geometry)?;
    let (samples, split) = if ds.test.is_empty() { (&ds.train, "all") } else { (&ds.test, "test") };
    if let Some(s) = samples.iter().find(|s| (s.image.height, s.image.width) != (h, w)) {
        return Err(Error::Config(format!(
            "model expects {} images but {} is {} (pass --resize to resample)",
            shape_text(h, w),
            s.id,
            shape_text(s.image.height, s.image.width)
        )));
    }
    create_dir(&out)?;
    write_run_config(&out, &cfg, "eval")?;

    let refs: Vec<&Sample> = samples.iter().collect();
    let scores = predict_samples(&net, &refs)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let mut scores_csv = String::from("id,label,score\n");
    for (s, p) in samples.iter().zip(&scores) {
        let _ = writeln!(scores_csv, "{},{},{}", s.id, s.label, p);
    }
    write(&out.join("scores.csv"), scores_csv)?;
    let set = scored(&labels, &scores)?;

    let rows = threshold_sweep(&set, &cfg.eval_thresholds)?;
    let sweep_csv = metrics::sweep_csv(&rows);
    write(&out.join("sweep.csv"), &sweep_csv)?;
    let svg = line_chart(&sweep_csv, "threshold", &["sens", "spec", "f1"], "Threshold sweep", true)?;
    write(&out.join("sweep.svg"), svg)?;

    let roc = roc_curve(&set)?;
    let roc_csv = metrics::roc_csv(&roc);
    write(&out.join("roc.csv"), &roc_csv)?;
    let title = format!("ROC (AUC {:.4})", roc.auc);
    write(&out.join("roc.svg"), line_chart(&roc_csv, "fpr", &["tpr"], &title, true)?)?;

    let pr_csv = metrics::pr_csv(&pr_curve(&set)?);
    write(&out.join("pr.csv"), &pr_csv)?;
    write(
        &out.join("pr.svg"),
        line_chart(&pr_csv, "recall", &["precision"], "Precision-recall", true)?,
    )?;

    for (class, name) in [(1u8, "covid"), (0, "non_covid")] {
        let csv = metrics::hist_csv(&score_histogram(&set, class, cfg.eval_bins)?);
        write(&out.join(format!("hist_{name}.csv")), &csv)?;
        let svg = histogram_chart(&csv, &format!("Scores of {name} samples"))?;
        write(&out.join(format!("hist_{name}.svg")), svg)?;
    }

    let threshold = cfg.train.eval_threshold;
    let cm = confusion_at(&set, threshold)?;
    write(&out.join("confusion.txt"), confusion_text(&cm, threshold))?;
    let mut summary = String::new();
    let _ = writeln!(summary, "split={split}");
    let _ = writeln!(summary, "samples={}", set.len());
    let _ = writeln!(summary, "positives={}", cm.tp + cm.fn_);
    let _ = writeln!(summary, "negatives={}", cm.tn + cm.fp);
    let _ = writeln!(summary, "threshold={threshold}");
    let _ = writeln!(summary, "sensitivity={}", csv_metric(cm.sensitivity()));
    let _ = writeln!(summary, "specificity={}", csv_metric(cm.specificity()));
    let _ = writeln!(summary, "precision={}", csv_metric(cm.precision()));
    let _ = writeln!(summary, "f1={}", csv_metric(cm.f1()));
    let _ = writeln!(summary, "accuracy={}", csv_metric(cm.accuracy()));
    let _ = writeln!(summary, "auc={}", roc.auc);

    if let Some(method) = cfg.eval_localize {
        let layer = cfg.explain_layer.clone().unwrap_or_else(|| net.default_explain_layer());
        check_layer(&net, &layer)?;
        let mut csv = String::from("id,localization,mask_area,ratio\n");
        let (mut locs, mut areas, mut ratios) = (Vec::new(), Vec::new(), Vec::new());
        for s in samples.iter().filter(|s| s.label == 1) {
            let Some(mask) = &s.mask else { continue };
            let area = mask.data.iter().filter(|&&m| m > 0.5).count() as f64 / mask.data.len() as f64;
            if area == 0.0 {
                continue;
            }
            let map = compute_map(&net, &s.tensor(), method, &layer, &cfg)?;
            let loc = localization_score(&map.grid, mask)?;
            let _ = writeln!(csv, "{},{loc},{area},{}", s.id, loc / area);
            locs.push(loc);
            areas.push(area);
            ratios.push(loc / area);
        }
        write(&out.join(format!("localization_{method}.csv")), csv)?;
        let _ = writeln!(summary, "localization.method={method}");
        let _ = writeln!(summary, "localization.count={}", locs.len());
        let _ = writeln!(summary, "localization.median_score={}", csv_metric(median(locs)));
        let _ = writeln!(summary, "localization.median_mask_area={}", csv_metric(median(areas)));
        let _ = writeln!(summary, "localization.median_ratio={}", csv_metric(median(ratios)));
    }
    write(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn binarize(mut g: Gray) -> Gray {
    g.data.iter_mut().for_each(|v| *v = if *v > 0.5 { 1.0 } else { 0.0 });
    g
}

pub fn explain(a: &ExplainArgs) -> Result<()> {
    let mut cfg = resolve(&a.cfg)?;
    for (v, slot) in [
        (&a.model, &mut cfg.model),
        (&a.image, &mut cfg.image),
        (&a.mask, &mut cfg.mask),
        (&a.out, &mut cfg.out),
    ] {
        if v.is_some() {
            *slot = v.clone();
        }
    }
    if let Some(m) = &a.method {
        cfg.explain_method = m.parse()?;
    }
    if a.layer.is_some() {
        cfg.explain_layer = a.layer.clone();
    }
    if let Some(p) = a.patch {
        cfg.occlusion.patch = p;
    }
    if let Some(s) = a.stride {
        cfg.occlusion.stride = s;
    }
    if a.resize {
        cfg.eval_resize = true;
    }
    let model_path = required(&cfg.model, "model")?.to_path_buf();
    let image_path = required(&cfg.image, "image")?.to_path_buf();
    let out = required(&cfg.out, "out")?.to_path_buf();
    let net = load_model(&model_path)?.network;
    cfg.net = net.config.clone();
    cfg.finish()?;
    let layer = cfg.explain_layer.clone().unwrap_or_else(|| net.default_explain_layer());
    check_layer(&net, &layer)?;

    let (h, w) = (net.config.input_height, net.config.input_width);
    let fit = |g: Gray, what: &Path| -> Result<Gray> {
        if (g.height, g.width) == (h, w) {
            Ok(g)
        } else if cfg.eval_resize {
            Ok(resize(&g, h, w))
        } else {
            Err(Error::Config(format!(
                "model expects {} images but {} is {} (pass --resize to resample)",
                shape_text(h, w),
                what.display(),
                shape_text(g.height, g.width)
            )))
        }
    };
    let image = fit(read_image(&image_path)?, &image_path)?;
    let mask = match &cfg.mask {
        Some(p) => Some(binarize(fit(binarize(read_image(p)?), p)?)),
        None => None,
    };
    let x = image_tensor(&image);
    let map = compute_map(&net, &x, cfg.explain_method, &layer, &cfg)?;
    let score = net.predict(&[&x])?[0];

    create_dir(&out)?;
    write_run_config(&out, &cfg, "explain")?;
    write(&out.join("saliency.csv"), saliency_csv(&map))?;
    let panel = render_overlay(&image, &map.grid, mask.as_ref())?;
    write(&out.join("panel.pgm"), panel.to_pgm())?;
    write(&out.join("panel.svg"), panel.to_svg())?;
    let mut summary = format!("method={}\n", cfg.explain_method);
    if cfg.explain_method != Method::Occlusion {
        let _ = writeln!(summary, "layer={layer}");
    }
    let _ = writeln!(summary, "score={score}");
    if let Some(m) = &mask {
        let loc = localization_score(&map.grid, m)?;
        let area = m.data.iter().sum::<f64>() / m.data.len() as f64;
        let _ = writeln!(summary, "localization_score={loc}\nmask_area={area}");
    }
    write(&out.join("explain.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
