//! The `std2p` command line: generate or ingest sequences, match regions,
//! train and apply the pooling head, evaluate, and sweep frame distances.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{direction_name, parse_kv, set_kv, Input, PipelineConfig};
use crate::correspond::{
    build_table, correspondence_stats, default_size_edges, sample_frames, stats_csv,
};
use crate::error::{Error, Result};
use crate::eval::{
    boundary_pr, bpr_curve_csv, metrics, oracle_label, oracle_propagate, Benchmark,
    ConfusionMatrix, Metrics, Variant,
};
use crate::grid::{LabelMap, Sequence, IGNORE_LABEL};
use crate::io;
use crate::learn::{
    predict, prepare_example, train, ExampleOptions, LinearHead, Sgd, TrainConfig,
};
use crate::pool::Std2pHead;
use crate::rng::SeedStream;
use crate::synth::{generate, BandedScene, Truth};

#[derive(Debug, Parser)]
#[command(name = "std2p", version, about = "Multi-view superpixel pooling for video segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

/// Overrides for config keys; a flag wins over the file.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 is the reference for bit-exact comparisons.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Region correspondence threshold in [0, 1).
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// avg or max.
    #[arg(long, global = true)]
    pub spatial_mode: Option<String>,
    /// avg or max.
    #[arg(long, global = true)]
    pub temporal_mode: Option<String>,
    /// single, multi or pixel.
    #[arg(long, global = true)]
    pub view_mode: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Render a synthetic scene to feature, superpixel, flow, label and truth files.
    Generate,
    /// Find region correspondences for the target frame.
    Match,
    /// Predict the target frame with a trained head.
    Infer,
    /// Train the head on labeled target frames.
    Train,
    /// Score a prediction against ground truth.
    Eval,
    /// Multi-view accuracy as a function of the maximum frame distance.
    Sweep,
}

/// Resolves the config file and flag overrides into a pipeline config.
pub fn resolve_config(flags: &Flags) -> Result<PipelineConfig> {
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    let (mut pairs, base) = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let base = path.parent().map_or_else(|| cwd.clone(), |p| cwd.join(p));
            (parse_kv(&text)?, base)
        }
        None => (Vec::new(), cwd.clone()),
    };
    if let Some(v) = flags.seed {
        set_kv(&mut pairs, "seed", v.to_string());
    }
    if let Some(v) = flags.tau {
        set_kv(&mut pairs, "tau", v.to_string());
    }
    if let Some(v) = &flags.spatial_mode {
        set_kv(&mut pairs, "spatial_mode", v.as_str());
    }
    if let Some(v) = &flags.temporal_mode {
        set_kv(&mut pairs, "temporal_mode", v.as_str());
    }
    if let Some(v) = &flags.view_mode {
        set_kv(&mut pairs, "view_mode", v.as_str());
    }
    if let Some(v) = &flags.out {
        set_kv(&mut pairs, "out", cwd.join(v).to_string_lossy());
    }
    PipelineConfig::from_pairs(&pairs, &base)
}

/// Runs one command inside a thread pool of the requested size.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.flags)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.flags.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::Match => cmd_match(&cfg),
        Command::Infer => cmd_infer(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
    })
}

fn load_sequence(cfg: &PipelineConfig) -> Result<(Sequence, Option<Truth>)> {
    match &cfg.input {
        Some(Input::Scene(spec)) => {
            let bundle = generate(spec)?;
            Ok((bundle.sequence, Some(bundle.truth)))
        }
        Some(Input::Files {
            features,
            superpixels,
            flows,
            labels,
        }) => {
            let labels = labels.as_deref().map(io::load_labels).transpose()?;
            let seq = Sequence::new(
                io::load_features(features)?,
                io::load_superpixels(superpixels)?,
                io::load_flows(flows)?,
                labels.unwrap_or_default(),
            )?;
            Ok((seq, None))
        }
        None => Err(Error::Config(
            "no input: give scene.* keys or features/superpixels/flows files".into(),
        )),
    }
}

fn target_of(cfg: &PipelineConfig, frames: usize) -> Result<usize> {
    let t = cfg.target.unwrap_or(frames / 2);
    if t >= frames {
        return Err(Error::FrameOutOfRange { frame: t, frames });
    }
    Ok(t)
}

fn target_labels(seq: &Sequence, target: usize) -> Result<&LabelMap> {
    seq.labels
        .get(target)
        .ok_or_else(|| Error::Config(format!("no ground-truth labels for frame {target}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_bytes(path, text.as_bytes())
}

fn example_options(cfg: &PipelineConfig) -> ExampleOptions {
    ExampleOptions {
        view: cfg.view,
        policy: cfg.policy.clone(),
        tau: cfg.tau,
    }
}

fn pool_head(cfg: &PipelineConfig) -> Std2pHead {
    Std2pHead::new(cfg.spatial, cfg.temporal)
}

pub fn cmd_generate(cfg: &PipelineConfig) -> Result<()> {
    let Some(Input::Scene(spec)) = &cfg.input else {
        return Err(Error::InvalidSpec("generate needs a scene (scene.* keys)".into()));
    };
    let bundle = generate(spec)?;
    let seq = &bundle.sequence;
    let target = target_of(cfg, seq.frames())?;
    let out = &cfg.out;
    io::save_features(&out.join("features.tnsr"), &seq.features)?;
    io::save_superpixels(&out.join("superpixels.imap"), &seq.superpixels)?;
    io::save_flows(
        &out.join("flows.tnsr"),
        &seq.flows,
        seq.features.height(),
        seq.features.width(),
    )?;
    io::save_labels(&out.join("labels.imap"), &seq.labels)?;
    write_text(&out.join("truth.csv"), &bundle.truth.to_csv(target))?;
    println!(
        "generated {} frames of {}x{} with {} objects ({} regions) into {}",
        seq.frames(),
        seq.features.height(),
        seq.features.width(),
        spec.objects.len(),
        spec.num_regions(),
        out.display()
    );
    Ok(())
}

pub fn cmd_match(cfg: &PipelineConfig) -> Result<()> {
    let (seq, _) = load_sequence(cfg)?;
    let target = target_of(cfg, seq.frames())?;
    let sampled = sample_frames(seq.frames(), target, &cfg.policy)?;
    let c = build_table(target, &sampled, &seq.superpixels, &seq.flows, cfg.tau)?;
    for &frame in &c.frames {
        let n = c.table.matches().filter(|&(f, _, _)| f == frame).count();
        log::info!("frame {frame}: {n} region matches");
    }
    let stats = correspondence_stats(
        std::slice::from_ref(&c.table),
        &seq.superpixels,
        &default_size_edges(),
    );
    let out = &cfg.out;
    write_text(&out.join("correspondence.csv"), &c.table.to_csv())?;
    let dims = [c.canonical.frames(), c.canonical.height(), c.canonical.width()];
    io::write_bytes(
        &out.join("canonical.imap"),
        &io::encode_imap(&dims, c.canonical.labels()),
    )?;
    write_text(&out.join("stats.csv"), &stats_csv(&stats))?;
    println!(
        "matched {} target regions across {} frames: {} correspondences at tau {}",
        c.table.regions.len(),
        c.frames.len(),
        c.table.matches().count(),
        cfg.tau
    );
    Ok(())
}

fn save_model(path: &Path, head: &LinearHead, opt: &Sgd, meta: &str) -> Result<()> {
    let (ncl, ch) = (head.classes(), head.channels());
    let mut data = head.params().to_vec();
    data.extend_from_slice(opt.velocity());
    io::write_bytes(path, &io::encode_tnsr(&[2, ncl, ch + 1], &data, io::Dtype::F64))?;
    write_text(&path.with_extension("meta"), meta)
}

/// Parameters, velocity and the number of epochs already run.
fn load_model(path: &Path) -> Result<(LinearHead, Vec<f64>, usize)> {
    if !path.exists() {
        return Err(Error::MissingModel(path.to_path_buf()));
    }
    let t = io::read_tnsr(path)?;
    let &[2, ncl, width] = t.dims.as_slice() else {
        return Err(Error::format(path, "model tensor must be (2, classes, channels + 1)"));
    };
    if width < 2 {
        return Err(Error::format(path, "model has no feature channels"));
    }
    let half = ncl * width;
    let head = LinearHead::from_params(ncl, width - 1, t.data[..half].to_vec())?;
    let velocity = t.data[half..].to_vec();
    let meta_path = path.with_extension("meta");
    let epochs = match std::fs::read_to_string(&meta_path) {
        Ok(text) => {
            let kv = parse_kv(&text)?;
            kv.iter()
                .find(|(k, _)| k == "epochs_done")
                .map(|(_, v)| {
                    v.parse()
                        .map_err(|_| Error::format(&meta_path, "epochs_done is not a count"))
                })
                .transpose()?
                .unwrap_or(0)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
        Err(e) => return Err(Error::io(&meta_path, e)),
    };
    Ok((head, velocity, epochs))
}

fn class_count(cfg: &PipelineConfig, maps: &[&LabelMap]) -> usize {
    if let Some(c) = cfg.classes {
        return c;
    }
    if let Some(Input::Scene(spec)) = &cfg.input {
        return spec.classes;
    }
    maps.iter()
        .flat_map(|m| m.labels().iter().copied())
        .filter(|&l| l != IGNORE_LABEL)
        .max()
        .map_or(1, |m| m as usize + 1)
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    let (seq, _) = load_sequence(cfg)?;
    let targets = if cfg.train.targets.is_empty() {
        vec![target_of(cfg, seq.frames())?]
    } else {
        cfg.train.targets.clone()
    };
    let opts = example_options(cfg);
    let mut label_maps = Vec::new();
    let mut examples = Vec::with_capacity(targets.len());
    for &t in &targets {
        if t >= seq.frames() {
            return Err(Error::FrameOutOfRange {
                frame: t,
                frames: seq.frames(),
            });
        }
        label_maps.push(target_labels(&seq, t)?);
        let opts = ExampleOptions {
            policy: crate::correspond::SamplingPolicy {
                seed: SeedStream::new(cfg.seed).child("sampling", t as u64).seed(),
                ..opts.policy.clone()
            },
            ..opts.clone()
        };
        examples.push(prepare_example(&seq, t, &opts)?);
    }
    let classes = class_count(cfg, &label_maps);
    let channels = seq.features.channels();
    let s = &cfg.train;
    let mut head = LinearHead::new(classes, channels);
    let mut opt = Sgd::new(s.lr, s.momentum, s.weight_decay, head.params().len());
    let mut done = 0;
    let model_path = cfg.model_path();
    if s.resume && model_path.exists() {
        let (loaded, velocity, epochs) = load_model(&model_path)?;
        if (loaded.classes(), loaded.channels()) != (classes, channels) {
            return Err(Error::ShapeMismatch(format!(
                "model is {}x{}, data needs {classes} classes and {channels} channels",
                loaded.classes(),
                loaded.channels()
            )));
        }
        head = loaded;
        opt.set_velocity(velocity)?;
        done = epochs;
    }
    let tc = TrainConfig {
        epochs: s.epochs,
        start_epoch: done,
        shuffle: s.shuffle,
        seed: cfg.seed,
    };
    let trace = train(&examples, &mut head, pool_head(cfg), &mut opt, &tc)?;

    let mut loss_csv = String::from("epoch,loss\n");
    for (k, loss) in trace.iter().enumerate() {
        let _ = writeln!(loss_csv, "{},{loss}", done + k);
    }
    let meta = format!(
        "classes = {classes}\nchannels = {channels}\nepochs_done = {}\nseed = {}\n\
         spatial_mode = {}\ntemporal_mode = {}\nview_mode = {}\n\
         lr = {}\nmomentum = {}\nweight_decay = {}\n",
        done + s.epochs,
        cfg.seed,
        cfg.spatial.name(),
        cfg.temporal.name(),
        cfg.view.name(),
        s.lr,
        s.momentum,
        s.weight_decay
    );
    save_model(&model_path, &head, &opt, &meta)?;
    write_text(&cfg.out.join("loss.csv"), &loss_csv)?;
    match trace.last() {
        Some(loss) => println!(
            "trained {} epochs on {} targets, final loss {loss:.6}",
            s.epochs,
            examples.len()
        ),
        None => println!("no epochs run; model saved unchanged"),
    }
    Ok(())
}

pub fn cmd_infer(cfg: &PipelineConfig) -> Result<()> {
    let (head, _, _) = load_model(&cfg.model_path())?;
    let (seq, _) = load_sequence(cfg)?;
    let target = target_of(cfg, seq.frames())?;
    let ex = prepare_example(&seq, target, &example_options(cfg))?;
    let (scores, pred) = predict(&head, pool_head(cfg), &ex)?;
    let out = &cfg.out;
    io::write_bytes(
        &out.join("prediction.imap"),
        &io::encode_imap(&[pred.height(), pred.width()], pred.labels()),
    )?;
    io::write_bytes(
        &out.join("scores.tnsr"),
        &io::encode_tnsr(
            &[scores.channels(), scores.height(), scores.width()],
            scores.data(),
            io::Dtype::F64,
        ),
    )?;
    println!(
        "predicted frame {target} ({} view, {}/{} pooling) into {}",
        cfg.view.name(),
        cfg.spatial.name(),
        cfg.temporal.name(),
        out.display()
    );
    Ok(())
}

fn metric_rows(out: &mut String, prefix: &str, m: &Metrics) {
    for (name, v) in m.rows() {
        let _ = writeln!(out, "{prefix}{name},{v}");
    }
}

pub fn cmd_eval(cfg: &PipelineConfig) -> Result<()> {
    let (seq, _) = load_sequence(cfg)?;
    let target = target_of(cfg, seq.frames())?;
    let gt = target_labels(&seq, target)?;
    let pred_path = cfg.prediction_path();
    let pred = io::load_labels(&pred_path)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::format(&pred_path, "no label map"))?;
    let classes = class_count(cfg, &[gt, &pred]);
    let mut cm = ConfusionMatrix::new(classes);
    cm.accumulate(&pred, gt)?;
    let m = metrics(&cm)?;
    let b = boundary_pr(&pred, gt, cfg.bpr_tolerance)?;

    let mut csv = m.to_csv();
    let _ = writeln!(csv, "bpr_precision,{}", b.precision);
    let _ = writeln!(csv, "bpr_recall,{}", b.recall);
    let _ = writeln!(csv, "bpr_f_measure,{}", b.f_measure);
    print!("{m}");
    println!("boundary   P {:.3} R {:.3} F {:.3} (tolerance {} px)", b.precision, b.recall, b.f_measure, cfg.bpr_tolerance);

    if cfg.oracle {
        let oracle = oracle_label(&seq.superpixels, target, gt)?;
        let mut ocm = ConfusionMatrix::new(classes);
        ocm.accumulate(&oracle, gt)?;
        let om = metrics(&ocm)?;
        metric_rows(&mut csv, "oracle_", &om);
        println!("oracle pixel accuracy {:.2}%", 100.0 * om.pixel_acc);
        if let Some(r) = cfg.oracle_reference {
            let reference = target_labels(&seq, r)?;
            let c = build_table(target, &[r, target], &seq.superpixels, &seq.flows, cfg.tau)?;
            let (prop, coverage) = oracle_propagate(&c.table, &seq.superpixels, r, reference)?;
            let mut pcm = ConfusionMatrix::new(classes);
            pcm.accumulate(&prop, gt)?;
            let _ = writeln!(csv, "propagated_coverage,{coverage}");
            if pcm.total() > 0 {
                metric_rows(&mut csv, "propagated_", &metrics(&pcm)?);
            }
            println!("propagated from frame {r}: coverage {:.2}%", 100.0 * coverage);
        }
    }
    write_text(&cfg.out.join("metrics.csv"), &csv)?;
    write_text(&cfg.out.join("bpr.csv"), &bpr_curve_csv(&pred, gt, &cfg.bpr_curve)?)?;
    Ok(())
}

pub fn cmd_sweep(cfg: &PipelineConfig) -> Result<()> {
    let s = &cfg.sweep;
    if s.trials == 0 {
        return Err(Error::Config("sweep.trials must be at least 1".into()));
    }
    let base = Benchmark {
        scene: BandedScene {
            noise_std: s.noise_std,
            ..BandedScene::default()
        },
        flow_noise: s.flow_noise,
        train_scenes: s.train_scenes,
        test_scenes: s.test_scenes,
        policy: cfg.policy.clone(),
        tau: cfg.tau,
        epochs: cfg.train.epochs,
        lr: cfg.train.lr,
        momentum: cfg.train.momentum,
        weight_decay: cfg.train.weight_decay,
        ..Benchmark::default()
    };
    let variant = Variant {
        view: cfg.view,
        pool: pool_head(cfg),
    };
    let seeds = SeedStream::new(cfg.seed);
    let mut csv = String::from("max_distance,direction,pixel_acc,mean_acc,mean_iou,fw_iou\n");
    for &direction in &s.directions {
        for &d in &s.max_distances {
            let mut bench = base.clone();
            bench.policy.max_distance = Some(d);
            bench.policy.direction = direction;
            let mut sum = [0.0; 4];
            for t in 0..s.trials {
                let m = bench.run(seeds.child("sweep-trial", t as u64).seed(), &[variant])?[0];
                for (acc, (_, v)) in sum.iter_mut().zip(m.rows()) {
                    *acc += v;
                }
            }
            let mean = sum.map(|v| v / s.trials as f64);
            let _ = writeln!(
                csv,
                "{d},{},{},{},{},{}",
                direction_name(direction),
                mean[0],
                mean[1],
                mean[2],
                mean[3]
            );
            log::info!("max distance {d} ({}): mean IoU {:.4}", direction_name(direction), mean[2]);
        }
    }
    write_text(&cfg.out.join("sweep.csv"), &csv)?;
    println!("sweep written to {}", cfg.out.join("sweep.csv").display());
    Ok(())
}
