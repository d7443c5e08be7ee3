//! The six commands. Each is a function of its configuration and inputs;
//! `main` only parses arguments and maps errors to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use slcmask_core::metrics::{evaluate, run_ablation_with, AblationRow, MetricsReport};
use slcmask_core::pipeline::{infer, train_with, Detection, Model, Sample, TrainLog};
use slcmask_core::rng::SeededRng;
use slcmask_core::slc::{closed_form_receptive_fields, impulse_probe, measure_receptive_field, probe_field, slc_layer_receptive_fields, FusedLayers, SlcConfig};
use slcmask_core::stats::{dataset_stats, train_test_split, Histogram};
use slcmask_core::synth::synth_scene;

use crate::config::{parse_grid, RunConfig};
use crate::error::{CliError, CliResult};
use crate::formats::{
    ablation_report, comment_block, decode_checkpoint, encode_checkpoint, loss_csv, metrics_report, metrics_row, parse_manifest,
    render_manifest, AnnotationFile, ManifestEntry, Split,
};
use crate::imageio::{read_png, write_png};
use crate::tiling::plan_tiles;

pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.conf";
pub const CHECKPOINT: &str = "model.ckpt";
pub const CHECKPOINT_LISTING: &str = "model.params";
pub const LOSS_LOG: &str = "loss.csv";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| CliError::corrupt(path, e.utf8_error().valid_up_to(), "not valid UTF-8"))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Runs `f` over `items` on up to `workers` threads, preserving order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(ci, part)| {
                let f = &f;
                s.spawn(move || part.iter().enumerate().map(|(j, t)| f(ci * chunk + j, t)).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Seed of scene `index` in a corpus generated under `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    SeededRng::indexed(seed, "scene", index as u64).next_u64()
}

fn histogram_lines(out: &mut String, title: &str, h: &Histogram) {
    let _ = writeln!(out, "{title}:");
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(out, "  [{:>7.2}, {:>7.2})  {c}", h.edges[i], h.edges[i + 1]);
    }
}

/// Generates `synth.count` scenes into `out`: `images/*.png`,
/// `annotations/*.ann`, the manifest and the resolved config. Returns the
/// printed statistics block.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, workers: usize) -> CliResult<String> {
    cfg.validate()?;
    let (images, anns) = (out.join("images"), out.join("annotations"));
    create_dir(&images)?;
    create_dir(&anns)?;
    let resolved = cfg.render();
    let n = cfg.synth.count;
    let (n_train, n_test) = train_test_split(n, cfg.synth.train_parts, cfg.synth.test_parts);
    let indices: Vec<usize> = (0..n).collect();
    let results = parallel_map(&indices, workers, |_, &i| -> CliResult<_> {
        let scene = synth_scene(&cfg.synth.scene, scene_seed(cfg.seed, i))?;
        let name = format!("scene_{i:05}");
        let image = format!("images/{name}.png");
        let annotations = format!("annotations/{name}.ann");
        write_png(&out.join(&image), &scene.image, &resolved)?;
        let mut file = AnnotationFile::whole_image(cfg.synth.scene.width, cfg.synth.scene.height, &scene.annotations);
        file.header = resolved.lines().map(|l| format!(" {l}")).collect();
        write(&out.join(&annotations), file.render())?;
        let split = if i < n_train { Split::Train } else { Split::Test };
        let shortfall = scene.shortfall();
        Ok((ManifestEntry { split, image, annotations }, scene.annotations, shortfall))
    });
    let mut entries = Vec::with_capacity(n);
    let mut all = Vec::new();
    let mut shortfall = 0;
    for r in results {
        let (e, a, s) = r?;
        entries.push(e);
        all.extend(a);
        shortfall += s;
    }
    write(&out.join(MANIFEST), render_manifest(&resolved, &entries))?;
    write(&out.join(CONFIG_FILE), &resolved)?;

    let mut report = String::new();
    let _ = writeln!(report, "scenes: {n} (train {n_train}, test {n_test}, {}:{} split)", cfg.synth.train_parts, cfg.synth.test_parts);
    let _ = writeln!(report, "instances: {}", all.len());
    if shortfall > 0 {
        let _ = writeln!(report, "ships not placed within the retry budget: {shortfall}");
    }
    match dataset_stats(&all) {
        Ok(stats) => {
            histogram_lines(&mut report, "instance scale sqrt(w*h)", &stats.scale_histogram);
            histogram_lines(&mut report, "aspect ratio max(w,h)/min(w,h)", &stats.aspect_histogram);
        }
        Err(_) => report.push_str("no instances; histograms omitted\n"),
    }
    Ok(report)
}

/// Train and test samples of a corpus directory.
pub fn load_corpus(dir: &Path) -> CliResult<(Vec<Sample>, Vec<Sample>)> {
    let manifest_path = dir.join(MANIFEST);
    let entries = parse_manifest(&read_text(&manifest_path)?, &manifest_path)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in entries {
        let image = read_png(&dir.join(&e.image))?;
        let ann_path = dir.join(&e.annotations);
        let file = AnnotationFile::parse(&read_text(&ann_path)?, &ann_path)?;
        let [_, _, h, w] = image.dims4("corpus").map_err(|err| CliError::from_core(&ann_path, err))?;
        let annotations = file.instances.iter().map(|r| r.to_annotation(w, h)).collect();
        let sample = Sample { image, annotations };
        match e.split {
            Split::Train => train.push(sample),
            Split::Test => test.push(sample),
        }
    }
    Ok((train, test))
}

/// Outcome of `train`.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
}

/// Trains on the corpus' train split and writes the checkpoint, its
/// parameter listing, the loss log and the resolved config into `out`.
pub fn cmd_train(cfg: &RunConfig, corpus: &Path, out: &Path, mut progress: impl FnMut(&str)) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    let (train_set, _) = load_corpus(corpus)?;
    if train_set.is_empty() {
        return Err(CliError::Usage(format!("{}: corpus has no training images", corpus.display())));
    }
    create_dir(out)?;
    let resolved = cfg.render();
    let mut model = Model::new(&cfg.pipeline, cfg.seed)?;
    let steps = train_set.len();
    let mut sum = 0.0;
    let log = train_with(&mut model, &train_set, cfg.seed, |r| {
        sum += r.terms.total();
        if r.iter + 1 == steps {
            progress(&format!("epoch {:>3}  mean loss {:.4}", r.epoch, sum / steps as f64));
            sum = 0.0;
        }
    })?;
    let (bin, listing) = encode_checkpoint(&model, &resolved);
    write(&out.join(CHECKPOINT), bin)?;
    write(&out.join(CHECKPOINT_LISTING), listing)?;
    write(&out.join(LOSS_LOG), loss_csv(&resolved, &log.records)?)?;
    write(&out.join(CONFIG_FILE), &resolved)?;
    Ok(TrainOutcome { model, log })
}

/// Builds the configured model and loads a checkpoint into it. `path` is
/// the `.ckpt` file or the directory holding it.
pub fn load_checkpoint(cfg: &RunConfig, path: &Path) -> CliResult<Model> {
    let bin_path = if path.is_dir() { path.join(CHECKPOINT) } else { path.to_path_buf() };
    let listing_path = bin_path.with_extension("params");
    let bin = fs::read(&bin_path).map_err(|e| CliError::io(&bin_path, e))?;
    let listing = read_text(&listing_path)?;
    let params = decode_checkpoint(&bin, &listing, &bin_path, &listing_path)?;
    let mut model = Model::new(&cfg.pipeline, cfg.seed)?;
    model
        .load_params(&params)
        .map_err(|e| CliError::corrupt(&listing_path, 0, format!("checkpoint does not fit the configured model: {e}")))?;
    Ok(model)
}

/// Detections for every sample, computed on up to `workers` threads.
pub fn infer_all(model: &Model, samples: &[Sample], workers: usize) -> CliResult<Vec<Vec<Detection>>> {
    parallel_map(samples, workers, |_, s| infer(model, &s.image))
        .into_iter()
        .map(|r| r.map_err(CliError::from))
        .collect()
}

pub fn evaluate_parallel(model: &Model, samples: &[Sample], iou: f64, workers: usize) -> CliResult<MetricsReport> {
    let dets = infer_all(model, samples, workers)?;
    let per_image: Vec<_> = dets.into_iter().zip(samples).map(|(d, s)| (d, s.annotations.clone())).collect();
    Ok(evaluate(&per_image, iou)?)
}

fn method_name(slc: &SlcConfig) -> String {
    if slc.enabled {
        format!("SLC({},{})", slc.r1, slc.r2)
    } else {
        "baseline".to_string()
    }
}

/// Evaluates a checkpoint on the corpus' test split; writes `report.csv`
/// and `report.txt` into `out` and returns the report with its table.
pub fn cmd_eval(cfg: &RunConfig, corpus: &Path, checkpoint: &Path, out: &Path, workers: usize) -> CliResult<(MetricsReport, String)> {
    cfg.validate()?;
    let (_, test_set) = load_corpus(corpus)?;
    let model = load_checkpoint(cfg, checkpoint)?;
    let report = evaluate_parallel(&model, &test_set, cfg.eval.iou_threshold, workers)?;
    let resolved = cfg.render();
    let (csv, table) = metrics_report(&resolved, &[metrics_row(&method_name(&cfg.pipeline.slc), &report)])?;
    create_dir(out)?;
    write(&out.join("report.csv"), csv)?;
    write(&out.join("report.txt"), &table)?;
    Ok((report, table))
}

/// Trains and evaluates every grid variant (rows run in parallel when
/// `workers > 1`); writes `ablation.csv` and `ablation.txt` into `out`.
pub fn cmd_ablate(cfg: &RunConfig, corpus: &Path, grid: Option<&Path>, out: &Path, workers: usize) -> CliResult<(Vec<AblationRow>, String)> {
    cfg.validate()?;
    let variants = match grid {
        Some(p) => parse_grid(&read_text(p)?, &cfg.pipeline.slc)?,
        None => slcmask_core::metrics::default_ablation_grid(),
    };
    let (train_set, test_set) = load_corpus(corpus)?;
    let iou = cfg.eval.iou_threshold;
    let rows: Vec<AblationRow> = parallel_map(&variants, workers, |_, v| {
        run_ablation_with(std::slice::from_ref(v), &train_set, &test_set, &cfg.pipeline, cfg.seed, |m, t| {
            let per_image: Vec<_> = t
                .iter()
                .map(|s| Ok((infer(m, &s.image)?, s.annotations.clone())))
                .collect::<slcmask_core::Result<_>>()?;
            evaluate(&per_image, iou)
        })
        .remove(0)
    });
    let resolved = cfg.render();
    let (csv, table) = ablation_report(&resolved, &rows)?;
    create_dir(out)?;
    write(&out.join("ablation.csv"), csv)?;
    write(&out.join("ablation.txt"), &table)?;
    Ok((rows, table))
}

/// Tiles one image around the centres in `centers` (`x y` per line). With
/// an annotation file in source coordinates, instances are remapped into
/// the tiles. Writes `tile_NNNNN.png` and `tiles.ann` into `out`.
pub fn cmd_tile(
    cfg: &RunConfig,
    image_path: &Path,
    centers_path: &Path,
    annotations: Option<&Path>,
    out: &Path,
    mut warn: impl FnMut(&str),
) -> CliResult<usize> {
    cfg.validate()?;
    let image = read_png(image_path)?;
    let [_, _, h, w] = image.dims4("tile").map_err(|e| CliError::from_core(image_path, e))?;
    let centers = parse_centers(&read_text(centers_path)?, centers_path)?;
    let instances = match annotations {
        Some(p) => AnnotationFile::parse(&read_text(p)?, p)?.instances,
        None => Vec::new(),
    };
    let plan = plan_tiles((w, h), &centers, &instances, &cfg.tiles)?;
    for &i in &plan.skipped {
        warn(&format!("centre {i} at {:?} lies outside the {w}x{h} image; skipped", centers[i]));
    }
    create_dir(out)?;
    let resolved = cfg.render();
    for (ti, t) in plan.tiles.iter().enumerate() {
        let (ox, oy) = t.origin();
        let (tw, th) = (t.bbox.width() as usize, t.bbox.height() as usize);
        let src = image.data();
        let crop = slcmask_core::Tensor::from_fn([1, 3, th, tw], |k| {
            let (c, y, x) = (k / (th * tw), (k / tw) % th, k % tw);
            src[(c * h + oy + y) * w + ox + x]
        });
        write_png(&out.join(format!("tile_{ti:05}.png")), &crop, &resolved)?;
    }
    let mut file = plan.file;
    file.header = resolved.lines().map(|l| format!(" {l}")).collect();
    write(&out.join("tiles.ann"), file.render())?;
    Ok(plan.tiles.len())
}

/// `x y` per line; `#` comments.
pub fn parse_centers(text: &str, path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::corrupt(path, start, format!("expected `x y`, got `{line}`")))?;
        match v.as_slice() {
            &[x, y] if x.is_finite() && y.is_finite() => out.push((x, y)),
            _ => return Err(CliError::corrupt(path, start, format!("expected `x y`, got `{line}`"))),
        }
    }
    Ok(out)
}

/// One row of the receptive-field table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfRow {
    pub layer: usize,
    pub analytic: usize,
    pub measured: usize,
}

/// Analytic and measured receptive field of every layer in `fused`;
/// `measure` returns the impulse-support width of a module built from the
/// given config (the real measurement in [`cmd_rf`]).
pub fn cmd_rf_with(
    r1: usize,
    r2: usize,
    fused: FusedLayers,
    measure: impl Fn(&SlcConfig) -> slcmask_core::Result<usize>,
) -> CliResult<(Vec<RfRow>, String)> {
    let analytic = slc_layer_receptive_fields(r1, r2)?;
    let closed = closed_form_receptive_fields(r1, r2);
    let mut rows = Vec::new();
    for layer in fused.layers() {
        let upto: Vec<usize> = (1..=layer).collect();
        let cfg = SlcConfig { r1, r2, channels: 1, fused_layers: FusedLayers::from_layers(&upto)?, ..SlcConfig::default() };
        rows.push(RfRow { layer, analytic: analytic[layer - 1], measured: measure(&cfg)? });
    }
    let mut table = String::new();
    let _ = writeln!(table, "rates r1={r1} r2={r2}, fused layers {fused}");
    let _ = writeln!(table, "layer  analytic  measured");
    for r in &rows {
        let _ = writeln!(table, "{:>5}  {:>8}  {:>8}", r.layer, r.analytic, r.measured);
    }
    let disagree: Vec<&RfRow> = rows.iter().filter(|r| r.analytic != r.measured).collect();
    if analytic != closed {
        return Err(CliError::Mismatch(format!("{table}fold {analytic:?} differs from closed form {closed:?}")));
    }
    if !disagree.is_empty() {
        return Err(CliError::Mismatch(format!("{table}analytic and measured receptive fields disagree at layer(s) {:?}", disagree.iter().map(|r| r.layer).collect::<Vec<_>>())));
    }
    Ok((rows, table))
}

/// [`cmd_rf_with`] using an all-ones impulse probe on a canvas large
/// enough to hold the support.
pub fn cmd_rf(r1: usize, r2: usize, fused: FusedLayers) -> CliResult<(Vec<RfRow>, String)> {
    if r1 == 0 || r2 == 0 {
        return Err(CliError::Usage("dilation rates must be >= 1".into()));
    }
    cmd_rf_with(r1, r2, fused, |cfg| measure_receptive_field(&impulse_probe(cfg)?, probe_field(cfg)))
}

/// Resolved configuration: defaults (or the desk preset), then `file`, then
/// overrides.
pub fn resolve_config(desk: bool, file: Option<&PathBuf>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut cfg = if desk { RunConfig::desk() } else { RunConfig::default() };
    if let Some(p) = file {
        cfg.apply_text(&read_text(p)?, &p.display().to_string())?;
    }
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

/// Commented config block for text outputs.
pub fn provenance(cfg: &RunConfig) -> String {
    comment_block(&cfg.render())
}
