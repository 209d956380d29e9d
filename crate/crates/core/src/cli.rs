//! Command-line shell: detection, dataset evaluation, cost reporting,
//! built-in self checks, benchmarking, and weight initialization.
//!
//! Every command is deterministic given identical inputs: JSON output is
//! emitted with sorted keys, and files are written atomically (temp file
//! plus rename) so interrupted runs never leave partial outputs.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::demo;
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, EvalDetection, EvalOptions};
use crate::imageio::{self, ImageBuf};
use crate::model::{
    build_baseline_graph, build_detector_graph, count_costs, init_weights, prefix_totals,
    validate_store, CostTotals, LayerCost, ModelConfig, WeightStore,
};
use crate::oracle;
use crate::postprocess::{
    apply_inverse, decode_predictions, letterbox_image, letterbox_map, nms, Detection,
};
use crate::render::render_detections;
use crate::tensor::{Prng, Tensor};

#[derive(Parser)]
#[command(
    name = "defectdet",
    about = "Lightweight metallic-surface defect detector: inference, evaluation, and cost analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the detector on one image and emit detections as JSON.
    Detect {
        /// Weight file to load.
        #[arg(long)]
        weights: PathBuf,
        /// Input image (binary PPM or PGM).
        #[arg(long)]
        image: PathBuf,
        /// Score threshold for keeping detections.
        #[arg(long, default_value_t = 0.25)]
        conf: f32,
        /// Overlap threshold for suppression.
        #[arg(long, default_value_t = 0.45)]
        iou: f32,
        /// Number of defect classes.
        #[arg(long, default_value_t = 6)]
        classes: usize,
        /// Write a rendered copy of the image with boxes (binary PPM).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the detections JSON to a file as well as stdout.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Evaluate the detector over an image directory against annotations.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        /// Directory of .pgm/.ppm images.
        #[arg(long)]
        images: PathBuf,
        /// Directory of annotation .txt files named after image stems.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        classes: usize,
    },
    /// Report parameter and multiply-accumulate counts.
    Flops {
        #[arg(long, default_value_t = 6)]
        classes: usize,
        /// Include the per-layer breakdown of the reference network.
        #[arg(long)]
        baseline: bool,
    },
    /// Run the built-in reference checks; exit 0 only if all pass.
    Selftest,
    /// Measure per-image latency over repeated runs.
    Bench {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Number of timed iterations.
        #[arg(long)]
        iters: usize,
    },
    /// Write a deterministic, seeded weight file.
    InitWeights {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses argv and runs one command, returning the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 2 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Detect {
            weights,
            image,
            conf,
            iou,
            classes,
            out,
            json,
        } => cmd_detect(&weights, &image, conf, iou, classes, out.as_deref(), json.as_deref()),
        Command::Eval {
            weights,
            images,
            labels,
            classes,
        } => cmd_eval(&weights, &images, &labels, classes),
        Command::Flops { classes, baseline } => cmd_flops(classes, baseline),
        Command::Selftest => cmd_selftest(),
        Command::Bench {
            weights,
            image,
            iters,
        } => cmd_bench(&weights, &image, iters),
        Command::InitWeights { seed, classes, out } => cmd_init_weights(seed, classes, &out),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Serializes with sorted keys (routing through a JSON value makes the
/// object ordering canonical) and a trailing newline.
fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Format(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes via a sibling temp file and rename so a failed run cannot leave
/// a partial file behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn load_store(path: &Path) -> Result<WeightStore> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Store(format!("cannot read weights {}: {e}", path.display())))?;
    WeightStore::from_bytes(&bytes)
}

/// Loads weights and checks them against the detector graph for this
/// configuration before any inference work starts.
fn load_model(cfg: &ModelConfig, weights: &Path) -> Result<WeightStore> {
    let store = load_store(weights)?;
    let det = build_detector_graph(cfg, cfg.input_size)?;
    validate_store(&det.graph, &store)?;
    Ok(store)
}

/// Letterboxes, runs the network, decodes, suppresses, and maps boxes back
/// to original-image pixels.
fn detect_image(
    cfg: &ModelConfig,
    store: &WeightStore,
    image: &ImageBuf,
    conf: f32,
    iou: f32,
) -> Result<Vec<Detection>> {
    let tensor = imageio::image_to_tensor(image)?;
    let (model_h, model_w) = cfg.input_size;
    let (canvas, transform) = letterbox_image(&tensor, model_w, model_h)?;
    let [p3, p4, p5] = crate::model::run_detector(cfg, store, &canvas)?;
    let raw = decode_predictions(&[&p3, &p4, &p5], &cfg.anchors, conf)?;
    let kept = nms(&raw, iou);
    Ok(kept.iter().map(|d| apply_inverse(&transform, d)).collect())
}

#[derive(Serialize)]
struct DetectionOut {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class_id: usize,
    class_name: String,
    score: f64,
}

#[derive(Serialize)]
struct DetectOut {
    detections: Vec<DetectionOut>,
}

fn detections_to_json(dets: &[Detection], cfg: &ModelConfig) -> Result<String> {
    let out = DetectOut {
        detections: dets
            .iter()
            .map(|d| DetectionOut {
                bbox: [
                    d.bbox.x1 as f64,
                    d.bbox.y1 as f64,
                    d.bbox.x2 as f64,
                    d.bbox.y2 as f64,
                ],
                class_id: d.class_id,
                class_name: cfg.class_names[d.class_id].clone(),
                score: d.score as f64,
            })
            .collect(),
    };
    to_sorted_json(&out)
}

fn cmd_detect(
    weights: &Path,
    image_path: &Path,
    conf: f32,
    iou: f32,
    classes: usize,
    out: Option<&Path>,
    json: Option<&Path>,
) -> Result<()> {
    let cfg = ModelConfig::for_classes(classes);
    let store = load_model(&cfg, weights)?;
    let image = imageio::read_image(image_path)?;
    let dets = detect_image(&cfg, &store, &image, conf, iou)?;
    let body = detections_to_json(&dets, &cfg)?;
    if let Some(path) = json {
        write_atomic(path, body.as_bytes())?;
    }
    if let Some(path) = out {
        let rendered = render_detections(&image, &dets);
        write_atomic(path, &imageio::encode_ppm(&rendered))?;
    }
    print!("{body}");
    Ok(())
}

#[derive(Serialize)]
struct ClassOut {
    ap: f64,
    ap_defined: bool,
    #[serde(rename = "fn")]
    fn_count: usize,
    fp: usize,
    gt: usize,
    name: String,
    recall: f64,
    tp: usize,
}

#[derive(Serialize)]
struct EvalOut {
    classes: Vec<ClassOut>,
    image_recall: f64,
    images: usize,
    images_with_gt: usize,
    map50: f64,
}

/// Detection score threshold used during evaluation: kept low so the
/// precision-recall curve is sampled over nearly the whole score range.
const EVAL_CONF: f32 = 1e-3;
const EVAL_NMS_IOU: f32 = 0.45;

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no .pgm or .ppm images in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn cmd_eval(weights: &Path, images_dir: &Path, labels_dir: &Path, classes: usize) -> Result<()> {
    let cfg = ModelConfig::for_classes(classes);
    let store = load_model(&cfg, weights)?;
    let files = list_images(images_dir)?;

    let mut all_dets: Vec<EvalDetection> = Vec::new();
    let mut all_gts = Vec::new();
    for path in &files {
        let image_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("unusable file name {}", path.display())))?
            .to_string();
        let image = imageio::read_image(path)?;
        let dets = detect_image(&cfg, &store, &image, EVAL_CONF, EVAL_NMS_IOU)?;
        all_dets.extend(dets.into_iter().map(|detection| EvalDetection {
            image_id: image_id.clone(),
            detection,
        }));
        // A missing annotation file means a defect-free image.
        let label_path = labels_dir.join(format!("{image_id}.txt"));
        if label_path.exists() {
            let text = std::fs::read_to_string(&label_path)
                .map_err(|e| Error::Data(format!("cannot read {}: {e}", label_path.display())))?;
            all_gts.extend(imageio::parse_annotations(
                &text,
                &image_id,
                image.width,
                image.height,
                classes,
            )?);
        }
    }

    let report = evaluate_dataset(&all_dets, &all_gts, &cfg.class_names, &EvalOptions::default())?;
    let out = EvalOut {
        classes: report
            .classes
            .iter()
            .map(|c| ClassOut {
                ap: c.ap,
                ap_defined: c.ap_defined,
                fn_count: c.fn_count,
                fp: c.fp,
                gt: c.gt,
                name: c.name.clone(),
                recall: c.recall,
                tp: c.tp,
            })
            .collect(),
        image_recall: report.image_recall,
        images: files.len(),
        images_with_gt: report.images_with_gt,
        map50: report.map50,
    };
    print!("{}", to_sorted_json(&out)?);
    Ok(())
}

#[derive(Serialize)]
struct FlopsOut {
    baseline_macs: u64,
    baseline_params: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_layers: Option<Vec<LayerCost>>,
    classes: usize,
    input_size: [usize; 2],
    /// Backbone-only totals, comparable against the reference backbone.
    proposed_macs: u64,
    proposed_params: u64,
    /// Whole-detector totals (backbone, neck, heads).
    proposed_total_macs: u64,
    proposed_total_params: u64,
    sections: std::collections::BTreeMap<String, CostTotals>,
}

fn cmd_flops(classes: usize, baseline_detail: bool) -> Result<()> {
    let cfg = ModelConfig::for_classes(classes);
    let det = build_detector_graph(&cfg, cfg.input_size)?;
    let backbone = prefix_totals(&det.graph, "backbone.")?;
    let neck = prefix_totals(&det.graph, "neck.")?;
    let head = prefix_totals(&det.graph, "head.")?;
    let total = count_costs(det.graph.records())?.totals;

    let baseline_graph = build_baseline_graph(cfg.input_size)?;
    let baseline = count_costs(baseline_graph.records())?;

    let mut sections = std::collections::BTreeMap::new();
    sections.insert("backbone".to_string(), backbone);
    sections.insert("neck".to_string(), neck);
    sections.insert("head".to_string(), head);
    sections.insert("total".to_string(), total);

    let out = FlopsOut {
        baseline_macs: baseline.totals.macs,
        baseline_params: baseline.totals.params,
        baseline_layers: baseline_detail.then_some(baseline.layers),
        classes,
        input_size: [cfg.input_size.0, cfg.input_size.1],
        proposed_macs: backbone.macs,
        proposed_params: backbone.params,
        proposed_total_macs: total.macs,
        proposed_total_params: total.params,
        sections,
    };
    print!("{}", to_sorted_json(&out)?);
    Ok(())
}

fn cmd_init_weights(seed: u64, classes: usize, out: &Path) -> Result<()> {
    let cfg = ModelConfig::for_classes(classes);
    let det = build_detector_graph(&cfg, cfg.input_size)?;
    let store = init_weights(&det.graph, seed)?;
    write_atomic(out, &store.to_bytes()?)?;
    println!("wrote {} records to {}", store.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct BenchOut {
    iters: usize,
    mean_ms: f64,
    p50_ms: f64,
    p95_ms: f64,
}

fn percentile(sorted_ms: &[f64], q: f64) -> f64 {
    let n = sorted_ms.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted_ms[rank - 1]
}

fn cmd_bench(weights: &Path, image_path: &Path, iters: usize) -> Result<()> {
    if iters == 0 {
        return Err(Error::Param("iteration count must be positive".into()));
    }
    let cfg = ModelConfig::for_classes(6);
    let store = load_model(&cfg, weights)?;
    let image = imageio::read_image(image_path)?;
    // Untimed warm-up run.
    detect_image(&cfg, &store, &image, 0.25, 0.45)?;
    let mut ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        detect_image(&cfg, &store, &image, 0.25, 0.45)?;
        ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = ms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let out = BenchOut {
        iters,
        mean_ms: ms.iter().sum::<f64>() / iters as f64,
        p50_ms: percentile(&sorted, 0.50),
        p95_ms: percentile(&sorted, 0.95),
    };
    print!("{}", to_sorted_json(&out)?);
    Ok(())
}

// ---------------------------------------------------------------------
// Self-check suites: compact reruns of the reference comparisons, usable
// from a shipped binary without the test harness.
// ---------------------------------------------------------------------

fn ensure(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Analysis(msg.into()))
    }
}

fn check_convolution() -> Result<()> {
    use crate::ops::{conv2d, ConvParams};
    let mut prng = Prng::new(101);
    for case in 0..24u64 {
        let groups = [1usize, 2, 3, 4][(case % 4) as usize];
        let cin = groups * (1 + (prng.next_u64() % 3) as usize);
        let cout = groups * (1 + (prng.next_u64() % 3) as usize);
        let k = 1 + 2 * (prng.next_u64() % 2) as usize;
        let stride = 1 + (prng.next_u64() % 2) as usize;
        let pad = (prng.next_u64() % 2) as usize;
        let h = k + 3 + (prng.next_u64() % 4) as usize;
        let w = k + 3 + (prng.next_u64() % 4) as usize;
        let p = ConvParams::new(cin, cout, (k, k), (stride, stride), (pad, pad), groups);
        let x = oracle::random_tensor(&mut prng, (1, cin, h, w), -1.0, 1.0)?;
        let wt = oracle::random_tensor(&mut prng, (cout, cin / groups, k, k), -1.0, 1.0)?;
        let bias: Vec<f32> = (0..cout).map(|_| prng.uniform() as f32 - 0.5).collect();
        let fast = conv2d(&x, &wt, Some(&bias), &p)?;
        let slow = oracle::conv2d_naive(&x, &wt, Some(&bias), &p)?;
        let diff = oracle::max_abs_diff(&fast, &slow)?;
        ensure(diff <= 1e-5, format!("convolution case {case}: diff {diff}"))?;
    }
    Ok(())
}

fn check_shuffle() -> Result<()> {
    use crate::ops::channel_shuffle;
    let mut prng = Prng::new(102);
    for c in 1..=24usize {
        for g in 1..=c {
            if c % g != 0 {
                continue;
            }
            let x = oracle::random_tensor(&mut prng, (1, c, 2, 2), -1.0, 1.0)?;
            let once = channel_shuffle(&x, g)?;
            let back = channel_shuffle(&once, c / g)?;
            ensure(back.data() == x.data(), format!("shuffle inverse failed c={c} g={g}"))?;
            let mut a: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u32> = once.data().iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            ensure(a == b, format!("shuffle multiset failed c={c} g={g}"))?;
        }
    }
    Ok(())
}

fn check_separable_costs() -> Result<()> {
    let (sep, std) = crate::model::flops::separable_pair_macs(3, 16, 32, 8, 8)?;
    ensure(sep == 41_984 && std == 294_912, format!("worked case gave {sep}/{std}"))?;
    for (k, c_in, c_out) in [(1usize, 4usize, 8usize), (3, 8, 16), (5, 7, 9), (7, 3, 5)] {
        ensure(
            crate::model::flops::separable_identity_holds(k, c_in, c_out, 10, 12)?,
            format!("identity failed k={k} cin={c_in} cout={c_out}"),
        )?;
    }
    Ok(())
}

fn check_decode() -> Result<()> {
    let cfg = ModelConfig::for_classes(6);
    let mut prng = Prng::new(103);
    let p3 = oracle::random_tensor(&mut prng, (1, 33, 4, 4), -3.0, 3.0)?;
    let p4 = oracle::random_tensor(&mut prng, (1, 33, 2, 2), -3.0, 3.0)?;
    let p5 = oracle::random_tensor(&mut prng, (1, 33, 1, 1), -3.0, 3.0)?;
    let fast = decode_predictions(&[&p3, &p4, &p5], &cfg.anchors, 0.3)?;
    let slow = oracle::decode_slow(&[&p3, &p4, &p5], &cfg.anchors, 0.3)?;
    ensure(fast.len() == slow.len(), format!("decode count {} vs {}", fast.len(), slow.len()))?;
    for (a, b) in fast.iter().zip(&slow) {
        ensure(
            a.class_id == b.class_id
                && (a.score - b.score).abs() <= 1e-6
                && (a.bbox.x1 - b.bbox.x1).abs() <= 1e-6
                && (a.bbox.y2 - b.bbox.y2).abs() <= 1e-6,
            "decode mismatch".to_string(),
        )?;
    }
    Ok(())
}

fn check_suppression() -> Result<()> {
    let mut prng = Prng::new(104);
    for scene in 0..40 {
        let count = (prng.next_u64() % 41) as usize;
        let dets = oracle::random_detections(&mut prng, count, 3, 24.0);
        let fast = nms(&dets, 0.5);
        let slow = oracle::nms_brute(&dets, 0.5);
        ensure(fast == slow, format!("suppression scene {scene} diverged"))?;
    }
    Ok(())
}

fn check_evaluation() -> Result<()> {
    use crate::eval::average_precision;
    let labeled = [(0.9f32, true), (0.8, false), (0.7, true)];
    let ap = average_precision(&labeled, 2, false);
    ensure((ap.ap - 5.0 / 6.0).abs() < 1e-12, format!("hand AP case gave {}", ap.ap))?;

    let set = demo::dataset();
    let gts = demo::ground_truths(&set);
    let names = crate::model::default_class_names(6);
    let perfect = evaluate_dataset(&demo::perfect_detections(&set), &gts, &names, &EvalOptions::default())?;
    ensure(
        (perfect.map50 - 1.0).abs() < 1e-12 && (perfect.image_recall - 1.0).abs() < 1e-12,
        format!("perfect detector scored {}", perfect.map50),
    )?;

    let corrupted = demo::corrupted_detections(&set);
    let main = evaluate_dataset(&corrupted, &gts, &names, &EvalOptions::default())?;
    let reference = oracle::evaluate_reference(&corrupted, &gts, 6, 0.5);
    ensure(
        (main.map50 - reference.map50).abs() < 1e-12,
        format!("evaluators disagree: {} vs {}", main.map50, reference.map50),
    )
}

fn check_letterbox() -> Result<()> {
    for (iw, ih) in [(200usize, 100usize), (640, 640), (123, 457)] {
        let t = letterbox_map(iw, ih, 640, 640)?;
        for (x, y) in [(0.0f64, 0.0f64), (iw as f64, ih as f64), (iw as f64 / 3.0, ih as f64 / 7.0)] {
            let (mx, my) = t.map_forward(x, y);
            let (bx, by) = t.map_inverse(mx, my);
            ensure(
                (bx - x).abs() <= 1e-6 && (by - y).abs() <= 1e-6,
                format!("letterbox round trip failed for {iw}x{ih} at ({x}, {y})"),
            )?;
        }
    }
    Ok(())
}

fn check_weight_store() -> Result<()> {
    let mut store = WeightStore::new();
    store.insert("w", Tensor::from_vec((1, 1, 2, 2), vec![1.0, -2.5, 0.0, 3.25])?)?;
    store.insert("b", Tensor::from_vec((1, 2, 1, 1), vec![0.5, -0.5])?)?;
    let bytes = store.to_bytes()?;
    let back = WeightStore::from_bytes(&bytes)?;
    ensure(back.to_bytes()? == bytes, "weight bytes changed across a round trip")
}

fn check_image_codec() -> Result<()> {
    let mut prng = Prng::new(105);
    let rgb: Vec<u8> = (0..5 * 4 * 3).map(|_| (prng.next_u64() % 256) as u8).collect();
    let img = ImageBuf::new(5, 4, rgb)?;
    let back = imageio::decode_image(&imageio::encode_ppm(&img))?;
    ensure(back == img, "image bytes changed across a round trip")
}

fn cmd_selftest() -> Result<()> {
    let suites: [(&str, fn() -> Result<()>); 9] = [
        ("convolution vs naive reference", check_convolution),
        ("channel shuffle laws", check_shuffle),
        ("separable cost identity", check_separable_costs),
        ("head decoding vs slow reference", check_decode),
        ("suppression vs brute force", check_suppression),
        ("evaluation hand cases and reference", check_evaluation),
        ("letterbox round trip", check_letterbox),
        ("weight store round trip", check_weight_store),
        ("image codec round trip", check_image_codec),
    ];
    let mut failures = 0;
    for (name, run) in suites {
        match run() {
            Ok(()) => println!("ok {name}"),
            Err(e) => {
                println!("FAILED {name}: {e}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(Error::Analysis(format!("{failures} self-check suite(s) failed")));
    }
    println!("all checks passed");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flags_exit_with_usage_error() {
        assert_eq!(run_cli(["defectdet", "detect", "--bogus"]), 2);
        assert_eq!(run_cli(["defectdet", "no-such-command"]), 2);
    }

    #[test]
    fn missing_weight_file_exits_nonzero() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("absent.bin");
        let img = dir.path().join("x.pgm");
        std::fs::write(&img, imageio::encode_pgm(&[0u8; 4], 2, 2).unwrap()).unwrap();
        let code = run_cli([
            "defectdet",
            "detect",
            "--weights",
            missing.to_str().unwrap(),
            "--image",
            img.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn init_weights_writes_a_loadable_store() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("w.bin");
        let code = run_cli([
            "defectdet",
            "init-weights",
            "--seed",
            "7",
            "--classes",
            "6",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let store = load_store(&out).unwrap();
        assert!(store.len() > 100);
        // Same seed, same bytes.
        let out2 = dir.path().join("w2.bin");
        assert_eq!(
            run_cli([
                "defectdet",
                "init-weights",
                "--seed",
                "7",
                "--classes",
                "6",
                "--out",
                out2.to_str().unwrap(),
            ]),
            0
        );
        assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&out2).unwrap());
    }

    #[test]
    fn flops_command_succeeds() {
        assert_eq!(run_cli(["defectdet", "flops", "--classes", "6"]), 0);
        assert_eq!(run_cli(["defectdet", "flops", "--classes", "10", "--baseline"]), 0);
    }

    #[test]
    fn sorted_json_is_deterministic_and_ordered() {
        #[derive(Serialize)]
        struct Sample {
            zebra: u32,
            alpha: u32,
        }
        let s = to_sorted_json(&Sample { zebra: 1, alpha: 2 }).unwrap();
        let a = s.find("alpha").unwrap();
        let z = s.find("zebra").unwrap();
        assert!(a < z, "{s}");
    }

    #[test]
    fn percentile_uses_nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.50), 2.0);
        assert_eq!(percentile(&v, 0.95), 4.0);
        assert_eq!(percentile(&[7.0], 0.95), 7.0);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
    }
}
