//! Acceptance suite: one test per release criterion, each printing a
//! `criterion NN PASS` line on success (visible with `--nocapture`).
//! Run with:
//!
//! ```text
//! cargo test --test acceptance -- --nocapture
//! ```

use std::collections::HashSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use defectdet::demo;
use defectdet::eval::{average_precision, evaluate_dataset, EvalDetection, EvalOptions};
use defectdet::model::{
    build_baseline_graph, build_detector_graph, count_costs, default_class_names, flops,
    prefix_totals, ModelConfig, WeightStore,
};
use defectdet::ops::{channel_shuffle, conv2d, maxpool2d, sppf, ConvParams};
use defectdet::oracle;
use defectdet::postprocess::{nms, BoxXyxy, Detection};
use defectdet::tensor::{Prng, Tensor};

const BIN: &str = env!("CARGO_BIN_EXE_defectdet");

fn run_bin(args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("binary should launch")
}

fn assert_ok(out: &std::process::Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} exited with {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

// -------------------------------------------------------------------------
// 1. Operator oracle suite: >= 200 randomized convolution configurations
//    spanning point-wise, depth-wise, grouped, strided, and padded cases,
//    plus max-pooling and the pyramid-pooling block, all within 1e-5 of
//    naive references, in under 60 seconds.
// -------------------------------------------------------------------------
#[test]
fn criterion_01_operator_oracle_suite() {
    let start = Instant::now();
    let mut prng = Prng::new(0xACC1);
    let mut conv_cases = 0usize;
    let mut category_counts = [0usize; 5];

    while conv_cases < 200 {
        let category = conv_cases % 5;
        let pick = |prng: &mut Prng, lo: usize, hi: usize| {
            lo + (prng.next_u64() as usize) % (hi - lo + 1)
        };
        let (cin, cout, k, stride, pad, groups) = match category {
            // Point-wise: 1x1, stride 1, no padding.
            0 => (pick(&mut prng, 1, 12), pick(&mut prng, 1, 12), 1, 1, 0, 1),
            // Depth-wise: groups == channels.
            1 => {
                let c = pick(&mut prng, 1, 10);
                let k = [3, 5][pick(&mut prng, 0, 1)];
                (c, c, k, pick(&mut prng, 1, 2), pick(&mut prng, 0, 2), c)
            }
            // Grouped.
            2 => {
                let g = pick(&mut prng, 2, 4);
                let k = [1, 3][pick(&mut prng, 0, 1)];
                (
                    g * pick(&mut prng, 1, 3),
                    g * pick(&mut prng, 1, 3),
                    k,
                    pick(&mut prng, 1, 2),
                    pick(&mut prng, 0, 1),
                    g,
                )
            }
            // Strided and padded dense, including even kernels.
            3 => (
                pick(&mut prng, 1, 6),
                pick(&mut prng, 1, 6),
                pick(&mut prng, 2, 5),
                pick(&mut prng, 1, 3),
                pick(&mut prng, 0, 2),
                1,
            ),
            // Free-form.
            _ => {
                let g = pick(&mut prng, 1, 2);
                (
                    g * pick(&mut prng, 1, 4),
                    g * pick(&mut prng, 1, 4),
                    pick(&mut prng, 1, 4),
                    pick(&mut prng, 1, 2),
                    pick(&mut prng, 0, 2),
                    g,
                )
            }
        };
        let n = pick(&mut prng, 1, 2);
        let h = k + pick(&mut prng, 0, 6);
        let w = k + pick(&mut prng, 0, 6);
        let params = ConvParams::new(cin, cout, (k, k), (stride, stride), (pad, pad), groups);
        let x = oracle::random_tensor(&mut prng, (n, cin, h, w), -2.0, 2.0).unwrap();
        let wt =
            oracle::random_tensor(&mut prng, (cout, cin / groups, k, k), -1.5, 1.5).unwrap();
        let bias: Vec<f32> = (0..cout).map(|_| prng.uniform() as f32 - 0.5).collect();
        let bias_opt = if conv_cases % 2 == 0 { Some(bias.as_slice()) } else { None };

        let fast = conv2d(&x, &wt, bias_opt, &params).unwrap();
        let slow = oracle::conv2d_naive(&x, &wt, bias_opt, &params).unwrap();
        let diff = oracle::max_abs_diff(&fast, &slow).unwrap();
        assert!(
            diff <= 1e-5,
            "conv case {conv_cases} (cat {category}, cin={cin} cout={cout} k={k} s={stride} p={pad} g={groups}): diff {diff}"
        );
        category_counts[category] += 1;
        conv_cases += 1;
    }
    assert!(category_counts.iter().all(|&c| c >= 40), "{category_counts:?}");

    // Max pooling.
    for case in 0..40 {
        let k = [2usize, 3, 5][case % 3];
        let stride = 1 + (prng.next_u64() as usize) % 3;
        let pad = (prng.next_u64() as usize) % (k / 2 + 1).min(2);
        let c = 1 + (prng.next_u64() as usize) % 6;
        let h = k + (prng.next_u64() as usize) % 6;
        let w = k + (prng.next_u64() as usize) % 6;
        let x = oracle::random_tensor(&mut prng, (1, c, h, w), -3.0, 3.0).unwrap();
        let fast = maxpool2d(&x, (k, k), (stride, stride), (pad, pad)).unwrap();
        let slow = oracle::maxpool2d_naive(&x, (k, k), (stride, stride), (pad, pad)).unwrap();
        let diff = oracle::max_abs_diff(&fast, &slow).unwrap();
        assert!(diff <= 1e-5, "maxpool case {case}: diff {diff}");
    }

    // Pyramid pooling block.
    for case in 0..8 {
        let c = [2usize, 4, 8, 16][case % 4];
        let k = [3usize, 5][case % 2];
        let mid = c / 2;
        let h = 6 + case % 3;
        let w = 6 + case % 2;
        let x = oracle::random_tensor(&mut prng, (1, c, h, w), -1.0, 1.0).unwrap();
        let cv1_w = oracle::random_tensor(&mut prng, (mid, c, 1, 1), -1.0, 1.0).unwrap();
        let cv1_b: Vec<f32> = (0..mid).map(|_| prng.uniform() as f32 - 0.5).collect();
        let cv2_w = oracle::random_tensor(&mut prng, (c, mid * 4, 1, 1), -1.0, 1.0).unwrap();
        let cv2_b: Vec<f32> = (0..c).map(|_| prng.uniform() as f32 - 0.5).collect();
        let fast = sppf(&x, &cv1_w, &cv1_b, &cv2_w, &cv2_b, k).unwrap();
        let slow = oracle::sppf_naive(&x, &cv1_w, &cv1_b, &cv2_w, &cv2_b, k).unwrap();
        let diff = oracle::max_abs_diff(&fast, &slow).unwrap();
        assert!(diff <= 1e-5, "sppf case {case}: diff {diff}");
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "suite took {elapsed:?}");
    println!(
        "criterion 01 PASS — {conv_cases} conv cases ({category_counts:?}), 40 maxpool, 8 sppf, all within 1e-5 in {elapsed:.2?}"
    );
}

// -------------------------------------------------------------------------
// 2. Channel-shuffle laws for every (c <= 64, g | c): multiset preserved,
//    the mapping is the exact interleave permutation (hence bijective), and
//    shuffle(g) followed by shuffle(c/g) is the identity. All exact.
// -------------------------------------------------------------------------
#[test]
fn criterion_02_channel_shuffle_laws() {
    let mut pairs = 0usize;
    for c in 1..=64usize {
        for g in 1..=c {
            if c % g != 0 {
                continue;
            }
            let n_per = c / g;
            let (h, w) = (2usize, 3usize);
            // Distinct values so multiset equality implies bijectivity.
            let data: Vec<f32> = (0..c * h * w).map(|v| v as f32).collect();
            let x = Tensor::from_vec((1, c, h, w), data).unwrap();
            let y = channel_shuffle(&x, g).unwrap();

            // Exact permutation: output channel j is input channel
            // (j % g) * (c/g) + j / g.
            for j in 0..c {
                let src = (j % g) * n_per + j / g;
                let got = &y.data()[j * h * w..(j + 1) * h * w];
                let want = &x.data()[src * h * w..(src + 1) * h * w];
                assert_eq!(got, want, "c={c} g={g} channel {j}");
            }

            // Multiset preservation.
            let mut a: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b, "multiset changed for c={c} g={g}");

            // Inverse composition.
            let back = channel_shuffle(&y, n_per).unwrap();
            assert_eq!(back.data(), x.data(), "inverse failed for c={c} g={g}");
            pairs += 1;
        }
    }
    println!("criterion 02 PASS — shuffle laws exact over {pairs} (c, g) pairs with c <= 64");
}

// -------------------------------------------------------------------------
// 3. Separable-cost identity: the analyzer's depthwise+pointwise versus
//    dense MAC ratio equals 1/c_out + 1/k^2 in exact integer arithmetic
//    over a (k, C) grid, and the worked 3x3, 16->32, 8x8 case yields
//    41,984 vs 294,912 MACs.
// -------------------------------------------------------------------------
#[test]
fn criterion_03_separable_cost_identity() {
    let (sep, std) = flops::separable_pair_macs(3, 16, 32, 8, 8).unwrap();
    assert_eq!((sep, std), (41_984, 294_912), "worked case mismatch");

    let mut checked = 0usize;
    for k in [1usize, 3, 5, 7] {
        for c_in in [1usize, 2, 3, 8, 16, 31] {
            for c_out in [1usize, 4, 9, 32] {
                for (h, w) in [(10usize, 14usize), (7, 7)] {
                    let (sep, std) = flops::separable_pair_macs(k, c_in, c_out, h, w).unwrap();
                    // sep/std == 1/c_out + 1/k^2, cross-multiplied exactly:
                    // sep * k^2 * c_out == std * (k^2 + c_out).
                    let k2 = (k * k) as u128;
                    let lhs = sep as u128 * k2 * c_out as u128;
                    let rhs = std as u128 * (k2 + c_out as u128);
                    assert_eq!(lhs, rhs, "identity failed k={k} c_in={c_in} c_out={c_out} {h}x{w}");
                    assert!(
                        flops::separable_identity_holds(k, c_in, c_out, h, w).unwrap(),
                        "helper disagrees at k={k} c_in={c_in} c_out={c_out}"
                    );
                    checked += 1;
                }
            }
        }
    }
    println!(
        "criterion 03 PASS — worked case 41,984 vs 294,912 MACs; exact ratio identity over {checked} grid points"
    );
}

// -------------------------------------------------------------------------
// 4. Lightweight-backbone claim: the proposed backbone's total MACs at
//    640x640 are strictly below the baseline network's, and README records
//    both numbers.
// -------------------------------------------------------------------------
#[test]
fn criterion_04_backbone_macs_below_baseline() {
    let cfg = ModelConfig::for_classes(6);
    let det = build_detector_graph(&cfg, (640, 640)).unwrap();
    let proposed = prefix_totals(&det.graph, "backbone.").unwrap();
    let baseline_graph = build_baseline_graph((640, 640)).unwrap();
    let baseline = count_costs(baseline_graph.records()).unwrap().totals;

    assert!(
        proposed.macs < baseline.macs,
        "proposed backbone {} MACs is not below baseline {}",
        proposed.macs,
        baseline.macs
    );

    let readme_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let readme = std::fs::read_to_string(&readme_path).expect("README.md at workspace root");
    let fmt = |v: u64| {
        let s = v.to_string();
        let mut out = String::new();
        for (i, ch) in s.chars().enumerate() {
            if i > 0 && (s.len() - i) % 3 == 0 {
                out.push(',');
            }
            out.push(ch);
        }
        out
    };
    for (label, value) in [("proposed", proposed.macs), ("baseline", baseline.macs)] {
        let with_commas = fmt(value);
        assert!(
            readme.contains(&with_commas) || readme.contains(&value.to_string()),
            "README does not record the {label} MAC total {with_commas}"
        );
    }
    println!(
        "criterion 04 PASS — backbone {} MACs < baseline {} MACs at 640x640; both recorded in README",
        fmt(proposed.macs),
        fmt(baseline.macs)
    );
}

// -------------------------------------------------------------------------
// 5. Shape contract at 640x640: backbone features (116,80,80), (232,40,40),
//    (464,20,20); head outputs 33 channels for 6 classes and 45 for 10.
// -------------------------------------------------------------------------
#[test]
fn criterion_05_shape_contract() {
    for (classes, head_c) in [(6usize, 33usize), (10, 45)] {
        let cfg = ModelConfig::for_classes(classes);
        let det = build_detector_graph(&cfg, (640, 640)).unwrap();
        let expect = [(116usize, 80usize), (232, 40), (464, 20)];
        for (slot, &(c, hw)) in det.features.iter().zip(&expect) {
            let s = det.graph.records()[*slot].out_shape;
            assert_eq!(
                (s.c, s.h, s.w),
                (c, hw, hw),
                "feature shape mismatch for {classes} classes"
            );
        }
        for (slot, &(_, hw)) in det.heads.iter().zip(&expect) {
            let s = det.graph.records()[*slot].out_shape;
            assert_eq!(
                (s.c, s.h, s.w),
                (head_c, hw, hw),
                "head shape mismatch for {classes} classes"
            );
        }
    }
    println!(
        "criterion 05 PASS — features (116,80,80)/(232,40,40)/(464,20,20); heads 33 ch (6 classes) and 45 ch (10 classes)"
    );
}

// -------------------------------------------------------------------------
// 6. Suppression equivalence: 1,000 random scenes of up to 200 boxes match
//    the O(n^2) brute-force suppressor exactly, including tie order.
// -------------------------------------------------------------------------
#[test]
fn criterion_06_suppression_matches_brute_force() {
    let mut prng = Prng::new(0xACC6);
    let mut max_seen = 0usize;
    for scene in 0..1000 {
        let count = (prng.next_u64() % 201) as usize;
        max_seen = max_seen.max(count);
        let mut dets = oracle::random_detections(&mut prng, count, 4, 64.0);
        // Force score ties in every third scene to exercise tie order.
        if scene % 3 == 0 && dets.len() >= 4 {
            let s = dets[0].score;
            dets[1].score = s;
            dets[3].score = s;
        }
        let threshold = 0.3 + (scene % 5) as f32 * 0.1;
        let fast = nms(&dets, threshold);
        let slow = oracle::nms_brute(&dets, threshold);
        assert_eq!(fast, slow, "scene {scene} ({count} boxes, iou {threshold}) diverged");
    }
    assert!(max_seen >= 150, "scene sizes never approached the 200-box cap");
    println!("criterion 06 PASS — 1,000 scenes (up to {max_seen} boxes) match brute force exactly, ties included");
}

// -------------------------------------------------------------------------
// 7. Evaluator: reproduces the hand AP = 0.8333 case and the
//    perfect-detector = 1.0 case; permutation invariance and
//    false-positive monotonicity hold over 500 random datasets checked
//    against the slow reference evaluator.
// -------------------------------------------------------------------------
#[test]
fn criterion_07_evaluator_properties() {
    // Hand case: [TP@0.9, FP@0.8, TP@0.7] with 2 ground truths.
    let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2, false);
    assert!(ap.defined);
    assert!(
        (ap.ap - 5.0 / 6.0).abs() < 1e-12,
        "hand case gave {} instead of 0.8333...",
        ap.ap
    );

    // Perfect detector over the bundled demo set.
    let set = demo::dataset();
    let gts = demo::ground_truths(&set);
    let names = default_class_names(6);
    let perfect =
        evaluate_dataset(&demo::perfect_detections(&set), &gts, &names, &EvalOptions::default())
            .unwrap();
    assert_eq!(perfect.map50, 1.0);
    assert_eq!(perfect.image_recall, 1.0);

    let classes = 4usize;
    let class_names = default_class_names(classes);
    let opts = EvalOptions::default();
    let mut prng = Prng::new(0xACC7);
    let mut tied_scenes = 0usize;
    for scene in 0..500 {
        let (dets, gts) = oracle::random_eval_scene(&mut prng, classes, 3);
        let base = evaluate_dataset(&dets, &gts, &class_names, &opts).unwrap();

        // Agreement with the independent reference evaluator. The scene
        // generator quantizes scores to tenths, so most scenes contain
        // ties and this comparison exercises tie handling directly.
        let unique_scores = dets
            .iter()
            .map(|d| d.detection.score.to_bits())
            .collect::<HashSet<_>>()
            .len();
        if unique_scores < dets.len() {
            tied_scenes += 1;
        }
        let reference = oracle::evaluate_reference(&dets, &gts, classes, 0.5);
        assert!(
            (base.map50 - reference.map50).abs() <= 1e-12,
            "scene {scene}: map50 {} vs reference {}",
            base.map50,
            reference.map50
        );
        assert!(
            (base.image_recall - reference.image_recall).abs() <= 1e-12,
            "scene {scene}: image recall {} vs reference {}",
            base.image_recall,
            reference.image_recall
        );
        for (k, cls) in base.classes.iter().enumerate() {
            assert_eq!(
                (cls.tp, cls.fp, cls.fn_count),
                reference.counts[k],
                "scene {scene}: class {k} counts diverge"
            );
        }

        // Permutation invariance holds when scores are distinct (ties are
        // broken by input order by design), so nudge each score by a tiny
        // index-dependent amount that keeps the base-score ordering and
        // check the de-tied scene in both orders.
        let detied: Vec<EvalDetection> = dets
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut d = d.clone();
                d.detection.score += i as f32 * 1e-4;
                d
            })
            .collect();
        let distinct = detied
            .iter()
            .map(|d| d.detection.score.to_bits())
            .collect::<HashSet<_>>()
            .len();
        assert_eq!(distinct, detied.len(), "scene {scene}: de-tie failed");
        let forward = evaluate_dataset(&detied, &gts, &class_names, &opts).unwrap();
        let mut reversed = detied.clone();
        reversed.reverse();
        let permuted = evaluate_dataset(&reversed, &gts, &class_names, &opts).unwrap();
        assert_eq!(permuted.map50, forward.map50, "scene {scene}: order changed map50");
        assert_eq!(
            permuted.image_recall, forward.image_recall,
            "scene {scene}: order changed image recall"
        );
        for (a, b) in permuted.classes.iter().zip(&forward.classes) {
            assert_eq!(
                (a.tp, a.fp, a.fn_count, a.ap),
                (b.tp, b.fp, b.fn_count, b.ap),
                "scene {scene}: order changed a class report"
            );
        }

        // Adding a detection that overlaps nothing can never raise map50.
        let mut with_fp = dets.clone();
        with_fp.push(EvalDetection {
            image_id: "img_0".to_string(),
            detection: Detection {
                class_id: (prng.next_u64() as usize) % classes,
                score: prng.uniform() as f32,
                bbox: BoxXyxy {
                    x1: 1000.0,
                    y1: 1000.0,
                    x2: 1010.0,
                    y2: 1010.0,
                },
            },
        });
        let degraded = evaluate_dataset(&with_fp, &gts, &class_names, &opts).unwrap();
        assert!(
            degraded.map50 <= base.map50 + 1e-12,
            "scene {scene}: stray false positive raised map50 from {} to {}",
            base.map50,
            degraded.map50
        );
    }
    assert!(
        tied_scenes >= 100,
        "only {tied_scenes} scenes had score ties; tie handling untested"
    );
    println!(
        "criterion 07 PASS — hand AP 0.8333 and perfect 1.0 reproduced; 500 scenes agree with the reference ({tied_scenes} with ties), permutation invariance and FP monotonicity hold"
    );
}

// -------------------------------------------------------------------------
// 8. Bundled 12-image synthetic set: the hand-placed oracle detector scores
//    map50 = 1.0, and the deliberately corrupted detector scores exactly
//    the value pre-computed by the reference evaluator.
// -------------------------------------------------------------------------
#[test]
fn criterion_08_demo_set_known_scores() {
    // Pre-computed with the slow reference evaluator on the frozen
    // corruption pattern; per-class average precisions and the mean.
    const FROZEN_MAP50: f64 = 0.5;
    const FROZEN_IMAGE_RECALL: f64 = 1.0 / 6.0;
    const FROZEN_CLASS_AP: [f64; 6] = [0.0, 0.5, 1.0, 1.0, 0.5, 0.0];

    let set = demo::dataset();
    assert_eq!(set.len(), 12);
    let gts = demo::ground_truths(&set);
    let names = default_class_names(6);

    let perfect =
        evaluate_dataset(&demo::perfect_detections(&set), &gts, &names, &EvalOptions::default())
            .unwrap();
    assert_eq!(perfect.map50, 1.0, "oracle detector must score 1.0");

    let corrupted = demo::corrupted_detections(&set);
    let report = evaluate_dataset(&corrupted, &gts, &names, &EvalOptions::default()).unwrap();
    assert!(
        (report.map50 - FROZEN_MAP50).abs() < 1e-12,
        "corrupted detector scored {} instead of the frozen {FROZEN_MAP50}",
        report.map50
    );
    assert!(
        (report.image_recall - FROZEN_IMAGE_RECALL).abs() < 1e-12,
        "corrupted image recall {} vs frozen {FROZEN_IMAGE_RECALL}",
        report.image_recall
    );
    for (k, cls) in report.classes.iter().enumerate() {
        assert!(
            (cls.ap - FROZEN_CLASS_AP[k]).abs() < 1e-12,
            "class {k} ap {} vs frozen {}",
            cls.ap,
            FROZEN_CLASS_AP[k]
        );
    }

    // The frozen values must match a fresh run of the reference evaluator.
    let reference = oracle::evaluate_reference(&corrupted, &gts, 6, 0.5);
    assert!((reference.map50 - FROZEN_MAP50).abs() < 1e-12);

    println!(
        "criterion 08 PASS — demo set: oracle detector 1.0, corrupted detector map50 {FROZEN_MAP50} / image recall {FROZEN_IMAGE_RECALL:.4} as pre-computed"
    );
}

// -------------------------------------------------------------------------
// 9. Determinism: `detect` run twice on the same seeded weights and image
//    produces byte-identical JSON; the weight file round-trips through
//    save/load byte-identically.
// -------------------------------------------------------------------------
#[test]
fn criterion_09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.bin");
    let images = dir.path().join("images");
    let labels = dir.path().join("labels");
    demo::write_dataset(&images, &labels).unwrap();
    let image = images.join("demo_00.pgm");

    assert_ok(
        &run_bin(&[
            "init-weights",
            "--seed",
            "11",
            "--classes",
            "6",
            "--out",
            weights.to_str().unwrap(),
        ]),
        "init-weights",
    );

    let j1 = dir.path().join("a.json");
    let j2 = dir.path().join("b.json");
    for j in [&j1, &j2] {
        assert_ok(
            &run_bin(&[
                "detect",
                "--weights",
                weights.to_str().unwrap(),
                "--image",
                image.to_str().unwrap(),
                "--conf",
                "0.25",
                "--json",
                j.to_str().unwrap(),
            ]),
            "detect",
        );
    }
    let b1 = std::fs::read(&j1).unwrap();
    let b2 = std::fs::read(&j2).unwrap();
    assert!(!b1.is_empty());
    assert_eq!(b1, b2, "two detect runs differ");

    // Weight save/load round trip.
    let bytes = std::fs::read(&weights).unwrap();
    let store = WeightStore::from_bytes(&bytes).unwrap();
    assert_eq!(store.to_bytes().unwrap(), bytes, "weight bytes changed across load/save");

    println!(
        "criterion 09 PASS — detect twice gave byte-identical JSON ({} bytes); weight round trip byte-identical ({} records)",
        b1.len(),
        store.len()
    );
}

// -------------------------------------------------------------------------
// 10. End-to-end smoke: init-weights, detect, eval, flops, and selftest all
//     exit 0 in under two minutes.
// -------------------------------------------------------------------------
#[test]
fn criterion_10_end_to_end_smoke() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.bin");
    let images = dir.path().join("images");
    let labels = dir.path().join("labels");
    demo::write_dataset(&images, &labels).unwrap();

    assert_ok(
        &run_bin(&[
            "init-weights",
            "--seed",
            "3",
            "--classes",
            "6",
            "--out",
            weights.to_str().unwrap(),
        ]),
        "init-weights",
    );

    let out_img = dir.path().join("rendered.ppm");
    let detect = run_bin(&[
        "detect",
        "--weights",
        weights.to_str().unwrap(),
        "--image",
        images.join("demo_03.pgm").to_str().unwrap(),
        "--out",
        out_img.to_str().unwrap(),
    ]);
    assert_ok(&detect, "detect");
    assert!(out_img.exists(), "rendered image missing");
    let parsed: serde_json::Value = serde_json::from_slice(&detect.stdout).unwrap();
    assert!(parsed.get("detections").is_some(), "detect JSON missing detections key");

    let eval = run_bin(&[
        "eval",
        "--weights",
        weights.to_str().unwrap(),
        "--images",
        images.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--classes",
        "6",
    ]);
    assert_ok(&eval, "eval");
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(report["images"], 12);
    assert!(report["map50"].is_number());

    let flops_out = run_bin(&["flops", "--classes", "6"]);
    assert_ok(&flops_out, "flops");
    let fl: serde_json::Value = serde_json::from_slice(&flops_out.stdout).unwrap();
    let proposed = fl["proposed_macs"].as_u64().unwrap();
    let baseline = fl["baseline_macs"].as_u64().unwrap();
    assert!(proposed < baseline);

    let selftest = run_bin(&["selftest"]);
    assert_ok(&selftest, "selftest");
    let text = String::from_utf8_lossy(&selftest.stdout);
    assert!(text.contains("all checks passed"), "selftest output: {text}");

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "smoke pipeline took {elapsed:?}, over the two-minute budget"
    );
    println!(
        "criterion 10 PASS — init-weights, detect, eval (12 images), flops, selftest all exit 0 in {elapsed:.1?}"
    );
}
