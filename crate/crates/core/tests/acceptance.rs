//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cnnrec::ability::{calibrate, reference_anchors, Assumptions, DEFAULT_GAMMA, DEFAULT_N0};
use cnnrec::archgen::{
    count_macs, export_spec, import_spec, make_spec, reference_specs, DownsampleKind, SpecOptions,
    REFERENCE_CHI,
};
use cnnrec::complexity::{sample_complexity, simulate_multiclass_error, CentroidModel};
use cnnrec::descriptor::extract_global_descriptor;
use cnnrec::ingest::{load_idx, synth_blob_task, write_idx, LabeledDataset, Sample};
use cnnrec::matcher::{fit_performance_curve, predict_rate, select_candidate, CurveAnchor, ScoredCandidate};
use cnnrec::{ability_score, dataset_complexity, expand_layers};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(elapsed < limit, format!("{detail}; {:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()))
}

fn centroid_consistency() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut samples = 0;
    for task in 0..200 {
        let classes = rng.random_range(2..=10);
        let l = rng.random_range(20.max(classes)..=200);
        let (vectors, labels) = common::random_feature_task(classes, l, 1000 + task);
        let model = CentroidModel::fit_labeled(&vectors, &labels, classes).map_err(|e| e.to_string())?;
        let means = common::class_means(&vectors, &labels, classes);
        for (v, &y) in vectors.iter().zip(&labels) {
            let s = sample_complexity(v, y, &model).map_err(|e| e.to_string())?;
            let correct = common::nearest_centroid(v, &means) == y;
            if s.centroid_correct() != correct {
                return Err(format!("task {task}: C = {} but nearest-centroid correct = {correct}", s.c));
            }
            samples += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(10), format!("{samples} samples agree"))
}

fn mnist_like() -> Result<(LabeledDataset, String), String> {
    if let Some(dir) = std::env::var_os("CNNREC_MNIST_DIR") {
        let dir = PathBuf::from(dir);
        let ds = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))
            .map_err(|e| e.to_string())?;
        let n = ds.class_count();
        let samples = ds.samples()[..5000].to_vec();
        return Ok((LabeledDataset::new("mnist[..5000]", samples, n).map_err(|e| e.to_string())?, "MNIST".into()));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (images, labels) = (dir.path().join("images-idx3-ubyte"), dir.path().join("labels-idx1-ubyte"));
    let synth = synth_blob_task(10, 500, 28, 1.0, 0.2, 2).map_err(|e| e.to_string())?;
    write_idx(&synth, &images, &labels).map_err(|e| e.to_string())?;
    Ok((load_idx(&images, &labels).map_err(|e| e.to_string())?, "synthetic 28x28 IDX".into()))
}

fn permutation_invariance() -> Outcome {
    let start = Instant::now();
    let (ds, source) = mnist_like()?;
    let base = dataset_complexity(&ds).map_err(|e| e.to_string())?.c_all;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut samples: Vec<Sample> = ds.samples().to_vec();
        samples.shuffle(&mut rng);
        let shuffled = LabeledDataset::new(ds.name(), samples, ds.class_count()).map_err(|e| e.to_string())?;
        let c = dataset_complexity(&shuffled).map_err(|e| e.to_string())?.c_all;
        worst = worst.max((c - base).abs());
    }
    let detail = format!("{source}, l = {}, c_all = {base:.6}, max |Δ| = {worst:.1e}", ds.len());
    if worst >= 1e-12 {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(60), detail)
}

fn noise_monotonicity() -> Outcome {
    let mut values = Vec::new();
    for noise in [0.05, 0.15, 0.30] {
        let ds = synth_blob_task(10, 100, 32, 1.0, noise, 7).map_err(|e| e.to_string())?;
        values.push(dataset_complexity(&ds).map_err(|e| e.to_string())?.c_all);
    }
    check(
        values[0] > values[1] && values[1] > values[2],
        format!("c_all = {:.6} > {:.6} > {:.6}", values[0], values[1], values[2]),
    )
}

fn multiclass_error() -> Outcome {
    let start = Instant::now();
    let report = simulate_multiclass_error(3, 4.0, 1.0, 100_000, 0).map_err(|e| e.to_string())?;
    let expected = Normal::new(0.0, 1.0).unwrap().cdf(-2.0);
    let e2 = &report.rows[0];
    let ratio = report.rows[1].ratio_to_two.ok_or("e_2 is zero")?;
    let z = (e2.error_rate - expected).abs() / e2.std_error;
    let detail = format!(
        "e_2 = {:.5} (Φ(-2) = {expected:.5}, {z:.2} SE), e_3/e_2 = {ratio:.4}",
        e2.error_rate
    );
    if !(z <= 3.0 && (ratio - 2.0).abs() <= 0.3) {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(30), detail)
}

fn descriptor_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut oracle_err, mut shift_err, mut scale_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..50 {
        let (w, h) = (rng.random_range(16..=64), rng.random_range(16..=64));
        let img = common::random_image(w, h, 0.4, 500 + i);
        let d = extract_global_descriptor(&img).map_err(|e| e.to_string())?;
        let oracle = common::direct_descriptor(&img);
        let shifted = extract_global_descriptor(&common::map_image(&img, |p| p + 0.37)).map_err(|e| e.to_string())?;
        let scaled = extract_global_descriptor(&common::map_image(&img, |p| 2.5 * p)).map_err(|e| e.to_string())?;
        for k in 0..64 {
            let v = d.values()[k];
            oracle_err = oracle_err.max((v - oracle[k]).abs());
            shift_err = shift_err.max((v - shifted.values()[k]).abs());
            scale_err = scale_err.max((v - scaled.values()[k]).abs());
        }
    }
    check(
        oracle_err <= 1e-9 && shift_err <= 1e-9 && scale_err <= 1e-9,
        format!("max |Δ| oracle {oracle_err:.1e}, brightness {shift_err:.1e}, contrast {scale_err:.1e}"),
    )
}

fn mac_oracle() -> Outcome {
    let model1 = reference_specs(SpecOptions::default())[0].1.clone();
    let m1 = count_macs(&expand_layers(&model1), false);
    if m1 != 7_398_144 {
        return Err(format!("Model-1 conv MACs = {m1}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let s = [8, 16, 32, 64][rng.random_range(0..4)];
        let m = rng.random_range(1..=5);
        let q: Vec<usize> = (0..m).map(|_| rng.random_range(1..=4)).collect();
        let channels = rng.random_range(1..=3);
        let strided = rng.random_bool(0.5);
        let classes = rng.random_range(2..=100);
        let options = SpecOptions {
            input_channels: channels,
            downsample_kind: if strided { DownsampleKind::StridedConv } else { DownsampleKind::Pooling },
            class_count: classes,
        };
        let spec = make_spec(s, m, &q, options).map_err(|e| e.to_string())?;
        for head in [false, true] {
            let got = count_macs(&expand_layers(&spec), head);
            let want = common::loop_macs(s, &q, channels, strided, classes, head);
            if got != want {
                return Err(format!("{} head={head}: {got} ≠ {want}", spec.label()));
            }
        }
    }
    Ok(format!("Model-1 = {m1}; 20 random specs match the loop oracle"))
}

fn ability_calibration() -> Outcome {
    let start = Instant::now();
    let assumptions = Assumptions::default();
    let anchors = reference_anchors(assumptions);
    let params = calibrate(&anchors, DEFAULT_N0, DEFAULT_GAMMA, assumptions).map_err(|e| e.to_string())?;
    let fitted: Vec<f64> = anchors.iter().map(|(s, _)| ability_score(s, &params)).collect();
    let rho = common::spearman(&fitted, &REFERENCE_CHI);
    let xs: Vec<f64> = anchors.iter().map(|(s, _)| (params.macs(s) as f64).log10()).collect();
    if anchors.iter().any(|(s, _)| params.depth_correction(s.n_conv) != 1.0) {
        return Err("an anchor is past n0; the grid oracle assumes g = 1".into());
    }
    let (g0, g1) = common::grid_least_squares(&xs, &REFERENCE_CHI);
    let err = (g0 - params.a0).abs().max((g1 - params.a1).abs());
    let detail = format!(
        "a0 = {:.6}, a1 = {:.6}, grid |Δ| = {err:.1e}, Spearman = {rho}",
        params.a0, params.a1
    );
    if !(rho == 1.0 && err <= 1e-4) {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(5), detail)
}

fn recommendation() -> Outcome {
    let specs = reference_specs(SpecOptions::default());
    let scored: Vec<ScoredCandidate> = specs
        .iter()
        .zip(REFERENCE_CHI)
        .map(|((_, spec), chi)| ScoredCandidate {
            spec: spec.clone(),
            chi,
            macs: count_macs(&expand_layers(spec), true),
        })
        .collect();
    let mut targets: Vec<f64> = (1..=100).map(|i| 6.12 + 0.22 * i as f64 / 100.0).collect();
    targets.extend([6.12f64.next_up(), 6.34]);
    for t in targets {
        let sel = select_candidate(t, &scored).map_err(|e| e.to_string())?;
        if specs[sel.index].0 != "Model-5" || sel.undershoot {
            return Err(format!("target {t} selected {}", specs[sel.index].0));
        }
    }
    Ok("102 targets in (6.12, 6.34] all select Model-5".into())
}

fn performance_curve() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t0 = 10f64.powf(rng.random_range(-4.0..-1.0));
        let t1 = t0 * 10f64.powf(rng.random_range(0.1..3.0));
        let r0 = rng.random_range(0.0..0.9);
        let r1 = rng.random_range(r0 + 0.01..=1.0);
        let (a, b) = (CurveAnchor { t: t0, rate: r0 }, CurveAnchor { t: t1, rate: r1 });
        let curve = fit_performance_curve(b, a).map_err(|e| e.to_string())?;
        if curve.b <= 0.0 {
            return Err(format!("slope {} for increasing anchors", curve.b));
        }
        for anchor in [a, b] {
            worst = worst.max((predict_rate(&curve, anchor.t).map_err(|e| e.to_string())? - anchor.rate).abs());
        }
        for k in 1..20 {
            let t = t0 * (t1 / t0).powf(k as f64 / 20.0);
            let r = predict_rate(&curve, t).map_err(|e| e.to_string())?;
            if !(r0 <= r && r <= r1) {
                return Err(format!("r({t}) = {r} outside [{r0}, {r1}]"));
            }
        }
    }
    check(worst <= 1e-9, format!("100 anchor pairs, max anchor |Δ| = {worst:.1e}, interior bracketed"))
}

fn run_complexity_cli(out: &Path) -> Result<Vec<u8>, String> {
    let status = Command::new(common::bin())
        .args(["complexity", "--format", "synth", "--classes", "4", "--per-class", "30", "--seed", "11", "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    std::fs::read(out).map_err(|e| e.to_string())
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let m = rng.random_range(1..=5);
        let q: Vec<usize> = (0..m).map(|_| rng.random_range(1..=6)).collect();
        let options = SpecOptions {
            input_channels: rng.random_range(1..=4),
            downsample_kind: if rng.random_bool(0.5) { DownsampleKind::StridedConv } else { DownsampleKind::Pooling },
            class_count: rng.random_range(1..=1000),
        };
        let spec = make_spec(rng.random_range(1..=128), m, &q, options).map_err(|e| e.to_string())?;
        let back = import_spec(&export_spec(&spec)).map_err(|e| e.to_string())?;
        if back != spec {
            return Err(format!("{} did not round-trip", spec.label()));
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("report.json");
    let first = run_complexity_cli(&out)?;
    std::fs::remove_file(&out).map_err(|e| e.to_string())?;
    let second = run_complexity_cli(&out)?;
    check(
        first == second,
        format!("100 specs round-trip; CLI reports {} bytes, identical = {}", first.len(), first == second),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("C > 0.5 iff nearest-centroid correct", centroid_consistency),
        ("c_all permutation invariance", permutation_invariance),
        ("c_all decreases with noise", noise_monotonicity),
        ("multi-class error growth", multiclass_error),
        ("descriptor oracle and invariances", descriptor_oracle),
        ("MAC oracle", mac_oracle),
        ("ability calibration", ability_calibration),
        ("recommendation selects Model-5", recommendation),
        ("performance curve", performance_curve),
        ("round-trips", round_trips),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
