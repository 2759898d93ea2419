//! Acceptance criteria 1–10. Runs without the libtest harness so the
//! PASS/FAIL lines are always printed; exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};

use mixedsn::autodiff::{op_suite, OP_NAMES};
use mixedsn::io::{
    encode_class_map, read_hsc, synth_scene, write_hsc, HscPaths, SyntheticSceneSpec,
};
use mixedsn::metrics::{average_accuracy, kappa, overall_accuracy, ConfusionMatrix};
use mixedsn::network::{
    count_parameters, forward, load_checkpoint, save_checkpoint, shape_trace, MixedSnConfig,
    NetworkSpec, ParamStore, Profile, Widths, REFERENCE_IP_PARAMETERS,
};
use mixedsn::preprocess::{extract_patches, pca_reduce, train_counts, HsiCube, LabelMap, PadMode};
use mixedsn::rng::Rng;
use mixedsn::tensor::Tensor;
use mixedsn::Error;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    }};
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let reports = op_suite(OP_NAMES, 1e-5, 1e-4, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let required = [
        "conv2d",
        "conv3d",
        "maxpool2d",
        "maxpool3d",
        "relu",
        "linear",
        "residual_add",
        "depth_fold",
        "softmax_xent",
    ];
    for op in required {
        ensure!(reports.iter().any(|r| r.name == op), "op {op} not checked");
    }
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    if let Some(bad) = reports.iter().find(|r| r.max_rel_error >= 1e-4) {
        return Err(format!(
            "{} max relative error {:.3e}",
            bad.name, bad.max_rel_error
        ));
    }
    ensure!(
        elapsed < Duration::from_secs(60),
        "suite took {elapsed:.1?}"
    );
    Ok(format!(
        "{} ops, worst {} {:.2e}, {:.1?}",
        reports.len(),
        worst.name,
        worst.max_rel_error,
        elapsed
    ))
}

/// Closed-form parameter total from the layer recipe, with extents derived
/// by hand: same-padded convolutions, unpadded pools.
fn parameter_oracle(t: usize, s: usize, classes: usize, w: Widths, c: usize) -> usize {
    let pool = |n: usize, k: usize, stride: usize| (n - k) / stride + 1;
    let conv = |cin: usize, cout: usize, field: usize| cin * cout * field + cout;
    let block = |width: usize, bottleneck: usize, field: usize| {
        c * (conv(width, bottleneck, 1) + conv(bottleneck, width, field))
    };
    let (d1, h1) = (pool(t, 2, 1), pool(s, 2, 1));
    let (d2, h2) = (pool(d1, 2, 2), pool(h1, 2, 1));
    let (d3, h3) = (pool(d2, 2, 2), pool(h2, 2, 1));
    let h5 = pool(pool(h3, 2, 2), 2, 2);
    conv(1, w.stem, 3 * 3 * 7)
        + conv(w.stem, w.block1, 1)
        + block(w.block1, w.block1_bottleneck, 3 * 3 * 5)
        + conv(w.block1, w.block2, 1)
        + block(w.block2, w.block2_bottleneck, 3 * 3 * 3)
        + conv(w.block2 * d3, w.block2d, 1)
        + 2 * block(w.block2d, w.block2d_bottleneck, 3 * 3)
        + conv(w.block2d, w.scale_down, 1)
        + conv(w.scale_down * h5 * h5, w.fc1, 1)
        + conv(w.fc1, w.fc2, 1)
        + conv(w.fc2, classes, 1)
}

fn parameter_count() -> Outcome {
    let net =
        NetworkSpec::mixedsn(MixedSnConfig::for_profile(Profile::Ip)).map_err(|e| e.to_string())?;
    let total = count_parameters(&net).total;
    let oracle = parameter_oracle(30, 25, 16, Widths::default(), 4);
    let store: usize = ParamStore::<f32>::zeros(&net)
        .tensors()
        .iter()
        .map(|t| t.shape().iter().product::<usize>())
        .sum();
    ensure!(
        total == oracle && total == store,
        "count {total}, oracle {oracle}, store {store}"
    );
    let delta = (total as f64 - REFERENCE_IP_PARAMETERS as f64) / REFERENCE_IP_PARAMETERS as f64;
    ensure!(
        delta.abs() <= 0.05,
        "{total} is {:+.2}% from {REFERENCE_IP_PARAMETERS}",
        100.0 * delta
    );
    for (t, s, l, widths) in [
        (15, 25, 9, Widths::default()),
        (13, 19, 14, Widths::default().divided(2)),
    ] {
        let cfg = MixedSnConfig {
            bands: t,
            window: s,
            classes: l,
            widths,
            ..MixedSnConfig::for_profile(Profile::Custom)
        };
        let n = count_parameters(&NetworkSpec::mixedsn(cfg).map_err(|e| e.to_string())?).total;
        ensure!(
            n == parameter_oracle(t, s, l, widths, 4),
            "T={t} S={s}: {n}"
        );
    }
    Ok(format!(
        "{total} ({:+.2}% vs {REFERENCE_IP_PARAMETERS})",
        100.0 * delta
    ))
}

fn split_arithmetic() -> Outcome {
    let sizes = [
        46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205, 1265, 386, 93,
    ];
    let rows: [(f64, [usize; 16]); 2] = [
        (
            0.10,
            [
                5, 143, 83, 24, 48, 73, 3, 48, 2, 97, 245, 59, 20, 126, 39, 9,
            ],
        ),
        (
            0.30,
            [
                14, 428, 249, 71, 145, 219, 8, 143, 6, 292, 736, 178, 62, 379, 116, 28,
            ],
        ),
    ];
    for (fraction, expected) in rows {
        let got = train_counts(&sizes, fraction).map_err(|e| e.to_string())?;
        ensure!(got == expected, "fraction {fraction}: {got:?}");
    }
    Ok("both rows, 32 per-class counts".into())
}

fn interior_count(p: usize, q: usize, s: usize) -> Result<usize, String> {
    let cube = HsiCube::new(p, q, 1, vec![0.0; p * q]).map_err(|e| e.to_string())?;
    let labels =
        LabelMap::new(p, q, vec![1; p * q], vec!["c".into()]).map_err(|e| e.to_string())?;
    let set =
        extract_patches(&cube, &labels, s, PadMode::InteriorOnly).map_err(|e| e.to_string())?;
    let h = s / 2;
    let brute: Vec<(usize, usize)> = (0..p)
        .flat_map(|r| (0..q).map(move |c| (r, c)))
        .filter(|&(r, c)| r >= h && r + h < p && c >= h && c + h < q)
        .collect();
    if set.centers() != brute.as_slice() {
        return Err(format!("{p}×{q}, S={s}: centers differ from enumeration"));
    }
    Ok(set.len())
}

fn patch_algebra() -> Outcome {
    let mut rng = Rng::new(4);
    for _ in 0..50 {
        let s = 2 * rng.below(6) + 1;
        let p = s + rng.below(20);
        let q = s + rng.below(20);
        let n = interior_count(p, q, s)?;
        ensure!(n == (p - s + 1) * (q - s + 1), "{p}×{q}, S={s}: {n}");
    }
    let ip = interior_count(145, 145, 25)?;
    ensure!(ip == 14641, "145/25 gave {ip}");
    Ok("50 random triples, 145×145 S=25 → 14641".into())
}

fn pca_oracle() -> Outcome {
    let mut rng = Rng::new(5);
    let mut worst = 0f64;
    for _ in 0..200 {
        let (p, q, b) = (2 + rng.below(8), 2 + rng.below(8), 1 + rng.below(8));
        let n = p * q;
        let mix: Vec<f64> = (0..b * b).map(|_| rng.normal()).collect();
        let mut values = vec![0f32; n * b];
        for px in 0..n {
            let z: Vec<f64> = (0..b).map(|_| rng.normal()).collect();
            for i in 0..b {
                values[i * n + px] =
                    (0.5 + (0..b).map(|j| mix[i * b + j] * z[j]).sum::<f64>()) as f32;
            }
        }
        let cube = HsiCube::new(p, q, b, values.clone()).map_err(|e| e.to_string())?;
        let t = 1 + rng.below(b);
        let reduced = pca_reduce(&cube, t).map_err(|e| e.to_string())?;
        let proj = &reduced.projection;

        let x = DMatrix::from_fn(n, b, |r, c| values[c * n + r] as f64);
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(n, b, |r, c| x[(r, c)] - mean[c]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let mut eig: Vec<f64> = SymmetricEigen::new(cov.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let scale = eig[0].abs().max(1.0);
        for (a, e) in proj.eigenvalues.iter().zip(&eig) {
            worst = worst.max((a - e).abs() / scale);
        }
        let total: f64 = eig.iter().sum();
        let retained = if total > 0.0 {
            eig[..t].iter().sum::<f64>() / total
        } else {
            1.0
        };
        worst = worst.max((retained - proj.retained_variance).abs());
        for i in 0..t {
            let vi = proj.component(i);
            for j in 0..t {
                let dot: f64 = vi.iter().zip(proj.component(j)).map(|(a, b)| a * b).sum();
                worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
            // each column is an eigenvector of the oracle covariance
            let v = nalgebra::DVector::from_vec(vi);
            let residual = (&cov * &v - &v * proj.eigenvalues[i]).norm() / scale;
            worst = worst.max(residual);
        }
    }
    ensure!(worst < 1e-8, "worst deviation {worst:.3e}");
    let presets: Vec<usize> = [Profile::Ip, Profile::Pu, Profile::Sa, Profile::Bw]
        .iter()
        .map(|&p| MixedSnConfig::for_profile(p).bands)
        .collect();
    ensure!(presets == [30, 15, 15, 13], "presets {presets:?}");
    Ok(format!(
        "200 datasets, worst deviation {worst:.1e}; presets T = 30/15/15/13"
    ))
}

fn metrics_oracle() -> Outcome {
    let cm = ConfusionMatrix::from_rows(&[vec![40, 10], vec![5, 45]]).map_err(|e| e.to_string())?;
    let (oa, aa, k) = (
        overall_accuracy(&cm).map_err(|e| e.to_string())?,
        average_accuracy(&cm).map_err(|e| e.to_string())?,
        kappa(&cm).map_err(|e| e.to_string())?,
    );
    ensure!(
        (oa - 0.85).abs() < 1e-12 && (aa - 0.85).abs() < 1e-12 && (k - 0.70).abs() < 1e-12,
        "{oa} {aa} {k}"
    );
    let diag = ConfusionMatrix::from_rows(&[vec![7, 0, 0], vec![0, 3, 0], vec![0, 0, 12]])
        .map_err(|e| e.to_string())?;
    let kd = kappa(&diag).map_err(|e| e.to_string())?;
    ensure!(kd == 1.0, "perfect diagonal kappa {kd}");
    Ok("OA 0.85, AA 0.85, Kappa 0.70; diagonal Kappa 1".into())
}

fn desk_scale_learning() -> Outcome {
    let run = common::desk_run(common::DESK_SEED);
    ensure!(
        run.elapsed < Duration::from_secs(300),
        "training took {:.1?}",
        run.elapsed
    );
    ensure!(run.oa >= 0.95, "test OA {:.4} after 30 epochs", run.oa);
    let losses = common::overfit_losses(200, 1e-3);
    let hit = losses.iter().position(|&l| l < 0.01).map(|i| i + 1);
    let Some(step) = hit else {
        return Err(format!(
            "single-batch loss {:.4} after 200 steps",
            losses[199]
        ));
    };
    Ok(format!(
        "test OA {:.4} in {:.1?}; single batch below 0.01 at step {step}",
        run.oa, run.elapsed
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let exe = env!("CARGO_BIN_EXE_mixedsn");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(exe)
            .current_dir(d)
            .env("RUST_LOG", "warn")
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        Ok(())
    };
    run(&[
        "synth", "--out", "s", "--height", "20", "--width", "20", "--seed", "9",
    ])?;
    let train = |out: &str| {
        run(&[
            "train",
            "--cube",
            "s.cube.f32",
            "--labels",
            "s.labels.u16",
            "--bands",
            "8",
            "--window",
            "9",
            "--widths",
            "quartered",
            "--epochs",
            "4",
            "--batch",
            "16",
            "--seed",
            "3",
            "--deterministic",
            "--out-dir",
            out,
        ])
    };
    train("a")?;
    train("b")?;
    for f in ["checkpoint.mxsn", "history.csv"] {
        let a = fs::read(d.join("a").join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(d.join("b").join(f)).map_err(|e| e.to_string())?;
        ensure!(a == b, "{f} differs between runs");
    }
    Ok("checkpoint and history CSV bitwise identical".into())
}

fn shape_contract() -> Outcome {
    let net =
        NetworkSpec::mixedsn(MixedSnConfig::for_profile(Profile::Ip)).map_err(|e| e.to_string())?;
    let params = ParamStore::<f32>::init(&net, &mut Rng::new(1));
    let batch = 2;
    let mut rng = Rng::new(2);
    let x = Tensor::from_vec(
        &[batch, 1, 30, 25, 25],
        (0..batch * 30 * 625).map(|_| rng.normal() as f32).collect(),
    )
    .map_err(|e| e.to_string())?;
    let logits = forward(&net, &params, &x).map_err(|e| e.to_string())?;
    ensure!(logits.shape() == [batch, 16], "logits {:?}", logits.shape());
    let mut worst = 0f64;
    for row in logits.data().chunks(16) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
        let z: f64 = row.iter().map(|&v| (v as f64 - m).exp()).sum();
        let sum: f64 = row.iter().map(|&v| (v as f64 - m).exp() / z).sum();
        worst = worst.max((sum - 1.0).abs());
    }
    ensure!(worst < 1e-5, "softmax row sum off by {worst}");
    let trace = shape_trace(&net, net.input_shape()).map_err(|e| e.to_string())?;
    ensure!(
        trace.iter().all(|r| r.shape.iter().all(|&e| e >= 1)),
        "empty extent in trace"
    );
    let small = MixedSnConfig {
        window: 5,
        ..MixedSnConfig::for_profile(Profile::Ip)
    };
    match NetworkSpec::mixedsn(small) {
        Err(Error::EmptyExtent { layer, .. }) => ensure!(layer == "pool5", "S=5 failed at {layer}"),
        other => return Err(format!("S=5 gave {other:?}")),
    }
    Ok(format!(
        "logits {:?}, softmax rows within {worst:.1e}, S=5 rejected at pool5",
        logits.shape()
    ))
}

fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = Rng::new(10);
    let (p, q, b) = (7, 5, 3);
    let values: Vec<f32> = (0..p * q * b)
        .map(|_| f32::from_bits(rng.next_u64() as u32))
        .collect();
    let ids: Vec<u16> = (0..p * q).map(|_| rng.below(4) as u16).collect();
    let cube = HsiCube::new(p, q, b, values.clone()).map_err(|e| e.to_string())?;
    let labels = LabelMap::new(p, q, ids, vec!["a".into(), "b".into(), "c".into()])
        .map_err(|e| e.to_string())?;
    let paths = HscPaths::from_stem(dir.path().join("x"));
    write_hsc(&cube, &labels, &paths).map_err(|e| e.to_string())?;
    let bytes = fs::read(&paths.cube).map_err(|e| e.to_string())?;
    let (c2, l2) = read_hsc(&paths).map_err(|e| e.to_string())?;
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure!(
        bits(c2.values()) == bits(&values) && l2 == labels,
        "HSC values differ"
    );
    write_hsc(&c2, &l2, &paths).map_err(|e| e.to_string())?;
    ensure!(
        fs::read(&paths.cube).map_err(|e| e.to_string())? == bytes,
        "HSC bytes differ"
    );

    let net = NetworkSpec::mixedsn(MixedSnConfig::tiny(4, 8, 9)).map_err(|e| e.to_string())?;
    let params = ParamStore::<f32>::init(&net, &mut Rng::new(3));
    let ck = dir.path().join("n.mxsn");
    save_checkpoint(&ck, &net, &params, 3).map_err(|e| e.to_string())?;
    let (manifest, loaded) = load_checkpoint::<f32>(&ck).map_err(|e| e.to_string())?;
    ensure!(manifest.network == net, "network spec differs");
    for (a, b) in params.tensors().iter().zip(loaded.tensors()) {
        ensure!(bits(a.data()) == bits(b.data()), "checkpoint values differ");
    }

    let (mh, mw) = (13, 21);
    let (scene, _) =
        synth_scene(&SyntheticSceneSpec::new(mh, mw, 4, 3), 1).map_err(|e| e.to_string())?;
    let map: Vec<u16> = (0..mh * mw).map(|i| (i % 4) as u16).collect();
    let ppm =
        encode_class_map(&map, scene.height(), scene.width(), 3).map_err(|e| e.to_string())?;
    let header = format!("P6\n{mw} {mh}\n255\n").len();
    ensure!(
        ppm.len() == header + 3 * mh * mw,
        "PPM is {} bytes",
        ppm.len()
    );
    Ok("HSC, checkpoint and PPM sizes exact".into())
}

fn main() {
    // `cargo test -- --list` and filters come through here too
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("parameter count", parameter_count),
        ("split arithmetic", split_arithmetic),
        ("patch algebra", patch_algebra),
        ("PCA oracle", pca_oracle),
        ("metrics oracle", metrics_oracle),
        ("desk-scale learning", desk_scale_learning),
        ("determinism", determinism),
        ("shape contract", shape_contract),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
