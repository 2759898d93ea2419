use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use mixedsn::autodiff::{op_suite, OP_NAMES};
use mixedsn::io::{
    read_hsc, read_hsc_cube, synth_scene, write_class_map, write_hsc, HscPaths, SyntheticSceneSpec,
};
use mixedsn::metrics::{aggregate_runs, MetricsReport};
use mixedsn::network::{
    count_parameters, load_checkpoint, save_checkpoint, shape_trace, MixedSnConfig, NetworkSpec,
    ParamStore, Profile, REFERENCE_IP_PARAMETERS,
};
use mixedsn::pipeline::{train_run, InputDigest, PreprocessState, RunManifest, RunOptions};
use mixedsn::preprocess::{
    extract_patches, pca_reduce, stratified_split, train_counts, HsiCube, LabelMap, PadMode,
};
use mixedsn::trainer::{evaluate, predict_labels};
use mixedsn::Error;

use super::args::*;
use super::Failure;

type CmdResult = Result<(), Failure>;

pub const CHECKPOINT_FILE: &str = "checkpoint.mxsn";
pub const HISTORY_FILE: &str = "history.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREPROCESS_FILE: &str = "preprocess.json";

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

/// Input files after falling back to a recorded run.
struct Inputs {
    paths: HscPaths,
    has_labels: bool,
    /// Digests to check when the paths came from a manifest.
    recorded: Vec<InputDigest>,
}

fn resolve_inputs(data: &DataArgs, recorded: Option<&RunManifest>) -> Result<Inputs, Error> {
    let from_manifest = |role: &str| recorded.and_then(|m| m.input(role)).cloned();
    let mut check = Vec::new();
    let mut pick = |flag: &Option<PathBuf>, role: &str| -> Option<PathBuf> {
        match (flag, from_manifest(role)) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(d)) => {
                let path = d.path.clone();
                check.push(d);
                Some(path)
            }
            (None, None) => None,
        }
    };
    let cube = pick(&data.cube, "cube")
        .ok_or_else(|| Error::InvalidArgument("--cube is required".into()))?;
    let labels = pick(&data.labels, "labels");
    let hsc = pick(&data.hsc, "hsc");
    let mut paths = HscPaths::from_files(cube, labels.clone().unwrap_or_default());
    if let Some(hsc) = hsc {
        paths.manifest = hsc;
    }
    Ok(Inputs {
        paths,
        has_labels: labels.is_some(),
        recorded: check,
    })
}

fn require_file(path: &Path) -> Result<(), Error> {
    if path.is_file() {
        return Ok(());
    }
    Err(Error::Io {
        path: path.into(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
    })
}

impl Inputs {
    fn verify(&self) -> Result<(), Error> {
        require_file(&self.paths.cube)?;
        if self.has_labels {
            require_file(&self.paths.labels)?;
        }
        require_file(&self.paths.manifest)?;
        self.recorded.iter().try_for_each(InputDigest::verify)
    }

    fn read(&self) -> Result<(HsiCube, LabelMap), Error> {
        if !self.has_labels {
            return Err(Error::InvalidArgument("--labels is required".into()));
        }
        self.verify()?;
        read_hsc(&self.paths)
    }

    fn read_cube(&self) -> Result<HsiCube, Error> {
        self.verify()?;
        read_hsc_cube(&self.paths.manifest, &self.paths.cube)
    }

    fn digests(&self) -> Result<Vec<InputDigest>, Error> {
        Ok(vec![
            InputDigest::of_file("hsc", &self.paths.manifest)?,
            InputDigest::of_file("cube", &self.paths.cube)?,
            InputDigest::of_file("labels", &self.paths.labels)?,
        ])
    }
}

fn resolve_options(run: &RunArgs, base: Option<&RunOptions>) -> Result<RunOptions, Error> {
    let profile = run.profile.map(Profile::from);
    let mut o = match (base, profile) {
        (Some(b), None) => b.clone(),
        (Some(b), Some(p)) if b.profile == p => b.clone(),
        (_, p) => RunOptions::for_profile(p.unwrap_or(Profile::Custom)),
    };
    macro_rules! set {
        ($field:ident, $flag:expr) => {
            if let Some(v) = $flag {
                o.$field = v.into();
            }
        };
    }
    set!(bands, run.bands);
    set!(window, run.window);
    set!(cardinality, run.cardinality);
    set!(dropout, run.dropout);
    set!(train_fraction, run.train_frac);
    set!(seed, run.seed);
    set!(epochs, run.epochs);
    set!(batch_size, run.batch);
    set!(lr, run.lr);
    set!(weight_decay, run.weight_decay);
    if let Some(w) = run.widths {
        o.widths = w.widths();
    }
    if let Some(p) = run.pad_mode {
        o.pad_mode = PadMode::from(p);
    }
    o.deterministic |= run.deterministic;
    if !(o.train_fraction > 0.0 && o.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "training fraction {} outside (0, 1)",
            o.train_fraction
        )));
    }
    if !(o.lr.is_finite() && o.lr >= 0.0 && o.weight_decay.is_finite() && o.weight_decay >= 0.0) {
        return Err(Error::InvalidArgument(
            "learning rate and weight decay must be finite and non-negative".into(),
        ));
    }
    Ok(o)
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let mut spec = SyntheticSceneSpec::new(args.height, args.width, args.bands, args.classes);
    if let Some(b) = args.blobs_per_class {
        spec.blobs_per_class = b;
    }
    if let Some(n) = args.noise {
        spec.noise_std = n;
    }
    if let Some(m) = args.mixing {
        spec.mixing = m;
    }
    let (cube, labels) = synth_scene(&spec, args.seed)?;
    let paths = HscPaths::from_stem(&args.out);
    write_hsc(&cube, &labels, &paths)?;
    println!("{}", paths.manifest.display());
    println!("{}", paths.cube.display());
    println!("{}", paths.labels.display());
    Ok(())
}

pub fn pca(args: PcaArgs) -> CmdResult {
    let inputs = resolve_inputs(&args.data, None)?;
    let cube = inputs.read_cube()?;
    let reduced = pca_reduce(&cube, args.bands)?;
    let p = &reduced.projection;
    println!(
        "kept {} of {} bands, retained variance {:.6}",
        p.kept, p.source_bands, p.retained_variance
    );
    println!("component,eigenvalue");
    for (i, v) in p.eigenvalues.iter().enumerate() {
        println!("{},{v:.6e}", i + 1);
    }
    if let Some(dir) = args.out_dir {
        create_dir(&dir)?;
        let text = serde_json::to_string_pretty(p).map_err(|e| Error::Json {
            path: dir.join("pca.json"),
            source: e,
        })?;
        write_text(&dir.join("pca.json"), &(text + "\n"))?;
        if inputs.has_labels {
            let labels = inputs.read()?.1;
            write_hsc(
                &reduced.cube,
                &labels,
                &HscPaths::from_stem(dir.join("reduced")),
            )?;
        }
    }
    Ok(())
}

pub fn patch(args: PatchArgs) -> CmdResult {
    let (cube, labels) = resolve_inputs(&args.data, None)?.read()?;
    let patches = extract_patches(&cube, &labels, args.window, args.pad_mode.into())?;
    let mut per_class = vec![0usize; labels.classes()];
    for &k in patches.labels() {
        per_class[k as usize - 1] += 1;
    }
    println!(
        "window {}, {:?}, {} patches",
        args.window,
        patches.mode(),
        patches.len()
    );
    println!("class,name,patches");
    for (k, (n, name)) in per_class.iter().zip(labels.class_names()).enumerate() {
        println!("{},{name},{n}", k + 1);
    }
    Ok(())
}

pub fn split(args: SplitArgs) -> CmdResult {
    let rows: Vec<(usize, usize)> = if let Some(sizes) = &args.class_sizes {
        let train = train_counts(sizes, args.train_frac)?;
        sizes.iter().zip(train).map(|(&n, t)| (t, n - t)).collect()
    } else {
        let (cube, labels) = resolve_inputs(&args.data, None)?.read()?;
        let patches = extract_patches(&cube, &labels, args.window, args.pad_mode.into())?;
        let plan = stratified_split(
            patches.labels(),
            labels.classes(),
            args.train_frac,
            args.seed,
        )?;
        if let Some(dir) = &args.out_dir {
            create_dir(dir)?;
            let path = dir.join("split.json");
            let text = serde_json::to_string(&plan).map_err(|e| Error::Json {
                path: path.clone(),
                source: e,
            })?;
            write_text(&path, &(text + "\n"))?;
        }
        plan.train
            .iter()
            .zip(&plan.test)
            .map(|(a, b)| (a.len(), b.len()))
            .collect()
    };
    println!("class,train,test");
    for (k, (train, test)) in rows.iter().enumerate() {
        println!("{},{train},{test}", k + 1);
    }
    let (train, test): (usize, usize) = rows.iter().fold((0, 0), |(a, b), r| (a + r.0, b + r.1));
    println!("total,{train},{test}");
    Ok(())
}

pub fn train(args: TrainArgs) -> CmdResult {
    let recorded = args
        .manifest
        .as_deref()
        .map(RunManifest::read)
        .transpose()?;
    let opts = resolve_options(&args.run, recorded.as_ref().map(|m| &m.options))?;
    let inputs = resolve_inputs(&args.data, recorded.as_ref())?;
    let (cube, labels) = inputs.read()?;
    let digests = inputs.digests()?;
    create_dir(&args.out_dir)?;

    let run = train_run(&cube, &labels, &opts, args.track_test)?;
    let dir = &args.out_dir;
    save_checkpoint(dir.join(CHECKPOINT_FILE), &run.net, &run.params, opts.seed)?;
    write_text(&dir.join(HISTORY_FILE), &run.history.to_csv())?;
    run.prepared.state.write(dir.join(PREPROCESS_FILE))?;
    RunManifest::new(opts, labels.classes(), digests).write(dir.join(MANIFEST_FILE))?;

    let last = run.history.epochs.last().expect("at least one epoch");
    println!(
        "{} epochs, {} parameters, final loss {:.6}, train accuracy {:.4}{}",
        run.history.epochs.len(),
        run.params.total(),
        last.train_loss,
        last.train_acc,
        last.test_acc
            .map(|a| format!(", test accuracy {a:.4}"))
            .unwrap_or_default()
    );
    Ok(())
}

/// A trained run read back from its output directory.
struct LoadedRun {
    manifest: RunManifest,
    state: PreprocessState,
    net: NetworkSpec,
    params: ParamStore<f32>,
}

fn load_run(dir: &Path) -> Result<LoadedRun, Error> {
    let manifest = RunManifest::read(dir.join(MANIFEST_FILE))?;
    let state = PreprocessState::read(dir.join(PREPROCESS_FILE))?;
    let (ck, params) = load_checkpoint::<f32>(dir.join(CHECKPOINT_FILE))?;
    params.check_against(&ck.network)?;
    if ck.network.config.bands != state.projection.kept || ck.network.config.window != state.window
    {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects {} bands and window {}, preprocessing gives {} and {}",
            ck.network.config.bands, ck.network.config.window, state.projection.kept, state.window
        )));
    }
    Ok(LoadedRun {
        manifest,
        state,
        net: ck.network,
        params,
    })
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let run = load_run(&args.run_dir)?;
    let (cube, labels) = resolve_inputs(&args.data, Some(&run.manifest))?.read()?;
    if labels.classes() != run.net.classes() {
        return Err(Error::ShapeMismatch(format!(
            "network predicts {} classes, the label map declares {}",
            run.net.classes(),
            labels.classes()
        ))
        .into());
    }
    let patches = run.state.labeled_patches(&cube, &labels)?;
    let opts = &run.manifest.options;
    let indices = match args.split {
        SplitPart::All => (0..patches.len()).collect(),
        part => {
            let plan = stratified_split(
                patches.labels(),
                labels.classes(),
                opts.train_fraction,
                opts.seed,
            )?;
            if part == SplitPart::Train {
                plan.train_indices()
            } else {
                plan.test_indices()
            }
        }
    };
    let (_, cm) = evaluate(&run.net, &run.params, &patches, &indices)?;
    let report = MetricsReport::from_confusion(&cm)?;
    let out = args.out_dir.unwrap_or(args.run_dir);
    create_dir(&out)?;
    report.write_json(out.join("metrics.json"))?;
    write_text(&out.join("confusion.csv"), &cm.to_csv(labels.class_names()))?;
    println!(
        "{} samples: OA {:.4}, AA {:.4}, Kappa {:.4}",
        report.n_samples, report.oa, report.aa, report.kappa
    );
    Ok(())
}

pub fn predict_map(args: PredictMapArgs) -> CmdResult {
    let run = load_run(&args.run_dir)?;
    let inputs = resolve_inputs(&args.data, Some(&run.manifest))?;
    let (cube, mask) = if inputs.has_labels && !args.all_pixels {
        let (cube, labels) = inputs.read()?;
        (cube, Some(labels))
    } else {
        (inputs.read_cube()?, None)
    };
    let patches = run.state.dense_patches(&cube)?;
    let all: Vec<usize> = (0..patches.len()).collect();
    let mut predicted = predict_labels(&run.net, &run.params, &patches, &all)?;
    if let Some(labels) = &mask {
        for (p, &truth) in predicted.iter_mut().zip(labels.ids()) {
            if truth == 0 {
                *p = 0;
            }
        }
    }
    let out = args.out.unwrap_or_else(|| args.run_dir.join("map.ppm"));
    write_class_map(
        &predicted,
        cube.height(),
        cube.width(),
        run.net.classes(),
        &out,
    )?;
    println!("{}", out.display());
    Ok(())
}

pub fn paramcount(args: ParamcountArgs) -> CmdResult {
    let profile = Profile::from(args.profile);
    let config = MixedSnConfig {
        classes: args.classes.or(profile.default_classes()).unwrap_or(16),
        bands: args.bands.or(profile.default_bands()).unwrap_or(30),
        window: args.window,
        cardinality: args.cardinality,
        widths: args.widths.widths(),
        ..MixedSnConfig::for_profile(profile)
    };
    let net = NetworkSpec::mixedsn(config)?;
    let trace = shape_trace(&net, net.input_shape())?;
    let total = count_parameters(&net).total;
    let delta = total as i64 - REFERENCE_IP_PARAMETERS as i64;
    let relative = 100.0 * delta as f64 / REFERENCE_IP_PARAMETERS as f64;
    if args.json {
        let value = serde_json::json!({
            "layers": trace,
            "total": total,
            "reference": REFERENCE_IP_PARAMETERS,
            "delta": delta,
            "delta_percent": relative,
        });
        println!(
            "{}",
            serde_json::to_string_pretty(&value).expect("json value")
        );
        return Ok(());
    }
    println!("{:<16} {:<22} {:>10}", "layer", "output", "parameters");
    for row in &trace {
        println!(
            "{:<16} {:<22} {:>10}",
            row.layer,
            format!("{:?}", row.shape),
            row.parameters
        );
    }
    println!("total {total}");
    println!("reference {REFERENCE_IP_PARAMETERS}, delta {delta:+} ({relative:+.2}%)");
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CmdResult {
    if args.dtype == DTypeArg::F32 {
        return Err(
            Error::InvalidArgument("finite-difference checks run in f64 only".into()).into(),
        );
    }
    let ops: Vec<&str> = if args.ops == "all" {
        OP_NAMES.to_vec()
    } else {
        args.ops.split(',').map(str::trim).collect()
    };
    if let Some(bad) = ops.iter().find(|op| !OP_NAMES.contains(op)) {
        return Err(Error::InvalidArgument(format!(
            "unknown op `{bad}`; known: {}",
            OP_NAMES.join(", ")
        ))
        .into());
    }
    let reports = op_suite(&ops, args.h, args.tol, args.seed)?;
    println!(
        "{:<14} {:>12} {:>12}  result",
        "op", "max rel err", "max abs err"
    );
    for r in &reports {
        println!(
            "{:<14} {:>12.3e} {:>12.3e}  {}",
            r.name,
            r.max_rel_error,
            r.max_abs_error,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::numeric(format!(
            "{failed} op(s) exceed tolerance {}",
            args.tol
        )));
    }
    Ok(())
}

pub fn sweep(args: SweepArgs) -> CmdResult {
    if args.fractions.len() < 2 {
        return Err(Error::InvalidArgument("a sweep needs at least two fractions".into()).into());
    }
    let mut seen = HashSet::new();
    for &f in &args.fractions {
        if !(f > 0.0 && f < 1.0) {
            return Err(
                Error::InvalidArgument(format!("training fraction {f} outside (0, 1)")).into(),
            );
        }
        if !seen.insert(f.to_bits()) {
            return Err(Error::InvalidArgument(format!("duplicate fraction {f}")).into());
        }
    }
    if args.runs == 0 {
        return Err(Error::InvalidArgument("--runs must be at least 1".into()).into());
    }
    let base = resolve_options(&args.run, None)?;
    let (cube, labels) = resolve_inputs(&args.data, None)?.read()?;

    let mut csv =
        String::from("fraction,runs,oa_mean,oa_std,aa_mean,aa_std,kappa_mean,kappa_std\n");
    for &fraction in &args.fractions {
        let mut reports = Vec::with_capacity(args.runs);
        for r in 0..args.runs {
            let opts = RunOptions {
                train_fraction: fraction,
                seed: base.seed + r as u64,
                ..base.clone()
            };
            let run = train_run(&cube, &labels, &opts, false)?;
            let test = run.prepared.split.test_indices();
            let (_, cm) = evaluate(&run.net, &run.params, &run.prepared.patches, &test)?;
            let report = MetricsReport::from_confusion(&cm)?;
            log::info!(
                "fraction {fraction} seed {}: OA {:.4}",
                opts.seed,
                report.oa
            );
            reports.push(report);
        }
        let a = aggregate_runs(&reports)?;
        csv.push_str(&format!(
            "{fraction},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            a.runs, a.oa.mean, a.oa.std, a.aa.mean, a.aa.std, a.kappa.mean, a.kappa.std
        ));
    }
    match args.out_dir {
        Some(dir) => {
            create_dir(&dir)?;
            write_text(&dir.join("sweep.csv"), &csv)?;
            println!("{}", dir.join("sweep.csv").display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
