// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use oblivinfer::attack::{
    accuracy_curve, attack_eval, curve_csv, curve_svg, logreg_train, AttackDataset, CurvePoint, FeatureExtractor,
    LayerSelector, LogRegConfig,
};
use oblivinfer::bench::{bench_csv, bench as run_bench};
use oblivinfer::channel::{
    layout_assign, random_input, site_name, trace_forward, verify as run_verify, MemoryLayout, TraceFile,
    VerifyConfig,
};
use oblivinfer::runtime::{kernel_manifest, load_model, save_model, ModelGraph};
use oblivinfer::train::{
    epoch_log_csv, load_cifar10_dir, load_mnist_dir, train_lenet, train_mlp, LabelledDataset, Split, TrainConfig,
};
use oblivinfer::{zoo, Error, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{AttackArgs, BenchArgs, ManifestArgs, ModelArgs, TraceArgs, TrainArgs, VerifyArgs};

pub const LABELS_FILE: &str = "labels.csv";

/// Argument problems are usage errors; everything else is a failure.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => 2,
        _ => 1,
    }
}

fn comment(cmd: &str, pairs: &[(&str, String)]) -> String {
    let mut s = format!("oblivinfer {cmd}");
    for (k, v) in pairs {
        let _ = write!(s, " {k}={v}");
    }
    s
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn load(m: &ModelArgs) -> Result<ModelGraph> {
    let path = Path::new(&m.model);
    if path.extension().is_some_and(|e| e == "json") || path.is_file() {
        let weights = m.weights.clone().unwrap_or_else(|| path.with_extension("bin"));
        return load_model(path, &weights);
    }
    if m.weights.is_some() {
        return Err(Error::Argument(format!(
            "--weights given but {:?} is a built-in model name, not a manifest",
            m.model
        )));
    }
    zoo::by_name(&m.model, m.seed)
}

fn model_pairs(m: &ModelArgs, g: &ModelGraph, layout: &MemoryLayout) -> Vec<(&'static str, String)> {
    vec![
        ("model", m.model.clone()),
        ("name", g.name().to_string()),
        ("seed", m.seed.to_string()),
        ("compact_layout", m.compact_layout.to_string()),
        ("fingerprint", layout.fingerprint_hex()),
    ]
}

fn dataset_root(d: &Option<PathBuf>) -> Result<&Path> {
    d.as_deref().ok_or_else(|| {
        Error::Argument("no dataset root: pass --dataset or set OBLIVINFER_DATA".into())
    })
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(Error::Argument(format!("unknown split {s:?} (expected train or test)"))),
    }
}

/// MNIST or CIFAR-10, chosen by the model's input size.
fn dataset_for(input_len: usize, root: &Path, split: Split, pad32: bool) -> Result<LabelledDataset> {
    if !root.is_dir() {
        return Err(Error::Argument(format!("dataset root {} is not a directory", root.display())));
    }
    let d = match input_len {
        3072 => load_cifar10_dir(root, split)?,
        1024 => load_mnist_dir(root, split, true)?,
        _ => load_mnist_dir(root, split, pad32)?,
    };
    if d.image_len() != input_len {
        return Err(Error::Argument(format!(
            "dataset images have {} values but the model expects {input_len}",
            d.image_len()
        )));
    }
    Ok(d)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        momentum: a.momentum,
        seed: a.seed,
    };
    cfg.validate()?;
    let root = dataset_root(&a.dataset)?;
    let (manifest, blob) = (a.out.join(format!("{}.json", a.model)), a.out.join(format!("{}.bin", a.model)));
    if !a.force && (manifest.exists() || blob.exists()) {
        return Err(Error::Argument(format!("{} already exists (use --force)", manifest.display())));
    }
    let trained = match a.model.as_str() {
        "mlp" => {
            let arch = a.arch.clone().unwrap_or_else(|| {
                vec![if a.pad32 { 1024 } else { 784 }, 256, 128, 10]
            });
            let tr = dataset_for(arch[0], root, Split::Train, a.pad32)?;
            let te = dataset_for(arch[0], root, Split::Test, a.pad32)?;
            let tr = a.limit.map_or(tr.clone(), |n| tr.take(n));
            train_mlp(&arch, &tr, Some(&te), &cfg)?
        }
        "lenet" => {
            let tr = dataset_for(3072, root, Split::Train, false)?;
            let te = dataset_for(3072, root, Split::Test, false)?;
            let tr = a.limit.map_or(tr.clone(), |n| tr.take(n));
            train_lenet(&tr, Some(&te), &cfg)?
        }
        other => return Err(Error::Argument(format!("cannot train {other:?} (expected mlp or lenet)"))),
    };
    fs::create_dir_all(&a.out)?;
    save_model(&trained.model, &manifest, &blob, true)?;
    let c = comment(
        "train",
        &[
            ("model", a.model.clone()),
            ("epochs", a.epochs.to_string()),
            ("batch_size", a.batch_size.to_string()),
            ("lr", a.lr.to_string()),
            ("momentum", a.momentum.to_string()),
            ("limit", a.limit.map_or("none".into(), |n| n.to_string())),
            ("pad32", a.pad32.to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    print!("{}", epoch_log_csv(&c, &trained.log));
    eprintln!("wrote {} and {}", manifest.display(), blob.display());
    Ok(ExitCode::SUCCESS)
}

fn trace_name(i: usize) -> String {
    format!("trace_{i:06}.otrc")
}

pub fn trace(a: TraceArgs) -> Result<ExitCode> {
    let split = parse_split(&a.split)?;
    if a.count == 0 {
        return Err(Error::Argument("--count must be positive".into()));
    }
    let g = load(&a.model)?;
    let layout = layout_assign(&g, a.model.compact_layout);
    let inputs: Vec<Tensor> = if a.random {
        let mut rng = ChaCha8Rng::seed_from_u64(a.model.seed);
        (0..a.count).map(|_| random_input(&g, &mut rng)).collect()
    } else {
        let d = dataset_for(g.input_shape().numel(), dataset_root(&a.dataset)?, split, a.pad32)?;
        if a.offset + a.count > d.len() {
            return Err(Error::Argument(format!(
                "examples {}..{} requested but the {split} split has {}",
                a.offset,
                a.offset + a.count,
                d.len()
            )));
        }
        (a.offset..a.offset + a.count)
            .map(|i| d.example(i, g.input_shape()))
            .collect::<Result<_>>()?
    };
    fs::create_dir_all(&a.out)?;
    let mut pairs = model_pairs(&a.model, &g, &layout);
    pairs.extend([
        ("mode", a.mode.to_string()),
        ("granularity", a.granularity.to_string()),
        (
            "inputs",
            if a.random {
                "random".into()
            } else {
                format!("{split}[{}..{}]", a.offset, a.offset + a.count)
            },
        ),
    ]);
    let mut labels = format!("# {}\nindex,file,label\n", comment("trace", &pairs));
    for (i, x) in inputs.iter().enumerate() {
        let (t, pred) = trace_forward(&g, &layout, x, a.mode)?;
        let file = TraceFile::from_trace(&t, a.granularity);
        let name = trace_name(i);
        let mut w = std::io::BufWriter::new(fs::File::create(a.out.join(&name))?);
        file.write_to(&mut w)?;
        if a.csv {
            fs::write(a.out.join(format!("{name}.csv")), file.to_csv())?;
        }
        let _ = writeln!(labels, "{i},{name},{}", pred.label);
    }
    fs::write(a.out.join(LABELS_FILE), labels)?;
    eprintln!("wrote {} traces to {}", inputs.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Trace files and service labels listed in a trace directory.
fn read_trace_dir(dir: &Path) -> Result<Vec<(PathBuf, usize)>> {
    let path = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Argument(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("{}: bad row {line:?}", path.display()));
        if cells.len() != 3 {
            return Err(bad());
        }
        rows.push((dir.join(cells[1]), cells[2].parse().map_err(|_| bad())?));
    }
    Ok(rows)
}

fn dataset_from_traces(dir: &Path, g: &ModelGraph, layout: &MemoryLayout, sel: LayerSelector) -> Result<AttackDataset> {
    let rows = read_trace_dir(dir)?;
    let mut extractor: Option<FeatureExtractor> = None;
    let mut features = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (path, label) in rows {
        let t = TraceFile::parse(&fs::read(&path)?)?.to_channel();
        if extractor.as_ref().is_none_or(|e| e.granularity() != t.granularity) {
            extractor = Some(FeatureExtractor::new(g, layout, t.granularity, sel)?);
        }
        features.push(extractor.as_ref().expect("set above").extract(&t)?);
        labels.push(label);
    }
    AttackDataset::new(features, labels, g.num_classes())
}

pub fn attack(a: AttackArgs) -> Result<ExitCode> {
    let g = load(&a.model)?;
    let layout = layout_assign(&g, a.model.compact_layout);
    let cfg = LogRegConfig::default();
    let mut pairs = model_pairs(&a.model, &g, &layout);
    pairs.extend([
        ("traces", a.traces.display().to_string()),
        ("folds", a.folds.to_string()),
        (
            "logreg",
            format!("lr={}/iters={}/l2={}", cfg.learning_rate, cfg.iterations, cfg.l2),
        ),
    ]);
    let mut series: Vec<(String, Vec<CurvePoint>)> = Vec::new();
    let mut victim_report = String::new();
    for &sel in &a.selector {
        let d = dataset_from_traces(&a.traces, &g, &layout, sel)?;
        let sizes = a.sizes.clone().unwrap_or_else(|| vec![d.len()]);
        let pts = accuracy_curve(&d, &sizes, a.folds, &cfg)?;
        for p in &pts {
            eprintln!("{} size={} cv_accuracy={:.4}", sel.name(), p.size, p.accuracy);
        }
        if let Some(v) = &a.victims {
            let victims = dataset_from_traces(v, &g, &layout, sel)?;
            let c = logreg_train(&d, &cfg)?;
            let e = attack_eval(&c, &victims)?;
            eprintln!("{} victim_accuracy={:.4} over {} traces", sel.name(), e.accuracy, victims.len());
            let mut vp = pairs.clone();
            vp.extend([("selector", sel.name().to_string()), ("victims", v.display().to_string())]);
            let _ = write!(
                victim_report,
                "# {} accuracy={:.6}\n{}",
                comment("attack", &vp),
                e.accuracy,
                e.confusion_csv("")
            );
        }
        series.push((sel.name().to_string(), pts));
    }
    let refs: Vec<(&str, &[CurvePoint])> = series.iter().map(|(n, p)| (n.as_str(), p.as_slice())).collect();
    emit(a.out.as_deref(), &curve_csv(&comment("attack", &pairs), &refs))?;
    if let Some(p) = &a.plot {
        emit(Some(p), &curve_svg("attack accuracy vs training traces", &refs))?;
    }
    if !victim_report.is_empty() {
        match &a.out {
            Some(o) => emit(Some(&o.with_extension("confusion.csv")), &victim_report)?,
            None => print!("{victim_report}"),
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let g = load(&a.model)?;
    let r = run_verify(
        &g,
        &VerifyConfig {
            inputs: a.count,
            seed: a.model.seed,
            compact: a.model.compact_layout,
            inject_leaky_layer: a.inject_leaky_layer,
        },
    )?;
    println!(
        "# {}",
        comment(
            "verify",
            &[
                ("model", a.model.model.clone()),
                ("count", a.count.to_string()),
                ("seed", a.model.seed.to_string()),
                ("fingerprint", r.fingerprint.clone()),
            ]
        )
    );
    match &r.oblivious_divergence {
        None => println!("oblivious: {} traces identical at full granularity", r.inputs),
        Some(d) => println!(
            "oblivious: input {} diverges at event {} site {}",
            d.input,
            d.event,
            d.site.map_or_else(|| "none".into(), site_name)
        ),
    }
    let names: Vec<String> = r.leaky_sites.iter().map(|&s| site_name(s)).collect();
    println!("leaky: divergent sites [{}]", names.join(", "));
    println!("leaky: leak at a known branch site: {}", r.leak_detected());
    println!("{}", if r.passed() { "PASS" } else { "FAIL" });
    Ok(if r.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn bench(a: BenchArgs) -> Result<ExitCode> {
    let g = load(&a.model)?;
    let r = run_bench(&g, a.iterations, a.model.seed)?;
    let c = comment(
        "bench",
        &[
            ("model", a.model.model.clone()),
            ("iterations", a.iterations.to_string()),
            ("seed", a.model.seed.to_string()),
        ],
    );
    eprintln!("oblivious/leaky ratio {:.4}", r.ratio());
    emit(a.out.as_deref(), &bench_csv(&c, &[r]))?;
    Ok(ExitCode::SUCCESS)
}

pub fn manifest(a: ManifestArgs) -> Result<ExitCode> {
    let g = load(&a.model)?;
    let m = kernel_manifest(&g);
    let c = comment("manifest", &[("model", a.model.model.clone()), ("seed", a.model.seed.to_string())]);
    emit(a.out.as_deref(), &m.to_csv(&c))?;
    Ok(ExitCode::SUCCESS)
}
