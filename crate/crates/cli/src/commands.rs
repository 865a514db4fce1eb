use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use m2s_core::config::KvConfig;
use m2s_core::fusion::{build_instance_db, fuse_scan, FusionConfig};
use m2s_core::instance_gen::{generate_instance_ids, InstanceGenConfig};
use m2s_core::kitti_io::{
    make_synthetic_sequence, parse_labels, parse_scan, write_labels, ClassMap, SequenceIndex,
    SyntheticConfig,
};
use m2s_core::metrics::{format_iou_table, miou, ConfusionMatrix};
use m2s_core::toynet::scenes::street_batch;
use m2s_core::toynet::{
    evaluate, loss_table_header, loss_table_row, train_step, TrainBatch, TrainConfig, TrainState,
};
use m2s_core::verify::{format_results, loss_check_suite, SuiteConfig};
use m2s_core::Error;

use crate::{
    BuildAugdbArgs, Command, EvalMiouArgs, FuseArgs, FusionFlags, GenInstancesArgs, LossCheckArgs,
    MakeSyntheticArgs, TrainToyArgs,
};

pub enum CliError {
    Usage(String),
    Data(Error),
    /// Writing to stdout failed, e.g. a closed pipe.
    Output(io::Error),
}

macro_rules! out {
    ($($arg:tt)*) => {
        write!(io::stdout().lock(), $($arg)*).map_err(CliError::Output)?
    };
}

macro_rules! outln {
    ($($arg:tt)*) => {
        writeln!(io::stdout().lock(), $($arg)*).map_err(CliError::Output)?
    };
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult = Result<ExitCode, CliError>;

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Inspect { path } => inspect(&path),
        Command::GenInstances(a) => gen_instances(a),
        Command::Fuse(a) => fuse(a),
        Command::BuildAugdb(a) => build_augdb(a),
        Command::LossCheck(a) => loss_check(a),
        Command::TrainToy(a) => train_toy(a),
        Command::EvalMiou(a) => eval_miou(a),
        Command::MakeSynthetic(a) => make_synthetic(a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| {
        CliError::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::Data(Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })
        })?;
    }
    fs::write(path, bytes).map_err(|e| {
        CliError::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn load_kv(path: Option<&Path>) -> Result<KvConfig, CliError> {
    Ok(match path {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    })
}

fn fusion_config(flags: &FusionFlags) -> Result<FusionConfig, CliError> {
    let mut kv = load_kv(flags.config.as_deref())?;
    if let Some(w) = flags.window {
        kv.set("window", w);
    }
    if let Some(m) = flags.moving_threshold {
        kv.set("moving_threshold", m);
    }
    if flags.no_register {
        kv.set("register_moving", false);
    }
    FusionConfig::default()
        .apply_kv(&kv)
        .map_err(usage_if_invalid)
}

/// Bad values given on the command line are usage errors.
fn usage_if_invalid(e: Error) -> CliError {
    match e {
        Error::InvalidConfig(msg) => CliError::Usage(msg),
        other => CliError::Data(other),
    }
}

fn inspect(path: &Path) -> CliResult {
    if path.is_dir() {
        let idx = SequenceIndex::open(path)?;
        let labelled = idx.label_paths.iter().filter(|p| p.is_some()).count();
        outln!("sequence: {}", idx.name());
        outln!("scans: {}", idx.len());
        outln!("labelled scans: {labelled}");
        outln!("poses: {}", idx.poses.len());
        return Ok(ExitCode::SUCCESS);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => {
            let cloud = parse_scan(&read(path)?)?;
            outln!("points: {}", cloud.len());
            if let Some((lo, hi)) = cloud.bounding_box() {
                outln!("bbox min: {:.4} {:.4} {:.4}", lo.x, lo.y, lo.z);
                outln!("bbox max: {:.4} {:.4} {:.4}", hi.x, hi.y, hi.z);
            }
        }
        Some("label") => {
            let labels = parse_labels(&read(path)?)?;
            let map = ClassMap::semantic_kitti();
            let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
            for &s in labels.semantic() {
                *counts.entry(s).or_default() += 1;
            }
            let instances: BTreeSet<(u16, u16)> = labels
                .semantic()
                .iter()
                .zip(labels.instance())
                .filter(|(_, &i)| i != 0)
                .map(|(&s, &i)| (s, i))
                .collect();
            outln!("labels: {}", labels.len());
            outln!("instances: {}", instances.len());
            for (class, n) in counts {
                outln!("{class:>5} {:<20} {n}", map.raw_name(class).unwrap_or("?"));
            }
        }
        _ => {
            return Err(CliError::Usage(format!(
                "{} is neither a .bin, a .label nor a directory",
                path.display()
            )))
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn gen_instances(a: GenInstancesArgs) -> CliResult {
    let cfg = InstanceGenConfig {
        target_class: a.class,
        stop_distance: a.stop_distance,
        min_cluster_points: a.min_points,
    };
    cfg.validate().map_err(usage_if_invalid)?;
    let idx = SequenceIndex::open(&a.seq)?;
    let cloud = idx.load_scan(a.scan)?;
    let labels = idx
        .load_labels(a.scan)?
        .ok_or(Error::MissingLabels(a.scan))?;
    let out = generate_instance_ids(&cloud, &labels, &cfg)?;
    let before = labels.max_instance();
    let new_ids: BTreeSet<u16> = out
        .instance()
        .iter()
        .copied()
        .filter(|&i| i > before)
        .collect();
    write(&a.out, &write_labels(&out))?;
    outln!("instances: {}", new_ids.len());
    Ok(ExitCode::SUCCESS)
}

fn fuse(a: FuseArgs) -> CliResult {
    let cfg = fusion_config(&a.fusion)?;
    let idx = SequenceIndex::open(&a.seq)?;
    let (seq, local_t) = idx.load_window(a.scan, cfg.window)?;
    let fused = fuse_scan(&seq, local_t, &cfg)?;
    let stem = a
        .out
        .unwrap_or_else(|| a.seq.join("fused").join(format!("{:06}", a.scan)));
    fused.write(&stem)?;
    for w in &fused.warnings {
        eprintln!(
            "warning: instance {} from scan {:+}: {:?}",
            w.instance_id, w.origin, w.kind
        );
    }
    outln!("current points: {}", fused.current_len());
    outln!("appended points: {}", fused.appended_len());
    outln!("written: {}", stem.with_extension("bin").display());
    Ok(ExitCode::SUCCESS)
}

fn build_augdb(a: BuildAugdbArgs) -> CliResult {
    let cfg = fusion_config(&a.fusion)?;
    let seq = SequenceIndex::open(&a.seq)?.load()?;
    let db = build_instance_db(&seq, &cfg, &a.out)?;
    outln!("entries: {}", db.len());
    Ok(ExitCode::SUCCESS)
}

fn loss_check(a: LossCheckArgs) -> CliResult {
    let results = loss_check_suite(&SuiteConfig {
        seed: a.seed,
        gradient_cases: a.cases,
        property_cases: a.property_cases,
    })?;
    out!("{}", format_results(&results));
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        eprintln!("{failed} check(s) failed");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn train_toy(a: TrainToyArgs) -> CliResult {
    let kv = load_kv(a.config.as_deref())?;
    let mut tcfg = TrainConfig::default()
        .apply_kv(&kv)
        .map_err(usage_if_invalid)?;
    if let Some(s) = a.steps {
        tcfg.steps = s;
    }
    if let Some(lr) = a.lr {
        tcfg.lr = lr;
    }
    if let Some(h) = a.hidden {
        tcfg.hidden = h;
    }
    tcfg.validate().map_err(usage_if_invalid)?;
    if a.every == 0 {
        return Err(CliError::Usage("--every must be positive".into()));
    }
    let fcfg = FusionConfig::default()
        .apply_kv(&kv)
        .map_err(usage_if_invalid)?;
    let class_map = ClassMap::semantic_kitti();

    let batch = match &a.seq {
        Some(dir) => {
            let idx = SequenceIndex::open(dir)?;
            if idx.is_empty() {
                return Err(Error::EmptyInput("sequence").into());
            }
            let t = a.scan.unwrap_or(idx.len() - 1);
            let (seq, local_t) = idx.load_window(t, fcfg.window)?;
            let fused = fuse_scan(&seq, local_t, &fcfg)?;
            TrainBatch::from_fused(&fused, &class_map, &fcfg.hard_classes)?
        }
        None => {
            if a.scans == 0 {
                return Err(CliError::Usage("--scans must be positive".into()));
            }
            street_batch(a.scans, a.seed, &fcfg)?.1
        }
    };

    let mut state = TrainState::new(&tcfg, class_map.n_train_classes(), a.seed)?;
    outln!("{}", loss_table_header());
    for i in 0..tcfg.steps {
        let report = train_step(&mut state, &batch)?;
        if i % a.every == 0 || i + 1 == tcfg.steps {
            outln!("{}", loss_table_row(&report));
        }
    }
    let ignore: BTreeSet<u32> = [0].into();
    let eval = evaluate(
        &state.student,
        &[(&batch.student_input, &batch.student_targets[..])],
        &ignore,
    )?;
    let names: Vec<String> = (0..class_map.n_train_classes() as u16)
        .map(|c| class_map.train_name(c))
        .collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    outln!();
    out!(
        "{}",
        format_iou_table(&names, &eval.per_class, eval.mean, &ignore)
    );
    Ok(ExitCode::SUCCESS)
}

fn label_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("labels");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn label_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| {
        CliError::Data(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "label"))
        .collect();
    files.sort();
    Ok(files)
}

fn eval_miou(a: EvalMiouArgs) -> CliResult {
    let class_map = match &a.classmap {
        Some(p) => ClassMap::load(p)?,
        None => ClassMap::semantic_kitti(),
    };
    let n = class_map.n_train_classes();
    let ignore: BTreeSet<u32> = a.ignore.iter().copied().collect();
    let gt_dir = label_dir(&a.gt);
    let pred_dir = label_dir(&a.pred);
    let gt_files = label_files(&gt_dir)?;
    if gt_files.is_empty() {
        return Err(Error::EmptyInput("ground-truth labels").into());
    }
    let to_train =
        |s: &[u16]| -> Vec<u32> { s.iter().map(|&r| class_map.to_train(r) as u32).collect() };
    let mut cm = ConfusionMatrix::new(n, ignore.clone());
    for gt_path in &gt_files {
        let name = gt_path.file_name().expect("listed files have names");
        let gt = parse_labels(&read(gt_path)?)?;
        let pred = parse_labels(&read(&pred_dir.join(name))?)?;
        if gt.len() != pred.len() {
            return Err(Error::ShapeError(format!(
                "{}: {} predictions for {} labels",
                name.to_string_lossy(),
                pred.len(),
                gt.len()
            ))
            .into());
        }
        cm.add_all(&to_train(pred.semantic()), &to_train(gt.semantic()))?;
    }
    let (per_class, mean) = miou(&cm)?;
    let names: Vec<String> = (0..n as u16).map(|c| class_map.train_name(c)).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    out!("{}", format_iou_table(&names, &per_class, mean, &ignore));
    Ok(ExitCode::SUCCESS)
}

fn make_synthetic(a: MakeSyntheticArgs) -> CliResult {
    if a.scans == 0 {
        return Err(CliError::Usage("--scans must be positive".into()));
    }
    let syn = make_synthetic_sequence(&SyntheticConfig::street_scene(a.scans), a.seed)?;
    syn.sequence.write(&a.out, &syn.calib_velo_to_cam)?;
    outln!("scans: {}", syn.sequence.len());
    outln!("written: {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}
