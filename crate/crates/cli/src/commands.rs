use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fer_forge_core::data::{self, FerRecord, LabeledDataset, EMOTIONS};
use fer_forge_core::facedetect::{self, CascadeModel, DetectConfig, Detection};
use fer_forge_core::gradcheck::{self, GradcheckConfig, GradcheckReport};
use fer_forge_core::models::{self, ArchConfig, ModelKind, Network};
use fer_forge_core::optim::{OptimizerConfig, OptimizerKind};
use fer_forge_core::pnm::{self, Image};
use fer_forge_core::seed;
use fer_forge_core::train::{self, ConfusionMatrix, Monitor, StopReason, TrainConfig, EPOCH_CSV_HEADER};
use fer_forge_core::tree::{self, TreeConfig, TreeNode};
use fer_forge_core::NUM_CLASSES;

use crate::manifest::Manifest;
use crate::{DetectArgs, EvalArgs, Failure, GradcheckArgs, HistogramArgs, PredictArgs, RunArgs};

pub const DEFAULT_GRID: &str = include_str!("../manifests/optimizer_grid.manifest");

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::usage(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn read_records(path: &Path) -> Result<Vec<FerRecord>, Failure> {
    let file = File::open(path).map_err(|e| Failure::usage(format!("cannot open dataset {}: {e}", path.display())))?;
    let records = data::parse_fer_csv(BufReader::new(file))?;
    if records.is_empty() {
        return Err(Failure::usage(format!("dataset {} has no records", path.display())));
    }
    Ok(records)
}

/// Train/test split derived from the run seed.
fn split(records: &[FerRecord], seed: u64) -> Result<(LabeledDataset, LabeledDataset), Failure> {
    let (tr, te) = data::split_or_random(records, seed::derive_named(seed, "split"));
    if tr.is_empty() || te.is_empty() {
        return Err(Failure::usage(format!(
            "dataset too small to split: {} training and {} test records",
            tr.len(),
            te.len()
        )));
    }
    Ok((tr, te))
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, Failure> {
    s.parse().map_err(|e: fer_forge_core::Error| Failure::usage(e.to_string()))
}

fn parse_model(s: &str) -> Result<ModelKind, Failure> {
    s.parse().map_err(|e: fer_forge_core::Error| Failure::usage(e.to_string()))
}

/// Optimizer for a kind with optional overrides: the optimizer's default
/// learning rate and no decay unless given.
fn optimizer_for(kind: OptimizerKind, lr: Option<f64>, decay: Option<f64>) -> OptimizerConfig {
    OptimizerConfig::new(kind, lr.unwrap_or_else(|| OptimizerConfig::default_learning_rate(kind))).with_decay(decay.unwrap_or(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub optimizer: OptimizerConfig,
    pub batch: usize,
    pub epochs: usize,
}

impl Cell {
    fn parse(s: &str) -> Result<Cell, Failure> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let bad = || Failure::usage(format!("cell {s:?}: expected `optimizer batch epochs [lr [decay]]`"));
        if !(3..=5).contains(&parts.len()) {
            return Err(bad());
        }
        let kind = parse_optimizer(parts[0])?;
        let batch = parts[1].parse().map_err(|_| bad())?;
        let epochs = parts[2].parse().map_err(|_| bad())?;
        let lr = parts.get(3).map(|v| v.parse::<f64>()).transpose().map_err(|_| bad())?;
        let decay = parts.get(4).map(|v| v.parse::<f64>()).transpose().map_err(|_| bad())?;
        Ok(Cell { optimizer: optimizer_for(kind, lr, decay), batch, epochs })
    }

    fn dir_name(&self, model: ModelKind) -> String {
        format!(
            "{}_{}_b{}_e{}_lr{}_d{}",
            model.name(),
            self.optimizer.kind,
            self.batch,
            self.epochs,
            self.optimizer.learning_rate,
            self.optimizer.decay
        )
    }
}

#[derive(Debug)]
pub struct Run {
    pub models: Vec<ModelKind>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub train: TrainConfig,
    pub tree: TreeConfig,
    pub manifest: Option<Manifest>,
}

pub fn resolve(args: &RunArgs) -> Result<Run, Failure> {
    let m = args.manifest.as_deref().map(Manifest::load).transpose()?;
    let empty = Manifest::default();
    let mf = m.as_ref().unwrap_or(&empty);

    let seed = args.seed.or(mf.get("seed")?).unwrap_or(42);
    let model_list = args
        .model
        .clone()
        .or_else(|| mf.raw("models").map(str::to_string))
        .or_else(|| mf.raw("model").map(str::to_string))
        .unwrap_or_else(|| "proposed_cnn".into());
    let models = model_list.split(',').map(|s| parse_model(s.trim())).collect::<Result<Vec<_>, _>>()?;
    let data = args
        .data
        .clone()
        .or_else(|| mf.raw("data").map(PathBuf::from))
        .ok_or_else(|| Failure::usage("no dataset given (--data or `data` in the manifest)"))?;
    let out = args.out.clone().or_else(|| mf.raw("out").map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));

    let optimizer_kind = match &args.optimizer {
        Some(s) => Some(parse_optimizer(s)?),
        None => mf.raw("optimizer").map(parse_optimizer).transpose()?,
    };
    let lr = args.lr.or(mf.get("lr")?);
    let decay = args.decay.or(mf.get("decay")?);
    let defaults = TrainConfig::default();
    let optimizer = match optimizer_kind {
        Some(kind) => optimizer_for(kind, lr, decay),
        None => {
            let mut o = defaults.optimizer;
            o.learning_rate = lr.unwrap_or(o.learning_rate);
            o.decay = decay.unwrap_or(o.decay);
            o
        }
    };
    let monitor = match args.monitor.as_deref().or(mf.raw("monitor")) {
        None | Some("train") => Monitor::Train,
        Some("test") => Monitor::Test,
        Some(other) => return Err(Failure::usage(format!("unknown monitor {other:?} (expected train or test)"))),
    };
    let train = TrainConfig {
        optimizer,
        batch_size: args.batch.or(mf.get("batch")?).unwrap_or(defaults.batch_size),
        max_epochs: args.epochs.or(mf.get("epochs")?).unwrap_or(defaults.max_epochs),
        early_stopping: !args.no_early_stop && mf.get_bool("early_stopping")?.unwrap_or(true),
        strict_epoch_eval: args.strict_epoch_eval || mf.get_bool("strict_epoch_eval")?.unwrap_or(false),
        monitor,
        seed: seed::derive_named(seed, "train"),
        ..defaults
    };
    train.validate()?;
    let tree = TreeConfig {
        min_samples_split: args.min_samples_split.or(mf.get("min_samples_split")?).unwrap_or(40),
        max_depth: args.max_depth.or(mf.get("max_depth")?),
        feature_subsample: args.feature_subsample.or(mf.get("feature_subsample")?),
        seed: seed::derive_named(seed, "tree"),
    };
    tree.validate()?;
    Ok(Run { models, data, out, seed, train, tree, manifest: m })
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub test_accuracy: f64,
    pub top2_accuracy: f64,
    pub epochs_run: usize,
    pub stop_reason: Option<StopReason>,
    pub seconds: f64,
}

/// Train `kind` on `tr`, evaluate on `te`, and write the artifacts to `dir`.
fn run_cell(
    kind: ModelKind,
    cfg: &TrainConfig,
    tree_cfg: &TreeConfig,
    seed: u64,
    tr: &LabeledDataset,
    te: &LabeledDataset,
    dir: &Path,
) -> Result<CellResult, Failure> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let start = Instant::now();
    let (probs, preds, epochs_run, stop_reason) = if kind == ModelKind::Tree {
        let root = tree::fit_tree(tr, tree_cfg)?;
        let path = dir.join("tree.txt");
        fs::write(&path, root.to_text()).map_err(io_err(&path))?;
        let probs: Vec<[f32; NUM_CLASSES]> = (0..te.len()).map(|i| tree::predict_proba(&root, te.pixels(i))).collect();
        let preds = tree::predict_dataset(&root, te);
        (probs, preds, 0, None)
    } else {
        let mut net: Network<f32> = models::build(kind, &ArchConfig::default(), seed::derive_named(seed, "init"))?;
        let epoch_path = dir.join("epochs.csv");
        let mut epoch_csv = create(&epoch_path)?;
        writeln!(epoch_csv, "{EPOCH_CSV_HEADER}").map_err(io_err(&epoch_path))?;
        let mut write_err = None;
        let test = (cfg.monitor == Monitor::Test).then_some(te);
        let outcome = train::train_with(&mut net, tr, test, cfg, |log| {
            if let Err(e) = writeln!(epoch_csv, "{}", log.csv_row()).and_then(|()| epoch_csv.flush()) {
                write_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(io_err(&epoch_path)(e));
        }
        models::save_model(&net, dir.join("model.femo"))?;
        let eval = train::evaluate(&net, te)?;
        (eval.probabilities, eval.predictions, outcome.logs.len(), Some(outcome.stop_reason))
    };
    let truths: Vec<usize> = te.labels().collect();
    let cm = train::confusion(&preds, &truths);
    write_confusion(&cm, dir)?;
    Ok(CellResult {
        test_accuracy: train::accuracy(&preds, &truths)?,
        top2_accuracy: train::topk_accuracy(&probs, &truths, 2),
        epochs_run,
        stop_reason,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn write_confusion(cm: &ConfusionMatrix, dir: &Path) -> Result<(), Failure> {
    let path = dir.join("confusion.csv");
    cm.write_csv(create(&path)?).map_err(io_err(&path))?;
    let path = dir.join("confusion_rates.csv");
    cm.write_rates_csv(create(&path)?).map_err(io_err(&path))
}

fn summary(kind: ModelKind, r: &CellResult) -> String {
    let mut s = format!("model={}\n", kind.name());
    if let Some(reason) = r.stop_reason {
        s += &format!("epochs_run={}\nstop_reason={reason}\n", r.epochs_run);
    }
    s += &format!("test_accuracy={:.4}\ntop2_accuracy={:.4}\n", r.test_accuracy, r.top2_accuracy);
    s
}

pub fn train(args: &RunArgs) -> Result<(), Failure> {
    let run = resolve(args)?;
    let [kind] = run.models[..] else {
        return Err(Failure::usage("train takes exactly one model"));
    };
    let records = read_records(&run.data)?;
    let (tr, te) = split(&records, run.seed)?;
    log::info!("{}: {} training and {} test images", kind, tr.len(), te.len());
    let result = run_cell(kind, &run.train, &run.tree, run.seed, &tr, &te, &run.out)?;
    let text = summary(kind, &result);
    let path = run.out.join("summary.txt");
    fs::write(&path, &text).map_err(io_err(&path))?;
    print!("{text}");
    Ok(())
}

pub const SWEEP_CSV_HEADER: &str =
    "model,optimizer,batch_size,epochs,learning_rate,decay,test_accuracy,top2_accuracy,epochs_run,stop_reason,seconds,status";

pub fn sweep(args: &RunArgs) -> Result<(), Failure> {
    let mut run = resolve(args)?;
    let cell_lines = match &run.manifest {
        Some(m) => m.cells.clone(),
        None => Manifest::parse(DEFAULT_GRID, "default grid")?.cells,
    };
    let cells = cell_lines.iter().map(|c| Cell::parse(c)).collect::<Result<Vec<_>, _>>()?;
    let records = read_records(&run.data)?;
    let (tr, te) = split(&records, run.seed)?;
    fs::create_dir_all(&run.out).map_err(io_err(&run.out))?;
    let table_path = run.out.join("sweep.csv");
    let mut table = create(&table_path)?;
    writeln!(table, "{SWEEP_CSV_HEADER}").map_err(io_err(&table_path))?;

    let mut best: Vec<(ModelKind, Option<f64>)> = run.models.iter().map(|&m| (m, None)).collect();
    let mut failures = 0;
    for (mi, &kind) in run.models.clone().iter().enumerate() {
        // One tree run per sweep, independent of the cells.
        let kind_cells: Vec<Option<Cell>> = if kind == ModelKind::Tree {
            if cells.is_empty() { vec![] } else { vec![None] }
        } else {
            cells.iter().copied().map(Some).collect()
        };
        for cell in kind_cells {
            let (cfg, dir) = match cell {
                Some(c) => {
                    run.train.optimizer = c.optimizer;
                    run.train.batch_size = c.batch;
                    run.train.max_epochs = c.epochs;
                    (run.train.clone(), run.out.join(c.dir_name(kind)))
                }
                None => (run.train.clone(), run.out.join(kind.name())),
            };
            let cols = match cell {
                Some(c) => format!(
                    "{},{},{},{},{},{}",
                    kind.name(),
                    c.optimizer.kind,
                    c.batch,
                    c.epochs,
                    c.optimizer.learning_rate,
                    c.optimizer.decay
                ),
                None => format!("{},,,,,", kind.name()),
            };
            log::info!("sweep cell {cols}");
            let row = match cfg.validate().map_err(Failure::from).and_then(|()| run_cell(kind, &cfg, &run.tree, run.seed, &tr, &te, &dir)) {
                Ok(r) => {
                    let b = &mut best[mi].1;
                    *b = Some(b.map_or(r.test_accuracy, |v: f64| v.max(r.test_accuracy)));
                    format!(
                        "{cols},{:.4},{:.4},{},{},{:.1},ok",
                        r.test_accuracy,
                        r.top2_accuracy,
                        r.epochs_run,
                        r.stop_reason.map_or(String::new(), |s| s.to_string()),
                        r.seconds
                    )
                }
                Err(f) => {
                    log::error!("sweep cell {cols} failed: {}", f.msg);
                    failures += 1;
                    format!("{cols},,,,,,failed")
                }
            };
            writeln!(table, "{row}").and_then(|()| table.flush()).map_err(io_err(&table_path))?;
        }
    }
    if run.models.len() > 1 {
        let path = run.out.join("models.csv");
        let mut out = create(&path)?;
        writeln!(out, "model,test_accuracy").map_err(io_err(&path))?;
        for (kind, acc) in &best {
            writeln!(out, "{},{}", kind.name(), acc.map_or(String::new(), |a| format!("{a:.4}"))).map_err(io_err(&path))?;
        }
    }
    println!("wrote {}", table_path.display());
    if failures > 0 {
        return Err(Failure::compute(format!("{failures} sweep cell(s) failed")));
    }
    Ok(())
}

pub enum Model {
    Net(Network<f32>),
    Tree(TreeNode),
}

pub fn load_any_model(path: &Path) -> Result<Model, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::usage(format!("cannot read model {}: {e}", path.display())))?;
    if matches!(bytes.first(), Some(b'I' | b'L')) {
        let text = String::from_utf8(bytes).map_err(|_| Failure::usage(format!("{}: tree file is not UTF-8", path.display())))?;
        return Ok(Model::Tree(TreeNode::from_text(&text)?));
    }
    Ok(Model::Net(models::model_from_bytes(&bytes)?))
}

fn face_pixels(image: &Image, bx: &Detection) -> Result<Vec<u8>, Failure> {
    let t = facedetect::preprocess_face(image, bx)?;
    Ok(t.data().iter().map(|&v| data::denormalize(v)).collect())
}

/// Probabilities for one face region of `image`.
fn classify(model: &Model, image: &Image, bx: &Detection) -> Result<[f32; NUM_CLASSES], Failure> {
    match model {
        Model::Net(net) => {
            let face = facedetect::preprocess_face(image, bx)?;
            let p = net.predict(&face)?;
            let mut out = [0.0; NUM_CLASSES];
            out.copy_from_slice(p.data());
            Ok(out)
        }
        Model::Tree(root) => Ok(tree::predict_proba(root, &face_pixels(image, bx)?)),
    }
}

pub fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let model = load_any_model(&args.model)?;
    let records = read_records(&args.data)?;
    let (_, te) = split(&records, args.seed)?;
    let truths: Vec<usize> = te.labels().collect();
    let (probs, preds) = match &model {
        Model::Net(net) => {
            let e = train::evaluate(net, &te)?;
            (e.probabilities, e.predictions)
        }
        Model::Tree(root) => (
            (0..te.len()).map(|i| tree::predict_proba(root, te.pixels(i))).collect(),
            tree::predict_dataset(root, &te),
        ),
    };
    let cm = train::confusion(&preds, &truths);
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_confusion(&cm, dir)?;
    }
    println!("test_images={}", te.len());
    println!("test_accuracy={:.4}", train::accuracy(&preds, &truths)?);
    println!("top2_accuracy={:.4}", train::topk_accuracy(&probs, &truths, 2));
    print!("{}", cm.to_table());
    Ok(())
}

fn ranked(probs: &[f32; NUM_CLASSES]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    order
}

pub fn predict(args: &PredictArgs) -> Result<(), Failure> {
    let model = load_any_model(&args.model)?;
    let image = pnm::read(&args.image)?;
    let whole = Detection { x: 0, y: 0, w: image.width(), h: image.height(), neighbors: 0 };
    let probs = classify(&model, &image, &whole)?;
    let order = ranked(&probs);
    let mut out = io::stdout().lock();
    let mut emit = || -> io::Result<()> {
        writeln!(out, "emotion,probability")?;
        for &k in &order {
            writeln!(out, "{},{:.8}", EMOTIONS[k], probs[k])?;
        }
        writeln!(out, "top1={}", EMOTIONS[order[0]])?;
        writeln!(out, "top2={},{}", EMOTIONS[order[0]], EMOTIONS[order[1]])
    };
    emit().map_err(|e| Failure::compute(e.to_string()))
}

pub fn detect(args: &DetectArgs) -> Result<(), Failure> {
    let cascade = CascadeModel::load(&args.cascade)?;
    let image = pnm::read(&args.image)?;
    let model = args.model.as_deref().map(load_any_model).transpose()?;
    let cfg = DetectConfig {
        scale_factor: args.scale_factor,
        min_neighbors: args.min_neighbors,
        min_size: args.min_size,
        ..DetectConfig::default()
    };
    let gray = image.to_gray();
    let found = facedetect::detect(&cascade, &gray, &cfg)?;
    let mut rows = Vec::with_capacity(found.len());
    for d in &found {
        let mut row = format!("{},{},{},{},{}", d.x, d.y, d.w, d.h, d.neighbors);
        if let Some(m) = &model {
            let p = classify(m, &image, d)?;
            for v in p {
                row += &format!(",{v:.8}");
            }
            row += &format!(",{}", EMOTIONS[ranked(&p)[0]]);
        }
        rows.push(row);
    }
    let mut header = facedetect::DETECTION_CSV_HEADER.to_string();
    if model.is_some() {
        for e in EMOTIONS {
            header += &format!(",{e}");
        }
        header += ",predicted";
    }
    let text = std::iter::once(header).chain(rows).map(|r| r + "\n").collect::<String>();
    match &args.out {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gradcheck_report(args: &GradcheckArgs, cfg: &GradcheckConfig) -> Result<GradcheckReport, Failure> {
    if args.model == "all" {
        return Ok(gradcheck::run_all(cfg)?);
    }
    let kind = parse_model(&args.model)?;
    if kind == ModelKind::Tree {
        return Err(Failure::usage("the decision tree has no gradients"));
    }
    let arch = ArchConfig::toy();
    let mut net = models::build::<f64>(kind, &arch, cfg.seed)?;
    let kinds: Vec<&str> = net.layers().iter().map(|l| l.spec().name()).collect();
    let mut report = GradcheckReport::default();
    for (name, spec, shape) in gradcheck::layer_cases() {
        if kinds.contains(&spec.name()) {
            report.results.extend(gradcheck::check_layer(name, spec, &shape, cfg)?);
        }
    }
    report.results.extend(gradcheck::check_network(kind.name(), &mut net, cfg)?);
    Ok(report)
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), Failure> {
    let corrupt = args
        .corrupt
        .as_deref()
        .map(|s| {
            let (label, factor) = s.rsplit_once(':').ok_or_else(|| Failure::usage("--corrupt expects PREFIX:FACTOR"))?;
            let factor: f64 = factor.parse().map_err(|_| Failure::usage("--corrupt factor must be a number"))?;
            Ok::<_, Failure>((label.to_string(), factor))
        })
        .transpose()?;
    let cfg = GradcheckConfig { seed: args.seed, tolerance: args.tolerance, corrupt, ..GradcheckConfig::default() };
    let report = gradcheck_report(args, &cfg)?;
    report.write_csv(io::stdout().lock()).map_err(|e| Failure::compute(e.to_string()))?;
    let worst = report.worst().ok_or_else(|| Failure::compute("no gradient checks ran"))?;
    println!("max_rel_error={:e}", worst.max_rel_error);
    println!("worst={} index={}", worst.label, worst.worst_index);
    if !report.passed(args.tolerance) {
        return Err(Failure::compute(format!(
            "gradient check failed: {} index {} has relative error {:e} (analytic {:e}, numeric {:e})",
            worst.label, worst.worst_index, worst.max_rel_error, worst.analytic, worst.numeric
        )));
    }
    Ok(())
}

pub fn histogram(args: &HistogramArgs) -> Result<(), Failure> {
    let records = read_records(&args.data)?;
    let counts = data::record_histogram(&records);
    match &args.out {
        Some(p) => data::write_histogram_csv(&counts, create(p)?).map_err(io_err(p)),
        None => data::write_histogram_csv(&counts, io::stdout().lock()).map_err(|e| Failure::compute(e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_parses() {
        let m = Manifest::parse(DEFAULT_GRID, "default grid").unwrap();
        let cells: Vec<Cell> = m.cells.iter().map(|c| Cell::parse(c).unwrap()).collect();
        let shape: Vec<(OptimizerKind, usize, usize)> = cells.iter().map(|c| (c.optimizer.kind, c.batch, c.epochs)).collect();
        assert_eq!(
            shape,
            vec![
                (OptimizerKind::RmsProp, 64, 24),
                (OptimizerKind::RmsProp, 32, 9),
                (OptimizerKind::RmsProp, 96, 20),
                (OptimizerKind::Sgd, 64, 10),
                (OptimizerKind::Adam, 64, 10),
                (OptimizerKind::Adam, 128, 20),
                (OptimizerKind::Adam, 128, 20),
            ]
        );
        assert_eq!(cells[4].optimizer.learning_rate, 0.001);
        assert_eq!(cells[4].optimizer.decay, 0.0);
        assert_eq!(cells[5].optimizer.learning_rate, 0.0001);
        assert_eq!(cells[5].optimizer.decay, 1e-6);
        assert_eq!(cells[6].optimizer.decay, 1e-5);
    }

    #[test]
    fn cell_errors() {
        assert!(Cell::parse("adam 64").is_err());
        assert!(Cell::parse("lbfgs 64 10").is_err());
        assert!(Cell::parse("adam x 10").is_err());
    }

    #[test]
    fn flags_override_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.manifest");
        fs::write(&path, "model = ffnn\ndata = a.csv\noptimizer = sgd\nbatch = 16\nepochs = 3\n").unwrap();
        let args = RunArgs { manifest: Some(path), batch: Some(4), lr: Some(0.5), ..RunArgs::default() };
        let run = resolve(&args).unwrap();
        assert_eq!(run.models, vec![ModelKind::Ffnn]);
        assert_eq!(run.train.batch_size, 4);
        assert_eq!(run.train.max_epochs, 3);
        assert_eq!(run.train.optimizer.kind, OptimizerKind::Sgd);
        assert_eq!(run.train.optimizer.learning_rate, 0.5);
    }

    #[test]
    fn default_optimizer_is_tuned_adam() {
        let run = resolve(&RunArgs { data: Some("x.csv".into()), ..RunArgs::default() }).unwrap();
        assert_eq!(run.train.optimizer.kind, OptimizerKind::Adam);
        assert_eq!(run.train.optimizer.learning_rate, 1e-4);
        assert_eq!(run.train.optimizer.decay, 1e-6);
        assert_eq!(run.seed, 42);
    }
}
