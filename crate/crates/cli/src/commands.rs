//! Subcommand implementations. Every command reads its inputs, writes its
//! outputs under `--out`, and never touches the input files.

use std::fs;
use std::path::{Path, PathBuf};

use cass_core::attribution;
use cass_core::eval::{self, LabelRecord, Level, PredictionRecord};
use cass_core::labels::StenosisClass;
use cass_core::model::{self, Model, ModelConfig};
use cass_core::preprocess::{self, RawMprImage};
use cass_core::report::{self, ClassRule};
use cass_core::synthgen::{self, GenConfig, Manifest};
use cass_core::tensor::Tensor;
use cass_core::trainer::{self, Adam, AugmentConfig, Batch, Classifier, TrainConfig};
use cass_core::{Error, Result};
use clap::Args;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data;
use crate::Global;

pub const WEIGHTS_FILE: &str = "model.cassw";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const METRICS_FILE: &str = "metrics.json";

pub fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path, source: serde_json::Error) -> Error {
    Error::Json {
        context: path.display().to_string(),
        source,
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| json_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// JSON generator config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub vessel_width: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Fraction of views in which a stenosis is visible.
    #[arg(long)]
    pub visible_fraction: Option<f64>,
    #[arg(long)]
    pub distractor_prob: Option<f64>,
    /// Add bright calcified blobs off the vessel.
    #[arg(long)]
    pub calcified: bool,
    /// Do not stamp the view-angle text.
    #[arg(long)]
    pub no_text: bool,
}

pub fn generate(g: &Global, a: &GenerateArgs) -> Result<()> {
    let mut cfg: GenConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    cfg.seed = g.seed;
    if let Some(v) = a.patients {
        cfg.patients = v;
    }
    if let Some(v) = a.views {
        cfg.views_per_branch = v;
    }
    if let Some(v) = a.image_size {
        cfg.image_size = v;
    }
    if let Some(v) = a.vessel_width {
        cfg.vessel_width = v;
    }
    if let Some(v) = a.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = a.visible_fraction {
        cfg.visible_view_fraction = v;
    }
    if let Some(v) = a.distractor_prob {
        cfg.distractor_branch_prob = v;
    }
    cfg.calcified_distractor |= a.calcified;
    cfg.text_overlay &= !a.no_text;
    let m = synthgen::generate_dataset(&cfg, &g.out)?;
    let branches: usize = m.patients.iter().map(|p| p.branches.len()).sum();
    println!(
        "generated {} patients, {branches} branches in {}",
        m.patients.len(),
        g.out.display()
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Use every n-th view of each branch.
    #[arg(long, default_value_t = 1)]
    pub view_stride: usize,
    /// Feed raw normalised views instead of text-removed ones.
    #[arg(long)]
    pub no_clean: bool,
}

impl DataArgs {
    fn load(&self) -> Result<(Manifest, Vec<(synthgen::ViewEntry, preprocess::CleanImage)>)> {
        if self.view_stride == 0 {
            return Err(Error::Argument("--view-stride must be at least 1".into()));
        }
        let m = Manifest::load(&self.data)?;
        let views = data::load_views(&self.data, &m, self.view_stride, !self.no_clean)?;
        if views.is_empty() {
            return Err(Error::Argument(format!("dataset {} has no views", self.data.display())));
        }
        Ok((m, views))
    }
}

fn initial_model(init: &Option<PathBuf>, m: &Manifest, seed: u64) -> Result<Model<f32>> {
    let model = match init {
        Some(p) => model::load_weights(p)?,
        None => Model::new(
            ModelConfig::default()
                .with_input(m.config.image_size, m.config.image_size)
                .with_seed(seed),
        )?,
    };
    let [_, h, w] = model.config().input_shape;
    if (h, w) != (m.config.image_size, m.config.image_size) {
        return Err(Error::Shape(format!(
            "model expects {h}x{w} input, dataset images are {0}x{0}",
            m.config.image_size
        )));
    }
    Ok(model)
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub micro_batch: usize,
    #[arg(long, default_value_t = 1)]
    pub accumulation_steps: usize,
    /// Repeat minority-class samples up to the majority count.
    #[arg(long)]
    pub balance: bool,
    /// Disable all augmentations.
    #[arg(long)]
    pub no_augment: bool,
    /// Start from these weights instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

pub fn train(g: &Global, a: &TrainArgs) -> Result<()> {
    let (m, views) = a.data.load()?;
    let samples = data::samples(&views);
    log::info!(
        "training on {} views, class counts {:?}",
        samples.len(),
        data::class_counts(&samples)
    );
    let mut model = initial_model(&a.init, &m, g.seed)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        micro_batch: a.micro_batch,
        accumulation_steps: a.accumulation_steps,
        epochs: a.epochs,
        augment: if a.no_augment {
            AugmentConfig::none()
        } else {
            AugmentConfig::default()
        },
        balance: a.balance,
        seed: g.seed,
        ..TrainConfig::default()
    };
    let log_path = g.out.join(TRAIN_LOG_FILE);
    let mut lines = String::new();
    let log = trainer::train(&mut model, &samples, &cfg, |e| {
        let line = serde_json::to_string(e).expect("epoch log serialises");
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    })?;
    debug_assert_eq!(lines, log.to_json_lines());
    write_text(&log_path, &lines)?;
    model::save_weights(&model, &g.out.join(WEIGHTS_FILE))
}

#[derive(Debug, Args, Serialize)]
pub struct LrFindArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1e-6)]
    pub lr_lo: f64,
    #[arg(long, default_value_t = 1e-1)]
    pub lr_hi: f64,
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    #[arg(long, default_value_t = 16)]
    pub micro_batch: usize,
    #[arg(long)]
    pub init: Option<PathBuf>,
}

pub fn lr_find(g: &Global, a: &LrFindArgs) -> Result<()> {
    if a.micro_batch == 0 {
        return Err(Error::Argument("--micro-batch must be at least 1".into()));
    }
    let (m, views) = a.data.load()?;
    let samples = data::samples(&views);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(g.seed));
    let batches = order
        .chunks(a.micro_batch)
        .take(a.iterations)
        .map(|idx| {
            let picked: Vec<_> = idx.iter().map(|&i| samples[i].clone()).collect();
            trainer::batch_of(&picked)
        })
        .collect::<Result<Vec<Batch<f32>>>>()?;
    let mut learner = Classifier::new(initial_model(&a.init, &m, g.seed)?);
    let r = trainer::lr_range_test(
        &mut learner,
        &batches,
        a.lr_lo,
        a.lr_hi,
        a.iterations,
        Adam::new(Default::default()),
    )?;
    write_json(&g.out.join("lr_range.json"), &r)?;
    write_text(&g.out.join("lr_range.csv"), &r.to_csv())?;
    println!("suggested lr range [{:e}, {:e}]", r.suggested_min, r.suggested_max);
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Views per forward pass.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
}

pub fn predict(g: &Global, a: &PredictArgs) -> Result<()> {
    if a.batch == 0 {
        return Err(Error::Argument("--batch must be at least 1".into()));
    }
    let model: Model<f32> = model::load_weights(&a.weights)?;
    let (_, views) = a.data.load()?;
    let mut records = Vec::with_capacity(views.len());
    for chunk in views.chunks(a.batch) {
        let images: Vec<Tensor<f32>> = chunk.iter().map(|(_, img)| img.to_tensor()).collect();
        let probs = model.predict_proba(&Tensor::stack(&images)?)?;
        for ((v, _), p) in chunk.iter().zip(probs.data().chunks(3)) {
            records.push(PredictionRecord {
                patient: v.patient.clone(),
                artery: v.artery.clone(),
                branch: v.branch.clone(),
                view: v.view,
                probs: [p[0] as f64, p[1] as f64, p[2] as f64],
            });
        }
    }
    write_json(&g.out.join(PREDICTIONS_FILE), &records)?;
    println!("{} view predictions written", records.len());
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Predictions JSON written by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Branch labels JSON (a dataset's labels.json).
    #[arg(long)]
    pub labels: PathBuf,
}

pub fn evaluate(g: &Global, a: &EvaluateArgs) -> Result<()> {
    let preds: Vec<PredictionRecord> = read_json(&a.predictions)?;
    let labels: Vec<LabelRecord> = read_json(&a.labels)?;
    let e = eval::evaluate_records(&labels, &preds)?;
    write_json(&g.out.join(METRICS_FILE), &e)?;
    for level in Level::ALL {
        let r = e.level(level);
        write_text(
            &g.out.join(format!("confusion_{}.csv", level.name())),
            &r.confusion_csv(),
        )?;
        println!(
            "{:<8} n={:<5} accuracy {:.4}  weighted F1 {:.4}",
            level.name(),
            r.samples,
            r.accuracy,
            r.weighted_f1
        );
        println!("{}", r.confusion_table(level));
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct AttributeArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Raw MPR view (PGM).
    #[arg(long)]
    pub image: PathBuf,
    /// Target class: 0/1/2 or a name such as `significant`.
    #[arg(long)]
    pub class: String,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// `black` or a PGM image of the same size.
    #[arg(long, default_value = "black")]
    pub baseline: String,
    /// Attribute the raw normalised view instead of the text-removed one.
    #[arg(long)]
    pub no_clean: bool,
}

pub fn attribute(g: &Global, a: &AttributeArgs) -> Result<()> {
    let target: StenosisClass = a.class.parse()?;
    let model: Model<f32> = model::load_weights(&a.weights)?;
    let raw = RawMprImage::load_pgm(&a.image)?;
    let clean = if a.no_clean {
        preprocess::normalize(&raw)
    } else {
        preprocess::preprocess(&raw)?
    };
    let x = clean.to_tensor().cast::<f64>();
    let base = if a.baseline == "black" {
        attribution::black_baseline(&x)
    } else {
        preprocess::normalize(&RawMprImage::load_pgm(Path::new(&a.baseline))?)
            .to_tensor()
            .cast::<f64>()
    };
    let map = attribution::integrated_gradients(&model.cast::<f64>(), &x, target, &base, &a.baseline, a.steps)?;
    let (png, warning) = attribution::render_heatmap(&map, &clean)?;
    if let Some(w) = &warning {
        log::warn!("{w}");
        eprintln!("warning: {w}");
    }
    attribution::save_heatmap(&png, &g.out.join("heatmap.png"))?;
    attribution::save_raw_map(&map, &g.out.join("attribution.bin"))?;
    let summary = serde_json::json!({
        "target": map.target,
        "baseline": map.baseline,
        "steps": map.steps,
        "height": map.height,
        "width": map.width,
        "logit_difference": map.logit_difference,
        "completeness_gap": map.completeness_gap,
        "warning": warning,
    });
    write_json(&g.out.join("attribution.json"), &summary)?;
    println!(
        "completeness gap {:.3e} of logit difference {:.4}",
        map.completeness_gap, map.logit_difference
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ParseReportArgs {
    /// Free-text report file.
    #[arg(long)]
    pub report: PathBuf,
    /// Count exactly 50% as significant.
    #[arg(long)]
    pub fifty_is_significant: bool,
    /// Classify intervals by their midpoint instead of their upper bound.
    #[arg(long)]
    pub interval_midpoint: bool,
}

pub fn parse_report(g: &Global, a: &ParseReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.report).map_err(|e| io_err(&a.report, e))?;
    let rule = ClassRule {
        interval_midpoint: a.interval_midpoint,
        fifty_is_significant: a.fifty_is_significant,
    };
    let labels = report::parse_report_with(&text, rule)?;
    for w in &labels.warnings {
        eprintln!("warning: {w}");
    }
    write_json(&g.out.join("report_labels.json"), &labels)?;
    println!(
        "{}",
        serde_json::to_string(&labels).map_err(|e| json_err(&a.report, e))?
    );
    Ok(())
}
