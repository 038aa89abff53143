//! Command-line driver: synthetic data, feature extraction, training,
//! evaluation and single-sample prediction, all configured by one JSON file.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, pgm, LabelRow, SplitMode, SplitSpec};
use crate::dbn::{self, Dbn, LabeledSet, SupervisedEpoch, SupervisedTrainConfig, DEFAULT_LAYER_SIZES};
use crate::error::{Error, Result, ResultExt};
use crate::eval::{self, EvalReport};
use crate::features::{FeatureExtractor, FeatureKind, FeatureMatrix, FilterBankConfig, PreprocessConfig};
use crate::letter::Letter;
use crate::rbm::{RbmEpoch, RbmTrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to `model.hsdbn` inside `out_dir`.
    pub model: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            manifest: PathBuf::from("data/manifest.csv"),
            out_dir: PathBuf::from("run"),
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    pub filters: FilterBankConfig,
    pub feature_kind: FeatureKind,
    pub layer_sizes: Vec<usize>,
    /// One entry shared by all layers, or one per layer.
    pub rbm: Vec<RbmTrainConfig>,
    pub supervised: SupervisedTrainConfig,
    pub split: SplitSpec,
    pub workers: usize,
    /// When set, overrides every component seed: split and supervised
    /// stages use it directly, RBM layer `k` uses `rng_seed + k`.
    pub rng_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            preprocess: PreprocessConfig::default(),
            filters: FilterBankConfig::default(),
            feature_kind: FeatureKind::Combined,
            layer_sizes: DEFAULT_LAYER_SIZES.to_vec(),
            rbm: vec![RbmTrainConfig::default()],
            supervised: SupervisedTrainConfig::default(),
            split: SplitSpec::default(),
            workers: 1,
            rng_seed: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).context(|| format!("config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.filters.validate()?;
        self.supervised.validate()?;
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer_sizes must be a nonempty list of positive sizes".into()));
        }
        if self.rbm.len() != 1 && self.rbm.len() != self.layer_sizes.len() {
            return Err(Error::Config(format!(
                "rbm holds {} configs for {} layers",
                self.rbm.len(),
                self.layer_sizes.len()
            )));
        }
        for r in &self.rbm {
            r.validate()?;
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.split.unseen_valid_fraction) {
            return Err(Error::Config("split.unseen_valid_fraction must lie in [0, 1)".into()));
        }
        for (name, p) in [("paths.manifest", &self.paths.manifest), ("paths.out_dir", &self.paths.out_dir)] {
            if p.as_os_str().is_empty() {
                return Err(Error::Config(format!("{name} is empty")));
            }
        }
        Ok(())
    }

    /// Pushes `rng_seed`, when set, into every component config.
    pub fn apply_seed(&mut self) {
        if let Some(seed) = self.rng_seed {
            self.split.rng_seed = seed;
            self.supervised.rng_seed = seed;
            for (k, r) in self.rbm.iter_mut().enumerate() {
                r.rng_seed = seed.wrapping_add(k as u64);
            }
        }
    }

    pub fn extractor(&self) -> FeatureExtractor {
        FeatureExtractor {
            preprocess: self.preprocess.clone(),
            filters: self.filters.clone(),
        }
    }

    pub fn features_path(&self) -> PathBuf {
        self.paths.out_dir.join("features.bin")
    }

    pub fn labels_path(&self) -> PathBuf {
        self.paths.out_dir.join("labels.csv")
    }

    /// Directory holding the model, log and reports of one training run.
    pub fn run_dir(&self, holdout: Option<&str>) -> PathBuf {
        match holdout {
            Some(user) if self.split.test_user.is_none() => self.paths.out_dir.join(format!("holdout-{user}")),
            _ => self.paths.out_dir.clone(),
        }
    }

    pub fn model_path(&self, holdout: Option<&str>) -> PathBuf {
        match (&self.paths.model, holdout) {
            (Some(p), _) if holdout.is_none() || self.split.test_user.is_some() => p.clone(),
            _ => self.run_dir(holdout).join("model.hsdbn"),
        }
    }

    fn rbm_configs(&self) -> Vec<RbmTrainConfig> {
        self.rbm.clone()
    }

    fn echo(&self) -> Result<()> {
        fs::create_dir_all(&self.paths.out_dir)?;
        fs::write(self.paths.out_dir.join("config.json"), self.to_json()?)?;
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "fingerspell", version, about = "Static fingerspelling recognition from depth and intensity frames")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; every field is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// combined, raw, gabor, bar, intensity or depth
    #[arg(long, global = true)]
    pub feature_kind: Option<FeatureKind>,
    /// allseen or unseen
    #[arg(long, global = true)]
    pub split: Option<SplitMode>,
    #[arg(long, global = true)]
    pub test_user: Option<String>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Comma-separated layer sizes, e.g. 1500,700,400.
    #[arg(long, global = true, value_delimiter = ',')]
    pub layer_sizes: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub rbm_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub stage2_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub stage3_epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (PGM pairs and manifest).
    GenSynthetic {
        #[arg(long, default_value_t = 3)]
        users: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        /// Output directory; defaults to the manifest's directory.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Preprocess every manifest row and write the feature matrix.
    Extract,
    /// Pretrain, train the translation layer and fine-tune.
    Train,
    /// Score the test split and write reports.
    Eval,
    /// Classify one depth/intensity pair.
    Predict {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        intensity: PathBuf,
    },
    /// Put several `report.json` files side by side.
    Compare {
        /// NAME=PATH to a report.json; repeat for each run.
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
    },
}

/// Config file, then flags, then seed propagation.
pub fn effective_config(args: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.rng_seed = Some(s);
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(k) = args.feature_kind {
        cfg.feature_kind = k;
    }
    if let Some(m) = args.split {
        cfg.split.mode = m;
    }
    if let Some(u) = &args.test_user {
        cfg.split.test_user = Some(u.clone());
    }
    if let Some(p) = &args.manifest {
        cfg.paths.manifest = p.clone();
    }
    if let Some(p) = &args.out_dir {
        cfg.paths.out_dir = p.clone();
    }
    if let Some(p) = &args.model {
        cfg.paths.model = Some(p.clone());
    }
    if let Some(sizes) = &args.layer_sizes {
        cfg.layer_sizes = sizes.clone();
    }
    if let Some(e) = args.rbm_epochs {
        for r in cfg.rbm.iter_mut() {
            r.epochs = e;
        }
    }
    if let Some(e) = args.stage2_epochs {
        cfg.supervised.stage2.epochs = e;
    }
    if let Some(e) = args.stage3_epochs {
        cfg.supervised.stage3.epochs = e;
    }
    cfg.apply_seed();
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli.global)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    pool.install(|| match cli.command {
        Command::GenSynthetic { users, per_class, dest } => {
            let dest = dest.unwrap_or_else(|| cfg.paths.manifest.parent().unwrap_or(Path::new(".")).to_path_buf());
            let counts = cmd_gen_synthetic(&cfg, users, per_class, &dest)?;
            print!("{}", counts.render());
            Ok(())
        }
        Command::Extract => {
            let m = cmd_extract(&cfg)?;
            println!("{} rows of {} {} features -> {}", m.count(), m.dim, m.kind, cfg.features_path().display());
            Ok(())
        }
        Command::Train => {
            for (holdout, path) in cmd_train(&cfg)? {
                match holdout {
                    Some(u) => println!("held out {u}: model -> {}", path.display()),
                    None => println!("model -> {}", path.display()),
                }
            }
            Ok(())
        }
        Command::Eval => {
            let out = cmd_eval(&cfg)?;
            for r in &out.reports {
                println!("{}", r.summary());
            }
            if let Some(avg) = &out.averaged {
                let pct = |v: Option<f64>| v.map(|x| format!("{:.2}%", 100.0 * x)).unwrap_or_else(|| "n/a".into());
                println!(
                    "averaged over {} hold-outs: macro recall {}, macro precision {}",
                    avg.runs.len(),
                    pct(avg.macro_recall),
                    pct(avg.macro_precision)
                );
            }
            Ok(())
        }
        Command::Predict { depth, intensity } => {
            let p = cmd_predict(&cfg, &cfg.model_path(None), &depth, &intensity)?;
            print!("{}", format_prediction(&p));
            Ok(())
        }
        Command::Compare { runs } => {
            let table = cmd_compare(&cfg, &runs)?;
            print!("{}", table.to_csv());
            Ok(())
        }
    })
}

pub fn cmd_gen_synthetic(cfg: &RunConfig, users: usize, per_class: usize, dest: &Path) -> Result<dataset::Counts> {
    if users == 0 || per_class == 0 {
        return Err(Error::Config("gen-synthetic needs at least one user and one sample per class".into()));
    }
    let samples = dataset::gen_synthetic(users, per_class, cfg.rng_seed.unwrap_or(cfg.split.rng_seed));
    dataset::write_dataset(&samples, dest)?;
    Ok(dataset::Counts::of(&samples))
}

pub fn cmd_extract(cfg: &RunConfig) -> Result<FeatureMatrix> {
    let rows = dataset::resolve_manifest(&cfg.paths.manifest)?;
    if rows.is_empty() {
        return Err(Error::EmptyData.context(format!("manifest {}", cfg.paths.manifest.display())));
    }
    let extractor = cfg.extractor();
    let kind = cfg.feature_kind;
    let extracted: Vec<Result<_>> = rows
        .par_iter()
        .map(|row| {
            let sample = row.load()?;
            extractor
                .extract(kind, &sample.depth, &sample.intensity)
                .context(|| format!("manifest row {} ({})", row.row, row.depth_path.display()))
        })
        .collect();
    let vectors = extracted.into_iter().collect::<Result<Vec<_>>>()?;
    let matrix = FeatureMatrix::from_rows(kind, extractor.dimension(kind), vectors)?;
    cfg.echo()?;
    matrix.save(&cfg.features_path())?;
    let labels: Vec<LabelRow> = rows
        .iter()
        .map(|r| LabelRow {
            user: r.user.clone(),
            letter: r.letter,
        })
        .collect();
    write_labels(&cfg.labels_path(), &labels)?;
    Ok(matrix)
}

pub fn write_labels(path: &Path, labels: &[LabelRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in labels {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_path(path).context(|| format!("labels {}", path.display()))?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect::<Result<Vec<LabelRow>>>()
        .context(|| format!("labels {}", path.display()))
}

fn load_features(cfg: &RunConfig) -> Result<(FeatureMatrix, Vec<LabelRow>)> {
    let path = cfg.features_path();
    let m = FeatureMatrix::load(&path).context(|| format!("features {}", path.display()))?;
    if m.kind != cfg.feature_kind {
        return Err(Error::Config(format!(
            "{} holds {} features but the run asks for {}; rerun extract",
            path.display(),
            m.kind,
            cfg.feature_kind
        )));
    }
    let labels = read_labels(&cfg.labels_path())?;
    if labels.len() != m.count() {
        return Err(Error::Format(format!(
            "{} feature rows but {} labels",
            m.count(),
            labels.len()
        )));
    }
    Ok((m, labels))
}

/// `None` for allseen or a fixed test user, otherwise one entry per user.
fn holdouts(cfg: &RunConfig, labels: &[LabelRow]) -> Vec<Option<String>> {
    match (cfg.split.mode, &cfg.split.test_user) {
        (SplitMode::Allseen, _) | (SplitMode::Unseen, Some(_)) => vec![None],
        (SplitMode::Unseen, None) => dataset::users(labels).into_iter().map(Some).collect(),
    }
}

fn split_for(cfg: &RunConfig, labels: &[LabelRow], holdout: &Option<String>) -> Result<(SplitSpec, dataset::Split)> {
    let mut spec = cfg.split.clone();
    if let Some(u) = holdout {
        spec.test_user = Some(u.clone());
    }
    let split = dataset::split(labels, &spec)?;
    Ok((spec, split))
}

fn describe(spec: &SplitSpec) -> String {
    match (&spec.mode, &spec.test_user) {
        (SplitMode::Unseen, Some(u)) => format!("unseen test_user={u} seed={}", spec.rng_seed),
        (mode, _) => format!("{mode} seed={}", spec.rng_seed),
    }
}

fn labeled(x: &ndarray::Array2<f64>, labels: &[LabelRow], idx: &[usize]) -> Result<LabeledSet> {
    LabeledSet::new(
        x.select(ndarray::Axis(0), idx),
        idx.iter().map(|&i| labels[i].letter.index()).collect(),
    )
}

struct TrainLog {
    out: BufWriter<fs::File>,
}

impl TrainLog {
    fn create(path: &Path, cfg: &RunConfig, spec: &SplitSpec) -> Result<Self> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        let sizes: Vec<String> = cfg.layer_sizes.iter().map(|s| s.to_string()).collect();
        writeln!(out, "# split={}", describe(spec))?;
        if let Some(u) = &spec.test_user {
            writeln!(out, "# held_out_user={u}")?;
        }
        writeln!(out, "# layer_sizes={}", sizes.join("/"))?;
        writeln!(out, "# feature_kind={}", cfg.feature_kind)?;
        writeln!(out, "stage,layer,epoch,train_loss,valid_loss,reconstruction_error")?;
        Ok(TrainLog { out })
    }

    fn rbm(&mut self, layer: usize, e: RbmEpoch) -> std::io::Result<()> {
        writeln!(self.out, "pretrain,{layer},{},,,{}", e.epoch, e.reconstruction_error)
    }

    fn supervised(&mut self, e: SupervisedEpoch) -> std::io::Result<()> {
        let valid = e.valid_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(self.out, "{},,{},{},{valid},", e.stage.name(), e.epoch, e.train_loss)
    }
}

/// Trains one model per hold-out; returns where each was written.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<(Option<String>, PathBuf)>> {
    let (m, labels) = load_features(cfg)?;
    let x = m.to_array();
    cfg.echo()?;
    let mut written = Vec::new();
    for holdout in holdouts(cfg, &labels) {
        let (spec, split) = split_for(cfg, &labels, &holdout)?;
        let run_dir = cfg.run_dir(holdout.as_deref());
        fs::create_dir_all(&run_dir)?;
        let mut log = TrainLog::create(&run_dir.join("train_log.csv"), cfg, &spec)?;
        let mut io_err: Option<std::io::Error> = None;
        let train = labeled(&x, &labels, &split.train)?;
        let valid = labeled(&x, &labels, &split.valid)?;

        let rbms = dbn::pretrain(train.features.view(), &cfg.layer_sizes, &cfg.rbm_configs(), |k, e| {
            if let Err(err) = log.rbm(k, e) {
                io_err.get_or_insert(err);
            }
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.supervised.rng_seed.wrapping_add(2));
        let net = Dbn::new(rbms, cfg.supervised.init_std, &mut rng)?;
        let mut record = |e: SupervisedEpoch| {
            if let Err(err) = log.supervised(e) {
                io_err.get_or_insert(err);
            }
        };
        let net = dbn::train_translation_layer(&net, &train, &valid, &cfg.supervised, &mut record)?;
        let net = dbn::fine_tune(&net, &train, &valid, &cfg.supervised, &mut record)?;
        if let Some(err) = io_err {
            return Err(err.into());
        }
        log.out.flush()?;
        let path = cfg.model_path(holdout.as_deref());
        net.save(&path)?;
        written.push((holdout, path));
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub reports: Vec<EvalReport>,
    pub averaged: Option<eval::AveragedReport>,
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalOutput> {
    let (m, labels) = load_features(cfg)?;
    let x = m.to_array();
    let runs = holdouts(cfg, &labels);
    let mut named = Vec::with_capacity(runs.len());
    for holdout in &runs {
        let (spec, split) = split_for(cfg, &labels, holdout)?;
        let model_path = cfg.model_path(holdout.as_deref());
        let net = Dbn::load(&model_path).context(|| format!("model {}", model_path.display()))?;
        if net.input_dim() != m.dim {
            return Err(Error::Config(format!(
                "model {} expects {} inputs, features have {}",
                model_path.display(),
                net.input_dim(),
                m.dim
            )));
        }
        if split.test.is_empty() {
            return Err(Error::EmptyInput.context(format!("test split for {} has no samples", describe(&spec))));
        }
        let test = x.select(ndarray::Axis(0), &split.test);
        let predicted: Vec<Letter> = net.predict_batch(test.view())?.into_iter().map(|p| p.label).collect();
        let truths: Vec<Letter> = split.test.iter().map(|&i| labels[i].letter).collect();
        let report = eval::precision_recall(&eval::confusion(&predicted, &truths)?).with_split(describe(&spec));
        report.write(&cfg.run_dir(holdout.as_deref()))?;
        named.push((holdout.clone().unwrap_or_else(|| describe(&spec)), report));
    }
    let averaged = if runs.len() > 1 {
        let avg = eval::average_reports(&named)?;
        fs::write(cfg.paths.out_dir.join("averaged_report.json"), avg.to_json()?)?;
        eval::compare_reports(&named)?.write(&cfg.paths.out_dir)?;
        Some(avg)
    } else {
        None
    };
    Ok(EvalOutput {
        reports: named.into_iter().map(|(_, r)| r).collect(),
        averaged,
    })
}

pub fn cmd_predict(cfg: &RunConfig, model: &Path, depth: &Path, intensity: &Path) -> Result<dbn::Prediction> {
    let net = Dbn::load(model).context(|| format!("model {}", model.display()))?;
    let extractor = cfg.extractor();
    let dim = extractor.dimension(cfg.feature_kind);
    if net.input_dim() != dim {
        return Err(Error::Config(format!(
            "model {} expects {} inputs but {} features have {dim}",
            model.display(),
            net.input_dim(),
            cfg.feature_kind
        )));
    }
    let d = pgm::read_depth(depth).context(|| format!("depth {}", depth.display()))?;
    let i = pgm::read_intensity(intensity).context(|| format!("intensity {}", intensity.display()))?;
    let f = extractor.extract(cfg.feature_kind, &d, &i)?;
    let x = ndarray::Array1::from_iter(f.values().iter().map(|&v| v as f64));
    net.forward(x.view())
}

pub fn format_prediction(p: &dbn::Prediction) -> String {
    let mut out = format!("label: {}\n", p.label);
    for (l, s) in p.ranked() {
        out.push_str(&format!("{l} {s}\n"));
    }
    out
}

pub fn cmd_compare(cfg: &RunConfig, runs: &[String]) -> Result<eval::Comparison> {
    let mut named = Vec::with_capacity(runs.len());
    for r in runs {
        let (name, path) = r
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--run expects NAME=PATH, got {r:?}")))?;
        let text = fs::read_to_string(path).context(|| format!("report {path}"))?;
        named.push((name.to_string(), EvalReport::from_json(&text).context(|| format!("report {path}"))?));
    }
    let table = eval::compare_reports(&named)?;
    table.write(&cfg.paths.out_dir)?;
    Ok(table)
}
