//! Commands behind the `idf-align` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use idf_align::bench::time_models;
use idf_align::cascade::{report_dimensions, train, CascadeConfig, CascadeModel};
use idf_align::dataset::{
    derive_bbox, load_dataset, load_image, read_pts_file, save_overlay_png, save_pgm, write_pts_file, AnnotatedSample,
    DEFAULT_BOX_PADDING,
};
use idf_align::encoding::{EncodingKind, IdfParams, IdfRange};
use idf_align::geometry::{alignment_error, landmark_distances, BoundingBox, NormalizationKind};
use idf_align::model_io::{load_model, save_model};
use idf_align::pixel::RadiusSchedule;
use idf_align::synthetic::{generate_synthetic, SyntheticConfig};

pub const SEED_ENV: &str = "IDF_ALIGN_SEED";

#[derive(Debug, Parser)]
#[command(name = "idf-align", version, about = "Cascaded random-forest face alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a cascade and write the model plus a per-stage error CSV.
    Train(TrainArgs),
    /// Fit landmarks on one image.
    Fit(FitArgs),
    /// Per-stage and per-landmark error of one or more models.
    Eval(EvalArgs),
    /// Fitting throughput and size of an IDF and an LBF model.
    Bench(BenchArgs),
    /// Test error as a function of the IDF magnitude k.
    SweepK(SweepKArgs),
    /// Write a synthetic dataset as PGM images with `.pts` files.
    Synth(SynthArgs),
    /// Print a model's configuration and size.
    Inspect(InspectArgs),
}

/// Where samples come from: `--synth key=value,...` or `--manifest path`.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Synthetic data, e.g. `n=200,seed=3`. Keys: n, seed, landmarks, size,
    /// noise, rotation, translation.
    #[arg(long, conflicts_with = "manifest")]
    pub synth: Option<String>,
    /// Dataset directory or CSV manifest with image_path,pts_path columns.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CascadeArgs {
    #[arg(long, default_value_t = 7)]
    pub stages: usize,
    #[arg(long, default_value_t = 11)]
    pub trees: usize,
    #[arg(long, default_value_t = 7)]
    pub depth: usize,
    #[arg(long, default_value = "idf")]
    pub encoding: EncodingKind,
    /// IDF magnitude value.
    #[arg(long, default_value_t = 10)]
    pub k: u32,
    /// Normalize IDF values over the achievable range instead of the conventional one.
    #[arg(long)]
    pub achievable_range: bool,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Candidate pixels per landmark and stage.
    #[arg(long, default_value_t = 500)]
    pub candidates: usize,
    /// Split proposals per node.
    #[arg(long, default_value_t = 50)]
    pub proposals: usize,
    /// Training initializations per sample, the first being the mean shape.
    #[arg(long, default_value_t = 5)]
    pub train_inits: usize,
    #[arg(long, default_value_t = 7)]
    pub clusters: usize,
    /// Stored initialization shapes for multi-init fitting.
    #[arg(long, default_value_t = 50)]
    pub initializations: usize,
    /// Comma-separated per-stage radii; defaults to the built-in schedule.
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub cascade: CascadeArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Held-out synthetic data whose per-stage error is added to the report.
    #[arg(long, conflicts_with = "test_manifest")]
    pub test_synth: Option<String>,
    #[arg(long)]
    pub test_manifest: Option<PathBuf>,
    #[arg(long, default_value = "box-diagonal")]
    pub norm: NormalizationKind,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Per-stage error CSV; defaults to the model path with `.csv` appended.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Face box as x,y,width,height.
    #[arg(long = "box", conflicts_with = "pts")]
    pub bbox: Option<String>,
    /// Annotation whose padded bounding box is used as the face box.
    #[arg(long)]
    pub pts: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write a PNG with the landmarks drawn in.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Run from every stored initialization and take the median.
    #[arg(long)]
    pub multi_init: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file; repeat to compare models column by column.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value = "box-diagonal")]
    pub norm: NormalizationKind,
    #[arg(long)]
    pub multi_init: bool,
    /// Per-stage error CSV (stdout if omitted).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Per-landmark error CSV of the full models.
    #[arg(long)]
    pub per_landmark: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub idf: PathBuf,
    #[arg(long)]
    pub lbf: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Timed passes per model after one warm-up pass; 0 reports sizes only.
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Fit images concurrently on all cores.
    #[arg(long)]
    pub parallel: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepKArgs {
    /// Comma-separated magnitude values.
    #[arg(long = "k", value_delimiter = ',', required = true)]
    pub ks: Vec<u32>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, conflicts_with = "test_manifest")]
    pub test_synth: Option<String>,
    #[arg(long)]
    pub test_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub cascade: SweepCascadeArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value = "box-diagonal")]
    pub norm: NormalizationKind,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Cascade flags without `--k`, which the sweep supplies.
#[derive(Debug, Clone, Args)]
pub struct SweepCascadeArgs {
    #[arg(long, default_value_t = 7)]
    pub stages: usize,
    #[arg(long, default_value_t = 11)]
    pub trees: usize,
    #[arg(long, default_value_t = 7)]
    pub depth: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 500)]
    pub candidates: usize,
    #[arg(long, default_value_t = 5)]
    pub train_inits: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "n=200")]
    pub synth: String,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
}

/// A CSV report.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    /// Writes to `path`, or stdout when `None`.
    pub fn emit(&self, path: Option<&Path>) -> Result<()> {
        let text = self.to_csv()?;
        match path {
            Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

/// Shortest representation that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Parses `key=value,...` over the synthetic defaults; `seed` defaults to
/// `default_seed`.
pub fn parse_synth(spec: &str, default_seed: u64) -> Result<SyntheticConfig> {
    let mut cfg = SyntheticConfig { seed: default_seed, ..SyntheticConfig::default() };
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part.split_once('=').with_context(|| format!("expected key=value, got '{part}'"))?;
        let bad = || format!("bad value for {key}: '{value}'");
        match key.trim() {
            "n" | "count" => cfg.count = value.parse().with_context(bad)?,
            "seed" => cfg.seed = value.parse().with_context(bad)?,
            "landmarks" => cfg.landmark_count = value.parse().with_context(bad)?,
            "size" => {
                let s: usize = value.parse().with_context(bad)?;
                let ratio = s as f64 / cfg.width as f64;
                cfg.width = s;
                cfg.height = s;
                cfg.face_radius *= ratio;
                cfg.translation_jitter *= ratio;
            }
            "noise" => cfg.landmark_noise = value.parse().with_context(bad)?,
            "rotation" => cfg.rotation_jitter = value.parse().with_context(bad)?,
            "translation" => cfg.translation_jitter = value.parse().with_context(bad)?,
            other => bail!("unknown synthetic key '{other}'"),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `x,y,width,height`.
pub fn parse_box(text: &str) -> Result<BoundingBox> {
    let v = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad box coordinate '{p}'")))
        .collect::<Result<Vec<_>>>()?;
    ensure!(v.len() == 4, "a box needs x,y,width,height, got {} values", v.len());
    Ok(BoundingBox::new(v[0], v[1], v[2], v[3])?)
}

fn load_data(data: &DataArgs, seed: u64) -> Result<Vec<AnnotatedSample>> {
    match (&data.synth, &data.manifest) {
        (Some(spec), _) => Ok(generate_synthetic(&parse_synth(spec, seed)?)?),
        (None, Some(path)) => load_dataset(path).with_context(|| format!("loading dataset {}", path.display())),
        (None, None) => bail!("give either --synth or --manifest"),
    }
}

fn load_optional(synth: &Option<String>, manifest: &Option<PathBuf>, seed: u64) -> Result<Option<Vec<AnnotatedSample>>> {
    if synth.is_none() && manifest.is_none() {
        return Ok(None);
    }
    load_data(&DataArgs { synth: synth.clone(), manifest: manifest.clone() }, seed).map(Some)
}

pub fn cascade_config(args: &CascadeArgs, landmarks: usize, seed: u64, norm: NormalizationKind) -> Result<CascadeConfig> {
    let mut cfg = CascadeConfig::with_shape(args.stages, args.trees, args.depth);
    cfg.landmarks = landmarks;
    cfg.encoding = args.encoding;
    cfg.idf = IdfParams {
        k: args.k,
        range: if args.achievable_range { IdfRange::Achievable } else { IdfRange::Conventional },
    };
    cfg.ridge.lambda = args.lambda;
    cfg.candidates_per_landmark = args.candidates;
    cfg.forest.candidates_per_node = args.proposals;
    cfg.train_inits_per_sample = args.train_inits;
    cfg.clusters = args.clusters;
    cfg.initializations = args.initializations;
    if let Some(r) = &args.radii {
        cfg.radii = RadiusSchedule::new(r.clone())?;
    }
    cfg.norm = norm;
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

/// Per-stage mean error of `model` over `samples`; entry 0 is the mean shape.
pub fn stage_errors(model: &CascadeModel, samples: &[AnnotatedSample], norm: NormalizationKind) -> Result<Vec<f64>> {
    ensure!(!samples.is_empty(), "no samples to evaluate");
    let mut sums = vec![0.0; model.stages.len() + 1];
    for s in samples {
        let trace = model.run_from(&s.image, model.initial_shape(&s.bbox)?)?;
        for (acc, shape) in sums.iter_mut().zip(&trace) {
            *acc += alignment_error(shape, &s.shape, norm)?;
        }
    }
    Ok(sums.into_iter().map(|v| v / samples.len() as f64).collect())
}

pub fn cmd_train(args: &TrainArgs) -> Result<Table> {
    let seed = args.seed.seed;
    let data = load_data(&args.data, seed)?;
    ensure!(!data.is_empty(), "training set is empty");
    let landmarks = data[0].shape.landmark_count();
    let cfg = cascade_config(&args.cascade, landmarks, seed, args.norm)?;
    let test = load_optional(&args.test_synth, &args.test_manifest, seed.wrapping_add(1))?;
    let (model, log) = train(&data, &cfg)?;
    save_model(&model, &args.output).with_context(|| format!("writing {}", args.output.display()))?;

    let mut table = Table::new(["stage", "train_error"]);
    if test.is_some() {
        table.header.push("test_error".into());
    }
    let test_errors = test.as_deref().map(|t| stage_errors(&model, t, args.norm)).transpose()?;
    for (stage, e) in log.stage_errors.iter().enumerate() {
        let mut row = vec![stage.to_string(), num(*e)];
        if let Some(t) = &test_errors {
            row.push(num(t[stage]));
        }
        table.push(row);
    }
    let report = args.report.clone().unwrap_or_else(|| {
        let mut p = args.output.clone().into_os_string();
        p.push(".csv");
        p.into()
    });
    table.emit(Some(&report))?;
    let dims = report_dimensions(&cfg);
    eprintln!(
        "trained {} stages on {} samples: feature_dim {}, linear parameters {}, seed {}",
        cfg.stages,
        data.len(),
        dims.feature_dim,
        dims.linear_parameters,
        seed
    );
    Ok(table)
}

pub fn cmd_fit(args: &FitArgs) -> Result<idf_align::Shape> {
    let model = load_model(&args.model).with_context(|| format!("loading model {}", args.model.display()))?;
    let image = load_image(&args.image)?;
    let bbox = match (&args.bbox, &args.pts) {
        (Some(b), _) => parse_box(b)?,
        (None, Some(p)) => derive_bbox(read_pts_file(p)?.points(), DEFAULT_BOX_PADDING)?,
        (None, None) => bail!("a face box is required: give --box x,y,w,h or --pts file"),
    };
    let shape = model.fit(&image, &bbox, args.multi_init)?;
    write_pts_file(&args.output, &shape)?;
    if let Some(o) = &args.overlay {
        save_overlay_png(&image, &shape, o)?;
    }
    Ok(shape)
}

fn model_label(path: &Path, model: &CascadeModel) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{stem} (trees={})", model.config.forest.trees)
}

/// Per-stage table (one column per model) and per-landmark table.
pub fn cmd_eval(args: &EvalArgs) -> Result<(Table, Table)> {
    let data = load_data(&args.data, args.seed.seed)?;
    ensure!(!data.is_empty(), "evaluation set is empty");
    let models = args
        .model
        .iter()
        .map(|p| load_model(p).with_context(|| format!("loading model {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = args.model.iter().zip(&models).map(|(p, m)| model_label(p, m)).collect();

    let mut per_stage = Vec::new();
    let mut per_landmark = Vec::new();
    for m in &models {
        ensure!(
            data.iter().all(|s| s.shape.landmark_count() == m.config.landmarks),
            "ground truth has a different landmark count than the model"
        );
        per_stage.push(stage_errors(m, &data, args.norm)?);
        let mut sums = vec![0.0; m.config.landmarks];
        for s in &data {
            let fitted = m.fit(&s.image, &s.bbox, args.multi_init)?;
            let norm = args.norm.distance(&s.shape)?;
            for (acc, d) in sums.iter_mut().zip(landmark_distances(&fitted, &s.shape)?) {
                *acc += d / norm;
            }
        }
        per_landmark.push(sums.into_iter().map(|v| v / data.len() as f64).collect::<Vec<_>>());
    }

    let mut stages = Table::new(std::iter::once("stage".to_string()).chain(labels.iter().cloned()));
    let rows = per_stage.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..rows {
        let mut row = vec![i.to_string()];
        row.extend(per_stage.iter().map(|e| e.get(i).map(|v| num(*v)).unwrap_or_default()));
        stages.push(row);
    }
    let mut landmarks = Table::new(std::iter::once("landmark".to_string()).chain(labels));
    let l = per_landmark.iter().map(Vec::len).max().unwrap_or(0);
    for j in 0..l {
        let mut row = vec![j.to_string()];
        row.extend(per_landmark.iter().map(|e| e.get(j).map(|v| num(*v)).unwrap_or_default()));
        landmarks.push(row);
    }
    stages.emit(args.output.as_deref())?;
    if let Some(p) = &args.per_landmark {
        landmarks.emit(Some(p))?;
    }
    Ok((stages, landmarks))
}

fn same_except_encoding(a: &CascadeConfig, b: &CascadeConfig) -> bool {
    CascadeConfig { encoding: a.encoding, idf: a.idf, ..b.clone() } == *a
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Table> {
    let idf = load_model(&args.idf).with_context(|| format!("loading {}", args.idf.display()))?;
    let lbf = load_model(&args.lbf).with_context(|| format!("loading {}", args.lbf.display()))?;
    ensure!(
        same_except_encoding(&idf.config, &lbf.config),
        "models differ in more than their encoding; bench needs identical training setups"
    );
    let mut table = Table::new([
        "model",
        "encoding",
        "feature_dim",
        "linear_parameters",
        "bias_parameters",
        "parameter_count",
        "file_bytes",
        "images_per_second",
        "median_ms_per_image",
        "speed_factor",
    ]);
    let timings = if args.reps > 0 {
        let data = load_data(&args.data, args.seed.seed)?;
        Some(time_models(&[&idf, &lbf], &data, args.reps, args.parallel)?)
    } else {
        None
    };
    for (i, (path, model)) in [(&args.idf, &idf), (&args.lbf, &lbf)].into_iter().enumerate() {
        let dims = report_dimensions(&model.config);
        let mut row = vec![
            path.display().to_string(),
            model.config.encoding.to_string(),
            dims.feature_dim.to_string(),
            dims.linear_parameters.to_string(),
            dims.bias_parameters.to_string(),
            dims.parameter_count.to_string(),
            fs::metadata(path)?.len().to_string(),
        ];
        match &timings {
            Some(t) => {
                row.push(num(t[i].images_per_second()));
                row.push(num(t[i].median() * 1e3));
                // how many times faster the IDF model is than this one
                row.push(num(t[i].min() / t[0].min()));
            }
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        table.push(row);
    }
    table.emit(args.output.as_deref())?;
    if let Some(t) = &timings {
        eprintln!("IDF is {:.2}x as fast as LBF (reference figure: about 2x)", t[1].min() / t[0].min());
    }
    Ok(table)
}

pub fn cmd_sweep_k(args: &SweepKArgs) -> Result<Table> {
    if let Some(k) = args.ks.iter().find(|&&k| k < 2) {
        bail!("IDF magnitude k must be at least 2, got {k}");
    }
    let seed = args.seed.seed;
    let data = load_data(&args.data, seed)?;
    ensure!(!data.is_empty(), "training set is empty");
    let test = load_optional(&args.test_synth, &args.test_manifest, seed.wrapping_add(1))?.unwrap_or_else(|| data.clone());
    let c = &args.cascade;
    let mut table = Table::new(["k", "seed", "baseline_error", "error"]);
    for &k in &args.ks {
        let cascade = CascadeArgs {
            stages: c.stages,
            trees: c.trees,
            depth: c.depth,
            encoding: EncodingKind::Idf,
            k,
            achievable_range: false,
            lambda: c.lambda,
            candidates: c.candidates,
            proposals: 50,
            train_inits: c.train_inits,
            clusters: 7,
            initializations: 50,
            radii: None,
        };
        let cfg = cascade_config(&cascade, data[0].shape.landmark_count(), seed, args.norm)?;
        let (model, _) = train(&data, &cfg)?;
        let errors = stage_errors(&model, &test, args.norm)?;
        table.push(vec![k.to_string(), seed.to_string(), num(errors[0]), num(*errors.last().expect("stage 0"))]);
    }
    table.emit(args.output.as_deref())?;
    Ok(table)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<usize> {
    let data = generate_synthetic(&parse_synth(&args.synth, args.seed.seed)?)?;
    fs::create_dir_all(&args.out)?;
    for (i, s) in data.iter().enumerate() {
        save_pgm(&s.image, &args.out.join(format!("{i:05}.pgm")))?;
        write_pts_file(&args.out.join(format!("{i:05}.pts")), &s.shape)?;
    }
    Ok(data.len())
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<String> {
    let model = load_model(&args.model)?;
    let c = &model.config;
    let d = report_dimensions(c);
    Ok(format!(
        "stages {}\nlandmarks {}\ntrees {}\ndepth {}\nencoding {}\nk {}\nlambda {}\nseed {}\nradii {:?}\n\
         feature_dim {}\nlinear_parameters {}\nbias_parameters {}\nforest_nodes {}\ninit_shapes {}\nfile_bytes {}\n",
        c.stages,
        c.landmarks,
        c.forest.trees,
        c.forest.depth,
        c.encoding,
        c.idf.k,
        c.ridge.lambda,
        c.seed,
        c.radii.radii(),
        d.feature_dim,
        d.linear_parameters,
        d.bias_parameters,
        d.forest_nodes,
        model.init_shapes.len(),
        fs::metadata(&args.model)?.len(),
    ))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            cmd_train(&a)?;
        }
        Command::Fit(a) => {
            cmd_fit(&a)?;
        }
        Command::Eval(a) => {
            cmd_eval(&a)?;
        }
        Command::Bench(a) => {
            cmd_bench(&a)?;
        }
        Command::SweepK(a) => {
            cmd_sweep_k(&a)?;
        }
        Command::Synth(a) => {
            let n = cmd_synth(&a)?;
            eprintln!("wrote {n} samples to {}", a.out.display());
        }
        Command::Inspect(a) => print!("{}", cmd_inspect(&a)?),
    }
    Ok(())
}
