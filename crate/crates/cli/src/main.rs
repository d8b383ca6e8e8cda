use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pegnn::autodiff::Tensor;
use pegnn::checkpoint::Checkpoint;
use pegnn::data::{
    apply_normalizer, fit_apply_minmax, load_csv, save_csv, synth_generate_with, train_test_split, CsvSchema,
    Dataset, SynthConfig, DEFAULT_SYNTH_FREQUENCIES, DEFAULT_SYNTH_NOISE,
};
use pegnn::geo::{knn_graph_weighted, row_standardize, EdgeWeighting};
use pegnn::layers::Backbone;
use pegnn::moran::local_moran;
use pegnn::training::{evaluate, train, Metrics, TrainConfig};

#[derive(Parser)]
#[command(name = "pegnn", version, about = "Positional-encoder GNNs for geographic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, per-step report and test metrics
    Train(TrainArgs),
    /// Score a checkpoint on a CSV file; prints metrics JSON
    Eval(EvalArgs),
    /// Dump positional-encoder embeddings for every point of a CSV file
    Encode(EncodeArgs),
    /// Per-point local Moran's I of the target column
    Moran(MoranArgs),
    /// Write a synthetic spatially autocorrelated dataset
    Synth(SynthArgs),
}

#[derive(Args)]
struct SchemaArgs {
    #[arg(long)]
    lon_col: Option<String>,
    #[arg(long)]
    lat_col: Option<String>,
    #[arg(long)]
    target_col: Option<String>,
    /// Comma-separated feature column names
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
}

impl SchemaArgs {
    fn apply(&self, mut schema: CsvSchema) -> CsvSchema {
        if let Some(c) = &self.lon_col {
            schema.lon_col = c.clone();
        }
        if let Some(c) = &self.lat_col {
            schema.lat_col = c.clone();
        }
        if let Some(c) = &self.target_col {
            schema.target_col = c.clone();
        }
        if let Some(f) = &self.features {
            schema.feature_cols = f.clone();
        }
        schema
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration; every field is optional
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_batch: Option<usize>,
    #[arg(long)]
    tsteps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Learn the task weights instead of using a fixed lambda
    #[arg(long)]
    learned_weights: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_backbone)]
    backbone: Option<Backbone>,
    /// Feed raw (normalized) coordinates instead of the positional encoder
    #[arg(long)]
    no_pe: bool,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Neighbours in the evaluation graph (defaults to the training k)
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MoranArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_weighting, default_value = "binary")]
    weighting: EdgeWeighting,
    #[command(flatten)]
    schema: SchemaArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    frequencies: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_SYNTH_NOISE)]
    noise: f64,
}

fn parse_backbone(s: &str) -> Result<Backbone, String> {
    match s {
        "gcn" => Ok(Backbone::Gcn),
        "sage" => Ok(Backbone::Sage),
        _ => Err(format!("unknown backbone '{s}' (expected gcn or sage)")),
    }
}

fn parse_weighting(s: &str) -> Result<EdgeWeighting, String> {
    match s {
        "binary" => Ok(EdgeWeighting::Binary),
        "inverse_distance" => Ok(EdgeWeighting::InverseDistance),
        _ => Err(format!("unknown weighting '{s}' (expected binary or inverse_distance)")),
    }
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    data: Option<PathBuf>,
    out_dir: PathBuf,
    schema: CsvSchema,
    /// Reject the whole file on any malformed row
    strict: bool,
    test_fraction: f64,
    split_seed: u64,
    train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out_dir: PathBuf::from("out"),
            schema: CsvSchema::default(),
            strict: true,
            test_fraction: 0.2,
            split_seed: 42,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    mse: f64,
    mae: f64,
    config_echo: &'a RunConfig,
    seed: u64,
    wall_clock_s: f64,
}

enum Failure {
    Usage(String),
    Lib(pegnn::Error),
}

impl From<pegnn::Error> for Failure {
    fn from(e: pegnn::Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Encode(a) => run_encode(a),
        Command::Moran(a) => run_moran(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| pegnn::Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Lib(pegnn::Error::Config(format!("{}: {e}", path.display()))))
}

fn resolve_config(a: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => read_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    cfg.schema = a.schema.apply(cfg.schema);
    let t = &mut cfg.train;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { t.$field = v; })* };
    }
    set!(k, n_batch, tsteps, lr, lambda, seed, backbone);
    if a.learned_weights {
        t.learned_weights = true;
    }
    if a.no_pe {
        t.use_pe = false;
    }
    if let Some(f) = a.test_fraction {
        cfg.test_fraction = f;
    }
    if let Some(s) = a.split_seed {
        cfg.split_seed = s;
    }
    Ok(cfg)
}

fn run_train(a: TrainArgs) -> CliResult<()> {
    let cfg = resolve_config(&a)?;
    let data_path = cfg
        .data
        .clone()
        .ok_or_else(|| Failure::Usage("no data file: pass --data or set \"data\" in the config".into()))?;
    cfg.train.validate()?;
    let (ds, load) = load_csv(&data_path, &cfg.schema, cfg.strict)?;
    for issue in &load.issues {
        eprintln!("warning: skipped line {}: {}", issue.line, issue.message);
    }
    let split = train_test_split(ds.len(), cfg.test_fraction, cfg.split_seed)?;
    let norm = fit_apply_minmax(&ds, &split)?;
    let (train_set, test_set) = (norm.subset(&split.train), norm.subset(&split.test));

    let (model, report) = train(&train_set, &cfg.train)?;
    let metrics = evaluate(&model, &test_set, cfg.train.k)?;

    fs::create_dir_all(&cfg.out_dir)?;
    let mut checkpoint = Checkpoint::from_model(&model);
    checkpoint.train = Some(cfg.train.clone());
    checkpoint.schema = Some(cfg.schema.clone());
    checkpoint.normalizer = norm.normalizer.clone();
    checkpoint.save(cfg.out_dir.join("model.json"))?;
    report.write_csv(fs::File::create(cfg.out_dir.join("report.csv"))?)?;
    let summary = RunSummary {
        mse: metrics.mse,
        mae: metrics.mae,
        config_echo: &cfg,
        seed: cfg.train.seed,
        wall_clock_s: report.wall_clock_s,
    };
    fs::write(cfg.out_dir.join("metrics.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("test mse {} mae {}", metrics.mse, metrics.mae);
    Ok(())
}

/// Loads `data` with the checkpoint's schema and normalizes it the way the
/// training data was.
fn load_for_checkpoint(ck: &Checkpoint, data: &Path) -> CliResult<Dataset> {
    let schema = ck.schema.clone().unwrap_or_default();
    let (ds, _) = load_csv(data, &schema, true)?;
    Ok(match &ck.normalizer {
        Some(norm) => apply_normalizer(&ds, norm)?,
        None => ds,
    })
}

fn run_eval(a: EvalArgs) -> CliResult<()> {
    let ck = Checkpoint::load(&a.model)?;
    let model = ck.to_model()?;
    let ds = load_for_checkpoint(&ck, &a.data)?;
    let k = a.k.or(ck.train.as_ref().map(|t| t.k)).unwrap_or(5);
    let Metrics { mse, mae } = evaluate(&model, &ds, k)?;
    let out = serde_json::json!({ "mse": mse, "mae": mae, "n": ds.len(), "k": k });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_encode(a: EncodeArgs) -> CliResult<()> {
    let ck = Checkpoint::load(&a.model)?;
    let model = ck.to_model()?;
    let encoder = model
        .encoder
        .as_ref()
        .ok_or_else(|| pegnn::Error::Config("checkpoint was trained without the positional encoder".into()))?;
    let ds = load_for_checkpoint(&ck, &a.data)?;
    let coords: Vec<f64> = (0..ds.len()).flat_map(|i| ds.model_coords(i)).collect();
    let emb = encoder.encode(&model.params, &Tensor::matrix(ds.len(), 2, coords)?)?;

    let mut w = csv::Writer::from_path(&a.out).map_err(pegnn::Error::from)?;
    let mut header = vec!["lon".to_string(), "lat".to_string()];
    header.extend((0..encoder.emb_dim).map(|j| format!("e{j}")));
    w.write_record(&header).map_err(pegnn::Error::from)?;
    for (p, row) in ds.points.iter().zip(emb.values().chunks(encoder.emb_dim)) {
        let mut rec = vec![p.coords.lon.to_string(), p.coords.lat.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(pegnn::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn run_moran(a: MoranArgs) -> CliResult<()> {
    let schema = a.schema.apply(CsvSchema::default());
    let (ds, _) = load_csv(&a.data, &schema, true)?;
    let graph = knn_graph_weighted(&ds.coords(), a.k, a.weighting)?;
    if let Some(warning) = &graph.clamp_warning {
        eprintln!("warning: {warning}");
    }
    let result = local_moran(&ds.targets(), &row_standardize(&graph))?;
    if result.degenerate {
        eprintln!("warning: target column is constant; all values set to 0");
    }

    let mut out = fs::File::create(&a.out)?;
    writeln!(out, "lon,lat,{},moran_i", schema.target_col)?;
    for (p, v) in ds.points.iter().zip(&result.values) {
        writeln!(out, "{},{},{},{}", p.coords.lon, p.coords.lat, p.target, v)?;
    }
    Ok(())
}

fn run_synth(a: SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        n: a.n,
        seed: a.seed,
        frequencies: a.frequencies.unwrap_or_else(|| DEFAULT_SYNTH_FREQUENCIES.to_vec()),
        noise: a.noise,
    };
    let ds = synth_generate_with(&cfg)?;
    save_csv(&a.out, &ds, &CsvSchema::default())?;
    Ok(())
}
