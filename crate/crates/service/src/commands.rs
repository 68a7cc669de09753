//! The pipeline commands. Each is deterministic in its seeds, so rerunning
//! one with identical inputs rewrites identical bytes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use viewuq_core::demo1d::{run_demo, write_demo};
use viewuq_core::model::{member_seeds, train, train_ensemble, Checkpoint, SynthesisModel, TrainingMeta, TrainConfig, TrainReport};
use viewuq_core::render::{generate_dataset, Dataset};
use viewuq_core::study::{dropout_study, ensemble_size_study, evaluate, mc_samples_study, CorrelationReport, StudyAxis};
use viewuq_core::sweep::{sweep, SweepConfig, SweepData};
use viewuq_core::uq::EnsembleSet;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";

#[derive(Debug, Parser)]
#[command(name = "viewuq", version, about = "View-conditioned synthesis with MC-Dropout and ensemble uncertainty")]
pub struct Cli {
    /// TOML pipeline configuration; every section is optional.
    #[arg(long, global = true, env = "VIEWUQ_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the seed the command consumes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the training and test datasets into `<out>/train` and `<out>/test`.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the MC-Dropout model and write its checkpoint.
    TrainMc {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured dropout probability.
        #[arg(long)]
        dropout: Option<f32>,
    },
    /// Train K ensemble members into `<out>/member_{k}.ckpt`.
    TrainEnsemble {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Evaluate both methods over the view grid.
    Sweep(SweepArgs),
    /// Test-set evaluation table, one parameter study and sweep correlations.
    Study(StudyArgs),
    /// The 1-D x·sin(x) demonstration.
    Demo1d {
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the JSON API over sweep directories.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub mc: PathBuf,
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Grid as `{n_theta}x{n_phi}`.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Dataset id; defaults to the output directory name.
    #[arg(long)]
    pub dataset_id: Option<String>,
    #[arg(long)]
    pub no_images: bool,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub mc: PathBuf,
    #[arg(long)]
    pub ensemble: PathBuf,
    /// Optional η = 0 checkpoint for the no-dropout row.
    #[arg(long)]
    pub no_dropout: Option<PathBuf>,
    /// `mc_samples`, `ensemble_size` or `dropout_p`.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated ascending values for `mc_samples` / `ensemble_size`.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<usize>,
    /// Checkpoints for the `dropout_p` axis, in ascending η.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<PathBuf>,
    /// Complete sweep to correlate.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory whose subdirectories are sweeps, one per dataset id.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, env = "VIEWUQ_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Built UI bundle served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    /// Output directory of `demo1d`.
    #[arg(long)]
    pub demo1d: Option<PathBuf>,
}

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("missing {what}: {}", path.display())))
    }
}

fn load_model(path: &Path) -> CliResult<SynthesisModel> {
    require(path, "model checkpoint")?;
    Ok(Checkpoint::load(path)?.to_model()?)
}

/// Members `member_0.ckpt …` in index order.
pub fn load_ensemble(dir: &Path) -> CliResult<EnsembleSet> {
    require(dir, "ensemble directory")?;
    let mut members = Vec::new();
    loop {
        let path = dir.join(format!("member_{}.ckpt", members.len()));
        if !path.is_file() {
            break;
        }
        members.push(load_model(&path)?);
    }
    if members.is_empty() {
        return Err(CliError::Usage(format!("no member_0.ckpt in {}", dir.display())));
    }
    Ok(EnsembleSet::new(members)?)
}

fn load_split(data: &Path, split: &str) -> CliResult<Dataset> {
    let dir = data.join(split);
    require(&dir, "dataset")?;
    Ok(Dataset::load(&dir)?)
}

fn meta(report: &TrainReport, data: &Dataset, cfg: &TrainConfig) -> TrainingMeta {
    TrainingMeta {
        epochs: cfg.epochs,
        final_loss: report.final_loss(),
        data_seed: data.seed,
        train_seed: cfg.seed,
        batch_size: cfg.batch_size,
        lr: cfg.adam.lr,
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Usage(format!("{}: {e}", parent.display())))?;
    }
    let bytes = serde_json::to_vec_pretty(value).map_err(viewuq_core::Error::from)?;
    std::fs::write(path, bytes).map_err(|source| viewuq_core::Error::Io {
        path: path.into(),
        source,
    })?;
    Ok(())
}

pub fn gen_data(cfg: &PipelineConfig, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let d = &cfg.data;
    let volume = d.load_volume()?;
    let tf = d.transfer_function()?;
    let seed = seed.unwrap_or(d.seed);
    // Test views use a distinct stream so the two splits never coincide.
    for (split, n, s) in [(TRAIN_DIR, d.n_train, seed), (TEST_DIR, d.n_test, viewuq_core::autodiff::rng::mix(seed, 1_000))] {
        generate_dataset(&volume, &tf, n, d.resolution, s)?
            .with_ids(d.volume_id(), d.tf.clone())
            .save(&out.join(split))?;
    }
    Ok(())
}

pub fn train_mc(cfg: &PipelineConfig, seed: Option<u64>, data: &Path, out: &Path, dropout: Option<f32>) -> CliResult<()> {
    let train_ds = load_split(data, TRAIN_DIR)?;
    let mut model_cfg = cfg.model.clone();
    if let Some(p) = dropout {
        model_cfg.dropout_p = p;
    }
    let tc = TrainConfig {
        seed: seed.unwrap_or(cfg.train.seed),
        ..cfg.train.clone()
    };
    let mut model = SynthesisModel::build(model_cfg)?;
    let report = train(&mut model, &train_ds, &tc)?;
    save_checkpoint(out, &model, Some(meta(&report, &train_ds, &tc)))
}

fn save_checkpoint(out: &Path, model: &SynthesisModel, meta: Option<TrainingMeta>) -> CliResult<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Usage(format!("{}: {e}", parent.display())))?;
    }
    Ok(Checkpoint::from_model(model, meta).save(out)?)
}

pub fn train_ensemble_cmd(cfg: &PipelineConfig, seed: Option<u64>, data: &Path, out: &Path, k: Option<usize>) -> CliResult<()> {
    let train_ds = load_split(data, TRAIN_DIR)?;
    let k = k.unwrap_or(cfg.ensemble.k);
    let root = seed.unwrap_or(cfg.ensemble.root_seed);
    let members = train_ensemble(&cfg.model, &train_ds, &cfg.train, k, root, cfg.ensemble.threads)?;
    for (idx, (model, report)) in members.iter().enumerate() {
        let tc = TrainConfig {
            seed: member_seeds(root, idx).1,
            ..cfg.train.clone()
        };
        save_checkpoint(&out.join(format!("member_{idx}.ckpt")), model, Some(meta(report, &train_ds, &tc)))?;
    }
    Ok(())
}

pub fn sweep_cmd(cfg: &PipelineConfig, seed: Option<u64>, args: &SweepArgs) -> CliResult<()> {
    let mut mc = load_model(&args.mc)?;
    let mut ensemble = load_ensemble(&args.ensemble)?;
    let grid = match &args.grid {
        Some(g) => g.parse()?,
        None => cfg.sweep.grid()?,
    };
    let dataset_id = match &args.dataset_id {
        Some(id) => id.clone(),
        None => args
            .out
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::Usage("cannot derive a dataset id from --out".into()))?,
    };
    let sc = SweepConfig {
        grid,
        m: args.m.unwrap_or(cfg.sweep.m),
        seed: seed.unwrap_or(cfg.sweep.seed),
        dataset_id,
        volume_id: cfg.data.volume_id(),
        tf_id: cfg.data.tf.clone(),
        write_images: cfg.sweep.write_images && !args.no_images,
    };
    let volume = cfg.data.load_volume()?;
    let tf = cfg.data.transfer_function()?;
    sweep(&args.out, &mut mc, &mut ensemble, &volume, &tf, &sc)?;
    Ok(())
}

pub fn study_cmd(cfg: &PipelineConfig, seed: Option<u64>, args: &StudyArgs) -> CliResult<()> {
    let test = load_split(&args.data, TEST_DIR)?;
    let seed = seed.unwrap_or(cfg.study.seed);
    let mut mc = load_model(&args.mc)?;
    let mut ensemble = load_ensemble(&args.ensemble)?;
    let mut no_dropout = args.no_dropout.as_deref().map(load_model).transpose()?;
    let table = evaluate(no_dropout.as_mut(), &mut mc, &mut ensemble, &test, cfg.study.m, seed)?;

    let curve = match args.axis.as_deref().map(str::parse::<StudyAxis>).transpose()? {
        None => None,
        Some(StudyAxis::McSamples) => Some(mc_samples_study(&mut mc, &test, &args.values, seed)?),
        Some(StudyAxis::EnsembleSize) => Some(ensemble_size_study(&ensemble, &test, &args.values)?),
        Some(StudyAxis::DropoutP) => {
            let mut models = args.models.iter().map(|p| load_model(p)).collect::<CliResult<Vec<_>>>()?;
            Some(dropout_study(&mut models, &test, cfg.study.m, seed)?)
        }
    };
    let correlations = match &args.sweep {
        Some(dir) => Some(CorrelationReport::from_records(SweepData::open(dir)?.records())?),
        None => None,
    };
    write_json(
        &args.out,
        &json!({ "evaluation": table, "study": curve, "correlations": correlations }),
    )
}

pub fn demo1d_cmd(cfg: &PipelineConfig, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let mut dc = cfg.demo1d.clone();
    if let Some(s) = seed {
        dc.seed = s;
    }
    let (data, outcome) = run_demo(&dc)?;
    write_demo(out, &data, &outcome)?;
    Ok(())
}
