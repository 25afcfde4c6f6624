//! Command-line driver: one subcommand per experiment, each writing a JSON
//! report plus CSV plot data.
//!
//! Every run records its effective configuration in `report.json`; passing
//! that file back through `--config` reproduces the run.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

pub use config::AuditConfig;
pub use output::{AuditReport, REPORT_FILE, SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(name = "batchaudit", version, about = "Audit patch embeddings for source-site batch effects")]
pub struct Cli {
    /// Experiment to run; may be omitted when `--config` names one.
    #[command(subcommand)]
    pub command: Option<Command>,
    /// Input file or directory; repeatable. Tables are concatenated in order.
    #[arg(long, global = true)]
    pub input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Base seed; every random stage derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML or JSON config, or a previous report.json.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict the source site of each patch with NCC, KNN and a linear probe.
    SitePredict(SiteArgs),
    /// Tumour-vs-normal probing on four site-confounded training splits.
    Bias(BiasArgs),
    /// Sorted distances from reference patches to same-slide, same-site and
    /// other-site patches.
    Distances(DistanceArgs),
    /// Site-prediction KNN accuracy on features reduced to ℓ principal components.
    Reduced(ReducedArgs),
    /// Explained variance and site AUROC of each principal component.
    Separability(SeparabilityArgs),
    /// Tile slide images, drop background and write normalized patches.
    Stain(StainArgs),
    /// Generate a synthetic embedding table with planted signatures.
    Synth(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SitePredict(_) => "site-predict",
            Command::Bias(_) => "bias",
            Command::Distances(_) => "distances",
            Command::Reduced(_) => "reduced",
            Command::Separability(_) => "separability",
            Command::Stain(_) => "stain",
            Command::Synth(_) => "synth",
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct SiteArgs {
    /// Patches per site after subsampling.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Linear-probe training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct BiasArgs {
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct DistanceArgs {
    /// Reference patch id; repeatable.
    #[arg(long)]
    pub reference: Vec<String>,
    /// References to draw when none is given.
    #[arg(long)]
    pub n_references: Option<usize>,
    #[arg(long)]
    pub n_per_group: Option<usize>,
    #[arg(long)]
    pub n_other_slides: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct ReducedArgs {
    /// Comma-separated component counts.
    #[arg(long, value_delimiter = ',')]
    pub ells: Option<Vec<usize>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct SeparabilityArgs {
    #[arg(long)]
    pub n_components: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct StainArgs {
    #[arg(long)]
    pub reinhard: bool,
    #[arg(long)]
    pub macenko: bool,
    #[arg(long)]
    pub min_std: Option<f64>,
    /// Use the largest per-channel standard deviation instead of grayscale.
    #[arg(long)]
    pub per_channel_std: bool,
    /// Thumbnail downsampling factor for the tissue mask.
    #[arg(long)]
    pub downsample: Option<u32>,
    #[arg(long)]
    pub pool_size: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub n_sites: Option<usize>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub patients_per_site: Option<usize>,
    #[arg(long)]
    pub slides_per_patient: Option<usize>,
    #[arg(long)]
    pub patches_per_slide: Option<usize>,
    #[arg(long)]
    pub site_strength: Option<f64>,
    #[arg(long)]
    pub class_strength: Option<f64>,
    #[arg(long)]
    pub slide_strength: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub noise_anisotropy: Option<f64>,
    #[arg(long)]
    pub lesion_fraction: Option<f64>,
    /// top_variance, low_variance or random.
    #[arg(long)]
    pub placement: Option<String>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Builds the effective configuration: config file first, flags on top.
pub fn resolve_config(cli: &Cli) -> Result<AuditConfig> {
    let mut cfg = match &cli.config {
        Some(p) => AuditConfig::load(p)?,
        None => AuditConfig::default(),
    };
    match cli.command.as_ref().map(Command::name) {
        Some(name) if !cfg.experiment.is_empty() && cfg.experiment != name => {
            anyhow::bail!("config is for experiment {:?}, not {name:?}", cfg.experiment);
        }
        Some(name) => cfg.experiment = name.to_string(),
        None if cfg.experiment.is_empty() => {
            anyhow::bail!("no experiment given: name a subcommand or pass a config that sets one");
        }
        None => {}
    }
    if !cli.input.is_empty() {
        cfg.inputs = cli.input.clone();
    }
    set(&mut cfg.out, cli.out.clone().map(Some));
    set(&mut cfg.seed, cli.seed.map(Some));
    let Some(command) = &cli.command else {
        return Ok(cfg);
    };
    match command {
        Command::SitePredict(a) => {
            set(&mut cfg.site.budget_per_site, a.budget);
            set(&mut cfg.site.k, a.k);
            set(&mut cfg.site.lp.epochs, a.epochs);
        }
        Command::Bias(a) => {
            set(&mut cfg.bias.repetitions, a.repetitions);
            set(&mut cfg.bias.lp.epochs, a.epochs);
        }
        Command::Distances(a) => {
            if !a.reference.is_empty() {
                cfg.distances.references = a.reference.clone();
            }
            set(&mut cfg.distances.n_references, a.n_references);
            set(&mut cfg.distances.n_per_group, a.n_per_group);
            set(&mut cfg.distances.n_other_slides, a.n_other_slides);
        }
        Command::Reduced(a) => {
            set(&mut cfg.reduced.ells, a.ells.clone());
            set(&mut cfg.reduced.k, a.k);
            set(&mut cfg.site.budget_per_site, a.budget);
        }
        Command::Separability(a) => set(&mut cfg.separability.n_components, a.n_components),
        Command::Stain(a) => {
            cfg.stain.reinhard |= a.reinhard;
            cfg.stain.macenko |= a.macenko;
            set(&mut cfg.stain.min_std, a.min_std);
            if a.per_channel_std {
                cfg.stain.std_mode = batchaudit_stain::StdMode::PerChannel;
            }
            set(&mut cfg.stain.thumbnail_downsample, a.downsample);
            set(&mut cfg.stain.target_pool_size, a.pool_size);
        }
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            set(&mut s.dims, a.dims);
            set(&mut s.n_sites, a.n_sites);
            set(&mut s.n_classes, a.n_classes);
            set(&mut s.patients_per_site, a.patients_per_site);
            set(&mut s.slides_per_patient, a.slides_per_patient);
            set(&mut s.patches_per_slide, a.patches_per_slide);
            set(&mut s.site_strength, a.site_strength);
            set(&mut s.class_strength, a.class_strength);
            set(&mut s.slide_strength, a.slide_strength);
            set(&mut s.noise, a.noise);
            set(&mut s.noise_anisotropy, a.noise_anisotropy);
            set(&mut s.lesion_fraction, a.lesion_fraction);
            if let Some(p) = &a.placement {
                s.signature_placement = serde_json::from_value(serde_json::Value::String(p.clone()))
                    .map_err(|_| anyhow::anyhow!("unknown signature placement {p:?}"))?;
            }
        }
    }
    Ok(cfg)
}

/// Parses arguments, runs the command and writes its outputs.
pub fn run_from_args<I, T>(args: I) -> Result<(AuditReport, PathBuf)>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(&cli)
}

pub fn run(cli: &Cli) -> Result<(AuditReport, PathBuf)> {
    let cfg = resolve_config(cli).map_err(|e| e.context("stage config"))?;
    commands::execute(cfg)
}
