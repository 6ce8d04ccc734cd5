//! Command-line harness: dataset generation, training, evaluation,
//! inference and ablation runs. Every command writes a
//! `resolved_config.json` next to its outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use vcrnet::data::SplitKind;
use vcrnet::fsutil::write_json;
use vcrnet::{Error, Result};

pub mod ablate;
pub mod eval;
pub mod generate;
pub mod infer;
pub mod train;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "vcrnet", version, about = "Affordance heatmaps from paired interaction images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with split manifests.
    Generate(generate::GenerateArgs),
    /// Train on the train partition of a split.
    Train(train::TrainArgs),
    /// Score a checkpoint on one partition of a split.
    Eval(eval::EvalArgs),
    /// Predict heatmaps for one image pair.
    Infer(infer::InferArgs),
    /// Train and evaluate the full model and each ablation.
    Ablate(ablate::AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    Text,
    Pose,
    Apparent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn ids(self, m: &vcrnet::data::SplitManifest) -> &[String] {
        match self {
            Partition::Train => &m.train,
            Partition::Val => &m.val,
            Partition::Test => &m.test,
        }
    }
}

/// Dataset location and split shared by the training and scoring commands.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "seen", value_parser = parse_split)]
    pub split: SplitKind,
}

pub fn parse_split(s: &str) -> std::result::Result<SplitKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate::run(&a).map(|_| ()),
        Command::Train(a) => train::run(&a).map(|_| ()),
        Command::Eval(a) => eval::run(&a).map(|_| ()),
        Command::Infer(a) => infer::run(&a),
        Command::Ablate(a) => ablate::run(&a),
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Divergence { .. } | Error::NonFiniteLoss { .. } => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

/// What a run directory records about how it was produced.
#[derive(Debug, Serialize)]
pub struct Resolved<'a, T: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    #[serde(flatten)]
    pub config: &'a T,
}

pub fn write_resolved<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<()> {
    write_json(
        &dir.join("resolved_config.json"),
        &Resolved {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
        },
    )
}

/// Reads a JSON config file; malformed or unknown fields are configuration errors.
pub fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    vcrnet::fsutil::read_json(path).map_err(|e| match e {
        Error::Parse { .. } => Error::Config(e.to_string()),
        other => other,
    })
}
