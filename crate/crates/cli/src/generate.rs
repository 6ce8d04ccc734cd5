use std::path::PathBuf;

use clap::Args;
use vcrnet::data::{generate_dataset, Dataset, GenerateConfig};
use vcrnet::Result;

use crate::write_resolved;

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Number of pairs, spread round-robin over the affordance classes.
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image side in pixels, a multiple of 32.
    #[arg(long, default_value_t = 224)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(a: &GenerateArgs) -> Result<Dataset> {
    let cfg = GenerateConfig {
        seed: a.seed,
        count: a.count,
        size: a.size,
    };
    cfg.validate()?;
    let ds = generate_dataset(&a.out, &cfg)?;
    write_resolved(&a.out, "generate", &cfg)?;
    eprintln!("wrote {} pairs to {}", ds.len(), a.out.display());
    Ok(ds)
}
