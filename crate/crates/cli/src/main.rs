use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::Parser;
use hvacft_core::harness::{run_recipe, ExperimentConfig, Recipe};
use hvacft_core::Error;

/// Run an experiment recipe.
#[derive(Parser, Debug)]
#[command(name = "hvacft", version, about)]
struct Args {
    /// collect-onoff, train-predictor, train-selector, train-dqn,
    /// eval-iid-sweep, eval-continuous-sweep, mal-ablation, or `all`.
    recipe: String,
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Training { .. }) => 3,
        _ => 1,
    }
}

fn run(args: &Args) -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    let recipes = if args.recipe == "all" {
        Recipe::ALL.to_vec()
    } else {
        vec![args.recipe.parse::<Recipe>()?]
    };
    for recipe in recipes {
        let t = Instant::now();
        let out = run_recipe(recipe, &cfg).with_context(|| format!("recipe `{recipe}` failed"))?;
        print!("{}", out.summary);
        eprintln!("{recipe}: wrote {} in {:.1}s", out.dir.display(), t.elapsed().as_secs_f64());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
