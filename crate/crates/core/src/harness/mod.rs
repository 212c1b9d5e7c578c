//! Configuration, metrics, persistence and the experiment recipes that tie
//! the components into reproducible runs.

mod config;
mod io;
mod metrics;
mod recipes;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use config::{AblationConfig, CheckpointPaths, ExperimentConfig, OnOffConfig, SweepConfig, WeatherConfig};
pub use io::{read_log_csv, sha256_file, write_log_csv, write_plot_script, Manifest, MANIFEST};
pub use metrics::{violation_rate, Metrics};
pub use recipes::{records_to_rows, Outcome, SweepPoint, DQN_FILE, LOG_FILE, PREDICTOR_FILE, SELECTOR_FILE};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Recipe {
    CollectOnoff,
    TrainPredictor,
    TrainSelector,
    TrainDqn,
    EvalIidSweep,
    EvalContinuousSweep,
    MalAblation,
}

impl Recipe {
    /// Dependency order.
    pub const ALL: [Recipe; 7] = [
        Recipe::CollectOnoff,
        Recipe::TrainPredictor,
        Recipe::TrainSelector,
        Recipe::TrainDqn,
        Recipe::EvalIidSweep,
        Recipe::EvalContinuousSweep,
        Recipe::MalAblation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::CollectOnoff => "collect-onoff",
            Recipe::TrainPredictor => "train-predictor",
            Recipe::TrainSelector => "train-selector",
            Recipe::TrainDqn => "train-dqn",
            Recipe::EvalIidSweep => "eval-iid-sweep",
            Recipe::EvalContinuousSweep => "eval-continuous-sweep",
            Recipe::MalAblation => "mal-ablation",
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| {
            let names: Vec<_> = Recipe::ALL.iter().map(|r| r.name()).collect();
            Error::Config(format!("unknown recipe `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// Run one recipe; outputs land in `config.out_dir/<recipe>/`.
pub fn run_recipe(recipe: Recipe, config: &ExperimentConfig) -> Result<Outcome> {
    match recipe {
        Recipe::CollectOnoff => recipes::collect_onoff_recipe(config),
        Recipe::TrainPredictor => recipes::train_predictor_recipe(config),
        Recipe::TrainSelector => recipes::train_selector_recipe(config),
        Recipe::TrainDqn => recipes::train_dqn_recipe(config),
        Recipe::EvalIidSweep | Recipe::EvalContinuousSweep => recipes::sweep_recipe(config, recipe),
        Recipe::MalAblation => recipes::mal_ablation_recipe(config),
    }
}

/// Map `f` over `items` on up to `workers` threads. Results come back in
/// input order, so output never depends on scheduling.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_names_parse_back() {
        for r in Recipe::ALL {
            assert_eq!(r.name().parse::<Recipe>().unwrap(), r);
        }
        assert!(matches!("train".parse::<Recipe>(), Err(Error::Config(_))));
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..37).collect();
        let serial = parallel_map(&items, 1, |x| x * x);
        assert_eq!(parallel_map(&items, 4, |x| x * x), serial);
        assert!(parallel_map(&[] as &[u64], 3, |x| *x).is_empty());
    }
}
