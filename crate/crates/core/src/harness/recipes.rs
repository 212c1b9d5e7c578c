use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::io::{read_log_csv, write_log_csv, write_plot_script, Manifest};
use super::metrics::{violation_rate, Metrics};
use super::{parallel_map, Recipe};
use crate::abstract_model::{identify, ZoneSeries};
use crate::controller::{
    run_ftf, train_dqn, Components, ControlMode, EpisodeRow, FtfConfig, QNetwork, TrainingWeather,
};
use crate::error::{Error, Result};
use crate::faults::FaultConfig;
use crate::history::ControlRecord;
use crate::mal::{median_rmse, train_strategy, write_ablation_csv, AblationCell, Strategy};
use crate::nn::checkpoint::Checkpoint;
use crate::plant::{zone_costs, PlantParams};
use crate::predictor::{build_training_set, Predictor};
use crate::rng::{derive_seed, seeded};
use crate::selector::{build_selector_dataset, Selector};
use crate::sim::{collect_onoff, fraction_within, run_policy, Environment};

pub const LOG_FILE: &str = "onoff_log.csv";
pub const PREDICTOR_FILE: &str = "predictor.json";
pub const SELECTOR_FILE: &str = "selector.json";
pub const DQN_FILE: &str = "dqn.json";

/// Files a finished recipe left behind.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub recipe: Recipe,
    pub dir: PathBuf,
    pub summary: String,
    pub manifest: Manifest,
}

struct Run<'a> {
    recipe: Recipe,
    cfg: &'a ExperimentConfig,
    plant: PlantParams,
    dir: PathBuf,
    manifest: Manifest,
}

impl<'a> Run<'a> {
    fn new(recipe: Recipe, cfg: &'a ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.out_dir.join(recipe.name());
        fs::create_dir_all(&dir)?;
        Ok(Self {
            recipe,
            cfg,
            plant: cfg.plant()?,
            dir,
            manifest: Manifest::new(recipe.name(), cfg.hash()?, cfg.seed),
        })
    }

    fn seed(&mut self, label: &str) -> u64 {
        let s = derive_seed(self.cfg.seed, label);
        self.manifest.seed(label, s)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn env(&self, weather: crate::plant::WeatherSeries) -> Result<Environment> {
        Environment::new(self.plant.clone(), weather, self.cfg.cost.clone())
    }

    fn eval_env(&self, control_steps: usize) -> Result<Environment> {
        self.env(self.cfg.eval_weather(control_steps)?)
    }

    /// ON-OFF log on the evaluation weather, for held-out scores.
    fn heldout_log(&mut self) -> Result<Vec<ControlRecord>> {
        let o = &self.cfg.onoff;
        let env = self.eval_env(o.heldout_steps)?;
        let seed = self.seed("heldout-plant");
        collect_onoff(&env, &o.controller(self.plant.levels()), o.initial_temp_c, o.heldout_steps, seed)
    }

    fn prerequisite(&mut self, configured: Option<&Path>, producer: Recipe, file: &str) -> Result<PathBuf> {
        let path = configured.map_or_else(|| self.cfg.out_dir.join(producer.name()).join(file), Path::to_path_buf);
        if !path.exists() {
            return Err(Error::MissingPrerequisite {
                missing: path.display().to_string(),
                recipe: producer.name().into(),
            });
        }
        self.manifest.input(file, &path)?;
        Ok(path)
    }

    fn log(&mut self) -> Result<Vec<ControlRecord>> {
        let path = self.prerequisite(None, Recipe::CollectOnoff, LOG_FILE)?;
        let log = read_log_csv(&path)?;
        if log.len() != self.cfg.onoff.log_steps || log.first().is_some_and(|r| r.state.zones() != self.plant.zones()) {
            return Err(Error::Config(format!(
                "{} does not match the configured building or log length; rerun `collect-onoff`",
                path.display()
            )));
        }
        Ok(log)
    }

    fn checkpoint(&mut self, configured: Option<&Path>, producer: Recipe, file: &str) -> Result<Checkpoint> {
        let path = self.prerequisite(configured, producer, file)?;
        Checkpoint::load(&path)
    }

    fn qnet(&mut self) -> Result<QNetwork> {
        let ck = self.checkpoint(self.cfg.checkpoints.dqn.clone().as_deref(), Recipe::TrainDqn, DQN_FILE)?;
        let q = QNetwork::from_checkpoint(&ck)?;
        if q.zones != self.plant.zones() {
            return Err(Error::Config(format!("Q-network is for {} zones", q.zones)));
        }
        Ok(q)
    }

    fn predictor(&mut self) -> Result<Predictor> {
        let ck = self.checkpoint(self.cfg.checkpoints.predictor.clone().as_deref(), Recipe::TrainPredictor, PREDICTOR_FILE)?;
        Predictor::from_checkpoint(&ck)
    }

    fn selector(&mut self) -> Result<Selector> {
        let ck = self.checkpoint(self.cfg.checkpoints.selector.clone().as_deref(), Recipe::TrainSelector, SELECTOR_FILE)?;
        Selector::from_checkpoint(&ck)
    }

    fn finish(mut self, summary: String) -> Result<Outcome> {
        fs::write(self.path("summary.txt"), &summary)?;
        self.manifest.record_outputs(&self.dir)?;
        self.manifest.save(&self.dir)?;
        Ok(Outcome {
            recipe: self.recipe,
            dir: self.dir,
            summary,
            manifest: self.manifest,
        })
    }
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn theta_header(zones: usize) -> Vec<String> {
    (1..=zones).map(|z| format!("theta_{z}")).collect()
}

fn loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = losses.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), f(*l)]).collect();
    write_rows(path, &header(&["epoch", "loss"]), &rows)
}

/// Episode rows for a logged closed loop, in the same form `run_ftf` emits.
pub fn records_to_rows(records: &[ControlRecord], env: &Environment, bounds: (f64, f64)) -> Vec<EpisodeRow> {
    let mut rows = Vec::new();
    for r in records {
        let costs = zone_costs(&r.state, &r.action, &env.plant, &env.cost);
        for (z, &t) in r.state.t_in.iter().enumerate() {
            rows.push(EpisodeRow {
                step: r.state.step,
                zone: z,
                t_true: t,
                t_sensor: r.sensed[z],
                t_chosen: r.sensed[z],
                action: r.action.levels[z],
                cost: costs[z],
                violation: !(bounds.0..=bounds.1).contains(&t) as u8,
            });
        }
    }
    rows
}

pub(super) fn collect_onoff_recipe(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut run = Run::new(Recipe::CollectOnoff, cfg)?;
    let o = &cfg.onoff;
    let env = run.env(cfg.train_weather(o.log_steps)?)?;
    let seed = run.seed("collect-plant");
    let log = collect_onoff(&env, &o.controller(run.plant.levels()), o.initial_temp_c, o.log_steps, seed)?;
    write_log_csv(&run.path(LOG_FILE), &log)?;
    let n = run.plant.zones();
    let cols: Vec<(usize, String)> = (0..n).map(|z| (7 + z, format!("zone {}", z + 1))).collect();
    let cols: Vec<(usize, &str)> = cols.iter().map(|(c, s)| (*c, s.as_str())).collect();
    write_plot_script(&run.path("plot.gp"), LOG_FILE, "ON-OFF log", "indoor temperature (C)", &cols)?;

    let r = &cfg.ftf.reward;
    let rows = records_to_rows(&log, &env, (r.t_low, r.t_high));
    let theta = violation_rate(&rows, n, (r.t_low, r.t_high))?;
    let within = fraction_within(&log, o.t_low - 1.0, o.t_high + 1.0);
    let cost: f64 = rows.iter().map(|r| r.cost).sum();
    let mut s = String::new();
    writeln!(s, "ON-OFF log: {} control steps, {n} zone(s)", log.len()).unwrap();
    writeln!(s, "within [{}, {}] C: {:.2}%", o.t_low - 1.0, o.t_high + 1.0, 100.0 * within).unwrap();
    writeln!(s, "theta per zone (%): {}", theta.iter().map(|t| format!("{t:.2}")).collect::<Vec<_>>().join(" ")).unwrap();
    writeln!(s, "cost: {cost:.4}").unwrap();
    run.finish(s)
}

pub(super) fn train_predictor_recipe(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut run = Run::new(Recipe::TrainPredictor, cfg)?;
    let log = run.log()?;
    let p = &cfg.predictor;
    let (n, max_flow) = (run.plant.zones(), run.plant.max_flow());
    let mut rng = seeded(run.seed("predictor-corruption"));
    let windows = build_training_set(&log, &run.plant, p.window, p.interval, p.train_fault_probability, &mut rng)?;
    let data = windows.to_dataset(max_flow, p.offset_c)?;
    let mut pred = Predictor::init(p.clone(), n, max_flow, run.seed("predictor-init"))?;
    let losses = pred.train(&data, run.seed("predictor-train"))?;
    pred.to_checkpoint()?.save(&run.path(PREDICTOR_FILE))?;
    loss_csv(&run.path("loss.csv"), &losses)?;
    write_plot_script(&run.path("plot.gp"), "loss.csv", "predictor training", "MSE", &[(2, "loss")])?;

    let heldout = run.heldout_log()?;
    let mut rng = seeded(run.seed("predictor-heldout"));
    let clean = build_training_set(&heldout, &run.plant, p.window, 1, 0.0, &mut rng)?.to_dataset(max_flow, p.offset_c)?;
    let corrupted = build_training_set(&heldout, &run.plant, p.window, 1, p.train_fault_probability, &mut rng)?
        .to_dataset(max_flow, p.offset_c)?;
    let model = identify(&ZoneSeries::from_records(&log, &run.plant), cfg.mal.model.clone())?;
    let m_rmse = model.one_step_rmse(&ZoneSeries::from_records(&heldout, &run.plant))?;
    let scores = [
        ("predictor_clean", pred.rmse(&clean)?),
        ("predictor_corrupted", pred.rmse(&corrupted)?),
        ("abstract_model", m_rmse),
    ];
    let rows: Vec<Vec<String>> = scores.iter().map(|(k, v)| vec![k.to_string(), f(*v)]).collect();
    write_rows(&run.path("heldout.csv"), &header(&["metric", "rmse"]), &rows)?;

    let mut s = String::new();
    writeln!(s, "predictor: {} windows, {} epochs, final loss {:.6}", data.len(), losses.len(), losses.last().copied().unwrap_or(f64::NAN)).unwrap();
    for (k, v) in scores {
        writeln!(s, "held-out RMSE {k}: {v:.4} C").unwrap();
    }
    run.finish(s)
}

pub(super) fn train_selector_recipe(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut run = Run::new(Recipe::TrainSelector, cfg)?;
    let log = run.log()?;
    let sc = &cfg.selector;
    let (n, max_flow) = (run.plant.zones(), run.plant.max_flow());
    let mut rng = seeded(run.seed("selector-data"));
    let set = build_selector_dataset(&log, &run.plant, sc, &mut rng)?;
    let mut sel = Selector::init(sc.clone(), n, max_flow, run.seed("selector-init"))?;
    let losses = sel.train(&set, run.seed("selector-train"))?;
    sel.to_checkpoint()?.save(&run.path(SELECTOR_FILE))?;
    loss_csv(&run.path("loss.csv"), &losses)?;
    write_plot_script(&run.path("plot.gp"), "loss.csv", "selector training", "cross-entropy", &[(2, "loss")])?;

    let heldout = run.heldout_log()?;
    let mut rng = seeded(run.seed("selector-heldout"));
    let test = build_selector_dataset(&heldout, &run.plant, sc, &mut rng)?;
    let acc = sel.accuracy(&test)?;
    let rows = vec![
        vec!["type1".into(), opt(acc.type1.map(|a| 100.0 * a))],
        vec!["type2".into(), opt(acc.type2.map(|a| 100.0 * a))],
        vec!["type3".into(), opt(acc.type3.map(|a| 100.0 * a))],
        vec!["type12".into(), opt(acc.type12.map(|a| 100.0 * a))],
        vec!["overall".into(), f(100.0 * acc.overall)],
    ];
    write_rows(&run.path("accuracy.csv"), &header(&["samples", "accuracy_pct"]), &rows)?;

    let mut s = String::new();
    writeln!(s, "selector: {} samples, {} epochs, final loss {:.6}", set.len(), losses.len(), losses.last().copied().unwrap_or(f64::NAN)).unwrap();
    for r in &rows {
        writeln!(s, "held-out accuracy {}: {}%", r[0], r[1]).unwrap();
    }
    run.finish(s)
}

pub(super) fn train_dqn_recipe(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut run = Run::new(Recipe::TrainDqn, cfg)?;
    let weather = match &cfg.weather.train_csv {
        Some(_) => TrainingWeather::Fixed(cfg.train_weather(0)?),
        None => TrainingWeather::Generated(cfg.weather.profile.clone()),
    };
    let seed = run.seed("dqn");
    let (q, log) = train_dqn(&run.plant, &cfg.cost, &weather, &cfg.ftf.reward, &cfg.dqn, seed)?;
    q.to_checkpoint()?.save(&run.path(DQN_FILE))?;
    let rows: Vec<Vec<String>> = (0..log.episode_returns.len())
        .map(|i| {
            vec![
                (i + 1).to_string(),
                f(log.episode_returns[i]),
                f(log.episode_losses[i]),
                log.validation_returns[i].map_or_else(String::new, f),
            ]
        })
        .collect();
    write_rows(&run.path("training.csv"), &header(&["episode", "return", "td_loss", "validation_return"]), &rows)?;
    write_plot_script(&run.path("plot.gp"), "training.csv", "DQN training", "episode return", &[(2, "return")])?;

    // Clean evaluation month against the ON-OFF baseline.
    let steps = cfg.ftf.control_steps;
    let env = run.eval_env(steps)?;
    let plant_seed = run.seed("eval-plant");
    let ftf = FtfConfig {
        mode: ControlMode::PlainDqn,
        ..cfg.ftf.clone()
    };
    let comps = Components { qnet: &q, predictor: None, selector: None };
    let r = &cfg.ftf.reward;
    let bounds = (r.t_low, r.t_high);
    let dqn = Metrics::from_episode(&run_ftf(&env, FaultConfig::none(0), comps, &ftf, plant_seed)?, bounds)?;
    let mut oc = cfg.onoff.controller(run.plant.levels());
    let records = run_policy(&env, cfg.ftf.initial_temp_c, steps, FaultConfig::none(0), plant_seed, |_, sensed| Ok(oc.act(sensed)))?;
    let on_rows = records_to_rows(&records, &env, bounds);
    let onoff = Metrics {
        violation: violation_rate(&on_rows, run.plant.zones(), bounds)?,
        cost: on_rows.iter().map(|r| r.cost).sum(),
        predictor_rmse: None,
        selector_accuracy: None,
    };
    let mut h = header(&["controller", "mean_theta"]);
    h.extend(theta_header(run.plant.zones()));
    h.push("cost".into());
    let line = |name: &str, m: &Metrics| {
        let mut row = vec![name.to_string(), f(m.mean_violation())];
        row.extend(m.violation.iter().map(|v| f(*v)));
        row.push(f(m.cost));
        row
    };
    write_rows(&run.path("evaluation.csv"), &h, &[line("dqn", &dqn), line("onoff", &onoff)])?;

    let mut s = String::new();
    writeln!(
        s,
        "DQN: {} episodes, {} updates, kept episode {}",
        log.episode_returns.len(),
        log.updates,
        log.kept_episode + 1
    )
    .unwrap();
    writeln!(s, "clean evaluation ({steps} control steps): DQN theta {:.2}% cost {:.4}", dqn.mean_violation(), dqn.cost).unwrap();
    writeln!(s, "ON-OFF baseline: theta {:.2}% cost {:.4}", onoff.mean_violation(), onoff.cost).unwrap();
    run.finish(s)
}

/// One fault setting of a sweep with the paired plain-DQN and FTF results.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub dqn: Metrics,
    pub ftf: Metrics,
}

pub(super) fn sweep_recipe(cfg: &ExperimentConfig, recipe: Recipe) -> Result<Outcome> {
    let mut run = Run::new(recipe, cfg)?;
    let q = run.qnet()?;
    let pred = run.predictor()?;
    let sel = run.selector()?;
    let s = &cfg.sweep;
    let mut settings: Vec<(String, FaultConfig)> = match recipe {
        Recipe::EvalIidSweep => s
            .iid_probabilities
            .iter()
            .map(|&p| (p.to_string(), p))
            .map(|(l, p)| {
                let seed = derive_seed(cfg.seed, &format!("faults-iid-{l}"));
                (l, FaultConfig::iid(p, seed))
            })
            .collect(),
        _ => s
            .continuous_durations
            .iter()
            .map(|&d| {
                let seed = derive_seed(cfg.seed, &format!("faults-continuous-{d}"));
                (d.to_string(), FaultConfig::continuous(s.continuous_probability, d, seed))
            })
            .collect(),
    };
    if settings.is_empty() {
        settings.push(("clean".into(), FaultConfig::none(derive_seed(cfg.seed, "faults-clean"))));
    }
    for (label, fc) in &settings {
        run.manifest.seed(&format!("faults-{label}"), fc.seed);
    }
    let plant_seed = run.seed("eval-plant");
    let env = run.eval_env(cfg.predictor.window + cfg.ftf.control_steps)?;
    let comps = Components { qnet: &q, predictor: Some(&pred), selector: Some(&sel) };
    let r = &cfg.ftf.reward;
    let bounds = (r.t_low, r.t_high);
    let dir = run.dir.clone();
    let points = parallel_map(&settings, cfg.workers(), |(label, faults)| -> Result<SweepPoint> {
        let mut out = Vec::new();
        for (mode, name) in [(ControlMode::PlainDqn, "dqn"), (ControlMode::Ftf, "ftf")] {
            let fc = FtfConfig { mode, ..cfg.ftf.clone() };
            let ep = run_ftf(&env, faults.clone(), comps, &fc, plant_seed)?;
            ep.write_csv(&dir.join(format!("episode_{name}_{label}.csv")))?;
            out.push(Metrics::from_episode(&ep, bounds)?);
        }
        let ftf = out.pop().unwrap();
        let dqn = out.pop().unwrap();
        Ok(SweepPoint { label: label.clone(), dqn, ftf })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let n = run.plant.zones();
    let key = if recipe == Recipe::EvalIidSweep { "p1" } else { "duration" };
    let mut h = header(&[key, "controller", "mean_theta"]);
    h.extend(theta_header(n));
    h.extend(header(&["cost", "predictor_rmse", "selector_accuracy"]));
    let mut long = Vec::new();
    for p in &points {
        for (name, m) in [("dqn", &p.dqn), ("ftf", &p.ftf)] {
            let mut row = vec![p.label.clone(), name.to_string(), f(m.mean_violation())];
            row.extend(m.violation.iter().map(|v| f(*v)));
            row.extend([f(m.cost), opt(m.predictor_rmse), opt(m.selector_accuracy)]);
            long.push(row);
        }
    }
    write_rows(&run.path("results.csv"), &h, &long)?;

    // Paper-style layout: fault levels as columns, controller x metric as rows.
    let mut th = header(&["controller", "metric"]);
    th.extend(points.iter().map(|p| p.label.clone()));
    let mut table = Vec::new();
    for (name, pick) in [("DQN", 0usize), ("FTF", 1)] {
        let m = |p: &SweepPoint| if pick == 0 { p.dqn.clone() } else { p.ftf.clone() };
        for z in 0..n {
            let metric = if n == 1 { "theta".to_string() } else { format!("theta_{}", z + 1) };
            let mut row = vec![name.to_string(), metric];
            row.extend(points.iter().map(|p| format!("{:.2}", m(p).violation[z])));
            table.push(row);
        }
        let mut row = vec![name.to_string(), "cost".to_string()];
        row.extend(points.iter().map(|p| format!("{:.2}", m(p).cost)));
        table.push(row);
    }
    write_rows(&run.path("table.csv"), &th, &table)?;

    let per: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.label.clone(),
                f(p.dqn.mean_violation()),
                f(p.ftf.mean_violation()),
                f(p.dqn.cost),
                f(p.ftf.cost),
            ]
        })
        .collect();
    write_rows(&run.path("summary.csv"), &header(&[key, "dqn_theta", "ftf_theta", "dqn_cost", "ftf_cost"]), &per)?;
    write_plot_script(&run.path("plot.gp"), "summary.csv", recipe.name(), "mean violation rate (%)", &[(2, "DQN"), (3, "FTF")])?;

    let mut s = String::new();
    writeln!(s, "{}: {} setting(s), {n} zone(s), {} control steps each", recipe.name(), points.len(), cfg.ftf.control_steps).unwrap();
    for p in &points {
        let (d, t) = (p.dqn.mean_violation(), p.ftf.mean_violation());
        let red = if d > 0.0 { format!("{:.1}%", 100.0 * (d - t) / d) } else { "n/a".into() };
        writeln!(
            s,
            "{key}={}: DQN theta {d:.2}% cost {:.2} | FTF theta {t:.2}% cost {:.2} | reduction {red}",
            p.label, p.dqn.cost, p.ftf.cost
        )
        .unwrap();
    }
    run.finish(s)
}

pub(super) fn mal_ablation_recipe(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut run = Run::new(Recipe::MalAblation, cfg)?;
    let log = run.log()?;
    let heldout = run.heldout_log()?;
    let a = &cfg.mal;
    let p = &cfg.predictor;
    let k = p.window;
    let max_flow = run.plant.max_flow();
    let test = build_training_set(&heldout, &run.plant, k, a.test_interval, 0.0, &mut seeded(0))?.to_dataset(max_flow, p.offset_c)?;
    let test_series = ZoneSeries::from_records(&heldout, &run.plant);

    let mut sizes = a.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut prepared = Vec::new();
    let mut model_rows = Vec::new();
    for &size in &sizes {
        let part = &log[..size + k];
        let model = identify(&ZoneSeries::from_records(part, &run.plant), a.model.clone())?;
        model_rows.push(vec![size.to_string(), f(model.one_step_rmse(&test_series)?)]);
        let mut rng = seeded(run.seed(&format!("mal-labeled-{size}")));
        let labeled = build_training_set(part, &run.plant, k, 1, a.labeled_fault_probability, &mut rng)?.to_dataset(max_flow, p.offset_c)?;
        prepared.push((size, model, labeled));
    }
    write_rows(&run.path("abstract_model.csv"), &header(&["samples", "rmse"]), &model_rows)?;

    let mut jobs = Vec::new();
    for (i, &size) in sizes.iter().enumerate() {
        for s in 0..a.seeds {
            let seed = run.seed(&format!("mal-{size}-{s}"));
            for &strategy in &a.strategies {
                jobs.push((i, strategy, seed));
            }
        }
    }
    let plant = &run.plant;
    let cells = parallel_map(&jobs, cfg.workers(), |&(i, strategy, seed)| -> Result<AblationCell> {
        let (size, model, labeled) = &prepared[i];
        let pred = train_strategy(strategy, p, model, plant, labeled, &a.trainer, seed)?;
        Ok(AblationCell { strategy, samples: *size, seed, rmse: pred.rmse(&test)? })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    write_ablation_csv(&run.path("ablation.csv"), &cells)?;
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| vec![c.strategy.name().into(), c.samples.to_string(), c.seed.to_string(), f(c.rmse)])
        .collect();
    write_rows(&run.path("cells.csv"), &header(&["strategy", "samples", "seed", "rmse"]), &rows)?;
    let present: Vec<Strategy> = Strategy::ALL.into_iter().filter(|s| a.strategies.contains(s)).collect();
    let mut ch = header(&["samples"]);
    ch.extend(present.iter().map(|s| s.name().to_string()));
    let curves: Vec<Vec<String>> = sizes
        .iter()
        .map(|&size| {
            let mut row = vec![size.to_string()];
            row.extend(present.iter().map(|&s| opt(median_rmse(&cells, s, size))));
            row
        })
        .collect();
    write_rows(&run.path("curves.csv"), &ch, &curves)?;
    let cols: Vec<(usize, &str)> = present.iter().enumerate().map(|(i, s)| (i + 2, s.name())).collect();
    write_plot_script(&run.path("plot.gp"), "curves.csv", "predictor training strategies", "RMSE (C)", &cols)?;

    let mut s = String::new();
    writeln!(s, "ablation: median held-out RMSE (C) over {} seed(s)", a.seeds).unwrap();
    for (row, m) in curves.iter().zip(&model_rows) {
        writeln!(s, "{} samples: {} | abstract model {}", row[0], present.iter().zip(&row[1..]).map(|(st, v)| format!("{} {v}", st.name())).collect::<Vec<_>>().join(", "), m[1]).unwrap();
    }
    run.finish(s)
}
