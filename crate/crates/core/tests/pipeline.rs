use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hvacft_core::harness::{run_recipe, sha256_file, ExperimentConfig, Manifest, Recipe, MANIFEST};
use hvacft_core::Error;

fn smoke(out: &Path) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn run_all(cfg: &ExperimentConfig) {
    for r in Recipe::ALL {
        run_recipe(r, cfg).unwrap_or_else(|e| panic!("{r}: {e}"));
    }
}

/// Every file under `root` except manifests, keyed by relative path.
fn outputs(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for r in Recipe::ALL {
        let dir = root.join(r.name());
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.file_name().unwrap() != MANIFEST {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn smoke_pipeline_is_reproducible_and_traceable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all(&smoke(a.path()));
    run_all(&smoke(b.path()));

    let (fa, fb) = (outputs(a.path()), outputs(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{} differs between identical runs", name.display());
    }

    for r in Recipe::ALL {
        let dir = a.path().join(r.name());
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(m.recipe, r.name());
        assert!(!m.outputs.is_empty());
        for (file, hash) in &m.outputs {
            assert_eq!(&sha256_file(&dir.join(file)).unwrap(), hash, "{r}/{file}");
        }
    }
}

/// θ recounted straight from an episode CSV, without the library's readers.
fn recount_theta(path: &Path, lo: f64, hi: f64) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "T_true").unwrap();
    let (mut out, mut n) = (0usize, 0usize);
    for line in lines {
        let t: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        n += 1;
        if t < lo || t > hi {
            out += 1;
        }
    }
    100.0 * out as f64 / n as f64
}

#[test]
fn reported_violation_matches_episode_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    for r in &Recipe::ALL[..5] {
        run_recipe(*r, &cfg).unwrap();
    }
    let sweep = dir.path().join("eval-iid-sweep");
    let results = fs::read_to_string(sweep.join("results.csv")).unwrap();
    let (lo, hi) = (cfg.ftf.reward.t_low, cfg.ftf.reward.t_high);
    let mut checked = 0;
    for line in results.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let reported: f64 = f[3].parse().unwrap();
        let theta = recount_theta(&sweep.join(format!("episode_{}_{}.csv", f[1], f[0])), lo, hi);
        assert!((theta - reported).abs() < 1e-5, "{line}: recount {theta}");
        checked += 1;
    }
    assert_eq!(checked, 2 * cfg.sweep.iid_probabilities.len());
}

#[test]
fn empty_sweep_is_a_single_clean_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    for r in &Recipe::ALL[..4] {
        run_recipe(*r, &cfg).unwrap();
    }
    cfg.sweep.iid_probabilities.clear();
    run_recipe(Recipe::EvalIidSweep, &cfg).unwrap();
    let results = fs::read_to_string(dir.path().join("eval-iid-sweep/results.csv")).unwrap();
    let keys: Vec<&str> = results.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(keys, vec!["clean", "clean"]);
}

#[test]
fn missing_prerequisite_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_recipe(Recipe::TrainSelector, &smoke(dir.path())).unwrap_err();
    match err {
        Error::MissingPrerequisite { recipe, .. } => assert_eq!(recipe, "collect-onoff"),
        other => panic!("unexpected error {other}"),
    }
}
