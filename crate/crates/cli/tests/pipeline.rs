use std::fs;
use std::path::Path;

use hetode::TimeSeries;
use hetode_cli::config::{DataSource, RunConfig};
use hetode_cli::dataset::{parse_csv, series_to_csv, CsvData};
use hetode_cli::pipeline::{read_draws, run_pipeline};
use hetode_cli::{LikelihoodMode, Stage};
use proptest::prelude::*;

fn quick(out: &Path, mode: LikelihoodMode) -> RunConfig {
    RunConfig {
        mode,
        iterations: 3000,
        burn_in: 500,
        band_draws: 200,
        band_points: 50,
        out: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn manifest_value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_owned))
}

#[test]
fn hetgp_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path(), LikelihoodMode::Hetgp);
    let art = run_pipeline(&cfg).unwrap();
    for name in [
        "data.csv",
        "draws.csv",
        "sigma.csv",
        "diagnostics.txt",
        "band.csv",
        "kde_r.csv",
        "kde_K.csv",
        "manifest.txt",
    ] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    assert_eq!(art.output.rhat.len(), 2);
    assert!(art.output.rhat.iter().all(|r| *r < 1.1), "{:?}", art.output.rhat);

    let (names, rows) = read_draws(&dir.path().join("draws.csv")).unwrap();
    assert_eq!(names, ["r", "K"]);
    assert_eq!(rows.len(), 4 * 2500);

    let sigma = fs::read_to_string(dir.path().join("sigma.csv")).unwrap();
    assert_eq!(sigma.lines().count(), 101);
    let manifest = fs::read_to_string(&art.manifest).unwrap();
    assert_eq!(manifest_value(&manifest, "status").as_deref(), Some("ok"));
}

#[test]
fn homoscedastic_draws_carry_sigma() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&quick(dir.path(), LikelihoodMode::Homoscedastic)).unwrap();
    let (names, _) = read_draws(&dir.path().join("draws.csv")).unwrap();
    assert_eq!(names, ["r", "K", "sigma"]);
    assert!(dir.path().join("kde_sigma.csv").is_file());
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = quick(a.path(), LikelihoodMode::TrueSigma);
    cfg.iterations = 1500;
    run_pipeline(&cfg).unwrap();
    cfg.out = b.path().to_path_buf();
    run_pipeline(&cfg).unwrap();
    for name in ["data.csv", "draws.csv", "sigma.csv", "band.csv", "diagnostics.txt"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn manifest_lists_every_tunable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path(), LikelihoodMode::TrueSigma);
    let art = run_pipeline(&RunConfig { iterations: 1200, ..cfg.clone() }).unwrap();
    let manifest = fs::read_to_string(art.manifest).unwrap();
    for (key, value) in cfg.to_pairs() {
        if key == "mcmc.iterations" {
            continue;
        }
        assert_eq!(manifest_value(&manifest, &key), Some(value), "{key}");
    }
    assert!(manifest_value(&manifest, "seed.mcmc").is_some());

    let mut reloaded = RunConfig::default();
    let pairs: Vec<(String, String)> = manifest
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .filter(|(k, _)| cfg.to_pairs().iter().any(|(c, _)| c == k))
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect();
    reloaded.apply(&pairs).unwrap();
    assert_eq!(reloaded.to_pairs(), RunConfig { iterations: 1200, ..cfg }.to_pairs());
}

#[test]
fn invalid_prior_bounds_fail_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let mut cfg = quick(&out, LikelihoodMode::Hetgp);
    let err = cfg.set("prior.K", "uniform(100, 10)").unwrap_err();
    assert_eq!(err.stage, Stage::Config);

    cfg.priors.push(hetode::ParameterPrior::uniform("K", 100.0, 10.0));
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Config);
    assert!(!out.exists());
}

#[test]
fn failure_leaves_a_marked_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path(), LikelihoodMode::Hetgp);
    cfg.data = DataSource::File(dir.path().join("missing.csv"));
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Data);
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest_value(&manifest, "status").as_deref(), Some("failed"));
    assert_eq!(manifest_value(&manifest, "failed_stage").as_deref(), Some("data"));
}

#[test]
fn file_source_round_trips_through_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = quick(&dir.path().join("a"), LikelihoodMode::Homoscedastic);
    run_pipeline(&RunConfig { iterations: 1200, ..first.clone() }).unwrap();
    let data_path = dir.path().join("a").join("data.csv");
    let second = RunConfig {
        data: DataSource::File(data_path.clone()),
        iterations: 1200,
        out: dir.path().join("b"),
        ..first
    };
    run_pipeline(&second).unwrap();
    assert_eq!(
        fs::read(&data_path).unwrap(),
        fs::read(dir.path().join("b").join("data.csv")).unwrap()
    );
}

proptest! {
    #[test]
    fn series_csv_is_exact(
        points in prop::collection::vec((0.0f64..1e4, -1e6f64..1e6, 1usize..3), 1..40)
    ) {
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut t = 0.0;
        for (dt, y, reps) in points {
            t += dt + 1e-3;
            for k in 0..reps {
                times.push(t);
                values.push(y * (k + 1) as f64 / 3.0);
            }
        }
        let series = TimeSeries::with_replicates(times, values).unwrap();
        match parse_csv(&series_to_csv(&series)).unwrap() {
            CsvData::Series(back) => {
                prop_assert_eq!(back.times(), series.times());
                prop_assert_eq!(back.values(), series.values());
            }
            CsvData::Summary(_) => prop_assert!(false, "parsed as summary"),
        }
    }
}
