use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sthawkes_core::io::{read_chain_csv, write_chain_csv, write_events, ChainDraws};
use sthawkes_core::sim::{uniform_catalog, Window};

fn sthawkes(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sthawkes"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synthetic_events(dir: &Path, n: usize) -> PathBuf {
    let catalog = uniform_catalog(n, 50.0, Window::new(0.0, 3.0, 0.0, 3.0), 17).unwrap();
    let path = dir.join("events.csv");
    write_events(&path, &catalog).unwrap();
    path
}

#[test]
fn fit_smoke_writes_chains_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_events(dir.path(), 500);
    let o = sthawkes(
        &[
            "fit",
            "--events",
            "events.csv",
            "--out",
            "run",
            "--chains",
            "2",
            "--iterations",
            "200",
            "--burn-in",
            "50",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    for k in 0..2 {
        let draws = read_chain_csv(&run.join(format!("chain_{k}.csv"))).unwrap();
        assert_eq!(draws.draws.len(), 150);
        assert!(run.join(format!("chain_{k}.json")).is_file());
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["chains"], 2);
    assert!(summary["parameters"]["xi0"]["rhat"].as_f64().unwrap() > 0.0);
    assert!(!summary["config_hash"].as_str().unwrap().is_empty());
}

#[test]
fn burn_in_not_below_iterations_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_events(dir.path(), 20);
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"fit": {"iterations": 100, "burn_in": 100}}"#,
    )
    .unwrap();
    let o = sthawkes(
        &["fit", "--config", "cfg.json", "--events", "events.csv"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("burn_in"), "{}", stderr(&o));
    assert!(!dir.path().join("out").join("chain_0.csv").exists());
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"seeds": 1}"#).unwrap();
    let o = sthawkes(&["simulate", "--config", "cfg.json"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn failing_chain_is_named() {
    let dir = tempfile::tempdir().unwrap();
    // coarse events whose region is missing from the table
    std::fs::write(
        dir.path().join("events.csv"),
        "event_id,t_weeks,lon,lat,region_id\na,1.0,,,r1\nb,2.0,,,r1\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("regions.geojson"),
        r#"{"type": "FeatureCollection", "features": [{"type": "Feature",
            "properties": {"region_id": "r1", "density": 2.0},
            "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[2,0],[0,0]]]}}]}"#,
    )
    .unwrap();
    let o = sthawkes(
        &[
            "fit",
            "--events",
            "events.csv",
            "--regions",
            "regions.geojson",
            "--chains",
            "1",
            "--iterations",
            "20",
            "--burn-in",
            "5",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("chain 0"), "{}", stderr(&o));
}

fn concentrated_chain(dir: &Path, sigma_x: f64) {
    std::fs::create_dir_all(dir).unwrap();
    let draws = ChainDraws {
        iterations: (0..10).collect(),
        draws: vec![[0.0019, 25.2, 1.001, sigma_x, 2.81]; 10],
        loglik: vec![0.0; 10],
    };
    write_chain_csv(&dir.join("chain_0.csv"), &draws).unwrap();
}

#[test]
fn lengthscales_report_miles() {
    let dir = tempfile::tempdir().unwrap();
    concentrated_chain(&dir.path().join("out"), 0.0798);
    std::fs::write(
        dir.path().join("counties.csv"),
        "name,lat,density\nLos Angeles County,34.20,2467.79\n",
    )
    .unwrap();
    let o = sthawkes(&["lengthscales", "--counties", "counties.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/lengthscales.json")).unwrap(),
    )
    .unwrap();
    let miles = rows[0]["median_miles"].as_f64().unwrap();
    assert!((miles - 5.05).abs() <= 0.05, "{miles}");
    assert!(stdout(&o).contains("Los Angeles County"));

    // with unit density the varying variant reports the same number
    std::fs::write(
        dir.path().join("unit.csv"),
        "name,lat,density\nSomewhere,34.20,1\n",
    )
    .unwrap();
    let a = sthawkes(&["lengthscales", "--counties", "unit.csv"], dir.path());
    let b = sthawkes(
        &[
            "lengthscales",
            "--counties",
            "unit.csv",
            "--variant",
            "varying",
        ],
        dir.path(),
    );
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn empty_county_list_gives_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    concentrated_chain(&dir.path().join("out"), 0.0798);
    std::fs::write(dir.path().join("counties.csv"), "name,lat,density\n").unwrap();
    let o = sthawkes(&["lengthscales", "--counties", "counties.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn lengthscales_without_chains_fail() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("counties.csv"), "name,lat,density\n").unwrap();
    let o = sthawkes(&["lengthscales", "--counties", "counties.csv"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("chain"), "{}", stderr(&o));
}

#[test]
fn commands_are_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"simulate": {"immigrant_rate": 1.0, "horizon": 50,
                  "window": {"lon_min": 0, "lon_max": 2, "lat_min": 0, "lat_max": 2}},
                  "fit": {"chains": 2, "iterations": 60, "burn_in": 20}}"#;
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    for out in ["a", "b"] {
        let o = sthawkes(
            &[
                "simulate", "--config", "cfg.json", "--seed", "9", "--out", out,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/events.csv"), read("b/events.csv"));

    let fit = |extra: &[&str]| {
        let mut args = vec![
            "fit",
            "--config",
            "cfg.json",
            "--events",
            "a/events.csv",
            "--seed",
            "4",
        ];
        args.extend_from_slice(extra);
        let o = sthawkes(&args, dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    };
    fit(&["--out", "fit1"]);
    fit(&["--out", "fit2", "--spawn"]);
    for k in 0..2 {
        assert_eq!(
            read(&format!("fit1/chain_{k}.csv")),
            read(&format!("fit2/chain_{k}.csv"))
        );
    }
}

#[test]
fn loglik_agrees_with_direct_loop() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_events(dir.path(), 300);
    let o = sthawkes(
        &[
            "loglik",
            "--events",
            "events.csv",
            "--mu0",
            "0.4",
            "--tau-t",
            "5",
            "--xi0",
            "0.6",
            "--sigma-x",
            "0.2",
            "--sigma-t",
            "1.5",
            "--workers",
            "3",
            "--naive",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let (a, b) = (
        v["loglik"].as_f64().unwrap(),
        v["naive_loglik"].as_f64().unwrap(),
    );
    assert!(((a - b) / b).abs() < 1e-10, "{a} vs {b}");
    assert_eq!(v["workers"], 3);

    let missing = sthawkes(
        &["loglik", "--events", "events.csv", "--mu0", "0.4"],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = sthawkes(
        &[
            "bench",
            "--sizes",
            "200,400",
            "--worker-counts",
            "1,2",
            "--repeats",
            "1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/bench.csv")).unwrap();
    assert!(csv.starts_with("N,G,precision,variant,seconds_median,seconds_min"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn simulate_with_regions_writes_coarse_catalog() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("regions.geojson"),
        r#"{"type": "FeatureCollection", "features": [{"type": "Feature",
            "properties": {"region_id": "all"},
            "geometry": {"type": "Polygon", "coordinates": [[[-50,-50],[60,-50],[60,60],[-50,60],[-50,-50]]]}}]}"#,
    )
    .unwrap();
    std::fs::write(dir.path().join("dens.csv"), "region_id,density\nall,3.5\n").unwrap();
    let cfg = r#"{"simulate": {"immigrant_rate": 1.0, "horizon": 30,
                  "window": {"lon_min": 0, "lon_max": 2, "lat_min": 0, "lat_max": 2}}}"#;
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let o = sthawkes(
        &[
            "simulate",
            "--config",
            "cfg.json",
            "--regions",
            "regions.geojson",
            "--densities",
            "dens.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/events.csv")).unwrap();
    assert!(
        text.lines().skip(1).all(|l| l.ends_with(",,,all")),
        "{text}"
    );
    assert!(dir.path().join("out/events_exact.csv").is_file());
}
