use std::path::PathBuf;
use std::process::{Command, Output};

fn sketchagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sketchagg")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sketchagg-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

const MEDIAN: &[&str] =
    &["median-sim", "--reporters", "60", "--values-per-reporter", "2", "--domain", "0:1000", "--epsilon", "0.05", "--delta", "0.05", "--trials", "3"];

#[test]
fn median_sim_writes_csv() {
    let out = scratch("median.csv");
    let mut args = MEDIAN.to_vec();
    args.extend(["--dp-epsilon", "0.5", "--seed", "4", "--out", out.to_str().unwrap()]);
    let o = sketchagg(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("trial,true_median,estimate,abs_err,rel_err,iterations,dp_epsilon"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ends_with(",10,0.5")));
    assert!(String::from_utf8_lossy(&o.stdout).contains("scenario = median"));

    // Same seed, same bytes.
    let again = scratch("median-again.csv");
    let mut args = MEDIAN.to_vec();
    args.extend(["--dp-epsilon", "0.5", "--seed", "4", "--out", again.to_str().unwrap()]);
    assert!(sketchagg(&args).status.success());
    assert_eq!(csv, std::fs::read_to_string(&again).unwrap());
}

#[test]
fn config_file_then_flags() {
    let cfg = scratch("median.toml");
    std::fs::write(&cfg, "scenario = \"median\"\nreporters = 20\ntrials = 2\ncrypto = false\nseed = 8\n").unwrap();
    let o = sketchagg(&["median-sim", "--config", cfg.to_str().unwrap(), "--trials", "4", "--print-config"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("reporters = 20"));
    assert!(text.contains("trials = 4"));
    assert!(text.contains("seed = 8"));

    let o = sketchagg(&["median-sim", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 3);

    std::fs::write(&cfg, "scenario = \"location\"\n").unwrap();
    let o = sketchagg(&["median-sim", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("config stage failed"));

    std::fs::write(&cfg, "reporterz = 3\n").unwrap();
    let o = sketchagg(&["median-sim", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("config stage failed"));
}

#[test]
fn failures_name_the_stage() {
    let o = sketchagg(&["median-sim", "--values-file", "/nonexistent/x.csv", "--no-crypto"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("generate stage failed"));

    let o = sketchagg(&["recommender-sim", "--dropout-rate", "1.5"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("config stage failed"));

    let o = sketchagg(&["median-sim", "--domain", "9:3"]);
    assert!(!o.status.success());
}

#[test]
fn bench_bytes_table() {
    let out = scratch("bytes.csv");
    let o = sketchagg(&["bench-bytes", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("19584"));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.contains("\n100,3200,0.01,4896,19584\n"));
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn keygen_is_reproducible() {
    let a = sketchagg(&["keygen", "--seed", "5", "--count", "3"]);
    let b = sketchagg(&["keygen", "--seed", "5", "--count", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout);
    assert_eq!(text.lines().count(), 4);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[1], row[2].len(), row[3].len()), ("ristretto255", 64, 64));

    let p = sketchagg(&["keygen", "--seed", "5", "--group", "p224"]);
    let text = String::from_utf8_lossy(&p.stdout);
    assert_eq!(text.lines().nth(1).unwrap().split(',').nth(3).unwrap().len(), 58);

    assert!(!sketchagg(&["keygen"]).status.success());
}

#[test]
fn small_scenarios_run() {
    let o = sketchagg(&["recommender-sim", "--users", "30", "--programs", "20", "--group-size", "10", "--dropout-rate", "0.2", "--history-len", "3", "--seed", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("trial,online_users"));

    let o = sketchagg(&["location-sim", "--entities", "15", "--grid", "8", "--slots", "3", "--group-size", "5", "--top-k", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 4);
}
