use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_spafl");

const SMALL: &[&str] = &[
    "--clients",
    "6",
    "--clients-per-round",
    "2",
    "--synth-per-class",
    "30",
    "--synth-dim",
    "16",
    "--hidden",
    "8",
    "--local-epochs",
    "1",
];

fn spafl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    let o = spafl(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn csv_rows(out: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(out.join("metrics.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn summary(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn zero_rounds_write_header_only() {
    let dir = tempfile::tempdir().unwrap();
    run_small(dir.path(), &["--rounds", "0"]);
    let rows = csv_rows(dir.path());
    assert_eq!(rows.len(), 1);
    assert_eq!(
        rows[0].join(","),
        "round,mean_acc,std_acc,overall_density,per_layer_density,cum_comm_bits,cum_flops"
    );
    let s = summary(dir.path());
    assert!(s["best_mean_acc"].is_null());
    assert_eq!(s["total_comm_bits"], 0);
}

#[test]
fn local_only_never_communicates() {
    let dir = tempfile::tempdir().unwrap();
    run_small(dir.path(), &["--rounds", "4", "--strategy", "local_only"]);
    let rows = csv_rows(dir.path());
    assert_eq!(rows.len(), 5);
    assert!(rows[1..].iter().all(|r| r[5] == "0"));
}

#[test]
fn same_seed_gives_identical_files_for_any_worker_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_small(a.path(), &["--rounds", "3", "--seed", "9"]);
    run_small(b.path(), &["--rounds", "3", "--seed", "9", "--workers", "3"]);
    let ma = fs::read(a.path().join("metrics.csv")).unwrap();
    assert_eq!(ma, fs::read(b.path().join("metrics.csv")).unwrap());
    let (mut sa, mut sb) = (summary(a.path()), summary(b.path()));
    sa["config"]["out_dir"] = serde_json::Value::Null;
    sb["config"]["out_dir"] = serde_json::Value::Null;
    assert_eq!(sa, sb);
}

#[test]
fn summary_matches_metrics_column() {
    let dir = tempfile::tempdir().unwrap();
    run_small(dir.path(), &["--rounds", "6", "--eval-every", "2"]);
    let rows = csv_rows(dir.path());
    assert_eq!(rows.len(), 1 + 3);
    let best = rows[1..].iter().map(|r| r[1].parse::<f64>().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let s = summary(dir.path());
    assert_eq!(s["best_mean_acc"].as_f64().unwrap(), best);
    assert_eq!(s["seed"], 0);
    assert_eq!(s["config"]["strategy"], "spafl");
    let last = rows.last().unwrap();
    assert_eq!(s["total_comm_bits"].as_u64().unwrap().to_string(), last[5]);
    assert_eq!(s["total_flops"].as_u64().unwrap().to_string(), last[6]);
    // per-layer densities: one entry per prunable layer
    assert_eq!(last[4].split(';').count(), 2);
}

#[test]
fn masks_are_dumped_as_graymaps() {
    let dir = tempfile::tempdir().unwrap();
    run_small(dir.path(), &["--rounds", "2", "--dump-masks-every", "1", "--dump-clients", "0,3"]);
    for (c, l, r) in [(0, 0, 1), (0, 1, 2), (3, 0, 2)] {
        let text = fs::read_to_string(dir.path().join(format!("mask_c{c}_l{l}_r{r}.pgm"))).unwrap();
        assert!(text.starts_with("P2\n"));
    }
}

#[test]
fn config_file_and_flags_merge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"rounds": 2, "strategy": "fedavg", "seed": 5}"#).unwrap();
    let out = dir.path().join("out");
    run_small(&out, &["--config", cfg.to_str().unwrap(), "--seed", "6"]);
    let s = summary(&out);
    assert_eq!(s["seed"], 6);
    assert_eq!(s["strategy"], "fedavg");
    assert_eq!(csv_rows(&out).len(), 3);

    fs::write(&cfg, r#"{"rounds": 2, "learning_rate": 0.1}"#).unwrap();
    let o = spafl(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn invalid_settings_fail_with_messages() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = spafl(&["run", "--out-dir", out, "--clients-per-round", "20", "--clients", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("K ≤ N required"));

    let o = spafl(&["run", "--out-dir", out, "--strategy", "heterofl"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("heterofl") && err.contains("unsupported"), "{err}");
}

#[test]
fn verify_comm_prints_table_totals() {
    let o = spafl(&["verify-comm", "--preset", "all"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("fmnist: K=10 tau_num=580 T=500 bits=185600000 gbit=0.1856"));
    assert!(text.contains("cifar10: K=10 tau_num=1418 T=500 bits=453760000"));
    assert!(text.contains("cifar100: K=10 tau_num=4800 T=1500 bits=4608000000 gbit=4.6080"));
    let one = spafl(&["verify-comm", "--preset", "fmnist"]);
    assert_eq!(String::from_utf8_lossy(&one.stdout).lines().count(), 1);
}
