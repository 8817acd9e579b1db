use std::path::Path;
use std::process::{Command, Output};

use lifsim::stimulus::{self, SpikeTrain};

fn lifsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lifsim")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn full_train(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("full.txt");
    let train = SpikeTrain::from_events(8, 100, (0..100).flat_map(|t| (0..8).map(move |c| (t, c)))).unwrap();
    stimulus::save(&train, &p).unwrap();
    p
}

#[test]
fn gen_is_deterministic_and_reports_densities() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for out in [&a, &b] {
        let o = lifsim(&["gen", "--preset", "nmnist", "--seed", "11", "--out", path(out)]);
        assert!(o.status.success());
        let text = stdout(&o);
        let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert!((row[0] - 0.937).abs() <= 0.06, "{text}");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.contains("generator=ChaCha8Rng::seed_from_u64 seed=11"));
    let c = dir.path().join("c.txt");
    lifsim(&["gen", "--preset", "nmnist", "--seed", "12", "--out", path(&c)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn gen_empty_profile_then_characterize() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.txt");
    let o = lifsim(&["gen", "--temporal", "0", "--input", "0", "--seed", "0", "--out", path(&p)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stimulus::load(&p).unwrap().is_empty());
    let o = lifsim(&["characterize", path(&p)]);
    assert_eq!(stdout(&o), "temporal_density,input_density\n0,0\n");
}

#[test]
fn characterize_counts_active_steps_and_channels() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.txt");
    // 2 of 4 steps active, with 1 and 3 of 4 channels: (0.25 + 0.75) / 2.
    stimulus::save(&SpikeTrain::from_events(4, 4, [(0, 2), (3, 0), (3, 1), (3, 3)]).unwrap(), &p).unwrap();
    assert_eq!(stdout(&lifsim(&["characterize", path(&p)])), "temporal_density,input_density\n0.5,0.5\n");
}

#[test]
fn forbidden_combination_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = full_train(dir.path());
    let o = lifsim(&["run", path(&p), "--mode", "clock", "--io", "aer"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert_eq!(lifsim(&["run", path(&p), "--mode", "sideways"]).status.code(), Some(2));
    assert_eq!(lifsim(&["run", "/no/such/train"]).status.code(), Some(1));
}

#[test]
fn full_density_aer_energy() {
    // Per step: LUT read, multiply, 8 memory reads, 8 adds, compare,
    // 3 register writes (fires every step), 3 + 2*8 control transitions,
    // plus the fixed per-step burst.
    let per_step = 2.0 + 8.0 + 8.0 * 3.0 + 8.0 * 2.0 + 1.0 + 3.0 + 19.0 * 4.0 + 12.0;
    let dir = tempfile::tempdir().unwrap();
    let p = full_train(dir.path());
    let o = lifsim(&["run", path(&p), "--mode", "event", "--io", "aer"]);
    let text = stdout(&o);
    let f: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(f[..4], ["event-aer-mult", "event", "mult", "aer"]);
    assert_eq!(f[8], "1800");
    assert_eq!(f[9].parse::<f64>().unwrap(), 100.0 * per_step);
    assert_eq!(f[9], "14200");
    assert_eq!((f[11], f[12]), ("1.8", "1.8"));
}

#[test]
fn cost_file_changes_latency() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.txt");
    stimulus::save(&SpikeTrain::empty(8, 100), &p).unwrap();
    let costs = dir.path().join("costs.cfg");
    std::fs::write(&costs, "# slower idle\nclk_idle_step = 5\n").unwrap();
    let text = stdout(&lifsim(&["run", path(&p), "--costs", path(&costs)]));
    assert_eq!(text.lines().nth(1).unwrap().split(',').nth(8), Some("500"));
    std::fs::write(&costs, "no_such_key = 1\n").unwrap();
    assert_eq!(lifsim(&["run", path(&p), "--costs", path(&costs)]).status.code(), Some(1));
}

#[test]
fn single_point_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let csv = stdout(&lifsim(&["sweep", "--temporal", "0.3", "--input", "0.5", "--trials", "1", "--seed", "9"]));
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 12);
    let seed: u64 = rows[0][7].parse().unwrap();
    let train = stimulus::generate(stimulus::DensityProfile::new(0.3, 0.5).unwrap(), 8, 100, seed).unwrap();
    let p = dir.path().join("t.txt");
    stimulus::save(&train, &p).unwrap();
    let flags: [&[&str]; 6] = [
        &["--mode", "clock"],
        &["--mode", "clock", "--decay", "shift"],
        &["--mode", "event"],
        &["--mode", "event", "--decay", "shift"],
        &["--mode", "event", "--io", "aer"],
        &["--mode", "event", "--io", "aer", "--decay", "shift"],
    ];
    for (row, f) in rows.iter().zip(flags) {
        let mut args = vec!["run", path(&p)];
        args.extend_from_slice(f);
        let out = stdout(&lifsim(&args));
        let single: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(single[0], row[0]);
        assert_eq!(single[8..], row[8..], "{}", row[0]);
    }
}

#[test]
fn sweep_schema_is_pinned() {
    let golden = include_str!("golden/small_sweep.csv");
    let o = lifsim(&["sweep", "--temporal", "0.1,0.5,1", "--input", "0.25,1", "--trials", "2", "--seed", "0"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), golden);
    assert_eq!(golden.lines().next().unwrap(), lifsim::cli::CSV_HEADER);
}

#[test]
fn sweep_summary_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let sum = dir.path().join("sum.csv");
    let o = lifsim(&[
        "sweep", "--temporal", "0.5", "--input", "0.5,1", "--trials", "3", "--configs", "event-aer-mult,clock-serial-mult",
        "--out", path(&out), "--summary", path(&sum),
    ]);
    assert!(o.status.success());
    let summary = std::fs::read_to_string(&sum).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], lifsim::cli::SUMMARY_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[1].starts_with("event-aer-mult,event,mult,aer,0.5,0.5,3,"));
    let rows = std::fs::read_to_string(&out).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * (3 * 2 + 2));
    assert_eq!(lifsim(&["sweep", "--configs", "clock-aer-mult"]).status.code(), Some(2));
}

#[test]
fn verify_default_passes() {
    let o = lifsim(&["verify", "--trials", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    let max: i32 = text
        .lines()
        .find_map(|l| l.strip_prefix("max_divergence="))
        .unwrap()
        .parse()
        .unwrap();
    let bound = lifsim::neuron::divergence::FROZEN_BOUNDS.iter().map(|b| b.3).max().unwrap();
    assert!(max <= bound);
}
