use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SHORT: &[&str] = &[
    "--set",
    "episodes=12",
    "--set",
    "estimator_hidden=8",
    "--set",
    "dist_epochs=6,12",
    "--set",
    "env.length=8",
    "--set",
    "env.max_steps=16",
];

fn ssrs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssrs")).args(args).output().expect("spawn ssrs")
}

fn ok(args: &[&str]) -> Output {
    let out = ssrs(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn train(dir: &Path, seeds: &str, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["train", "--seed", seeds, "--out", out];
    args.extend_from_slice(SHORT);
    args.extend_from_slice(extra);
    ssrs(&args)
}

#[test]
fn same_seed_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(train(&a, "3", &[]).status.success());
    assert!(train(&b, "3", &[]).status.success());
    for file in ["curve.csv", "qtable.txt", "estimator.txt", "buffer.bin", "snapshots.csv", "config.txt"] {
        let (x, y) = (fs::read(a.join("seed-3").join(file)).unwrap(), fs::read(b.join("seed-3").join(file)).unwrap());
        assert!(x == y, "{file} differs between identical runs");
    }
    assert_eq!(fs::read(a.join("aggregate.csv")).unwrap(), fs::read(b.join("aggregate.csv")).unwrap());
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert!(train(&dir, "0", &[]).status.success());
    let again = train(&dir, "0", &[]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert!(train(&dir, "0", &["--force"]).status.success());
}

#[test]
fn empty_seed_list_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train(&tmp.path().join("run"), " , ", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed list is empty"));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn bad_override_reports_key() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train(&tmp.path().join("run"), "0", &["--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn aggregate_matches_seed_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert!(train(&dir, "0-2", &[]).status.success());
    let best = |seed: u64| -> Vec<f64> {
        let mut r = csv::Reader::from_path(dir.join(format!("seed-{seed}/curve.csv"))).unwrap();
        r.records().map(|rec| rec.unwrap()[2].parse().unwrap()).collect()
    };
    let curves: Vec<Vec<f64>> = (0..3).map(best).collect();
    let mut r = csv::Reader::from_path(dir.join("aggregate.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 12);
    for (i, row) in rows.iter().enumerate() {
        let mean: f64 = row[1].parse().unwrap();
        let std: f64 = row[2].parse().unwrap();
        let xs: Vec<f64> = curves.iter().map(|c| c[i]).collect();
        let m = xs.iter().sum::<f64>() / 3.0;
        let s = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 3.0).sqrt();
        assert!((mean - m).abs() < 1e-12 && (std - s).abs() < 1e-12, "row {i}");
    }
}

#[test]
fn gradcheck_exit_code() {
    let out = ok(&["gradcheck", "--networks", "2", "--seed", "5"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches(" ok").count(), 3, "{text}");
}

#[test]
fn compare_needs_two_complete_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(train(&a, "0", &[]).status.success());
    assert!(train(&b, "0", &["--set", "shaping=off"]).status.success());
    let csv_out = tmp.path().join("cmp.csv");
    let p = |x: &Path| x.to_str().unwrap().to_string();

    let one = ssrs(&["compare", &p(&a), "--out", &p(&csv_out)]);
    assert_eq!(one.status.code(), Some(1));

    let missing = tmp.path().join("missing");
    let bad = ssrs(&["compare", &p(&a), &p(&missing), "--out", &p(&csv_out)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("missing"));

    ok(&["compare", &p(&a), &p(&b), "--out", &p(&csv_out)]);
    let text = fs::read_to_string(&csv_out).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn rollout_augment_roundtrip_preserves_actions_and_rewards() {
    let tmp = tempfile::tempdir().unwrap();
    let traj = tmp.path().join("traj.csv");
    let t = traj.to_str().unwrap();
    ok(&["rollout", "--seed", "1", "--out", t, "--set", "env.length=8", "--set", "env.max_steps=16"]);
    let read = |p: &Path| -> Vec<Vec<String>> {
        let mut r = csv::Reader::from_path(p).unwrap();
        r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
    };
    let original = read(&traj);
    for kind in ["gaussian", "cutout", "smooth", "scale", "translate", "flip", "double_entropy"] {
        let out = tmp.path().join(format!("{kind}.csv"));
        ok(&["augment-check", "--input", t, "--kind", kind, "--seed", "2", "--out", out.to_str().unwrap()]);
        let aug = read(&out);
        assert_eq!(aug.len(), original.len());
        let width = original[0].len();
        for (x, y) in original.iter().zip(&aug) {
            // action one-hot and reward are the trailing columns
            assert_eq!(x[width - 3..], y[width - 3..], "{kind}");
        }
    }
}

#[test]
fn run_artifacts_feed_analysis_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert!(train(&dir, "0", &["--set", "checkpoint_interval=6"]).status.success());
    let seed = dir.join("seed-0");
    assert!(seed.join("checkpoints/ep-000006/buffer.bin").exists());
    assert!(seed.join("checkpoints/ep-000012/qtable.txt").exists());
    let s = seed.to_str().unwrap();

    let eval = tmp.path().join("eval.csv");
    ok(&["eval", "--run", s, "--episodes", "3", "--out", eval.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(&eval).unwrap().lines().count(), 4);

    let dist = tmp.path().join("dist.csv");
    ok(&["dist", "--run", s, "--bins", "4", "--out", dist.to_str().unwrap()]);
    let rows: Vec<String> = fs::read_to_string(&dist).unwrap().lines().skip(1).map(str::to_string).collect();
    for epoch in ["6", "12"] {
        let total: f64 = rows
            .iter()
            .filter(|r| r.split(',').next() == Some(epoch))
            .map(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "epoch {epoch} sums to {total}");
    }

    let cons = tmp.path().join("cons");
    ok(&["consensus", "--run", s, "--runs", "5", "--k", "2", "--max-trajectories", "6", "--out", cons.to_str().unwrap()]);
    let text = fs::read_to_string(cons.join("consensus.csv")).unwrap();
    let grid: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(grid.len(), 6);
    for i in 0..6 {
        assert_eq!(grid[i][i], 1.0);
        for j in 0..6 {
            assert_eq!(grid[i][j], grid[j][i]);
            assert!((0.0..=1.0).contains(&grid[i][j]));
        }
    }
}
