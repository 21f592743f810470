use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dppsel::features::{load_features, load_scores, norm};
use dppsel::select::{select, Direction, SelectionRequest, Strategy};
use dppsel::sketch::{save_gradients, LayerGradient};

fn dppsel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dppsel"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dppsel(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn toy_features(dir: &Path, n: &str) {
    ok(dir, &["toy", "-n", n, "--redundancy", "0.5", "--seed", "1", "-o", "toy"]);
    ok(dir, &["sketch", "--grads", "toy", "--r", "32", "--dout", "1024", "--normalize", "-o", "toy.dsf"]);
}

#[test]
fn synth_writes_features_and_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let args = ["synth", "--kind", "hypersphere", "-n", "1000", "-d", "512", "--seed", "7", "-o", "ref.dsf"];
    assert_eq!(ok(d, &args), "");
    let m = load_features(d.join("ref.dsf")).unwrap();
    assert_eq!((m.n_rows(), m.n_cols()), (1000, 512));
    assert!(d.join("ref.dsf.meta.json").exists());
    assert!(d.join("ref.dsf.config.json").exists());

    let first = fs::read(d.join("ref.dsf")).unwrap();
    ok(d, &args);
    assert_eq!(first, fs::read(d.join("ref.dsf")).unwrap());
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = dppsel(d, &["synth", "--kind", "hypersphere", "-d", "8", "-o", "x.dsf"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = dppsel(d, &["synth", "--kind", "duplicated", "-n", "10", "-d", "8", "-o", "x.dsf"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dup-factor"));
}

#[test]
fn missing_input_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dppsel(tmp.path(), &["diversity", "--features", "absent.dsf"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn sketch_toy_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    toy_features(d, "100");
    let m = load_features(d.join("toy.dsf")).unwrap();
    assert_eq!((m.n_rows(), m.n_cols()), (100, 1024));
    for row in m.rows() {
        assert!((norm(row) - 1.0).abs() < 1e-6);
    }

    let first = fs::read(d.join("toy.dsf")).unwrap();
    ok(d, &["sketch", "--grads", "toy/manifest.txt", "--r", "32", "--dout", "1024", "--normalize", "-o", "toy.dsf"]);
    assert_eq!(first, fs::read(d.join("toy.dsf")).unwrap());
}

#[test]
fn sketch_names_the_inconsistent_example() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::create_dir(d.join("g")).unwrap();
    let grad = |rows, cols| vec![LayerGradient::new("W", rows, cols, vec![0.5; rows * cols]).unwrap()];
    save_gradients(&grad(3, 4), d.join("g/a.dgf")).unwrap();
    save_gradients(&grad(3, 4), d.join("g/b.dgf")).unwrap();
    save_gradients(&grad(4, 3), d.join("g/c.dgf")).unwrap();
    let out = dppsel(d, &["sketch", "--grads", "g", "--r", "2", "--dout", "8", "-o", "x.dsf"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("c.dgf"));
}

#[test]
fn select_dpp_writes_a_full_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    toy_features(d, "100");
    let stdout = ok(
        d,
        &["select", "--features", "toy.dsf", "--strategy", "dpp", "--gamma", "1", "--lambda", "0", "--budget", "20%", "--trace", "t.csv", "--indices", "i.txt", "--out", "s.json"],
    );
    assert_eq!(stdout.trim(), "20");
    let trace = fs::read_to_string(d.join("t.csv")).unwrap();
    assert_eq!(trace.lines().count(), 21);
    assert_eq!(fs::read_to_string(d.join("i.txt")).unwrap().lines().count(), 20);
}

#[test]
fn select_rank_delegates_to_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    toy_features(d, "60");
    ok(
        d,
        &["select", "--features", "toy.dsf", "--scores", "toy/scores.csv", "--strategy", "rank", "--rank-col", "n_output_tokens", "--direction", "desc", "--budget", "10", "--indices", "i.txt", "--out", "s.json"],
    );
    let got: Vec<usize> = fs::read_to_string(d.join("i.txt"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let x = load_features(d.join("toy.dsf")).unwrap();
    let scores = load_scores(d.join("toy/scores.csv"), 60).unwrap();
    let want = select(
        &SelectionRequest::new(&x, Strategy::rank("n_output_tokens", Direction::Desc), 10).with_scores(&scores),
    )
    .unwrap();
    assert_eq!(got, want.indices);
}

#[test]
fn select_rejects_mismatched_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    toy_features(d, "30");
    let out = dppsel(d, &["select", "--features", "toy.dsf", "--strategy", "dpp", "--tau", "0.5", "--budget", "5", "--out", "s.json"]);
    assert_eq!(code(&out), 2);

    let out = dppsel(
        d,
        &["select", "--features", "toy.dsf", "--scores", "toy/scores.csv", "--strategy", "dpp", "--lambda", "1.0", "--quality-col", "ifd", "--budget", "5", "--out", "s.json"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rank"));
    assert!(!d.join("s.json").exists());
}

#[test]
fn diversity_headline_and_curve_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--kind", "hypersphere", "-n", "200", "-d", "32", "--seed", "3", "-o", "fresh.dsf"]);
    ok(d, &["synth", "--kind", "duplicated", "-n", "200", "-d", "32", "--dup-factor", "4", "--seed", "3", "-o", "dup.dsf"]);

    let own = ok(d, &["diversity", "--features", "fresh.dsf", "--ref", "file", "--ref-file", "fresh.dsf"]);
    assert_eq!(own, "0.000000\n");

    let fresh: f64 = ok(d, &["diversity", "--features", "fresh.dsf", "--ref-dim", "32", "--out-curve", "c.csv"])
        .trim()
        .parse()
        .unwrap();
    let dup: f64 = ok(d, &["diversity", "--features", "dup.dsf", "--ref-dim", "32"]).trim().parse().unwrap();
    assert!(dup > fresh, "{dup} vs {fresh}");

    let curve = fs::read_to_string(d.join("c.csv")).unwrap();
    let header: Vec<&str> = curve.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "ldd_curve").unwrap();
    let last: f64 = curve.lines().last().unwrap().split(',').nth(col).unwrap().parse().unwrap();
    assert_eq!(format!("{last:.6}"), format!("{fresh:.6}"));
}

#[test]
fn report_merges_comparable_reports_only() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for (i, kind) in ["hypersphere", "clustered", "duplicated"].iter().enumerate() {
        let mut args = vec!["synth", "--kind", kind, "-n", "50", "-d", "8", "-o"];
        let file = format!("{i}.dsf");
        args.push(&file);
        match *kind {
            "clustered" => args.extend(["--clusters", "3", "--scale", "0.1"]),
            "duplicated" => args.extend(["--dup-factor", "2"]),
            _ => {}
        }
        ok(d, &args);
        let report = format!("{i}.json");
        ok(d, &["diversity", "--features", &file, "--ref-dim", "8", "--label", kind, "--out-report", &report]);
    }
    ok(d, &["report", "0.json", "1.json", "2.json", "-o", "all.csv"]);
    let csv = fs::read_to_string(d.join("all.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "dataset,step,gain,ldd_curve");
    let mut groups: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(groups.len(), 150);
    groups.dedup();
    assert_eq!(groups, ["hypersphere", "clustered", "duplicated"]);

    ok(d, &["diversity", "--features", "0.dsf", "--gamma", "2", "--ref-dim", "8", "--out-report", "g2.json"]);
    assert_eq!(code(&dppsel(d, &["report", "0.json", "g2.json", "-o", "bad.csv"])), 2);
    assert_eq!(code(&dppsel(d, &["report", "-o", "empty.csv"])), 2);
}

#[test]
fn replay_writes_under_the_new_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--kind", "hypersphere", "-n", "20", "-d", "4", "-o", "s.dsf"]);
    ok(d, &["--out-dir", "again", "replay", "s.dsf.config.json"]);
    assert_eq!(fs::read(d.join("s.dsf")).unwrap(), fs::read(d.join("again/s.dsf")).unwrap());
}
