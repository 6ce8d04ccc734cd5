use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"{
  "lr": 0.001,
  "steps": 3,
  "batch": 2,
  "model": { "c": 8, "stage_channels": [4, 8, 8, 8], "expansion": 2, "seed": 3 }
}"#;

fn vcrnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcrnet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let o = vcrnet(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    data: PathBuf,
    config: PathBuf,
}

fn fixture(count: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = dir.path().join("tiny.json");
    fs::write(&config, TINY).unwrap();
    ok(&["generate", "--count", &count.to_string(), "--seed", "5", "--size", "32", "--out", p(&data)]);
    Fixture { dir, data, config }
}

fn train(f: &Fixture, out: &str, extra: &[&str]) -> PathBuf {
    let out = f.dir.path().join(out);
    let mut args = vec!["train", "--data", p(&f.data), "--config", p(&f.config), "--out", p(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_counts_and_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["generate", "--count", "24", "--seed", "9", "--size", "32", "--out", p(&a)]);
    ok(&["generate", "--count", "24", "--seed", "9", "--size", "32", "--out", p(&b)]);
    assert_eq!(fs::read_dir(a.join("pairs")).unwrap().count(), 24);
    assert_eq!(fs::read_dir(a.join("splits")).unwrap().count(), 3);
    assert!(a.join("resolved_config.json").exists());
    assert_eq!(files_in(&a), files_in(&b));
}

#[test]
fn generate_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert_eq!(vcrnet(&["generate", "--count", "0", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(vcrnet(&["generate", "--count", "3", "--size", "40", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(vcrnet(&["generate", "--out", p(&out)]).status.code(), Some(2));
}

#[test]
fn train_logs_losses_and_resumes_bit_exactly() {
    let f = fixture(14);
    let full = train(&f, "full", &["--steps", "4"]);
    let log = fs::read_to_string(full.join("loss.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,l_in,l_non,l_align,l_total");
    assert_eq!(lines.len(), 5);
    assert!(full.join("checkpoint/manifest.json").exists());
    let resolved = fs::read_to_string(full.join("resolved_config.json")).unwrap();
    assert!(resolved.contains("\"steps\": 4") && resolved.contains("\"command\": \"train\""));

    let half = train(&f, "half", &["--steps", "2"]);
    let ck = half.join("checkpoint");
    let resumed = train(&f, "resumed", &["--steps", "4", "--resume", p(&ck)]);
    let rlog = fs::read_to_string(resumed.join("loss.csv")).unwrap();
    let rlines: Vec<&str> = rlog.lines().collect();
    assert_eq!(rlines[1..], lines[3..]);
    assert_eq!(files_in(&resumed.join("checkpoint")), files_in(&full.join("checkpoint")));
}

#[test]
fn ablation_flags_reach_the_config_echo() {
    let f = fixture(14);
    let out = train(&f, "wo_pose", &["--steps", "1", "--ablate", "pose"]);
    let v = fs::read_to_string(out.join("resolved_config.json")).unwrap();
    assert!(v.contains("\"pose\": true"));
    assert!(v.contains("\"text\": false"));
    let o = vcrnet(&["train", "--data", p(&f.data), "--ablate", "colour", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_config_errors_exit_with_code_2() {
    let f = fixture(14);
    let bad = f.dir.path().join("bad.json");
    fs::write(&bad, r#"{ "lr": 0.001, "learning_rate": 1 }"#).unwrap();
    let out = f.dir.path().join("x");
    let o = vcrnet(&["train", "--data", p(&f.data), "--config", p(&bad), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = vcrnet(&["train", "--data", p(&f.dir.path().join("missing")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn non_finite_loss_aborts_and_dumps_traces() {
    let f = fixture(14);
    let hot = f.dir.path().join("hot.json");
    fs::write(&hot, TINY.replace("\"lr\": 0.001", "\"lr\": 1e300")).unwrap();
    let out = f.dir.path().join("hot");
    let o = vcrnet(&["train", "--data", p(&f.data), "--config", p(&hot), "--steps", "6", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let dump = fs::read_to_string(out.join("deq_traces.json")).unwrap();
    assert!(dump.contains("\"iterations\""));
    assert!(!out.join("checkpoint").exists());
}

#[test]
fn eval_writes_reports_with_fixed_schemas() {
    let f = fixture(14);
    let trained = train(&f, "t", &[]);
    let out = f.dir.path().join("eval");
    ok(&[
        "eval",
        "--checkpoint",
        p(&trained.join("checkpoint")),
        "--data",
        p(&f.data),
        "--partition",
        "train",
        "--out",
        p(&out),
    ]);
    let samples = fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().next(), Some("split,class,part,id,kld,sim,nss"));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().next(), Some("split,class,part,kld,sim,nss"));
    assert!(report.lines().any(|l| l.starts_with("seen,all,all,")));
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 256);
    assert!(fs::read_to_string(out.join("curves.svg")).unwrap().starts_with("<svg"));
    let hist = fs::read_to_string(out.join("iterations.csv")).unwrap();
    let total: usize = hist.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
    let n = samples.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().to_string()).collect::<std::collections::BTreeSet<_>>().len();
    assert_eq!(total, 3 * n);
    assert!(out.join("resolved_config.json").exists());
    assert!(out.join("summary.json").exists());
}

#[test]
fn infer_writes_fourteen_maps_and_overlays() {
    let f = fixture(7);
    let trained = train(&f, "t", &["--steps", "1"]);
    let pair = f.data.join("pairs/p00002");
    let ck = trained.join("checkpoint");
    let run = |out: &Path| {
        ok(&[
            "infer",
            "--checkpoint",
            p(&ck),
            "--interactive-image",
            p(&pair.join("in.ppm")),
            "--non-interactive-image",
            p(&pair.join("non.ppm")),
            "--pose",
            p(&pair.join("pose.tnsr")),
            "--out",
            p(out),
        ])
    };
    let a = f.dir.path().join("ia");
    let b = f.dir.path().join("ib");
    run(&a);
    run(&b);
    let files = files_in(&a);
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with(".tnsr")).count(), 14);
    let overlays: Vec<_> = files.iter().filter(|(n, _)| n.ends_with(".ppm")).collect();
    assert_eq!(overlays.len(), 14);
    let input = fs::read(pair.join("in.ppm")).unwrap();
    let header = |b: &[u8]| String::from_utf8_lossy(&b[..12]).split_whitespace().take(3).collect::<Vec<_>>().join(" ");
    for (_, bytes) in overlays {
        assert_eq!(header(bytes), header(&input));
    }
    assert_eq!(files, files_in(&b));

    let o = vcrnet(&[
        "infer",
        "--checkpoint",
        p(&ck),
        "--interactive-image",
        p(&pair.join("in.ppm")),
        "--non-interactive-image",
        p(&pair.join("non.ppm")),
        "--out",
        p(&a),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--pose"));
}
