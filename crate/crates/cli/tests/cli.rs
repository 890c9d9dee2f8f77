use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn afgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afgen")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "failed: {}", stderr(o));
}

fn manifests_in(dir: &Path) -> usize {
    fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().file_name() == "manifest.json").count()
}

const REPORT_HEADER: &str = "victim,attack,scenario,source,asr,mean_psnr_db,inf_psnr_count,mean_ssim,n_images";

#[test]
fn selfcheck_passes() {
    let o = afgen(&["selfcheck"]);
    assert_ok(&o);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 6, "{out}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(afgen(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(afgen(&["selfcheck", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(afgen(&[]).status.code(), Some(2));
}

#[test]
fn report_without_inputs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = afgen(&["report", "--input", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("no reports found"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn report_names_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("report.csv"), "victim,attack,scenario,source,asr\nplainnet,a,white-box,x,0.5\n").unwrap();
    let o = afgen(&["report", "--input", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mean_psnr_db"), "{}", stderr(&o));
}

#[test]
fn single_row_report_average_equals_row() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{REPORT_HEADER}\nplainnet,wb,white-box,upsampled,0.9375,44.5,0,0.9876,16\n");
    fs::write(dir.path().join("report.csv"), body).unwrap();
    let out = dir.path().join("summary");
    let o = afgen(&["report", "--input", p(dir.path()), "--out", p(&out)]);
    assert_ok(&o);
    let md = fs::read_to_string(out.join("summary.md")).unwrap();
    assert!(md.contains("| plainnet | wb | 0.9375 | 0.9375 | 44.50 | 0.9876 |"), "{md}");
    assert!(md.contains("| Avg. |  | 0.9375 | 0.9375 | 44.50 | 0.9876 |"), "{md}");
    assert_eq!(manifests_in(&out), 1);
}

#[test]
fn gen_data_refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corpus");
    let args = |force: bool| {
        let mut a = vec!["gen-data", "--out", p(&out), "--d-real", "2", "--d-fake", "2", "--a-fake", "1"];
        a.extend(["--eval-real", "1", "--eval-fake", "1", "--probe-fake", "1"]);
        if force {
            a.push("--force");
        }
        a.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let run = |force| {
        let a = args(force);
        afgen(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    assert_ok(&run(false));
    let first = fs::read(out.join("d_set").join("000000.png")).unwrap();
    assert_eq!(manifests_in(&out), 1);
    let again = run(false);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"));
    assert_ok(&run(true));
    assert_eq!(manifests_in(&out), 1);
    assert_eq!(fs::read(out.join("d_set").join("000000.png")).unwrap(), first);
    let leftovers: Vec<PathBuf> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|q| q.file_name().unwrap().to_string_lossy().contains("staging"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["config"]["d_real"], 2);
    assert!(manifest["build_id"].as_str().unwrap().starts_with("afgen-"));
}

fn pipeline(root: &Path) -> Vec<u8> {
    let corpus = root.join("corpus");
    let dets = root.join("detectors");
    let attacks = root.join("attacks");
    let eval = root.join("eval");
    let sizes = ["--d-real", "6", "--d-fake", "6", "--a-fake", "3", "--eval-real", "3", "--eval-fake", "3", "--probe-fake", "2"];
    let mut a = vec!["gen-data", "--out", p(&corpus), "--seed", "5"];
    a.extend(sizes);
    assert_ok(&afgen(&a));
    assert_ok(&afgen(&[
        "train-detectors", "--corpus", p(&corpus), "--out", p(&dets), "--kinds", "plainnet,stridenet", "--epochs", "1",
        "--seed", "5",
    ]));
    assert!(dets.join("plainnet.ckpt").is_file() && dets.join("stridenet_log.csv").is_file());
    assert_ok(&afgen(&[
        "train-attack", "--corpus", p(&corpus), "--detectors", p(&dets), "--victim", "stridenet", "--epochs", "1",
        "--seed", "5", "--out", p(&attacks.join("wb-stridenet")),
    ]));
    assert_ok(&afgen(&[
        "train-attack", "--corpus", p(&corpus), "--detectors", p(&dets), "--ensemble", "stridenet", "--victim",
        "plainnet", "--epochs", "1", "--seed", "5", "--out", p(&attacks.join("zk-plainnet")),
    ]));
    assert_ok(&afgen(&[
        "eval", "--attacks", p(&attacks), "--victims", p(&dets), "--corpus", p(&corpus), "--out", p(&eval), "--seed",
        "5", "--probe-draws", "2",
    ]));
    assert_eq!(manifests_in(&eval), 1);
    fs::read(eval.join("report.csv")).unwrap()
}

#[test]
fn pipeline_runs_end_to_end_and_reruns_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let text = String::from_utf8(first.clone()).unwrap();
    assert!(text.starts_with(REPORT_HEADER), "{text}");
    for needle in ["baseline", "white-box", "zero-knowledge", "probe-random", "probe-aligned"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
    assert_eq!(first, pipeline(b.path()), "same-seed rerun changed the report");

    let summary = a.path().join("summary");
    let o = afgen(&["report", "--input", p(&a.path().join("eval")), "--out", p(&summary)]);
    assert_ok(&o);
    let md = fs::read_to_string(summary.join("summary.md")).unwrap();
    for title in ["White-box attack", "Zero-knowledge attack", "Block alignment"] {
        assert!(md.contains(title), "{md}");
    }
}

#[test]
fn attack_preserves_arbitrary_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    let dets = root.join("dets");
    let gen = root.join("gen");
    let sizes = ["--d-real", "2", "--d-fake", "2", "--a-fake", "2", "--eval-real", "1", "--eval-fake", "1", "--probe-fake", "1"];
    let mut a = vec!["gen-data", "--out", p(&corpus)];
    a.extend(sizes);
    assert_ok(&afgen(&a));
    assert_ok(&afgen(&["train-detectors", "--corpus", p(&corpus), "--out", p(&dets), "--kinds", "stridenet", "--epochs", "1"]));
    assert_ok(&afgen(&[
        "train-attack", "--corpus", p(&corpus), "--detectors", p(&dets), "--victim", "stridenet", "--epochs", "1",
        "--arch", "generator-linear-out", "--out", p(&gen),
    ]));
    let input = root.join("pngs");
    fs::create_dir(&input).unwrap();
    let img = afgen::Tensor::<f32>::from_fn([3, 17, 23], |i| (i % 97) as f32 / 97.0);
    afgen::corpus::save_png(&img, &input.join("odd.png")).unwrap();
    let out = root.join("attacked");
    assert_ok(&afgen(&["attack", "--generator", p(&gen), "--input", p(&input), "--out", p(&out)]));
    let back = afgen::corpus::load_png::<f32>(&out.join("odd.png")).unwrap();
    assert_eq!(back.shape(), &[3, 17, 23]);
}

#[test]
fn attack_config_validation_fails_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = afgen(&[
        "train-attack", "--detectors", p(dir.path()), "--victim", "plainnet", "--alpha", "-1", "--corpus", p(dir.path()),
        "--out", p(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));
}
