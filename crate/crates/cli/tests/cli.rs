use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bimatch_core::io::{read_tensor, write_tensor, Tensor};

fn bimatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bimatch"))
        .args(args)
        .output()
        .expect("failed to launch bimatch")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["synth", "--out", p(&out)];
    args.extend_from_slice(extra);
    let o = bimatch(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_run_eval_happy_path() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synth(tmp.path(), "bundle", &["--seed", "2"]);
    let out = tmp.path().join("run");
    let o = bimatch(&[
        "run",
        "--bundle",
        p(&bundle),
        "--out",
        p(&out),
        "--dump-scores",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("masks/0009.png").is_file());
    assert!(out.join("scores/0001_obj1_local.bmt").is_file());
    let summary = fs::read_to_string(out.join("run.toml")).unwrap();
    assert!(summary.contains("decision = "));

    let report = tmp.path().join("report.toml");
    let o = bimatch(&[
        "eval",
        "--pred",
        p(&out),
        "--gt",
        p(&bundle),
        "--report",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("J_mean") && text.contains("G_mean"));

    let png = tmp.path().join("local.png");
    let scores = out.join("scores/0001_obj1_decoded.bmt");
    let o = bimatch(&["viz-scores", "--in", p(&scores), "--out", p(&png)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(png.is_file());
}

#[test]
fn zero_k_local_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bimatch(&[
        "run",
        "--bundle",
        p(tmp.path()),
        "--out",
        p(tmp.path()),
        "--k-local",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("bimatch: error[usage]:"), "{err}");
    assert!(err.contains("--k-local"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = bimatch(&["synth", "--out", "x", "--colour", "red"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn history_out_of_range_is_a_usage_error() {
    let o = bimatch(&["run", "--bundle", "b", "--out", "o", "--history", "6"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mismatched_frame_counts_fail_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let long = synth(tmp.path(), "long", &[]);
    let config = tmp.path().join("short.toml");
    let mut scene = bimatch_core::SceneConfig::distractor_demo(0);
    scene.frames = 4;
    fs::write(&config, scene.to_toml()).unwrap();
    let short = synth(tmp.path(), "short", &["--config", p(&config)]);
    let out = tmp.path().join("run");
    assert!(bimatch(&["run", "--bundle", p(&short), "--out", p(&out)])
        .status
        .success());
    let report = tmp.path().join("r.toml");
    let o = bimatch(&[
        "eval",
        "--pred",
        p(&out),
        "--gt",
        p(&long),
        "--report",
        p(&report),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).starts_with("bimatch: error[validation]:"),
        "{}",
        stderr(&o)
    );
    assert!(!report.exists());
}

#[test]
fn missing_bundle_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bimatch(&[
        "run",
        "--bundle",
        p(&tmp.path().join("nope")),
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("bimatch: error["));
}

#[test]
fn identical_invocations_produce_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synth(tmp.path(), "bundle", &["--seed", "8"]);
    let again = synth(tmp.path(), "bundle2", &["--seed", "8"]);
    assert_eq!(
        dir_bytes(&bundle.join("frames")),
        dir_bytes(&again.join("frames"))
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = bimatch(&[
            "run",
            "--bundle",
            p(&bundle),
            "--out",
            p(out),
            "--dump-scores",
            "--seed",
            "4",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(dir_bytes(&a.join("masks")), dir_bytes(&b.join("masks")));
    assert_eq!(dir_bytes(&a.join("scores")), dir_bytes(&b.join("scores")));
    assert_eq!(
        fs::read(a.join("run.toml")).unwrap(),
        fs::read(b.join("run.toml")).unwrap()
    );
}

#[test]
fn huge_k_local_matches_surjective() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synth(tmp.path(), "bundle", &[]);
    let (a, b) = (tmp.path().join("huge"), tmp.path().join("inf"));
    for (out, k) in [(&a, "1000000"), (&b, "inf")] {
        let o = bimatch(&[
            "run",
            "--bundle",
            p(&bundle),
            "--out",
            p(out),
            "--k-local",
            k,
            "--dump-scores",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(dir_bytes(&a.join("masks")), dir_bytes(&b.join("masks")));
    assert_eq!(dir_bytes(&a.join("scores")), dir_bytes(&b.join("scores")));
}

#[test]
fn match_writes_score_tensors() {
    let tmp = tempfile::tempdir().unwrap();
    let (r, q) = (tmp.path().join("r.bmt"), tmp.path().join("q.bmt"));
    // Two pixels along +x / +y; the mask marks the first as foreground.
    write_tensor(&Tensor::f32(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]), &r).unwrap();
    write_tensor(&Tensor::f32(vec![2, 1, 2], vec![0.0, 1.0, 1.0, 0.0]), &q).unwrap();
    let mask = tmp.path().join("m.png");
    bimatch_core::io::image::write_binary_mask(&mask, 1, 2, &[true, false]).unwrap();
    let out = tmp.path().join("out");
    let o = bimatch(&[
        "match",
        "--reference",
        p(&r),
        "--query",
        p(&q),
        "--mask",
        p(&mask),
        "--out",
        p(&out),
        "--k",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fg = read_tensor(out.join("y_fg.bmt")).unwrap();
    assert_eq!(fg.dims(), [1, 2]);
    assert_eq!(fg.as_f32().unwrap(), [0.5, 1.0]);
    let bg = read_tensor(out.join("y_bg.bmt")).unwrap();
    assert_eq!(bg.as_f32().unwrap(), [1.0, 0.5]);
}

#[test]
fn version_names_formats() {
    let o = bimatch(&["--version"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    assert!(text.contains("BMT1"));
}
