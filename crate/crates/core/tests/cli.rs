use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const MICRO: &str = r#"{
    "seed": 3,
    "image_size": 16,
    "dummy": {"k": 2, "m": 2},
    "classifier": {"depth": 18, "width": 4, "epochs": 1, "batch": 16},
    "gan": {"epochs": 1, "batch": 8, "gen_width": 4, "gen_res_blocks": 1, "disc_width": 4, "c_width": 4},
    "synthetic": {"subjects": 4, "trials_per_condition": 3}
}"#;

fn cli(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eeg-cloak"))
        .arg("--workdir")
        .arg(work)
        .args(["--threads", "1", "-q"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(work: &Path, args: &[&str]) -> String {
    let out = cli(work, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let help = cli(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for cmd in ["ingest", "split", "preprocess", "dummies", "train-cls", "train-gan", "disguise", "eval", "ablate"] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
    assert_eq!(cli(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(cli(dir.path(), &["train-cls", "--task", "mood"]).status.code(), Some(2));
}

#[test]
fn bad_config_exits_3_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"gan": {"lambda_cycl": 10}}"#).unwrap();
    let out = cli(dir.path(), &["--config", cfg.to_str().unwrap(), "split"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_cycl"));
}

#[test]
fn missing_inputs_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["split"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.json"));
}

#[test]
fn micro_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let cfg = w.join("micro.json");
    fs::write(&cfg, MICRO).unwrap();
    let c = cfg.to_str().unwrap();

    assert!(ok(w, &["--config", c, "ingest", "--synthetic-fixtures"]).starts_with("60 trials, 4 subjects"));
    assert_eq!(ok(w, &["--config", c, "split"]).trim(), "train 44, test 12, validation 4");
    assert_eq!(ok(w, &["--config", c, "preprocess", "--dump-features"]).trim(), "60 images");
    assert_eq!(fs::read_dir(w.join("features")).unwrap().count(), 60);
    assert_eq!(ok(w, &["--config", c, "dummies"]).trim(), "20 dummy exemplars");
    ok(w, &["--config", c, "train-cls", "--task", "alcoholism"]);
    assert!(w.join("models/cls_alcoholism.ckpt").is_file());
    ok(w, &["--config", c, "train-gan", "--constraints", "alc"]);
    let losses = fs::read_to_string(w.join("models/gan_alc.losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 2);

    let gan = w.join("models/gan_alc.ckpt");
    let gan = gan.to_str().unwrap();
    let cls = w.join("models/cls_alcoholism.ckpt");
    let cls = cls.to_str().unwrap();
    let val = w.join("images/validation");
    let out = w.join("out");
    let n = ok(w, &["--config", c, "disguise", "--model", gan, "--in", val.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(n.trim(), "4 images disguised");
    let report = ok(w, &["--config", c, "eval", "--model", cls, "--images", out.to_str().unwrap()]);
    assert!(report.contains("alcoholism"), "{report}");
    assert!(w.join("reports/eval.json").is_file());
    let pred = ok(w, &["--config", c, "predict", "--model", cls, "--in", val.to_str().unwrap()]);
    assert_eq!(pred.lines().count(), 5);
    let png = w.join("png");
    assert_eq!(ok(w, &["export-png", "--in", out.to_str().unwrap(), "--out", png.to_str().unwrap(), "--scale", "2"]).trim(), "4 PNG files");

    // Disguising already disguised images is refused.
    let again = cli(w, &["--config", c, "disguise", "--model", gan, "--in", out.to_str().unwrap(), "--out", w.join("x").to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(4));
    // Ablation needs all four regimes.
    let abl = cli(w, &["--config", c, "ablate"]);
    assert_eq!(abl.status.code(), Some(4));
}
