use std::path::Path;
use std::process::{Command, Output};

fn hppi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hppi")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "seed=5\nwindows_per_class=12\nmax_epochs=2\npatience=2\nstream_windows=40\nmlp_epochs=3\n";

#[test]
fn help_for_every_subcommand() {
    for sub in ["synth", "train", "eval", "quantize", "resources", "stream", "explain", "ablate"] {
        let o = hppi(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--out"));
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&hppi(&["synth", "--bogus"])), 1);
    assert_eq!(code(&hppi(&["frobnicate"])), 1);
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "windows_per_clas=3\n").unwrap();
    let o = hppi(&["synth", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("windows_per_clas"));
    assert_eq!(code(&hppi(&["resources", "--p", "1.5", "--out", s(dir.path())])), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("junk.hppi");
    std::fs::write(&model, b"not a model").unwrap();
    let o = hppi(&["resources", "--first", s(&model), "--plmn", s(&model), "--stationary", s(&model), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    let o = hppi(&["eval", "--module", "first", "--data", s(&dir.path().join("missing")), "--first", s(&model)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn resources_from_configured_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("table.cfg");
    std::fs::write(
        &cfg,
        "p=0.5\n\
         metrics.first.acc=0.9935\nmetrics.first.ram_kib=87.2\nmetrics.first.rom_kib=210.9\nmetrics.first.macc=142048\n\
         metrics.plmn.acc=0.9517\nmetrics.plmn.ram_kib=25.9\nmetrics.plmn.rom_kib=890.6\nmetrics.plmn.macc=889377\n\
         metrics.stationary.acc=0.995\nmetrics.stationary.ram_kib=87.2\nmetrics.stationary.rom_kib=210.9\nmetrics.stationary.macc=142000\n",
    )
    .unwrap();
    let o = hppi(&["resources", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("resources.txt")).unwrap();
    for needle in ["96.70", "1312.4", "1173425", "143.75"] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
    assert!(dir.path().join("resources.csv").exists());
}

#[test]
fn small_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = d.join("data");
    let run = |args: &[&str]| {
        let mut full = args.to_vec();
        full.extend(["--config", s(&cfg)]);
        let o = hppi(&full);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    run(&["synth", "--out", s(&data)]);
    for f in ["train.csv", "val.csv", "test.csv", "manifest.txt"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let m = d.join("models");
    let m2 = d.join("models2");
    for out in [&m, &m2] {
        run(&["train", "--module", "first", "--data", s(&data), "--out", s(out)]);
    }
    assert_eq!(std::fs::read(m.join("first.hppi")).unwrap(), std::fs::read(m2.join("first.hppi")).unwrap());
    let first = m.join("first.hppi");
    run(&["train", "--module", "plmn", "--data", s(&data), "--out", s(&m)]);
    run(&["train", "--module", "stationary", "--data", s(&data), "--first", s(&first), "--out", s(&m)]);
    let (plmn, st) = (m.join("plmn.hppi"), m.join("stationary.hppi"));
    let all = ["--first", s(&first), "--plmn", s(&plmn), "--stationary", s(&st)];

    let mut args = vec!["eval", "--module", "system", "--data", s(&data), "--out", s(d)];
    args.extend(all);
    run(&args);
    assert!(d.join("system_confusion.csv").exists());

    run(&["quantize", "--module", "stationary", "--data", s(&data), "--first", s(&first), "--stationary", s(&st), "--out", s(d)]);
    assert!(std::fs::metadata(d.join("stationary_int8.hppi")).unwrap().len() < std::fs::metadata(&st).unwrap().len());

    let mut args = vec!["stream", "--data", s(&data), "--out", s(d)];
    args.extend(all);
    run(&args);
    let events = std::fs::read_to_string(d.join("events.csv")).unwrap();
    assert_eq!(events.lines().count(), 41);

    run(&["explain", "--data", s(&data), "--plmn", s(&plmn), "--out", s(d)]);
    assert!(d.join("attribution.txt").exists());

    run(&["ablate", "--data", s(&data), "--out", s(d)]);
    let table = std::fs::read_to_string(d.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
    assert!(table.starts_with("variant,accuracy,rom_kib,macc"));
}
