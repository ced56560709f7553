use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use trimodal::eval::RetrievalReport;
use trimodal::regime::Regime;

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trimodal"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth_small(dir: &Path, name: &str, seed: &str) {
    let o = run(&["synth", "--out", name, "--clips", "24", "--rows", "2", "--seed", seed], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "a", "0");
    synth_small(tmp.path(), "b", "0");
    assert_eq!(dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
    synth_small(tmp.path(), "c", "1");
    assert_ne!(dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("c")));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["synth", "--out", "x", "--bogus", "1"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&["train", "--data", "x", "--out", "y"], tmp.path()).status.code(), Some(2));
    assert_eq!(
        run(&["train", "--data", "x", "--regime", "slava", "--out", "y"], tmp.path()).status.code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"], tmp.path()).status.code(), Some(2));
}

#[test]
fn validation_errors_exit_1_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["train", "--data", "missing", "--regime", "audioclip", "--out", "m"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing"), "{}", stderr(&o));

    synth_small(tmp.path(), "d", "0");
    fs::write(tmp.path().join("bad.cfg"), "epochs = 2\nwarmup = 3\n").unwrap();
    let o = run(
        &["train", "--data", "d", "--regime", "audioclip", "--out", "m", "--config", "bad.cfg"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.cfg:2"), "{}", stderr(&o));

    let blob = tmp.path().join("d/visual.f32");
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 100]).unwrap();
    let o = run(&["train", "--data", "d", "--regime", "audioclip", "--out", "m"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("visual.f32"), "{}", stderr(&o));
    assert!(!tmp.path().join("m").exists());
}

#[test]
fn gradcheck_passes_100_trials() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["gradcheck", "--trials", "100", "--seed", "3"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("PASS") && out.contains("max relative error"), "{out}");
}

#[test]
fn train_eval_compare_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir, "d", "0");
    let before = dir_bytes(&dir.join("d"));
    fs::write(dir.join("run.cfg"), "epochs = 2\nbatch_size = 8\nlr = 1e-3\n").unwrap();

    let mut ckpts = Vec::new();
    for regime in Regime::ALL {
        let ckpt = format!("{}.ckpt", regime.tag());
        let o = run(
            &["train", "--data", "d", "--regime", regime.tag(), "--out", &ckpt, "--config", "run.cfg", "--seed", "5"],
            dir,
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let log = stderr(&o);
        assert!(log.contains("resolved config") && log.contains("epochs=2") && log.contains("seed=5"), "{log}");
        let trace = fs::read_to_string(dir.join(format!("{ckpt}.trace.csv"))).unwrap();
        assert!(trace.starts_with("stage,epoch,batch,caption_type,av,at,vt,total\n"));
        ckpts.push(ckpt);
    }
    assert_eq!(dir_bytes(&dir.join("d")), before, "training must not touch its input");

    let o = run(&["eval", "--data", "d", "--ckpt", &ckpts[5], "--out", "r.json"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = RetrievalReport::from_json(&fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 7);
    assert_eq!(report.model, "slava-av-3loss");
    assert!(report.rows.iter().all(|r| r.recall.is_some_and(|v| (0.0..=1.0).contains(&v))));
    assert!(dir.join("r.txt").exists());

    let mut args = vec!["compare", "--data", "d", "--out", "cmp.json", "--ckpt"];
    args.extend(ckpts.iter().map(String::as_str));
    let o = run(&args, dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.join("cmp.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    // title, header, rule, seven task rows
    assert_eq!(lines.len(), 10, "{table}");
    for regime in Regime::ALL {
        assert!(lines[1].contains(regime.tag()));
    }
    for row in &lines[3..] {
        let numbers = row.split_whitespace().filter(|c| c.parse::<f64>().is_ok()).count();
        assert_eq!(numbers, 6, "{row}");
    }
}

#[test]
fn validation_set_enables_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir, "d", "0");
    let o = run(
        &["synth", "--out", "v", "--clips", "16", "--rows", "2", "--seed", "0", "--first-clip", "24"],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(
        &["train", "--data", "d", "--validation", "v", "--regime", "two-stage-frozen", "--out", "m", "--epochs", "2", "--batch-size", "8"],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let log = stderr(&o);
    assert!(log.contains("select_on_validation=true"), "{log}");
    assert!(log.contains("stage1: kept epoch") && log.contains("stage2: kept epoch"), "{log}");
}
