use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tkfnet::data::{load_image_folder, synth_dataset, SynthSpec};
use tkfnet::weights;
use tkfnet::{ModelConfig, Tkfnet};

fn tkfnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tkfnet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TKF_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\n{}{}", o.status.code(), stdout(&o), stderr(&o));
    o
}

/// The error line a failing command leaves on stderr.
fn failure(o: &Output, code: i32, tag: &str) -> String {
    assert_eq!(o.status.code(), Some(code), "{}{}", stdout(o), stderr(o));
    let line = stderr(o).lines().last().unwrap_or_default().to_owned();
    assert!(line.starts_with(&format!("error[{tag}]: ")), "{line}");
    line
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for dir in fs::read_dir(root).unwrap() {
        for f in fs::read_dir(dir.unwrap().path()).unwrap() {
            out.push(f.unwrap().path());
        }
    }
    out.sort();
    out
}

const TRAIN_FLAGS: [&str; 10] = [
    "--model", "small", "--input", "32", "--batch", "8", "--lr", "0.01", "--lr-end", "0.001",
];

#[test]
fn synth_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    ok(tkfnet(&["synth", "7x20x64:5", "--out", "a"], dir.path()));
    ok(tkfnet(&["synth", "7x20x64:5", "--out", "b"], dir.path()));
    let a = files_under(&dir.path().join("a"));
    assert_eq!(a.len(), 140);
    assert_eq!(fs::read_dir(dir.path().join("a")).unwrap().count(), 7);
    for (x, y) in a.iter().zip(files_under(&dir.path().join("b"))) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }

    let loaded = load_image_folder(&dir.path().join("a")).unwrap().dataset;
    let made = synth_dataset(&SynthSpec::new(7, 20, 64, 5)).unwrap();
    assert_eq!(loaded.class_names, made.class_names);
    for (l, m) in loaded.samples.iter().zip(&made.samples) {
        assert_eq!(l.label, m.label);
        for (p, q) in l.image.data().iter().zip(m.image.data()) {
            assert!((p - q).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }
}

#[test]
fn synth_into_unwritable_place_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("file"), b"x").unwrap();
    let o = tkfnet(&["synth", "2x1x8", "--out", "file/sub"], dir.path());
    failure(&o, 3, "io");
    let o = tkfnet(&["synth", "9x1x8", "--out", "x"], dir.path());
    failure(&o, 2, "config");
}

#[test]
fn train_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(tkfnet(&["synth", "7x5x32:0", "--out", "data"], d));
    let mut args = vec!["train", "--data", "data", "--out", "run", "--epochs", "100"];
    args.extend(TRAIN_FLAGS);
    let o = ok(tkfnet(&args, d));
    assert!(stdout(&o).contains("train accuracy 1.0000"), "{}", stdout(&o));
    let run = d.join("run");
    for f in ["manifest.txt", "weights.tkfw", "metrics.tsv", "timing.tsv", "final.txt", "confusion.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let metrics = fs::read_to_string(run.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 101);
    assert_eq!(metrics.lines().next(), Some("epoch\tloss\tlr"));

    let (_, store) = Tkfnet::build(&ModelConfig::small(7), 0).unwrap();
    let names: Vec<String> = weights::read_file(&run.join("weights.tkfw"))
        .unwrap()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    assert_eq!(names, store.names().collect::<Vec<_>>());

    // Memorized training set, settings picked up from the manifest.
    let o = ok(tkfnet(&["eval", "--out", "run", "--data", "data"], d));
    assert!(stdout(&o).starts_with("accuracy 1.0000 over 35 samples"), "{}", stdout(&o));
    let csv = fs::read_to_string(run.join("eval_confusion.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "true\\pred,orient0,orient1,orient2,orient3,orient4,orient5,orient6");
    for (k, row) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[0], format!("orient{k}"));
        let sum: u64 = cells[1..].iter().map(|c| c.parse::<u64>().unwrap()).sum();
        assert_eq!(sum, 5);
    }

    let image = "data/orient4/orient4_00002.ppm";
    let o = ok(tkfnet(&["infer", "--out", "run", "--dump-attention", image], d));
    let text = stdout(&o);
    let mut lines = text.lines();
    let predicted = lines.next().unwrap().strip_prefix("predicted\t").unwrap().to_owned();
    let dist: Vec<(String, f64)> = lines
        .by_ref()
        .take(7)
        .map(|l| {
            let (n, p) = l.split_once('\t').unwrap();
            (n.to_owned(), p.parse().unwrap())
        })
        .collect();
    let total: f64 = dist.iter().map(|(_, p)| p).sum();
    assert!((total - 1.0).abs() <= 1e-6, "{total}");
    let best = dist.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(best.0, predicted);
    assert_eq!(predicted, "orient4");
    let eta = fs::read_to_string(run.join("attention.csv")).unwrap();
    let values: Vec<f32> = eta.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 32);
    assert!(values.iter().all(|&e| e > 0.0 && e < 1.0));

    // Class count differs from the head.
    ok(tkfnet(&["synth", "5x2x32:1", "--out", "five"], d));
    let line = failure(&tkfnet(&["eval", "--out", "run", "--data", "five"], d), 4, "mismatch");
    assert!(line.contains('5') && line.contains('7'), "{line}");

    // Wrong model size for the weights.
    let o = tkfnet(&["eval", "--out", "run", "--data", "data", "--model", "base"], d);
    failure(&o, 4, "mismatch");

    let o = tkfnet(&["infer", "--out", "run", "missing.ppm"], d);
    failure(&o, 3, "io");
    fs::write(d.join("junk.ppm"), b"P6\n2 2\n255\nxx").unwrap();
    failure(&tkfnet(&["infer", "--out", "run", "junk.ppm"], d), 3, "io");
}

#[test]
fn zero_epochs_evaluates_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "train", "--data", "synth:3x2x16", "--out", "r", "--epochs", "0", "--model", "small", "--input", "16",
    ];
    ok(tkfnet(&args, dir.path()));
    let r = dir.path().join("r");
    assert_eq!(fs::read_to_string(r.join("metrics.tsv")).unwrap(), "epoch\tloss\tlr\n");
    let fin = fs::read_to_string(r.join("final.txt")).unwrap();
    assert!(fin.contains("eval_set=train") && fin.contains("samples=6") && fin.contains("epochs_run=0"));

    let (_, store) = Tkfnet::build(&ModelConfig::small(3), 0).unwrap();
    let saved = fs::read(r.join("weights.tkfw")).unwrap();
    assert_eq!(saved, weights::encode_params(&store));
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("run.cfg"),
        "# small run\nmodel=small\ninput=16\nbatch=4\nlr=0.02\nlr_end=0.002\nepochs=5\ndata=synth:4x3x16:2\nholdout=0.34\nout=first\n",
    )
    .unwrap();
    ok(tkfnet(&["train", "--config", "run.cfg", "--epochs", "2"], d));
    let manifest = fs::read_to_string(d.join("first/manifest.txt")).unwrap();
    assert!(manifest.contains("epochs=2\n"), "flag overrides file:\n{manifest}");
    assert!(manifest.contains("class_names=orient0,orient1,orient2,orient3\n"));
    assert!(manifest.contains("seed=0\n"));
    let fin = fs::read_to_string(d.join("first/final.txt")).unwrap();
    assert!(fin.contains("eval_set=test") && fin.contains("samples=4"), "{fin}");

    ok(tkfnet(&["train", "--config", "first/manifest.txt", "--out", "second"], d));
    for f in ["metrics.tsv", "weights.tkfw", "final.txt", "confusion.csv"] {
        assert_eq!(fs::read(d.join("first").join(f)).unwrap(), fs::read(d.join("second").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_2_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: [&[&str]; 7] = [
        &["train", "--data", "synth:2x2x16", "--model", "huge"],
        &["train", "--data", "synth:2x2x16", "--lr", "abc"],
        &["train", "--data", "synth:2x2x16", "--momentum", "1.5"],
        &["train", "--data", "synth:2x2x16", "--model", "small", "--input", "20"],
        &["train"],
        &["gradcheck", "--model", "base"],
        &["frobnicate"],
    ];
    for args in cases {
        let o = tkfnet(args, d);
        failure(&o, 2, "config");
        assert_eq!(stderr(&o).lines().count(), 1, "{args:?}: {}", stderr(&o));
    }
    fs::write(d.join("bad.cfg"), "epochs=3\nwhat=1\n").unwrap();
    let line = failure(&tkfnet(&["train", "--config", "bad.cfg"], d), 2, "config");
    assert!(line.contains("bad.cfg:2"), "{line}");
    failure(&tkfnet(&["train", "--config", "nope.cfg"], d), 3, "io");
    failure(&tkfnet(&["train", "--data", "no_such_dir"], d), 3, "io");

    let o = Command::new(env!("CARGO_BIN_EXE_tkfnet"))
        .args(["synth", "1x1x8", "--out", "t"])
        .current_dir(d)
        .env("TKF_THREADS", "zero")
        .output()
        .unwrap();
    failure(&o, 2, "config");
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (threads, out) in [("1", "one"), ("4", "four")] {
        let mut args = vec!["train", "--data", "synth:3x4x16:1", "--out", out, "--epochs", "2", "--input", "16"];
        args.extend(&TRAIN_FLAGS[..2]);
        let o = Command::new(env!("CARGO_BIN_EXE_tkfnet"))
            .args(&args)
            .current_dir(d)
            .env("TKF_THREADS", threads)
            .output()
            .unwrap();
        ok(o);
    }
    for f in ["metrics.tsv", "weights.tkfw"] {
        assert_eq!(fs::read(d.join("one").join(f)).unwrap(), fs::read(d.join("four").join(f)).unwrap());
    }
}

#[test]
fn gradcheck_reports_every_module() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(tkfnet(&["gradcheck", "--seed", "0"], dir.path()));
    let text = stdout(&o);
    for m in ["tensor-core", "backbone", "tafe", "dcif", "train"] {
        let line = text.lines().find(|l| l.starts_with(&format!("{m}\t"))).unwrap_or_else(|| panic!("{m}"));
        assert!(line.ends_with("\tok"), "{line}");
    }

    let o = tkfnet(&["gradcheck", "--inject-fault", "spatial-var"], dir.path());
    let line = failure(&o, 1, "verify");
    assert!(line.contains("worst offender"), "{line}");
    assert!(stdout(&o).contains("FAIL"));
}
