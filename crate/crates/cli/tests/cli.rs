use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_analogy-lab");

// A corpus and network small enough to train in well under a second.
const SMALL: &[&str] = &[
    "num_categories=6",
    "num_properties=4",
    "exemplars_per_cell=3",
    "image_size=8",
    "unseen_categories=2",
    "heldout_types=2",
    "conv1=2",
    "conv2=3",
    "hidden=8",
    "embed_dim=4",
    "batch_size=8",
    "clf_steps=20",
    "n_questions=20",
    "distractor_sizes=10",
    "ks=1,5,10",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn small(dir: &Path, cmd: &str, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--corpus", "c.vslc", "--out", "runs"];
    for kv in SMALL {
        args.push("--set");
        args.push(kv);
    }
    args.extend_from_slice(extra);
    run(dir, &args)
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {stdout}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn run_dir(dir: &Path, suffix: &str) -> PathBuf {
    let mut found: Vec<PathBuf> = fs::read_dir(dir.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().ends_with(suffix))
        .collect();
    found.sort();
    found.pop().unwrap_or_else(|| panic!("no run directory ending in {suffix}"))
}

#[test]
fn gen_corpus_default_is_576_images_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&run(tmp.path(), &["gen-corpus", "--corpus", "a.vslc", "--out", "runs"]));
    assert!(out.contains("576 images"), "{out}");
    ok(&run(tmp.path(), &["gen-corpus", "--corpus", "b.vslc", "--out", "runs"]));
    assert_eq!(
        fs::read(tmp.path().join("a.vslc")).unwrap(),
        fs::read(tmp.path().join("b.vslc")).unwrap()
    );
    let cfg = fs::read_to_string(run_dir(tmp.path(), "gen-corpus").join("config.txt")).unwrap();
    assert!(cfg.contains("num_categories = 12"), "{cfg}");
}

#[test]
fn invalid_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["gen-corpus", "--set", "num_categories=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_categories"));
    let out = run(tmp.path(), &["gen-corpus", "--set", "no_such_key=3"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(tmp.path(), &["train", "--loss", "triple"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(tmp.path(), &["eval"]);
    assert_eq!(out.status.code(), Some(1), "eval without a checkpoint or baseline");
}

#[test]
fn config_file_values_apply_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.cfg"), "# small\nnum_categories = 5\nnum_properties = 3\nexemplars_per_cell = 2\n").unwrap();
    let out = ok(&run(
        tmp.path(),
        &["gen-corpus", "--config", "run.cfg", "--corpus", "c.vslc", "--out", "runs", "--set", "exemplars_per_cell=1"],
    ));
    assert!(out.contains("15 images"), "{out}");
    fs::write(tmp.path().join("bad.cfg"), "num_categories = 5\nbogus line\n").unwrap();
    let out = run(tmp.path(), &["gen-corpus", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn missing_or_corrupt_corpus_exits_two_and_names_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["eval", "--baseline", "random", "--corpus", "missing.vslc", "--out", "runs"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.vslc"));
    fs::write(tmp.path().join("junk.vslc"), b"VSLCjunk").unwrap();
    let out = run(tmp.path(), &["train", "--corpus", "junk.vslc", "--out", "runs"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_eval_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&small(d, "gen-corpus", &[]));
    ok(&small(d, "train", &["--steps", "10", "--run-name", "a"]));
    let train = run_dir(d, "train-a");
    let ckpt = train.join("encoder.vslg");
    assert!(ckpt.exists());
    let log = fs::read_to_string(train.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,loss,pos_dist_mean,neg_dist_mean\n"));
    assert_eq!(log.lines().count(), 11);

    // identical seeds give identical checkpoints
    ok(&small(d, "train", &["--steps", "10", "--run-name", "b"]));
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(run_dir(d, "train-b").join("encoder.vslg")).unwrap());

    let stdout = ok(&small(d, "eval", &["--checkpoint", ckpt.to_str().unwrap(), "--run-name", "e"]));
    assert!(stdout.contains("recall@10"), "{stdout}");
    let eval = run_dir(d, "eval-e");
    let results = fs::read_to_string(eval.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next(), Some("regime,loss_mode,freeze_mode,seed,k,n_distractors,recall"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 3);
    assert!(rows[0].starts_with("seen,double,fc_plus_lastconv,0,1,10,"), "{}", rows[0]);
    for f in ["audit_seen_10.csv", "audit_unseen_10.csv", "recall_seen.svg", "recall_unseen.svg", "config.txt"] {
        assert!(eval.join(f).exists(), "{f}");
    }
    let audit = fs::read_to_string(eval.join("audit_seen_10.csv")).unwrap();
    assert_eq!(audit.lines().count(), 21);

    // a checkpoint for another architecture is rejected
    let out = small(d, "eval", &["--checkpoint", ckpt.to_str().unwrap(), "--set", "hidden=9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn baselines_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&small(d, "gen-corpus", &[]));
    ok(&small(d, "eval", &["--baseline", "random", "--run-name", "r"]));
    let rows = fs::read_to_string(run_dir(d, "eval-r").join("results.csv")).unwrap();
    assert!(rows.lines().nth(1).unwrap().starts_with("seen,random,none,"));
    ok(&small(d, "eval", &["--baseline", "classifier", "--run-name", "c"]));
    let dir = run_dir(d, "eval-c");
    assert!(dir.join("baseline_classifier.vslg").exists());
    let rows = fs::read_to_string(dir.join("results.csv")).unwrap();
    assert!(rows.lines().nth(1).unwrap().starts_with("seen,classifier,all,"));
}

#[test]
fn distractor_sweep_runs_in_one_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // 12 x 8 x 24 = 2304 images leaves room for 2000 distractors
    let sweep = [
        "--set", "exemplars_per_cell=24",
        "--set", "image_size=8",
        "--set", "n_questions=5",
        "--set", "distractor_sizes=100,500,1000,2000",
        "--set", "ks=1,10,100",
    ];
    let mut gen = vec!["gen-corpus", "--corpus", "big.vslc", "--out", "runs"];
    gen.extend_from_slice(&sweep);
    ok(&run(d, &gen));
    let mut eval = vec!["eval", "--baseline", "random", "--corpus", "big.vslc", "--out", "runs"];
    eval.extend_from_slice(&sweep);
    ok(&run(d, &eval));
    let dir = run_dir(d, "eval");
    let rows = fs::read_to_string(dir.join("results.csv")).unwrap();
    // 2 regimes x 4 sizes x 3 ks
    assert_eq!(rows.lines().count(), 1 + 2 * 4 * 3);
    for n in [100, 500, 1000, 2000] {
        assert!(dir.join(format!("audit_unseen_{n}.csv")).exists());
        assert!(rows.contains(&format!(",100,{n},")), "k=100 row for n={n}");
    }

    // on the default-sized corpus 2000 distractors cannot be drawn
    ok(&run(d, &["gen-corpus", "--corpus", "small.vslc", "--out", "runs", "--set", "image_size=8"]));
    let out = run(
        d,
        &["eval", "--baseline", "random", "--corpus", "small.vslc", "--out", "runs", "--set", "image_size=8", "--set", "distractor_sizes=2000"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablation_covers_every_arm() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&small(d, "gen-corpus", &[]));
    let stdout = ok(&small(d, "ablate", &["--steps", "4", "--set", "ablation_seeds=0,1"]));
    assert!(stdout.contains("settings hashes agree"), "{stdout}");
    let dir = run_dir(d, "ablate");
    let csv = fs::read_to_string(dir.join("ablation.csv")).unwrap();
    // 2 losses x 2 freeze modes x 2 seeds x 2 regimes x 3 ks
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2 * 2 * 3);
    assert!(dir.join("ablation_seen.svg").exists() && dir.join("ablation_unseen.svg").exists());
}

#[test]
fn selfcheck_passes_and_catches_a_broken_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&run(tmp.path(), &["selfcheck"]));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{stdout}");
    let out = run(tmp.path(), &["selfcheck", "--corrupt-layer", "conv2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conv2"));
    let out = run(tmp.path(), &["selfcheck", "--corrupt-layer", "conv9"]);
    assert_eq!(out.status.code(), Some(1));
}
