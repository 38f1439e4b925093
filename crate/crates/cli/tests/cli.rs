//! End-to-end tests of the `aasist` binary: argument handling, the
//! train/score/eval round trip, determinism of artifacts, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aasist_core::scorefile::parse_scores;
use aasist_core::wav::write_wav;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aasist"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Four optimizer steps on the smallest preset: enough to exercise every
/// artifact without burning test time.
fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "# four-step smoke configuration\npreset = debug\nsteps = 4\nn_per_class = 2\nbatch_size = 2\n",
    )
    .unwrap();
    path
}

fn tone_wav(dir: &Path, name: &str, freq: f64) -> PathBuf {
    let path = dir.join(name);
    let samples: Vec<f64> = (0..2_400)
        .map(|i| 0.7 * (std::f64::consts::TAU * freq * i as f64 / 16_000.0).sin())
        .collect();
    write_wav(&path, &samples, 16_000).unwrap();
    path
}

#[test]
fn help_exits_zero_for_every_command() {
    for args in [
        vec!["--help"],
        vec!["--version"],
        vec!["train", "--help"],
        vec!["score", "--help"],
        vec!["eval", "--help"],
        vec!["gradcheck", "--help"],
        vec!["info", "--help"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert!(out.status.success(), "{args:?} failed: {}", stderr(&out));
    }
}

#[test]
fn train_writes_checkpoint_history_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "5", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("effective config"), "{text}");
    assert!(text.contains("preset = debug"), "{text}");
    assert!(text.contains("steps = 4"), "{text}");

    assert!(out_dir.join("model.aasf").exists());
    let history = std::fs::read_to_string(out_dir.join("history.tsv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines.len(), 4, "one record per step:\n{history}");
    for (i, line) in lines.iter().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3, "step<TAB>loss<TAB>lr: {line}");
        assert_eq!(cols[0].parse::<usize>().unwrap(), i);
        assert!(cols[1].parse::<f64>().unwrap().is_finite());
        assert!(cols[2].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn multi_seed_train_writes_one_subdir_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("runs");
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "11,12", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    for seed in [11, 12] {
        let sub = out_dir.join(format!("seed-{seed}"));
        assert!(sub.join("model.aasf").exists(), "missing {sub:?}");
        assert!(sub.join("history.tsv").exists());
    }
    let a = std::fs::read(out_dir.join("seed-11/model.aasf")).unwrap();
    let b = std::fs::read(out_dir.join("seed-12/model.aasf")).unwrap();
    assert_ne!(a, b, "different seeds should train different weights");
}

#[test]
fn duplicate_seeds_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "5,5", "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("duplicate seeds"), "{}", stderr(&out));
}

#[test]
fn training_without_a_seed_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("seed"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_named_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "preset = debug\nlearning_rate_typo = 1\n").unwrap();
    let out = bin().args(["info", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("learning_rate_typo"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn train_score_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let ok = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "5", "--out"])
        .arg(&run)
        .status()
        .unwrap();
    assert!(ok.success());

    let w1 = tone_wav(dir.path(), "a.wav", 180.0);
    let w2 = tone_wav(dir.path(), "b.wav", 300.0);
    let w3 = tone_wav(dir.path(), "c.wav", 5_600.0);
    let w4 = tone_wav(dir.path(), "d.wav", 6_400.0);
    let list = dir.path().join("list.txt");
    std::fs::write(
        &list,
        format!("{}\n{}\n{}\n{}\n", w1.display(), w2.display(), w3.display(), w4.display()),
    )
    .unwrap();
    let scores_path = dir.path().join("scores.tsv");
    let out = bin()
        .args(["score", "--checkpoint"])
        .arg(run.join("model.aasf"))
        .arg("--list")
        .arg(&list)
        .arg("--out")
        .arg(&scores_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = parse_scores(&std::fs::read_to_string(&scores_path).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|(_, s)| s.is_finite()));

    let labels = dir.path().join("labels.tsv");
    std::fs::write(
        &labels,
        format!(
            "{}\tbonafide\n{}\tbonafide\n{}\tspoof\n{}\tspoof\n",
            w1.display(),
            w2.display(),
            w3.display(),
            w4.display()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["eval", "--scores"])
        .arg(&scores_path)
        .arg("--labels")
        .arg(&labels)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    let re_ok = line.starts_with("EER=")
        && line.contains(" threshold=")
        && line.split('=').count() == 3;
    assert!(re_ok, "unexpected eval output: {line}");
    let eer: f64 = line["EER=".len()..line.find(' ').unwrap()].parse().unwrap();
    assert!((0.0..=100.0).contains(&eer));
}

#[test]
fn scoring_missing_files_warns_skips_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "5", "--out"])
        .arg(&run)
        .status()
        .unwrap()
        .success());

    let good = tone_wav(dir.path(), "good.wav", 250.0);
    let list = dir.path().join("list.txt");
    std::fs::write(&list, format!("{}\n/nonexistent/ghost.wav\n", good.display())).unwrap();
    let scores_path = dir.path().join("scores.tsv");
    let out = bin()
        .args(["score", "--checkpoint"])
        .arg(run.join("model.aasf"))
        .arg("--list")
        .arg(&list)
        .arg("--out")
        .arg(&scores_path)
        .output()
        .unwrap();
    assert!(!out.status.success(), "skipped files must fail the exit code");
    assert!(stderr(&out).contains("ghost.wav"), "{}", stderr(&out));
    let rows = parse_scores(&std::fs::read_to_string(&scores_path).unwrap()).unwrap();
    assert_eq!(rows.len(), 1, "the good file still gets scored");
}

#[test]
fn empty_list_writes_empty_scores_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "5", "--out"])
        .arg(&run)
        .status()
        .unwrap()
        .success());
    let list = dir.path().join("empty.txt");
    std::fs::write(&list, "").unwrap();
    let scores_path = dir.path().join("scores.tsv");
    let out = bin()
        .args(["score", "--checkpoint"])
        .arg(run.join("model.aasf"))
        .arg("--list")
        .arg(&list)
        .arg("--out")
        .arg(&scores_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(&scores_path).unwrap(), "");
}

#[test]
fn repeated_paths_get_distinct_score_ids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "5", "--out"])
        .arg(&run)
        .status()
        .unwrap()
        .success());
    let w = tone_wav(dir.path(), "w.wav", 210.0);
    let list = dir.path().join("list.txt");
    std::fs::write(&list, format!("{}\n{}\n", w.display(), w.display())).unwrap();
    let scores_path = dir.path().join("scores.tsv");
    assert!(bin()
        .args(["score", "--checkpoint"])
        .arg(run.join("model.aasf"))
        .arg("--list")
        .arg(&list)
        .arg("--out")
        .arg(&scores_path)
        .status()
        .unwrap()
        .success());
    let rows = parse_scores(&std::fs::read_to_string(&scores_path).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].0, w.display().to_string());
    assert_eq!(rows[1].0, format!("{}#2", w.display()));
    assert_eq!(rows[0].1, rows[1].1, "same audio, same score");
}

#[test]
fn rerunning_the_same_seed_reproduces_artifacts_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (run_a, run_b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&run_a, &run_b] {
        assert!(bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .args(["--seed", "9", "--out"])
            .arg(out_dir)
            .status()
            .unwrap()
            .success());
    }
    let ckpt_a = std::fs::read(run_a.join("model.aasf")).unwrap();
    let ckpt_b = std::fs::read(run_b.join("model.aasf")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "checkpoint must be bit-identical across reruns");
    let hist_a = std::fs::read(run_a.join("history.tsv")).unwrap();
    let hist_b = std::fs::read(run_b.join("history.tsv")).unwrap();
    assert_eq!(hist_a, hist_b, "history must be bit-identical across reruns");
}

#[test]
fn eval_reports_zero_eer_on_perfect_separation() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.tsv");
    std::fs::write(&scores, "b1\t0.9\nb2\t0.8\ns1\t-0.7\ns2\t-0.3\n").unwrap();
    let labels = dir.path().join("labels.tsv");
    std::fs::write(&labels, "b1\tbonafide\nb2\tbonafide\ns1\tspoof\ns2\tspoof\n").unwrap();
    let out = bin()
        .args(["eval", "--scores"])
        .arg(&scores)
        .arg("--labels")
        .arg(&labels)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("EER=0.0000 "), "{}", stdout(&out));
}

#[test]
fn eval_reports_fifty_percent_on_interleaved_scores() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.tsv");
    std::fs::write(&scores, "b1\t1\nb2\t3\ns1\t0\ns2\t2\n").unwrap();
    let labels = dir.path().join("labels.tsv");
    std::fs::write(&labels, "b1\tbonafide\nb2\tbonafide\ns1\tspoof\ns2\tspoof\n").unwrap();
    let out = bin()
        .args(["eval", "--scores"])
        .arg(&scores)
        .arg("--labels")
        .arg(&labels)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("EER=50.0000 "), "{}", stdout(&out));
}

#[test]
fn eval_fails_when_a_scored_id_has_no_label() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.tsv");
    std::fs::write(&scores, "b1\t0.9\nmystery\t0.1\n").unwrap();
    let labels = dir.path().join("labels.tsv");
    std::fs::write(&labels, "b1\tbonafide\n").unwrap();
    let out = bin()
        .args(["eval", "--scores"])
        .arg(&scores)
        .arg("--labels")
        .arg(&labels)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("mystery"), "{}", stderr(&out));
}

#[test]
fn gradcheck_command_passes_and_reports_modules() {
    let out = bin()
        .args(["gradcheck", "--samples", "1", "--seed", "7"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("-> ok"), "{text}");
    for module in ["sinc front end", "residual encoder", "graph attention", "readout"] {
        assert!(text.contains(module), "missing {module} in:\n{text}");
    }
}
