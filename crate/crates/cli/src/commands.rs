//! Command bodies, kept separate from argument parsing so they can be
//! exercised directly in tests.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use aasist_core::checkpoint::{apply_checkpoint, load_checkpoint, save_checkpoint, Dtype};
use aasist_core::metrics::compute_eer;
use aasist_core::model::{describe, ModelParams};
use aasist_core::scorefile::{parse_scores, render_scores};
use aasist_core::train::{fit, history_tsv, score_wave};
use aasist_core::verify::verify_gradients;
use aasist_core::wav::read_wav;

use crate::config::CliConfig;

/// Train once per seed. With several seeds each run lands in its own
/// `seed-<s>` subdirectory; a single seed writes into `out` directly.
pub fn cmd_train(config: &CliConfig, seeds: &[u64], out: &Path) -> Result<()> {
    for &seed in seeds {
        let run_dir: PathBuf = if seeds.len() == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("seed-{seed}"))
        };
        fs::create_dir_all(&run_dir)
            .with_context(|| format!("creating {}", run_dir.display()))?;

        let run_cfg = config.with_seed(seed);
        let effective = run_cfg.render();
        println!("training with effective config:\n{effective}");

        let (record, params) = fit(run_cfg.train.clone())?;

        let ckpt_path = run_dir.join("model.aasf");
        fs::write(&ckpt_path, save_checkpoint(&effective, &params, Dtype::F64))
            .with_context(|| format!("writing {}", ckpt_path.display()))?;
        let hist_path = run_dir.join("history.tsv");
        fs::write(&hist_path, history_tsv(&record.history))
            .with_context(|| format!("writing {}", hist_path.display()))?;

        println!(
            "seed {seed}: final train accuracy {:.2}% mean loss {:.4} -> {}",
            record.final_accuracy * 100.0,
            record.final_mean_loss,
            run_dir.display()
        );
    }
    Ok(())
}

/// Score every WAV listed (one path per line) with a trained checkpoint.
/// Returns `true` when rows were skipped, so the caller can exit nonzero
/// after still writing the scores that did succeed.
pub fn cmd_score(checkpoint: &Path, list: &Path, out: &Path) -> Result<bool> {
    let bytes = fs::read(checkpoint)
        .with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    let ckpt = load_checkpoint(&bytes).context("parsing checkpoint")?;
    let cfg = CliConfig::parse(&ckpt.config).context("parsing the checkpoint's config")?;
    let mut params = ModelParams::init(&cfg.train.model, 0);
    apply_checkpoint(&mut params, &ckpt).context("restoring parameters")?;

    let listing = fs::read_to_string(list)
        .with_context(|| format!("reading wav list {}", list.display()))?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<(String, f64)> = Vec::new();
    let mut any_skipped = false;
    for line in listing.lines() {
        let path = line.trim();
        if path.is_empty() {
            continue;
        }
        match read_wav(Path::new(path)) {
            Ok(wave) => {
                let score = score_wave(&cfg.train.model, &params, &wave.samples);
                let n = seen.entry(path.to_string()).or_insert(0);
                *n += 1;
                let id =
                    if *n == 1 { path.to_string() } else { format!("{path}#{n}") };
                rows.push((id, score));
            }
            Err(err) => {
                eprintln!("warning: skipping {path}: {err}");
                any_skipped = true;
            }
        }
    }
    fs::write(out, render_scores(&rows))
        .with_context(|| format!("writing scores to {}", out.display()))?;
    Ok(any_skipped)
}

/// Equal error rate of a score file against a label file
/// (`id<TAB>bonafide|spoof` lines). Returns the line to print.
pub fn cmd_eval(scores_path: &Path, labels_path: &Path) -> Result<String> {
    let scores_text = fs::read_to_string(scores_path)
        .with_context(|| format!("reading scores {}", scores_path.display()))?;
    let scores = parse_scores(&scores_text).context("parsing score file")?;

    let labels_text = fs::read_to_string(labels_path)
        .with_context(|| format!("reading labels {}", labels_path.display()))?;
    let mut labels: HashMap<String, bool> = HashMap::new();
    for (i, raw) in labels_text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line
            .split_once('\t')
            .with_context(|| format!("labels line {}: expected `id<TAB>label`", i + 1))?;
        let is_bona = match label.trim() {
            "bonafide" => true,
            "spoof" => false,
            other => bail!("labels line {}: unknown label `{other}`", i + 1),
        };
        if labels.insert(id.to_string(), is_bona).is_some() {
            bail!("labels line {}: duplicate id `{id}`", i + 1);
        }
    }

    let mut bona = Vec::new();
    let mut spoof = Vec::new();
    for (id, score) in &scores {
        match labels.get(id) {
            Some(true) => bona.push(*score),
            Some(false) => spoof.push(*score),
            None => bail!("no label for scored id `{id}`"),
        }
    }
    if bona.is_empty() || spoof.is_empty() {
        bail!("need at least one bonafide and one spoof score to compute an EER");
    }
    let (eer, threshold) = compute_eer(&bona, &spoof);
    Ok(format!("EER={:.4} threshold={:.4}", eer * 100.0, threshold))
}

/// Finite-difference gradient verification; returns the report text and
/// whether it passed.
pub fn cmd_gradcheck(samples_per_tensor: usize, seed: u64) -> (String, bool) {
    let report = verify_gradients(samples_per_tensor, seed);
    (report.render(), report.passed())
}

/// Architecture summary for a config.
pub fn cmd_info(config: &CliConfig) -> String {
    describe(&config.train.model)
}
