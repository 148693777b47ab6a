//! End-to-end runs of the command-line front end on small corpora.

use std::collections::HashMap;
use std::path::Path;

use lanepred::checkpoint::Checkpoint;
use lanepred::cli::{load_setting, run_args};
use lanepred::data::{evaluation_set, for_each_sample, frame_normalize, read_corpus, write_corpus, HorizonConfig, Sample};
use lanepred::eval::{MetricsReport, CSV_HEADER};
use lanepred::models::ModelKind;
use lanepred::{Error, Result};

fn run(args: &[&str]) -> Result<String> {
    let mut out = Vec::new();
    let mut full = vec!["lanepred"];
    full.extend_from_slice(args);
    run_args(full, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A five-minute scene sampled for two settings.
fn small_corpus(dir: &Path) -> std::path::PathBuf {
    let corpus = dir.join("corpus.jsonl");
    run(&["generate", "-o", path(&corpus), "--seed", "4", "--duration", "300", "--horizon", "1:1", "--horizon", "3:2"]).unwrap();
    corpus
}

fn train(corpus: &Path, ckpt: &Path, model: &str, extra: &[&str]) -> Result<String> {
    let mut args = vec!["train", "--corpus", path(corpus), "--checkpoint", path(ckpt), "--model", model, "--history", "1", "--future", "1"];
    args.extend_from_slice(extra);
    run(&args)
}

const TINY: [&str; 4] = ["--epochs", "2", "--hidden-size", "6"];

#[test]
fn generate_summary_matches_corpus_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let args = |p: &Path| vec!["generate".to_string(), "-o".into(), path(p).into(), "--seed".into(), "9".into(), "--horizon".into(), "1:1".into(), "--horizon".into(), "5:3".into()];
    let summary = {
        let mut out = Vec::new();
        run_args(std::iter::once("lanepred".to_string()).chain(args(&a)), &mut out).unwrap();
        String::from_utf8(out).unwrap()
    };
    let mut out = Vec::new();
    run_args(std::iter::once("lanepred".to_string()).chain(args(&b)), &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), summary);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let mut counted: HashMap<(String, String), [usize; 3]> = HashMap::new();
    for_each_sample(&a, |s| {
        let key = (s.horizon.history_seconds.to_string(), s.horizon.future_seconds.to_string());
        counted.entry(key).or_default()[s.label.index()] += 1;
        Ok(())
    })
    .unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "history_seconds,future_seconds,left,right,none");
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        let f: Vec<&str> = line.split(',').collect();
        let c: Vec<usize> = f[2..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(c.iter().all(|&n| n > 0), "{line}");
        assert_eq!(counted[&(f[0].to_string(), f[1].to_string())].to_vec(), c);
    }
}

#[test]
fn unsupported_generate_horizon_needs_override() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.jsonl");
    assert!(run(&["generate", "-o", path(&c), "--duration", "60", "--horizon", "2:1"]).is_err());
    run(&["generate", "-o", path(&c), "--duration", "60", "--horizon", "2:1", "--allow-custom-horizon"]).unwrap();
    assert!(read_corpus(&c).unwrap().iter().all(|s| s.len() == 25));
}

#[test]
fn unwritable_output_and_infeasible_generator_fail() {
    assert!(matches!(run(&["generate", "-o", "/nonexistent-dir/c.jsonl", "--duration", "60"]), Err(Error::Io { .. })));
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.jsonl");
    assert!(run(&["generate", "-o", path(&c), "--lanes", "1"]).is_err());
}

#[test]
fn train_log_and_checkpoint_reload_match_in_process_eval() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ckpt = dir.path().join("m.json");
    let log = train(&corpus, &ckpt, "lane_srnn", &TINY).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,loss,validation_balanced_accuracy");
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let loss: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!(loss.is_finite() && loss > 0.0, "{l}");
    }

    let report = dir.path().join("r.csv");
    let printed = run(&["eval", "--corpus", path(&corpus), "--checkpoint", path(&ckpt), "--report", path(&report)]).unwrap();
    assert_eq!(std::fs::read_to_string(&report).unwrap(), printed);
    let rows: Vec<&str> = printed.lines().collect();
    assert_eq!(rows[0], CSV_HEADER);
    assert_eq!(rows[1].split(',').count(), 12);
    assert!(rows[1].starts_with("lane_srnn,1,1,"));
    assert_eq!(run(&["eval", "--corpus", path(&corpus), "--checkpoint", path(&ckpt)]).unwrap(), printed);

    let ck = Checkpoint::load(&ckpt).unwrap();
    let h = HorizonConfig::new(1.0, 1.0).unwrap();
    let eval = evaluation_set(&load_setting(&corpus, &h).unwrap(), ck.split_seed, &ck.standardizer).unwrap();
    let counts = ck.model.evaluate(&eval).unwrap();
    assert_eq!(rows[1], MetricsReport::from_counts(ModelKind::LaneSrnn, &h, &counts).csv_row());
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let log_a = train(&corpus, &a, "single_lstm", &TINY).unwrap();
    let log_b = train(&corpus, &b, "single_lstm", &TINY).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn hmm_routes_to_state_search() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ckpt = dir.path().join("h.json");
    let log = train(&corpus, &ckpt, "hmm", &["--hmm-states", "2,3", "--hmm-max-iters", "5"]).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines, vec!["num_states,validation_macro_f1", lines[1], lines[2]]);
    assert!(lines[1].starts_with("2,") && lines[2].starts_with("3,"));
    assert_eq!(Checkpoint::load(&ckpt).unwrap().kind(), ModelKind::Hmm);
    let row = run(&["eval", "--corpus", path(&corpus), "--checkpoint", path(&ckpt)]).unwrap();
    assert!(row.lines().nth(1).unwrap().starts_with("hmm,1,1,"));
}

#[test]
fn request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ckpt = dir.path().join("m.json");
    assert!(matches!(train(&corpus, &ckpt, "transformer", &TINY), Err(Error::Config(_))));
    let missing = run(&["train", "--corpus", path(&corpus), "--checkpoint", path(&ckpt), "--model", "hmm", "--history", "5", "--future", "1"]);
    assert!(matches!(missing, Err(Error::MissingSetting { .. })));
    let absent = dir.path().join("absent.jsonl");
    assert!(matches!(train(&absent, &ckpt, "hmm", &[]), Err(Error::Io { .. })));

    train(&corpus, &ckpt, "single_factor_srnn", &TINY).unwrap();
    let mismatch = run(&["eval", "--corpus", path(&corpus), "--checkpoint", path(&ckpt), "--history", "3", "--future", "2"]);
    assert!(mismatch.is_err());
    assert!(run(&["eval", "--corpus", path(&corpus), "--checkpoint", path(&corpus)]).is_err());
}

#[test]
fn oracle_labels_give_perfect_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ckpt = dir.path().join("m.json");
    train(&corpus, &ckpt, "lane_srnn", &["--epochs", "1", "--hidden-size", "8"]).unwrap();
    let ck = Checkpoint::load(&ckpt).unwrap();

    // Relabel every sample with the checkpoint's own prediction.
    let h = HorizonConfig::new(1.0, 1.0).unwrap();
    let mut samples: Vec<Sample> = load_setting(&corpus, &h).unwrap();
    let prepared: Vec<Sample> = samples.iter().map(|s| ck.standardizer.apply(&frame_normalize(s))).collect();
    let predicted = ck.model.predict_labels(&prepared).unwrap();
    for (s, p) in samples.iter_mut().zip(&predicted) {
        s.label = *p;
    }
    let relabeled = dir.path().join("oracle.jsonl");
    write_corpus(&relabeled, &samples).unwrap();

    let out = run(&["eval", "--corpus", path(&relabeled), "--checkpoint", path(&ckpt)]).unwrap();
    let row = out.lines().nth(1).unwrap();
    let values: Vec<&str> = row.split(',').skip(3).collect();
    assert_eq!(values.len(), 9);
    assert!(values.iter().all(|v| *v == "1.000000"), "{row}");
}

#[test]
fn config_file_supplies_settings_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ckpt = dir.path().join("m.json");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "seed = 3\ncorpus = {:?}\ncheckpoint = {:?}\nmodel = \"single_lstm\"\nhistory_seconds = 1.0\nfuture_seconds = 1.0\n\n[arch]\nhidden_size = 5\n\n[training]\nepochs = 3\n",
            path(&corpus),
            path(&ckpt)
        ),
    )
    .unwrap();
    let log = run(&["train", "--config", path(&cfg), "--epochs", "1"]).unwrap();
    assert_eq!(log.lines().count(), 2);
    let ck = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(ck.kind(), ModelKind::SingleLstm);
    assert_eq!(ck.split_seed, 3);
    assert_eq!(ck.settings.arch.hidden_size, 5);
    assert_eq!(ck.settings.training.epochs, 1);

    std::fs::write(&cfg, "sed = 3\n").unwrap();
    assert!(matches!(run(&["train", "--config", path(&cfg)]), Err(Error::Config(_))));
}
