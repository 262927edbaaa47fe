mod common;

use std::fs;

use common::*;
use fcanet::data::{read_eval_sets, Manifest};
use fcanet::model::FcaNet;
use fcanet::Tensor;
use fcanet_cli::{CHECKPOINT_FILE, EVAL_FILE, FOOTPRINT_FILE, HISTORY_FILE};

const WORDS: [&str; 4] = ["yes", "no", "up", "bird"];

fn prepared(dir: &std::path::Path, extra: &str) -> (Corpus, std::path::PathBuf) {
    let corpus = Corpus::create(dir, &WORDS, 10);
    let cfg = corpus.config("run", &format!("{TINY}{extra}"));
    let out = fcanet(&["prepare", "--config", path(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    (corpus, cfg)
}

#[test]
fn prepare_is_reproducible_and_lists_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::create(dir.path(), &WORDS, 10);
    let cfg = corpus.config("run", "");
    let first = fcanet(&["prepare", "--config", path(&cfg)]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let again = fcanet(&["prepare", "--config", path(&cfg)]);
    assert_eq!(stdout(&first), stdout(&again));
    assert_eq!(stdout(&first).lines().filter(|l| l.contains(".bin")).count(), 5);

    let prepared = dir.path().join("prepared");
    let manifest = fs::read_to_string(prepared.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), corpus.files);
    assert_eq!(Manifest::read(&prepared).unwrap().noise.len(), 2);

    let other = fcanet(&["prepare", "--config", path(&cfg), "--seed", "9", "--out", path(&dir.path().join("p9"))]);
    assert_eq!(code(&other), 0);
    assert_ne!(stdout(&first), stdout(&other));
}

#[test]
fn prepare_rejects_missing_noise_dir() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::create(dir.path(), &WORDS, 5);
    fs::remove_dir_all(&corpus.noise).unwrap();
    let out = fcanet(&["prepare", "--config", path(&corpus.config("run", ""))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("noise directory"), "{}", stderr(&out));
}

#[test]
fn unknown_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "blocks = 2\nlearning_rate = 0.1\n").unwrap();
    for cmd in ["train", "count", "prepare"] {
        let out = fcanet(&[cmd, "--config", path(&cfg)]);
        assert_eq!(code(&out), 2, "{cmd}");
        assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
    }
    assert_eq!(code(&fcanet(&["frobnicate"])), 2);
}

#[test]
fn train_eval_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, cfg) = prepared(dir.path(), "");
    let run = dir.path().join("run");
    let out = fcanet(&["train", "--config", path(&cfg), "--out", path(&run)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let history = fs::read_to_string(run.join(HISTORY_FILE)).unwrap();
    assert_eq!(history.lines().next().unwrap(), "epoch,stage,lr,train_loss,train_acc,val_acc,seconds");
    assert!((2..=4).contains(&history.lines().count()));
    let ckpt = run.join(CHECKPOINT_FILE);
    let net = FcaNet::load(&ckpt).unwrap();

    // evaluation is byte-stable and covers the five conditions
    let eval = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = fcanet(&["eval", "--config", path(&cfg), "--checkpoint", path(&ckpt), "--out", path(&out_dir)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::read(out_dir.join(EVAL_FILE)).unwrap()
    };
    let (a, b) = (eval("e1"), eval("e2"));
    assert_eq!(a, b);
    let csv = String::from_utf8(a).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    let conditions: Vec<&str> = rows.iter().map(|r| r.split(',').nth(5).unwrap()).collect();
    assert_eq!(conditions, ["clean", "20", "0", "-5", "-10"]);
    for r in &rows {
        let acc: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    // resuming starts from exactly the saved weights
    let probe = Tensor::from_fn(net.input_dims(3), |i| ((i * 13) % 17) as f64 / 8.0 - 1.0);
    let reloaded = FcaNet::from_checkpoint(&net.to_checkpoint().unwrap()).unwrap();
    assert!(net.predict(&probe).unwrap().bit_eq(&reloaded.predict(&probe).unwrap()));
    let resumed = dir.path().join("resumed");
    let out = fcanet(&["train", "--config", path(&cfg), "--resume", path(&ckpt), "--out", path(&resumed)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // a checkpoint from another architecture is refused
    let wide = corpus.config("wide", &format!("{TINY}channels = 6\n"));
    for args in [
        vec!["eval", "--config", path(&wide), "--checkpoint", path(&ckpt)],
        vec!["train", "--config", path(&wide), "--resume", path(&ckpt)],
    ] {
        let out = fcanet(&args);
        assert_eq!(code(&out), 2);
        assert!(stderr(&out).contains("channels"), "{}", stderr(&out));
    }
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = prepared(dir.path(), "lr0 = 1e200\n");
    let out = fcanet(&["train", "--config", path(&cfg), "--out", path(&dir.path().join("run"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("numeric"), "{}", stderr(&out));
}

#[test]
fn random_weights_score_near_chance_on_balanced_classes() {
    let dir = tempfile::tempdir().unwrap();
    let words = ["up", "down", "left", "right", "yes", "no", "on", "off", "go", "stop", "bird"];
    let corpus = Corpus::create(dir.path(), &words, 20);
    let cfg = corpus.config("run", &format!("{TINY}silence_fraction = {}\n", 1.0 / 11.0));
    assert_eq!(code(&fcanet(&["prepare", "--config", path(&cfg)])), 0);
    let sets = read_eval_sets(&dir.path().join("prepared")).unwrap();
    let mut counts = [0usize; 12];
    sets[0].clips.iter().for_each(|c| counts[c.label] += 1);
    assert!(counts.iter().all(|&c| c == counts[0]), "{counts:?}");

    let model = fcanet::config::RunConfig::load(&cfg).unwrap().model;
    let ckpt = dir.path().join("random.fcan");
    FcaNet::build(&model, 3).unwrap().save(&ckpt).unwrap();
    let out_dir = dir.path().join("eval");
    let out = fcanet(&["eval", "--config", path(&cfg), "--checkpoint", path(&ckpt), "--out", path(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let n = sets[0].clips.len() as f64;
    let bound = 3.0 * ((1.0 / 12.0) * (11.0 / 12.0) / n).sqrt();
    for row in fs::read_to_string(out_dir.join(EVAL_FILE)).unwrap().lines().skip(1) {
        let acc: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((acc - 1.0 / 12.0).abs() <= bound, "{row}");
    }
}

#[test]
fn count_reports_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let out = fcanet(&["count", "--all", "--out", path(dir.path())]);
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(dir.path().join(FOOTPRINT_FILE)).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 13);
    assert_eq!(rows[0][0], "convmixer");
    let default = rows.iter().find(|r| r[0] == "fcanet-all-c2d").unwrap();
    let (params, macs): (f64, f64) = (default[3].parse().unwrap(), default[4].parse().unwrap());
    assert!((params / 119e3 - 1.0).abs() <= 0.10, "{params}");
    assert!((macs / 22.3e6 - 1.0).abs() <= 0.10, "{macs}");
    let base: f64 = rows[0][4].parse().unwrap();
    assert!((macs - base) / macs <= 0.01);

    let cfg = dir.path().join("deep.cfg");
    fs::write(&cfg, "blocks = 10\n").unwrap();
    let deep = fcanet(&["count", "--config", path(&cfg), "--out", path(&dir.path().join("deep"))]);
    assert_eq!(code(&deep), 0);
    let deep = fs::read_to_string(dir.path().join("deep").join(FOOTPRINT_FILE)).unwrap();
    let row: Vec<&str> = deep.lines().nth(1).unwrap().split(',').collect();
    assert!(row[3].parse::<f64>().unwrap() > params && row[4].parse::<f64>().unwrap() > macs);

    let again = fcanet(&["count", "--all", "--out", path(dir.path())]);
    assert_eq!(stdout(&out), stdout(&again));
}

#[test]
fn gradcheck_passes_and_catches_a_broken_backward() {
    let out = fcanet(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    let variants = text.lines().filter(|l| l.starts_with("fcanet-")).count();
    assert_eq!(variants, 12);

    let broken = fcanet(&["gradcheck", "--corrupt"]);
    assert_eq!(code(&broken), 1);
    assert!(stdout(&broken).contains("corrupted_backward"));
}
