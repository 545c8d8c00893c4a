use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use xumx_core::data::{save_wav, synth_dataset, write_musdb_layout, SynthSpec};
use xumx_core::dsp::Waveform;

const TINY: &str = r#"
[dataset]
num_tracks = 5
duration_s = 2.0
valid_tracks = 1
test_tracks = 1

[model]
hidden_size = 8

[train]
epochs = 2
excerpt_s = 1.0
samples_per_track = 2
"#;

fn xumx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xumx"))
        .args(args)
        .env_remove("XUMX_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A model trained once and shared by every separation test.
fn trained_model() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    let dir = DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), "tiny.toml", TINY);
        let out = xumx(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        dir
    });
    Box::leak(dir.path().join("run/model.ckpt").into_boxed_path())
}

fn tracks(n: usize, duration_s: f64) -> Vec<xumx_core::data::Track> {
    synth_dataset(&SynthSpec {
        num_tracks: n,
        duration_s,
        seed: 9,
        ..SynthSpec::default()
    })
    .unwrap()
}

#[test]
fn train_writes_checkpoint_and_history() {
    let model = trained_model();
    assert!(model.is_file());
    let history = fs::read_to_string(model.with_file_name("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,valid_loss,lr"));
    assert_eq!(history.lines().count(), 3);
}

#[test]
fn musdb_dataset_without_path_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[dataset]\nkind = \"musdb\"\n");
    let out = xumx(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("dataset.path"), "{}", stderr(&out));
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[train]\nlearning_rate = 0.1\n");
    let out = xumx(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn divergent_training_exits_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        &TINY.replace("epochs = 2", "epochs = 2\nlr = 1e6"),
    );
    let out = xumx(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("epoch 1"), "{}", stderr(&out));
}

#[test]
fn separate_single_file_writes_every_stem() {
    let dir = tempfile::tempdir().unwrap();
    let t = &tracks(1, 1.5)[0];
    let input = dir.path().join("song.wav");
    save_wav(&input, &t.mixture).unwrap();
    let outdir = dir.path().join("sep");
    let out = xumx(&[
        "separate",
        "--model",
        s(trained_model()),
        "--input",
        s(&input),
        "--outdir",
        s(&outdir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["bass", "drums", "other", "vocals"] {
        let stem = xumx_core::data::load_wav(&outdir.join("song").join(format!("{name}.wav"))).unwrap();
        assert_eq!(stem.len(), t.mixture.len());
    }
}

#[test]
fn separate_directory_writes_one_folder_per_track() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    write_musdb_layout(&input, &tracks(2, 1.0)).unwrap();
    let outdir = dir.path().join("sep");
    let out = xumx(&[
        "separate",
        "--model",
        s(trained_model()),
        "--input",
        s(&input),
        "--outdir",
        s(&outdir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut made: Vec<_> = fs::read_dir(&outdir).unwrap().map(|e| e.unwrap().file_name()).collect();
    made.sort();
    let mut expected: Vec<_> = fs::read_dir(&input).unwrap().map(|e| e.unwrap().file_name()).collect();
    expected.sort();
    assert_eq!(made, expected);
}

#[test]
fn separate_rejects_other_sample_rates() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("fast.wav");
    save_wav(&input, &Waveform::new(vec![0.1; 16000], 16000).unwrap()).unwrap();
    let out = xumx(&[
        "separate",
        "--model",
        s(trained_model()),
        "--input",
        s(&input),
        "--outdir",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("16000"), "{}", stderr(&out));
}

#[test]
fn eval_of_identical_stems_hits_the_clamp() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("refs");
    write_musdb_layout(&refs, &tracks(2, 3.0)).unwrap();
    let csv_out = dir.path().join("scores.csv");
    let out = xumx(&["eval", "--refs", s(&refs), "--ests", s(&refs), "--out", s(&csv_out)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let mut rows = csv::Reader::from_path(dir.path().join("scores_summary.csv")).unwrap();
    let mut n = 0;
    for row in rows.records() {
        let row = row.unwrap();
        if &row[1] == "SDR" {
            assert_eq!(row[2].parse::<f64>().unwrap(), 100.0);
        }
        n += 1;
    }
    // Four sources, two metrics.
    assert_eq!(n, 8);
    // Two tracks, three one-second frames, four sources, two metrics.
    let frames = fs::read_to_string(&csv_out).unwrap();
    assert_eq!(frames.lines().count(), 1 + 2 * 3 * 4 * 2);
}

#[test]
fn eval_names_a_missing_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("refs");
    let ests = dir.path().join("ests");
    let t = tracks(1, 1.0);
    write_musdb_layout(&refs, &t).unwrap();
    write_musdb_layout(&ests, &t).unwrap();
    let missing = ests.join(&t[0].name).join("drums.wav");
    fs::remove_file(&missing).unwrap();
    let out = xumx(&[
        "eval",
        "--refs",
        s(&refs),
        "--ests",
        s(&ests),
        "--out",
        s(&dir.path().join("e.csv")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("drums.wav"), "{}", stderr(&out));
}

#[test]
fn ablate_rejects_unknown_variants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", TINY);
    let out = xumx(&[
        "ablate",
        "--config",
        s(&cfg),
        "--variants",
        "C1,Q9",
        "--out",
        s(&dir.path().join("a")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("Q9"), "{}", stderr(&out));
}

#[test]
fn ablate_writes_one_row_per_variant_source_and_metric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &TINY.replace("epochs = 2", "epochs = 1"));
    let out_dir = dir.path().join("a");
    let out = xumx(&[
        "ablate",
        "--config",
        s(&cfg),
        "--variants",
        "P,C1",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let results = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 4 * 2);
    // Canonical order regardless of the order given.
    assert!(results.lines().nth(1).unwrap().starts_with("C1,"));
    for f in ["boxplot_sdr.csv", "boxplot_sar.csv", "C1/model.ckpt", "P/history.csv"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn seed_comes_from_the_environment_when_not_configured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &TINY.replace("epochs = 2", "epochs = 1"));
    let run = |name: &str, env_seed: Option<&str>, flag: Option<&str>| {
        let out_dir = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_xumx"));
        cmd.args(["train", "--config", s(&cfg), "--out", s(&out_dir)])
            .env_remove("XUMX_SEED");
        if let Some(v) = env_seed {
            cmd.env("XUMX_SEED", v);
        }
        if let Some(v) = flag {
            cmd.args(["--seed", v]);
        }
        let out = cmd.output().unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::read(out_dir.join("model.ckpt")).unwrap()
    };
    let from_env = run("env", Some("5"), None);
    let from_flag = run("flag", None, Some("5"));
    let default = run("default", None, None);
    let flag_wins = run("both", Some("6"), Some("5"));
    assert_eq!(from_env, from_flag);
    assert_eq!(flag_wins, from_flag);
    assert_ne!(from_env, default);
}
