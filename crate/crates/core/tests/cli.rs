use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcnet::audio::{read_wav, write_wav, PcmFormat};
use mcnet::config::RunConfig;
use ndarray::Array2;

fn mcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcnet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mcnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn last_line(s: &str) -> PathBuf {
    PathBuf::from(s.lines().last().unwrap().trim())
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn fixture(extra: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let corpus = root.join("corpus");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    ok(&[
        "corpus", "--out", &s(&corpus), "--speech", "4", "--noise", "2", "--min-seconds", "1.5", "--max-seconds", "2",
        "--noise-seconds", "8", "--seed", "3",
    ]);
    let config = root.join("run.toml");
    fs::write(
        &config,
        format!(
            "speech_manifest = \"corpus/speech.txt\"\nnoise_manifest = \"corpus/noise.txt\"\n\
             hidden_width = 4\nlstm_hidden = [6, 6, 6, 6]\ntrain_frames = 8\ndev_count = 2\n\
             steps_per_epoch = 2\nmax_epochs = 2\nckpt_dir = \"{}\"\n{extra}",
            s(&root.join("ckpt"))
        ),
    )
    .unwrap();
    Fixture { _dir: dir, root, config }
}

#[test]
fn simulate_writes_deterministic_split() {
    let fx = fixture("");
    let cfg = fx.config.to_str().unwrap();
    let a = fx.root.join("a");
    let b = fx.root.join("b");
    let manifest = last_line(&ok(&["simulate", "-c", cfg, "--out", a.to_str().unwrap(), "--count", "3", "--seed", "9"]));
    ok(&["simulate", "-c", cfg, "--out", b.to_str().unwrap(), "--count", "3", "--seed", "9"]);
    assert_eq!(manifest, a.join("manifest.csv"));
    for kind in ["noisy.wav", "clean.wav", "json"] {
        let n = fs::read_dir(&a)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_str().unwrap().ends_with(kind))
            .count();
        assert_eq!(n, 3, "{kind}");
    }
    for i in 0..3 {
        let name = format!("utt{i:04}.json");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    let mut rdr = csv::Reader::from_path(&manifest).unwrap();
    for rec in rdr.records() {
        let snr: f64 = rec.unwrap()[4].parse().unwrap();
        assert!((-5.0..=10.0).contains(&snr));
    }
}

#[test]
fn train_enhance_evaluate_round_trip() {
    let fx = fixture("mode = \"online\"\n");
    let cfg = fx.config.to_str().unwrap();
    let test = fx.root.join("test");
    let manifest = last_line(&ok(&["simulate", "-c", cfg, "--out", test.to_str().unwrap(), "--count", "2"]));
    let ckpt = last_line(&ok(&["train", "-c", cfg, "--seed", "1"]));
    assert!(ckpt.exists());
    assert!(fx.root.join("ckpt/epochs.jsonl").exists());
    assert!(fx.root.join("ckpt/config.toml").exists());

    let input = test.join("utt0000.noisy.wav");
    let (noisy, _) = read_wav(&input).unwrap();
    let online = fx.root.join("online.wav");
    let offline = fx.root.join("offline.wav");
    let c = ckpt.to_str().unwrap();
    ok(&["enhance", "--checkpoint", c, "--input", input.to_str().unwrap(), "--output", online.to_str().unwrap(), "--mode", "online"]);
    ok(&["enhance", "--checkpoint", c, "--input", input.to_str().unwrap(), "--output", offline.to_str().unwrap(), "--mode", "offline"]);
    let (a, fs_a) = read_wav(&online).unwrap();
    let (b, _) = read_wav(&offline).unwrap();
    assert_eq!(fs_a, 16000);
    assert_eq!(a.dim(), (noisy.nrows(), 1));
    let gap = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-5, "online/offline gap {gap}");

    let report = fx.root.join("model.csv");
    ok(&["evaluate", "--checkpoint", c, "--testset", manifest.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("utterance_id,"));
    assert_eq!(text.lines().count(), 4);

    let wrong = fx.root.join("stereo.wav");
    write_wav(&wrong, &Array2::zeros((4000, 2)), 16000, PcmFormat::Int16).unwrap();
    let out = mcnet(&["enhance", "--checkpoint", c, "--input", wrong.to_str().unwrap(), "--output", online.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("channels"));
}

#[test]
fn baselines_and_reports() {
    let fx = fixture("");
    let cfg = fx.config.to_str().unwrap();
    let test = fx.root.join("test");
    let manifest = last_line(&ok(&["simulate", "-c", cfg, "--out", test.to_str().unwrap(), "--count", "2", "--snr", "7.5"]));
    let m = manifest.to_str().unwrap();
    let mut means = Vec::new();
    for b in ["noisy", "oracle-cirm", "oracle-mvdr"] {
        let report = fx.root.join(format!("{b}.csv"));
        let r = report.to_str().unwrap();
        ok(&["evaluate", "--baseline", b, "--testset", m, "--report", r]);
        let first = fs::read(&report).unwrap();
        ok(&["evaluate", "--baseline", b, "--testset", m, "--report", r]);
        assert_eq!(first, fs::read(&report).unwrap());
        let mut rdr = csv::Reader::from_path(&report).unwrap();
        let sdr_col = rdr.headers().unwrap().iter().position(|h| h == "sdr").unwrap();
        let mean = rdr
            .records()
            .map(|r| r.unwrap())
            .find(|r| &r[0] == "mean")
            .unwrap()[sdr_col]
            .parse::<f64>()
            .unwrap();
        means.push(mean);
    }
    assert!((means[0] - 7.5).abs() < 1.0, "noisy SDR {}", means[0]);
    assert!(means[1] >= 40.0, "oracle cIRM SDR {}", means[1]);
    assert!(means[2] > means[0], "oracle MVDR {} vs noisy {}", means[2], means[0]);
}

#[test]
fn ablation_and_config_errors() {
    let fx = fixture("");
    let cfg = fx.config.to_str().unwrap();
    let out = ok(&["train", "-c", cfg, "--ablate", "3", "--overfit-one-batch", "--steps", "2"]);
    assert!(out.contains("ratio"));
    let saved = RunConfig::load(Some(&fx.root.join("ckpt/config.toml")), &[]).unwrap();
    assert_eq!(saved.enabled_modules, vec![1, 2, 4]);

    let bad = mcnet(&["train", "-c", cfg, "--set", "decay=1.5"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("decay"));
    let unknown = mcnet(&["train", "-c", cfg, "--set", "learning_rate=1"]);
    assert_eq!(unknown.status.code(), Some(2));
    let missing = mcnet(&["simulate", "--out", fx.root.join("x").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    let no_testset = mcnet(&[
        "evaluate", "--baseline", "noisy", "--testset", "/no/such/manifest.csv", "--report", "/tmp/never.csv",
    ]);
    assert_eq!(no_testset.status.code(), Some(3));
}
