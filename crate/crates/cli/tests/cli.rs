use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scorewave::checkpoint::Checkpoint;
use scorewave::diffusion::{langevin_sample, realization_seed};
use scorewave::distort::{replay, ChainRecord, Pools};
use scorewave::schedule::{sweep_plan, NoiseSchedule};
use scorewave::scorenet::{NetConfig, ScoreNet};
use scorewave::seed;
use scorewave::signal::{read_wav, resample, write_wav, Signal, WavEncoding};
use scorewave::toy::{DenoisingConfig, DenoisingTask};
use serde_json::Value;

fn scorewave(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scorewave"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = scorewave(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn tone(path: &Path, seconds: f64, rate: u32, freq: f64) {
    let n = (seconds * rate as f64) as usize;
    let x = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            0.4 * (2.0 * std::f64::consts::PI * freq * t).sin() * (1.0 + 0.5 * (7.0 * t).sin())
        })
        .collect();
    write_wav(path, &Signal::new(x, rate).unwrap(), WavEncoding::Pcm16).unwrap();
}

fn manifest(dir: &Path, name: &str, lines: &[String]) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, lines.join("\n")).unwrap();
    p
}

#[test]
fn empty_manifest_gives_an_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    manifest(dir.path(), "m.txt", &[]);
    ok(
        dir.path(),
        &["distort", "--manifest", "m.txt", "--out", "out"],
    );
    let lines = json_lines(&dir.path().join("out/chains.jsonl"));
    assert_eq!(lines.len(), 1, "only the config header");
    assert_eq!(lines[0]["command"], "distort");
}

#[test]
fn distortion_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    tone(&dir.path().join("a.wav"), 0.5, 16_000, 300.0);
    manifest(dir.path(), "m.txt", &["a.wav".into()]);
    for out in ["o1", "o2"] {
        ok(
            dir.path(),
            &[
                "--seed",
                "17",
                "distort",
                "--manifest",
                "m.txt",
                "--out",
                out,
            ],
        );
    }
    for f in ["clean/000000_a.wav", "distorted/000000_a.wav"] {
        let a = std::fs::read(dir.path().join("o1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("o2").join(f)).unwrap();
        assert!(!a.is_empty() && a == b, "{f} differs");
    }
    let (a, b) = (
        json_lines(&dir.path().join("o1/chains.jsonl")),
        json_lines(&dir.path().join("o2/chains.jsonl")),
    );
    for key in ["seed", "chain", "offset", "guarded", "input"] {
        assert_eq!(a[1][key], b[1][key], "{key}");
    }
}

#[test]
fn logged_chains_replay_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    for i in 0..100 {
        let rate = if i % 10 == 0 { 22_050 } else { 16_000 };
        let name = format!("f{i}.wav");
        tone(&dir.path().join(&name), 0.25, rate, 150.0 + 7.0 * i as f64);
        lines.push(name);
    }
    manifest(dir.path(), "m.txt", &lines);
    ok(
        dir.path(),
        &[
            "--seed",
            "4",
            "distort",
            "--manifest",
            "m.txt",
            "--out",
            "out",
        ],
    );
    let log = json_lines(&dir.path().join("out/chains.jsonl"));
    assert_eq!(log.len(), 101);
    assert_eq!(log[0]["seed"], 4);
    let replay_dir = tempfile::tempdir().unwrap();
    for (i, line) in log[1..].iter().enumerate() {
        let record: ChainRecord = serde_json::from_value(line.clone()).unwrap();
        let mut clean = read_wav(dir.path().join(&record.input), true).unwrap();
        if clean.sample_rate != 16_000 {
            clean = resample(&clean, 16_000).unwrap();
        }
        let pair = replay(&record, &clean, &Pools::default()).unwrap();
        assert_eq!(pair.offset, record.offset);
        let p = replay_dir.path().join(format!("{i}.wav"));
        write_wav(&p, &pair.distorted, WavEncoding::Float32).unwrap();
        let original = std::fs::read(dir.path().join(&record.distorted_output)).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), original, "record {i}");
    }
}

#[test]
fn failed_files_set_a_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    tone(&dir.path().join("a.wav"), 0.25, 16_000, 300.0);
    manifest(dir.path(), "m.txt", &["a.wav".into(), "missing.wav".into()]);
    let out = scorewave(
        dir.path(),
        &["distort", "--manifest", "m.txt", "--out", "out"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json_lines(&dir.path().join("out/chains.jsonl")).len(), 2);
}

#[test]
fn exit_codes_follow_the_error_category() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "sampling = { step = 3 }\n").unwrap();
    let out = scorewave(dir.path(), &["--config", "bad.toml", "sweep", "--oracle"]);
    assert_eq!(out.status.code(), Some(2));
    let out = scorewave(
        dir.path(),
        &["eval", "--reference", "none.wav", "--estimate", "none.wav"],
    );
    assert_eq!(out.status.code(), Some(3));
    write_wav(
        dir.path().join("silent.wav"),
        &Signal::new(vec![0.0; 4000], 16_000).unwrap(),
        WavEncoding::Pcm16,
    )
    .unwrap();
    tone(&dir.path().join("t.wav"), 0.25, 16_000, 300.0);
    let out = scorewave(
        dir.path(),
        &["eval", "--reference", "silent.wav", "--estimate", "t.wav"],
    );
    assert_eq!(out.status.code(), Some(4));
    let out = scorewave(
        dir.path(),
        &["sweep", "--oracle", "--steps", "4", "--epsilon", "0.5"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_scores_identical_files_ideally() {
    let dir = tempfile::tempdir().unwrap();
    tone(&dir.path().join("t.wav"), 0.5, 16_000, 300.0);
    ok(
        dir.path(),
        &["eval", "--reference", "t.wav", "--estimate", "t.wav"],
    );
    let rows = json_lines(&dir.path().join("eval.jsonl"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["snr"], 100.0);
    assert_eq!(rows[1]["lsd"], 0.0);
    assert_eq!(rows[1]["mrstft"]["total"], 0.0);
}

const SMALL_MODEL: &str =
    "[model]\nhidden = [16, 16]\nembed_dim = 8\nn_pairs = 4\n[train]\nbatch_size = 32\n";

#[test]
fn zero_iterations_store_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL_MODEL).unwrap();
    ok(
        dir.path(),
        &[
            "--config",
            "c.toml",
            "--seed",
            "8",
            "train",
            "--iterations",
            "0",
            "--out",
            "m.ck",
        ],
    );
    let ck = Checkpoint::load(dir.path().join("m.ck")).unwrap();
    let cfg = NetConfig {
        hidden: vec![16, 16],
        embed_dim: 8,
        n_pairs: 4,
        ..Default::default()
    };
    let init = ScoreNet::new(cfg, &mut seed::child_rng(8, 0)).unwrap();
    assert_eq!(ck.net.params(), init.params());
    assert_eq!(
        ck.net.embedding().frequencies(),
        init.embedding().frequencies()
    );
    assert_eq!(ck.meta.iteration, 0);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL_MODEL).unwrap();
    let base = [
        "--config",
        "c.toml",
        "--seed",
        "2",
        "train",
        "--iterations",
        "200",
    ];
    ok(dir.path(), &[&base[..], &["--out", "full.ck"]].concat());
    ok(
        dir.path(),
        &[&base[..], &["--out", "part.ck", "--until", "70"]].concat(),
    );
    assert_eq!(
        Checkpoint::load(dir.path().join("part.ck"))
            .unwrap()
            .meta
            .iteration,
        70
    );
    ok(
        dir.path(),
        &["train", "--resume", "part.ck", "--out", "part.ck"],
    );
    let full = std::fs::read(dir.path().join("full.ck")).unwrap();
    assert_eq!(std::fs::read(dir.path().join("part.ck")).unwrap(), full);

    let trace = json_lines(&dir.path().join("full.ck.trace.jsonl"));
    assert_eq!(trace.len(), 201);
    assert!(trace[1..]
        .iter()
        .all(|r| r["loss"].as_f64().unwrap().is_finite()));
    // Reloading reproduces forward passes exactly.
    let ck = Checkpoint::load(dir.path().join("full.ck")).unwrap();
    let again = Checkpoint::load(dir.path().join("full.ck")).unwrap();
    let a = ck.net.forward(&[0.7], &[], 0.3, false).unwrap().score;
    assert_eq!(a, again.net.forward(&[0.7], &[], 0.3, false).unwrap().score);
}

/// Writes clean and noisy WAVs made of denoising-task windows.
fn toy_pair(dir: &Path, windows: usize) {
    let task = DenoisingTask::new(DenoisingConfig::default()).unwrap();
    let pairs = task.eval_set(windows, 5);
    let clean: Vec<f64> = pairs.iter().flat_map(|p| p.0.clone()).collect();
    let noisy: Vec<f64> = pairs.iter().flat_map(|p| p.1.clone()).collect();
    write_wav(
        dir.join("clean.wav"),
        &Signal::new(clean, 16_000).unwrap(),
        WavEncoding::Float32,
    )
    .unwrap();
    write_wav(
        dir.join("noisy.wav"),
        &Signal::new(noisy, 16_000).unwrap(),
        WavEncoding::Float32,
    )
    .unwrap();
}

#[test]
fn oracle_enhancement_improves_snr() {
    let dir = tempfile::tempdir().unwrap();
    toy_pair(dir.path(), 400);
    let args = [
        "enhance",
        "--oracle",
        "--input",
        "noisy.wav",
        "--reference",
        "clean.wav",
        "--steps",
        "8",
        "--realizations",
        "4",
    ];
    ok(dir.path(), &[&args[..], &["--output", "a.wav"]].concat());
    ok(dir.path(), &[&args[..], &["--output", "b.wav"]].concat());
    assert_eq!(
        std::fs::read(dir.path().join("a.wav")).unwrap(),
        std::fs::read(dir.path().join("b.wav")).unwrap()
    );
    let log = json_lines(&dir.path().join("a.wav.jsonl"));
    let gain = log[1]["snr_improvement_db"].as_f64().unwrap();
    assert!(gain > 0.0, "improvement {gain}");
}

#[test]
fn one_realization_is_a_single_sample() {
    let dir = tempfile::tempdir().unwrap();
    toy_pair(dir.path(), 3);
    ok(
        dir.path(),
        &[
            "--seed",
            "6",
            "enhance",
            "--oracle",
            "--input",
            "noisy.wav",
            "--output",
            "e.wav",
            "--steps",
            "5",
        ],
    );
    let out = read_wav(dir.path().join("e.wav"), false).unwrap();
    let noisy = read_wav(dir.path().join("noisy.wav"), false).unwrap();
    let task = DenoisingTask::new(DenoisingConfig::default()).unwrap();
    let plan = sweep_plan(&NoiseSchedule::default(), 5, 2.3).unwrap();
    for (i, w) in noisy.samples.chunks(8).enumerate() {
        let s = langevin_sample(
            &task.oracle(),
            w,
            &plan,
            8,
            realization_seed(seed::derive(6, i as u64), 0),
        )
        .unwrap();
        let stored: Vec<f64> = s.iter().map(|v| *v as f32 as f64).collect();
        assert_eq!(&out.samples[8 * i..8 * i + 8], stored.as_slice());
    }
}

#[test]
fn sweep_rows_and_rtf_trend() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "sweep",
            "--oracle",
            "--steps",
            "1",
            "--epsilon",
            "2.3",
            "--pairs",
            "20",
            "--log",
            "one.jsonl",
        ],
    );
    assert_eq!(json_lines(&dir.path().join("one.jsonl")).len(), 2);

    ok(
        dir.path(),
        &[
            "sweep",
            "--oracle",
            "--steps",
            "1,4,16,64",
            "--epsilon",
            "2.3",
            "--pairs",
            "400",
        ],
    );
    let rows = json_lines(&dir.path().join("sweep.jsonl"));
    let rtf: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r["rtf"].as_f64().unwrap())
        .collect();
    assert!(rtf.windows(2).all(|w| w[1] > w[0]), "{rtf:?}");
}

#[test]
fn prior_samples_follow_the_mixture_weights() {
    let dir = tempfile::tempdir().unwrap();
    // sigma_max^2 well above the mixture variance (about 3.5), so the
    // sampler's Gaussian start matches the perturbed prior.
    std::fs::write(
        dir.path().join("c.toml"),
        "[schedule]\nsigma_min = 5e-4\nsigma_max = 20.0\n",
    )
    .unwrap();
    let out = ok(
        dir.path(),
        &[
            "--config",
            "c.toml",
            "sample-prior",
            "--oracle",
            "--count",
            "4000",
            "--steps",
            "200",
            "--epsilon",
            "1.5",
        ],
    );
    let lines = json_lines(&dir.path().join("samples.jsonl"));
    assert_eq!(lines.len(), 4001);
    let n0 = lines[1..].iter().filter(|l| l["component"] == 0).count() as f64;
    let (w, n) = (0.3, 4000.0);
    assert!(
        ((n0 / n - w) / (w * (1.0 - w) / n).sqrt()).abs() < 3.0,
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn enhance_rejects_mismatched_inputs() {
    let dir = tempfile::tempdir().unwrap();
    tone(&dir.path().join("t.wav"), 0.1, 8_000, 300.0);
    let out = scorewave(
        dir.path(),
        &[
            "enhance", "--oracle", "--input", "t.wav", "--output", "o.wav",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("c.toml"), SMALL_MODEL).unwrap();
    ok(
        dir.path(),
        &[
            "--config",
            "c.toml",
            "train",
            "--task",
            "gmm",
            "--iterations",
            "0",
            "--out",
            "g.ck",
        ],
    );
    tone(&dir.path().join("u.wav"), 0.1, 16_000, 300.0);
    let out = scorewave(
        dir.path(),
        &[
            "enhance",
            "--checkpoint",
            "g.ck",
            "--input",
            "u.wav",
            "--output",
            "o.wav",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
