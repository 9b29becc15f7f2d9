use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use t3sc::hsi::{read_hsr, write_hsr, HsiCube, HSR_MAGIC};
use t3sc::model::T3sc;
use t3sc::Tensor;

fn t3sc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t3sc"))
        .args(args)
        .env("T3SC_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = t3sc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = t3sc(args);
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, bands: usize, size: usize) -> Vec<PathBuf> {
    ok(&[
        "synth",
        "--out-dir",
        p(dir),
        "--count",
        &count.to_string(),
        "--bands",
        &bands.to_string(),
        "--size",
        &size.to_string(),
        "--seed",
        "3",
        "--sensor",
        "s",
    ]);
    (0..count).map(|i| dir.join(format!("cube_{i:04}.hsr"))).collect()
}

fn write_config(dir: &Path, extra_train: &str, estimator: bool) -> PathBuf {
    let noise = if extra_train.contains("noise") { "" } else { "noise = \"iid:25\"" };
    let text = format!(
        r#"
[data]
train = ["cubes/cube_0000.hsr", "cubes/cube_0001.hsr"]
normalization = "none"
patch = 16
scales = [[1, 16]]

[model]
sensors = [{{ id = "s", bands = 6 }}]
p1 = 4
p2 = 8
rank = 2
side = 3
t1 = 2
t2 = 2
estimator = {estimator}
estimator_tile = 8

[train]
batch_size = 2
lr = 1e-3
{noise}
seed = 1
{extra_train}

[output]
checkpoint_every = 2
"#
    );
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn payload(path: &Path) -> Vec<u8> {
    let bytes = fs::read(path).unwrap();
    let c = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    bytes[33..33 + 4 * c * h * w].to_vec()
}

#[test]
fn simulate_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cubes = synth(&dir.path().join("cubes"), 1, 31, 12);
    let input = p(&cubes[0]);
    let zero = dir.path().join("zero.hsr");
    ok(&["simulate", "--in", input, "--noise", "iid:0", "--seed", "5", "--out", p(&zero)]);
    assert_eq!(payload(&zero), payload(&cubes[0]));

    let a = dir.path().join("a.hsr");
    let b = dir.path().join("b.hsr");
    for out in [&a, &b] {
        ok(&["simulate", "--in", input, "--noise", "stripes", "--seed", "9", "--out", p(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let sidecar = fs::read_to_string(dir.path().join("a.hsr.noise.txt")).unwrap();
    assert!(sidecar.lines().any(|l| l == "stripe_bands 10"), "{sidecar}");
    assert_eq!(sidecar.lines().filter(|l| l.starts_with("stripe_band ")).count(), 10);

    let (status, err) = code(&["simulate", "--in", input, "--noise", "pink:3", "--out", p(&a)]);
    assert_eq!(status, 2, "{err}");
    let (status, _) = code(&["simulate", "--in", p(&dir.path().join("nope.hsr")), "--noise", "iid:1", "--out", p(&a)]);
    assert_eq!(status, 3);
}

#[test]
fn train_resume_denoise_eval_info() {
    let dir = tempfile::tempdir().unwrap();
    let cubes = synth(&dir.path().join("cubes"), 2, 6, 16);
    let cfg = write_config(dir.path(), "", false);
    let ckpt = dir.path().join("run.ckpt");
    let log = dir.path().join("run.ckpt.log");

    ok(&["train", "--config", p(&cfg), "--out", p(&ckpt), "--max-steps", "3"]);
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3);
    assert!(fs::read_to_string(dir.path().join("run.ckpt.toml")).unwrap().contains("[train]"));
    ok(&["train", "--config", p(&cfg), "--out", p(&ckpt), "--resume", p(&ckpt), "--max-steps", "5"]);
    let lines: Vec<String> = fs::read_to_string(&log).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 5);
    let steps: Vec<&str> = lines.iter().map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(steps, ["0", "1", "2", "3", "4"]);

    // an uninterrupted run reaches the same state
    let straight = dir.path().join("straight.ckpt");
    ok(&["train", "--config", p(&cfg), "--out", p(&straight), "--max-steps", "5"]);
    assert_eq!(fs::read(&straight).unwrap(), fs::read(&ckpt).unwrap());

    let info = ok(&["info", "--ckpt", p(&ckpt)]);
    assert!(info.contains("step 5"), "{info}");
    let ck = t3sc::checkpoint::load_checkpoint::<f32>(&ckpt).unwrap();
    let m: &T3sc<f32> = &ck.model;
    let l1 = m.spectral["s"].param_count();
    let l2 = m.spatial.param_count();
    assert!(info.contains(&format!("layer1 s bands 6 params {l1}")), "{info}");
    assert!(info.contains(&format!("layer2 params {l2}")), "{info}");
    assert!(info.contains(&format!("ratio layer2/layer1 s {:.1}", l2 as f64 / l1 as f64)), "{info}");

    let noisy = dir.path().join("noisy.hsr");
    ok(&["simulate", "--in", p(&cubes[0]), "--noise", "iid:25", "--seed", "2", "--out", p(&noisy)]);
    let den = dir.path().join("den.hsr");
    ok(&["denoise", "--ckpt", p(&ckpt), "--in", p(&noisy), "--out", p(&den)]);
    let d = read_hsr(&den).unwrap();
    assert_eq!(d.data.shape(), read_hsr(&noisy).unwrap().data.shape());
    let direct = m.denoise(&read_hsr(&noisy).unwrap().data, "s", None).unwrap();
    assert_eq!(d.data, direct);

    let (status, err) = code(&["denoise", "--ckpt", p(&ckpt), "--in", p(&noisy), "--out", p(&den), "--blind"]);
    assert_eq!(status, 2);
    assert!(err.contains("estimator"), "{err}");

    let report = dir.path().join("report.txt");
    ok(&["eval", "--ref", p(&cubes[0]), "--test", p(&den), "--out", p(&report)]);
    let human = fs::read_to_string(&report).unwrap();
    assert!(human.contains(env!("CARGO_PKG_VERSION")), "{human}");
    let kv = fs::read_to_string(dir.path().join("report.txt.kv")).unwrap();
    assert!(kv.lines().any(|l| l.starts_with("mpsnr ")), "{kv}");
}

#[test]
fn eval_identity_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cubes = synth(&dir.path().join("cubes"), 1, 4, 20);
    let x = p(&cubes[0]);
    let report = dir.path().join("r.txt");
    ok(&["eval", "--ref", x, "--test", x, "--out", p(&report)]);
    let kv = fs::read_to_string(dir.path().join("r.txt.kv")).unwrap();
    let get = |k: &str| {
        kv.lines()
            .find_map(|l| l.strip_prefix(&format!("{k} ")))
            .unwrap_or_else(|| panic!("{k} missing"))
            .to_string()
    };
    assert_eq!(get("mpsnr"), "inf");
    assert_eq!(get("mssim").parse::<f64>().unwrap(), 1.0);
    assert_eq!(get("ergas").parse::<f64>().unwrap(), 0.0);
    assert_eq!(get("msam").parse::<f64>().unwrap(), 0.0);

    let small = dir.path().join("small.hsr");
    write_hsr(&small, &HsiCube::new(Tensor::zeros(&[4, 10, 20])).unwrap()).unwrap();
    let (status, _) = code(&["eval", "--ref", x, "--test", p(&small)]);
    assert_eq!(status, 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", false);
    let (status, err) = code(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("x.ckpt"))]);
    assert_eq!(status, 2);
    assert!(err.contains("data.train[0]"), "{err}");

    synth(&dir.path().join("cubes"), 2, 6, 16);
    let cfg = write_config(dir.path(), "batchsize = 3", false);
    let (status, err) = code(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("x.ckpt"))]);
    assert_eq!(status, 2);
    assert!(err.contains("train.batchsize"), "{err}");

    let cfg = write_config(dir.path(), "mode = \"ssl\"\nssl_n = 6", false);
    let (status, err) = code(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("x.ckpt"))]);
    assert_eq!(status, 2);
    assert!(err.contains("train.ssl_n"), "{err}");
}

#[test]
fn ssl_and_blind_training() {
    let dir = tempfile::tempdir().unwrap();
    let cubes = synth(&dir.path().join("cubes"), 2, 6, 16);
    let cfg = write_config(dir.path(), "mode = \"ssl\"\nssl_n = 2", false);
    let ckpt = dir.path().join("ssl.ckpt");
    ok(&["train", "--config", p(&cfg), "--out", p(&ckpt), "--max-steps", "2"]);
    let den = dir.path().join("den.hsr");
    ok(&["denoise", "--ckpt", p(&ckpt), "--in", p(&cubes[1]), "--out", p(&den)]);
    let ck = t3sc::checkpoint::load_checkpoint::<f32>(&ckpt).unwrap();
    let want = t3sc::train::ssl_denoise(&ck.model, &read_hsr(&cubes[1]).unwrap().data, "s", 2).unwrap();
    assert_eq!(read_hsr(&den).unwrap().data, want);

    let cfg = write_config(dir.path(), "noise = \"band:10:70\"", true);
    let ckpt = dir.path().join("blind.ckpt");
    ok(&["train", "--config", p(&cfg), "--out", p(&ckpt), "--max-steps", "2"]);
    ok(&["denoise", "--ckpt", p(&ckpt), "--in", p(&cubes[1]), "--out", p(&den), "--blind"]);
    let info = ok(&["info", "--ckpt", p(&ckpt)]);
    assert!(info.contains("estimator params"), "{info}");
}

#[test]
fn info_and_import() {
    let dir = tempfile::tempdir().unwrap();
    let hdr = dir.path().join("r.hdr");
    let raw = dir.path().join("r.raw");
    fs::write(
        &hdr,
        "ENVI\nsamples = 2\nlines = 1\nbands = 2\ndata type = 12\nbyte order = 1\ninterleave = bsq\n",
    )
    .unwrap();
    fs::write(&raw, [0u8, 0, 0, 100, 0, 200, 1, 0]).unwrap();
    let out = dir.path().join("imp.hsr");
    ok(&["import", "--header", p(&hdr), "--data", p(&raw), "--out", p(&out), "--sensor", "s"]);
    let cube = read_hsr(&out).unwrap();
    assert_eq!(cube.data.data(), &[0.0, 100.0, 200.0, 256.0]);
    assert_eq!(cube.sensor_id.as_deref(), Some("s"));

    let norm = dir.path().join("norm.hsr");
    ok(&["import", "--header", p(&hdr), "--data", p(&raw), "--out", p(&norm), "--normalize", "global"]);
    assert_eq!(read_hsr(&norm).unwrap().data.data(), &[0.0, 100.0 / 256.0, 200.0 / 256.0, 1.0]);

    let info = ok(&["info", "--in", p(&out)]);
    assert!(info.contains("bands 2 height 1 width 2"), "{info}");
    assert!(info.contains("sensor s"), "{info}");

    fs::write(&hdr, "samples = 2\nlines = 1\nbands = 2\ndata type = 12\ninterleave = bil\n").unwrap();
    let (status, err) = code(&["import", "--header", p(&hdr), "--data", p(&raw), "--out", p(&out)]);
    assert_eq!(status, 3);
    assert!(err.contains("interleave"), "{err}");

    let corrupt = dir.path().join("bad.hsr");
    let mut bytes = HSR_MAGIC.to_vec();
    bytes.extend([1, 0, 0]);
    fs::write(&corrupt, bytes).unwrap();
    let (status, err) = code(&["info", "--in", p(&corrupt)]);
    assert_eq!(status, 3);
    assert!(err.starts_with("error:"), "{err}");
    let (status, _) = code(&["info", "--ckpt", p(&corrupt)]);
    assert_eq!(status, 3);
}
