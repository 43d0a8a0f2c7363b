use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ncmimo::artifact::ModelArtifact;
use ncmimo::core::channel::{sample_block, ChannelConfig};
use ncmimo::core::modem::{pml_logits, DecoderSpec};
use ncmimo::core::RngStream;
use ncmimo::csvio::{read_constellation, read_curves};
use tempfile::TempDir;

fn ncmimo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncmimo")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ncmimo(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_config(k: u32, l: usize, m: usize, n: usize, decoder: &str) -> String {
    format!(
        "seed = 1\n[operating_point]\nk = {k}\nL = {l}\nm = {m}\nn = {n}\n[decoder]\n{decoder}\n\
         [training]\nsnr_db = 12.0\nbatch = 128\nmax_iterations = 40\neval_interval = 10\nvalidation_size = 500\n"
    )
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn trained(dir: &Path, k: u32, l: usize, m: usize, n: usize) -> PathBuf {
    let cfg = write(dir, "run.toml", &run_config(k, l, m, n, "kind = \"pml\"\nlambda = 1.0"));
    let out = dir.join("model");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    out.join("model.json")
}

#[test]
fn train_writes_artifact_and_logs_deterministically() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "run.toml", &run_config(2, 2, 2, 2, "kind = \"pml\"\nlambda = 1.0"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--config", s(&cfg), "--out", s(&a), "--seed", "4"]);
    ok(&["train", "--config", s(&cfg), "--out", s(&b), "--seed", "4"]);
    for f in ["model.json", "train_log.csv", "eval_log.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let log = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "iteration,objective,cross_entropy,ortho_loss,theta");
    assert_eq!(log.lines().count(), 41);
    let evals = fs::read_to_string(a.join("eval_log.csv")).unwrap();
    assert_eq!(evals.lines().collect::<Vec<_>>()[0], "iteration,val_bler");
    assert_eq!(evals.lines().count(), 5);
    let model = ModelArtifact::load(&a.join("model.json")).unwrap();
    assert_eq!(model.meta.seed, 4);

    let c = tmp.path().join("c");
    ok(&["train", "--config", s(&cfg), "--out", s(&c), "--seed", "5"]);
    assert_ne!(fs::read(a.join("model.json")).unwrap(), fs::read(c.join("model.json")).unwrap());
}

#[test]
fn bad_configs_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let missing = write(tmp.path(), "m.toml", &run_config(2, 2, 2, 2, "kind = \"pml\""));
    let r = ncmimo(&["train", "--config", s(&missing), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("decoder.lambda"));

    let unknown = write(tmp.path(), "u.toml", &run_config(2, 2, 2, 2, "kind = \"pml\"\nlambda = 1.0\nlamda = 2.0"));
    assert_eq!(ncmimo(&["train", "--config", s(&unknown), "--out", s(&out)]).status.code(), Some(2));

    let r = ncmimo(&["train", "--config", s(&tmp.path().join("none.toml")), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn eval_emits_seven_rows_per_system() {
    let tmp = TempDir::new().unwrap();
    let model = trained(tmp.path(), 2, 2, 2, 2);
    let csv = tmp.path().join("eval.csv");
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--snr",
        "0:30:5",
        "--trials",
        "500",
        "--baseline",
        "coherent",
        "--out",
        s(&csv),
    ]);
    let rows = read_curves(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 14);
    for sys in ["pml", "coherent"] {
        let snrs: Vec<f64> = rows.iter().filter(|r| r.system == sys).map(|r| r.snr_db).collect();
        assert_eq!(snrs, vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
    }
    for r in &rows {
        assert_eq!(r.trials, 500);
        assert_eq!(r.bler, r.errors as f64 / 500.0);
        assert!(0.0 <= r.ci_lo && r.ci_lo <= r.bler && r.bler <= r.ci_hi && r.ci_hi <= 1.0);
    }
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "system,snr_db,trials,errors,bler,ci_lo,ci_hi");

    let again = tmp.path().join("again.csv");
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--snr",
        "0:30:5",
        "--trials",
        "500",
        "--baseline",
        "coherent",
        "--out",
        s(&again),
    ]);
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn eval_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let model = trained(tmp.path(), 2, 2, 2, 2);
    assert_eq!(ncmimo(&["eval", "--model", s(&model), "--trials", "0"]).status.code(), Some(2));
    assert_eq!(ncmimo(&["eval", "--model", s(&model), "--snr", "0:30"]).status.code(), Some(2));
    assert_eq!(ncmimo(&["eval", "--model", s(&model), "--snr", "5:0:1"]).status.code(), Some(2));
    assert_eq!(ncmimo(&["eval", "--model", s(&model), "--baseline", "oracle"]).status.code(), Some(2));
    let missing = tmp.path().join("missing.json");
    assert_eq!(ncmimo(&["eval", "--model", s(&missing)]).status.code(), Some(2));
}

#[test]
fn adaptive_eval_stops_on_error_count() {
    let tmp = TempDir::new().unwrap();
    let model = trained(tmp.path(), 2, 2, 2, 2);
    let out = ok(&["eval", "--model", s(&model), "--snr", "0:0:1", "--trials", "1000000", "--min-errors", "50"]);
    let rows = read_curves(&out.stdout[..]).unwrap();
    assert_eq!(rows.len(), 1);
    // at 0 dB every chunk of 10^4 has far more than 50 errors
    assert_eq!(rows[0].trials, 10_000);
    assert!(rows[0].errors >= 50);
}

fn sweep_grid(dir: &Path) -> PathBuf {
    write(
        dir,
        "grid.toml",
        "seed = 3\n[operating_points]\nk = [2]\nshapes = [{ L = 2, m = 2, n = 2 }, { L = 2, m = 1, n = 2 }]\n\
         [decoders]\npml_lambda = [1.0, 3.0]\n[training]\nsnr_db = [12.0]\nbatch = 128\nmax_iterations = 30\n\
         eval_interval = 10\nvalidation_size = 500\n",
    )
}

#[derive(serde::Deserialize)]
struct Summary {
    rank: usize,
    index: usize,
    dir: String,
    status: String,
    best_val_bler: Option<f64>,
}

fn summary(dir: &Path) -> Vec<Summary> {
    csv::Reader::from_path(dir.join("summary.csv")).unwrap().deserialize().map(|r| r.unwrap()).collect()
}

#[test]
fn sweep_two_by_two_grid() {
    let tmp = TempDir::new().unwrap();
    let grid = sweep_grid(tmp.path());
    let one = tmp.path().join("one");
    ok(&["sweep", "--grid", s(&grid), "--out", s(&one), "--parallel", "1"]);
    let rows = summary(&one);
    assert_eq!(rows.len(), 4);
    let mut dirs: Vec<_> = fs::read_dir(&one)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    dirs.sort();
    assert_eq!(dirs, ["run_0000", "run_0001", "run_0002", "run_0003"]);
    assert_eq!(rows.iter().map(|r| r.rank).collect::<Vec<_>>(), [1, 2, 3, 4]);
    let mut idx: Vec<_> = rows.iter().map(|r| r.index).collect();
    idx.sort();
    assert_eq!(idx, [0, 1, 2, 3]);
    let min = rows.iter().filter(|r| r.status == "ok").filter_map(|r| r.best_val_bler).fold(f64::INFINITY, f64::min);
    assert_eq!(rows[0].status, "ok");
    assert_eq!(rows[0].best_val_bler, Some(min));
    for r in &rows {
        assert_eq!(r.dir, format!("run_{:04}", r.index));
        let model = ModelArtifact::load(&one.join(&r.dir).join("model.json")).unwrap();
        assert_eq!(Some(model.meta.best_val_bler), r.best_val_bler);
    }

    let four = tmp.path().join("four");
    ok(&["sweep", "--grid", s(&grid), "--out", s(&four), "--parallel", "4"]);
    for i in 0..4 {
        for f in ["model.json", "train_log.csv", "eval_log.csv"] {
            let p = format!("run_{i:04}/{f}");
            assert_eq!(fs::read(one.join(&p)).unwrap(), fs::read(four.join(&p)).unwrap(), "{p}");
        }
    }
    assert_eq!(fs::read(one.join("summary.csv")).unwrap(), fs::read(four.join("summary.csv")).unwrap());
}

#[test]
fn sweep_dry_run_lists_runs_without_training() {
    let tmp = TempDir::new().unwrap();
    let grid = sweep_grid(tmp.path());
    let out = ok(&["sweep", "--grid", s(&grid), "--dry-run"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("index,k,L,m,n,decoder,lambda,depth,hidden,snr_db,seed,batch,max_iterations\n"));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn export_constellation_round_trip() {
    let tmp = TempDir::new().unwrap();
    let model_path = trained(tmp.path(), 4, 2, 2, 2);
    let csv = tmp.path().join("points.csv");
    ok(&["export", "--model", s(&model_path), "--what", "constellation", "--out", s(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 64);

    // average power recomputed straight from the text
    let mut power = 0.0;
    for line in text.lines().skip(1) {
        let f: Vec<f64> = line.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
        power += f[0] * f[0] + f[1] * f[1];
    }
    assert!((power / 64.0 - 1.0).abs() < 1e-12, "{power}");

    let model = ModelArtifact::load(&model_path).unwrap();
    let back = read_constellation(fs::File::open(&csv).unwrap(), 4, 2, 2).unwrap();
    let DecoderSpec::Pml { theta } = model.decoder else { panic!() };
    let cfg = ChannelConfig::from_snr_db(2, 2, 2, 10.0).unwrap();
    let mut rng = RngStream::new(8, 0);
    for t in 0..100 {
        let (h, z) = sample_block(&cfg, &mut rng);
        let y = h.matmul(&model.codebook.words()[t % 16]).unwrap().add(&z).unwrap();
        let (a, b) = (pml_logits(&y, &model.codebook, theta).unwrap(), pml_logits(&y, &back, theta).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn export_posterior_demo() {
    let tmp = TempDir::new().unwrap();
    let model = trained(tmp.path(), 2, 2, 2, 2);
    let out = ok(&["export", "--model", s(&model), "--what", "posterior-demo", "--count", "20", "--seed", "2"]);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "sample,message,decision,p_0,p_1,p_2,p_3");
    let mut n = 0;
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let p = &f[3..];
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let argmax = (0..4).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        assert_eq!(f[2] as usize, argmax);
        n += 1;
    }
    assert_eq!(n, 20);
    let again = ok(&["export", "--model", s(&model), "--what", "posterior-demo", "--count", "20", "--seed", "2"]);
    assert_eq!(out.stdout, again.stdout);
    assert_eq!(ncmimo(&["export", "--model", s(&model), "--what", "histogram"]).status.code(), Some(2));
}
