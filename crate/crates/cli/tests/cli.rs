use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gravnet::dataset::load_dataset;
use gravnet::model::load_checkpoint;

fn gravnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gravnet"))
        .args(args)
        .env_remove("GRAVNET_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gravnet(args);
    assert!(
        out.status.success(),
        "gravnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn reference_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.cfg")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(dir.path(), "a.nbds"), path(dir.path(), "b.nbds"));
    let csv = path(dir.path(), "a.csv");
    let args = ["simulate", "--scenario", "spiral", "--n", "3", "--steps", "1", "--seed", "4"];
    ok(&[&args[..], &["--out", &a, "--csv", &csv]].concat());
    ok(&[&args[..], &["--out", &b]].concat());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let data = load_dataset(&a).unwrap();
    assert_eq!(data.scene_count(), 1);
    assert_eq!(data.scenes[0].frame_count(), 1);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 3);
    assert!(text.starts_with("frame,particle,mass,x,y,z"));
}

#[test]
fn reference_profile_gives_sixty_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "data.nbds");
    // full profile with a short horizon so the test stays quick
    ok(&["gen-dataset", "--config", reference_config().to_str().unwrap(), "--steps", "2", "--out", &out]);
    let data = load_dataset(&out).unwrap();
    assert_eq!(data.scene_count(), 60);
    assert_eq!(data.header.dt, 1e-4);
    assert_eq!(data.header.g, 4.5e-6);
    let mut sizes: Vec<usize> = data.scenes.iter().map(|s| s.particle_count()).collect();
    sizes.dedup();
    assert_eq!(sizes, vec![3, 25, 50, 100, 250, 500]);
}

#[test]
fn train_then_rollout_writes_step_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "data.nbds");
    let model = path(dir.path(), "model.nbdm");
    let log = path(dir.path(), "log.csv");
    let csv = path(dir.path(), "out.csv");
    let cum = path(dir.path(), "cum.csv");
    ok(&["gen-dataset", "--set", "scene_sizes=25", "--set", "scenes_per_size=3", "--steps", "100", "--out", &data]);
    ok(&["train", "--data", &data, "--out", &model, "--epochs", "2", "--d", "8", "--history-depth", "1", "--log", &log]);
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(log_text.lines().next(), Some("epoch,mean_loss,seconds"));
    assert_eq!(log_text.lines().count(), 3);
    let ckpt = load_checkpoint(&model).unwrap();
    assert_eq!(ckpt.history_depth, 1);
    assert_eq!(ckpt.params.config.d, 8);

    ok(&["rollout", "--model", &model, "--scene-seed", "7", "--n", "25", "--steps", "100", "--csv", &csv, "--cumulative", &cum]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,mse_pos,mse_vel,mse_acc"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|f| f.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 101);
    assert_eq!((rows[0][1], rows[0][2]), (0.0, 0.0));
    assert!(rows.iter().all(|r| r.len() == 4 && r.iter().all(|v| v.is_finite())));
    let cum_rows = std::fs::read_to_string(&cum).unwrap().lines().count();
    assert_eq!(cum_rows, 102);

    let out = ok(&["eval", "--model", &model, "--data", &data]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().next(), Some("scene,n,frames,mse"));
    assert_eq!(stdout.lines().count(), 4);
}

#[test]
fn bench_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "data.nbds");
    let model = path(dir.path(), "model.nbdm");
    let bench = path(dir.path(), "bench.csv");
    let traj = path(dir.path(), "traj.csv");
    ok(&["simulate", "--n", "6", "--steps", "4", "--out", &data]);
    ok(&["train", "--data", &data, "--out", &model, "--epochs", "1", "--d", "4", "--L", "1", "--k", "3"]);
    ok(&["bench", "--model", &model, "--set", "scene_sizes=3,10", "--steps", "2", "--set", "repetitions=3", "--csv", &bench]);
    let text = std::fs::read_to_string(&bench).unwrap();
    assert_eq!(text.lines().next(), Some("scene,n,t_classical_s,t_surrogate_s,speedup"));
    assert_eq!(text.lines().count(), 3);
    ok(&["export-csv", "--data", &data, "--out", &traj]);
    assert_eq!(std::fs::read_to_string(&traj).unwrap().lines().count(), 1 + 4 * 6);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gravnet(&["simulate", "--bogus"]).status.code(), Some(1));
    assert_eq!(gravnet(&["fly"]).status.code(), Some(1));
    assert_eq!(gravnet(&[]).status.code(), Some(1));

    let cfg = path(dir.path(), "bad.cfg");
    std::fs::write(&cfg, "steps = 3\nwarp = 9\n").unwrap();
    let out = gravnet(&["simulate", "--config", &cfg, "--out", &path(dir.path(), "x.nbds")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warp"));

    let junk = path(dir.path(), "junk.nbds");
    std::fs::write(&junk, b"not a dataset at all").unwrap();
    let out = gravnet(&["export-csv", "--data", &junk, "--out", &path(dir.path(), "o.csv")]);
    assert_eq!(out.status.code(), Some(2));
    let out = gravnet(&["eval", "--model", &junk, "--data", &junk]);
    assert_eq!(out.status.code(), Some(2));
    let missing = path(dir.path(), "missing.nbds");
    assert_eq!(gravnet(&["export-csv", "--data", &missing, "--out", &junk]).status.code(), Some(2));

    let out = gravnet(&["simulate", "--n", "0", "--out", &path(dir.path(), "z.nbds")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_every_key_with_source() {
    let out = ok(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["dt", "G", "eps", "steps", "scenario", "history_depth", "train_fraction", "with_edge_attrs", "project_back", "bh_fraction"] {
        assert!(text.contains(key), "help misses {key}");
    }
    assert!(text.contains("reference profile") && text.contains("project default"));
    let sub = String::from_utf8(ok(&["train", "--help"]).stdout).unwrap();
    assert!(sub.contains("--batch-size") && sub.contains("batch_size"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "run.cfg");
    std::fs::write(&cfg, "n = 9\nsteps = 5\nscenario = cloud\n").unwrap();
    let out = path(dir.path(), "o.nbds");
    ok(&["simulate", "--config", &cfg, "--steps", "2", "--out", &out]);
    let data = load_dataset(&out).unwrap();
    assert_eq!(data.scenes[0].particle_count(), 9);
    assert_eq!(data.scenes[0].frame_count(), 2);
}

#[test]
fn thread_settings() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "t.nbds");
    ok(&["--threads", "2", "simulate", "--n", "4", "--steps", "1", "--set", "parallel=true", "--out", &out]);
    let status = Command::new(env!("CARGO_BIN_EXE_gravnet"))
        .args(["simulate", "--n", "4", "--steps", "1", "--out", &out])
        .env("GRAVNET_THREADS", "many")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}
