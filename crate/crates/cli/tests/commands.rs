use std::fs;
use std::path::{Path, PathBuf};

use kacflow_cli::config::ExperimentConfig;
use kacflow_cli::output::{RunManifest, MANIFEST_NAME};
use kacflow_core::velocity::{Checkpoint, Mlp};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

struct Run {
    code: u8,
    dir: PathBuf,
}

impl Run {
    fn manifest(&self) -> RunManifest {
        RunManifest::from_text(&fs::read_to_string(self.dir.join(MANIFEST_NAME)).unwrap()).unwrap()
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.dir.join(name)).unwrap()
    }

    fn csv(&self, name: &str) -> Vec<Vec<String>> {
        let text = self.read(name);
        text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
    }

    fn metric(&self, key: &str) -> f64 {
        self.manifest().metric(key).unwrap().parse().unwrap()
    }
}

fn kacflow(tmp: &Path, cmd: &str, name: &str, config: &str, extra: &[&str]) -> Run {
    let cfg = tmp.join(format!("{name}.cfg"));
    fs::write(&cfg, config).unwrap();
    let dir = tmp.join(name);
    let mut args = vec![
        "kacflow".to_string(),
        cmd.to_string(),
        "--config".into(),
        cfg.display().to_string(),
        "--out".into(),
        dir.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    Run {
        code: kacflow_cli::run(args),
        dir,
    }
}

fn file_hashes(run: &Run) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = run
        .manifest()
        .artifacts
        .iter()
        .map(|a| (a.path.clone(), a.sha256.clone()))
        .collect();
    out.sort();
    out
}

fn assert_manifest_complete(run: &Run) {
    let m = run.manifest();
    for entry in fs::read_dir(&run.dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name == MANIFEST_NAME {
            continue;
        }
        let a = m.artifact(&name).unwrap_or_else(|| panic!("{name} missing from manifest"));
        let bytes = fs::read(run.dir.join(&name)).unwrap();
        assert_eq!(a.sha256, hex::encode(Sha256::digest(&bytes)), "{name}");
        assert_eq!(a.bytes, bytes.len() as u64);
    }
    assert_eq!(m.artifacts.len(), fs::read_dir(&run.dir).unwrap().count() - 1);
}

#[test]
fn simulate_zero_duration_writes_headers_only() {
    let tmp = TempDir::new().unwrap();
    let run = kacflow(tmp.path(), "simulate", "sim", "simulate.t_end = 0\nsimulate.paths = 10\n", &[]);
    assert_eq!(run.code, 0);
    assert_eq!(run.read("paths.csv"), "path,t,x0\n");
    assert_eq!(run.read("jumps.csv"), "path,jumps\n");
    assert_manifest_complete(&run);
}

#[test]
fn simulate_jump_counts_match_the_poisson_mean() {
    let tmp = TempDir::new().unwrap();
    let cfg = "kac.a = 25\nsimulate.paths = 4000\nsimulate.t_end = 1\n";
    let run = kacflow(tmp.path(), "simulate", "sim", cfg, &[]);
    assert_eq!(run.code, 0);
    let sigma = (25.0f64 / 4000.0).sqrt();
    assert!((run.metric("mean_jumps") - 25.0).abs() < 3.0 * sigma);
    let again = kacflow(tmp.path(), "simulate", "sim2", cfg, &["--jobs", "1"]);
    let data = |r: &Run| -> Vec<_> { file_hashes(r).into_iter().filter(|(p, _)| p != "config.txt").collect() };
    assert_eq!(data(&run), data(&again));
}

#[test]
fn training_zero_iterations_keeps_the_initial_model() {
    let tmp = TempDir::new().unwrap();
    let run = kacflow(tmp.path(), "train", "tr", "train.iterations = 0\nmodel.hidden = 8\n", &[]);
    assert_eq!(run.code, 0);
    let ck = Checkpoint::from_text(&run.read("checkpoint.txt")).unwrap();
    let cfg = ExperimentConfig::default();
    let init = Mlp::new(1, 0, &[8], cfg.seed.derive("init")).unwrap();
    assert_eq!(ck.model.param_hash(), init.param_hash());
    assert_eq!(run.read("loss.csv"), "iteration,loss\n");
}

#[test]
fn training_loss_trends_down_on_two_modes() {
    let tmp = TempDir::new().unwrap();
    let cfg = "train.iterations = 1500\ntrain.optimizer = adam\ntrain.lr = 0.001\nmodel.hidden = 32,32\n";
    let run = kacflow(tmp.path(), "train", "tr", cfg, &[]);
    assert_eq!(run.code, 0);
    assert!(run.metric("loss_end") < run.metric("loss_start"));
    assert_eq!(run.csv("loss.csv").len(), 1501);
    assert_manifest_complete(&run);
}

#[test]
fn missing_dataset_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let run = kacflow(tmp.path(), "train", "tr", "data.path = /does/not/exist.csv\n", &[]);
    assert_eq!(run.code, 2);
}

#[test]
fn sampling_writes_n_rows_for_any_step_count() {
    let tmp = TempDir::new().unwrap();
    let mut w2 = Vec::new();
    for m in [1usize, 100] {
        let cfg = format!("sample.steps = {m}\nsample.n = 1000\nsched.g = linear\n");
        let run = kacflow(tmp.path(), "sample", &format!("m{m}"), &cfg, &[]);
        assert_eq!(run.code, 0);
        assert_eq!(run.csv("samples.csv").len(), 1001);
        assert_eq!(run.metric("nfe"), m as f64);
        w2.push((run.metric("w2_to_data"), run.metric("w2_stderr")));
    }
    let ((coarse, s1), (fine, s2)) = (w2[0], w2[1]);
    assert!(coarse - fine > 3.0 * (s1 * s1 + s2 * s2).sqrt(), "{w2:?}");
}

#[test]
fn sample_manifest_reports_integrator_accounting() {
    let tmp = TempDir::new().unwrap();
    for (method, nfe, evals) in [("midpoint", 20.0, 20.0), ("ab2", 10.0, 11.0)] {
        let cfg = format!("sample.method = {method}\nsample.steps = 10\nsample.n = 200\nsample.svg = true\n");
        let run = kacflow(tmp.path(), "sample", method, &cfg, &[]);
        assert_eq!(run.code, 0);
        assert_eq!(run.metric("nfe"), nfe);
        assert_eq!(run.metric("evaluations"), evals);
        assert!(run.read("samples.svg").starts_with("<svg"));
        assert_manifest_complete(&run);
    }
}

#[test]
fn guided_sampling_from_a_class() {
    let tmp = TempDir::new().unwrap();
    let cfg = "data.name = two-class-1d\nsample.label = 1\nguidance.w = 2\nsample.n = 500\nsched.g = linear\nsample.steps = 50\n";
    let run = kacflow(tmp.path(), "sample", "guided", cfg, &[]);
    assert_eq!(run.code, 0);
    let xs: Vec<f64> = run.csv("samples.csv")[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    let positive = xs.iter().filter(|&&x| x > 0.0).count();
    assert!(positive > 450, "{positive} of 500 samples in the positive mode");
}

#[test]
fn single_stage_distillation_passes_the_teacher_through() {
    let tmp = TempDir::new().unwrap();
    let tr = kacflow(tmp.path(), "train", "tr", "train.iterations = 10\nmodel.hidden = 8\n", &[]);
    let teacher = tr.dir.join("checkpoint.txt");
    let cfg = format!("distill.teacher = {}\nmodel.hidden = 8\ndistill.schedule = 4\n", teacher.display());
    let run = kacflow(tmp.path(), "distill", "di", &cfg, &[]);
    assert_eq!(run.code, 0);
    assert_eq!(run.csv("stages.csv").len(), 1);
    let student = Checkpoint::from_text(&run.read("student_4.txt")).unwrap();
    let original = Checkpoint::load(&teacher).unwrap();
    assert_eq!(student.model.params(), original.model.params());
}

#[test]
fn staged_distillation_reports_every_stage() {
    let tmp = TempDir::new().unwrap();
    let cfg = "train.iterations = 200\ntrain.optimizer = adam\ntrain.lr = 0.003\nmodel.hidden = 16\n\
               distill.schedule = 20,4,1\ndistill.iterations = 100\nsample.n = 500\n";
    let run = kacflow(tmp.path(), "distill", "di", cfg, &[]);
    assert_eq!(run.code, 0);
    let rows = run.csv("stages.csv");
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][1..4], ["20", "4", "5"]);
    assert_eq!(rows[2][1..4], ["4", "1", "4"]);
    assert_eq!(rows[2][12], rows[1][13], "stage 2 teacher is the stage 1 student");
    for r in &rows[1..] {
        let w2: f64 = r[8].parse().unwrap();
        assert!(w2.is_finite() && w2 > 0.0);
    }
    assert!(run.dir.join("student_4.txt").exists() && run.dir.join("student_1.txt").exists());
    assert_manifest_complete(&run);
}

#[test]
fn bad_stage_divisibility_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let run = kacflow(tmp.path(), "distill", "di", "distill.schedule = 100,30\n", &[]);
    assert_eq!(run.code, 2);
    assert!(!run.dir.exists(), "nothing is written for a rejected schedule");
}

#[test]
fn lemma_suite_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = kacflow(tmp.path(), "verify", "v1", "verify.suite = lemmas\n", &[]);
    let b = kacflow(tmp.path(), "verify", "v2", "", &["--suite", "lemmas"]);
    assert_eq!((a.code, b.code), (0, 0));
    assert_eq!(a.manifest().metric("report_checksum"), b.manifest().metric("report_checksum"));
    assert_eq!(a.read("checks.csv"), b.read("checks.csv"));
    assert_manifest_complete(&a);
}

#[test]
fn unknown_suite_and_bad_usage_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(kacflow(tmp.path(), "verify", "v", "", &["--suite", "everything"]).code, 2);
    assert_eq!(kacflow(tmp.path(), "verify", "v", "verify.suite = nope\n", &[]).code, 2);
    assert_eq!(kacflow(tmp.path(), "sample", "s", "kac.b = 1\n", &[]).code, 2);
    assert_eq!(kacflow_cli::run(["kacflow", "launch"]), 2);
    assert_eq!(kacflow_cli::run(["kacflow", "sample", "--jobs", "many"]), 2);
    assert_eq!(kacflow_cli::run(["kacflow", "--help"]), 0);
}

#[test]
fn single_cell_sweep_has_one_row() {
    let tmp = TempDir::new().unwrap();
    let cfg = "sweep.a = 25\nsweep.c = 2\nsweep.sched = linear\nsample.n = 300\n";
    let run = kacflow(tmp.path(), "sweep", "sw", cfg, &[]);
    assert_eq!(run.code, 0);
    let rows = run.csv("leaderboard.csv");
    assert_eq!(rows[0], ["rank", "a", "c", "schedule", "w2_to_data", "w2_stderr", "clamp_rate"]);
    assert_eq!(rows.len(), 2);
}

#[test]
fn sweep_leaderboard_separates_good_and_bad_cells() {
    let tmp = TempDir::new().unwrap();
    let cfg = "sweep.a = 0.5,25\nsweep.c = 2\nsweep.sched = linear,quadratic\nsample.n = 4000\n";
    let run = kacflow(tmp.path(), "sweep", "sw", cfg, &[]);
    assert_eq!(run.code, 0);
    let rows = run.csv("leaderboard.csv");
    assert_eq!(rows.len(), 5);
    let w2: Vec<(f64, f64)> = rows[1..].iter().map(|r| (r[4].parse().unwrap(), r[5].parse().unwrap())).collect();
    assert!(w2.windows(2).all(|w| w[0].0 <= w[1].0), "sorted ascending");
    let (best, worst) = (w2[0], w2[w2.len() - 1]);
    assert!(worst.0 - best.0 > 3.0 * (best.1.powi(2) + worst.1.powi(2)).sqrt(), "{w2:?}");
}

#[test]
fn config_file_round_trips_through_the_run_directory() {
    let tmp = TempDir::new().unwrap();
    let cfg = "kac.a = 3.5\nsched.g = linear\nsimulate.paths = 3\nseed.master = 17\n";
    let run = kacflow(tmp.path(), "simulate", "sim", cfg, &["--seed", "18"]);
    assert_eq!(run.code, 0);
    let written = ExperimentConfig::from_text(&run.read("config.txt")).unwrap();
    assert_eq!(written.a, 3.5);
    assert_eq!(written.seed.master_seed, 18);
    assert_eq!(written.out, run.dir);
    assert_eq!(run.manifest().config_hash, written.hash());
}
