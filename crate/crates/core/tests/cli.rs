use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use std2p::grid::{FeatureStack, FlowSet, LabelMap, SuperpixelStack};
use std2p::io;

const SCENE: &str = "\
scene.frames = 7
scene.height = 12
scene.width = 16
scene.channels = 3
scene.classes = 3
scene.object.0 = 2,2,4,5,0,1,1,2
scene.object.1 = 7,8,4,5,0,-1,2,1
target = 3
sampling.interval = 1
sampling.sample_size = 7
";

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.cfg"), config).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join("out").join(name)
    }

    fn cmd(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_std2p"))
            .args(args)
            .arg("--config")
            .arg(self.path("run.cfg"))
            .args(["--threads", "1"])
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.cmd(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn metric(path: &Path, name: &str) -> f64 {
    csv_rows(path)
        .into_iter()
        .find(|r| r[0] == name)
        .unwrap_or_else(|| panic!("no {name} row"))[1]
        .parse()
        .unwrap()
}

#[test]
fn generate_writes_the_bundle() {
    let run = Run::new(SCENE);
    let stdout = run.ok(&["generate"]);
    assert!(stdout.contains("7 frames"));
    for f in ["features.tnsr", "superpixels.imap", "flows.tnsr", "labels.imap", "truth.csv"] {
        assert!(run.out(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_dir(run.path("out")).unwrap().count(), 5);
    assert_eq!(io::load_features(&run.out("features.tnsr")).unwrap().shape(), [7, 3, 12, 16]);
}

#[test]
fn generate_rejects_an_object_leaving_the_grid() {
    let run = Run::new(&SCENE.replace("scene.object.1 = 7,8,4,5,0,-1", "scene.object.1 = 7,8,4,5,0,-3"));
    let o = run.cmd(&["generate"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("object 1"), "{err}");
    assert!(!run.path("out").exists());
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let a = Run::new(SCENE);
    let b = Run::new(SCENE);
    a.ok(&["generate", "--seed", "9"]);
    b.ok(&["generate", "--seed", "9"]);
    for f in ["features.tnsr", "superpixels.imap", "flows.tnsr", "labels.imap", "truth.csv"] {
        assert_eq!(fs::read(a.out(f)).unwrap(), fs::read(b.out(f)).unwrap(), "{f}");
    }
}

fn match_set(path: &Path, target: &str) -> BTreeSet<(String, String, String)> {
    // (frame, source region, target region), self rows excluded
    csv_rows(path)
        .into_iter()
        .filter(|r| r[1] != target)
        .map(|r| (r[1].clone(), r[2].clone(), r[0].clone()))
        .collect()
}

#[test]
fn match_reproduces_generator_truth() {
    let run = Run::new(SCENE);
    run.ok(&["generate"]);
    run.ok(&["match"]);
    let found = match_set(&run.out("correspondence.csv"), "3");
    let truth: BTreeSet<_> = csv_rows(&run.out("truth.csv"))
        .into_iter()
        .map(|r| (r[0].clone(), r[1].clone(), r[2].clone()))
        .collect();
    assert!(!truth.is_empty());
    assert_eq!(found, truth);
    assert!(run.out("canonical.imap").is_file());
    assert!(run.out("stats.csv").is_file());
}

#[test]
fn a_stricter_tau_never_adds_rows() {
    let run = Run::new(&format!("{SCENE}scene.noise_std = 0.5\n"));
    run.ok(&["match"]);
    let loose = csv_rows(&run.out("correspondence.csv")).len();
    run.ok(&["match", "--tau", "0.99"]);
    let strict = csv_rows(&run.out("correspondence.csv")).len();
    assert!(strict <= loose);
}

#[test]
fn a_single_frame_sequence_only_matches_itself() {
    let run = Run::new(&SCENE.replace("scene.frames = 7", "scene.frames = 1").replace("target = 3", "target = 0"));
    run.ok(&["match"]);
    let rows = csv_rows(&run.out("correspondence.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[1] == "0" && r[0] == r[2]));
}

#[test]
fn infer_recovers_a_separable_scene() {
    let run = Run::new(&format!("{SCENE}train.epochs = 40\ntrain.lr = 0.5\n"));
    run.ok(&["generate"]);
    run.ok(&["train"]);
    run.ok(&["infer"]);
    let pred = io::load_labels(&run.out("prediction.imap")).unwrap();
    let gt = io::load_labels(&run.out("labels.imap")).unwrap();
    assert_eq!(pred.len(), 1);
    assert_eq!(pred[0], gt[3]);
    let scores = io::read_tnsr(&run.out("scores.tnsr")).unwrap();
    assert_eq!(scores.dims, vec![3, 12, 16]);
}

#[test]
fn view_mode_changes_the_scores_on_noisy_scenes() {
    let run = Run::new(&format!("{SCENE}scene.noise_std = 2\ntrain.epochs = 5\n"));
    run.ok(&["train"]);
    run.ok(&["infer", "--view-mode", "single"]);
    let single = fs::read(run.out("scores.tnsr")).unwrap();
    run.ok(&["infer", "--view-mode", "multi"]);
    let multi = fs::read(run.out("scores.tnsr")).unwrap();
    assert_ne!(single, multi);
}

#[test]
fn infer_without_a_model_is_an_io_failure() {
    let run = Run::new(SCENE);
    let o = run.cmd(&["infer"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.tnsr"));
}

#[test]
fn malformed_tensor_magic_names_the_file() {
    let run = Run::new(SCENE);
    run.ok(&["generate"]);
    let mut bytes = fs::read(run.out("features.tnsr")).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    fs::write(run.path("bad.tnsr"), bytes).unwrap();
    fs::write(
        run.path("files.cfg"),
        "features = bad.tnsr\nsuperpixels = out/superpixels.imap\nflows = out/flows.tnsr\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_std2p"))
        .args(["match", "--config"])
        .arg(run.path("files.cfg"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.tnsr"));
}

#[test]
fn file_inputs_match_the_scene_they_were_written_from() {
    let run = Run::new(SCENE);
    run.ok(&["generate"]);
    run.ok(&["match"]);
    let from_scene = fs::read(run.out("correspondence.csv")).unwrap();
    fs::write(
        run.path("files.cfg"),
        "features = out/features.tnsr\nsuperpixels = out/superpixels.imap\n\
         flows = out/flows.tnsr\nlabels = out/labels.imap\ntarget = 3\n\
         sampling.interval = 1\nsampling.sample_size = 7\nout = files\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_std2p"))
        .args(["match", "--config"])
        .arg(run.path("files.cfg"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(run.path("files/correspondence.csv")).unwrap(), from_scene);
}

const TRAIN: &str = "train.targets = 2,3,4\nscene.noise_std = 1\n";

#[test]
fn train_writes_one_loss_row_per_epoch() {
    let run = Run::new(&format!("{SCENE}{TRAIN}train.epochs = 3\n"));
    run.ok(&["train"]);
    let rows = csv_rows(&run.out("loss.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["0", "1", "2"]);
    assert!(run.out("model.tnsr").is_file());
    assert!(run.out("model.meta").is_file());
}

#[test]
fn resuming_continues_the_same_trace() {
    let full = Run::new(&format!("{SCENE}{TRAIN}train.epochs = 6\n"));
    full.ok(&["train"]);
    let split = Run::new(&format!("{SCENE}{TRAIN}train.epochs = 3\ntrain.resume = true\n"));
    split.ok(&["train"]);
    split.ok(&["train"]);
    assert_eq!(
        fs::read(full.out("model.tnsr")).unwrap(),
        fs::read(split.out("model.tnsr")).unwrap()
    );
    let tail: Vec<_> = csv_rows(&full.out("loss.csv")).split_off(3);
    assert_eq!(csv_rows(&split.out("loss.csv")), tail);
}

#[test]
fn zero_epochs_saves_the_initial_model() {
    let run = Run::new(&format!("{SCENE}{TRAIN}train.epochs = 0\n"));
    run.ok(&["train"]);
    let model = io::read_tnsr(&run.out("model.tnsr")).unwrap();
    assert_eq!(model.dims, vec![2, 3, 4]);
    assert!(model.data.iter().all(|&v| v == 0.0));
    assert!(csv_rows(&run.out("loss.csv")).is_empty());
}

#[test]
fn eval_of_the_ground_truth_is_perfect() {
    let run = Run::new(&format!("{SCENE}prediction = truth.imap\noracle = true\n"));
    run.ok(&["generate"]);
    let gt = io::load_labels(&run.out("labels.imap")).unwrap();
    io::save_labels(&run.path("truth.imap"), &gt[3..4]).unwrap();
    run.ok(&["eval"]);
    let m = run.out("metrics.csv");
    for name in ["pixel_acc", "mean_acc", "mean_iou", "fw_iou", "bpr_f_measure", "oracle_pixel_acc"] {
        assert_eq!(metric(&m, name), 1.0, "{name}");
    }
    assert!(run.out("bpr.csv").is_file());
}

#[test]
fn eval_reproduces_the_hand_confusion_case() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    io::save_features(&p("f.tnsr"), &FeatureStack::new(1, 1, 1, 8, vec![0.0; 8]).unwrap()).unwrap();
    io::save_superpixels(&p("s.imap"), &SuperpixelStack::from_labels(1, 1, 8, vec![0; 8]).unwrap()).unwrap();
    io::save_flows(&p("w.tnsr"), &FlowSet::identity(1, 1, 8), 1, 8).unwrap();
    let gt = LabelMap::new(1, 8, vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
    let pred = LabelMap::new(1, 8, vec![0, 0, 1, 1, 1, 1, 1, 1]).unwrap();
    io::save_labels(&p("gt.imap"), &[gt]).unwrap();
    io::save_labels(&p("pred.imap"), &[pred]).unwrap();
    fs::write(
        p("eval.cfg"),
        "features = f.tnsr\nsuperpixels = s.imap\nflows = w.tnsr\nlabels = gt.imap\n\
         prediction = pred.imap\nout = .\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_std2p"))
        .args(["eval", "--config"])
        .arg(p("eval.cfg"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = p("metrics.csv");
    assert_eq!(metric(&m, "pixel_acc"), 0.75);
    assert_eq!(metric(&m, "mean_acc"), 0.75);
    assert!((metric(&m, "mean_iou") - 7.0 / 12.0).abs() < 1e-15);
    assert!((metric(&m, "fw_iou") - 7.0 / 12.0).abs() < 1e-15);
}

#[test]
fn unknown_config_keys_are_validation_errors() {
    let run = Run::new(&format!("{SCENE}tua = 0.5\n"));
    let o = run.cmd(&["match"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tua"));
}

#[test]
fn sweep_writes_one_row_per_distance_and_direction() {
    let run = Run::new(
        "sweep.max_distances = 2,6\nsweep.trials = 1\nsweep.train_scenes = 1\n\
         sweep.test_scenes = 1\ntrain.epochs = 2\n",
    );
    run.ok(&["sweep"]);
    let rows = csv_rows(&run.out("sweep.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!((rows[0][0].as_str(), rows[0][1].as_str()), ("2", "both"));
    assert_eq!((rows[3][0].as_str(), rows[3][1].as_str()), ("6", "past"));
}
