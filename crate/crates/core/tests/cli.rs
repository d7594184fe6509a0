use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use forgerykit::metrics::{Averaging, MetricsRow};
use forgerykit::report::EvaluationReport;

fn forgerykit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forgerykit"))
        .args(args)
        .env_remove("FORGERYKIT_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = forgerykit(args);
    assert!(
        out.status.success(),
        "`{}` exited with {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Work {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }
}

/// synth (20 + 20 at 32 px) → prepare → train (small head, few epochs) → score.
fn small_pipeline(w: &Work) -> (String, String) {
    let (data, manifest, model, scores) = (
        w.path("data"),
        w.path("data/manifest.jsonl"),
        w.path("m.fkm"),
        w.path("s.csv"),
    );
    ok(&[
        "synth",
        "--n-authentic",
        "20",
        "--n-tampered",
        "20",
        "--size",
        "32",
        "--seed",
        "3",
        "--out",
        &data,
    ]);
    let prep = ok(&[
        "prepare",
        "--root",
        &data,
        "--val-ratio",
        "0.2",
        "--train-ratio",
        "0.6",
        "--seed",
        "3",
        "--out",
        &manifest,
    ]);
    assert!(prep.contains("train") && prep.contains("test"), "{prep}");
    let log = ok(&[
        "train",
        "--manifest",
        &manifest,
        "--size",
        "32",
        "--hidden-units",
        "32",
        "--learning-rate",
        "1e-3",
        "--max-epochs",
        "8",
        "--patience",
        "4",
        "--seed",
        "3",
        "--out",
        &model,
    ]);
    assert!(log.lines().next().unwrap().starts_with("epoch=1 train_loss="), "{log}");
    assert!(log.lines().last().unwrap().starts_with("done epochs="), "{log}");
    ok(&["score", "--model", &model, "--manifest", &manifest, "--out", &scores]);
    (model, scores)
}

fn youden(report: &EvaluationReport) -> f64 {
    report.confusion.tpr() - report.confusion.fpr()
}

#[test]
fn end_to_end_report_is_schema_valid_and_calibration_helps() {
    let w = Work::new();
    let (model, scores) = small_pipeline(&w);
    let lines = fs::read_to_string(&scores).unwrap();
    assert_eq!(lines.lines().next(), Some("id,label,score"));
    assert_eq!(lines.lines().count(), 1 + 8);

    let cal = w.path("cal.json");
    ok(&["calibrate", "--scores", &scores, "--model-id", "tiny", "--out", &cal]);
    let (tuned, fixed) = (w.path("tuned.json"), w.path("fixed.json"));
    let roc = w.path("roc.csv");
    let confusion = w.path("confusion.csv");
    ok(&[
        "evaluate",
        "--scores",
        &scores,
        "--calibration",
        &cal,
        "--model",
        &model,
        "--roc-csv",
        &roc,
        "--confusion-csv",
        &confusion,
        "--out",
        &tuned,
    ]);
    ok(&[
        "evaluate",
        "--scores",
        &scores,
        "--fixed-threshold",
        "0.5",
        "--model-id",
        "tiny",
        "--out",
        &fixed,
    ]);

    let tuned = EvaluationReport::load(Path::new(&tuned)).unwrap();
    let fixed = EvaluationReport::load(Path::new(&fixed)).unwrap();
    tuned.validate().unwrap();
    fixed.validate().unwrap();
    assert_eq!(tuned.model_id, "tiny");
    assert_eq!(fixed.metrics.threshold, 0.5);
    assert!(tuned.config_echo.preprocess.is_some());
    assert_eq!(tuned.dataset_digest, fixed.dataset_digest);
    assert!(
        youden(&tuned) >= youden(&fixed),
        "calibrated J {} < fixed J {}",
        youden(&tuned),
        youden(&fixed)
    );

    assert!(fs::read_to_string(&roc)
        .unwrap()
        .starts_with("threshold,fpr,tpr\ninf,0,0\n"));
    let cm = fs::read_to_string(&confusion).unwrap();
    assert!(
        cm.starts_with(",predicted_authentic,predicted_tampered\nactual_authentic,"),
        "{cm}"
    );
}

#[test]
fn repeated_runs_reproduce_every_artifact() {
    let (a, b) = (Work::new(), Work::new());
    let (model_a, scores_a) = small_pipeline(&a);
    let (model_b, scores_b) = small_pipeline(&b);
    assert_eq!(fs::read(&model_a).unwrap(), fs::read(&model_b).unwrap());
    assert_eq!(fs::read(&scores_a).unwrap(), fs::read(&scores_b).unwrap());
    assert_eq!(
        fs::read(a.path("data/manifest.jsonl")).unwrap(),
        fs::read(b.path("data/manifest.jsonl")).unwrap()
    );

    let again = a.path("s2.csv");
    ok(&[
        "score",
        "--model",
        &model_a,
        "--manifest",
        &a.path("data/manifest.jsonl"),
        "--out",
        &again,
    ]);
    assert_eq!(fs::read(&scores_a).unwrap(), fs::read(&again).unwrap());
}

const TABLE: [(&str, [f64; 7]); 6] = [
    ("DenseNet121", [0.784, 0.773, 0.784, 0.770, 0.593, 0.841, 0.395]),
    ("VGG16", [0.709, 0.693, 0.709, 0.685, 0.434, 0.779, 0.426]),
    ("ResNet50", [0.776, 0.771, 0.776, 0.772, 0.598, 0.827, 0.338]),
    ("EfficientNetB0", [0.751, 0.737, 0.751, 0.729, 0.517, 0.811, 0.461]),
    ("MobileNet", [0.749, 0.741, 0.749, 0.732, 0.520, 0.806, 0.419]),
    ("InceptionV3", [0.745, 0.739, 0.745, 0.736, 0.525, 0.820, 0.361]),
];

#[test]
fn compare_ranks_reference_reports() {
    let w = Work::new();
    let mut args = vec!["compare".to_string()];
    for (name, v) in TABLE {
        let row = MetricsRow {
            accuracy: v[0],
            precision: v[1],
            recall: v[2],
            f1: v[3],
            mcc: v[4],
            auc: v[5],
            threshold: v[6],
            averaging: Averaging::Weighted,
        };
        let path = w.path(&format!("{name}.json"));
        EvaluationReport::from_metrics(name, row)
            .save(Path::new(&path))
            .unwrap();
        args.push(path);
    }
    let csv = w.path("table.csv");
    args.extend(["--csv".into(), csv.clone()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ok(&refs);
    assert!(out.contains("best accuracy: DenseNet121 (0.784)"), "{out}");
    assert!(out.contains("best mcc: ResNet50 (0.598)"), "{out}");
    assert!(out.contains("best auc: DenseNet121 (0.841)"), "{out}");
    assert!(out.contains("threshold range: [0.338, 0.461]"), "{out}");

    let table = fs::read_to_string(&csv).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("model_id,accuracy,precision,recall,f1,mcc,auc,threshold,best")
    );
    let dense = table.lines().find(|l| l.starts_with("DenseNet121,")).unwrap();
    assert!(dense.ends_with(",accuracy;precision;recall;auc"), "{dense}");
    assert_eq!(table.lines().count(), 7);
}

#[test]
fn exit_codes_distinguish_usage_from_data_errors() {
    let w = Work::new();
    let missing = w.path("nope.csv");
    let out = forgerykit(&["calibrate", "--scores", &missing, "--out", &w.path("c.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    fs::write(w.path("bad.csv"), "id,label,score\na,1,1.5\n").unwrap();
    let out = forgerykit(&["calibrate", "--scores", &w.path("bad.csv"), "--out", &w.path("c.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!Path::new(&w.path("c.json")).exists());

    assert_eq!(forgerykit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(forgerykit(&["calibrate"]).status.code(), Some(1));
    assert_eq!(
        forgerykit(&["--jobs", "0", "synth", "--out", &w.path("d")])
            .status
            .code(),
        Some(1)
    );
    let out = forgerykit(&[
        "prepare",
        "--root",
        &w.path("d"),
        "--train-ratio",
        "1.5",
        "--out",
        &w.path("m.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(forgerykit(&["--help"]).status.code(), Some(0));
}

#[test]
fn seed_falls_back_to_the_environment() {
    let w = Work::new();
    let synth = |out: &str, env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_forgerykit"));
        cmd.args([
            "synth",
            "--n-authentic",
            "2",
            "--n-tampered",
            "2",
            "--size",
            "16",
            "--out",
            out,
        ]);
        if let Some(seed) = flag {
            cmd.args(["--seed", seed]);
        }
        cmd.env_remove("FORGERYKIT_SEED");
        if let Some(seed) = env {
            cmd.env("FORGERYKIT_SEED", seed);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read(Path::new(out).join("Tp/Tp_00000.png")).unwrap()
    };
    let from_env = synth(&w.path("e"), Some("41"), None);
    let from_flag = synth(&w.path("f"), None, Some("41"));
    let default = synth(&w.path("z"), None, None);
    let overridden = synth(&w.path("o"), Some("5"), Some("41"));
    assert_eq!(from_env, from_flag);
    assert_eq!(overridden, from_flag);
    assert_ne!(default, from_flag);
}
