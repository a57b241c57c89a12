use std::path::Path;
use std::process::{Command, Output};

use gsvit::io::report::Report;
use gsvit::synthetic;

fn gsvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsvit")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "preset = small\nseed = 3\npretrain.batch = 2\ntrain.batch = 16\n";

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&gsvit(&["pretrain", "--out", "x.ckpt"])), 1);
    assert_eq!(code(&gsvit(&["bench", "--batch", "0"])), 1);
    assert_eq!(code(&gsvit(&["inspect", "--checkpoint", "a", "--frobnicate"])), 1);
    assert_eq!(code(&gsvit(&["frobnicate"])), 1);
    assert_eq!(code(&gsvit(&["--help"])), 0);
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "encoder.nonsense = 3\n").unwrap();
    let out = gsvit(&["bench", "--config", p(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown config key"), "{}", stderr(&out));
}

#[test]
fn data_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let corpus = tmp.path().join("corpus");
    synthetic::write_corpus(&synthetic::moving_square(1, 4, 64, 0), &corpus).unwrap();
    std::fs::remove_file(corpus.join("square000").join("f000003.ppm")).unwrap();
    let out = gsvit(&["pretrain", "--config", p(&cfg), "--corpus", p(&corpus), "--out", p(&tmp.path().join("o.ckpt"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing f000003.ppm"), "{}", stderr(&out));
    let out = gsvit(&["inspect", "--checkpoint", p(&tmp.path().join("absent.ckpt"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn pretrain_to_evaluation_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let squares = tmp.path().join("squares");
    synthetic::write_corpus(&synthetic::moving_square(2, 6, 64, 0), &squares).unwrap();
    let phases = tmp.path().join("phases");
    synthetic::write_corpus(&synthetic::color_phases(2, 2, 64, 1), &phases).unwrap();
    let (pre, tuned, head) = (tmp.path().join("pre.ckpt"), tmp.path().join("tuned.ckpt"), tmp.path().join("head.ckpt"));

    let rep = tmp.path().join("pre.txt");
    let out = gsvit(&["pretrain", "--config", p(&cfg), "--corpus", p(&squares), "--out", p(&pre), "--steps", "3", "--report", p(&rep)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = Report::load(&rep).unwrap();
    assert_eq!(r.get("steps"), Some("3"));
    assert_eq!(r.get_series("loss").unwrap().len(), 3);

    let out = gsvit(&["inspect", "--checkpoint", p(&pre)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("encoder.cls_token"));

    let out = gsvit(&["finetune", "--checkpoint", p(&pre), "--corpus", p(&squares), "--procedure", "square", "--out", p(&tuned)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = gsvit(&["finetune", "--checkpoint", p(&pre), "--corpus", p(&squares), "--procedure", "none", "--out", p(&tuned)]);
    assert_eq!(code(&out), 2);

    let out = gsvit(&["train-phase", "--checkpoint", p(&tuned), "--corpus", p(&phases), "--out", p(&head), "--epochs", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let eval = tmp.path().join("eval.txt");
    let out = gsvit(&["eval-phase", "--checkpoint", p(&head), "--corpus", p(&phases), "--out", p(&eval)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = Report::load(&eval).unwrap();
    assert_eq!(r.get("videos"), Some("2"));
    let acc: f64 = r.get("accuracy_mean").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let bench = tmp.path().join("bench.txt");
    let out = gsvit(&["bench", "--checkpoint", p(&head), "--batch", "2", "--threads", "2", "--iters", "10", "--out", p(&bench)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = Report::load(&bench).unwrap();
    assert_eq!(r.get("threads"), Some("2"));
    assert_eq!(r.get_series("latency_ms").unwrap().len(), 10);
    assert_eq!(r.get_series("digest").unwrap().len(), 2);
    assert!(r.get("single.mean_ms").is_some());
}
