use std::process::{Command, Output};

use lrfpn::harness::checkpoint::{decode, load_checkpoint};
use lrfpn::harness::config::RunConfig;
use lrfpn::harness::metrics::METRICS_HEADER;
use lrfpn::Error;

fn lrfpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrfpn")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn unknown_flag_token_is_usage_error_listing_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let out = lrfpn(&["ablate", "--flags", "sp,zz", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = text(&out.stderr);
    for tok in ["sp", "pp", "si", "ci", "li", "ni"] {
        assert!(err.contains(tok), "{err}");
    }
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(code(&lrfpn(&["bench", "--dtype", "f16"])), 2);
    assert_eq!(code(&lrfpn(&["no-such-command"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "stepz = 3\n").unwrap();
    assert_eq!(code(&lrfpn(&["shapes", "--config", cfg.to_str().unwrap()])), 2);
    std::fs::write(&cfg, "input_size = 24\n").unwrap();
    assert_eq!(code(&lrfpn(&["shapes", "--config", cfg.to_str().unwrap()])), 2);
    std::fs::write(&cfg, "probes = 0\n").unwrap();
    let out = lrfpn(&["gradcheck", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("empty"));
}

#[test]
fn corrupted_backward_fails_gradcheck_naming_the_op() {
    let dir = tempfile::tempdir().unwrap();
    let out = lrfpn(&["gradcheck", "--inject-fault", "depthwise_conv2d", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let report = std::fs::read_to_string(dir.path().join("gradcheck.txt")).unwrap();
    let line = report.lines().find(|l| l.starts_with("depthwise_conv2d")).unwrap();
    assert!(line.ends_with("FAIL"), "{line}");
    assert!(report.contains("result: FAIL (depthwise_conv2d"), "{report}");
}

#[test]
fn train_toy_writes_metrics_and_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for dtype in ["f64", "f32"] {
        let out = lrfpn(&["train-toy", "--flags", "+SPIEM+CI", "--seed", "3", "--steps", "4", "--dtype", dtype, "--out", d]);
        assert_eq!(code(&out), 0, "{}", text(&out.stderr));
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().next(), Some(METRICS_HEADER));
        assert!(metrics.lines().nth(1).unwrap().starts_with("sp+pp+ci-s3,+SPIEM+CI,sp+pp+ci,3,4,"));
        let entries = load_checkpoint(&dir.path().join("sp+pp+ci-s3.lrfpn")).unwrap();
        assert!(entries.iter().all(|e| e.dtype.to_string() == dtype));
    }
}

#[test]
fn truncated_checkpoint_is_an_error_not_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    let out = lrfpn(&["train-toy", "--steps", "1", "--seed", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let bytes = std::fs::read(dir.path().join("sp+pp+li+ni+ci-s0.lrfpn")).unwrap();
    for cut in [0, 5, 9, bytes.len() / 2, bytes.len() - 1] {
        match decode(&bytes[..cut]) {
            Err(Error::BadMagic) => assert!(cut < 7),
            Err(Error::Truncated(_)) => assert!(cut >= 7),
            other => panic!("cut {cut}: {other:?}"),
        }
    }
}

#[test]
fn ablate_row_count_is_sets_times_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "input_size = 16\nstage_channels = [2, 4, 8, 16]\npyramid_channels = 4\nsteps = 3\nseeds = [5, 1, 2]\nflag_sets = [\"full\", \"baseline\", \"+CIM+PP\", \"li,ci\"]\n").unwrap();
    let out = lrfpn(&["ablate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    let order: Vec<String> = rows.iter().map(|r| r.split(',').take(4).skip(1).collect::<Vec<_>>().join(" ")).collect();
    assert_eq!(order[0], "baseline none 1");
    assert_eq!(order[2], "baseline none 5");
    assert_eq!(order[3], "+CIM+PP pp+li+ni+ci 1");
    assert_eq!(order[6], "full sp+pp+li+ni+ci 1");
    assert_eq!(order[9], "li+ci li+ci 1");
    assert_eq!(text(&out.stdout).matches("bitwise equal").count(), 3);
}

#[test]
fn shipped_configs_parse() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    assert_eq!(RunConfig::load(&std::path::Path::new(root).join("default.toml")).unwrap(), RunConfig::default());
    assert_eq!(RunConfig::load(&std::path::Path::new(root).join("miniature.toml")).unwrap(), RunConfig::miniature());
}
