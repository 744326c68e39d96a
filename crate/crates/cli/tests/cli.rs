use std::path::Path;
use std::process::{Command, Output};

use kefam_cli::config::resolution_range;
use kefam_cli::output::read_dump;
use kefam_cli::{CliError, ExperimentConfig};
use kefam_core::FamilyParams;
use proptest::prelude::*;

fn kefam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kefam"))
        .args(args)
        .env("KEFAM_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn invalid_configurations_exit_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let cases = [
        (r#"{"family": "ball_family", "resolutions": [3]}"#, "resolutions"),
        (r#"{"family": "no_such_family"}"#, "family"),
        (r#"{"family": "ball_family", "colour": 1}"#, "colour"),
        (r#"{"family": "ball_family", "tolerances": {"newton": -1.0}}"#, "tolerances.newton"),
    ];
    for (body, field) in cases {
        let cfg = write_config(dir.path(), body);
        let o = kefam(&["--config", &cfg, "--out", out, "solve-slice"]);
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(2), "{body}: {err}");
        assert!(err.contains(field), "{body}: {err}");
    }
    let o = kefam(&["solve-slice"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_slice_writes_tables_dumps_and_reuses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        r#"{"family": "ellipsoid_family", "params": {"n": 1, "a": [2.5], "q": [-1.5]}, "base_samples": [[0.1, 0.0]]}"#,
    );
    let args = ["--config", &cfg, "--out", out.to_str().unwrap(), "--resolution", "17", "solve-slice"];
    let first = kefam(&args);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let table = std::fs::read_to_string(out.join("solve_slice.csv")).unwrap();
    assert!(table.starts_with("s_re,s_im,resolution,"));
    let (side, values) = read_dump(&out, "slice_0_r17.u").unwrap();
    // resolution counts nodes across the domain box; two pad layers per side
    assert_eq!(side.shape, vec![21, 21]);
    assert_eq!(values.len(), 21 * 21);
    assert!(values.iter().any(|v| v.is_finite() && *v != 0.0));

    let second = kefam(&args);
    assert_eq!(second.status.code(), Some(0));
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(out.join("solve_slice.csv"))
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect();
    assert_eq!(&rows[0][4], "0", "warm start from the cache needs no Newton step");

    let report = kefam(&["--out", out.to_str().unwrap(), "report"]);
    assert_eq!(report.status.code(), Some(0));
    assert!(out.join("report.json").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resolution_validation_matches_the_supported_range(n in 1usize..=3, res in 0usize..1200) {
        let mut cfg = ExperimentConfig::for_family("ball_family", FamilyParams::with_n(n));
        cfg.resolutions = vec![res];
        let (lo, hi) = resolution_range(n);
        match cfg.validate() {
            Ok(()) => prop_assert!((lo..=hi).contains(&res)),
            Err(CliError::ConfigInvalid { field, .. }) => {
                prop_assert!(!(lo..=hi).contains(&res));
                prop_assert!(field.starts_with("resolutions"));
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}
