use std::path::PathBuf;
use std::process::Command;

use nalgebra::DMatrix;
use polyrank::{MatrixPolynomial, PolyVector};
use polyrank_cli::problem_file::{parse_problem, write_problem, FileError, FileOptions, ProblemFile, StructureChoice};
use polyrank_cli::{run, EXIT_FAILED, EXIT_OK, EXIT_USAGE};
use proptest::prelude::*;
use serde_json::Value;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).display().to_string()
}

fn polyrank(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["polyrank"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn json(args: &[&str]) -> (i32, Value) {
    let mut argv = args.to_vec();
    argv.push("--json");
    let (code, out, err) = polyrank(&argv);
    assert!(err.is_empty(), "{err}");
    (code, serde_json::from_str(&out).unwrap())
}

/// Value printed after `key` in a text report.
fn text_field(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).filter(|rest| rest.starts_with(' ')))
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("no numeric `{key}` in\n{report}"))
}

#[test]
fn bundled_pencil_parses_exactly() {
    let text = std::fs::read_to_string(fixture("example_2_10.mp")).unwrap();
    let file = parse_problem(&text).unwrap();
    let a0 = DMatrix::from_row_slice(3, 3, &[0., 0.04, 0.89, 0.15, -0.02, 0., 0.92, 0.11, 0.066]);
    let a1 = DMatrix::from_row_slice(3, 3, &[0., 0., 0., 0., 0., 1., 0., 1., 0.]);
    assert_eq!(file.a, MatrixPolynomial::new(vec![a0, a1]).unwrap());
    assert_eq!(file.rank_drop, Some(1));
}

#[test]
fn support_structure_solve_reaches_reference_distance() {
    let (code, v) = json(&["solve", &fixture("example_2_10.mp"), "--structure", "support", "--rank-drop", "1"]);
    assert_eq!(code, EXIT_OK);
    assert!((v["distance"].as_f64().unwrap() - 0.135313).abs() < 5e-5);
    assert_eq!(v["structure"]["kind"], "support");
    assert_eq!(v["secondOrder"]["status"], "sufficient");
    assert!(!v["history"].as_array().unwrap().is_empty());
}

#[test]
fn bound_stays_below_best_structured_distance() {
    let (code, v) = json(&["bound", &fixture("example_2_10.mp")]);
    assert_eq!(code, EXIT_OK);
    let bound = v["lowerBound"].as_f64().unwrap();
    assert!(bound > 0.0 && bound <= 0.115585);
}

#[test]
fn check_accepts_reference_perturbation() {
    let (code, v) = json(&["check", &fixture("example_2_10_check.mp")]);
    assert_eq!(code, EXIT_OK);
    assert!(v["feasibility"].as_f64().unwrap() <= 1e-4);
    assert_eq!(v["conforms"], true);
    assert!((v["distance"].as_f64().unwrap() - 0.135507).abs() < 5e-5);
}

#[test]
fn damped_and_given_kernel_fixtures_converge() {
    let (code, v) = json(&["solve", &fixture("example_2_11.mp")]);
    assert_eq!(code, EXIT_OK);
    assert!((v["distance"].as_f64().unwrap() - 0.949578).abs() < 1e-3);
    let (code, v) = json(&["solve", &fixture("example_2_11_given.mp")]);
    assert_eq!(code, EXIT_OK);
    assert!((v["distance"].as_f64().unwrap() - 0.94356416).abs() < 1e-4);
}

#[test]
fn two_column_fixture_and_alternate_kernel() {
    let (code, v) = json(&["solve", &fixture("example_4x4.mp")]);
    assert_eq!(code, EXIT_OK);
    assert!((v["distance"].as_f64().unwrap() - 0.0007844).abs() < 1e-5);
    assert_eq!(v["kernel"].as_array().unwrap().len(), 2);
    let init = format!("file:{}", fixture("example_4x4_echelon.kernel"));
    let (code, v) = json(&["solve", &fixture("example_4x4.mp"), "--init", &init, "--kernel-shape", "support"]);
    assert_eq!(code, EXIT_OK);
    assert!((v["distance"].as_f64().unwrap() - 0.0008408).abs() < 1e-5);
}

#[test]
fn text_and_json_reports_agree() {
    let args = ["solve", &fixture("example_2_10.mp") as &str, "--structure", "degree"];
    let (_, text, _) = polyrank(&args);
    let (_, v) = json(&args);
    for (key, field) in [("distance", "distance"), ("lower bound", "lowerBound"), ("iterations", "iterations")] {
        let shown = text_field(&text, key);
        let exact = v[field].as_f64().unwrap();
        assert!((shown - exact).abs() <= 5e-6 * exact.abs().max(1e-300), "{key}: {shown} vs {exact}");
    }
}

#[test]
fn iteration_cap_is_a_failure() {
    let (code, v) = json(&["solve", &fixture("example_2_11.mp"), "--max-iter", "1"]);
    assert_eq!(code, EXIT_FAILED);
    assert_eq!(v["converged"], false);
    assert!(v["failure"].is_string());
}

#[test]
fn seeded_multi_start_reports_its_starts() {
    let (code, v) = json(&["solve", &fixture("example_2_10.mp"), "--seed", "3", "--starts", "4", "--kernel-degree", "1,0,0"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(v["starts"]["count"], 5);
    assert_eq!(v["starts"]["seed"], 3);
    assert!(v["distance"].as_f64().unwrap() <= 0.115586);
}

#[test]
fn rankfact_refinement_reaches_affine_solution() {
    let mask = format!("mask:{}", fixture("example_2_10_affine.mask"));
    let (code, v) = json(&["rankfact", &fixture("example_2_10.mp"), "--structure", &mask, "--refine"]);
    assert_eq!(code, EXIT_OK);
    assert!(v["phi"].as_f64().unwrap() > 0.0);
    assert!((v["refined"]["distance"].as_f64().unwrap() - 0.135507).abs() < 5e-5);
}

#[test]
fn usage_and_input_errors_exit_64() {
    let (code, _, err) = polyrank(&["solve"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("PROBLEM"));
    let (code, _, err) = polyrank(&["solve", &fixture("example_2_10.mp"), "--normalize", "sideways"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("sideways"));
    let (code, _, err) = polyrank(&["check", &fixture("example_2_10.mp")]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("DELTA"));
}

#[test]
fn empty_file_is_a_syntax_error() {
    assert!(matches!(parse_problem(""), Err(FileError::Syntax { line: 1, .. })));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.mp");
    std::fs::write(&path, "").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_polyrank"))
        .args(["solve", path.to_str().unwrap()])
        .env("POLYRANK_LOG", "quiet")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn binary_exit_code_and_trace_log() {
    let out = Command::new(env!("CARGO_BIN_EXE_polyrank"))
        .args(["solve", &fixture("example_2_10.mp"), "--structure", "degree"])
        .env("POLYRANK_LOG", "trace")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration 1"));
}

fn problem_strategy() -> impl Strategy<Value = ProblemFile> {
    (1usize..4, 0usize..3)
        .prop_flat_map(|(n, d)| {
            let coeff = -1e3f64..1e3;
            (
                prop::collection::vec(coeff.clone(), n * n * (d + 1)),
                prop::option::of(1usize..3),
                prop::option::of(prop::collection::vec(0.5f64..2.0, n * 2)),
                prop::option::of(prop::collection::vec(coeff, n * n * (d + 1))),
                prop::option::of(1e-14f64..1e-6),
                any::<bool>(),
                Just((n, d)),
            )
        })
        .prop_map(|(a, rank_drop, kernel, delta, tol, damped, (n, d))| {
            let a = MatrixPolynomial::unvectorize(n, d, &a).unwrap();
            let mut f = ProblemFile::new(a);
            f.rank_drop = rank_drop;
            f.structure = damped.then_some(StructureChoice::Support);
            f.kernel = kernel.map(|k| vec![PolyVector::new(k.chunks(2).map(<[f64]>::to_vec).collect())]);
            f.delta = delta.map(|v| MatrixPolynomial::unvectorize(n, d, &v).unwrap());
            f.options = FileOptions { tol_step: tol, damped: Some(damped), ..Default::default() };
            f
        })
}

proptest! {
    #[test]
    fn written_problems_parse_back_identically(file in problem_strategy()) {
        let text = write_problem(&file);
        prop_assert_eq!(parse_problem(&text).unwrap(), file);
    }
}
