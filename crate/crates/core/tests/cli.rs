use std::path::Path;
use std::process::{Command, Output};

use ucon::cli::{parse_results_csv, read_codebook, EXIT_OK, EXIT_USAGE};

fn ucon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ucon")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn first_row(o: &Output) -> Vec<String> {
    stdout(o).lines().nth(1).unwrap().split_whitespace().map(str::to_string).collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn search_alloc_ranks_known_winners() {
    let o = ucon(&["search-alloc", "--K", "3", "--lv", "4"]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first_row(&o)[1..3], ["0", "0,2,2"]);

    let o = ucon(&["search-alloc", "--K", "4", "--lv", "3"]);
    assert_eq!(code(&o), EXIT_OK);
    assert_eq!(first_row(&o)[1..3], ["0", "0,1,1,1"]);
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(code(&ucon(&["search-alloc", "--K", "3", "--lv", "0"])), EXIT_USAGE);
    assert_eq!(code(&ucon(&["design", "--K", "1", "--lv", "2", "--out", "x.json"])), EXIT_USAGE);
    assert_eq!(code(&ucon(&["no-such-command"])), EXIT_USAGE);
    assert_eq!(code(&ucon(&["analyze", "--codebook", "/nonexistent/codebook.json"])), EXIT_USAGE);
}

#[test]
fn malformed_codebook_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let cb = dir.path().join("bad.json");
    std::fs::write(&cb, "{\"schema_version\": 1, \"K\": 3").unwrap();
    let out = dir.path().join("res.csv");
    let o = ucon(&[
        "simulate", "--codebook", path_str(&cb), "--snr-start", "0", "--snr-stop", "0", "--out", path_str(&out),
    ]);
    assert_eq!(code(&o), EXIT_USAGE);
    assert!(!out.exists());
}

#[test]
fn design_then_simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cb_path = dir.path().join("cb.json");
    let o = ucon(&[
        "design", "--K", "3", "--lu", "1", "--lphi", "0,1,2", "--restarts", "4", "--out", path_str(&cb_path),
    ]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let cb = read_codebook(&cb_path).unwrap();
    assert_eq!(cb.alloc().total_bits(), 4);
    assert!(stdout(&o).contains("achieved_mcd"));

    let o = ucon(&["analyze", "--codebook", path_str(&cb_path), "--snr-db", "5"]);
    assert_eq!(code(&o), EXIT_OK);
    assert!(stdout(&o).contains("mcd_bruteforce"));

    let csv = dir.path().join("res.csv");
    let run = |threads: &str| {
        let o = ucon(&[
            "--threads", threads, "simulate", "--codebook", path_str(&cb_path), "--detector", "iuap-improved-pr",
            "--snr-start", "0", "--snr-stop", "4", "--snr-step", "2", "--antennas", "2", "--min-errors", "50",
            "--max-trials", "20000", "--seed", "7", "--out", path_str(&csv),
        ]);
        assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(&csv).unwrap()
    };
    let first = run("1");
    assert_eq!(first, run("3"));
    let rows = parse_results_csv(&first).unwrap();
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[1].bler <= w[0].bler);
    }
}
