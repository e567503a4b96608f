use std::process::{Command, Output};

fn twrn(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_twrn"));
    c.args(args).env_remove("TWRN_SEED");
    if let Some(s) = env_seed {
        c.env("TWRN_SEED", s);
    }
    c.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn analyze_writes_schema_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig11.csv");
    let o = twrn(&["analyze", "--preset", "fig11", "--out", out.to_str().unwrap()], None);
    // The relay saturates at q1 = 0.2: that row has no metrics and the run
    // exits 2.
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), twrn_cli::csv::HEADER);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12);
    assert!(rows[0].starts_with("nc,0.5,0.25,0.75,0.2,0.75,,,4,analytic,,,,,"));
    assert!(rows[1..].iter().all(|r| r.split(',').nth(14) == Some("true")));
    assert!(stdout(&o).contains("analytic"));
}

#[test]
fn csv_goes_to_stdout_without_out() {
    let o = twrn(&["analyze", "--g1", "0.5", "--g2", "0.25", "--q", "0.75", "--q1", "0.4", "--q2", "0.4"], None);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with(twrn_cli::csv::HEADER));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn config_errors_exit_one_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "command = analyze\n[params]\nq = 1.5\n").unwrap();
    let o = twrn(&["--config", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("params.q"), "{err}");

    std::fs::write(&cfg, "[params]\nspeed = 2\n").unwrap();
    assert_eq!(twrn(&["analyze", "--config", cfg.to_str().unwrap()], None).status.code(), Some(1));
    assert_eq!(twrn(&["analyze", "--g2", "0.3"], None).status.code(), Some(1));
    assert_eq!(twrn(&["launch"], None).status.code(), Some(1));
    assert_eq!(twrn(&["--help"], None).status.code(), Some(0));
}

#[test]
fn unstable_point_exits_two() {
    let o = twrn(&["analyze", "--g1", "0.5", "--g2", "0.5", "--q", "0.1"], None);
    assert_eq!(o.status.code(), Some(2));
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    assert!(row.contains(",analytic,,,,,false,"), "{row}");
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "command = simulate\n[params]\ng1 = 0.5\ng2 = 0.25\nq = 0.75\n[sim]\nhorizon = 2000\nreplications = 2\nseed = 5\n").unwrap();
    let seed_of = |o: &Output| stdout(o).lines().nth(1).unwrap().split(',').nth(16).unwrap().to_string();
    let c = cfg.to_str().unwrap();
    assert_eq!(seed_of(&twrn(&["--config", c], Some("9"))), "5");
    assert_eq!(seed_of(&twrn(&["--config", c, "--seed", "7"], Some("9"))), "7");
    let plain = ["simulate", "--g1", "0.5", "--g2", "0.25", "--q", "0.75", "--horizon", "2000", "--replications", "2"];
    assert_eq!(seed_of(&twrn(&plain, Some("9"))), "9");
    assert_eq!(seed_of(&twrn(&plain, None)), "1");
    assert_eq!(twrn(&plain, Some("x")).status.code(), Some(1));
}

#[test]
fn simulate_fills_interval_columns() {
    let o = twrn(&["simulate", "--k", "2", "--g2", "0.25", "--q", "0.75", "--horizon", "20000", "--replications", "3", "--lam1", "0.1", "--lam2", "0.05"], None);
    assert_eq!(o.status.code(), Some(0));
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols.len(), 21);
    assert_eq!((cols[6], cols[7], cols[9]), ("0.1", "0.05", "sim"));
    assert_eq!(cols[17], "54000");
    assert!(cols[18..].iter().all(|c| c.parse::<f64>().unwrap() >= 0.0));
}

#[test]
fn stability_writes_frontier() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("region.csv");
    let o = twrn(
        &["stability", "--q", "0.7", "--g1", "0.5", "--g2", "0.5", "--m", "3", "--mode", "nc", "--lam1-step", "0.15", "--lam2-step", "0.01", "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert!(csv.starts_with("lam1,lam2,m,epsilon,mode"));
    assert!(!rows.is_empty());
    assert_eq!((rows[0][0].as_str(), rows[0][2].as_str(), rows[0][4].as_str()), ("0.01", "3", "nc"));
    let lam2: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(lam2.windows(2).all(|w| w[1] <= w[0]));
}
