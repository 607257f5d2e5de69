use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bandit-sim"))
        .args(args)
        .output()
        .expect("spawn bandit-sim")
}

fn small_run(out: &Path, algo: &str) -> Output {
    bin(&[
        "run",
        "--algo",
        algo,
        "--d1",
        "3",
        "--d2",
        "3",
        "--rank",
        "1",
        "--horizon",
        "120",
        "--t1",
        "40",
        "--arms",
        "10",
        "--runs",
        "3",
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn run_writes_outputs_and_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = small_run(d, "lowestr");
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["traces.csv", "summary.json", "config.txt"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let csv = std::fs::read_to_string(a.join("traces.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3 * 120 + 1);
    assert!(!csv.contains('\r'));
}

#[test]
fn config_file_then_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        "# tiny\nalgo = oful\nd1 = 2\nd2 = 2\nrank = 1\nhorizon = 30\nruns = 5\narms = 4\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = bin(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--runs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let echo = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("runs = 2"));
    assert!(echo.contains("algo = oful"));
    assert_eq!(
        std::fs::read_to_string(out.join("traces.csv"))
            .unwrap()
            .lines()
            .count(),
        2 * 30 + 1
    );
}

#[test]
fn exit_codes() {
    assert_eq!(bin(&["run", "--rank", "11"]).status.code(), Some(2));
    assert_eq!(bin(&["run", "--algo", "nope"]).status.code(), Some(2));
    assert_eq!(bin(&["run", "--horizon", "ten"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "colour = red\n").unwrap();
    assert_eq!(
        bin(&["run", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let o = bin(&[
        "run", "--algo", "lowloc", "--d1", "4", "--d2", "4", "--rank", "1", "--runs", "1",
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn sweep_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep");
    let o = bin(&[
        "sweep-omega",
        "--omegas",
        "0.25,0.5",
        "--algo",
        "lowestr",
        "--d1",
        "3",
        "--d2",
        "3",
        "--rank",
        "2",
        "--horizon",
        "450",
        "--arms",
        "8",
        "--runs",
        "2",
        "--out",
        sweep.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "omega_r,t1,mean,sd");
    assert!(lines[1].starts_with("0.25,400,"));
    assert!(lines[2].starts_with("0.5,200,"));

    let svg = dir.path().join("sweep.svg");
    let o = bin(&[
        "chart",
        "--in",
        sweep.to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<polyline").count(), 1);
    assert_eq!(text.matches("<polygon").count(), 1);

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_run(&a, "oful").status.success());
    assert!(small_run(&b, "lowestr").status.success());
    let curves = dir.path().join("curves.svg");
    let o = bin(&[
        "chart",
        "--in",
        a.to_str().unwrap(),
        "--in",
        b.to_str().unwrap(),
        "--out",
        curves.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&curves).unwrap();
    assert_eq!(text.matches("<polyline").count(), 2);
    assert!(text.contains(">oful<") && text.contains(">lowestr<"));

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = bin(&[
        "chart",
        "--in",
        empty.to_str().unwrap(),
        "--out",
        curves.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
