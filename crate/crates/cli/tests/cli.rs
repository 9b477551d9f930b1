use std::io::Write;
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::Duration;

const SMALL: &[&str] = &["--n0", "120", "--nk", "160", "--sites", "3", "--reps", "2", "--n-super", "100000", "--bootstrap", "10"];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fedsurv"));
    c.env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--seed", "11", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn simulate_writes_every_method_time_and_arm() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read(&dir.path().join("summary.csv"));
    assert_eq!(summary.lines().count(), 1 + 6 * 3 * 2);
    let records = read(&dir.path().join("records.csv"));
    assert_eq!(records.lines().count(), 1 + 6 * 3 * 2 * 2);
    let cfg: serde_json::Value = serde_json::from_str(&read(&dir.path().join("config.json"))).unwrap();
    assert_eq!(cfg["seed"], 11);
    assert_eq!(cfg["n0"], 120);
    assert_eq!(cfg["scenario"], "homogeneous");

    let rep = tempfile::tempdir().unwrap();
    let out = run(&["report", "--seed", "1", "--input", dir.path().to_str().unwrap(), "--out", rep.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(&rep.path().join("summary.csv")).lines().count(), 1 + 6 * 3 * 2);
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let extra = ["--methods", "TGT,FED", "--scenario", "covariate_shift"];
    assert_eq!(code(&simulate(a.path(), &extra)), 0);
    assert_eq!(code(&simulate(b.path(), &extra)), 0);
    for f in ["records.csv", "summary.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f} differs");
    }
}

#[test]
fn usage_errors_exit_one_and_name_the_field() {
    let out = run(&["simulate", "--seed", "1", "--reps", "0"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("`reps`"));
    let out = run(&["simulate", "--seed", "1", "--frobnicate"]);
    assert_eq!(code(&out), 1);
    let out = run(&["simulate", "--reps", "3"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("`seed`"));
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"seed": 4, "reps": 1, "n0": 100, "nk": 120, "sites": 2, "n_super": 100000, "methods": ["TGT"]}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--reps", "2", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let echoed: serde_json::Value = serde_json::from_str(&read(&out_dir.join("config.json"))).unwrap();
    assert_eq!(echoed["reps"], 2);
    assert_eq!(echoed["n0"], 100);
    assert_eq!(echoed["seed"], 4);
}

#[test]
fn malformed_rows_are_reported_with_their_number() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "x1,a,y,delta,r\n0.5,1,3,1,0\n0.1,0,4,2,0\n").unwrap();
    let out = run(&["estimate", "--seed", "1", "--data", data.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("delta"), "{err}");
}

/// Writes a replicate with the simulator and returns its directory.
fn dumped(root: &Path) -> std::path::PathBuf {
    let out = simulate(root, &["--dump-rep", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    root.join("rep1")
}

#[test]
fn estimate_reproduces_a_simulated_replicate() {
    let root = tempfile::tempdir().unwrap();
    let rep = dumped(root.path());
    let out_dir = root.path().join("est");
    let mut args = vec!["estimate", "--seed", "11", "--replicate", "1", "--bootstrap", "10"];
    let data = rep.join("data.csv");
    let od = out_dir.to_str().unwrap().to_string();
    args.extend(["--data", data.to_str().unwrap(), "--out", &od]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let parse = |p: &Path| -> Vec<Vec<String>> {
        read(p).lines().map(|l| l.split(',').map(String::from).collect()).collect()
    };
    let a = parse(&out_dir.join("curves.csv"));
    let b = parse(&rep.join("curves.csv"));
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b).skip(1) {
        assert_eq!(ra[..3], rb[..3]);
        for (x, y) in ra[3..].iter().zip(&rb[3..]) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= 1e-12, "{ra:?} vs {rb:?}");
        }
    }
}

#[test]
fn one_site_data_gives_target_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let mut f = std::fs::File::create(&data).unwrap();
    writeln!(f, "x1,a,y,delta,r").unwrap();
    for i in 0..120 {
        let x = (i % 10) as f64 / 10.0;
        writeln!(f, "{x},{},{},{},0", i % 2, 1 + (i * 7) % 50, (i % 3 != 0) as u8).unwrap();
    }
    drop(f);
    let out_dir = dir.path().join("out");
    let out = run(&["estimate", "--seed", "2", "--tau", "60", "--data", data.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("TGT only"));
    let curves = read(&out_dir.join("curves.csv"));
    assert!(curves.lines().skip(1).all(|l| l.starts_with("TGT,")));
    assert_eq!(curves.lines().count(), 1 + 2 * 61);
}

#[test]
fn loopback_coordinator_matches_centralized_estimate() {
    let root = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate", "--seed", "3", "--n0", "150", "--nk", "150", "--sites", "5", "--reps", "1", "--n-super", "100000",
        "--methods", "TGT", "--dump-rep", "0", "--scenario", "all_shift", "--out", root.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let data = root.path().join("rep0/data.csv");
    let coord = root.path().join("coord");
    let cen = root.path().join("cen");
    let out = run(&[
        "coordinator", "--seed", "8", "--sharing", "coarse_only", "--transport", "loopback", "--data", data.to_str().unwrap(),
        "--out", coord.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        "estimate", "--seed", "8", "--sharing", "coarse_only", "--methods", "FED", "--data", data.to_str().unwrap(), "--out",
        cen.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(&coord.join("curves.csv")), read(&cen.join("curves.csv")));
    assert_eq!(read(&coord.join("weights.csv")), read(&cen.join("weights_fed.csv")));
    let transcript = read(&coord.join("transcript.ndjson"));
    assert_eq!(transcript.lines().count(), 4 * 5);
}

fn start_coordinator(data: &Path, out: &Path, port: u16, expected: usize) -> Child {
    bin()
        .args([
            "coordinator", "--seed", "5", "--sharing", "coarse_only", "--data", data.to_str().unwrap(), "--listen",
            &format!("127.0.0.1:{port}"), "--expected-sites", &expected.to_string(), "--timeout-ms", "8000", "--out",
            out.to_str().unwrap(),
        ])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

fn connect_site(data: &Path, port: u16, site: usize) -> Output {
    for _ in 0..100 {
        if TcpStream::connect(("127.0.0.1", port)).is_ok() {
            break;
        }
        thread::sleep(Duration::from_millis(50));
    }
    run(&[
        "site", "--seed", "5", "--data", data.to_str().unwrap(), "--site", &site.to_string(), "--connect",
        &format!("127.0.0.1:{port}"),
    ])
}

#[test]
fn tcp_sites_reproduce_the_loopback_run() {
    let root = tempfile::tempdir().unwrap();
    let rep = dumped(root.path());
    let data = rep.join("data.csv");
    let tcp = root.path().join("tcp");
    let port = 47811;
    let mut coord = start_coordinator(&data, &tcp, port, 2);
    let d1 = data.clone();
    let s1 = thread::spawn(move || connect_site(&d1, port, 1));
    let s2 = connect_site(&data, port, 2);
    assert_eq!(code(&s2), 0, "{}", String::from_utf8_lossy(&s2.stderr));
    assert_eq!(code(&s1.join().unwrap()), 0);
    assert_eq!(coord.wait().unwrap().code(), Some(0));

    let lb = root.path().join("lb");
    let out = run(&[
        "coordinator", "--seed", "5", "--sharing", "coarse_only", "--transport", "loopback", "--data", data.to_str().unwrap(),
        "--out", lb.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(read(&tcp.join("curves.csv")), read(&lb.join("curves.csv")));
}

#[test]
fn a_site_that_dies_degrades_the_run() {
    let root = tempfile::tempdir().unwrap();
    let rep = dumped(root.path());
    let data = rep.join("data.csv");
    let out_dir = root.path().join("tcp");
    let port = 47812;
    let coord = start_coordinator(&data, &out_dir, port, 2);
    let d1 = data.clone();
    let s1 = thread::spawn(move || connect_site(&d1, port, 1));
    // site 2 announces itself and then disappears
    let mut s2 = bin()
        .args(["site", "--seed", "5", "--data", data.to_str().unwrap(), "--site", "2", "--connect", &format!("127.0.0.1:{port}")])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    thread::sleep(Duration::from_millis(20));
    s2.kill().unwrap();
    let _ = s2.wait();
    let _ = s1.join().unwrap();
    let out = coord.wait_with_output().unwrap();
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(2), "{err}");
    assert!(err.contains("1 of 2 source sites contributed"), "{err}");
    assert!(out_dir.join("curves.csv").exists());
}
