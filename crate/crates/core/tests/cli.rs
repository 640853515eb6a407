use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const QUICK: [&str; 8] = [
    "--override",
    "train.rounds=1",
    "--override",
    "train.epochs_adam=20",
    "--override",
    "train.lbfgs_max_iters=10",
    "--override",
    "train.n_interior0=32",
];

fn dpp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_the_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["solve", "--preset", "pressure1d", "--seed", "3"];
    args.extend(QUICK);
    let o = dpp(&args, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "summary.json",
        "history.csv",
        "rar.csv",
        "fields.csv",
        "checkpoint.json",
        "settings.toml",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(!out.join("error.json").exists());
    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["preset"], "pressure1d");
    assert_eq!(s["seed"], 3);
    assert!(s["errors"]["p1"].as_f64().unwrap().is_finite());
    let fields = fs::read_to_string(out.join("fields.csv")).unwrap();
    assert!(fields.starts_with("x,p1,p2,u1,u2,chi\n"));
    assert_eq!(fields.lines().count(), 1002);
    let rar = fs::read_to_string(out.join("rar.csv")).unwrap();
    assert_eq!(rar.lines().count(), 2);
    let settings = fs::read_to_string(out.join("settings.toml")).unwrap();
    assert!(settings.contains("epochs_adam = 20"));

    let plot = dir.path().join("plot.csv");
    let mut first = None;
    for _ in 0..2 {
        let o = Command::new(env!("CARGO_BIN_EXE_dpp"))
            .args(["export", "--run"])
            .arg(&out)
            .arg("--out")
            .arg(&plot)
            .output()
            .unwrap();
        assert!(o.status.success());
        let bytes = fs::read(&plot).unwrap();
        assert!(bytes.starts_with(b"x,y,field,value\n"));
        if let Some(prev) = &first {
            assert_eq!(prev, &bytes);
        }
        first = Some(bytes);
    }
}

#[test]
fn oracle_headers() {
    let dir = tempfile::tempdir().unwrap();
    let o = dpp(
        &[
            "oracle",
            "--preset",
            "radial2d",
            "--override",
            "oracle.n_grid=41",
        ],
        &dir.path().join("r"),
    );
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("r/oracle.csv")).unwrap();
    assert!(text.starts_with("r,p1,p2,u1,u2\n"));
    assert_eq!(text.lines().count(), 42);

    let o = dpp(&["oracle", "--preset", "pressure1d"], &dir.path().join("x"));
    assert!(o.status.success());
    assert!(fs::read_to_string(dir.path().join("x/oracle.csv"))
        .unwrap()
        .starts_with("x,p1,p2,u1,u2\n"));

    let o = dpp(
        &[
            "oracle",
            "--preset",
            "inverse2d",
            "--override",
            "oracle.nx=31",
            "--override",
            "oracle.ny=21",
        ],
        &dir.path().join("g"),
    );
    assert!(o.status.success());
    assert!(fs::read_to_string(dir.path().join("g/oracle.csv"))
        .unwrap()
        .starts_with("x,y,p1,p2,chi\n"));
}

#[test]
fn sweep_is_monotone_and_tabulated() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = dpp(
        &[
            "sweep",
            "--preset",
            "inverse2d",
            "--beta",
            "0.1,1,5",
            "--override",
            "oracle.nx=31",
            "--override",
            "oracle.ny=21",
        ],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(table.starts_with("beta,Q,solver_tag\n"));
    assert_eq!(table.lines().count(), 4);
    assert_eq!(read_json(&out.join("summary.json"))["monotone"], true);
}

fn assert_exit(o: &Output, code: i32, kind: &str, out: &Path) {
    assert_eq!(
        o.status.code(),
        Some(code),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(!o.stderr.is_empty());
    let e = read_json(&out.join("error.json"));
    assert_eq!(e["exit_code"], code);
    assert_eq!(e["kind"], kind);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    fs::create_dir_all(&out).unwrap();
    let o = dpp(&["solve", "--preset", "nope"], &out);
    assert_exit(&o, 2, "config", &out);

    let o = dpp(
        &[
            "solve",
            "--preset",
            "pressure1d",
            "--override",
            "train.no_such_key=1",
        ],
        &out,
    );
    assert_exit(&o, 2, "config", &out);

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "schema_version = 99\npreset = \"pressure1d\"\n").unwrap();
    let o = dpp(&["solve", "--config", cfg.to_str().unwrap()], &out);
    assert_exit(&o, 2, "config", &out);

    let o = dpp(&["sweep", "--preset", "pressure1d"], &out);
    assert_exit(&o, 2, "config", &out);

    let o = Command::new(env!("CARGO_BIN_EXE_dpp"))
        .args(["export", "--run"])
        .arg(dir.path().join("missing"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gauge_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let o = dpp(
        &[
            "oracle",
            "--preset",
            "mixed1d",
            "--override",
            "problem.material.beta=0.0",
        ],
        &out,
    );
    assert_exit(&o, 4, "gauge", &out);
}

#[test]
fn divergence_exits_3_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let mut args = vec![
        "solve",
        "--preset",
        "pressure1d",
        "--override",
        "train.lr=1e300",
        "--override",
        "train.grad_clip=1e300",
    ];
    args.extend(QUICK);
    let o = dpp(&args, &out);
    assert_exit(&o, 3, "divergence", &out);
    assert!(out.join("checkpoint.json").is_file());
    assert!(!read_json(&out.join("summary.json"))["divergence"].is_null());
}
