use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use ct_cli::strip_timing;
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn ct(args: &[&str], out: &Path) -> i32 {
    ct_env(args, out, &[])
}

fn ct_env(args: &[&str], out: &Path, env: &[(&str, &str)]) -> i32 {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ct"));
    cmd.args(args).arg("--out").arg(out).stderr(Stdio::null());
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.status().expect("spawn ct").code().expect("exit code")
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn p(name: &str) -> String {
    data(name).to_string_lossy().into_owned()
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ct(&["selftest"], dir.path()), 0);
    let r = report(dir.path());
    assert_eq!(r["converged"], true);
    assert!(r["results"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["pass"] == true));
}

#[test]
fn pigou_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let code = ct(
        &[
            "wardrop",
            "--net",
            &p("pigou.net"),
            "--demand",
            &p("pigou.dem"),
            "--tol",
            "1e-9",
        ],
        dir.path(),
    );
    assert_eq!(code, 0);
    let r = report(dir.path());
    assert!((r["results"]["objective"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert_eq!(r["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(r["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    let flows = std::fs::read_to_string(dir.path().join("flows.csv")).unwrap();
    assert!(flows.starts_with("edge,tail,head,flow,unit_cost\n"));
    assert!(dir.path().join("paths.csv").is_file());
}

#[test]
fn braess_with_a_cost_override() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "wardrop",
        "--net",
        &p("braess.net"),
        "--demand",
        &p("braess.dem"),
        "--H",
        "affine_power",
        "1",
        "2",
    ];
    assert_eq!(ct(&args, dir.path()), 0);
    let r = report(dir.path());
    assert!(r["results"]["verification"]["max_excess"].as_f64().unwrap() <= 1e-4);
    assert_eq!(
        r["config"]["options"]["h"],
        serde_json::json!(["affine_power", "1", "2"])
    );
}

#[test]
fn transport_between_point_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        ct(
            &["ot", "--mu", &p("a.pts"), "--nu", &p("b.pts"), "--metric", "lp", "1"],
            dir.path()
        ),
        0
    );
    assert_eq!(report(dir.path())["results"]["value"], 1.0);
    assert_eq!(
        ct(
            &[
                "ot",
                "--mu",
                &p("square.pts"),
                "--nu",
                &p("targets.pts"),
                "--metric",
                "lp",
                "1"
            ],
            dir.path()
        ),
        0
    );
    let r = report(dir.path());
    let res = &r["results"];
    assert!(res["duality_gap"].as_f64().unwrap().abs() <= 1e-10);
    // the plan file carries all the mass
    let plan = std::fs::read_to_string(dir.path().join("plan.csv")).unwrap();
    let mass: f64 = plan
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((mass - 1.0).abs() < 1e-12);
}

#[test]
fn hotelling_round_trip_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let code = ct(
        &[
            "hotelling",
            "--firms",
            &p("firms.pts"),
            "--consumers",
            &p("line.pts"),
            "--prices",
            "0,0.5",
        ],
        dir.path(),
    );
    assert_eq!(code, 0);
    let r = report(dir.path());
    assert!(r["results"]["round_trip_error"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn beckmann_and_city_write_their_fields() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "beckmann",
        "--mu",
        &p("mu.csv"),
        "--nu",
        &p("nu.csv"),
        "--grid",
        &p("grid.txt"),
        "--particles",
        "200",
        "--steps",
        "40",
    ];
    assert_eq!(ct(&args, dir.path()), 0);
    for f in ["vx.csv", "vy.csv", "magnitude.csv", "particles.csv", "intensity.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let city = tempfile::tempdir().unwrap();
    assert_eq!(ct(&["city", "--config", &p("services.json")], city.path()), 0);
    assert_eq!(report(city.path())["results"]["mode"], "fixed_services");
}

#[test]
fn exit_codes_follow_the_outcome() {
    let dir = tempfile::tempdir().unwrap();
    // missing input
    assert_eq!(ct(&["ot", "--mu", "/no/such/file", "--nu", &p("b.pts")], dir.path()), 1);
    // invalid tolerance
    assert_eq!(
        ct(
            &["ot", "--mu", &p("a.pts"), "--nu", &p("b.pts"), "--tol=-1"],
            dir.path()
        ),
        1
    );
    // unknown flag
    assert_eq!(ct(&["ot", "--bogus"], dir.path()), 1);
    // malformed file
    assert_eq!(ct(&["ot", "--mu", &p("pigou.net"), "--nu", &p("b.pts")], dir.path()), 1);
    // one iteration is not enough; the best iterate is still reported
    let args = [
        "beckmann",
        "--mu",
        &p("mu.csv"),
        "--nu",
        &p("nu.csv"),
        "--grid",
        &p("grid.txt"),
        "--max-iter",
        "1",
    ];
    assert_eq!(ct(&args, dir.path()), 2);
    assert_eq!(report(dir.path())["converged"], false);
}

#[test]
fn reports_are_reproducible_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["city", "--config", &p("poles.json")];
    assert_eq!(ct_env(&args, a.path(), &[("CT_THREADS", "1")]), 0);
    assert_eq!(ct_env(&args, b.path(), &[("CT_THREADS", "3")]), 0);
    let ra = std::fs::read_to_string(a.path().join("report.json")).unwrap();
    let rb = std::fs::read_to_string(b.path().join("report.json")).unwrap();
    // only the timing and the echoed thread count and output path differ
    let clean = |s: &str| {
        strip_timing(s)
            .lines()
            .filter(|l| !l.contains("\"threads\"") && !l.contains("\"output_dir\""))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(clean(&ra), clean(&rb));
    for f in ["mu.csv", "services.csv", "potential.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
