use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use permshield::designs::paired_design;
use permshield::linalg::Matrix;
use permshield::palm::run_test;
use permshield::perm::RowSet;
use permshield::rng::{derive_seed, tag};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_permshield"))
}

fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env_remove("PERMSHIELD_SEED")
        .output()
        .unwrap()
}

fn write_vec(path: &Path, v: &[f64]) {
    let text: String = v.iter().map(|x| format!("{x}\n")).collect();
    fs::write(path, text).unwrap();
}

fn write_matrix(path: &Path, m: &Matrix) {
    let text: String = m
        .to_rows()
        .iter()
        .map(|r| r.iter().map(f64::to_string).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(path, text).unwrap();
}

struct Fixture {
    dir: tempfile::TempDir,
    x: Vec<f64>,
    z: Matrix,
    y: Vec<f64>,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let n = 20;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let z = Matrix::from_rows(
            &(0..n)
                .map(|i| vec![1.0, (i as f64 * 0.37).sin()])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let y: Vec<f64> = (0..n)
            .map(|i| 0.8 * x[i] + ((i * 13) % 7) as f64 * 0.3)
            .collect();
        write_vec(&dir.path().join("x.txt"), &x);
        write_matrix(&dir.path().join("z.csv"), &z);
        write_vec(&dir.path().join("y.txt"), &y);
        Self { dir, x, z, y }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }
}

#[test]
fn select_none_reproduces_unrestricted_p_value() {
    let f = Fixture::new();
    let out = f.path("res.json");
    let o = run(&[
        "test",
        "--y",
        &f.path("y.txt"),
        "--x",
        &f.path("x.txt"),
        "--z",
        &f.path("z.csv"),
        "--select",
        "none",
        "--perms",
        "300",
        "--seed",
        "9",
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rec: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let lib = run_test(
        &f.x,
        &f.z,
        &f.y,
        &RowSet::empty(20),
        300,
        derive_seed(9, &[tag::TEST]),
    )
    .unwrap();
    assert_eq!(rec["p_value"].as_f64().unwrap(), lib.p_value);
    assert_eq!(rec["row_set"].as_array().unwrap().len(), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("p-value:"));
}

#[test]
fn repeated_invocations_are_identical() {
    let f = Fixture::new();
    let args = [
        "test",
        "--y",
        &f.path("y.txt"),
        "--x",
        &f.path("x.txt"),
        "--z",
        &f.path("z.csv"),
        "--perms",
        "200",
        "--mc",
        "100",
        "--budget",
        "3",
    ];
    let a = bin()
        .args(args)
        .env("PERMSHIELD_SEED", "5")
        .output()
        .unwrap();
    let b = bin()
        .args(args)
        .args(["--threads", "1"])
        .env("PERMSHIELD_SEED", "5")
        .output()
        .unwrap();
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn fixed_row_set_file() {
    let f = Fixture::new();
    fs::write(f.dir.path().join("rows.txt"), "1 2\n3\n").unwrap();
    let rows = f.path("rows.txt");
    let o = run(&[
        "test",
        "--y",
        &f.path("y.txt"),
        "--x",
        &f.path("x.txt"),
        "--z",
        &f.path("z.csv"),
        "--select",
        &rows,
        "--perms",
        "100",
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("{1,2,3}"));
}

#[test]
fn exit_codes_for_bad_inputs() {
    let f = Fixture::new();
    fs::write(f.dir.path().join("ragged.csv"), "1,2\n3\n").unwrap();
    let o = run(&[
        "test",
        "--y",
        &f.path("y.txt"),
        "--x",
        &f.path("x.txt"),
        "--z",
        &f.path("ragged.csv"),
    ]);
    assert_eq!(o.status.code(), Some(2));

    write_vec(&f.dir.path().join("short.txt"), &f.y[..10]);
    let o = run(&[
        "test",
        "--y",
        &f.path("short.txt"),
        "--x",
        &f.path("x.txt"),
        "--z",
        &f.path("z.csv"),
    ]);
    assert_eq!(o.status.code(), Some(3));

    let d = paired_design(8, 2).unwrap();
    let mut z = d.z.clone();
    let xz = Matrix::hstack(&[&Matrix::column_vector(&d.x).unwrap(), &z]).unwrap();
    z = xz;
    write_vec(&f.dir.path().join("xc.txt"), &d.x);
    write_vec(&f.dir.path().join("yc.txt"), &[0.0; 8]);
    write_matrix(&f.dir.path().join("zc.csv"), &z);
    let o = run(&[
        "test",
        "--y",
        &f.path("yc.txt"),
        "--x",
        &f.path("xc.txt"),
        "--z",
        &f.path("zc.csv"),
    ]);
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn header_and_select_rows() {
    let f = Fixture::new();
    let x_h = format!("x\n{}", fs::read_to_string(f.path("x.txt")).unwrap());
    let z_h = format!("a,b\n{}", fs::read_to_string(f.path("z.csv")).unwrap());
    fs::write(f.dir.path().join("xh.txt"), x_h).unwrap();
    fs::write(f.dir.path().join("zh.csv"), z_h).unwrap();
    let out = f.path("trace.json");
    let o = run(&[
        "select-rows",
        "--x",
        &f.path("xh.txt"),
        "--z",
        &f.path("zh.csv"),
        "--header",
        "--mc",
        "100",
        "--budget",
        "2",
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(trace["q_values"].as_array().unwrap().len(), 3);
}

#[test]
fn verify_group_suite_passes() {
    let o = run(&["verify", "--suite", "group"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS"));
}

#[test]
fn reproduce_smoke_is_thread_independent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = a.path().to_string_lossy().into_owned();
    let pb = b.path().to_string_lossy().into_owned();
    let oa = run(&[
        "--threads",
        "1",
        "reproduce",
        "--experiment",
        "fig1",
        "--scale",
        "smoke",
        "--seed",
        "4",
        "--out-dir",
        &pa,
    ]);
    let ob = run(&[
        "--threads",
        "3",
        "reproduce",
        "--experiment",
        "fig1",
        "--scale",
        "smoke",
        "--seed",
        "4",
        "--out-dir",
        &pb,
    ]);
    assert!(oa.status.success() && ob.status.success());
    for f in ["fig1.csv", "fig1_summary.txt"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn experiment_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
experiment_id = "cfg-test"
noise = "student_t3"
alpha = 0.05
b_perms = 40
n_noise_draws = 20
n_replicates = 2
selection = "unrestricted"
budget_t = 2
m_mc = 40
master_seed = 3

[design]
kind = "gaussian"
n = 30
p = 3
"#;
    let path = dir.path().join("exp.toml");
    fs::write(&path, cfg).unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let o = run(&[
        "experiment",
        "--config",
        &path.to_string_lossy(),
        "--out-dir",
        &out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("cfg-test.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    fs::write(&path, format!("{cfg}\nbogus = 1\n")).unwrap();
    let o = run(&[
        "experiment",
        "--config",
        &path.to_string_lossy(),
        "--out-dir",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2));
}
