use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn smpnp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smpnp")).args(args).output().expect("spawn smpnp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn mesh_synth_writes_a_loadable_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("box.mesh");
    let o = smpnp(&[
        "mesh", "synth", "--out", out.to_str().unwrap(), "--resolution", "4", "--lo", "-10", "-10", "-10", "--hi", "10",
        "10", "10", "--membrane", "-3", "3", "--pore-radius", "3", "--shell-radius", "6",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("vertices"));

    let cfg = write_config(dir.path(), "mesh_file = box.mesh\n");
    let o = smpnp(&["check", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("vertices = 125"), "{text}");
    assert!(text.contains("tets = 384"), "{text}");
}

#[test]
fn check_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "resolution = 6\nring_count = 4\nring_charge = -0.5\n");
    let o = smpnp(&["check", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("config ok"));
    assert!(text.contains("atoms = 4"), "{text}");
    assert!(text.contains("species = 4"), "{text}");
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "omega = 3\n");
    let o = smpnp(&["check", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = smpnp(&["run", "--config", dir.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn converged_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "resolution = 6\ninitial_slotboom = boundary\noutput_dir = result\n");
    let o = smpnp(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("result");
    for f in ["solution.vtk", "profiles.csv", "convergence.csv", "summary.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("converged = true"), "{summary}");
    let vtk = fs::read_to_string(out.join("solution.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile"));
}

#[test]
fn iteration_limit_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "resolution = 6\nsigma = -0.5\nmax_outer = 5\n");
    let out = dir.path().join("over");
    let o = smpnp(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("converged = false"), "{summary}");
    let rows = fs::read_to_string(out.join("convergence.csv")).unwrap().lines().count();
    assert_eq!(rows, 6);
}
