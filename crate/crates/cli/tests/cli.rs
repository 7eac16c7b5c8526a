use std::path::Path;
use std::process::{Command, Output};

fn cutform(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cutform"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("CUTFORM_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn verify_writes_table_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = cutform(&["verify", "--mesh", "16"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(out.join("verify.csv"));
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "geometry,functional,n,h,ad_exact,ad_exact_scaled,ad_fd,pass");
    assert_eq!(rows.len(), 1 + 2 * 4);
    assert!(rows[1..].iter().all(|r| r.ends_with(",true")));
    assert!(rows.iter().any(|r| r.starts_with("circle,J4,16,") && r.contains(",N/A,N/A,")));
    let resolved: toml::Table = read(out.join("config.toml")).parse().unwrap();
    let v = resolved["verify"].as_table().unwrap();
    assert_eq!(v["meshes"].as_array().unwrap().len(), 1);
    assert_eq!(v["fd_tol"].as_float(), Some(1e-7));
    assert_eq!(resolved["hessian"]["tol"].as_float(), Some(1e-4));
    let grad = read(out.join("gradients/coscos_J2_16.csv"));
    assert_eq!(grad.lines().next(), Some("node,x,y,ad,exact,fd"));
    assert_eq!(grad.lines().count(), 1 + 17 * 17);
}

#[test]
fn csv_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "threads = 2\n[verify]\nmeshes = [12]\nfunctionals = [\"J2\", \"J4\"]\n");
    let a = cutform(&["verify", "--config", &cfg], &dir.path().join("a"));
    let b = cutform(&["verify", "--config", &cfg], &dir.path().join("b"));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    for f in ["verify.csv", "gradients/circle_J2_12.csv", "gradients/coscos_J4_12.csv"] {
        assert_eq!(read(dir.path().join("a").join(f)), read(dir.path().join("b").join(f)), "{f}");
    }
}

#[test]
fn unknown_key_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[verify]\nmesh = 3\n");
    let o = cutform(&["verify", "--config", &cfg], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
    let o = cutform(&["isovol", "--geometry", "torus"], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn breach_still_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[verify]\nmeshes = [8]\nfd_tol = 1e-30\nwrite_gradients = false\n");
    let out = dir.path().join("o");
    let o = cutform(&["verify", "--config", &cfg, "--geometry", "circle"], &out);
    assert_eq!(o.status.code(), Some(2));
    let table = read(out.join("verify.csv"));
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().skip(1).all(|r| r.ends_with(",false")));
}

#[test]
fn oversized_fd_step_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = cutform(&["verify", "--mesh", "8", "--fd-step", "0.5"], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn env_var_overrides_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_cutform"))
        .args(["reinit", "--mesh", "20", "--geometry", "circle", "--out"])
        .arg(dir.path().join("from_flag"))
        .env("CUTFORM_OUT", &env_out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(env_out.join("reinit.csv").exists());
    assert!(!dir.path().join("from_flag").exists());
}

#[test]
fn isovol_snake_is_one_volume_over_four_parts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = cutform(&["isovol"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(out.join("isovol.csv"));
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "snake");
    assert_eq!(row[4], "1");
    let parts = read(out.join("parts.csv"));
    let local_in: usize = parts.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse::<usize>().unwrap()).sum();
    assert!(local_in >= 4);
    let vtk = read(out.join("isovol.vtk"));
    assert!(vtk.starts_with("# vtk DataFile Version 3.0\n"));
    for f in ["SCALARS colour", "SCALARS psi", "SCALARS part", "SCALARS local_colour", "SCALARS parent_cell"] {
        assert!(vtk.contains(f), "{f}");
    }
}

#[test]
fn evolve_paired_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = cutform(&["evolve", "--mesh", "24", "--snapshot-every", "10"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = read(out.join("evolve.csv"));
    let val = |name: &str| -> f64 {
        let l = t.lines().find(|l| l.starts_with(name)).unwrap();
        l.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!(val("weighted,") < val("unweighted,"));
    assert!(out.join("evolve_weighted_0020.vtk").exists());
}

#[test]
fn hessian_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = cutform(&["hessian-check", "--mesh", "12"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(out.join("hessian.csv")).lines().nth(1).unwrap().ends_with(",true"));
}

#[test]
fn optimize_volume_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = cutform(&["optimize", "--geometry", "volume", "--mesh", "24"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let history = read(out.join("history.csv"));
    assert_eq!(history.lines().next(), Some("iter,J,C,lambda,rho,descent,max_velocity,reinit,retries"));
    let last = history.lines().last().unwrap();
    let c: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert!(c.abs() <= 1e-3);
    assert!(read(out.join("final.vtk")).contains("SCALARS phi double 1"));
}
