use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nrtl-ident"))
}

fn run(args: &[&str], config: &Path, out: &Path, extra_env: &[(&str, &str)]) -> Output {
    let mut c = bin();
    c.args(args).arg("--config").arg(config).arg("--out").arg(out);
    for (k, v) in extra_env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

const SMALL_MC: &str = r#"
seed = 9
[[mixture]]
fixture = "methwater-like"
[mc]
measurements = ["best"]
parameters = ["All", "alpha*"]
regularization = ["None", "GO"]
n_mc = 6
"#;

/// Columns that hold labels or flags rather than quantities.
const LABEL_COLUMNS: [&str; 7] = ["scenario", "mixture", "measurement", "parameters", "regularization", "status", "quantity"];
const SUFFIXES: [&str; 6] = ["_molmol", "_Pa", "_K", "_dimless", "_count", "_id"];

fn assert_unit_headers(csv: &Path) {
    let text = fs::read_to_string(csv).unwrap();
    let header = text.lines().next().unwrap();
    for col in header.split(',') {
        if LABEL_COLUMNS.contains(&col) || col == "failure_alarm" {
            continue;
        }
        assert!(SUFFIXES.iter().any(|s| col.ends_with(s)), "{}: column {col} lacks a unit suffix", csv.display());
    }
}

#[test]
fn missing_config_exits_with_config_error_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["vle"], &tmp.path().join("absent.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(!out.exists());
}

#[test]
fn unresolved_labels_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    for body in [
        "[vle]\nmixture = \"nope\"\n",
        "[mc]\nparameters = [\"gamma*\"]\nn_mc = 1\n",
        "[mc]\nn_mc = 0\n",
        "[mc]\nn_mc = 2\nregularization = [\"GO-OED\"]\n",
        "[grid]\npressures = [2e5]\n[mc]\nn_mc = 1\n",
        "unknown_key = 1\n",
    ] {
        let cfg = write_config(tmp.path(), body);
        let cmd = if body.contains("[vle]") { "vle" } else { "mc" };
        let o = run(&[cmd], &cfg, &out, &[]);
        assert_eq!(o.status.code(), Some(2), "{body}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{body}");
    }
}

#[test]
fn vle_emits_twenty_rows() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[vle]\nmixture = \"ethbenz-like\"\n");
    let out = tmp.path().join("out");
    let o = run(&["vle"], &cfg, &out, &[]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("vle.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1L_molmol,P_Pa,T_K,x1V_molmol,gamma1_dimless,gamma2_dimless"));
    assert_eq!(lines.count(), 20);
}

#[test]
fn noiseless_single_replicate_has_full_coverage() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[[mixture]]\nfixture = \"acechl-like\"\n[mc]\nmeasurements = [\"best\"]\nn_mc = 1\nnoise_scale = 0.0\n",
    );
    let out = tmp.path().join("out");
    assert!(run(&["mc"], &cfg, &out, &[]).status.success());
    let text = fs::read_to_string(out.join("mc_summary.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "q95_y_dimless").unwrap();
    assert_eq!(row[col], "1");
}

#[test]
fn outputs_are_stable_and_unit_labelled() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_MC);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&["mc"], &cfg, &a, &[]).status.success());
    assert!(run(&["mc"], &cfg, &b, &[]).status.success());
    for f in ["mc_summary.csv", "mc_replicates.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_unit_headers(&a.join("mc_summary.csv"));
    assert_unit_headers(&a.join("mc_replicates.csv"));
    let rows = fs::read_to_string(a.join("mc_summary.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 4);
}

#[test]
fn scenario_filter_selects_one_study() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_MC);
    let out = tmp.path().join("out");
    let o = run(&["mc", "--scenario", "methwater-like/best/alpha*/GO"], &cfg, &out, &[]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("mc_summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("methwater-like/best/alpha*/GO,"));

    let none = tmp.path().join("none");
    let o = run(&["mc", "--scenario", "nothing"], &cfg, &none, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_flag_overrides_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_MC);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&["mc"], &cfg, &a, &[("NRTL_IDENT_THREADS", "1")]).status.success());
    assert!(run(&["mc", "--threads", "3"], &cfg, &b, &[("NRTL_IDENT_THREADS", "1")]).status.success());
    assert_eq!(fs::read(a.join("mc_replicates.csv")).unwrap(), fs::read(b.join("mc_replicates.csv")).unwrap());
}

#[test]
fn fit_reports_estimates_and_intervals() {
    let tmp = TempDir::new().unwrap();
    let data = "x1L_molmol,P_Pa,x1V_molmol\n0.1,50000,0.4\n0.2,50000,0.45\n";
    fs::write(tmp.path().join("d.csv"), data).unwrap();
    let cfg = write_config(
        tmp.path(),
        "[[mixture]]\nfixture = \"ethbenz-like\"\n[fit]\nmixture = \"ethbenz-like\"\nmeasurement = \"best\"\ndata = \"d.csv\"\n",
    );
    // The "best" scenario needs a temperature column.
    let out = tmp.path().join("out");
    assert_eq!(run(&["fit"], &cfg, &out, &[]).status.code(), Some(2));
    assert!(!out.exists());

    let repo_cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/custom_mixture.toml");
    let o = run(&["fit"], &repo_cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("fit_parameters.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_unit_headers(&out.join("fit_parameters.csv"));
    assert_unit_headers(&out.join("fit_predictions.csv"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], serde_json::Value::Bool(true));
}

#[test]
fn oed_suggests_a_point_inside_the_box() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[oed]\nmixture = \"acechl-like\"\nmeasurement = \"x1V-T-default\"\nfixed = [\"alpha\"]\nn_new = 2\n",
    );
    let out = tmp.path().join("out");
    let o = run(&["oed"], &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("oed_design.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!((0.01..=0.99).contains(&r[0]) && (0.5e5..=1.5e5).contains(&r[1]));
    }
}
