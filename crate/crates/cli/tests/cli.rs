use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const FIGURE_ONE: &str = r#"
free_congestion = 1.5

[[providers]]
cap = 0.4
lump_sum = 0.1
per_unit = 0.6
capacity = 0.5

[distribution]
alpha = 1
beta = 1
"#;

const SMALL_CHECKS: &str = r#"
[verify]
fixed_point_cases = 20
monotonicity_pairs = 5
normalization_cases = 5
equivalence_cases = 10
dominance_cases = 3
"#;

const COARSE_SEARCH: &str = r#"
[search]
grid_f = 11
grid_p = 11
refinement_tolerance = 1e-4
"#;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn datacap(args: &[&str], config: &Path, out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_datacap"));
    cmd.args(args).arg("--config").arg(config);
    if let Some(o) = out {
        cmd.arg("--out").arg(o);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Data rows of a CSV, skipping the header and the trailer comment.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn cell(text: &str, row: usize, column: &str) -> f64 {
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let j = header.iter().position(|h| *h == column).unwrap_or_else(|| panic!("no column {column}"));
    rows(text)[row][j].parse().unwrap()
}

#[test]
fn figure_one_equilibrium() {
    let sb = Sandbox::new();
    let cfg = sb.write("fig1.toml", FIGURE_ONE);
    let o = datacap(&["equilibrium"], &cfg, None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("id,q,d,revenue,welfare,residual,iterations\n"));
    assert!((cell(&text, 0, "q") - 0.3387).abs() <= 1e-3);
    assert!((cell(&text, 0, "d") - 0.1693).abs() <= 1e-3);
    let trailer = text.lines().last().unwrap();
    assert!(trailer.starts_with(&format!("# datacap {} config=", env!("CARGO_PKG_VERSION"))), "{trailer}");
    assert!(trailer.ends_with("seed=20240601"));
    assert!(!text.contains('\r'));
    let summary: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(summary["status"], "ok");
}

#[test]
fn summary_goes_to_stdout_with_out_file() {
    let sb = Sandbox::new();
    let cfg = sb.write("fig1.toml", FIGURE_ONE);
    let out = sb.path("eq.csv");
    let o = datacap(&["equilibrium", "--seed", "5"], &cfg, Some(&out));
    assert_eq!(code(&o), 0);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["command"], "equilibrium");
    assert_eq!(summary["seed"], 5);
    assert!(std::fs::read_to_string(&out).unwrap().ends_with("seed=5\n"));
}

#[test]
fn prohibitive_fee_empties_the_market() {
    let sb = Sandbox::new();
    let cfg = sb.write("f.toml", &FIGURE_ONE.replace("lump_sum = 0.1", "lump_sum = 1.2"));
    let o = datacap(&["equilibrium"], &cfg, None);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(cell(&text, 0, "q"), 0.0);
    assert_eq!(cell(&text, 0, "revenue"), 0.0);

    let o = datacap(&["oracle-compare"], &sb.write("g.toml", &format!("{}\n[oracle]\nn_u = 40\nn_v = 40\n", FIGURE_ONE.replace("lump_sum = 0.1", "lump_sum = 1.2"))), None);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for col in ["delta_q", "delta_load", "delta_revenue", "delta_welfare"] {
        assert_eq!(cell(&text, 0, col), 0.0, "{col}");
    }
}

#[test]
fn malformed_config_writes_nothing() {
    let sb = Sandbox::new();
    let out = sb.path("never.csv");
    for (name, text) in [
        ("syntax.toml", FIGURE_ONE.replace("alpha = 1", "alpha = = 1")),
        ("negative.toml", FIGURE_ONE.replace("capacity = 0.5", "capacity = -0.5")),
        ("unknown.toml", FIGURE_ONE.replace("beta = 1", "beta = 1\ngamma = 3")),
        ("symbol.toml", FIGURE_ONE.replace("cap = 0.4", "cap = \"lots\"")),
        ("missing.toml", FIGURE_ONE.replace("free_congestion = 1.5", "")),
        ("empty.toml", FIGURE_ONE.replace("[[providers]]", "providers = []\n[unused]")),
    ] {
        let cfg = sb.write(name, &text);
        let o = datacap(&["equilibrium"], &cfg, Some(&out));
        assert_eq!(code(&o), 1, "{name}");
        assert!(!out.exists(), "{name}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"), "{name}");
    }
}

#[test]
fn validation_errors_name_the_line() {
    let sb = Sandbox::new();
    let cfg = sb.write("bad.toml", &FIGURE_ONE.replace("per_unit = 0.6", "per_unit = -0.6"));
    let o = datacap(&["equilibrium"], &cfg, None);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 7"), "{err}");
}

#[test]
fn missing_file_and_bad_flags_are_config_errors() {
    let sb = Sandbox::new();
    assert_eq!(code(&datacap(&["equilibrium"], &sb.path("absent.toml"), None)), 1);
    let cfg = sb.write("fig1.toml", FIGURE_ONE);
    assert_eq!(code(&datacap(&["optimize-fees", "--cap", "big"], &cfg, None)), 1);
    assert_eq!(code(&datacap(&["equilibrium", "--jobs", "0"], &cfg, None)), 1);
    assert_eq!(code(&datacap(&["nonsense"], &cfg, None)), 1);
}

#[test]
fn iteration_budget_exhaustion_exits_two() {
    let sb = Sandbox::new();
    let cfg = sb.write("tight.toml", &format!("{FIGURE_ONE}\n[solver]\nmax_iters = 3\n"));
    let out = sb.path("eq.csv");
    let o = datacap(&["equilibrium"], &cfg, Some(&out));
    assert_eq!(code(&o), 2);
    // The partial result is still written for inspection.
    assert_eq!(rows(&std::fs::read_to_string(&out).unwrap()).len(), 1);
}

#[test]
fn output_is_byte_identical_across_runs_and_thread_counts() {
    let sb = Sandbox::new();
    let cfg = sb.write("s.toml", &format!("{FIGURE_ONE}{COARSE_SEARCH}\n[sweep]\ng_grid = [0.0, 0.3, \"unlimited\"]\n"));
    let a = datacap(&["sweep-cap", "--jobs", "1"], &cfg, None);
    let b = datacap(&["sweep-cap", "--jobs", "4"], &cfg, None);
    let c = datacap(&["sweep-cap"], &cfg, None);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);

    let v = sb.write("v.toml", &format!("{FIGURE_ONE}{SMALL_CHECKS}"));
    let a = datacap(&["verify", "--seed", "11", "--jobs", "1"], &v, None);
    let b = datacap(&["verify", "--seed", "11", "--jobs", "3"], &v, None);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn cap_above_every_demand_matches_unlimited() {
    let sb = Sandbox::new();
    let cfg = sb.write("s.toml", &format!("{FIGURE_ONE}{COARSE_SEARCH}\n[sweep]\ng_grid = [1.0, \"unlimited\"]\n"));
    let o = datacap(&["sweep-cap"], &cfg, None);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("g,f_star,p_star,R_star,S_at_Rstar,f_circ,p_circ,S_circ\n"));
    let r = rows(&text);
    assert_eq!(r.len(), 2);
    assert_eq!(r[0][1..], r[1][1..]);
}

#[test]
fn optimize_fees_reports_one_row() {
    let sb = Sandbox::new();
    let cfg = sb.write("o.toml", &format!("{FIGURE_ONE}{COARSE_SEARCH}"));
    let o = datacap(&["optimize-fees", "--cap", "unlimited", "--objective", "welfare"], &cfg, None);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let r = rows(&text);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0][0], "unlimited");
    assert_eq!(r[0][1], "welfare");
    assert!(cell(&text, 0, "value") >= cell(&text, 0, "revenue"));
}

#[test]
fn verify_passes_on_default_seed() {
    let sb = Sandbox::new();
    let cfg = sb.write("v.toml", &format!("{FIGURE_ONE}{SMALL_CHECKS}"));
    let o = datacap(&["verify"], &cfg, None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(rows(&text).iter().all(|r| r[r.len() - 4] == "true"), "{text}");
}

#[test]
fn broken_congestion_is_caught() {
    let sb = Sandbox::new();
    let cfg = sb.write("m.toml", &format!("{FIGURE_ONE}{SMALL_CHECKS}inject_fault = \"congestion-ignores-capacity\"\n"));
    let o = datacap(&["verify"], &cfg, None);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("FAIL fixed-point residual"), "{err}");
    assert!(err.contains("counterexample: RandomMonopoly"), "{err}");
}

#[test]
fn soft_observations_only_warn() {
    let sb = Sandbox::new();
    let text = format!(
        "free_congestion = \"inf\"\n\n[[providers]]\ncap = \"unlimited\"\nlump_sum = 0\nper_unit = 0\ncapacity = 0.3\n\n[distribution]\nalpha = 1\nbeta = 1\n{COARSE_SEARCH}{SMALL_CHECKS}brackets = [\"welfare\"]\nbracket_grid = [0.0, 0.8, \"unlimited\"]\n"
    );
    let cfg = sb.write("soft.toml", &text);
    let o = datacap(&["verify"], &cfg, None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("warning: welfare-optimal fees not above revenue-optimal fees"), "{err}");
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains(",soft,false,"), "{out}");
    assert!(!out.contains(",hard,false,"), "{out}");
}

#[test]
fn oracle_deltas_shrink_with_resolution() {
    let sb = Sandbox::new();
    let cfg = sb.write("o.toml", &format!("{FIGURE_ONE}\n[oracle]\nresolutions = [[10, 10], [100, 100]]\n"));
    let o = datacap(&["oracle-compare"], &cfg, None);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for col in ["delta_q", "delta_load", "delta_revenue", "delta_welfare"] {
        assert!(cell(&text, 0, col) > cell(&text, 1, col), "{col}");
    }
}
