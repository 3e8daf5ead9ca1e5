use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn gmsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmsim")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    fs::write(&p, text).unwrap();
    p
}

fn value_after(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(key)).unwrap();
    line[key.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

const TWO_STATE: &str = r#"
states = [0.0, 1.0]
generator = [[0.0, 0.5], [0.5, 0.0]]
lambda = 5.0
initial_belief = [0.5, 0.5]
horizon = 10.0
seed = 4

[noise]
family = "logistic"
scale = SCALE
"#;

#[test]
fn check_reports_constants_and_verdict() {
    let o = gmsim(&["check", "--config", scenario("default.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!((value_after(&text, "K ") - 0.5).abs() < 1e-12);
    assert!((value_after(&text, "M ") - 0.125).abs() < 1e-12);
    for key in ["Phi(C)", "Phi(0)", "L ", "K1", "t*"] {
        assert!(text.lines().any(|l| l.starts_with(key)), "{key} missing:\n{text}");
    }

    let dir = tempfile::tempdir().unwrap();
    let steep = write_scenario(dir.path(), &TWO_STATE.replace("SCALE", "0.5"));
    let o = gmsim(&["check", "--config", steep.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TWO_STATE
        .replace("SCALE", "2.0")
        .replace("[[0.0, 0.5], [0.5, 0.0]]", "[[-0.3, 0.5], [0.5, 0.0]]");
    let p = write_scenario(dir.path(), &bad);
    let o = gmsim(&["check", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("generator[0]"));

    assert_eq!(gmsim(&["check"]).status.code(), Some(2));
    assert_eq!(gmsim(&["check", "--config", "/nonexistent.toml"]).status.code(), Some(2));
    // Atoms in the noise need --force.
    let o = gmsim(&["simulate", "--config", scenario("counterexample.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_static_lists_both_counterexample_roots() {
    let o = gmsim(&[
        "solve-static",
        "--config",
        scenario("counterexample.toml").to_str().unwrap(),
        "--force",
        "--roots",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let roots_line = text.lines().find(|l| l.starts_with("ask roots")).unwrap();
    let roots: Vec<f64> = roots_line
        .split(": ")
        .nth(1)
        .unwrap()
        .split(", ")
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(roots.len(), 2);
    assert!((roots[0] - 1.8).abs() < 1e-10 && (roots[1] - 3.0).abs() < 1e-10);
}

#[test]
fn solve_static_prices() {
    let cfg = scenario("default.toml");
    let o = gmsim(&["solve-static", "--config", cfg.to_str().unwrap(), "--belief", "0,1"]);
    let text = stdout(&o);
    assert_eq!(value_after(&text, "ask"), 1.0);
    assert_eq!(value_after(&text, "bid"), 1.0);
    assert_eq!(value_after(&text, "spread"), 0.0);

    let o = gmsim(&["solve-static", "--config", cfg.to_str().unwrap(), "--belief", "0.3,0.7"]);
    let text = stdout(&o);
    let (ask, bid) = (value_after(&text, "ask"), value_after(&text, "bid"));
    // Bisection on s - g(s) with the logistic survival written out.
    let phi = |y: f64| 1.0 / (1.0 + (y / 2.0).exp());
    let root = |w: &dyn Fn(f64) -> f64| {
        let f = |s: f64| s - 0.7 * w(s - 1.0) / (0.3 * w(s) + 0.7 * w(s - 1.0));
        let (mut a, mut b) = (0.0, 1.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(m) > 0.0 { b = m } else { a = m }
        }
        0.5 * (a + b)
    };
    assert!((ask - root(&phi)).abs() <= 1e-10);
    assert!((bid - root(&|y| 1.0 - phi(y))).abs() <= 1e-10);

    let o = gmsim(&["solve-static", "--config", cfg.to_str().unwrap(), "--belief", "0.5,0.6"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = scenario("default.toml");
    for out in [&a, &b] {
        let o = gmsim(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["events.jsonl", "summary.csv", "plot.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let mut summary = csv::Reader::from_path(a.join("summary.csv")).unwrap();
    let rows: Vec<gmsim::io::SummaryRow> = summary.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().any(|r| r.buy_profit_sum != 0.0 && r.sell_profit_sum != 0.0));

    let mut plot = csv::Reader::from_path(a.join("plot.csv")).unwrap();
    assert_eq!(plot.headers().unwrap(), vec!["t", "ask", "bid", "mean", "true_value"]);
    let rows: Vec<gmsim::io::PlotRow> = plot.deserialize().map(|r| r.unwrap()).collect();
    assert!(rows.len() > 1000);
    for r in &rows {
        assert!(r.bid <= r.mean + 1e-10 && r.mean <= r.ask + 1e-10, "{r:?}");
    }

    let events = fs::read_to_string(a.join("events.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(events.lines().next().unwrap()).unwrap();
    for key in ["t", "x", "eps", "ask", "bid", "outcome", "belief_before", "belief_after", "profit"] {
        assert!(first.get(key).is_some(), "{key}");
    }

    let c = dir.path().join("c");
    gmsim(&["simulate", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "5"]);
    assert_ne!(fs::read(a.join("events.jsonl")).unwrap(), fs::read(c.join("events.jsonl")).unwrap());
}

#[test]
fn noise_trader_valuations_are_logged_as_strings() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_scenario(
        dir.path(),
        r#"
states = [0.0, 1.0]
generator = [[0.0, 0.0], [0.0, 0.0]]
lambda = 3.0
initial_belief = [0.4, 0.6]
horizon = 2.0
n_paths = 3

[noise]
family = "noise_trader_mix"
buy_prob = 0.5
"#,
    );
    let out = dir.path().join("out");
    let o = gmsim(&["simulate", "--config", p.to_str().unwrap(), "--force", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let events = fs::read_to_string(out.join("events.jsonl")).unwrap();
    assert!(!events.is_empty());
    for line in events.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let eps = v["eps"].as_str().unwrap();
        assert!(eps == "+inf" || eps == "-inf");
        assert_eq!(v["ask"].as_f64().unwrap(), v["bid"].as_f64().unwrap());
    }
}

#[test]
fn verify_default_passes_and_perturbation_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("default.toml");
    let o = gmsim(&["verify", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["filter_oracle"]["status"], "pass");

    let o = gmsim(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--paths",
        "1000",
        "--perturb-ask",
        "0.05",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["zero_profit"]["status"], "fail");
    assert!(report["zero_profit"]["detail"]["z_buy"].as_f64().unwrap() > 3.0);
}

#[test]
fn verify_without_customers_reports_insufficient_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmsim(&[
        "verify",
        "--config",
        scenario("no_customers.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("INSUFFICIENT DATA"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["zero_profit"]["status"], "insufficient_data");
    assert_eq!(report["conservation"]["status"], "pass");
}
