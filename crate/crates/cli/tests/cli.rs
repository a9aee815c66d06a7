use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use feedshape_core::datagen::features_at;
use feedshape_core::ecosystem::EventLog;
use feedshape_core::io::read_population_csv;
use feedshape_core::report::Z95;
use feedshape_core::{CreateModel, TimelineConfig, UtilitySnapshot};
use tempfile::TempDir;

const SMALL: &str =
    "seed = 11\n[ecosystem]\nn_users = 400\n[experiment]\nn_egos = 30\n[sweep]\nseeds = 2\nticks = 20\nwarmup = 5\n";

fn feedshape(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feedshape"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = feedshape(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Temp dir with `cfg.toml` and a run directory `run`.
fn setup(config: &str) -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("cfg.toml"), config).unwrap();
    let run = tmp.path().join("run");
    (tmp, run)
}

fn offline(dir: &Path) {
    ok(dir, &["--config", "cfg.toml", "--out", "run", "simulate"]);
    ok(dir, &["--out", "run", "train"]);
    ok(dir, &["--out", "run", "estimate"]);
}

/// Data rows of a headed CSV (schema line and column line dropped).
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(2).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn simulate_writes_consistent_files() {
    let (tmp, run) = setup("seed = 1\n[ecosystem]\nn_users = 100\n");
    ok(tmp.path(), &["--config", "cfg.toml", "--out", "run", "simulate"]);
    for f in ["events.jsonl", "population.csv", "graph.csv", "engagement.json", "config.toml"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let pop = rows(&run.join("population.csv"));
    assert_eq!(pop.len(), 100);
    let graph = rows(&run.join("graph.csv"));
    let followers: usize = pop.iter().map(|r| r[4].parse::<usize>().unwrap()).sum();
    assert_eq!(graph.len(), followers);
    let events = fs::read_to_string(run.join("events.jsonl")).unwrap();
    assert!(events.starts_with("# feedshape-events/1"));
    assert!(events.lines().count() > 1);
}

#[test]
fn rerun_is_identical() {
    let (tmp, run) = setup("seed = 1\n[ecosystem]\nn_users = 100\n");
    ok(tmp.path(), &["--config", "cfg.toml", "--out", "run", "simulate"]);
    let first = fs::read(run.join("events.jsonl")).unwrap();
    ok(tmp.path(), &["--config", "cfg.toml", "--out", "run", "--overwrite", "simulate"]);
    assert_eq!(first, fs::read(run.join("events.jsonl")).unwrap());
}

#[test]
fn missing_key_names_it() {
    let (tmp, _) = setup("seed = 1\n[ecosystem]\nmean_degree = 8.0\n");
    let out = feedshape(tmp.path(), &["--config", "cfg.toml", "--out", "run", "simulate"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_users"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let (tmp, _) = setup("seed = 1\ncolour = 3\n[ecosystem]\nn_users = 100\n");
    let out = feedshape(tmp.path(), &["--config", "cfg.toml", "--out", "run", "simulate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn existing_outputs_need_overwrite() {
    let (tmp, _) = setup("seed = 1\n[ecosystem]\nn_users = 100\n");
    ok(tmp.path(), &["--config", "cfg.toml", "--out", "run", "simulate"]);
    let out = feedshape(tmp.path(), &["--config", "cfg.toml", "--out", "run", "simulate"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--overwrite"));
}

#[test]
fn missing_input_is_a_data_error() {
    let (tmp, _) = setup("seed = 1\n[ecosystem]\nn_users = 100\n");
    let out = feedshape(tmp.path(), &["--config", "cfg.toml", "--out", "run", "train"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn corrupt_model_is_a_schema_error() {
    let (tmp, run) = setup(SMALL);
    offline(tmp.path());
    fs::write(run.join("model.json"), "{\"family\": \"logistic\", \"weights\": 3}").unwrap();
    let out = feedshape(tmp.path(), &["--out", "run", "--overwrite", "estimate"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_reports_cohort_rows() {
    let (tmp, run) = setup(SMALL);
    ok(tmp.path(), &["--config", "cfg.toml", "--out", "run", "simulate"]);
    ok(tmp.path(), &["--out", "run", "train"]);
    let report = rows(&run.join("eval_report.csv"));
    let segments: Vec<&str> = report.iter().filter(|r| r[0] == "activity").map(|r| r[1].as_str()).collect();
    for s in ["All", "Daily", "Weekly", "Monthly"] {
        assert!(segments.contains(&s), "no {s} row in {segments:?}");
    }
    assert!(run.join("model.json").is_file());
    assert!(run.join("examples.csv").is_file());
}

#[test]
fn snapshot_matches_independent_refit() {
    let (tmp, run) = setup(SMALL);
    offline(tmp.path());
    let snap = UtilitySnapshot::read_csv(&fs::read_to_string(run.join("snapshot.csv")).unwrap()).unwrap();
    assert_eq!(snap.len(), 400);
    let model = CreateModel::from_json(&fs::read_to_string(run.join("model.json")).unwrap()).unwrap();
    let log =
        EventLog::read_jsonl(fs::File::open(run.join("events.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    let profiles: Vec<_> = read_population_csv(&fs::read_to_string(run.join("population.csv")).unwrap())
        .unwrap()
        .into_iter()
        .map(|m| m.profile)
        .collect();
    let schema = model.schema().clone();
    let feats =
        features_at(&log, &profiles, log.n_ticks, TimelineConfig::default().u, &schema.edges, schema.interactions)
            .unwrap();
    let v = snap.grid.values();
    for user in (0..400).step_by(40) {
        let fv = &feats[user];
        let p = |a: f64| model.predict(&fv.with_feedback(a as u32, &schema.edges)).unwrap();
        let mut prev = (0.0, p(0.0));
        let mut logs = Vec::new();
        for (k, &vk) in v.iter().enumerate() {
            let d = (p(vk) - prev.1) / (vk - prev.0);
            assert!((d - snap.curves[user].deltas[k]).abs() < 1e-12);
            logs.push(d.max(snap.floor).ln());
            prev = (vk, p(vk));
        }
        // normal equations [n, sum v; sum v, sum v^2] by Cramer's rule
        let n = v.len() as f64;
        let (sv, svv) = (v.iter().sum::<f64>(), v.iter().map(|x| x * x).sum::<f64>());
        let (sl, svl) = (logs.iter().sum::<f64>(), v.iter().zip(&logs).map(|(x, l)| x * l).sum::<f64>());
        let det = n * svv - sv * sv;
        let b = (sl * svv - sv * svl) / det;
        let tau = (n * svl - sv * sl) / det;
        let c = &snap.curves[user];
        assert!((b - c.b).abs() < 1e-9, "user {user}: b {b} vs {}", c.b);
        assert!((tau - c.tau).abs() < 1e-9, "user {user}: tau {tau} vs {}", c.tau);
    }
}

#[test]
fn experiments_emit_table_shaped_csv() {
    let (tmp, run) = setup(SMALL);
    offline(tmp.path());
    ok(tmp.path(), &["--out", "run", "experiment", "consumer"]);
    ok(tmp.path(), &["--out", "run", "experiment", "ego"]);
    for mode in ["consumer", "ego"] {
        let text = fs::read_to_string(run.join(format!("experiment_{mode}.csv"))).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with(&format!("# feedshape-effects/1 mode={mode}")));
        assert_eq!(lines.next().unwrap(), "metric,delta_pct,p_value,label");
        let body: Vec<&str> = lines.collect();
        assert_eq!(body.len(), 7);
        assert!(body[0].starts_with("Contributions,"));
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(run.join(format!("experiment_{mode}.json"))).unwrap()).unwrap();
        assert_eq!(json["mode"], mode);
        assert_eq!(json["effects"].as_array().unwrap().len(), 7);
        assert!(json["effects"][0]["ci95"].is_array());
    }
}

#[test]
fn aa_runs_are_mostly_neutral() {
    let (tmp, run) = setup(SMALL);
    offline(tmp.path());
    let (mut neutral, mut total) = (0, 0);
    for seed in 0..20 {
        let s = seed.to_string();
        ok(tmp.path(), &["--out", "run", "--seed", &s, "--overwrite", "experiment", "consumer", "--aa"]);
        for r in rows(&run.join("experiment_consumer.csv")) {
            total += 1;
            neutral += usize::from(r[3] == "Neutral");
        }
    }
    assert!(neutral * 10 >= total * 9, "{neutral} of {total} neutral");
}

#[test]
fn report_writes_plot_data() {
    let (tmp, run) = setup(SMALL);
    offline(tmp.path());
    ok(tmp.path(), &["--out", "run", "experiment", "sweep"]);
    ok(tmp.path(), &["--out", "run", "report"]);

    let curve = rows(&run.join("creation_curve.csv"));
    assert!(curve.iter().any(|r| r[0] == "All"));
    let r = curve.iter().find(|r| r[0] == "All" && r[3].parse::<usize>().unwrap() >= 30).unwrap();
    let n: f64 = r[3].parse().unwrap();
    let p: f64 = r[4].parse().unwrap();
    let half = Z95 * (p * (1.0 - p) / n).sqrt();
    assert!((r[5].parse::<f64>().unwrap() - (p - half)).abs() < 2e-6);
    assert!((r[6].parse::<f64>().unwrap() - (p + half)).abs() < 2e-6);

    let boxes = rows(&run.join("sensitivity_box.csv"));
    let groups: Vec<&str> = boxes.iter().filter(|r| r[0] == "activity").map(|r| r[1].as_str()).collect();
    assert_eq!(groups, ["Daily", "Weekly", "Monthly", "Inactive"]);

    let tradeoff = rows(&run.join("alpha_tradeoff.csv"));
    assert_eq!(tradeoff.len(), 5);
    assert_eq!(tradeoff[0][0], "1");
    assert_eq!(tradeoff[0][4], "0.0000");
}

#[test]
fn undeclared_files_do_not_matter() {
    let (tmp, run) = setup(SMALL);
    offline(tmp.path());
    let snapshot = fs::read(run.join("snapshot.csv")).unwrap();
    fs::remove_file(run.join("graph.csv")).unwrap();
    fs::remove_file(run.join("engagement.json")).unwrap();
    fs::remove_file(run.join("examples.csv")).unwrap();
    ok(tmp.path(), &["--out", "run", "--overwrite", "estimate"]);
    assert_eq!(snapshot, fs::read(run.join("snapshot.csv")).unwrap());
}
