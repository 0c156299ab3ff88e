use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oar_core::env::parse_schedule_csv;
use oar_harness::run::{BaselineSummary, EpisodeSummary, RoarReport, SweepReport};
use oar_harness::{summarize, EnvironmentKind, Summary};
use tempfile::TempDir;

fn oar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oar")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn run_ok(args: &[&str]) {
    let out = oar(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const SMALL_LEARNER: &str = "[run]\nenvironment = \"learner\"\n[episode]\nhorizon = 3\niterations_per_step = 5\n[learner]\nn_train = 200\nn_val = 100\n";

#[test]
fn roar_run_writes_one_schedule_and_checkpoint_per_episode() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[run]\nepisodes = 3\n");
    let out = tmp.path().join("out");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    for e in 1..=3 {
        let csv = std::fs::read_to_string(out.join(format!("schedule_ep{e}.csv"))).unwrap();
        let rows = parse_schedule_csv(&csv).unwrap();
        assert_eq!(rows.len(), 12);
        assert!(rows.windows(2).all(|w| w[1].step > w[0].step));
        assert!(out.join(format!("agent_ep{e}.json")).is_file());
    }
    assert!(!out.join("schedule_ep4.csv").exists());
}

#[test]
fn episodes_continue_from_the_previous_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[run]\nepisodes = 3\n[episode]\nhorizon = 5\n");
    let out = tmp.path().join("out");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    for e in 1..=3u64 {
        let text = std::fs::read_to_string(out.join(format!("agent_ep{e}.json"))).unwrap();
        let ck: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(ck["step_count"], 5 * e);
        assert_eq!(ck["buffer"]["entries"].as_array().unwrap().len() as u64, 5 * e);
    }
}

#[test]
fn sweep_has_five_rows_including_beta_zero() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("out");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--mode", "sweep", "--out", out.to_str().unwrap()]);
    let report: SweepReport = serde_json::from_str(&std::fs::read_to_string(out.join("sweep_report.json")).unwrap()).unwrap();
    let betas: Vec<f64> = report.baselines.iter().map(|b| b.beta).collect();
    assert_eq!(betas, [0.0, 1.0, 2.0, 3.0, 4.0]);
    for b in &report.baselines {
        let rows = parse_schedule_csv(&std::fs::read_to_string(out.join(&b.schedule)).unwrap()).unwrap();
        assert!(rows.iter().all(|r| r.beta == b.beta));
    }
}

#[test]
fn learner_sweep_beta_zero_trains_without_augmentation() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_LEARNER);
    let out = tmp.path().join("out");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--mode", "sweep", "--out", out.to_str().unwrap()]);
    let report: SweepReport = serde_json::from_str(&std::fs::read_to_string(out.join("sweep_report.json")).unwrap()).unwrap();
    assert_eq!(report.environment, EnvironmentKind::Learner);
    assert_eq!(report.baselines[0].augmented_entries, Some(0));
    // β = 2 adds exactly two copies per original: 3 chunks · 5 steps · 32 originals · 2
    assert_eq!(report.baselines[2].augmented_entries, Some(960));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[run]\nepisodes = 4\nseed = 1\nout = \"ignored\"\n");
    let out = tmp.path().join("flagged");
    let other = tmp.path().join("other");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--episodes", "2", "--seed", "9", "--out", out.to_str().unwrap()]);
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--episodes", "2", "--seed", "10", "--out", other.to_str().unwrap()]);
    assert!(out.join("schedule_ep2.csv").is_file());
    assert!(!out.join("schedule_ep3.csv").exists());
    let report: RoarReport = serde_json::from_str(&std::fs::read_to_string(out.join("roar_report.json")).unwrap()).unwrap();
    assert_eq!(report.seed, 9);
    assert_ne!(
        std::fs::read(out.join("schedule_ep1.csv")).unwrap(),
        std::fs::read(other.join("schedule_ep1.csv")).unwrap()
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let body = SMALL_LEARNER
        .replace("[run]\n", "[run]\nepisodes = 2\nseed = 4\n")
        .replace("[episode]", "[plan]\nenabled = true\n[episode]");
    let cfg = write_config(tmp.path(), &body);
    let dirs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("r{i}"))).collect();
    for d in &dirs {
        run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    }
    for name in ["schedule_ep1.csv", "schedule_ep2.csv", "agent_ep2.json", "plans_ep2.jsonl", "roar_report.json"] {
        assert_eq!(std::fs::read(dirs[0].join(name)).unwrap(), std::fs::read(dirs[1].join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    for body in ["[run]\nepisodes = 0\n", "[agent]\ngamma = 1.5\n", "[agent]\nwarmup = 3\n", "[episode]\ninitial_beta = 0.3\n"] {
        let cfg = write_config(tmp.path(), body);
        let out = oar(&["run", "--config", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{body}");
    }
    assert_eq!(oar(&["run", "--config", "/nonexistent/run.toml"]).status.code(), Some(2));
    assert_eq!(oar(&["run"]).status.code(), Some(2));
    assert_eq!(oar(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_with_one_and_keeps_partial_artifacts() {
    let tmp = TempDir::new().unwrap();
    // a diverging learning rate makes the classifier non-finite on the first chunk
    let cfg = write_config(tmp.path(), &SMALL_LEARNER.replace("n_train = 200", "n_train = 200\nlr = 1e300"));
    let out = tmp.path().join("out");
    let res = oar(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(out.join("schedule_ep1.csv")).unwrap();
    assert_eq!(csv, "step,beta,val_loss,val_wer,reward,action\n");
}

fn write_schedule(path: &Path, betas: &[f64]) {
    let mut s = String::from("step,beta,val_loss,val_wer,reward,action\n");
    for (i, b) in betas.iter().enumerate() {
        s.push_str(&format!("{},{b:.6},1.000000,30.000000,0.100000,0\n", i + 1));
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn plot_is_valid_xml_with_one_circle_per_point() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("s.csv");
    let betas = [0.0, 0.2, 0.4, 0.4, 0.2, 1.0, 4.0];
    write_schedule(&csv, &betas);
    let svg = tmp.path().join("s.svg");
    run_ok(&["plot", "--in", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    let text = std::fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let circles: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("circle")).collect();
    assert_eq!(circles.len(), betas.len());
    let mut steps: Vec<usize> = circles.iter().map(|c| c.attribute("data-step").unwrap().parse().unwrap()).collect();
    steps.sort_unstable();
    assert_eq!(steps, (1..=betas.len()).collect::<Vec<_>>());
    for (c, b) in circles.iter().zip(betas) {
        assert_eq!(c.attribute("data-beta").unwrap().parse::<f64>().unwrap(), b);
    }
    // higher β sits higher on the chart
    let cy = |i: usize| circles[i].attribute("cy").unwrap().parse::<f64>().unwrap();
    assert!(cy(6) < cy(5) && cy(5) < cy(0));
}

#[test]
fn constant_schedule_plots_at_one_height() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("s.csv");
    write_schedule(&csv, &[2.0; 6]);
    let svg = tmp.path().join("s.svg");
    run_ok(&["plot", "--in", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    let text = std::fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let ys: Vec<&str> = doc
        .descendants()
        .filter(|n| n.has_tag_name("circle"))
        .map(|c| c.attribute("cy").unwrap())
        .collect();
    assert!(ys.windows(2).all(|w| w[0] == w[1]));
    let path = doc.descendants().find(|n| n.attribute("class") == Some("schedule")).unwrap();
    let d = path.attribute("d").unwrap();
    let verticals: Vec<&str> = d.split(" V ").skip(1).map(|s| s.split_whitespace().next().unwrap()).collect();
    assert!(verticals.iter().all(|v| *v == ys[0]), "{d}");
}

#[test]
fn empty_or_malformed_schedule_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("s.csv");
    let svg = tmp.path().join("s.svg");
    write_schedule(&csv, &[]);
    assert_eq!(oar(&["plot", "--in", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()]).status.code(), Some(1));
    assert!(!svg.exists());
    std::fs::write(&csv, "step,beta\n1,zero\n").unwrap();
    assert_eq!(oar(&["plot", "--in", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()]).status.code(), Some(1));
    assert!(!svg.exists());
}

fn fabricated_report(dir: &Path, roar_wers: &[f64], baseline_wers: &[f64]) {
    let episodes = roar_wers
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let e = i + 1;
            let schedule = format!("schedule_ep{e}.csv");
            let checkpoint = format!("agent_ep{e}.json");
            write_schedule(&dir.join(&schedule), &[0.0]);
            std::fs::write(dir.join(&checkpoint), "{}").unwrap();
            EpisodeSummary {
                episode: e,
                env_seed: 0,
                initial_wer: 40.0,
                final_wer: w,
                final_loss: 1.0,
                total_reward: 40.0 - w,
                schedule,
                checkpoint,
                plans: None,
            }
        })
        .collect();
    let baselines = baseline_wers
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let beta = i as f64;
            let schedule = format!("baseline_beta_{beta:.1}.csv");
            write_schedule(&dir.join(&schedule), &[beta]);
            BaselineSummary {
                beta,
                initial_wer: 40.0,
                final_wer: w,
                final_loss: 1.0,
                total_reward: 40.0 - w,
                schedule,
                augmented_entries: None,
            }
        })
        .collect();
    let roar = RoarReport {
        environment: EnvironmentKind::Surrogate,
        seed: 0,
        episodes,
    };
    let sweep = SweepReport {
        environment: EnvironmentKind::Surrogate,
        seed: 0,
        env_seed: 0,
        baselines,
    };
    std::fs::write(dir.join("roar_report.json"), serde_json::to_string(&roar).unwrap()).unwrap();
    std::fs::write(dir.join("sweep_report.json"), serde_json::to_string(&sweep).unwrap()).unwrap();
}

#[test]
fn summary_improvement_matches_hand_computation() {
    let tmp = TempDir::new().unwrap();
    fabricated_report(tmp.path(), &[30.0, 24.0], &[28.0, 25.0, 26.0, 30.0, 33.0]);
    let s = summarize(tmp.path()).unwrap();
    // best fixed 25.0, last episode 24.0: 100 · 1 / 25 = 4 %
    assert!((s.relative_improvement_pct - 4.0).abs() < 1e-12);
    assert_eq!(s.episodes.len(), 2);
    assert_eq!(s.baselines["1.0"], 25.0);

    let out = oar(&["summarize", "--dir", tmp.path().to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let parsed: Summary = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed, s);
}

#[test]
fn equal_baselines_give_improvement_against_the_common_value() {
    let tmp = TempDir::new().unwrap();
    fabricated_report(tmp.path(), &[18.0], &[20.0; 5]);
    let s = summarize(tmp.path()).unwrap();
    assert!((s.relative_improvement_pct - 10.0).abs() < 1e-12);
}

#[test]
fn missing_files_are_named() {
    let tmp = TempDir::new().unwrap();
    fabricated_report(tmp.path(), &[20.0, 19.0], &[21.0, 22.0]);
    std::fs::remove_file(tmp.path().join("schedule_ep2.csv")).unwrap();
    let out = oar(&["summarize", "--dir", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("schedule_ep2.csv"), "{err}");

    std::fs::remove_file(tmp.path().join("sweep_report.json")).unwrap();
    let err = summarize(tmp.path()).unwrap_err().to_string();
    assert!(err.contains("sweep_report.json"), "{err}");
}

#[test]
fn run_then_summarize_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[run]\nepisodes = 2\n");
    let out = tmp.path().join("out");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mode", "sweep"]);
    let res = oar(&["summarize", "--dir", out.to_str().unwrap()]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("episode 2:") && text.contains("fixed beta 4.0:") && text.contains("relative improvement"));
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["surrogate.toml", "learner.toml"] {
        oar_harness::RunConfig::load(&root.join(name)).unwrap();
    }
}
