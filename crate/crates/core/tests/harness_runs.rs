use std::collections::BTreeMap;
use std::fs;

use corrbandit_core::env::{Environment, ReplayEnv, SeriesSpec};
use corrbandit_core::harness::{
    compare_policies, emit, make_chunks, run_experiment, tune_noise, EnvSpec, ExperimentConfig,
    RunResult, RunSettings, PLOT_HEADER, RESULTS_HEADER, TRACES_HEADER,
};
use corrbandit_core::{Error, PolicyKind, SeedRng, UpdateMode, ViCorConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn series(means: Vec<f64>, sd: f64, correlation: f64, length: usize) -> SeriesSpec {
    SeriesSpec {
        std_devs: vec![sd; means.len()],
        means,
        correlation,
        length,
        persistence: 0.0,
        bursts: vec![],
    }
}

fn small_config(policies: Vec<PolicyKind>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        EnvSpec::Series(series(vec![10.0, 10.3, 10.1], 1.0, 0.6, 120)),
        policies,
    );
    cfg.seeds = (0..4).collect();
    cfg.vi_cor.samples = 16;
    cfg
}

fn settings() -> RunSettings {
    RunSettings {
        mode: UpdateMode::JointGaussian,
        vi_cor: ViCorConfig::default(),
    }
}

#[test]
fn golden_scores_one_hundred_and_dominates() {
    let cfg = small_config(vec![
        PolicyKind::Golden,
        PolicyKind::Random,
        PolicyKind::Myopic,
        PolicyKind::Ucb1,
        PolicyKind::Ucb1Normal,
        PolicyKind::Ucb1NormalCor,
        PolicyKind::ViCor,
    ]);
    let results = run_experiment(&cfg).unwrap();
    assert_eq!(results.len(), 8 * 4 * 7);
    let mut golden: BTreeMap<(usize, u64), f64> = BTreeMap::new();
    for r in results.iter().filter(|r| r.policy == PolicyKind::Golden) {
        assert_eq!(r.normalized_score, 100.0);
        golden.insert((r.chunk, r.seed), r.cumulative);
    }
    for r in &results {
        let g = golden[&(r.chunk, r.seed)];
        // paired runs share their payoff rows, hence their golden value
        assert_eq!(r.golden_value, g);
        assert!(r.cumulative <= g + 1e-9 * g.abs());
        let back = r.normalized_score * r.golden_value / 100.0;
        assert!((back - r.cumulative).abs() <= 1e-9 * r.cumulative.abs());
        assert_eq!(r.payoffs.len(), r.selections.len());
        assert_eq!(r.payoffs.len(), 21);
    }
}

#[test]
fn random_on_identical_arms_matches_closed_form() {
    // E[x] / E[max(x1, x2)] for iid N(m, s²): m / (m + s/√π)
    let (m, s) = (10.0, 2.0);
    let mut cfg = ExperimentConfig::new(EnvSpec::Series(series(vec![m, m], s, 0.0, 400)), vec![PolicyKind::Random]);
    cfg.seeds = (0..64).collect();
    let results = run_experiment(&cfg).unwrap();
    let scores: Vec<f64> = results.iter().map(|r| r.normalized_score).collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    // chunks overlap, so use the per-seed average as the independent unit
    let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in &results {
        per_seed.entry(r.seed).or_default().push(r.normalized_score);
    }
    let seed_means: Vec<f64> = per_seed.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let k = seed_means.len() as f64;
    let sd = (seed_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let expected = 100.0 * m / (m + s / std::f64::consts::PI.sqrt());
    assert!((mean - expected).abs() <= 3.0 * sd / k.sqrt() + 0.05, "{mean} vs {expected}");
}

#[test]
fn runs_are_independent_of_thread_count() {
    let mut cfg = small_config(vec![PolicyKind::Myopic, PolicyKind::ViCor, PolicyKind::Random]);
    cfg.threads = Some(1);
    let a = run_experiment(&cfg).unwrap();
    cfg.threads = Some(4);
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn replay_runs_deterministic_policies_once() {
    let dir = tempfile::tempdir().unwrap();
    let data = series(vec![5.0, 5.5, 4.8], 1.0, 0.5, 150).generate(7).unwrap();
    let csv = ReplayEnv::from_matrix(data).unwrap().to_csv();
    let path = dir.path().join("series.csv");
    fs::write(&path, csv).unwrap();
    let mut cfg = ExperimentConfig::new(
        EnvSpec::Replay { path },
        vec![PolicyKind::Myopic, PolicyKind::Random, PolicyKind::Ucb1Normal],
    );
    cfg.seeds = vec![3, 4, 5];
    let results = run_experiment(&cfg).unwrap();
    let count = |k| results.iter().filter(|r| r.policy == k).count();
    assert_eq!(count(PolicyKind::Myopic), 8);
    assert_eq!(count(PolicyKind::Ucb1Normal), 8);
    assert_eq!(count(PolicyKind::Random), 24);
    // L = 150, C = 8, f = 0.2
    assert!(results.iter().all(|r| r.payoffs.len() == 27));
}

#[test]
fn emitted_files_are_consistent() {
    let cfg = small_config(vec![PolicyKind::Myopic, PolicyKind::Ucb1Normal]);
    let results = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit("t", &results, 3, dir.path()).unwrap();

    let traces = fs::read_to_string(dir.path().join("traces.csv")).unwrap();
    let mut lines = traces.lines();
    assert_eq!(lines.next(), Some(TRACES_HEADER));
    let mut running: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let key = (f[0].to_string(), f[1].to_string(), f[2].to_string());
        let payoff: f64 = f[4].parse().unwrap();
        let stored: f64 = f[5].parse().unwrap();
        let acc = running.entry(key).or_insert(0.0);
        *acc += payoff;
        assert!((*acc - stored).abs() <= 1e-9 * stored.abs().max(1.0));
    }
    assert_eq!(running.len(), results.len());

    let table = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut per: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for line in table.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        per.entry(f[0].into()).or_default().entry(f[1].parse().unwrap()).or_default().push(f[7].parse().unwrap());
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    for entry in summary["comparison"]["ranking"].as_array().unwrap() {
        let name = entry["policy"].as_str().unwrap();
        let chunks = &per[name];
        let mean = chunks.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).sum::<f64>() / chunks.len() as f64;
        let stored = entry["mean_normalized"].as_f64().unwrap();
        assert!((mean - stored).abs() <= 1e-9 * stored.abs());
    }
    for k in ["myopic", "ucb1-normal"] {
        let plot = fs::read_to_string(dir.path().join(format!("plotdata/{k}.csv"))).unwrap();
        assert!(plot.starts_with(PLOT_HEADER));
        assert_eq!(plot.lines().count(), 22);
    }
}

#[test]
fn empty_results_give_header_only_files() {
    let dir = tempfile::tempdir().unwrap();
    emit("empty", &[], 2, dir.path()).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("results.csv")).unwrap(), format!("{RESULTS_HEADER}\n"));
    assert_eq!(fs::read_to_string(dir.path().join("traces.csv")).unwrap(), format!("{TRACES_HEADER}\n"));
    assert!(dir.path().join("summary.json").exists());
}

fn fake(policy: PolicyKind, chunk: usize, score: f64) -> RunResult {
    RunResult {
        policy,
        chunk,
        seed: 0,
        noise_var: 1.0,
        payoffs: vec![score],
        selections: vec![0],
        cumulative: score,
        golden_value: 100.0,
        normalized_score: score,
    }
}

#[test]
fn comparison_rules() {
    let mut results = Vec::new();
    for c in 0..8 {
        results.push(fake(PolicyKind::ViCor, c, 60.0 + c as f64));
        results.push(fake(PolicyKind::Myopic, c, 50.0 + 0.5 * c as f64));
        results.push(fake(PolicyKind::Random, c, 30.0));
    }
    let t = compare_policies(&results).unwrap();
    assert_eq!(t.ranking[0].policy, PolicyKind::ViCor);
    assert_eq!(t.headline.second, PolicyKind::Myopic);
    assert_eq!(t.headline.p_value, Some(0.0078125));
    assert!(t.headline.significant);

    // relabelling policies relabels the table
    let swap = |k| match k {
        PolicyKind::ViCor => PolicyKind::Ucb1,
        PolicyKind::Ucb1 => PolicyKind::ViCor,
        other => other,
    };
    let relabelled: Vec<RunResult> = results.iter().map(|r| RunResult { policy: swap(r.policy), ..r.clone() }).collect();
    let u = compare_policies(&relabelled).unwrap();
    assert_eq!(u.ranking[0].policy, PolicyKind::Ucb1);
    assert_eq!(u.headline.p_value, t.headline.p_value);
    assert_eq!(u.ranking[0].chunk_scores, t.ranking[0].chunk_scores);

    // identical scores: the test is undefined and reported as not significant
    let same: Vec<RunResult> = (0..8)
        .flat_map(|c| [fake(PolicyKind::Myopic, c, 40.0), fake(PolicyKind::Random, c, 40.0)])
        .collect();
    let s = compare_policies(&same).unwrap();
    assert_eq!(s.headline.p_value, None);
    assert!(!s.headline.significant);

    let mut uneven = results.clone();
    uneven.retain(|r| !(r.policy == PolicyKind::Random && r.chunk == 3));
    assert!(matches!(compare_policies(&uneven), Err(Error::Comparability(_))));
    assert!(compare_policies(&results[..1]).is_err());
}

#[test]
fn tuning_rules() {
    let mut rng = SeedRng::seed_from_u64(1);
    let train = DMatrix::from_fn(30, 3, |_, j| 5.0 + j as f64 * 0.1 + rng.random_range(-1.0..1.0));
    assert_eq!(tune_noise(PolicyKind::ViCor, &train, &[7.5], settings(), 0).unwrap(), 7.5);
    // random ignores the belief, so every candidate ties
    assert_eq!(tune_noise(PolicyKind::Random, &train, &[40.0, 0.1, 10.0], settings(), 0).unwrap(), 0.1);
    let short = train.rows(0, 4).clone_owned();
    assert_eq!(tune_noise(PolicyKind::ViCor, &short, &[100.0, 1.0, 10.0, 0.1], settings(), 0).unwrap(), 1.0);
    assert!(tune_noise(PolicyKind::ViCor, &train, &[], settings(), 0).is_err());
}

#[test]
fn errors_carry_chunk_context() {
    let mut cfg = small_config(vec![PolicyKind::Myopic]);
    cfg.environment = EnvSpec::Series(series(vec![1.0, 1.0], 1.0, 0.999, 120));
    cfg.update_mode = UpdateMode::DiagonalOnly;
    cfg.noise_var = Some(0.01);
    match run_experiment(&cfg) {
        Err(Error::InChunk { .. }) | Ok(_) => {}
        Err(e) => panic!("unexpected error {e}"),
    }
    let mut short = small_config(vec![PolicyKind::Myopic]);
    short.environment = EnvSpec::Series(series(vec![1.0, 1.0], 1.0, 0.0, 10));
    assert!(matches!(run_experiment(&short), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn chunks_cover_and_split(len in 2usize..2000, chunks in 1usize..12, f in 0.05..0.95f64) {
        prop_assume!(len >= 2 * chunks);
        let w = make_chunks(len, chunks, f).unwrap();
        prop_assert_eq!(w.len(), chunks);
        let width = w[0].test.end - w[0].train.start;
        for c in &w {
            prop_assert!(!c.train.is_empty() && !c.test.is_empty());
            prop_assert_eq!(c.train.end, c.test.start);
            prop_assert!(c.test.end <= len);
            prop_assert_eq!(c.test.end - c.train.start, width);
        }
        prop_assert_eq!(w.last().unwrap().test.end, len);
    }
}

/// Column means of a 150 × 9 replay file against a plain text parse.
#[test]
fn replay_file_matches_independent_parse() {
    let mut rng = SeedRng::seed_from_u64(8);
    let names: Vec<String> = (0..9).map(|j| format!("kw{j}")).collect();
    let mut text = format!("date,{}\r\n", names.join(","));
    for d in 0..150 {
        let day = 1 + d % 28;
        let month = 1 + d / 28;
        let row: Vec<String> = (0..9).map(|_| format!("{:.4}", rng.random_range(0.0..50.0))).collect();
        text.push_str(&format!("2013-{month:02}-{day:02},{}\r\n", row.join(",")));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kw.csv");
    fs::write(&path, &text).unwrap();
    let env = ReplayEnv::load(&path).unwrap();
    assert_eq!(env.rows(), 150);
    assert_eq!(env.arm_names(), names.as_slice());
    let mut sums = [0.0; 9];
    for line in text.lines().skip(1) {
        for (j, cell) in line.split(',').skip(1).enumerate() {
            sums[j] += cell.trim().parse::<f64>().unwrap();
        }
    }
    for (j, sum) in sums.iter().enumerate() {
        let m = env.payoffs().column(j).mean();
        assert!((m - sum / 150.0).abs() <= 1e-12 * m.abs());
    }
}

#[test]
fn replay_stepping_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    fs::write(&path, "date,a,b\n2014-01-01,1,2\n2014-01-02,3,4\n2014-01-03,5,6\n").unwrap();
    let mut env = ReplayEnv::load(&path).unwrap();
    let mut column_sums = [0.0; 2];
    for _ in 0..3 {
        let o = env.step(1).unwrap();
        column_sums[0] += o.row[0];
        column_sums[1] += o.row[1];
    }
    assert_eq!(column_sums, [9.0, 12.0]);
    assert!(matches!(env.step(0), Err(Error::EndOfData { .. })));
    assert_eq!(env.cursor(), 3);

    for bad in [
        "date,a,b\n",
        "date,a,b\n2014-01-01,1,2\n2014-01-02,3\n",
        "date,a,b\n2014-01-01,1,x\n2014-01-02,3,4\n",
        "day,a,b\n2014-01-01,1,2\n2014-01-02,3,4\n",
        "date,a,b\n2014/01/01,1,2\n2014-01-02,3,4\n",
    ] {
        fs::write(&path, bad).unwrap();
        assert!(matches!(ReplayEnv::load(&path), Err(Error::Format { .. })), "{bad:?}");
    }
    // late-starting arm: trimmed to the complete suffix
    fs::write(&path, "date,a,b\n2014-01-01,1,\n2014-01-02,3,4\n2014-01-03,5,6\n").unwrap();
    assert_eq!(ReplayEnv::load(&path).unwrap().rows(), 2);
}
