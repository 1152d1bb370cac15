//! Acceptance criteria. Each prints one PASS/FAIL line; the process exits
//! nonzero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use graphflow::graph::{presets, MetricGraph};
use graphflow::graphflow::{GlobalFlowConfig, LatticePoint};
use graphflow::noise::ChannelMode;
use graphflow::starflow::{ExcursionLabeler, LabelMode, StarGraphSpec, StarPoint};
use graphflow::verify::*;

struct Outcome {
    pass: bool,
    summary: String,
}

fn ok(reports: &[&TestReport]) -> bool {
    reports.iter().all(|r| r.passed())
}

fn walsh(alpha: &[f64], m: u32) -> GlobalFlowConfig {
    let g = MetricGraph::from_spec(&presets::star(alpha, 2)).unwrap();
    GlobalFlowConfig::uniform(g, LabelMode::Mapping, m, ChannelMode::Shared).unwrap()
}

fn c1_flow_property() -> Outcome {
    let start = Instant::now();
    let star = walsh(&[0.3, 0.3, 0.4], 4);
    let starts = [
        LatticePoint::Vertex(0),
        LatticePoint::Interior { edge: 0, site: 3 },
        LatticePoint::Interior { edge: 2, site: -5 },
    ];
    let a = flow_property_suite("star", &star, &flow_triples(), &starts, 100, 1000).unwrap();
    let bar = barbell_config(LabelMode::Mapping, 4).unwrap();
    let b = flow_property_suite("barbell", &bar, &flow_triples(), &barbell_starts(), 100, 1000).unwrap();
    let elapsed = start.elapsed();
    let counter = |r: &TestReport| r.details["checked"].as_u64().unwrap();
    Outcome {
        pass: ok(&[&a, &b]) && elapsed < Duration::from_secs(60),
        summary: format!(
            "flow property: star {} / barbell {} counterexamples over {} + {} checks (1e3 seeds x 5 triples); \
             corrupted-leg control broke {} + {}; {:.1}s",
            a.statistic,
            b.statistic,
            counter(&a),
            counter(&b),
            a.control.as_ref().unwrap().statistic,
            b.control.as_ref().unwrap().statistic,
            elapsed.as_secs_f64()
        ),
    }
}

fn sbm_betas() -> Vec<f64> {
    let mut all = vec![-0.8, 0.0, 0.5, 0.9];
    all.extend([-0.8, 0.0, 0.5, 0.9].map(sign_control_beta));
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

fn c2_sign_law(ens: &SbmEnsemble, elapsed: Duration) -> Outcome {
    let reps: Vec<TestReport> = [-0.8, 0.0, 0.5, 0.9].iter().map(|&b| sign_law_test(ens, b).unwrap()).collect();
    let per_beta = elapsed.as_secs_f64() / ens.betas.len() as f64;
    let parts: Vec<String> = reps
        .iter()
        .map(|r| format!("{}: {:.4} vs {:.4} ± {:.4}", r.id, r.statistic, r.details["band"]["p0"].as_f64().unwrap(), r.threshold))
        .collect();
    Outcome {
        pass: reps.iter().all(|r| r.passed()) && per_beta < 120.0,
        summary: format!(
            "SBM sign law, N = 1e5, δ = 2^-7, t = 1: {}; wrong-β controls all outside; {:.1}s per β",
            parts.join("; "),
            per_beta
        ),
    }
}

fn c3_radial() -> Outcome {
    let spec = StarGraphSpec::from_f64(&[0.36, 0.24, 0.4], 2).unwrap();
    let times: Vec<i64> = (1..=10).map(|q| q * 100).collect();
    let a = radial_identity_test(&spec, &ExcursionLabeler::mapping(&spec), 5, StarPoint::Center, &times, 10_000, 300).unwrap();
    let b = radial_identity_test(&spec, &ExcursionLabeler::wiener(&spec), 5, StarPoint::Center, &times, 10_000, 300).unwrap();
    Outcome {
        pass: ok(&[&a, &b]),
        summary: format!(
            "radial/side identities on {} (mapping) + {} (kernel) (seed, t) pairs: {} + {} mismatches; \
             wrong-coin control {} + {}",
            a.n,
            b.n,
            a.statistic,
            b.statistic,
            a.control.as_ref().unwrap().statistic,
            b.control.as_ref().unwrap().statistic
        ),
    }
}

fn c4_label_law() -> Outcome {
    let spec = StarGraphSpec::from_f64(&[0.3, 0.2, 0.5], 2).unwrap();
    let r = label_law_test(&spec, 6, 0, 1.0, 100_000, 400).unwrap();
    Outcome {
        pass: r.passed(),
        summary: format!(
            "edge-label law, N = 1e5 ({} positive): P(e1 | +) = {:.4}, target 0.6 ± {:.4}; reversed-weights control {:.4}",
            r.n,
            r.statistic,
            r.threshold,
            r.control.as_ref().unwrap().statistic
        ),
    }
}

fn c5_freidlin_sheu() -> Outcome {
    let cfg = walsh(&[0.36, 0.24, 0.4], 6);
    let fs = star_test_functions(&cfg.graph);
    assert_eq!(fs.len(), 3, "all three test functions must be admissible");
    let reps = freidlin_sheu_test(&cfg, &fs, LatticePoint::Vertex(0), 1.0, 100_000, 500).unwrap();
    let parts: Vec<String> = reps
        .iter()
        .map(|r| {
            format!(
                "{}: z(mean) = {:.2}, slope = {:.6} (z = {:.2}), unglued control z = {:.1}",
                r.id,
                r.details["z_mean"].as_f64().unwrap(),
                r.details["slope"].as_f64().unwrap(),
                r.details["z_slope"].as_f64().unwrap(),
                r.control.as_ref().unwrap().statistic
            )
        })
        .collect();
    Outcome { pass: reps.iter().all(|r| r.passed()), summary: format!("Freidlin-Sheu residual, N = 1e5: {}", parts.join("; ")) }
}

fn c6_disjoint_zeros() -> Outcome {
    let a = disjoint_zeros_test(-0.5, 0.5, 5, ZERO_WINDOW_START, 1.0, 10_000, 600).unwrap();
    let b = disjoint_zeros_test(0.5, 0.6, 5, ZERO_WINDOW_START, 1.0, 10_000, 600).unwrap();
    Outcome {
        pass: ok(&[&a, &b]),
        summary: format!(
            "common zeros, N = 1e4, δ = 2^-5..2^-7: q(-0.5,0.5) = {} (ratio {:.3} < 0.5); control q(0.5,0.6) = {} (min {:.3} >= 0.1)",
            a.details["q"], a.statistic, b.details["q"], b.statistic
        ),
    }
}

fn c7_round_trip() -> Outcome {
    let x = LatticePoint::Interior { edge: 1, site: 16 };
    let mut reps = Vec::new();
    for mode in [LabelMode::Wiener, LabelMode::Mapping] {
        let cfg = barbell_config(mode, 4).unwrap();
        reps.push(round_trip_test(&cfg, 0, x, 4.0, 32, 1000, 700).unwrap());
    }
    Outcome {
        pass: reps.iter().all(|r| r.passed()),
        summary: format!(
            "round trip on the barbell, 1e3 seeds, kernel and mapping labels: {} + {} counterexamples over {} + {} (seed, t < ρ) checks; \
             past-ρ control broke {} + {}",
            reps[0].statistic,
            reps[1].statistic,
            reps[0].details["checked"],
            reps[1].details["checked"],
            reps[0].control.as_ref().unwrap().statistic,
            reps[1].control.as_ref().unwrap().statistic
        ),
    }
}

fn c8_local_time(ens: &SbmEnsemble) -> Outcome {
    let r = local_time_test(ens).unwrap();
    Outcome {
        pass: r.passed(),
        summary: format!(
            "local time, β = 0, N = 1e5: E L = {:.4} vs √(2/π) = {:.4}, relative error {:.4} (bound 0.05); naive-density control {:.3}",
            r.details["mean"].as_f64().unwrap(),
            r.details["target"].as_f64().unwrap(),
            r.statistic,
            r.control.as_ref().unwrap().statistic
        ),
    }
}

fn c9_cond_indep() -> Outcome {
    let r = cond_indep_test(&[0.15, 0.15, 0.7], &[0.35, 0.35, 0.3], 2, 6, 1.0, 10_000, 900).unwrap();
    Outcome {
        pass: r.passed(),
        summary: format!(
            "conditional independence, N = 1e4: disjoint keys p = {:.3} (> 0.01), increment correlation {:.4} (band {:.4}); \
             shared-key control p = {:.3}",
            r.statistic,
            r.details["increment_correlation"].as_f64().unwrap(),
            r.details["correlation_band"].as_f64().unwrap(),
            r.control.as_ref().unwrap().statistic
        ),
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_graphflow")
}

fn cli(args: &[&str]) -> Vec<u8> {
    let out = Command::new(bin()).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn write_inputs(dir: &Path) -> [PathBuf; 4] {
    let graph = serde_json::to_value(presets::barbell(2.0, (0.6, 0.4), (0.3, 0.7))).unwrap();
    let exp = serde_json::json!({
        "graph": graph,
        "noise": { "seed": 11, "n_max": 8, "horizon": [0, 1] },
        "delta": 0.0625,
        "queries": [
            { "s": 0, "t": 1, "x": { "vertex": "a" } },
            { "s": 0.25, "t": 0.75, "x": { "edge": "bridge", "r": 0.5 } },
        ],
    });
    let star = serde_json::json!({ "n_plus": 2, "n_minus": 1, "alpha": [0.36, 0.24, 0.4], "mode": "mapping" });
    let noise = serde_json::json!({ "seed": 3, "n_max": 10, "horizon": [0, 2] });
    let paths = ["graph.json", "exp.json", "star.json", "noise.json"].map(|f| dir.join(f));
    for (p, v) in paths.iter().zip([graph, exp, star, noise]) {
        std::fs::write(p, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    }
    paths
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let [graph, exp, star, noise] = write_inputs(dir.path());
    let (graph, exp, star, noise) =
        (graph.to_str().unwrap(), exp.to_str().unwrap(), star.to_str().unwrap(), noise.to_str().unwrap());
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("validate", vec!["validate", graph]),
        ("noise", vec!["noise-audit", "--config", noise, "--level", "6"]),
        ("sbm", vec!["simulate-sbm", "--beta", "0.4", "--delta", "0.0625", "--n", "40", "--starts=-0.5,0,0.25", "--every", "0.25"]),
        ("star", vec!["simulate-star", "--config", star, "--delta", "0.0625", "--n", "40", "--every", "0.25"]),
        ("graph", vec!["simulate-graph", "--config", exp, "--n", "40"]),
        ("verify", vec!["verify", "--suite", "noise", "--n", "200"]),
    ];
    let mut identical = 0;
    let mut base = std::collections::BTreeMap::new();
    for (name, args) in &runs {
        let a = cli(args);
        if a == cli(args) {
            identical += 1;
        }
        base.insert(*name, a);
    }
    // namespace -> outputs that read it
    let cases: [(&str, &[&str]); 5] = [
        ("w/0", &["noise", "sbm", "star", "graph"]),
        ("sbm-zero/0", &["sbm"]),
        ("v/a/side", &["graph"]),
        ("star/gamma+", &["star"]),
        ("unused/stream", &[]),
    ];
    let mut locality = Vec::new();
    let mut local_ok = true;
    for (ns, dependents) in cases {
        let mut changed = Vec::new();
        for (name, args) in runs.iter().filter(|r| ["noise", "sbm", "star", "graph"].contains(&r.0)) {
            let mut a = vec!["--corrupt", ns];
            a.extend(args);
            if cli(&a) != base[name] {
                changed.push(*name);
            }
        }
        local_ok &= changed == dependents;
        locality.push(format!("{ns} -> {changed:?}"));
    }
    let lib = replay_test(&barbell_config(LabelMode::Mapping, 4).unwrap(), &[
        (0, LatticePoint::Vertex(0), 256),
        (16, LatticePoint::Interior { edge: 1, site: 8 }, 200),
    ], 0.3, 200, 1000).unwrap();
    Outcome {
        pass: identical == runs.len() && local_ok && lib.passed(),
        summary: format!(
            "determinism: {identical}/{} CLI commands byte-identical on rerun; corruption {}; library replay over {} namespaces: {} violations in {} changed outputs",
            runs.len(),
            locality.join(", "),
            lib.details["namespaces"].as_array().unwrap().len(),
            lib.statistic,
            lib.details["changed_outputs"]
        ),
    }
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut run = |i: usize, o: Outcome| {
        println!("{} [criterion {i}] {}", if o.pass { "PASS" } else { "FAIL" }, o.summary);
        results.push((i, o));
    };
    run(1, c1_flow_property());
    let t = Instant::now();
    let ens = sbm_ensemble(&sbm_betas(), 7, 1.0, 100_000, 200).unwrap();
    let elapsed = t.elapsed();
    run(2, c2_sign_law(&ens, elapsed));
    run(3, c3_radial());
    run(4, c4_label_law());
    run(5, c5_freidlin_sheu());
    run(6, c6_disjoint_zeros());
    run(7, c7_round_trip());
    run(8, c8_local_time(&ens));
    run(9, c9_cond_indep());
    run(10, c10_determinism());
    let failed: Vec<usize> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
