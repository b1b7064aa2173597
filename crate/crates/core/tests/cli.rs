use std::path::Path;
use std::process::{Command, Output};

use poisson_sketch::direct::LpOptions;
use poisson_sketch::experiment::{load_csv, Decoder, ExperimentConfig, Timing};
use poisson_sketch::pmle::PmleParams;
use poisson_sketch::stream::read_vector_csv;
use poisson_sketch::{BipartiteGraph, Magnitude};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poisson-sketch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn graph_simulate_recover_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.txt");
    let counters = dir.path().join("y.csv");
    let rates = dir.path().join("rates.csv");
    let out = run(&[
        "gen-graph", "--flows", "300", "--counters", "60", "--degree", "6", "--seed", "5", "--require-cover", "--out",
        s(&graph),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let g = BipartiteGraph::load(&graph).unwrap();
    assert_eq!((g.n_left(), g.n_right(), g.degree()), (300, 60, 6));

    let out = run(&[
        "simulate", "--graph", s(&graph), "--k", "3", "--epochs", "50", "--seed", "8", "--out", s(&counters),
        "--rates-out", s(&rates),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let y: Vec<u64> = read_vector_csv(&counters).unwrap();
    assert_eq!(y.len(), 60);
    let truth: Vec<f64> = read_vector_csv(&rates).unwrap();
    let mut whales: Vec<usize> = (0..300).filter(|&i| truth[i] >= 0.5).collect();
    whales.sort_unstable();
    assert_eq!(whales.len(), 3);

    for decoder in ["direct", "pmle-reduced"] {
        let est_path = dir.path().join(format!("{decoder}.csv"));
        let trace = dir.path().join("trace.csv");
        let mut args = vec![
            "recover", "--graph", s(&graph), "--counters", s(&counters), "--epochs", "50", "--k", "3", "--decoder",
            decoder, "--out", s(&est_path),
        ];
        if decoder == "direct" {
            args.extend(["--trace", s(&trace)]);
        }
        let out = run(&args);
        assert!(out.status.success(), "{decoder}: {}", String::from_utf8_lossy(&out.stderr));
        let est: Vec<f64> = read_vector_csv(&est_path).unwrap();
        assert_eq!(est.len(), 300);
        let mut top: Vec<usize> = (0..300).collect();
        top.sort_by(|&a, &b| est[b].total_cmp(&est[a]));
        let mut top3 = top[..3].to_vec();
        top3.sort_unstable();
        assert_eq!(top3, whales, "{decoder}");
        if decoder == "direct" {
            let t = std::fs::read_to_string(&trace).unwrap();
            assert!(t.starts_with("iteration,objective,feasibility,gap"));
            assert!(t.lines().count() > 2);
        }
    }

    let out = run(&["verify-expander", "--graph", s(&graph), "--k", "1"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("expander=true"));
}

#[test]
fn sweep_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        schema_version: 1,
        n_flows: 200,
        n_counters: 50,
        degree: None,
        epochs: 20,
        tau: 1.0,
        sweep: vec![2, 4],
        trials: 3,
        whale: Magnitude::Constant { value: 1.0 },
        minnow: Magnitude::AbsGaussian { sigma: 0.001 },
        decoders: vec![Decoder::Direct, Decoder::PmleReduced],
        solver: LpOptions::default(),
        pmle: PmleParams::default(),
        root_seed: 12,
        output_dir: Some(dir.path().join("out")),
        threads: None,
        timing: Timing::Off,
    };
    let cfg_path = dir.path().join("sweep.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string().unwrap()).unwrap();

    let out = run(&["sweep", "--config", s(&cfg_path), "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = dir.path().join("out").join("results.csv");
    let res = load_csv(&results).unwrap();
    assert_eq!(res.rows.len(), 2 * 3 * 2);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);

    let plot = dir.path().join("plot.dat");
    let out = run(&["plot-data", "--results", s(&results), "--metric", "success", "--out", s(&plot)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&plot).unwrap();
    assert!(text.contains("# decoder direct"));
    assert!(text.contains("# decoder pmle-reduced"));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["gen-graph", "--flows", "10"]).status.code(), Some(1));
    // invalid parameters
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.txt");
    let out = run(&["gen-graph", "--flows", "10", "--counters", "20", "--degree", "2", "--out", s(&g)]);
    assert_eq!(out.status.code(), Some(1));
    // unreadable input
    let missing = dir.path().join("missing.txt");
    let out = run(&["verify-expander", "--graph", s(&missing), "--k", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&["sweep", "--config", s(&missing)]);
    assert_eq!(out.status.code(), Some(3));
    // a malformed config is a user error, not an I/O one
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    assert_eq!(run(&["sweep", "--config", s(&cfg)]).status.code(), Some(1));
    // a counter file that is not a number list
    let y = dir.path().join("y.csv");
    std::fs::write(&y, "0,abc\n").unwrap();
    let gp = dir.path().join("ok.txt");
    assert!(run(&["gen-graph", "--flows", "10", "--counters", "4", "--degree", "2", "--out", s(&gp)]).status.success());
    let est = dir.path().join("est.csv");
    let out = run(&["recover", "--graph", s(&gp), "--counters", s(&y), "--epochs", "1", "--out", s(&est)]);
    assert_eq!(out.status.code(), Some(3));
}
