use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::info;

use poisson_sketch::direct::{basis_pursuit, direct_estimate, write_trace_csv, LpMethod, LpOptions};
use poisson_sketch::expander::{build_with_cover, greedy_cover};
use poisson_sketch::experiment::{
    decode, emit_csv, emit_plot_data, load_csv, run_sweep, DecodeInput, Decoder, ExperimentConfig, Metric,
};
use poisson_sketch::pmle::PmleParams;
use poisson_sketch::stream::{gen_rates, read_vector_csv, write_vector_csv};
use poisson_sketch::{BipartiteGraph, Error, Magnitude, RateVector, SignalSpec, StreamState};

#[derive(Parser)]
#[command(name = "poisson-sketch", version, about = "Expander-graph counters for Poisson flow streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random left-regular graph and save it.
    GenGraph {
        #[arg(long)]
        flows: usize,
        #[arg(long)]
        counters: usize,
        #[arg(long)]
        degree: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reseed until every counter has a neighbor.
        #[arg(long)]
        require_cover: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a stream over a saved graph and write its counters.
    Simulate {
        #[arg(long)]
        graph: PathBuf,
        /// Rates file (`index,value`); generated from `--k` when omitted.
        #[arg(long)]
        rates: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value = "const:1")]
        whale: Magnitude,
        #[arg(long, default_value = "abs-gaussian:0.001")]
        minnow: Magnitude,
        #[arg(long)]
        epochs: u64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the rates that were simulated.
        #[arg(long)]
        rates_out: Option<PathBuf>,
    },
    /// Estimate rates from a counter snapshot.
    Recover {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        counters: PathBuf,
        #[arg(long)]
        epochs: u64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value = "direct")]
        decoder: Decoder,
        #[arg(long)]
        tol_feas: Option<f64>,
        #[arg(long)]
        tol_obj: Option<f64>,
        #[arg(long)]
        iter_cap: Option<usize>,
        #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
        /// Dump the LP iterations (direct decoder only).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        grid_levels: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a configured sweep and write the results CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `results.csv` in the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Turn a results CSV into plotting columns.
    PlotData {
        #[arg(long)]
        results: PathBuf,
        /// success, rel_error or time
        #[arg(long)]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Brute-force the expansion of a saved graph.
    VerifyExpander {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.0625)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e7)]
        cap: f64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MethodArg {
    Auto,
    InteriorPoint,
    Admm,
}

impl From<MethodArg> for LpMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Auto => LpMethod::Auto,
            MethodArg::InteriorPoint => LpMethod::InteriorPoint,
            MethodArg::Admm => LpMethod::Admm,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else if e.is_io() {
        3
    } else {
        1
    }
}

fn run(cmd: Command) -> poisson_sketch::Result<()> {
    match cmd {
        Command::GenGraph {
            flows,
            counters,
            degree,
            seed,
            require_cover,
            out,
        } => {
            let g = if require_cover {
                let c = build_with_cover(flows, counters, degree, seed)?;
                info!("cover of {} flows after {} reseeds", c.cover.len(), c.retries);
                c.graph
            } else {
                BipartiteGraph::random(flows, counters, degree, seed)?
            };
            g.save(&out)?;
        }
        Command::Simulate {
            graph,
            rates,
            k,
            whale,
            minnow,
            epochs,
            tau,
            seed,
            out,
            rates_out,
        } => {
            let g = Arc::new(BipartiteGraph::load(&graph)?);
            let rv = match rates {
                Some(p) => RateVector::new(read_vector_csv(&p)?, k)?,
                None => gen_rates(&SignalSpec {
                    n_flows: g.n_left(),
                    k,
                    whale,
                    minnow,
                    seed: poisson_sketch::seed::derive(seed, &[1]),
                })?,
            };
            let mut st = StreamState::new(g, rv, tau, seed)?;
            st.run_epochs(epochs);
            write_vector_csv(&out, st.counters())?;
            if let Some(p) = rates_out {
                write_vector_csv(&p, st.rates().rates())?;
            }
        }
        Command::Recover {
            graph,
            counters,
            epochs,
            tau,
            k,
            decoder,
            tol_feas,
            tol_obj,
            iter_cap,
            method,
            trace,
            gamma,
            grid_levels,
            out,
        } => {
            let g = BipartiteGraph::load(&graph)?;
            let y: Vec<f64> = read_vector_csv(&counters)?;
            let solver = LpOptions {
                tol_feas,
                tol_obj,
                iter_cap,
                method: method.into(),
                trace: trace.is_some(),
            };
            let mut pmle = PmleParams::default();
            if let Some(v) = gamma {
                pmle.gamma = v;
            }
            if let Some(v) = grid_levels {
                pmle.grid_levels = v;
            }
            let rates = if decoder == Decoder::Direct {
                let sol = basis_pursuit(&g, &y, &solver)?;
                info!(
                    "{:?} after {} iterations, objective {}, feasibility {}",
                    sol.status, sol.iterations, sol.objective, sol.primal_feasibility
                );
                if let Some(p) = trace {
                    write_trace_csv(&p, &sol.trace)?;
                }
                direct_estimate(&sol, epochs, tau)?
            } else {
                let cover = greedy_cover(&g)?;
                let input = DecodeInput {
                    graph: &g,
                    cover: &cover,
                    counters: &y,
                    epochs,
                    tau,
                    k,
                    solver: &solver,
                    pmle: &pmle,
                };
                let d = decode(decoder, &input)?;
                if let Some(a1) = &d.a1 {
                    info!("{} candidate flows after localization", a1.len());
                }
                d.rates
            };
            write_vector_csv(&out, &rates)?;
        }
        Command::Sweep { config, out, threads } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if threads.is_some() {
                cfg.threads = threads;
            }
            let path = out.unwrap_or_else(|| {
                cfg.output_dir
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("."))
                    .join("results.csv")
            });
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let res = run_sweep(&cfg)?;
            emit_csv(&res, &path)?;
            for a in &res.aggregates {
                println!(
                    "k={} {}: success {:.3} rel_error {:.4} time {:.4}s",
                    a.k, a.decoder, a.success_prob, a.mean_rel_error, a.mean_time_s
                );
            }
        }
        Command::PlotData { results, metric, out } => {
            let metric: Metric = metric.parse()?;
            let res = load_csv(&results)?;
            emit_plot_data(&res, metric, &out)?;
        }
        Command::VerifyExpander { graph, k, epsilon, cap } => {
            let g = BipartiteGraph::load(&graph)?;
            let r = g.verify_expansion_capped(k, epsilon, cap)?;
            println!(
                "k={} epsilon={} worst_ratio={} subsets={} expander={}",
                r.k_checked, r.epsilon, r.worst_ratio, r.subsets_tested, r.is_expander
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
