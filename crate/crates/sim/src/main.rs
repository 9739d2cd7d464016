use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cellfree_core::exchange::write_message_trace;
use cellfree_core::pipeline::{tune_rho, ExecutionMode};
use cellfree_sim::checks::{oracle_suite, statistical_suite, CriterionReport};
use cellfree_sim::config::{PerBs, Settings};
use cellfree_sim::experiment::{draw, evaluate, run_experiment, write_rows, Algorithm, ExperimentSpec, SweepVar};
use cellfree_sim::{thread_pool, SimError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cellfree", version, about = "Distributed precoding and RIS phase design for cell-free downlinks")]
struct Cli {
    /// Worker threads for sweeps (defaults to CELLFREE_THREADS, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm on one channel draw
    Run {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value = "distributed")]
        algo: String,
        /// Per-block WSR and consensus trace (distributed only)
        #[arg(long)]
        out: Option<PathBuf>,
        /// One line per exchanged message
        #[arg(long)]
        message_trace: Option<PathBuf>,
        /// Every channel entry of the draw
        #[arg(long)]
        dump_channels: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
    /// Sweep one parameter over values and seeds, writing CSV rows
    Sweep {
        #[command(flatten)]
        system: SystemArgs,
        /// P_dBm, N, K or B
        #[arg(long = "var", default_value = "P_dBm")]
        var: String,
        #[arg(long, value_delimiter = ',', default_values_t = vec![10.0, 20.0, 30.0])]
        values: Vec<f64>,
        /// Number of seeds per point, counting up from --seed
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Comma-separated algorithm names (default: all)
        #[arg(long, value_delimiter = ',')]
        algo: Vec<String>,
        /// CSV destination (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
    /// Pick each BS's penalty from a grid on held-out draws
    TuneRho {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.1, 1.0, 10.0])]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        batch: usize,
    },
    /// Run the oracle and property checks
    Verify {
        /// Also run the statistical reproductions on the reference deployment
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 50)]
        seeds: u64,
    },
}

#[derive(Args, Clone, Default)]
struct SystemArgs {
    /// JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use N = 50 RIS elements unless N is given
    #[arg(long)]
    paper_scale: bool,
    #[arg(long = "B")]
    num_bs: Option<usize>,
    #[arg(long = "R")]
    num_ris: Option<usize>,
    #[arg(long = "K")]
    num_ues: Option<usize>,
    #[arg(long = "N")]
    ris_elements: Option<usize>,
    #[arg(long = "N_t")]
    bs_antennas: Option<usize>,
    #[arg(long = "L")]
    blocks: Option<usize>,
    /// Per-BS transmit power in dBm
    #[arg(long = "P_dBm")]
    p_dbm: Option<f64>,
    #[arg(long = "noise_dBm")]
    noise_dbm: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
}

impl SystemArgs {
    fn settings(&self) -> Result<Settings, SimError> {
        let file = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let cli = Settings {
            num_bs: self.num_bs,
            num_ris: self.num_ris,
            num_ues: self.num_ues,
            ris_elements: self.ris_elements,
            bs_antennas: self.bs_antennas,
            blocks: self.blocks,
            p_dbm: self.p_dbm.map(PerBs::One),
            noise_dbm: self.noise_dbm,
            rho: self.rho.map(PerBs::One),
            seed: self.seed,
            ..Default::default()
        };
        let merged = file.merge(&cli);
        Ok(if self.paper_scale { merged.paper_scale() } else { merged })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, SimError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| SimError::Output { path: path.display().to_string(), source: e })
}

fn output_err(path: &str) -> impl FnOnce(io::Error) -> SimError + '_ {
    move |e| SimError::Output { path: path.to_string(), source: e }
}

fn run(cli: Cli) -> Result<bool, SimError> {
    let stdout = io::stdout();
    let mut so = stdout.lock();
    match cli.command {
        Command::Run { system, algo, out, message_trace, dump_channels, timing } => {
            let algorithm: Algorithm = algo.parse()?;
            let cfg = system.settings()?.build()?;
            let ch = draw(&cfg)?;
            if let Some(p) = &dump_channels {
                ch.write_csv(create(p)?)?;
            }
            let o = evaluate(&cfg, &ch, algorithm, ExecutionMode::Threaded, timing)?;
            let lines = [
                format!("algorithm: {algorithm}"),
                format!("seed: {}", cfg.seed),
                format!("wsr_bits: {}", o.wsr_bits),
                format!("consensus_err: {}", o.consensus_err),
                format!("msg_complex_scalars: {}", o.msg_complex_scalars),
                format!("runtime_ms: {}", o.runtime_ms),
            ];
            writeln!(so, "{}", lines.join("\n")).map_err(output_err("stdout"))?;
            if let Some(r) = &o.run {
                if let Some(p) = &out {
                    let mut w = create(p)?;
                    let path = p.display().to_string();
                    writeln!(w, "block,wsr_bits,consensus_err").map_err(output_err(&path))?;
                    for (l, (a, c)) in r.wsr_trace.iter().zip(&r.consensus_trace).enumerate() {
                        writeln!(w, "{},{a},{c}", l + 1).map_err(output_err(&path))?;
                    }
                    w.flush().map_err(output_err(&path))?;
                }
                if let Some(p) = &message_trace {
                    write_message_trace(&r.messages, create(p)?)?;
                }
            } else if out.is_some() || message_trace.is_some() {
                return Err(SimError::Config("--out and --message-trace apply to the distributed algorithm".into()));
            }
            Ok(true)
        }
        Command::Sweep { system, var, values, seeds, algo, out, timing } => {
            let settings = system.settings()?;
            let first = settings.seed.unwrap_or(0);
            let algorithms = if algo.is_empty() {
                Algorithm::ALL.to_vec()
            } else {
                algo.iter().map(|a| a.parse()).collect::<Result<_, _>>()?
            };
            let spec = ExperimentSpec {
                var: var.parse::<SweepVar>()?,
                values,
                seeds: (0..seeds).map(|i| first + i).collect(),
                algorithms,
                timing,
            };
            let pool = thread_pool(cli.threads)?;
            let rows = run_experiment(&spec, &settings, &pool)?;
            match out {
                Some(p) => write_rows(&rows, create(&p)?)?,
                None => write_rows(&rows, &mut so)?,
            }
            Ok(true)
        }
        Command::TuneRho { system, grid, batch } => {
            let cfg = system.settings()?.build()?;
            if batch == 0 {
                return Err(SimError::Config("--batch must be at least 1".into()));
            }
            let t = tune_rho(&cfg, &grid, batch)?;
            let rho: Vec<String> = t.rho.iter().map(|r| r.to_string()).collect();
            writeln!(so, "rho: {}\nloss: {}\ninitial_loss: {}", rho.join(","), t.loss, t.initial_loss)
                .map_err(output_err("stdout"))?;
            Ok(true)
        }
        Command::Verify { full, seeds } => {
            let mut reports: Vec<CriterionReport> = oracle_suite()?;
            if full {
                reports.extend(statistical_suite(seeds, &thread_pool(cli.threads)?)?);
                reports.sort_by_key(|r| r.id);
            }
            for r in &reports {
                writeln!(so, "{r}").map_err(output_err("stdout"))?;
            }
            Ok(reports.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
