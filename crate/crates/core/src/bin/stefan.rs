use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stefan_cbf::model::DerivedConstants;
use stefan_cbf::scenario::{load_config_file, run_batch, write_outputs, ClosedLoop, RunOutput, ScenarioConfig};
use stefan_cbf::service::{Server, ServerOptions, SessionOptions};
use stefan_cbf::solver::TravelingWave;
use stefan_cbf::verification::traveling_wave_error;
use stefan_cbf::Error;

const EXIT_VIOLATION: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "stefan", version, about = "Stefan melting simulator with CBF safety filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios to their horizon and write trajectory.csv and report.json.
    Simulate {
        /// Scenario file; repeat for a batch.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        /// Output directory. A batch writes one subdirectory per scenario.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Keep every k-th step (overrides run.decimate).
        #[arg(long)]
        decimate: Option<usize>,
        /// Scenarios run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check a scenario's assumptions and gain conditions without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the solver against closed-form solutions.
    Oracle {
        #[command(subcommand)]
        which: Oracle,
    },
    /// Serve a live session over TCP (newline-delimited JSON).
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Simulated seconds per wall second.
        #[arg(long, default_value_t = SessionOptions::default().timescale)]
        timescale: f64,
        #[arg(long, default_value_t = ServerOptions::default().frame_rate)]
        frame_rate: f64,
    },
}

#[derive(Subcommand)]
enum Oracle {
    /// Nondimensional traveling wave (alpha = beta = k = 1) under refinement.
    TravelingWave {
        #[arg(long, default_value_t = 0.5)]
        v: f64,
        #[arg(long, default_value_t = 0.3)]
        s0: f64,
        #[arg(long, value_delimiter = ',', default_value = "50,100,200")]
        n: Vec<usize>,
        /// Fraction of the explicit stability bound.
        #[arg(long, default_value_t = 0.4)]
        cfl: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate { config, out, decimate, jobs } => simulate(&config, &out, decimate, jobs),
        Command::Validate { config } => validate(&config),
        Command::Oracle { which: Oracle::TravelingWave { v, s0, n, cfl, horizon } } => {
            traveling_wave(v, s0, &n, cfl, horizon)
        }
        Command::Serve { config, port, host, timescale, frame_rate } => {
            serve(&config, &host, port, timescale, frame_rate)
        }
    };
    ExitCode::from(code)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, u8> {
    load_config_file(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        EXIT_CONFIG
    })
}

fn simulate(paths: &[PathBuf], out: &Path, decimate: Option<usize>, jobs: usize) -> u8 {
    let mut cfgs = Vec::new();
    for p in paths {
        match load(p) {
            Ok(mut c) => {
                if let Some(k) = decimate {
                    c.decimate = k.max(1);
                }
                cfgs.push(c);
            }
            Err(code) => return code,
        }
    }
    let batch = cfgs.len() > 1;
    let mut worst = 0u8;
    let mut bump = |code: u8| {
        // config problems outrank solver failures, which outrank violations
        let rank = |c: u8| match c {
            EXIT_CONFIG => 3,
            EXIT_NUMERICAL => 2,
            EXIT_VIOLATION => 1,
            _ => 0,
        };
        if rank(code) > rank(worst) {
            worst = code;
        }
    };
    for (i, (cfg, result)) in cfgs.iter().zip(run_batch(&cfgs, jobs)).enumerate() {
        let out_dir = if batch { out.join(format!("{i:02}-{}", cfg.name)) } else { out.to_path_buf() };
        match result {
            Err(e) => {
                eprintln!("{}: {e}", paths[i].display());
                bump(exit_code(&e));
            }
            Ok(run) => {
                if let Err(e) = write_outputs(&out_dir, &run) {
                    eprintln!("{}: {e}", out_dir.display());
                    bump(EXIT_CONFIG);
                }
                summarize(cfg, &run, &out_dir);
                if let Some(e) = &run.failure {
                    bump(exit_code(e));
                }
                if run.report.violation_count() > 0 {
                    bump(EXIT_VIOLATION);
                }
            }
        }
    }
    worst
}

fn summarize(cfg: &ScenarioConfig, run: &RunOutput, dir: &Path) {
    let r = &run.report;
    println!(
        "{}: t_end={:.4e} s_end={:.6e} s_r={:.6e} violations={} steps={} -> {}",
        cfg.name,
        r.t_end,
        r.s_end,
        r.s_r,
        r.violation_count(),
        r.steps,
        dir.display()
    );
    if let Some(c) = &r.clamp_stats {
        println!(
            "  clamped lower {:.1}% upper {:.1}% infeasible {}",
            100.0 * c.fraction_lower(),
            100.0 * c.fraction_upper(),
            c.infeasible_resolved
        );
    }
    if let Some(e) = &run.failure {
        println!("  stopped early: {e}");
    }
}

fn validate(path: &Path) -> u8 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match ClosedLoop::new(&cfg) {
        Ok(cl) => {
            print!("{}", cl.assumptions());
            println!("{}: ok", cfg.name);
            0
        }
        Err(Error::Assumptions(report)) => {
            print!("{report}");
            println!("{}: {} check(s) failed", cfg.name, report.failures().count());
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            exit_code(&e)
        }
    }
}

fn traveling_wave(v: f64, s0: f64, levels: &[usize], cfl: f64, horizon: f64) -> u8 {
    let tw = TravelingWave { v, s0 };
    let consts = DerivedConstants::nondimensional(1.0, 1.0, 1.0);
    println!("{:>6} {:>12} {:>10} {:>14} {:>14} {:>7}", "n", "dt", "steps", "max|s-s_ex|", "theta_rel", "order");
    let mut prev: Option<f64> = None;
    for &n in levels {
        match traveling_wave_error(&tw, &consts, n, cfl, horizon) {
            Ok(e) => {
                let order = prev.map_or(String::from("-"), |p| format!("{:.2}", (p / e.max_s_error).log2()));
                println!(
                    "{:>6} {:>12.4e} {:>10} {:>14.6e} {:>14.6e} {:>7}",
                    e.n, e.dt, e.steps, e.max_s_error, e.final_theta_error, order
                );
                prev = Some(e.max_s_error);
            }
            Err(e) => {
                eprintln!("n = {n}: {e}");
                return exit_code(&e);
            }
        }
    }
    0
}

fn serve(path: &Path, host: &str, port: u16, timescale: f64, frame_rate: f64) -> u8 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let opts = ServerOptions {
        session: SessionOptions { timescale, ..SessionOptions::default() },
        frame_rate,
    };
    match Server::start((host, port), cfg, opts) {
        Ok(server) => {
            println!("listening on {}", server.local_addr());
            server.wait();
            0
        }
        Err(e) => {
            eprintln!("{e}");
            exit_code(&e)
        }
    }
}
