use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use dcm_stabilizer::harness::{compute_metrics, run_episode, HarnessError, Metrics, SimLog};
use dcm_stabilizer::scenario::{bundled_names, Scenario};

/// Closed-loop walking stabilizer simulation.
#[derive(Parser)]
#[command(name = "dcmstab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its per-cycle log as CSV.
    Run {
        /// Bundled scenario name or path to a TOML file.
        scenario: String,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<String>,
    },
    /// Print tracking metrics of a CSV log.
    Metrics {
        csv: String,
        /// Print `key = value` lines instead of the table.
        #[arg(long)]
        plain: bool,
    },
    /// Run a scenario for several values of one parameter, in parallel.
    Sweep {
        scenario: String,
        /// Dotted parameter path, e.g. `dcm.k_p` or `admittance.a_com_x`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
    /// Check a scenario file and print its resolved contents.
    Validate {
        scenario: String,
        /// Print the resolved scenario with all defaults.
        #[arg(long)]
        resolved: bool,
    },
    /// List the bundled scenarios.
    List,
}

fn print_metrics(m: &Metrics) {
    println!("cycles                 {}", m.cycles);
    println!("duration_s             {:.3}", m.duration);
    println!("dcm_error_x  max/rms   {:.6} {:.6}", m.dcm_x.max, m.dcm_x.rms);
    println!("dcm_error_y  max/rms   {:.6} {:.6}", m.dcm_y.max, m.dcm_y.rms);
    println!("dcm_error    max/rms   {:.6} {:.6}", m.dcm_norm.max, m.dcm_norm.rms);
    println!("zmp_m-qp_x   max/rms   {:.6} {:.6}", m.zmp_m_qp_x.max, m.zmp_m_qp_x.rms);
    println!("zmp_m-qp_y   max/rms   {:.6} {:.6}", m.zmp_m_qp_y.max, m.zmp_m_qp_y.rms);
    println!("zmp_qp-d_x   max/rms   {:.6} {:.6}", m.zmp_qp_d_x.max, m.zmp_qp_d_x.rms);
    println!("zmp_qp-d_y   max/rms   {:.6} {:.6}", m.zmp_qp_d_y.max, m.zmp_qp_d_y.rms);
    println!("qp_iterations mean/max {:.3} {}", m.qp_iterations_mean, m.qp_iterations_max);
    println!("qp_not_ok_cycles       {}", m.qp_not_ok);
    println!("polygon_violations     {}", m.polygon_violations);
}

fn print_plain(m: &Metrics) {
    let pairs = [
        ("cycles", m.cycles as f64),
        ("duration", m.duration),
        ("dcm_x_max", m.dcm_x.max),
        ("dcm_x_rms", m.dcm_x.rms),
        ("dcm_y_max", m.dcm_y.max),
        ("dcm_y_rms", m.dcm_y.rms),
        ("dcm_max", m.dcm_norm.max),
        ("dcm_rms", m.dcm_norm.rms),
        ("zmp_m_qp_x_max", m.zmp_m_qp_x.max),
        ("zmp_m_qp_x_rms", m.zmp_m_qp_x.rms),
        ("zmp_m_qp_y_max", m.zmp_m_qp_y.max),
        ("zmp_m_qp_y_rms", m.zmp_m_qp_y.rms),
        ("zmp_qp_d_x_max", m.zmp_qp_d_x.max),
        ("zmp_qp_d_x_rms", m.zmp_qp_d_x.rms),
        ("zmp_qp_d_y_max", m.zmp_qp_d_y.max),
        ("zmp_qp_d_y_rms", m.zmp_qp_d_y.rms),
        ("qp_iterations_mean", m.qp_iterations_mean),
        ("qp_iterations_max", m.qp_iterations_max as f64),
        ("qp_not_ok", m.qp_not_ok as f64),
        ("polygon_violations", m.polygon_violations as f64),
    ];
    for (k, v) in pairs {
        println!("{k} = {v}");
    }
}

fn write_log(log: &SimLog, out: Option<&str>) -> Result<(), HarnessError> {
    match out {
        Some(path) => {
            let f = File::create(path).map_err(|e| HarnessError::Io(format!("{path}: {e}")))?;
            log.write_csv(BufWriter::new(f))
        }
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(log.to_csv_string().as_bytes()).and_then(|_| out.flush()) {
                // a closed reader such as `head` is not an error
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(HarnessError::Io(e.to_string())),
                _ => Ok(()),
            }
        }
    }
}

fn run(scenario: &str, out: Option<&str>) -> Result<ExitCode, HarnessError> {
    let s = Scenario::load(scenario)?;
    let start = Instant::now();
    let result = run_episode(&s);
    let wall = start.elapsed().as_secs_f64();
    match result {
        Ok(log) => {
            log::info!("{} cycles in {:.3} s ({:.3} ms per cycle)", log.rows.len(), wall, 1e3 * wall / log.rows.len().max(1) as f64);
            write_log(&log, out)?;
            Ok(ExitCode::SUCCESS)
        }
        Err(HarnessError::Fall { time, reason, log }) => {
            write_log(&log, out)?;
            eprintln!("fall at t = {time:.3} s: {reason}");
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e),
    }
}

fn sweep(scenario: &str, param: &str, values: &[f64]) -> Result<ExitCode, HarnessError> {
    let base = Scenario::load(scenario)?;
    let variants = values.iter().map(|&v| base.with_param(param, v).map(|s| (v, s))).collect::<Result<Vec<_>, _>>()?;
    let results: Vec<(f64, Result<Metrics, String>)> = variants
        .par_iter()
        .map(|(v, s)| {
            let r = match run_episode(s) {
                Ok(log) => compute_metrics(&log).map_err(|e| e.to_string()),
                Err(HarnessError::Fall { time, .. }) => Err(format!("fall at {time:.3} s")),
                Err(e) => Err(e.to_string()),
            };
            (*v, r)
        })
        .collect();
    println!("{param},outcome,dcm_max,dcm_rms,zmp_m_qp_rms_x,zmp_m_qp_rms_y,polygon_violations");
    let mut all_ok = true;
    for (v, r) in results {
        match r {
            Ok(m) => println!(
                "{v},completed,{:.6},{:.6},{:.6},{:.6},{}",
                m.dcm_norm.max, m.dcm_norm.rms, m.zmp_m_qp_x.rms, m.zmp_m_qp_y.rms, m.polygon_violations
            ),
            Err(e) => {
                all_ok = false;
                println!("{v},{e},,,,,")
            }
        }
    }
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out } => run(&scenario, out.as_deref()),
        Command::Metrics { csv, plain } => File::open(&csv)
            .map_err(|e| HarnessError::Io(format!("{csv}: {e}")))
            .and_then(|f| SimLog::read_csv(BufReader::new(f)))
            .and_then(|log| compute_metrics(&log))
            .map(|m| {
                if plain {
                    print_plain(&m)
                } else {
                    print_metrics(&m)
                }
                ExitCode::SUCCESS
            }),
        Command::Sweep { scenario, param, values } => sweep(&scenario, &param, &values),
        Command::Validate { scenario, resolved } => Scenario::load(&scenario).map_err(HarnessError::from).map(|s| {
            if resolved {
                print!("{}", s.to_toml());
            } else {
                println!("{}: ok ({} steps, {:.2} s)", scenario, s.footstep_plan().steps.len(), s.episode_duration());
            }
            ExitCode::SUCCESS
        }),
        Command::List => {
            for n in bundled_names() {
                println!("{n}");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
