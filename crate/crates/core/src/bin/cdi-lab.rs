use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use cdi_lab::appendix::run_appendix;
use cdi_lab::harness::{observe::observation_grid, run_experiment, ExperimentConfig};
use cdi_lab::measure::{LambdaSpec, MeasureFile};
use cdi_lab::numeric::ln_binomial;
use cdi_lab::rates::{cdi_classify, merger_distribution};
use cdi_lab::simulate::{Backend, Simulator};
use cdi_lab::speed::SpeedModel;
use cdi_lab::{Error, Result};

const EXIT_FAIL: u8 = 2;
const EXIT_ERROR: u8 = 1;

#[derive(Parser)]
#[command(name = "cdi-lab", version, about = "Speed of coming down from infinity for Lambda-coalescents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merger rates from a state with b blocks, as JSON.
    Rates {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long)]
        b: u64,
        /// Only this merger size; otherwise the whole row.
        #[arg(long)]
        k: Option<u64>,
    },
    /// Decides coming down from infinity by both criteria, as JSON.
    Classify {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        bmax: u64,
        #[arg(long, default_value_t = 1e8)]
        qmax: f64,
    },
    /// Prints v(t); optionally writes the whole table as CSV `t,v,u_roundtrip_residual`.
    Speed {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        emit_table: Option<PathBuf>,
    },
    /// Simulates one block-counting path and writes it as CSV `time,count`.
    Simulate {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "auto")]
        backend: Backend,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Runs the binomial bound suite and writes its JSON report.
    Appendix {
        #[arg(long)]
        report: PathBuf,
    },
    /// Runs an experiment config; writes `<experiment>.json` and `<experiment>.csv`.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Summarises a saved experiment report.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn load_measure(path: &Path) -> Result<LambdaSpec> {
    MeasureFile::load(path)?.to_spec()
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// `Ok(false)` means the command ran but a check failed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Rates { measure, b, k } => {
            let spec = load_measure(&measure)?;
            let row = merger_distribution(&spec, b)?;
            let mut out = json!({
                "b": b,
                "measure_id": spec.measure_id(),
                "total_rate": row.total_rate,
                "gamma": row.gamma,
            });
            match k {
                Some(k) if k < 2 || k > b => {
                    return Err(Error::Domain(format!("merger size k must lie in [2, {b}], got {k}")))
                }
                Some(k) => {
                    let weight = row.log_weights[(k - 2) as usize].exp();
                    out["k"] = json!(k);
                    out["lambda_bk"] = json!((row.log_weights[(k - 2) as usize] - ln_binomial(b as f64, k as f64)).exp());
                    out["merger_rate"] = json!(weight);
                    out["probability"] = json!(row.prob(k));
                }
                None => {
                    out["probabilities"] = json!((2..=b).map(|k| row.prob(k)).collect::<Vec<_>>());
                }
            }
            print_json(&out)?;
            Ok(true)
        }
        Command::Classify { measure, bmax, qmax } => {
            let spec = load_measure(&measure)?;
            print_json(&cdi_classify(&spec, bmax, qmax)?)?;
            Ok(true)
        }
        Command::Speed { measure, t, emit_table } => {
            let spec = load_measure(&measure)?;
            let speed = SpeedModel::for_spec(&spec)?;
            println!("{}", speed.v(t)?);
            if let Some(path) = emit_table {
                write_speed_table(&speed, &path)?;
            }
            Ok(true)
        }
        Command::Simulate {
            measure,
            n,
            seed,
            backend,
            out,
            horizon,
        } => {
            let spec = load_measure(&measure)?;
            let sim = Simulator::new(&spec)?;
            let path = sim.simulate(n, horizon, seed, backend)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = BufWriter::new(File::create(&out)?);
            path.write_csv(&mut w)?;
            w.flush()?;
            print_json(&json!({
                "n": n,
                "seed": seed,
                "backend": path.backend,
                "jumps": path.events.len(),
                "final_count": path.final_count(),
                "end_time": path.events.last().map_or(0.0, |e| e.0),
                "tree_length": path.tree_length(0.0, path.events.last().map_or(0.0, |e| e.0)),
            }))?;
            Ok(true)
        }
        Command::Appendix { report } => {
            let r = run_appendix()?;
            write_text(&report, &(serde_json::to_string_pretty(&r)? + "\n"))?;
            println!("appendix: {}", if r.pass { "pass" } else { "FAIL" });
            Ok(r.pass)
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let report = run_experiment(&cfg, base)?;
            std::fs::create_dir_all(&out)?;
            let stem = serde_json::to_value(cfg.experiment)?;
            let stem = stem.as_str().unwrap_or("experiment");
            let json_path = out.join(format!("{stem}.json"));
            let csv_path = out.join(format!("{stem}.csv"));
            write_text(&json_path, &report.to_json()?)?;
            let mut w = BufWriter::new(File::create(&csv_path)?);
            report.write_csv(&mut w)?;
            w.flush()?;
            for c in &report.checks {
                println!("{} {}: {:e}", if c.pass { "pass" } else { "FAIL" }, c.name, c.value);
            }
            println!("report: {}", json_path.display());
            Ok(report.pass)
        }
        Command::Report { input } => {
            let text = std::fs::read_to_string(&input)?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            if v["schema"] != json!(1) {
                return Err(Error::Config(format!("{}: unsupported report schema {}", input.display(), v["schema"])));
            }
            println!("experiment: {}", v["experiment"].as_str().unwrap_or("?"));
            for g in v["groups"].as_array().into_iter().flatten() {
                let name = g["name"].as_str().unwrap_or("?");
                match g["aggregate"].as_object() {
                    Some(a) => println!(
                        "  {name}: mean {} sd {} (count {})",
                        a["mean"], a["sd"], a["count"]
                    ),
                    None => println!("  {name}: {}", g["note"].as_str().unwrap_or("no values")),
                }
            }
            for c in v["checks"].as_array().into_iter().flatten() {
                let pass = c["pass"].as_bool().unwrap_or(false);
                println!("{} {}: {}", if pass { "pass" } else { "FAIL" }, c["name"].as_str().unwrap_or("?"), c["value"]);
            }
            Ok(v["pass"].as_bool().unwrap_or(false))
        }
    }
}

fn write_speed_table(speed: &SpeedModel, path: &Path) -> Result<()> {
    let (lo, hi) = match speed {
        SpeedModel::Kingman { .. } => (1e-6, 1.0),
        SpeedModel::Table(t) => (t.t_floor(), t.t_ceiling()),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "v", "u_roundtrip_residual"])?;
    for t in observation_grid(lo, hi) {
        let v = speed.v(t)?;
        let residual = (speed.u(v)? - t).abs() / t;
        w.write_record([format!("{t:e}"), format!("{v:e}"), format!("{residual:e}")])?;
    }
    w.flush()?;
    Ok(())
}
