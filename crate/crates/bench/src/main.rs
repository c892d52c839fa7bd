use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use gatherconv::catalog::{catalog_to_json, layer_catalog, load_catalog};
use gatherconv::perf::{measure_mac_rate, peak_agrees, DeviceSpec};
use gatherconv::BlockingConfig;
use gatherconv_bench::config::parse_layer_list;
use gatherconv_bench::{
    emit_report, render_report, run_bench, run_verify, summary_table, BenchError, ReportFormat, RunConfig,
};

#[derive(Parser)]
#[command(name = "gatherconv", about = "Implicit-GEMM convolution: verification and efficiency benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the blocked kernel against the 64-bit reference on seeded inputs.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Corrupt one weight of this layer before the blocked run (test hook).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Time the blocked kernel and report computational efficiency.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        /// JSON {label, fma_lanes, clock_hz}; falls back to $GATHERCONV_DEVICE_SPEC.
        #[arg(long)]
        device_spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: String,
        /// Also print per-layer output checksums.
        #[arg(long)]
        checksums: bool,
    },
    /// Show the layer catalog.
    Catalog {
        #[arg(long)]
        print: bool,
        /// Emit the catalog file format instead of a table.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Measure the single-thread multiply-add rate of this machine.
    Probe {
        #[arg(long, default_value_t = 200)]
        millis: u64,
        /// Single-core spec to check the measured rate against (within 20%).
        #[arg(long)]
        device_spec: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Comma-separated layer ids (e.g. alexnet/conv2,overfeat/L1) or `all`.
    #[arg(long, default_value = "all")]
    layers: String,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Alternative catalog file.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Batch block; defaults to 64, or the minibatch rounded up to 8 when smaller.
    #[arg(long)]
    bm: Option<usize>,
    #[arg(long, default_value_t = 64)]
    bn: usize,
    #[arg(long, default_value_t = 8)]
    kt: usize,
    #[arg(long, default_value_t = 8)]
    rm: usize,
    #[arg(long, default_value_t = 8)]
    rn: usize,
}

impl Common {
    fn into_config(self) -> Result<RunConfig, BenchError> {
        let bm = self.bm.unwrap_or_else(|| BlockingConfig::for_minibatch(self.minibatch.unwrap_or(128)).bm);
        let blocking = BlockingConfig::new(bm, self.bn, self.kt, self.rm, self.rn)?;
        Ok(RunConfig {
            layers: parse_layer_list(&self.layers),
            minibatch: self.minibatch,
            threads: self.threads,
            seed: self.seed,
            blocking,
            catalog: self.catalog,
            ..RunConfig::default()
        })
    }
}

fn run(cli: Cli) -> Result<ExitCode, BenchError> {
    match cli.command {
        Command::Verify { common, inject_fault } => {
            let config = RunConfig { fault_layer: inject_fault, ..common.into_config()? };
            let report = run_verify(&config)?;
            for layer in &report.layers {
                println!(
                    "{} {:<16} max rel err {:.3e}",
                    if layer.passed { "PASS" } else { "FAIL" },
                    layer.id,
                    layer.max_rel_err
                );
            }
            if let Some(worst) = report.worst_failure() {
                eprintln!(
                    "verification failed: {} has relative error {:.3e} > {:.0e}",
                    worst.id, worst.max_rel_err, report.tolerance
                );
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { common, repeat, device_spec, out, format, checksums } => {
            let format: ReportFormat = format.parse()?;
            let config = RunConfig { repeat, device_spec, out, format, ..common.into_config()? };
            let run = run_bench(&config)?;
            print!("{}", summary_table(&run.reports));
            if checksums {
                for (r, sum) in run.reports.iter().zip(&run.checksums) {
                    println!("{} {sum}", r.id());
                }
            }
            match &config.out {
                Some(path) => emit_report(&run.reports, config.format, path)?,
                None => print!("{}", render_report(&run.reports, config.format)?),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Catalog { print, json, catalog } => {
            let entries = match catalog {
                Some(path) => load_catalog(&path)?,
                None => layer_catalog(),
            };
            if json {
                print!("{}", catalog_to_json(&entries));
            } else if print || !json {
                println!("{:<18} {:>14} {:>14} {:>6} {:>6} {:>4}", "layer", "input", "output", "kernel", "stride", "pad");
                for e in &entries {
                    let s = e.shape;
                    let (wo, ho) = s.output_dims()?;
                    println!(
                        "{:<18} {:>14} {:>14} {:>6} {:>6} {:>4}",
                        e.id(),
                        format!("{}x{}x{}", s.wi, s.hi, s.nc),
                        format!("{wo}x{ho}x{}", s.no),
                        format!("{}x{}", s.sk, s.sk),
                        s.stride,
                        s.pad
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Probe { millis, device_spec } => {
            let rate = measure_mac_rate(Duration::from_millis(millis), 5);
            println!("single-thread multiply-add rate: {:.3e} MAC/s", rate);
            println!("equivalent fma_lanes at 1 GHz: {:.1}", rate / 1e9);
            if let Some(path) = device_spec {
                let dev = DeviceSpec::load(&path)?;
                let modeled = dev.fma_lanes as f64 * dev.clock_hz;
                let ok = peak_agrees(&dev, rate, 0.2);
                println!(
                    "{}: modeled {:.3e} MAC/s, measured/modeled {:.2} ({})",
                    dev.label,
                    modeled,
                    rate / modeled,
                    if ok { "within 20%" } else { "outside 20%" }
                );
                if !ok {
                    return Ok(ExitCode::from(1));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
