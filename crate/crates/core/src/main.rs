use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eecdma::experiment::{self, ExperimentSpec, Table, OUTPUT_DIR_ENV};
use eecdma::{game, lsa, units};

#[derive(Parser)]
#[command(
    name = "eecdma",
    version,
    about = "Energy-efficient resource allocation for CDMA uplinks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML file and write its CSV and manifest.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output_path`.
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
    },
    /// Print the utility-maximising target SINR for packets of M symbols.
    TargetSinr {
        #[arg(long)]
        packet_len: u32,
    },
    /// Print large-system power, SINR and utility profiles as CSV.
    LsaPredict { config: PathBuf },
    /// Print the equal-SINR social optimum at load A.
    SocialSinr {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        packet_len: u32,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> eecdma::Result<()> {
    match cli.command {
        Command::Run { config, output_dir } => {
            let spec = ExperimentSpec::load(&config)?;
            let dir = output_dir.unwrap_or_else(|| spec.output_path.clone());
            let report = experiment::run_experiment(&spec, &dir)?;
            let c = &report.computation;
            println!(
                "wrote {} rows to {}",
                c.table.len(),
                report.csv_path.display()
            );
            println!("manifest {}", report.manifest_path.display());
            if c.nonconverged_games > 0 {
                println!("{} games hit the iteration budget", c.nonconverged_games);
            }
            for e in &c.errors {
                eprintln!("row K={} {}: {}", e.users, e.method, e.message);
            }
        }
        Command::TargetSinr { packet_len } => {
            let g = game::target_sinr(packet_len)?;
            println!("{g} ({:.4} dB)", units::linear_to_db(g));
        }
        Command::LsaPredict { config } => {
            let spec = ExperimentSpec::load(&config)?;
            let rows = experiment::lsa_predict(&spec)?;
            let out = std::io::stdout().lock();
            Table::Profile(rows).write_csv(out)?;
        }
        Command::SocialSinr { alpha, packet_len } => {
            let g = lsa::social_optimum_sinr(alpha, packet_len)?;
            println!("{g} ({:.4} dB)", units::linear_to_db(g));
        }
    }
    std::io::stdout()
        .flush()
        .map_err(|e| eecdma::Error::Io(e.to_string()))
}
