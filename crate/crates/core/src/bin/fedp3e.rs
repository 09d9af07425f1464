use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedp3e::cli::{parse_config, run};
use fedp3e::fedcore::uniform_payload_cost;

#[derive(Parser)]
#[command(name = "fedp3e", version, about = "Federated learning simulator with one-shot prototype exchange")]
struct Args {
    /// Cap on worker threads.
    #[arg(long, global = true, env = "FEDP3E_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every federation in a JSON run specification.
    Run {
        config: PathBuf,
        /// Override the specification's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only run these names or strategies (comma separated).
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
    },
    /// Validate a run specification and print it with defaults filled in.
    Check { config: PathBuf },
    /// Prototype payload size relative to the model.
    CommCost {
        #[arg(long, default_value_t = 23_683)]
        d_w: usize,
        #[arg(long, default_value_t = 115)]
        d_x: usize,
        #[arg(long, default_value_t = 3)]
        m_k: usize,
        #[arg(long, default_value_t = 4)]
        m_k_global: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 3)]
        classes_global: usize,
    },
}

fn report(e: &dyn std::error::Error) {
    eprintln!("error: {e}");
    let mut source = e.source();
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            report(&e);
            return ExitCode::FAILURE;
        }
    }
    let outcome = match args.command {
        Command::Run {
            config,
            seed,
            out,
            strategies,
        } => parse_config(&config).and_then(|mut spec| {
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let Some(out) = out {
                spec.output_dir = out;
            }
            if !strategies.is_empty() {
                spec.select(&strategies)?;
            }
            for s in run(&spec)? {
                let f = &s.final_report;
                println!(
                    "{:<16} accuracy {:.4}  f1 {:.4}  exchange {}",
                    s.name,
                    f.accuracy,
                    f.macro_f1,
                    s.exchange_round.map_or("-".to_string(), |r| format!("round {r}"))
                );
            }
            println!("outputs in {}", spec.output_dir.display());
            Ok(())
        }),
        Command::Check { config } => parse_config(&config).and_then(|spec| {
            println!("{}", serde_json::to_string_pretty(&spec)?);
            Ok(())
        }),
        Command::CommCost {
            d_w,
            d_x,
            m_k,
            m_k_global,
            classes,
            classes_global,
        } => {
            let c = uniform_payload_cost(d_w, d_x, m_k, m_k_global, classes, classes_global);
            println!("upload   {:>6} floats  {:.2}%", c.upload_floats, 100.0 * c.upload_ratio);
            println!("download {:>6} floats  {:.2}%", c.download_floats, 100.0 * c.download_ratio);
            println!("total    {:>6} floats  {:.2}%", c.upload_floats + c.download_floats, 100.0 * c.total_ratio);
            println!("model exchange per round: {} floats", 2 * d_w);
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
