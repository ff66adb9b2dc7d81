use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use jointmirror::engine::Variant;
use jointmirror_cli::{parse_scheme, run, BandwidthFlag, CliError, Mode, RunManifest};

/// Joint mirror multiple testing for simultaneous signals across experiments.
#[derive(Debug, Parser)]
#[command(name = "jm", version)]
struct Args {
    /// Delimited m x K matrix (comma or tab, optional header row).
    #[arg(long)]
    input: Option<PathBuf>,

    /// pvalue or zvalue.
    #[arg(long, default_value = "pvalue")]
    mode: String,

    /// max, product or empty.
    #[arg(long, default_value = "product")]
    variant: String,

    /// Target FDR level in (0, 1).
    #[arg(long, default_value_t = 0.1)]
    q: f64,

    /// Masking scheme alpha,lambda,nu.
    #[arg(long, default_value = "0.5,0.5,1")]
    scheme: String,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// silverman, or fixed: followed by row-major K*K entries.
    #[arg(long, default_value = "silverman")]
    bandwidth: String,

    #[arg(long, default_value = "jm-out")]
    out_dir: PathBuf,

    /// Run a replication study on a generator preset, e.g.
    /// replicability:k=4,pi1=0.03,pi0=0.8,w0=1,b=100.
    #[arg(long)]
    simulate: Option<String>,

    #[arg(long, default_value_t = 100)]
    reps: usize,

    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn manifest(args: Args) -> Result<RunManifest, CliError> {
    let scheme = parse_scheme(&args.scheme)?;
    Ok(RunManifest {
        input: args.input,
        mode: args.mode.parse::<Mode>()?,
        variant: args.variant.parse::<Variant>()?,
        q: args.q,
        scheme: (scheme.alpha_m(), scheme.lambda(), scheme.nu()),
        seed: args.seed,
        bandwidth: args.bandwidth.parse::<BandwidthFlag>()?,
        out_dir: args.out_dir,
        simulate: args.simulate,
        reps: args.reps,
        threads: args.threads,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("JM_LOG", "warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match manifest(args).and_then(|m| run(&m)) {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("jm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
