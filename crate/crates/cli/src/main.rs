use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use odpc::bench::Protocol;
use odpc::peer_gen::ProviderKind;
use odpc::OdpcError;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "odpc", version, about = "OOD detection with LLM peer classes and k-NN scoring")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file; flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct Global {
    /// JSON pipeline config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub protocol: Option<Protocol>,
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    /// Never contact a remote LLM; answer from the cache only.
    #[arg(long, global = true)]
    pub offline: bool,
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderArg>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub knn_k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Stub,
    HttpLlm,
}

impl From<ProviderArg> for ProviderKind {
    fn from(p: ProviderArg) -> Self {
        match p {
            ProviderArg::Stub => ProviderKind::Stub,
            ProviderArg::HttpLlm => ProviderKind::HttpLlm,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate peer classes for a class list; writes peers.json.
    GenPeers {
        /// Comma-separated class labels. Defaults to the known classes of the split.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        /// File with one class label per line, or a JSON array.
        #[arg(long, conflicts_with = "classes")]
        classes_file: Option<PathBuf>,
        /// Peers per class.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Write image and text feature files plus labels.json.
    Encode {
        /// Also encode the descriptions of these peers.
        #[arg(long)]
        peers: Option<PathBuf>,
    },
    /// Train the projection head for one seed; writes head.ckpt, loss_history.csv and bank.bin.
    Train {
        /// Use these peers instead of querying the provider.
        #[arg(long)]
        peers: Option<PathBuf>,
    },
    /// Run the benchmark over seeded repeats; writes results.csv.
    Eval,
    /// Render results.csv as table.md.
    Report {
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// 2-D PCA of test embeddings; writes proj.csv.
    Project {
        /// Head checkpoint; defaults to head.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Project encoder features instead of head embeddings.
        #[arg(long)]
        raw: bool,
    },
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn report_error(kind: &str, msg: &str) {
    let msg = serde_json::to_string(msg).unwrap_or_else(|_| "\"?\"".into());
    eprintln!("error: kind={kind} msg={msg}");
}

fn exit_code(e: &OdpcError) -> u8 {
    match e {
        OdpcError::Config(_) | OdpcError::NotFound(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            report_error("usage", text.lines().next().unwrap_or("").trim_start_matches("error: "));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match cli.command {
        Command::GenPeers { classes, classes_file, n } => commands::gen_peers(&cli.global, classes, classes_file, n),
        Command::Encode { peers } => commands::encode(&cli.global, peers),
        Command::Train { peers } => commands::train(&cli.global, peers),
        Command::Eval => commands::eval(&cli.global),
        Command::Report { results } => commands::report(&cli.global, results),
        Command::Project { checkpoint, raw } => commands::project(&cli.global, checkpoint, raw),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::from(exit_code(&e))
        }
    }
}
