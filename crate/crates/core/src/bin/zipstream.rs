use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use zipstream::bench::{load_testset, run_concurrent, synth_testset, BenchConfig, BenchReport};
use zipstream::encoder::{zsf, FeatureSequence, HiddenSequence, OUTPUT_RATE_HZ};
use zipstream::mask::{build_mask, downsample_mask};
use zipstream::sched::sample_schedule;
use zipstream::serve::{run_server, ClientOptions, ServerConfig, SessionLimits};
use zipstream::stream::{added_latency_ms, StreamState};
use zipstream::{Encoder, EncoderConfig, LeftContext, MaskSpec};

#[derive(Parser)]
#[command(
    name = "zipstream",
    version,
    about = "Chunked right-context streaming encoder toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attention mask tools.
    Mask {
        #[command(subcommand)]
        command: MaskCommand,
    },
    /// Stream a feature file through the encoder and write the 25 Hz output.
    Simulate(SimulateArgs),
    /// Training schedule tools.
    Sched {
        #[command(subcommand)]
        command: SchedCommand,
    },
    /// Run the websocket server.
    Serve(ServeArgs),
    /// Run a concurrency benchmark against a server.
    Bench(BenchArgs),
    /// Write a synthetic feature testset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long, default_value_t = 32)]
    chunk: usize,
    /// Frames, or "full".
    #[arg(long, default_value = "full")]
    left: LeftContext,
    #[arg(long, default_value_t = 0)]
    rc: usize,
}

impl MaskArgs {
    fn spec(&self) -> Result<MaskSpec> {
        Ok(MaskSpec::new(self.chunk, self.left, self.rc)?)
    }
}

#[derive(Subcommand)]
enum MaskCommand {
    /// Print the mask as rows of 0/1.
    Dump {
        #[arg(long)]
        len: usize,
        #[command(flatten)]
        mask: MaskArgs,
        /// Print the mask of a stack downsampled by this factor; `len` stays in base frames.
        #[arg(long, default_value_t = 1)]
        factor: usize,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    mask: MaskArgs,
    #[arg(long)]
    out: PathBuf,
    /// Encoder config file; the built-in toy model when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SchedCommand {
    /// Print a sampled (chunk, rc) schedule as CSV.
    Dump {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        batches: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,64,128,256")]
        rc_set: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        chunk_set: Vec<usize>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "ZIPSTREAM_PORT", default_value_t = 8765)]
    port: u16,
    #[arg(long, env = "ZIPSTREAM_MODEL")]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    max_sessions: usize,
    /// Finalize after 800 ms below this mean-square PCM energy.
    #[arg(long)]
    silence_threshold: Option<f32>,
    #[arg(long, default_value = "0.0.0.0")]
    host: String,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    server: String,
    #[arg(long, default_value_t = 1)]
    concurrency: usize,
    #[arg(long, default_value_t = 0)]
    rc: usize,
    #[arg(long, default_value_t = 32)]
    chunk: usize,
    #[arg(long, default_value = "128")]
    left: LeftContext,
    #[arg(long)]
    testset: PathBuf,
    /// JSON report; a CSV with the same columns is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    timeout_s: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 60.0)]
    mean_s: f64,
    #[arg(long)]
    out: PathBuf,
}

fn load_encoder(path: Option<&PathBuf>) -> Result<Encoder> {
    let cfg = match path {
        Some(p) => EncoderConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => EncoderConfig::default(),
    };
    Ok(Encoder::new(cfg)?)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let spec = args.mask.spec()?;
    let encoder = Arc::new(load_encoder(args.model.as_ref())?);
    let features = FeatureSequence::at_input_rate(zsf::read(&args.features)?)?;
    let mut stream = StreamState::open(Arc::clone(&encoder), spec)?;
    let mut base = Vec::new();
    let mut pushes = 0;
    for start in (0..features.len()).step_by(50) {
        let rows: Vec<&[f32]> = features.frames().row_iter().skip(start).take(50).collect();
        let part = FeatureSequence::at_input_rate(zipstream::Matrix::from_rows(&rows)?)?;
        let e = stream.push(&part)?;
        pushes += 1;
        base.extend_from_slice(e.hidden.frames().as_slice());
    }
    let e = stream.finalize()?;
    base.extend_from_slice(e.hidden.frames().as_slice());
    let dim = encoder.output_dim();
    let rows = base.len() / dim;
    let out = HiddenSequence::new(zipstream::Matrix::from_vec(rows, dim, base)?, 50.0).pool_pairs();
    zsf::write(&args.out, out.frames())?;
    let worst = (0..rows)
        .map(|t| added_latency_ms(t, &spec))
        .max()
        .unwrap_or(0);
    println!(
        "{} input frames, {pushes} pushes, {} encoder frames, {} output frames at {OUTPUT_RATE_HZ} Hz, worst added latency {worst} ms",
        features.len(),
        rows,
        out.len()
    );
    Ok(())
}

async fn serve(args: ServeArgs) -> Result<()> {
    let encoder = Arc::new(load_encoder(args.model.as_ref())?);
    let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let cfg = ServerConfig {
        max_sessions: args.max_sessions,
        limits: SessionLimits {
            silence_threshold: args.silence_threshold,
            ..SessionLimits::default()
        },
    };
    run_server(listener, encoder, cfg).await?;
    Ok(())
}

async fn bench(args: BenchArgs) -> Result<()> {
    let testset = load_testset(&args.testset)?;
    if testset.is_empty() {
        bail!("no .zsf files in {}", args.testset.display());
    }
    let cfg = BenchConfig {
        concurrency: args.concurrency,
        chunk: args.chunk,
        rc: args.rc,
        left: args.left,
        client: ClientOptions {
            timeout: std::time::Duration::from_secs_f64(args.timeout_s),
            ..ClientOptions::default()
        },
    };
    let run = run_concurrent(&args.server, &testset, cfg).await?;
    for f in &run.failures {
        eprintln!("call {} failed: {}", f.call_id, f.error);
    }
    std::fs::write(&args.out, run.report.to_json())?;
    std::fs::write(
        args.out.with_extension("csv"),
        BenchReport::to_csv(&[run.report.clone()]),
    )?;
    println!("{}", run.report.to_json());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Mask {
            command: MaskCommand::Dump { len, mask, factor },
        } => {
            let spec = mask.spec()?;
            let n = len.div_ceil(factor.max(1));
            let m = if factor == 1 {
                build_mask(len, len, &spec)
            } else {
                downsample_mask(&spec, factor, n, n)?
            };
            print!("{m}");
        }
        Command::Simulate(args) => simulate(args)?,
        Command::Sched {
            command:
                SchedCommand::Dump {
                    seed,
                    batches,
                    rc_set,
                    chunk_set,
                    json,
                },
        } => {
            let s = sample_schedule(seed, batches, &rc_set, &chunk_set)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&s.entries)?);
            } else {
                print!("{}", s.to_csv());
            }
        }
        Command::Serve(args) => tokio::runtime::Runtime::new()?.block_on(serve(args))?,
        Command::Bench(args) => tokio::runtime::Runtime::new()?.block_on(bench(args))?,
        Command::Synth(args) => {
            let paths = synth_testset(args.seed, args.n, args.mean_s, &args.out)?;
            println!("wrote {} calls to {}", paths.len(), args.out.display());
        }
    }
    Ok(())
}
