//! Starts the websocket server in-process, streams a small synthetic testset
//! through it with concurrent clients and prints the benchmark report.
//!
//! ```text
//! cargo run --example serve_and_bench
//! ```

use std::sync::Arc;
use std::time::Duration;

use zipstream::bench::{run_concurrent, synth_calls, BenchConfig, BenchReport};
use zipstream::serve::{spawn_server, ClientOptions, ServerConfig};
use zipstream::{Encoder, EncoderConfig, LeftContext};

#[tokio::main]
async fn main() -> zipstream::Result<()> {
    let encoder = Arc::new(Encoder::new(EncoderConfig::default())?);
    let server = spawn_server("127.0.0.1:0", encoder, ServerConfig::default()).await?;
    println!("serving on ws://{}/", server.addr());

    let calls = synth_calls(3, 8, 2.0)?;
    let mut reports = Vec::new();
    for rc in [0, 64] {
        let cfg = BenchConfig {
            concurrency: 4,
            chunk: 32,
            rc,
            left: LeftContext::Frames(128),
            // 4x faster than real time to keep the example short
            client: ClientOptions {
                pacing: Duration::from_millis(125),
                ..ClientOptions::default()
            },
        };
        let run = run_concurrent(&server.addr().to_string(), &calls, cfg).await?;
        for (id, tokens) in run.tokens.iter().take(2) {
            println!("{id}: {} tokens", tokens.len());
        }
        reports.push(run.report);
    }
    print!("{}", BenchReport::to_csv(&reports));
    server.shutdown();
    Ok(())
}
