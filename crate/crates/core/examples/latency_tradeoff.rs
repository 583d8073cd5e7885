//! Tabulates the lookahead each right-context setting adds, per position in
//! a chunk.
//!
//! ```text
//! cargo run --example latency_tradeoff
//! ```

use zipstream::stream::added_latency_ms;
use zipstream::{emission_deadline, LeftContext, MaskSpec};

fn main() -> zipstream::Result<()> {
    println!("chunk  rc   first-frame  last-frame  mean (ms)");
    for chunk in [16, 32, 64] {
        for rc in [0, 32, 64, 128, 256] {
            let spec = MaskSpec::new(chunk, LeftContext::Frames(128), rc)?;
            let lat: Vec<u64> = (0..chunk).map(|t| added_latency_ms(t, &spec)).collect();
            let mean = lat.iter().sum::<u64>() as f64 / chunk as f64;
            println!(
                "{chunk:>5} {rc:>4} {:>12} {:>11} {mean:>10.0}",
                lat[0],
                lat[chunk - 1]
            );
        }
    }

    let spec = MaskSpec::new(32, LeftContext::Frames(128), 64)?;
    println!("\n{spec}: frame t can be emitted once this many frames arrived");
    for t in [0, 31, 32, 63, 64] {
        println!("  t={t:>2} -> {}", emission_deadline(t, &spec));
    }
    Ok(())
}
