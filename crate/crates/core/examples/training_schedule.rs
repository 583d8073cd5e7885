//! Samples the per-batch (chunk, rc) settings used for dynamic
//! right-context training and checks how evenly rc values come out.
//!
//! ```text
//! cargo run --example training_schedule
//! ```

use zipstream::sched::{fixed_schedule, sample_schedule};

fn main() -> zipstream::Result<()> {
    let rc_set = [0, 64, 128, 256];
    let s = sample_schedule(1, 8, &rc_set, &[16, 32, 64])?;
    print!("{}", s.to_csv());

    let big = sample_schedule(7, 10_000, &rc_set, &[16, 32, 64])?;
    for rc in rc_set {
        let n = big.entries.iter().filter(|e| e.rc == rc).count();
        println!("rc {rc:>3}: {:.2}%", 100.0 * n as f64 / big.entries.len() as f64);
    }

    let fixed = fixed_schedule(32, 64, 3)?;
    print!("\nfixed:\n{}", fixed.to_csv());
    Ok(())
}
