//! Feeds the same utterance to the streaming encoder in 500 ms pieces and
//! compares every emitted frame to the offline pass.
//!
//! ```text
//! cargo run --example streaming_equivalence
//! ```

use std::sync::Arc;

use zipstream::bench::synth_calls;
use zipstream::{Encoder, EncoderConfig, FeatureSequence, LeftContext, MaskSpec, Matrix, StreamState};

fn main() -> zipstream::Result<()> {
    let encoder = Arc::new(Encoder::new(EncoderConfig::default())?);
    let call = synth_calls(2, 1, 3.0)?.remove(0);
    let features = FeatureSequence::at_input_rate(call.features)?;

    for spec in [
        MaskSpec::new(16, LeftContext::Frames(64), 0)?,
        MaskSpec::new(32, LeftContext::Frames(128), 64)?,
        MaskSpec::new(64, LeftContext::Full, 32)?,
    ] {
        let offline = encoder.forward_base(&features, &spec)?;
        let mut stream = StreamState::open(Arc::clone(&encoder), spec)?;
        let mut worst = 0.0f32;
        println!("{spec}");
        for start in (0..features.len()).step_by(50) {
            let rows: Vec<&[f32]> = features.frames().row_iter().skip(start).take(50).collect();
            let e = stream.push(&FeatureSequence::at_input_rate(Matrix::from_rows(&rows)?)?)?;
            for (i, t) in e.frames().enumerate() {
                for (a, b) in e.hidden.frames().row(i).iter().zip(offline.frames().row(t)) {
                    worst = worst.max((a - b).abs());
                }
            }
            println!(
                "  received {:>3} frames, emitted {:?}, {} rows cached",
                stream.frames_received(),
                e.frames(),
                stream.retained_rows()
            );
        }
        let e = stream.finalize()?;
        println!("  finalize emitted {:?}; max |streamed - offline| = {worst:e}", e.frames());
    }
    Ok(())
}
