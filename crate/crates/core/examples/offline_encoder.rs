//! Runs the toy encoder over synthetic features in one shot and prints the
//! output shape plus a stub transcript.
//!
//! ```text
//! cargo run --example offline_encoder
//! ```

use zipstream::bench::synth_calls;
use zipstream::serve::decode_stub;
use zipstream::{Encoder, EncoderConfig, FeatureSequence, LeftContext, MaskSpec};

fn main() -> zipstream::Result<()> {
    let cfg = EncoderConfig::default();
    println!("{}", cfg.to_text());
    let encoder = Encoder::new(cfg)?;

    let call = synth_calls(1, 1, 4.0)?.remove(0);
    let features = FeatureSequence::at_input_rate(call.features)?;
    println!(
        "input: {} frames x {} bins ({:.2} s)",
        features.len(),
        features.dim(),
        features.duration_s()
    );

    for spec in [
        MaskSpec::full_context(features.len()),
        MaskSpec::new(32, LeftContext::Frames(128), 64)?,
        MaskSpec::new(32, LeftContext::Frames(128), 0)?,
    ] {
        let out = encoder.encoder_forward(&features, &spec)?;
        let transcript = decode_stub(&out, encoder.config().seed);
        println!(
            "{spec}: {} x {} at {} Hz, {} tokens, first {:?}",
            out.len(),
            out.dim(),
            out.frame_rate_hz(),
            transcript.len(),
            &transcript.tokens[..transcript.len().min(8)]
        );
    }
    Ok(())
}
