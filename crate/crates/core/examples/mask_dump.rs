//! Prints frame-level masks for a few chunk/left/right settings, then the
//! same mask seen by a stack running at a quarter of the frame rate.
//!
//! ```text
//! cargo run --example mask_dump
//! ```

use zipstream::{build_mask, downsample_mask, LeftContext, MaskSpec};

fn main() -> zipstream::Result<()> {
    let len = 12;
    for (chunk, left, rc) in [
        (4, LeftContext::Full, 0),
        (4, LeftContext::Frames(4), 0),
        (4, LeftContext::Frames(4), 2),
    ] {
        let spec = MaskSpec::new(chunk, left, rc)?;
        let m = build_mask(len, len, &spec);
        println!("{spec}: {} of {} cells visible", m.count_visible(), len * len);
        print!("{m}");
        println!();
    }

    let spec = MaskSpec::new(8, LeftContext::Frames(8), 4)?;
    let m = downsample_mask(&spec, 4, 8, 8)?;
    println!("{spec} at factor 4:");
    print!("{m}");
    Ok(())
}
