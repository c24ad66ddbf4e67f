// SPDX-License-Identifier: MIT OR Apache-2.0

//! Runs the toy encoder and splits it into prefix and suffix at every slice.

use concept_layers::encoder::LayeredEncoder;

fn main() -> concept_layers::error::Result<()> {
    let encoder = LayeredEncoder::toy(8, 4, 42)?;
    let text = "the coach praised the stadium crowd";
    let layers = encoder.forward(text);
    for (i, l) in layers.iter().enumerate() {
        println!("layer {i}: norm {:.4}", l.norm());
    }

    let output = encoder.output(text);
    for k in 1..encoder.layer_count() {
        let slice = encoder.slice_at(k)?;
        let latent = slice.prefix(text);
        let rejoined = slice.suffix(&latent)?;
        println!(
            "slice {k}: prefix norm {:.4}, suffix matches forward: {}",
            latent.norm(),
            rejoined == output
        );
    }
    Ok(())
}
