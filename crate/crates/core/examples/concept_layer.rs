// SPDX-License-Identifier: MIT OR Apache-2.0

//! Builds a Concept Layer from keyword concepts and interprets a sentence.

use concept_layers::concept::ConceptSource;
use concept_layers::fixtures::StandardFixture;
use concept_layers::layer::ConceptLayer;

fn main() -> concept_layers::error::Result<()> {
    let f = StandardFixture::default();
    let slice = f.encoder.slice_at(f.slice_index)?;
    let layer = ConceptLayer::embed_and_build(
        &slice,
        f.slice_index,
        f.concept_entries(),
        ConceptSource::Manual,
    )?;
    println!(
        "{} concepts over {} dims, condition number {:.3e}",
        layer.concept_count(),
        layer.hidden_dim(),
        layer.condition_number()
    );

    let text = "markets rallied as the bank reported profit";
    let latent = slice.prefix(text);
    let cv = layer.project(&latent)?;
    println!("top concepts for '{text}':");
    for (id, score) in layer.interpret(&cv, 5)? {
        println!("  {id:<10} {score:+.4}");
    }

    let back = layer.reconstruct(&cv)?;
    println!(
        "reconstruction error {:.3e} (relative to norm {:.4})",
        (&back - &latent).norm(),
        latent.norm()
    );
    Ok(())
}
