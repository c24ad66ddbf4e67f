// SPDX-License-Identifier: MIT OR Apache-2.0

//! Welds a lossy Concept Layer into the encoder and reports the loss curve.

use concept_layers::concept::ConceptSource;
use concept_layers::fixtures::StandardFixture;
use concept_layers::layer::ConceptLayer;
use concept_layers::model::ConceptualizedModel;
use concept_layers::weld::{weld, WeldConfig};

fn main() -> concept_layers::error::Result<()> {
    let f = StandardFixture::default();
    let slice = f.encoder.slice_at(f.slice_index)?;
    let layer = ConceptLayer::embed_and_build(
        &slice,
        f.slice_index,
        f.concept_entries(),
        ConceptSource::Manual,
    )?;
    let mut model = ConceptualizedModel::with_layer(f.encoder.clone(), layer)?;

    let config = WeldConfig {
        epochs: 20,
        ..WeldConfig::default()
    };
    let report = weld(&f.encoder, &mut model, &config, &f.corpus)?;
    println!("initial loss {:.4e}", report.initial_loss);
    for (i, loss) in report.epoch_losses.iter().enumerate().step_by(5) {
        println!("epoch {:>2}: {loss:.4e}", i + 1);
    }
    println!("final loss {:.4e}", report.final_loss());
    Ok(())
}
