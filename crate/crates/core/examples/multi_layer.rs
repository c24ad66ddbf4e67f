// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stacks two Concept Layers and welds the model around both.

use concept_layers::concept::ConceptSource;
use concept_layers::fixtures::StandardFixture;
use concept_layers::layer::ConceptLayer;
use concept_layers::model::ConceptualizedModel;
use concept_layers::weld::{weld, WeldConfig};

fn main() -> concept_layers::error::Result<()> {
    let f = StandardFixture::default();
    let first: Vec<(&str, &str)> = f.concept_entries().step_by(2).collect();
    let second: Vec<(&str, &str)> = f.concept_entries().skip(1).step_by(2).collect();

    let slice = f.encoder.slice_at(2)?;
    let cl1 = ConceptLayer::embed_and_build(&slice, 2, first, ConceptSource::Manual)?;
    let mut model = ConceptualizedModel::with_layer(f.encoder.clone(), cl1)?;

    // a second layer must sit strictly deeper than the first
    if let Err(e) = model
        .clone()
        .compose_multilayer(2, second.clone(), ConceptSource::Manual)
    {
        println!("rejected: {e}");
    }
    model.compose_multilayer(3, second, ConceptSource::Manual)?;
    let report = weld(&f.encoder, &mut model, &WeldConfig::default(), &f.corpus)?;
    println!(
        "weld loss {:.4e} -> {:.4e}",
        report.initial_loss,
        report.final_loss()
    );

    let text = "the star of the match thanked the coach";
    for (pos, layer) in model.concept_layers().iter().enumerate() {
        let cv = model.conceptual_vector(text, pos)?;
        let top = layer.interpret(&cv, 3)?;
        println!("layer at slice {}: {top:?}", layer.slice_index());
    }
    Ok(())
}
