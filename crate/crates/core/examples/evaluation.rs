// SPDX-License-Identifier: MIT OR Apache-2.0

//! Trains a head on the original encoder and reuses it on a welded model.

use concept_layers::concept::ConceptSource;
use concept_layers::eval::{backward_compat_eval, evaluate_original, train_head, HeadConfig};
use concept_layers::fixtures::StandardFixture;
use concept_layers::layer::ConceptLayer;
use concept_layers::model::ConceptualizedModel;
use concept_layers::weld::{weld, WeldConfig};

fn main() -> concept_layers::error::Result<()> {
    let f = StandardFixture::default();
    let outputs = |data: &[concept_layers::eval::LabeledText]| {
        let xs: Vec<_> = data.iter().map(|t| f.encoder.output(&t.text)).collect();
        let ys: Vec<_> = data.iter().map(|t| t.label).collect();
        (xs, ys)
    };
    let (xs, ys) = outputs(&f.train);
    let (vx, vy) = outputs(&f.validation);
    let head = train_head(&xs, &ys, &vx, &vy, &HeadConfig::default())?;
    let original = evaluate_original(&head, &f.encoder, &f.test)?;
    println!("original:\n{}", original.report.to_key_value());

    let slice = f.encoder.slice_at(f.slice_index)?;
    let layer = ConceptLayer::embed_and_build(
        &slice,
        f.slice_index,
        f.concept_entries(),
        ConceptSource::Manual,
    )?;
    let mut model = ConceptualizedModel::with_layer(f.encoder.clone(), layer)?;
    let unwelded = backward_compat_eval(&head, &f.encoder, &model, &f.test)?;
    println!(
        "conceptualized, before welding:\n{}",
        unwelded.report.to_key_value()
    );

    weld(&f.encoder, &mut model, &WeldConfig::default(), &f.corpus)?;
    let welded = backward_compat_eval(&head, &f.encoder, &model, &f.test)?;
    println!("conceptualized, welded:\n{}", welded.report.to_key_value());
    Ok(())
}
