// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scales one concept to zero and watches the classification change.

use concept_layers::fixtures::InterventionFixture;
use concept_layers::layer::InterventionSpec;

fn main() -> concept_layers::error::Result<()> {
    let f = InterventionFixture::new(0)?;
    let layer = &f.model.concept_layers()[0];

    let before = f.model.conceptual_vector(&f.text, 0)?;
    let p0 = f.head.predict_proba(&f.model.output(&f.text, None)?)?;
    println!(
        "'{}' -> class {}, p = {:.4?}",
        f.text,
        f.head.predict(&f.model.output(&f.text, None)?)?,
        p0.as_slice()
    );

    for factor in [2.0, 0.5, 0.0] {
        let spec = InterventionSpec::new().with(&f.concept, factor)?;
        let after = layer.intervene(&before, &spec)?;
        let i = layer
            .concepts()
            .index_of(&f.concept)
            .expect("fixture concept");
        let y = f.model.output(&f.text, Some(&spec))?;
        println!(
            "{} x{factor}: score {:+.4} -> {:+.4}, class {}",
            f.concept,
            before.cosines()?[i],
            after.cosines()?[i],
            f.head.predict(&y)?
        );
    }
    Ok(())
}
