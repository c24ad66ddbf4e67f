// SPDX-License-Identifier: MIT OR Apache-2.0

//! Writes the standard fixture as input files for the `conceptual` binary.
//!
//! ```text
//! cargo run --example demo_files -- demo
//! ```

use std::path::PathBuf;

use concept_layers::fixtures::StandardFixture;

fn main() -> concept_layers::error::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("demo"));
    let files = StandardFixture::default().write_files(&dir)?;
    for p in [
        &files.encoder_config,
        &files.concepts,
        &files.ontology,
        &files.corpus,
        &files.train,
        &files.validation,
        &files.test,
    ] {
        println!("{}", p.display());
    }
    Ok(())
}
