// SPDX-License-Identifier: MIT OR Apache-2.0

//! Caches per-layer latents and reloads them from text and binary files.

use concept_layers::fixtures::StandardFixture;
use concept_layers::store::LatentStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = StandardFixture::default();
    let texts: Vec<(String, &str)> = f
        .corpus
        .iter()
        .take(5)
        .enumerate()
        .map(|(i, t)| (format!("doc{i}"), t.as_str()))
        .collect();
    let store =
        LatentStore::from_encoder(&f.encoder, texts.iter().map(|(id, t)| (id.as_str(), *t)))?;

    let dir = std::env::temp_dir().join("concept-layers-store");
    std::fs::create_dir_all(&dir)?;
    let text_path = dir.join("latents.txt");
    store.save_text(&text_path)?;
    let exact = LatentStore::load_text(&text_path)?;
    println!("text round trip exact: {}", exact == store);

    let (index, data) = (dir.join("latents.idx"), dir.join("latents.f32"));
    store.save_binary(&index, &data)?;
    let narrowed = LatentStore::load_binary(&index, &data)?;
    let worst = store
        .ids()
        .flat_map(|id| store.get(id).unwrap().iter().zip(narrowed.get(id).unwrap()))
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    println!(
        "binary round trip: {} entries, worst f32 error {worst:.2e}",
        narrowed.len()
    );
    Ok(())
}
