// SPDX-License-Identifier: MIT OR Apache-2.0

//! Picks concepts from a small ontology by variance gain over a corpus.

use concept_layers::fixtures::{StandardFixture, NEWS_ONTOLOGY};
use concept_layers::search::{
    conceptual_search, ContextCorpus, GainScorer, OntologyGraph, PrefixEmbedder, ThresholdScheduler,
};

fn main() -> concept_layers::error::Result<()> {
    let f = StandardFixture::default();
    let graph = OntologyGraph::parse_edges(NEWS_ONTOLOGY, "news ontology")?;
    let slice = f.encoder.slice_at(2)?;
    let corpus = ContextCorpus::encode(&slice, f.corpus.clone())?;
    let embedder = PrefixEmbedder(&slice);
    let scorer = GainScorer::new(&corpus, &graph, &embedder);

    let mut scheduler = ThresholdScheduler::linear(0.0, 0.01)?;
    let outcome = conceptual_search(&scorer, &graph.roots(), &mut scheduler, 10)?;
    for e in &outcome.expansions {
        println!(
            "round {:>2}: expand {:<9} avg gain {:+.5} adds {:?}",
            e.round, e.concept, e.avg_gain, e.added
        );
    }
    println!("selected: {}", outcome.concepts.join(", "));

    let set = outcome.to_concept_set(&slice, &graph)?;
    println!("{} concepts ready for a Concept Layer", set.len());
    Ok(())
}
