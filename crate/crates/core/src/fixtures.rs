// SPDX-License-Identifier: MIT OR Apache-2.0

//! Desk-scale fixtures shared by the examples, the CLI demo files and the
//! acceptance suite.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::concept::ConceptSource;
use crate::corpus::corpus_to_text;
use crate::encoder::LayeredEncoder;
use crate::error::{Error, Result};
use crate::eval::{labeled_to_text, ClassificationHead, LabeledText, TopicTask};
use crate::layer::{ConceptLayer, InterventionSpec};
use crate::model::ConceptualizedModel;

/// The standard welding fixture: a 16-dim, 4-layer toy encoder, eight
/// topic-keyword concepts at slice 3, a 200-text welding corpus and
/// labelled splits of the synthetic news task.
#[derive(Debug, Clone)]
pub struct StandardFixture {
    pub encoder: LayeredEncoder,
    pub task: TopicTask,
    pub slice_index: usize,
    pub concepts: Vec<(String, String)>,
    pub corpus: Vec<String>,
    pub train: Vec<LabeledText>,
    pub validation: Vec<LabeledText>,
    pub test: Vec<LabeledText>,
}

impl StandardFixture {
    pub fn new(seed: u64) -> Self {
        let encoder = LayeredEncoder::toy(16, 4, seed).expect("valid toy config");
        let task = TopicTask::news();
        // one concept per topic keyword
        let concepts = task
            .classes
            .iter()
            .flat_map(|c| c.keywords.iter())
            .map(|k| (k.clone(), k.clone()))
            .collect();
        let corpus = task
            .generate(200, seed.wrapping_add(1))
            .into_iter()
            .map(|t| t.text)
            .collect();
        Self {
            encoder,
            slice_index: 3,
            concepts,
            corpus,
            train: task.generate(400, seed.wrapping_add(2)),
            validation: task.generate(100, seed.wrapping_add(3)),
            test: task.generate(300, seed.wrapping_add(4)),
            task,
        }
    }

    pub fn concept_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.concepts.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// Writes the fixture as command-line input files into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<DemoFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let config = self.encoder.config();
        let files = DemoFiles {
            encoder_config: dir.join("encoder.cfg"),
            concepts: dir.join("concepts.tsv"),
            ontology: dir.join("ontology.tsv"),
            corpus: dir.join("corpus.txt"),
            train: dir.join("train.tsv"),
            validation: dir.join("validation.tsv"),
            test: dir.join("test.tsv"),
        };
        let mut concepts = String::new();
        for (id, tau) in self.concept_entries() {
            concepts.push_str(&format!("{id}\t{tau}\n"));
        }
        for (path, contents) in [
            (
                &files.encoder_config,
                format!(
                    "hidden_dim={}\nlayer_count={}\nseed={}\n",
                    config.hidden_dim, config.layer_count, config.seed
                ),
            ),
            (&files.concepts, concepts),
            (&files.ontology, NEWS_ONTOLOGY.to_owned()),
            (&files.corpus, corpus_to_text(&self.corpus)),
            (&files.train, labeled_to_text(&self.train)),
            (&files.validation, labeled_to_text(&self.validation)),
            (&files.test, labeled_to_text(&self.test)),
        ] {
            std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
        }
        Ok(files)
    }
}

/// Paths written by [`StandardFixture::write_files`].
#[derive(Debug, Clone)]
pub struct DemoFiles {
    pub encoder_config: PathBuf,
    pub concepts: PathBuf,
    pub ontology: PathBuf,
    pub corpus: PathBuf,
    pub train: PathBuf,
    pub validation: PathBuf,
    pub test: PathBuf,
}

impl Default for StandardFixture {
    fn default() -> Self {
        Self::new(3)
    }
}

/// A two-class head whose decision on one text hinges on one concept.
///
/// With `y1` the model output for `text` and `y0` the output with
/// `concept` zeroed at the Concept Layer, the head scores
/// `w · (y - m)` with `w = y1 - y0` and `m = (y0 + y1) / 2`: class 1 for
/// `y1`, class 0 for `y0`.
#[derive(Debug, Clone)]
pub struct InterventionFixture {
    pub model: ConceptualizedModel,
    pub head: ClassificationHead,
    pub text: String,
    pub concept: String,
}

impl InterventionFixture {
    pub fn new(seed: u64) -> Result<Self> {
        let base = StandardFixture::new(seed);
        let slice = base.encoder.slice_at(base.slice_index)?;
        let layer = ConceptLayer::embed_and_build(
            &slice,
            base.slice_index,
            base.concept_entries(),
            ConceptSource::Manual,
        )?;
        let model = ConceptualizedModel::with_layer(base.encoder.clone(), layer)?;
        let concept = "galaxy".to_owned();
        let text = "galaxy theory galaxy report".to_owned();
        let y1 = model.output(&text, None)?;
        let y0 =
            model.output_intervening_at(&text, 0, &InterventionSpec::new().with(&concept, 0.0)?)?;
        let w = &y1 - &y0;
        let w2 = w.norm_squared();
        if w2 == 0.0 {
            return Err(Error::DegenerateConcept(concept));
        }
        let h = y1.len();
        let head = ClassificationHead {
            mean: (&y0 + &y1) / 2.0,
            scale: DVector::from_element(h, 1.0),
            w1: DMatrix::from_row_slice(1, h, (w / w2).as_slice()),
            b1: DVector::zeros(1),
            w2: DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]),
            b2: DVector::zeros(2),
        };
        Ok(Self {
            model,
            head,
            text,
            concept,
        })
    }
}

/// A small "type-of" ontology over the news topics, as `parent<TAB>child` lines.
pub const NEWS_ONTOLOGY: &str = "\
topic\tsports
topic\tbusiness
topic\tscience
topic\tworld
sports\tmatch
sports\tcoach
sports\tstadium
business\tmarket
business\tprofit
business\tbank
market\tstock
science\tgalaxy
science\ttheory
science\tatom
galaxy\tstar
world\telection
world\ttreaty
world\tborder
";
