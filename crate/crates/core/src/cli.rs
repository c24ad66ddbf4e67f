// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `conceptual` command line.
//!
//! Each subcommand writes its artifacts into `--out` together with a
//! `run.json` manifest that the artifacts point back to, and prints the
//! written paths one per line. Exit codes: 0 success, 2 usage, 3 data
//! error, 4 numerical error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::concept::{parse_concepts_file, ConceptSource};
use crate::corpus::load_corpus;
use crate::encoder::{EncoderConfig, LayeredEncoder};
use crate::error::{Error, Result};
use crate::eval::{
    backward_compat_eval, evaluate, load_labeled, train_head, ClassificationHead, HeadConfig,
    LabeledText,
};
use crate::layer::{ConceptLayer, CONDITION_WARNING_THRESHOLD};
use crate::model::ConceptualizedModel;
use crate::search::{
    conceptual_search, ContextCorpus, GainScorer, OntologyGraph, PrefixEmbedder, ThresholdScheduler,
};
use crate::service::{self, ClassifyRequest, Intervention, ProjectRequest, ServiceModel};
use crate::weld::{weld, WeldConfig};

pub const RUN_MANIFEST_FILE: &str = "run.json";
pub const MODEL_FILE: &str = "model.json";

#[derive(Debug, Parser)]
#[command(name = "conceptual", version, about = "Concept Layers toolkit")]
pub struct Cli {
    /// Seed for every stochastic step (shuffling, head initialization).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select a concept set from an ontology by variance-guided search.
    Search(SearchArgs),
    /// Build a Concept Layer and write a conceptualized model.
    Build(BuildArgs),
    /// Weld a conceptualized model to its original encoder.
    Weld(WeldArgs),
    /// Evaluate a conceptualized model with a classification head.
    Eval(EvalArgs),
    /// Serve projection, classification and intervention over HTTP.
    Serve(ServeArgs),
    /// Print the conceptual vector of a text as JSON.
    Project(ProjectArgs),
    /// Classify a text, optionally with interventions, and print JSON.
    Classify(ClassifyArgs),
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Ontology edges, `parent<TAB>child` per line.
    #[arg(long)]
    pub ontology: PathBuf,
    /// Context corpus, one text per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub encoder_config: PathBuf,
    #[arg(long)]
    pub slice: usize,
    /// Optional `id<TAB>text` representations for ontology nodes.
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    /// Initial concepts (comma separated); defaults to the ontology roots.
    #[arg(long, value_delimiter = ',')]
    pub initial: Vec<String>,
    #[arg(long)]
    pub target_size: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub thr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub thr_step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub encoder_config: PathBuf,
    #[arg(long)]
    pub slice: usize,
    /// `id<TAB>text` lines, or bare ids.
    #[arg(long)]
    pub concepts: PathBuf,
    /// Existing conceptualized model to add a deeper layer to.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Recorded as the concept source.
    #[arg(long, default_value = "manual")]
    pub source: ConceptSource,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WeldArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Configuration of the original encoder.
    #[arg(long)]
    pub encoder_config: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// `key=value` welding configuration; flags below override it.
    #[arg(long)]
    pub weld_config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Trained head; required unless `--train` is given.
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Test split, `label<TAB>text` per line.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Original encoder; enables agreement and backward-compatibility numbers.
    #[arg(long)]
    pub encoder_config: Option<PathBuf>,
    /// Train a head on the original encoder from this split.
    #[arg(long, requires = "validation")]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    /// Class names, comma separated, in label order.
    #[arg(long, value_delimiter = ',')]
    pub class_names: Vec<String>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub text: String,
    /// `concept_id=factor`; repeatable.
    #[arg(long = "intervene", value_parser = parse_intervention)]
    pub interventions: Vec<Intervention>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

fn parse_intervention(s: &str) -> std::result::Result<Intervention, String> {
    let (id, factor) = s
        .split_once('=')
        .ok_or_else(|| format!("expected concept_id=factor, got '{s}'"))?;
    let factor = factor
        .trim()
        .parse()
        .map_err(|_| format!("invalid factor '{factor}'"))?;
    Ok(Intervention {
        concept_id: id.trim().to_owned(),
        factor,
    })
}

/// Provenance of one subcommand run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub parameters: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(subcommand: &str, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            seed,
            inputs: BTreeMap::new(),
            parameters: BTreeMap::new(),
        }
    }

    fn input(mut self, key: &str, path: &Path) -> Self {
        self.inputs.insert(key.into(), path.display().to_string());
        self
    }

    fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.insert(key.into(), value.to_string());
        self
    }

    /// Writes `run.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RUN_MANIFEST_FILE);
        write_file(&path, &serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_encoder(path: &Path) -> Result<LayeredEncoder> {
    LayeredEncoder::from_config(EncoderConfig::load(path)?)
}

fn read_concept_entries(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries = parse_concepts_file(&text, &path.display().to_string())?;
    if entries.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} lists no concepts",
            path.display()
        )));
    }
    Ok(entries)
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let printed = match &cli.command {
        Command::Search(a) => cmd_search(a, cli.seed)?,
        Command::Build(a) => cmd_build(a, cli.seed, err)?,
        Command::Weld(a) => cmd_weld(a, cli.seed)?,
        Command::Eval(a) => cmd_eval(a, cli.seed)?,
        Command::Serve(a) => return cmd_serve(a, err),
        Command::Project(a) => return cmd_project(a, out),
        Command::Classify(a) => return cmd_classify(a, out),
    };
    for p in printed {
        let _ = writeln!(out, "{}", p.display());
    }
    Ok(())
}

fn cmd_search(a: &SearchArgs, seed: u64) -> Result<Vec<PathBuf>> {
    let mut graph = OntologyGraph::load(&a.ontology)?;
    if let Some(path) = &a.concepts {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        graph.apply_taus(&text, &path.display().to_string())?;
    }
    let encoder = load_encoder(&a.encoder_config)?;
    let slice = encoder.slice_at(a.slice)?;
    let corpus = ContextCorpus::encode(&slice, load_corpus(&a.corpus)?)?;
    let embedder = PrefixEmbedder(&slice);
    let scorer = GainScorer::new(&corpus, &graph, &embedder);
    let initial: Vec<&str> = if a.initial.is_empty() {
        graph.roots()
    } else {
        a.initial.iter().map(String::as_str).collect()
    };
    let mut scheduler = ThresholdScheduler::linear(a.thr, a.thr_step)?;
    let outcome = conceptual_search(&scorer, &initial, &mut scheduler, a.target_size)?;

    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("search", seed)
        .input("ontology", &a.ontology)
        .input("corpus", &a.corpus)
        .input("encoder_config", &a.encoder_config)
        .param("slice", a.slice)
        .param("initial", initial.join(","))
        .param("target_size", a.target_size)
        .param("thr", a.thr)
        .param("thr_step", a.thr_step);
    if let Some(c) = &a.concepts {
        manifest = manifest.input("concepts", c);
    }
    let run = manifest.write(&a.out)?;

    let ids = a.out.join("concepts.txt");
    write_file(&ids, &outcome.concept_list())?;
    // the ids again with their representations, ready for `build`
    let tsv = a.out.join("concepts.tsv");
    let mut lines = String::new();
    for id in &outcome.concepts {
        lines.push_str(&format!("{id}\t{}\n", graph.tau_of(id)?));
    }
    write_file(&tsv, &lines)?;
    let json = a.out.join("search.json");
    let mut doc = serde_json::to_value(&outcome)?;
    doc["run_manifest"] = RUN_MANIFEST_FILE.into();
    write_file(&json, &serde_json::to_string_pretty(&doc)?)?;
    Ok(vec![ids, tsv, json, run])
}

fn cmd_build(a: &BuildArgs, seed: u64, err: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let encoder = load_encoder(&a.encoder_config)?;
    let entries = read_concept_entries(&a.concepts)?;
    let entries_ref = entries.iter().map(|(i, t)| (i.as_str(), t.as_str()));
    let model = match &a.model {
        Some(path) => {
            let mut model = ConceptualizedModel::load(path)?;
            if model.encoder().config() != encoder.config() {
                return Err(Error::InvalidConfig(format!(
                    "{} was not built from {}",
                    path.display(),
                    a.encoder_config.display()
                )));
            }
            model.compose_multilayer(a.slice, entries_ref, a.source)?;
            model
        }
        None => {
            let slice = encoder.slice_at(a.slice)?;
            let layer = ConceptLayer::embed_and_build(&slice, a.slice, entries_ref, a.source)?;
            ConceptualizedModel::with_layer(encoder.clone(), layer)?
        }
    };
    let newest = model
        .concept_layers()
        .last()
        .expect("one layer was installed");
    if newest.is_ill_conditioned() {
        let _ = writeln!(
            err,
            "warning: concept layer is ill-conditioned (condition number {:e} > {:e})",
            newest.condition_number(),
            CONDITION_WARNING_THRESHOLD
        );
    }

    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("build", seed)
        .input("encoder_config", &a.encoder_config)
        .input("concepts", &a.concepts)
        .param("slice", a.slice)
        .param("source", a.source);
    if let Some(m) = &a.model {
        manifest = manifest.input("model", m);
    }
    let run = manifest.write(&a.out)?;
    let mut written = model.save(&a.out.join(MODEL_FILE), Some(RUN_MANIFEST_FILE))?;
    written.push(run);
    Ok(written)
}

fn cmd_weld(a: &WeldArgs, seed: u64) -> Result<Vec<PathBuf>> {
    let original = load_encoder(&a.encoder_config)?;
    let mut model = ConceptualizedModel::load(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let mut config = match &a.weld_config {
        Some(p) => WeldConfig::load(p)?,
        None => WeldConfig::default(),
    };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(b) = a.batch_size {
        config.batch_size = b;
    }
    if let Some(lr) = a.lr {
        config.learning_rate = lr;
    }
    config.seed = seed;
    config.validate()?;
    let report = weld(&original, &mut model, &config, &corpus)?;

    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("weld", seed)
        .input("model", &a.model)
        .input("encoder_config", &a.encoder_config)
        .input("corpus", &a.corpus)
        .param("epochs", config.epochs)
        .param("batch_size", config.batch_size)
        .param("lr", config.learning_rate)
        .param("warmup_steps", config.warmup_steps)
        .param("weight_decay", config.weight_decay);
    if let Some(w) = &a.weld_config {
        manifest = manifest.input("weld_config", w);
    }
    let run = manifest.write(&a.out)?;
    let mut written = model.save(&a.out.join(MODEL_FILE), Some(RUN_MANIFEST_FILE))?;
    let report_path = a.out.join("weld_report.txt");
    write_file(
        &report_path,
        &format!("# run_manifest={RUN_MANIFEST_FILE}\n{}", report.to_text()),
    )?;
    written.push(report_path);
    written.push(run);
    Ok(written)
}

fn outputs(
    encoder: &LayeredEncoder,
    data: &[LabeledText],
) -> (Vec<nalgebra::DVector<f64>>, Vec<usize>) {
    (
        data.iter().map(|t| encoder.output(&t.text)).collect(),
        data.iter().map(|t| t.label).collect(),
    )
}

fn cmd_eval(a: &EvalArgs, seed: u64) -> Result<Vec<PathBuf>> {
    let model = ConceptualizedModel::load(&a.model)?;
    let test = load_labeled(&a.dataset)?;
    let original = a.encoder_config.as_deref().map(load_encoder).transpose()?;
    create_dir(&a.out)?;
    let mut written = Vec::new();

    let head = match (&a.train, &a.validation, &a.head) {
        (Some(train), Some(validation), _) => {
            let encoder = original.as_ref().unwrap_or(model.encoder());
            let (xs, ys) = outputs(encoder, &load_labeled(train)?);
            let (vx, vy) = outputs(encoder, &load_labeled(validation)?);
            let config = HeadConfig {
                seed,
                ..HeadConfig::default()
            };
            let head = train_head(&xs, &ys, &vx, &vy, &config)?;
            let path = a.out.join("head.json");
            head.save(&path)?;
            written.push(path);
            head
        }
        (_, _, Some(path)) => ClassificationHead::load(path)?,
        _ => {
            return Err(Error::InvalidConfig(
                "either --head or --train with --validation is required".into(),
            ))
        }
    };

    let evaluation = match &original {
        Some(original) => backward_compat_eval(&head, original, &model, &test)?,
        None => {
            let xs = test
                .iter()
                .map(|t| model.output(&t.text, None))
                .collect::<Result<Vec<_>>>()?;
            let ys: Vec<usize> = test.iter().map(|t| t.label).collect();
            evaluate(&head, &xs, &ys, None)?
        }
    };

    let mut manifest = RunManifest::new("eval", seed)
        .input("model", &a.model)
        .input("dataset", &a.dataset);
    for (key, path) in [
        ("head", &a.head),
        ("encoder_config", &a.encoder_config),
        ("train", &a.train),
        ("validation", &a.validation),
    ] {
        if let Some(p) = path {
            manifest = manifest.input(key, p);
        }
    }
    let run = manifest.write(&a.out)?;

    let kv = a.out.join("eval.txt");
    write_file(
        &kv,
        &format!(
            "run_manifest={RUN_MANIFEST_FILE}\n{}",
            evaluation.report.to_key_value()
        ),
    )?;
    let json = a.out.join("eval.json");
    let mut doc = serde_json::to_value(&evaluation.report)?;
    doc["run_manifest"] = RUN_MANIFEST_FILE.into();
    write_file(&json, &serde_json::to_string_pretty(&doc)?)?;
    let preds = a.out.join("predictions.tsv");
    write_file(&preds, &evaluation.predictions_dump())?;
    written.extend([kv, json, preds, run]);
    Ok(written)
}

fn service_model(model: &Path, head: &Path) -> Result<ServiceModel> {
    ServiceModel::new(
        ConceptualizedModel::load(model)?,
        ClassificationHead::load(head)?,
    )
}

fn cmd_serve(a: &ServeArgs, err: &mut dyn Write) -> Result<()> {
    let mut model = service_model(&a.model, &a.head)?;
    if !a.class_names.is_empty() {
        model = model.with_class_names(a.class_names.clone())?;
    }
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, a.port));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    let _ = writeln!(err, "listening on http://{addr}");
    runtime.block_on(service::serve(
        service::ServiceState::loaded(model),
        addr,
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
    ))
}

fn cmd_project(a: &ProjectArgs, out: &mut dyn Write) -> Result<()> {
    let model = ConceptualizedModel::load(&a.model)?;
    let n = model.concept_layers().len();
    if n == 0 {
        return Err(Error::InvalidConfig("model has no concept layer".into()));
    }
    let response = service::project(
        &model,
        n - 1,
        &ProjectRequest {
            text: a.text.clone(),
            top_k: a.top_k,
        },
    )?;
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(&response)?);
    Ok(())
}

fn cmd_classify(a: &ClassifyArgs, out: &mut dyn Write) -> Result<()> {
    let model = service_model(&a.model, &a.head)?;
    let response = model.classify(&ClassifyRequest {
        text: a.text.clone(),
        interventions: a.interventions.clone(),
        top_k: a.top_k,
    })?;
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(&response)?);
    Ok(())
}
