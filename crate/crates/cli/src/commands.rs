use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use kale_core::config::{build_corpus_graph, RunConfig};
use kale_core::corpus::{dedup_training_split, parse_corpus, parse_json_record, ArtworkRecord, CorpusFormat};
use kale_core::embed::ProviderSet;
use kale_core::graph::{load_graph, metapath_neighbors, read_graph_bytes, serialize_graph, HeteroGraph, MetaPath, NodeRef};
use kale_core::metrics::{evaluate_files, Metric};
use kale_core::model::{BeamConfig, KaleModel, ModelError, Vocabulary};
use kale_core::numeric::ParamStore;
use kale_core::synthetic::synthetic_corpus;
use kale_core::train::{config_digest, fit_until, read_loss_csv, write_loss_csv, Checkpoint, TrainError, Trainer};
use serde_json::{json, Value};

/// Input errors exit with 2, internal failures with 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

fn input(e: impl Display) -> CliError {
    CliError::Input(e.to_string())
}

fn internal(e: impl Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_)
        | TrainError::NoSamples
        | TrainError::CheckpointMismatch(_)
        | TrainError::BadCheckpoint(_)
        | TrainError::Io { .. }
        | TrainError::Csv(_) => input(e),
        TrainError::Model(m) => model_error(m),
        other => internal(other),
    }
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::Config(_) | ModelError::UndecodableImage { .. } => input(e),
        other => internal(other),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).map_err(input)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_records(path: &Path) -> Result<Vec<ArtworkRecord>, CliError> {
    parse_corpus(path, CorpusFormat::from_path(path)).map_err(input)
}

fn providers_of(graph: &HeteroGraph) -> Result<ProviderSet, CliError> {
    ProviderSet::from_descriptor(graph.provider_descriptor()).map_err(input)
}

pub fn build_graph(corpus: &Path, out: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<ExitCode, CliError> {
    let cfg = load_config(config, seed)?;
    let records = load_records(corpus)?;
    let built = build_corpus_graph(&records, &cfg, &cfg.providers.build()).map_err(input)?;
    serialize_graph(&built.graph, out).map_err(input)?;
    let cfg_text = cfg.to_toml();
    let mut side = out.as_os_str().to_owned();
    side.push(".config.toml");
    write_file(Path::new(&side), &cfg_text)?;
    println!("{}", built.graph.stats());
    println!("clusters   {}", built.clustering.k);
    println!("config     {}", hex(&config_digest(&cfg_text)));
    Ok(ExitCode::SUCCESS)
}

pub struct TrainArgs {
    pub graph: PathBuf,
    pub corpus: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub stop_after: Option<u64>,
    pub keep_every: u64,
}

pub fn train(args: TrainArgs) -> Result<ExitCode, CliError> {
    let ck = args.resume.as_deref().map(Checkpoint::load).transpose().map_err(train_error)?;
    let cfg = match (&args.config, &ck) {
        (Some(p), _) => load_config(Some(p), args.seed)?,
        (None, Some(ck)) => {
            let mut c = RunConfig::from_toml(&ck.config_text).map_err(input)?;
            if let Some(s) = args.seed {
                c.seed = s;
            }
            c
        }
        (None, None) => return Err(input("--config is required unless --resume is given")),
    };
    let cfg_text = cfg.to_toml();
    if let Some(ck) = &ck {
        if ck.config_text != cfg_text {
            return Err(input("the checkpoint was written with a different configuration"));
        }
    }
    let graph_bytes = fs::read(&args.graph).map_err(|e| input(format!("{}: {e}", args.graph.display())))?;
    let graph = read_graph_bytes(&graph_bytes).map_err(input)?;
    let providers = providers_of(&graph)?;

    let mut records = load_records(&args.corpus)?;
    if args.val.is_some() || args.test.is_some() {
        let held = |p: &Option<PathBuf>| p.as_deref().map_or(Ok(Vec::new()), load_records);
        let (clean, report) = dedup_training_split(&records, &held(&args.val)?, &held(&args.test)?, cfg.corpus.dedup);
        println!(
            "dedup      {} captions removed, {} records dropped",
            report.removals.len(),
            report.dropped_records.len()
        );
        records = clean;
    }

    let vocab = match &ck {
        Some(ck) => Vocabulary::from_tokens(ck.vocab.clone()),
        None => Vocabulary::build(&records, cfg.model.min_freq),
    };
    let mut store = ParamStore::<f64>::new();
    let model = KaleModel::new(cfg.model.clone(), cfg.han.clone(), vocab, &graph, &mut store, cfg.seed).map_err(model_error)?;
    let prepared = records
        .iter()
        .map(|r| model.prepare(r, &graph, &providers))
        .collect::<Result<Vec<_>, _>>()
        .map_err(model_error)?;
    let mut trainer = Trainer::new(&model, store, prepared, cfg.train.clone(), cfg.seed).map_err(train_error)?;
    if let Some(ck) = &ck {
        trainer.resume(ck).map_err(train_error)?;
    }

    fs::create_dir_all(&args.out).map_err(|e| input(format!("{}: {e}", args.out.display())))?;
    write_file(&args.out.join("config.toml"), &cfg_text)?;
    let csv = args.out.join("loss.csv");
    let kept = match (&ck, csv.exists()) {
        (Some(ck), true) => read_loss_csv(&csv)
            .map_err(train_error)?
            .into_iter()
            .filter(|r| r.step <= ck.step)
            .collect(),
        _ => Vec::new(),
    };
    write_loss_csv(&csv, &kept, false).map_err(train_error)?;

    let vocab_tokens = model.vocab.tokens().to_vec();
    let end = args.stop_after.unwrap_or(cfg.train.epochs);
    fit_until(&mut trainer, end, |t, logs| {
        write_loss_csv(&csv, logs, true)?;
        let ck = Checkpoint::capture(
            cfg_text.clone(),
            t.step,
            t.epoch,
            vocab_tokens.clone(),
            &t.store,
            Some(&t.opt),
            graph_bytes.clone(),
        );
        ck.save(&args.out.join("last.ckpt"))?;
        if args.keep_every > 0 && t.epoch % args.keep_every == 0 {
            ck.save(&args.out.join(format!("epoch-{:04}.ckpt", t.epoch)))?;
        }
        Ok(())
    })
    .map_err(train_error)?;

    let l_ce = trainer.evaluate_ce().map_err(train_error)?;
    println!("epochs     {}", trainer.epoch);
    println!("steps      {}", trainer.step);
    println!("final l_ce {l_ce:.6}");
    if trainer.degenerate_cma > 0 {
        println!("degenerate alignment samples {}", trainer.degenerate_cma);
    }
    println!("config     {}", hex(&config_digest(&cfg_text)));
    Ok(ExitCode::SUCCESS)
}

pub struct CaptionArgs {
    pub checkpoint: PathBuf,
    pub image: Option<PathBuf>,
    pub metadata: Option<String>,
    pub corpus: Option<PathBuf>,
    pub beam: usize,
    pub max_len: usize,
    pub length_penalty: f64,
    pub top: usize,
    pub out: Option<PathBuf>,
}

/// Builds a record from an image path and a metadata object given inline or
/// as a file path.
fn single_record(image: &Path, metadata: Option<&str>) -> Result<ArtworkRecord, CliError> {
    let text = match metadata {
        None => "{}".to_string(),
        Some(m) if m.trim_start().starts_with('{') => m.to_string(),
        Some(path) => fs::read_to_string(path).map_err(|e| input(format!("{path}: {e}")))?,
    };
    let mut obj: serde_json::Map<String, Value> = serde_json::from_str(&text).map_err(|e| input(format!("metadata: {e}")))?;
    let stem = image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    obj.entry("id").or_insert(Value::String(stem));
    obj.entry("title").or_insert(Value::String(String::new()));
    obj.insert("image".into(), Value::String(image.display().to_string()));
    obj.insert("captions".into(), json!([]));
    parse_json_record(&Value::Object(obj).to_string(), 1).map_err(input)
}

pub fn caption(args: CaptionArgs) -> Result<ExitCode, CliError> {
    if args.beam == 0 || args.top == 0 || args.max_len == 0 {
        return Err(input("--beam, --top and --max-len must be positive"));
    }
    let ck = Checkpoint::load(&args.checkpoint).map_err(train_error)?;
    let cfg = RunConfig::from_toml(&ck.config_text).map_err(input)?;
    let graph = read_graph_bytes(&ck.graph).map_err(input)?;
    let providers = providers_of(&graph)?;
    let mut store = ParamStore::<f64>::new();
    let vocab = Vocabulary::from_tokens(ck.vocab.clone());
    let model = KaleModel::new(cfg.model.clone(), cfg.han.clone(), vocab, &graph, &mut store, cfg.seed).map_err(model_error)?;
    ck.restore_params(&mut store).map_err(train_error)?;

    let records = match (&args.corpus, &args.image) {
        (Some(c), _) => load_records(c)?,
        (None, Some(img)) => vec![single_record(img, args.metadata.as_deref())?],
        (None, None) => return Err(input("either --image or --corpus is required")),
    };
    let beam = BeamConfig {
        width: args.beam,
        max_len: args.max_len,
        length_penalty: args.length_penalty,
    };
    let mut lines = String::new();
    for r in &records {
        let prep = model.prepare(r, &graph, &providers).map_err(model_error)?;
        let hyps = model.generate(&store, &prep, beam).map_err(model_error)?;
        for (rank, h) in hyps.iter().take(args.top).enumerate() {
            let row = json!({
                "id": r.id,
                "caption": model.vocab.decode(&h.tokens),
                "score": h.score,
                "beam_rank": rank + 1,
            });
            lines.push_str(&row.to_string());
            lines.push('\n');
        }
    }
    match &args.out {
        Some(p) => write_file(p, lines)?,
        None => print!("{lines}"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(pred: &Path, refs: &Path, metrics: &str, out: Option<&Path>) -> Result<ExitCode, CliError> {
    let metrics = Metric::parse_list(metrics).map_err(input)?;
    let report = evaluate_files(pred, refs, &metrics).map_err(input)?;
    for (k, v) in &report.corpus {
        println!("{k:<8} {v:.6}");
    }
    println!("evaluated {} skipped {} empty {}", report.evaluated, report.skipped, report.empty_candidates);
    if let Some(p) = out {
        let text = serde_json::to_string_pretty(&report).map_err(internal)?;
        write_file(p, text + "\n")?;
    }
    Ok(ExitCode::SUCCESS)
}

fn node_name(g: &HeteroGraph, n: NodeRef) -> String {
    format!("{}:{}", n.ty, g.label(n))
}

pub fn inspect(graph: &Path, metapath: Option<&str>, node: Option<&str>) -> Result<ExitCode, CliError> {
    let g = load_graph(graph).map_err(input)?;
    match (metapath, node) {
        (Some(p), Some(n)) => {
            let path = MetaPath::parse(p).map_err(input)?;
            let start = g.resolve(n).map_err(input)?;
            for m in metapath_neighbors(&g, &path, start).map_err(input)? {
                println!("{}", node_name(&g, m));
            }
        }
        (None, Some(n)) => {
            let start = g.resolve(n).map_err(input)?;
            let mut nb = g.neighbors(start).to_vec();
            nb.sort();
            for m in nb {
                println!("{}", node_name(&g, m));
            }
        }
        _ => {
            println!("{}", g.stats());
            for p in g.metapaths() {
                println!("metapath   {}", p.name);
            }
            println!("providers  {}", g.provider_descriptor());
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(config: Option<&Path>, records: usize, eps: f64) -> Result<ExitCode, CliError> {
    if records == 0 || !(eps > 0.0) {
        return Err(input("--records and --eps must be positive"));
    }
    let cfg = match config {
        Some(p) => RunConfig::load(p).map_err(input)?,
        None => RunConfig::miniature(),
    };
    let corpus = synthetic_corpus(records, cfg.seed);
    let providers = cfg.providers.build();
    let built = build_corpus_graph(&corpus, &cfg, &providers).map_err(input)?;
    let vocab = Vocabulary::build(&corpus, cfg.model.min_freq);
    let mut store = ParamStore::<f64>::new();
    let model = KaleModel::new(cfg.model.clone(), cfg.han.clone(), vocab, &built.graph, &mut store, cfg.seed).map_err(model_error)?;
    let prepared = corpus
        .iter()
        .map(|r| model.prepare(r, &built.graph, &providers))
        .collect::<Result<Vec<_>, _>>()
        .map_err(model_error)?;
    let batch: Vec<(usize, usize)> = (0..prepared.len()).map(|i| (i, 0)).collect();
    let mut trainer = Trainer::new(&model, store, prepared, cfg.train.clone(), cfg.seed).map_err(train_error)?;
    let check = trainer.grad_check(&batch, eps).map_err(train_error)?;
    println!("parameters {}", trainer.store.len());
    println!("coordinates {}", check.report.coordinates);
    println!("max relative error {:.3e}", check.report.max_rel_error);
    println!(
        "key biases {} checked analytically, max |grad| {:.3e}",
        check.key_biases.len(),
        check.key_bias_max_abs
    );
    if check.passes(1e-4) {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL");
        Ok(ExitCode::from(1))
    }
}
