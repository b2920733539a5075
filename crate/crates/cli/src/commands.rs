use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use astbridge::enhance::{graph_path, load_graph_dir, EnhanceConfig, KeyNodePolicy, UnifiedAst};
use astbridge::gmn::GmnModel;
use astbridge::interchange::{scan_corpus, CorpusManifest, DEFAULT_MAX_NODES};
use astbridge::pipeline::{build_labels, enhance_all, load_corpus};
use astbridge::provenance::{canonical_json, hash_file, hash_tree, Provenance};
use astbridge::synth::{generate, SynthConfig};
use astbridge::train::eval::{
    detect_from_scores, evaluate_retrieval, graph_inputs, rank_candidates, score_pairs, GmnScorer, VectorScorer, DEFAULT_K,
};
use astbridge::train::metrics::sweep_threshold;
use astbridge::train::pairs::{all_cross_pairs, positive_pairs};
use astbridge::train::trainer::graphs_by_split;
use astbridge::train::{
    check_split_integrity, make_splits, train, EmbeddingIndex, GraphMeta, IndexMeta, Metrics, Objective, PairExample,
    PairSource, Split, SplitManifest, SplitRatios, TrainConfig, TrainHooks,
};
use astbridge::unify::{load_schema_dir, UnifyConfig, UniversalLabelSet, DEFAULT_THRESHOLD};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{need, Knobs};
use crate::{Cli, Command, Failure, Format, SplitArg};

const DEFAULT_SPLIT_SEED: u64 = 1;

fn bad<E: Display>(e: E) -> Failure {
    Failure::Invalid(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Invalid(format!("{}: {e}", path.display()))
}

struct Ctx {
    knobs: Knobs,
    command: &'static str,
}

impl Ctx {
    /// The merged configuration as echoed into provenance records.
    fn config(&self) -> Value {
        let mut v = self.knobs.to_json();
        v["command"] = json!(self.command);
        v
    }

    fn provenance(&self, seed: u64, inputs: &[(&str, String)]) -> Provenance {
        inputs.iter().fold(Provenance::new(&self.config(), seed), |p, (name, digest)| p.with_input(*name, digest.clone()))
    }

    fn out(&self) -> Result<&Path, Failure> {
        need(&self.knobs.out, "out")
    }
}

/// Run facts written next to a checkpoint.
#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    /// Decision threshold selected on the validation split.
    threshold: f64,
    best_epoch: usize,
    steps: usize,
    provenance: Provenance,
}

fn summary_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".summary.json");
    PathBuf::from(s)
}

/// Pair read from a JSON-lines file; the label is optional.
#[derive(Debug, Deserialize)]
struct PairLine {
    g1_id: String,
    g2_id: String,
    #[serde(default)]
    label: Option<u8>,
    #[serde(default)]
    source: Option<PairSource>,
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => Knobs::from_file(p)?,
        None => Knobs::default(),
    };
    let ctx = Ctx { knobs: cli.knobs.over(file), command: cli.command.name() };
    if let Some(jobs) = ctx.knobs.jobs {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().map_err(bad)?;
    }
    log::info!("{} with {}", ctx.command, canonical_json(&ctx.config()));
    match cli.command {
        Command::Synth => synth(&ctx),
        Command::Split => split(&ctx),
        Command::Unify { .. } => unify(&ctx),
        Command::Enhance => enhance(&ctx),
        Command::Train { log } => train_cmd(&ctx, log),
        Command::Detect { pairs, split } => detect(&ctx, pairs.as_deref(), split),
        Command::Retrieve { query } => retrieve(&ctx, &query),
        Command::Eval { split } => eval(&ctx, split),
        Command::ExportEmbeddings { format } => export(&ctx, format),
        Command::CheckSplits { pairs } => check_splits(&ctx, pairs.as_deref()),
    }
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Valid => Split::Valid,
        SplitArg::Test => Split::Test,
    }
}

/// Digest of every regular file below `dir`.
fn hash_dir(dir: &Path) -> Result<String, Failure> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io_err(&d))? {
            let p = entry.map_err(io_err(&d))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    hash_tree(dir, files.iter().map(PathBuf::as_path)).map_err(io_err(dir))
}

fn hash_manifest(root: &Path, m: &CorpusManifest) -> Result<String, Failure> {
    hash_tree(root, m.entries.iter().map(|e| e.path.as_path())).map_err(io_err(root))
}

fn hash_of(path: &Path) -> Result<String, Failure> {
    hash_file(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Writes to `path`, or to standard output when absent.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_json(path: Option<&Path>, v: &Value) -> Result<(), Failure> {
    let mut w = sink(path)?;
    let text = serde_json::to_string_pretty(v).expect("json values serialize");
    writeln!(w, "{text}").and_then(|()| w.flush()).map_err(bad)
}

fn synth(ctx: &Ctx) -> Result<(), Failure> {
    let out = ctx.out()?;
    let d = SynthConfig::default();
    let cfg = SynthConfig { tasks: ctx.knobs.tasks.unwrap_or(d.tasks), seed: ctx.knobs.seed.unwrap_or(d.seed), ..d };
    let corpus = generate(&cfg);
    corpus.write(&out.join("corpus"), &out.join("schemas")).map_err(bad)?;
    log::info!("wrote {} snippets over {} tasks to {}", corpus.snippets.len(), cfg.tasks, out.display());
    Ok(())
}

fn split(ctx: &Ctx) -> Result<(), Failure> {
    let corpus = need(&ctx.knobs.corpus, "corpus")?;
    let manifest = scan_corpus(corpus).map_err(bad)?;
    let seed = ctx.knobs.seed.unwrap_or(DEFAULT_SPLIT_SEED);
    let mut m = make_splits(&manifest.tasks(), SplitRatios::default(), seed).map_err(bad)?;
    m.provenance = Some(ctx.provenance(seed, &[("corpus", hash_manifest(corpus, &manifest)?)]));
    m.save(ctx.out()?).map_err(bad)?;
    log::info!("{} train, {} valid, {} test tasks", m.train.len(), m.valid.len(), m.test.len());
    Ok(())
}

fn unify(ctx: &Ctx) -> Result<(), Failure> {
    let k = &ctx.knobs;
    let corpus = need(&k.corpus, "corpus")?;
    let schemas_dir = need(&k.schemas, "schemas")?;
    let out = ctx.out()?;
    let threshold = match k.threshold.as_deref() {
        None => DEFAULT_THRESHOLD,
        Some(t) => t.parse().map_err(|_| Failure::Usage(format!("--threshold {t}: unify needs a number in (0, 1]")))?,
    };
    let (manifest, items) = load_corpus(corpus, DEFAULT_MAX_NODES).map_err(bad)?;
    let schemas = load_schema_dir(schemas_dir).map_err(bad)?;
    let mut inputs = vec![("corpus", hash_manifest(corpus, &manifest)?), ("schemas", hash_dir(schemas_dir)?)];
    let splits = match &k.splits {
        Some(p) => {
            inputs.push(("splits", hash_of(p)?));
            Some(SplitManifest::load(p).map_err(bad)?)
        }
        None => None,
    };
    let cfg = UnifyConfig { threshold, endpoint: k.endpoint.clone(), ..UnifyConfig::default() };
    let (mut labels, report) = build_labels(&items, &schemas, splits.as_ref().map(|s| &s.train), &cfg).map_err(bad)?;
    labels.provenance = Some(ctx.provenance(k.seed.unwrap_or(0), &inputs));
    write_text(out, &labels.to_json())?;
    log::info!(
        "{} node types into {} universal labels ({:?} similarity)",
        labels.mapping.len(),
        labels.len(),
        report.provider
    );
    Ok(())
}

fn enhance(ctx: &Ctx) -> Result<(), Failure> {
    let k = &ctx.knobs;
    let corpus = need(&k.corpus, "corpus")?;
    let labels_path = need(&k.labels, "labels")?;
    let out = ctx.out()?;
    let labels = UniversalLabelSet::load(labels_path).map_err(bad)?;
    let (manifest, items) = load_corpus(corpus, DEFAULT_MAX_NODES).map_err(bad)?;
    let mut inputs = vec![("corpus", hash_manifest(corpus, &manifest)?), ("labels", hash_of(labels_path)?)];
    let policy = match &k.policy {
        Some(p) => {
            inputs.push(("policy", hash_of(p)?));
            KeyNodePolicy::load(p, &labels).map_err(bad)?
        }
        None => KeyNodePolicy::default_for(&labels).map_err(bad)?,
    };
    let d = EnhanceConfig::default();
    let cfg = EnhanceConfig { ratio: k.ratio.unwrap_or(d.ratio), seed: k.seed.unwrap_or(d.seed), ..d };
    let graphs = enhance_all(&items, &labels, &policy, &cfg).map_err(bad)?;
    let prov = ctx.provenance(cfg.seed, &inputs);
    for mut g in graphs {
        g.provenance = Some(prov.clone());
        g.save(&graph_path(out, &g.graph_id)).map_err(bad)?;
    }
    log::info!("wrote {} graphs to {}", manifest.entries.len(), out.display());
    Ok(())
}

fn load_graphs(ctx: &Ctx) -> Result<(Vec<UnifiedAst>, String), Failure> {
    let dir = need(&ctx.knobs.graphs, "graphs")?;
    let graphs = load_graph_dir(dir).map_err(bad)?;
    if graphs.is_empty() {
        return Err(Failure::Invalid(format!("no graphs under {}", dir.display())));
    }
    Ok((graphs, hash_dir(dir)?))
}

fn load_splits(ctx: &Ctx) -> Result<(SplitManifest, String), Failure> {
    let p = need(&ctx.knobs.splits, "splits")?;
    Ok((SplitManifest::load(p).map_err(bad)?, hash_of(p)?))
}

fn load_model(ctx: &Ctx) -> Result<(GmnModel, PathBuf, String), Failure> {
    let p = need(&ctx.knobs.model, "model")?;
    let (model, _) = GmnModel::load(p).map_err(bad)?;
    Ok((model, p.to_path_buf(), hash_of(p)?))
}

fn objective(ctx: &Ctx) -> Result<Objective, Failure> {
    match ctx.knobs.task.as_deref() {
        None | Some("clone") => Ok(Objective::Clone),
        Some("retrieval") => Ok(Objective::Retrieval),
        Some(t) => Err(Failure::Usage(format!("--task {t}: expected clone or retrieval"))),
    }
}

fn train_cmd(ctx: &Ctx, log_path: Option<PathBuf>) -> Result<(), Failure> {
    let k = &ctx.knobs;
    let out = ctx.out()?;
    let labels_path = need(&k.labels, "labels")?;
    let labels = UniversalLabelSet::load(labels_path).map_err(bad)?;
    let (graphs, graphs_hash) = load_graphs(ctx)?;
    let (splits, splits_hash) = load_splits(ctx)?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        task: objective(ctx)?,
        batch_size: k.batch,
        lr: k.lr.unwrap_or(d.lr),
        epochs: k.epochs.unwrap_or(d.epochs),
        max_steps: k.max_steps,
        neg_k: k.neg_k.unwrap_or(d.neg_k),
        tau: k.tau.unwrap_or(d.tau),
        margin: k.margin.unwrap_or(d.margin),
        seed: k.seed.unwrap_or(d.seed),
        ..d
    };
    let log_path = log_path.unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let hooks = TrainHooks { log: Some(&mut log), dump_dir: Some(dir.to_path_buf()) };
    let outcome = train(&graphs, &splits, labels.len(), &cfg, hooks).map_err(bad)?;
    log.flush().map_err(io_err(&log_path))?;
    let prov = ctx.provenance(
        cfg.seed,
        &[("graphs", graphs_hash), ("labels", hash_of(labels_path)?), ("splits", splits_hash)],
    );
    outcome.model.save(out, &labels.content_hash(), Some(prov.clone())).map_err(bad)?;
    let summary = RunSummary { threshold: outcome.threshold, best_epoch: outcome.best_epoch, steps: outcome.steps, provenance: prov };
    write_text(&summary_path(out), &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"))?;
    log::info!(
        "{} steps; best epoch {}; validation threshold {:.2}; checkpoint {}",
        outcome.steps,
        outcome.best_epoch,
        outcome.threshold,
        out.display()
    );
    Ok(())
}

fn metas_of(graphs: &[&UnifiedAst]) -> Vec<GraphMeta> {
    graphs.iter().map(|g| GraphMeta::of(g)).collect()
}

/// Explicit threshold, or `auto`: the validation-selected value of the
/// training run, else a sweep over the validation split.
fn resolve_threshold(
    ctx: &Ctx,
    model_path: &Path,
    graphs: &[UnifiedAst],
    scorer: &GmnScorer<'_>,
) -> Result<(f64, &'static str), Failure> {
    match ctx.knobs.threshold.as_deref() {
        Some(t) if t != "auto" => {
            let v: f64 = t.parse().map_err(|_| Failure::Usage(format!("--threshold {t}: expected a number or auto")))?;
            Ok((v, "flag"))
        }
        _ => {
            let sp = summary_path(model_path);
            if sp.exists() {
                let text = fs::read_to_string(&sp).map_err(io_err(&sp))?;
                let s: RunSummary = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", sp.display())))?;
                return Ok((s.threshold, "validation (training run)"));
            }
            if ctx.knobs.splits.is_none() {
                return Err(Failure::Usage("--threshold auto needs the training summary next to the model or --splits".into()));
            }
            let (splits, _) = load_splits(ctx)?;
            let valid = metas_of(&graphs_by_split(graphs, &splits)[&Split::Valid]);
            let pairs = all_cross_pairs(&valid);
            if pairs.is_empty() {
                return Err(Failure::Invalid("validation split has no cross-language pairs".into()));
            }
            let sims = score_pairs(&pairs, scorer).map_err(bad)?;
            let scored: Vec<(f64, bool)> = sims.into_iter().zip(&pairs).map(|(s, p)| (s, p.is_clone())).collect();
            Ok((sweep_threshold(&scored).0, "validation split"))
        }
    }
}

fn read_pairs(path: &Path) -> Result<(Vec<PairExample>, bool), Failure> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut pairs = Vec::new();
    let mut labeled = true;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PairLine = serde_json::from_str(&line).map_err(|e| bad(format!("{}:{}: {e}", path.display(), i + 1)))?;
        labeled &= p.label.is_some();
        let label = p.label.unwrap_or(0);
        let source = p.source.unwrap_or(if label == 1 { PairSource::Positive } else { PairSource::RandomNegative });
        pairs.push(PairExample { g1_id: p.g1_id, g2_id: p.g2_id, label, source });
    }
    Ok((pairs, labeled))
}

fn detect(ctx: &Ctx, pairs_path: Option<&Path>, split: SplitArg) -> Result<(), Failure> {
    let (graphs, graphs_hash) = load_graphs(ctx)?;
    let (model, model_path, model_hash) = load_model(ctx)?;
    let inputs = graph_inputs(&graphs, &model).map_err(bad)?;
    let scorer = GmnScorer { model: &model, inputs: &inputs };
    let mut hashes = vec![("graphs", graphs_hash), ("model", model_hash)];
    let (pairs, labeled) = match pairs_path {
        Some(p) => {
            hashes.push(("pairs", hash_of(p)?));
            read_pairs(p)?
        }
        None => {
            let (splits, h) = load_splits(ctx)?;
            hashes.push(("splits", h));
            (all_cross_pairs(&metas_of(&graphs_by_split(&graphs, &splits)[&split_of(split)])), true)
        }
    };
    let (threshold, source) = resolve_threshold(ctx, &model_path, &graphs, &scorer)?;
    let sims = score_pairs(&pairs, &scorer).map_err(bad)?;
    let (preds, metrics) = detect_from_scores(&pairs, &sims, threshold);
    let header = json!({
        "header": {
            "threshold": threshold,
            "threshold_source": source,
            "pairs": preds.len(),
            "metrics": if labeled { serde_json::to_value(&metrics).expect("metrics serialize") } else { Value::Null },
            "config": ctx.config(),
            "provenance": ctx.provenance(ctx.knobs.seed.unwrap_or(0), &hashes),
        }
    });
    let mut w = sink(ctx.knobs.out.as_deref())?;
    let mut write = || -> io::Result<()> {
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for p in &preds {
            let mut v = serde_json::to_value(p)?;
            if !labeled {
                v["label"] = Value::Null;
            }
            writeln!(w, "{}", serde_json::to_string(&v)?)?;
        }
        w.flush()
    };
    write().map_err(bad)?;
    if labeled {
        log::info!("threshold {threshold:.2} ({source}): P {:.3} R {:.3} F1 {:.3}", metrics.precision, metrics.recall, metrics.f1);
    }
    Ok(())
}

fn retrieve(ctx: &Ctx, query: &str) -> Result<(), Failure> {
    let (graphs, graphs_hash) = load_graphs(ctx)?;
    let (model, _, model_hash) = load_model(ctx)?;
    let k = ctx.knobs.k.unwrap_or(DEFAULT_K);
    let metas: Vec<GraphMeta> = graphs.iter().map(GraphMeta::of).collect();
    let q = metas.iter().find(|m| m.id == query).ok_or_else(|| Failure::Invalid(format!("unknown query graph {query}")))?;
    let inputs = graph_inputs(&graphs, &model).map_err(bad)?;
    let ranked = rank_candidates(q, &metas, &GmnScorer { model: &model, inputs: &inputs }).map_err(bad)?;
    let language: BTreeMap<&str, &str> = metas.iter().map(|m| (m.id.as_str(), m.language.as_str())).collect();
    let task: BTreeMap<&str, &str> = metas.iter().map(|m| (m.id.as_str(), m.task_id.as_str())).collect();
    // The best k of every other language, in overall rank order.
    let mut per_language: BTreeMap<&str, usize> = BTreeMap::new();
    let kept: Vec<&(String, f64, bool)> = ranked
        .iter()
        .filter(|(id, _, _)| {
            let n = per_language.entry(language[id.as_str()]).or_default();
            *n += 1;
            *n <= k
        })
        .collect();
    let results: Vec<Value> = kept
        .iter()
        .enumerate()
        .map(|(i, (id, sim, same_task))| {
            json!({
                "rank": i + 1,
                "id": id,
                "task_id": task[id.as_str()],
                "language": language[id.as_str()],
                "sim": sim,
                "top_k": i < k,
                "same_task": same_task,
            })
        })
        .collect();
    let doc = json!({
        "query": query,
        "k": k,
        "results": results,
        "provenance": ctx.provenance(ctx.knobs.seed.unwrap_or(0), &[("graphs", graphs_hash), ("model", model_hash)]),
    });
    emit_json(ctx.knobs.out.as_deref(), &doc)
}

fn eval(ctx: &Ctx, split: SplitArg) -> Result<(), Failure> {
    let (graphs, graphs_hash) = load_graphs(ctx)?;
    let (model, model_path, model_hash) = load_model(ctx)?;
    let (splits, splits_hash) = load_splits(ctx)?;
    let inputs = graph_inputs(&graphs, &model).map_err(bad)?;
    let scorer = GmnScorer { model: &model, inputs: &inputs };
    let metas = metas_of(&graphs_by_split(&graphs, &splits)[&split_of(split)]);
    let task = objective(ctx)?;
    let (metrics, threshold): (Metrics, Option<(f64, &str)>) = match task {
        Objective::Clone => {
            let (t, source) = resolve_threshold(ctx, &model_path, &graphs, &scorer)?;
            let pairs = all_cross_pairs(&metas);
            let sims = score_pairs(&pairs, &scorer).map_err(bad)?;
            (detect_from_scores(&pairs, &sims, t).1, Some((t, source)))
        }
        Objective::Retrieval => (evaluate_retrieval(&metas, &scorer, ctx.knobs.k.unwrap_or(DEFAULT_K)).map_err(bad)?, None),
    };
    let doc = json!({
        "split": split_of(split),
        "task": task,
        "graphs": metas.len(),
        "threshold": threshold.map(|t| t.0),
        "threshold_source": threshold.map(|t| t.1),
        "metrics": metrics,
        "provenance": ctx.provenance(
            ctx.knobs.seed.unwrap_or(0),
            &[("graphs", graphs_hash), ("model", model_hash), ("splits", splits_hash)],
        ),
    });
    emit_json(ctx.knobs.out.as_deref(), &doc)
}

fn export(ctx: &Ctx, format: Format) -> Result<(), Failure> {
    let out = ctx.out()?;
    let (graphs, graphs_hash) = load_graphs(ctx)?;
    let (model, _, model_hash) = load_model(ctx)?;
    let inputs = graph_inputs(&graphs, &model).map_err(bad)?;
    let vectors = VectorScorer::standalone(&model, &inputs).map_err(bad)?.vectors;
    let prov = ctx.provenance(ctx.knobs.seed.unwrap_or(0), &[("graphs", graphs_hash.clone()), ("model", model_hash)]);
    let dim = vectors.values().next().map_or(0, Vec::len);
    let meta = IndexMeta { corpus_id: graphs_hash[..16].to_string(), provenance: Some(prov.clone()) };
    let index = EmbeddingIndex::new(dim, meta, vectors.into_iter().collect()).map_err(bad)?;
    match format {
        Format::Bin => {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            index.save(out).map_err(bad)?;
        }
        Format::Tsv => {
            fs::create_dir_all(out).map_err(io_err(out))?;
            let (vp, mp) = (out.join("vectors.tsv"), out.join("metadata.tsv"));
            let v = BufWriter::new(File::create(&vp).map_err(io_err(&vp))?);
            let m = BufWriter::new(File::create(&mp).map_err(io_err(&mp))?);
            index.write_tsv(v, m).map_err(io_err(out))?;
            write_text(&out.join("provenance.json"), &(serde_json::to_string_pretty(&prov).expect("provenance serializes") + "\n"))?;
        }
    }
    log::info!("exported {} embeddings of width {dim} to {}", index.entries.len(), out.display());
    Ok(())
}

fn check_splits(ctx: &Ctx, pairs_dir: Option<&Path>) -> Result<(), Failure> {
    let (splits, splits_hash) = load_splits(ctx)?;
    let mut hashes = vec![("splits", splits_hash)];
    let pairs: BTreeMap<Split, Vec<PairExample>> = match pairs_dir {
        Some(dir) => {
            hashes.push(("pairs", hash_dir(dir)?));
            let mut out = BTreeMap::new();
            for s in Split::ALL {
                let p = dir.join(format!("{s}.jsonl"));
                out.insert(s, if p.exists() { read_pairs(&p)?.0 } else { Vec::new() });
            }
            out
        }
        None => {
            let (graphs, h) = load_graphs(ctx)?;
            hashes.push(("graphs", h));
            let parts = graphs_by_split(&graphs, &splits);
            Split::ALL.into_iter().map(|s| (s, positive_pairs(&metas_of(&parts[&s])))).collect()
        }
    };
    let report = check_split_integrity(&splits, &pairs);
    for line in report.summary_lines() {
        eprintln!("{line}");
    }
    let doc = json!({
        "clean": report.is_clean(),
        "report": report,
        "provenance": ctx.provenance(splits.seed, &hashes),
    });
    emit_json(ctx.knobs.out.as_deref(), &doc)?;
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::Audit)
    }
}
