//! Mini-batch training of the pair encoder.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{graph_inputs, retrieval_metrics, score_pairs, GmnScorer};
use super::loss::{clone_loss_on_tape, retrieval_loss_on_tape, CloneLossForm, DEFAULT_MARGIN, DEFAULT_TAU};
use super::metrics::{sweep_threshold, sweep_threshold_tiebreak};
use super::mining::{graph_vectors, rank_negatives, MiningSource};
use super::pairs::{all_cross_pairs, negative_pool, positive_pairs, positive_pool, GraphMeta, PairExample, PairSource};
use super::splits::{Split, SplitManifest};
use super::TrainError;
use crate::diff::{adam_step, AdamConfig, AdamState, Gradients, Tape};
use crate::enhance::UnifiedAst;
use crate::gmn::{encode_pair_on_tape, GmnConfig, GmnModel, GraphInput, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Clone,
    Retrieval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeKind {
    Hard,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiningKind {
    Static,
    /// Static in the first epoch, current-model embeddings afterwards.
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub task: Objective,
    /// Defaults to 24 for clones, 8 for retrieval.
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub neg_k: usize,
    pub tau: f64,
    pub margin: f64,
    pub negatives: NegativeKind,
    pub mining: MiningKind,
    /// Size of the ranked pool hard negatives are drawn from.
    pub hard_pool: usize,
    /// Fraction of clone negatives drawn from the hard pool.
    pub hard_fraction: f64,
    pub clone_loss: CloneLossForm,
    pub seed: u64,
    pub gmn: GmnConfig,
    pub vocab_min_count: usize,
    pub k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Objective::Clone,
            batch_size: None,
            lr: 1e-3,
            epochs: 10,
            max_steps: None,
            neg_k: 10,
            tau: DEFAULT_TAU,
            margin: DEFAULT_MARGIN,
            negatives: NegativeKind::Hard,
            mining: MiningKind::Dynamic,
            hard_pool: 5,
            hard_fraction: 0.5,
            clone_loss: CloneLossForm::default(),
            seed: 42,
            gmn: GmnConfig::default(),
            vocab_min_count: 1,
            k: super::eval::DEFAULT_K,
        }
    }
}

impl TrainConfig {
    pub fn batch(&self) -> usize {
        self.batch_size
            .unwrap_or(match self.task {
                Objective::Clone => 24,
                Objective::Retrieval => 8,
            })
            .max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub val_p: Option<f64>,
    pub val_r: Option<f64>,
    pub val_f1: Option<f64>,
    pub val_mrr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation score.
    pub model: GmnModel,
    pub log: Vec<LogEntry>,
    pub best_epoch: usize,
    /// Validation-tuned decision threshold of the best model.
    pub threshold: f64,
    pub steps: usize,
}

/// Optional side channels of a run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Receives one JSON line per validation.
    pub log: Option<&'a mut dyn Write>,
    /// Where a diagnostic dump is written when a loss turns non-finite.
    pub dump_dir: Option<PathBuf>,
}

/// Splits graphs by task membership; graphs of unlisted tasks are dropped.
pub fn graphs_by_split<'a>(graphs: &'a [UnifiedAst], splits: &SplitManifest) -> BTreeMap<Split, Vec<&'a UnifiedAst>> {
    let mut out: BTreeMap<Split, Vec<&UnifiedAst>> = Split::ALL.iter().map(|&s| (s, Vec::new())).collect();
    for g in graphs {
        if let Some(s) = splits.split_of(&g.task_id) {
            out.get_mut(&s).expect("all splits present").push(g);
        }
    }
    out
}

fn metas(graphs: &[&UnifiedAst]) -> Vec<GraphMeta> {
    graphs.iter().map(|g| GraphMeta::of(g)).collect()
}

/// Deterministic 64-bit mixing of a seed with counters.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ranked hard-negative pools per train graph.
fn hard_pools(
    train: &[&UnifiedAst],
    meta: &[GraphMeta],
    source: MiningSource<'_>,
    size: usize,
) -> Result<HashMap<String, Vec<String>>, TrainError> {
    let vectors = graph_vectors(train, source)?;
    Ok(meta
        .iter()
        .map(|a| (a.id.clone(), rank_negatives(a, meta, &vectors).into_iter().take(size).map(|(c, _)| c.id.clone()).collect()))
        .collect())
}

enum Item {
    Pair(PairExample),
    Query { anchor: String, positive: String, negatives: Vec<String> },
}

/// One epoch of clone pairs: every positive, each followed by a negative
/// for one of its members (alternating), drawn from that member's hard pool
/// with probability `hard_fraction` and uniformly otherwise.
pub fn clone_pairs(
    meta: &[GraphMeta],
    pools: &HashMap<String, Vec<String>>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<PairExample> {
    let by_id: HashMap<&str, &GraphMeta> = meta.iter().map(|m| (m.id.as_str(), m)).collect();
    let positives = positive_pairs(meta);
    let mut out = Vec::with_capacity(2 * positives.len());
    for (i, p) in positives.into_iter().enumerate() {
        let anchor = by_id[if i % 2 == 0 { p.g1_id.as_str() } else { p.g2_id.as_str() }];
        let hard = cfg.negatives == NegativeKind::Hard && rand::Rng::random_bool(rng, cfg.hard_fraction.clamp(0.0, 1.0));
        let neg = if hard {
            pools.get(&anchor.id).and_then(|p| p.choose(rng)).map(|c| (c.clone(), PairSource::HardNegative))
        } else {
            negative_pool(anchor, meta).choose(rng).map(|c| (c.id.clone(), PairSource::RandomNegative))
        };
        out.push(p);
        if let Some((c, source)) = neg {
            out.push(PairExample { g1_id: anchor.id.clone(), g2_id: c, label: 0, source });
        }
    }
    out
}

/// Clone pairs of the train split as the first epoch draws them (static
/// hard pools).
pub fn initial_clone_pairs(
    graphs: &[UnifiedAst],
    splits: &SplitManifest,
    num_labels: usize,
    cfg: &TrainConfig,
) -> Result<Vec<PairExample>, TrainError> {
    let parts = graphs_by_split(graphs, splits);
    let train_graphs = &parts[&Split::Train];
    let meta = metas(train_graphs);
    let pools = if cfg.negatives == NegativeKind::Hard {
        hard_pools(train_graphs, &meta, MiningSource::Static { num_labels }, cfg.hard_pool.max(cfg.neg_k))?
    } else {
        HashMap::new()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0, 1));
    Ok(clone_pairs(&meta, &pools, cfg, &mut rng))
}

fn retrieval_items(
    meta: &[GraphMeta],
    pools: &HashMap<String, Vec<String>>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Item> {
    let mut items = Vec::new();
    for a in meta {
        let Some(pos) = positive_pool(a, meta).choose(rng).map(|p| p.id.clone()) else { continue };
        let negatives: Vec<String> = match cfg.negatives {
            NegativeKind::Hard => {
                let pool = pools.get(&a.id).cloned().unwrap_or_default();
                pool.choose_multiple(rng, cfg.neg_k).cloned().collect()
            }
            NegativeKind::Random => {
                negative_pool(a, meta).choose_multiple(rng, cfg.neg_k).map(|c| c.id.clone()).collect()
            }
        };
        items.push(Item::Query { anchor: a.id.clone(), positive: pos, negatives });
    }
    items
}

struct Ctx<'a> {
    model: &'a GmnModel,
    inputs: &'a HashMap<String, GraphInput<f32>>,
    cfg: &'a TrainConfig,
}

impl Ctx<'_> {
    fn input(&self, id: &str) -> Result<&GraphInput<f32>, TrainError> {
        self.inputs.get(id).ok_or_else(|| TrainError::UnknownGraph(id.to_string()))
    }

    /// Loss and gradients of one batch member.
    fn run(&self, item: &Item, seed: u64) -> Result<(f64, Gradients<f32>), TrainError> {
        let m = self.model;
        let mut tape = Tape::new();
        let loss = match item {
            Item::Pair(p) => {
                let (g1, g2) = (self.input(&p.g1_id)?, self.input(&p.g2_id)?);
                let v = encode_pair_on_tape(&mut tape, &m.params, &m.ids, &m.config, g1, g2, true, seed)?;
                clone_loss_on_tape(&mut tape, self.cfg.clone_loss, v.v1, v.v2, p.label, self.cfg.tau, self.cfg.margin)?
            }
            Item::Query { anchor, positive, negatives } => {
                let a = self.input(anchor)?;
                let mut sims = Vec::with_capacity(negatives.len() + 1);
                for (j, c) in std::iter::once(positive).chain(negatives).enumerate() {
                    let v = encode_pair_on_tape(&mut tape, &m.params, &m.ids, &m.config, a, self.input(c)?, true, mix(seed, j as u64, 7))?;
                    sims.push(tape.cosine_sim(v.v1, v.v2)?);
                }
                retrieval_loss_on_tape(&mut tape, sims[0], &sims[1..], self.cfg.tau)?
            }
        };
        let value = f64::from(tape.value(loss).data()[0]);
        let grads = tape.backward(loss, m.params.len())?;
        Ok((value, grads))
    }
}

fn item_ids(item: &Item) -> Vec<String> {
    match item {
        Item::Pair(p) => vec![p.g1_id.clone(), p.g2_id.clone()],
        Item::Query { anchor, positive, negatives } => {
            let mut v = vec![anchor.clone(), positive.clone()];
            v.extend(negatives.iter().cloned());
            v
        }
    }
}

fn non_finite(step: usize, batch: &[Item], losses: &[f64], model: &GmnModel, hooks: &TrainHooks<'_>) -> TrainError {
    let members: Vec<serde_json::Value> = batch
        .iter()
        .zip(losses)
        .map(|(it, l)| serde_json::json!({ "graphs": item_ids(it), "loss": if l.is_finite() { serde_json::json!(l) } else { serde_json::json!(l.to_string()) } }))
        .collect();
    let norms: BTreeMap<String, String> = model
        .params
        .iter()
        .map(|(_, name, t)| (name.to_string(), format!("{}", t.data().iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt())))
        .collect();
    let dump = serde_json::json!({ "step": step, "batch": members, "param_norms": norms });
    let text = serde_json::to_string_pretty(&dump).expect("dump serializes");
    let mut diagnostic = text.clone();
    if let Some(dir) = &hooks.dump_dir {
        let path = dir.join(format!("nonfinite-step{step}.json"));
        match super::write_file(&path, text.as_bytes()) {
            Ok(()) => diagnostic = format!("dump written to {}", path.display()),
            Err(e) => log::warn!("{e}"),
        }
    }
    TrainError::NonFiniteLoss { step, diagnostic }
}

/// Validation scores: precision, recall, F1 at the tuned threshold and MRR.
struct Validation {
    p: f64,
    r: f64,
    f1: f64,
    mrr: Option<f64>,
    threshold: f64,
    scored: Vec<(f64, bool)>,
}

fn validate(
    model: &GmnModel,
    inputs: &HashMap<String, GraphInput<f32>>,
    valid: &[GraphMeta],
    pairs: &[PairExample],
    k: usize,
) -> Result<Option<Validation>, TrainError> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let sims = score_pairs(pairs, &GmnScorer { model, inputs })?;
    let scored: Vec<(f64, bool)> = sims.iter().copied().zip(pairs.iter().map(|p| p.is_clone())).collect();
    let (threshold, m) = sweep_threshold(&scored);
    let sim_of: HashMap<(&str, &str), f64> =
        pairs.iter().zip(&sims).map(|(p, &s)| ((p.g1_id.as_str(), p.g2_id.as_str()), s)).collect();
    let queries: Vec<Vec<(f64, bool)>> = valid
        .iter()
        .map(|q| {
            valid
                .iter()
                .filter(|c| c.language != q.language)
                .filter_map(|c| {
                    let s = sim_of.get(&(q.id.as_str(), c.id.as_str())).or_else(|| sim_of.get(&(c.id.as_str(), q.id.as_str())));
                    s.map(|&s| (s, c.task_id == q.task_id))
                })
                .collect()
        })
        .collect();
    let mrr = retrieval_metrics(&queries, k).mrr;
    Ok(Some(Validation { p: m.precision, r: m.recall, f1: m.f1, mrr, threshold, scored }))
}

struct Best {
    score: f64,
    epoch: usize,
    model: GmnModel,
    validation: Option<Validation>,
    /// Clone pairs the epoch trained on; they break validation threshold ties.
    pairs: Vec<PairExample>,
}

/// Trains from scratch on the train split, validating after every epoch
/// (and when `max_steps` cuts an epoch short).
pub fn train(
    graphs: &[UnifiedAst],
    splits: &SplitManifest,
    num_labels: usize,
    cfg: &TrainConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome, TrainError> {
    let parts = graphs_by_split(graphs, splits);
    let train_graphs = &parts[&Split::Train];
    if train_graphs.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let vocab = Vocab::from_graphs(train_graphs.iter().copied(), cfg.vocab_min_count);
    let mut model = GmnModel::new(cfg.gmn.clone(), num_labels, vocab, cfg.seed);
    let inputs = graph_inputs(graphs, &model)?;
    let train_meta = metas(train_graphs);
    let valid_meta = metas(&parts[&Split::Valid]);
    let valid_pairs = all_cross_pairs(&valid_meta);
    let mut adam = AdamState::new(&model.params, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let batch_size = cfg.batch();
    let pool_size = cfg.hard_pool.max(cfg.neg_k);

    let mut log_entries = Vec::new();
    let mut best: Option<Best> = None;
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 1));
        let pools = if cfg.negatives == NegativeKind::Hard {
            let source = match (cfg.mining, epoch) {
                (MiningKind::Dynamic, e) if e > 0 => MiningSource::Model(&model),
                _ => MiningSource::Static { num_labels },
            };
            hard_pools(train_graphs, &train_meta, source, pool_size)?
        } else {
            HashMap::new()
        };
        let mut items = match cfg.task {
            Objective::Clone => clone_pairs(&train_meta, &pools, cfg, &mut rng).into_iter().map(Item::Pair).collect(),
            Objective::Retrieval => retrieval_items(&train_meta, &pools, cfg, &mut rng),
        };
        let epoch_pairs: Vec<PairExample> =
            items.iter().filter_map(|it| if let Item::Pair(p) = it { Some(p.clone()) } else { None }).collect();
        items.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        let mut stopped = false;
        for batch in items.chunks(batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                stopped = true;
                break;
            }
            let ctx = Ctx { model: &model, inputs: &inputs, cfg };
            let results: Vec<Result<(f64, Gradients<f32>), TrainError>> = batch
                .par_iter()
                .enumerate()
                .map(|(i, it)| ctx.run(it, mix(cfg.seed, step as u64, i as u64 + 1)))
                .collect();
            let mut losses = Vec::with_capacity(batch.len());
            let mut total: Option<Gradients<f32>> = None;
            for r in results {
                let (l, g) = match r {
                    Ok(x) => x,
                    Err(e) if e.is_non_finite() => (f64::NAN, Gradients::empty(model.params.len())),
                    Err(e) => return Err(e),
                };
                losses.push(l);
                match &mut total {
                    Some(t) => t.accumulate(&g),
                    None => total = Some(g),
                }
            }
            let mut total = total.expect("batches are non-empty");
            if losses.iter().any(|l| !l.is_finite()) || !total.all_finite() {
                return Err(non_finite(step, batch, &losses, &model, &hooks));
            }
            total.scale(1.0 / batch.len() as f32);
            adam_step(&mut model.params, &total, &mut adam)?;
            loss_sum += losses.iter().sum::<f64>();
            loss_n += losses.len();
            step += 1;
        }
        let v = validate(&model, &inputs, &valid_meta, &valid_pairs, cfg.k)?;
        let entry = LogEntry {
            epoch,
            step,
            loss: if loss_n == 0 { 0.0 } else { loss_sum / loss_n as f64 },
            val_p: v.as_ref().map(|v| v.p),
            val_r: v.as_ref().map(|v| v.r),
            val_f1: v.as_ref().map(|v| v.f1),
            val_mrr: v.as_ref().and_then(|v| v.mrr),
        };
        log::info!("epoch {epoch} step {step} loss {:.4} val_f1 {:?} val_mrr {:?}", entry.loss, entry.val_f1, entry.val_mrr);
        if let Some(w) = hooks.log.as_mut() {
            writeln!(w, "{}", serde_json::to_string(&entry).expect("log entry serializes"))
                .map_err(|e| TrainError::Io { path: PathBuf::from("<training log>"), source: e })?;
        }
        let score = match (cfg.task, &v) {
            (Objective::Clone, Some(v)) => v.f1,
            (Objective::Retrieval, Some(v)) => v.mrr.unwrap_or(0.0),
            (_, None) => epoch as f64,
        };
        if best.as_ref().is_none_or(|b| score >= b.score) {
            best = Some(Best { score, epoch, model: model.clone(), validation: v, pairs: epoch_pairs });
        }
        log_entries.push(entry);
        if stopped || cfg.max_steps.is_some_and(|m| step >= m) {
            break 'epochs;
        }
    }
    let Some(best) = best else {
        return Ok(TrainOutcome { model, log: log_entries, best_epoch: 0, threshold: 0.5, steps: step });
    };
    let threshold = match &best.validation {
        None => 0.5,
        Some(v) if best.pairs.is_empty() => v.threshold,
        Some(v) => {
            let sims = score_pairs(&best.pairs, &GmnScorer { model: &best.model, inputs: &inputs })?;
            let train_scored: Vec<(f64, bool)> = sims.into_iter().zip(&best.pairs).map(|(s, p)| (s, p.is_clone())).collect();
            sweep_threshold_tiebreak(&v.scored, &train_scored).0
        }
    };
    Ok(TrainOutcome { model: best.model, log: log_entries, best_epoch: best.epoch, threshold, steps: step })
}
