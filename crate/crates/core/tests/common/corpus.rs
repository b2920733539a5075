//! Synthetic corpus taken through unification and enhancement.

use std::collections::BTreeMap;

use astbridge::enhance::{EnhanceConfig, KeyNodePolicy, UnifiedAst};
use astbridge::pipeline::{build_labels, enhance_all};
use astbridge::synth::{generate, SynthConfig, SynthCorpus};
use astbridge::train::pairs::positive_pairs;
use astbridge::train::trainer::graphs_by_split;
use astbridge::train::{make_splits, GraphMeta, PairExample, PairSource, Split, SplitManifest, SplitRatios};
use astbridge::unify::{UnifyConfig, UniversalLabelSet};

pub struct World {
    pub corpus: SynthCorpus,
    pub labels: UniversalLabelSet,
    pub splits: SplitManifest,
    pub graphs: Vec<UnifiedAst>,
}

impl World {
    pub fn num_labels(&self) -> usize {
        self.labels.labels.len()
    }

    /// Graphs of another corpus mapped with this world's labels.
    pub fn map_corpus(&self, other: &SynthCorpus) -> Vec<UnifiedAst> {
        let policy = KeyNodePolicy::default_for(&self.labels).unwrap();
        enhance_all(&other.items(), &self.labels, &policy, &EnhanceConfig::default()).unwrap()
    }
}

/// Labels are fitted on the training tasks only.
pub fn world(cfg: &SynthConfig, ratios: SplitRatios, split_seed: u64) -> World {
    let corpus = generate(cfg);
    let items = corpus.items();
    let tasks: Vec<String> = items.iter().map(|(e, _)| e.task_id.clone()).collect();
    let splits = make_splits(&tasks, ratios, split_seed).unwrap();
    let (labels, _) = build_labels(&items, &corpus.schemas, Some(&splits.train), &UnifyConfig::default()).unwrap();
    let policy = KeyNodePolicy::default_for(&labels).unwrap();
    let graphs = enhance_all(&items, &labels, &policy, &EnhanceConfig::default()).unwrap();
    World { corpus, labels, splits, graphs }
}

pub fn small_world(tasks: usize) -> World {
    world(&SynthConfig { tasks, ..SynthConfig::default() }, SplitRatios::default(), 1)
}

/// Positive pairs of every split.
pub fn split_pairs(w: &World) -> BTreeMap<Split, Vec<PairExample>> {
    let parts = graphs_by_split(&w.graphs, &w.splits);
    Split::ALL.into_iter().map(|s| (s, positive_pairs(&parts[&s].iter().map(|g| GraphMeta::of(g)).collect::<Vec<_>>()))).collect()
}

pub struct Leak {
    pub splits: SplitManifest,
    pub pairs: BTreeMap<Split, Vec<PairExample>>,
    pub task: String,
    pub snippet: String,
}

/// One duplicated task, one duplicated snippet and one swapped pair, each
/// planted exactly once into otherwise clean splits.
pub fn plant_leaks(w: &World) -> Leak {
    let mut splits = w.splits.clone();
    let mut pairs = split_pairs(w);
    // The task is listed in test as well, and its pairs come along.
    let task = splits.train.iter().next().unwrap().clone();
    let of_task = |id: &str| id.starts_with(&format!("{task}/"));
    splits.test.insert(task.clone());
    let copied: Vec<PairExample> = pairs[&Split::Train].iter().filter(|p| of_task(&p.g1_id)).cloned().collect();
    pairs.get_mut(&Split::Test).unwrap().extend(copied);
    // A training snippet of another task reused in validation.
    let train_pairs = pairs[&Split::Train].clone();
    let other = train_pairs.iter().find(|p| !of_task(&p.g1_id)).unwrap();
    let valid_anchor = pairs[&Split::Valid][0].g2_id.clone();
    pairs.get_mut(&Split::Valid).unwrap().push(PairExample {
        g1_id: other.g1_id.clone(),
        g2_id: valid_anchor,
        label: 0,
        source: PairSource::RandomNegative,
    });
    // A training pair, reversed, in test.
    let swapped = train_pairs.iter().rev().find(|p| !of_task(&p.g1_id) && p.g1_id != other.g1_id).unwrap();
    pairs.get_mut(&Split::Test).unwrap().push(PairExample { g1_id: swapped.g2_id.clone(), g2_id: swapped.g1_id.clone(), ..swapped.clone() });
    Leak { splits, pairs, task, snippet: other.g1_id.clone() }
}
