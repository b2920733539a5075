//! Whole-corpus drivers shared by the command line and the tests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;

use crate::enhance::{enhance_tree, EnhanceConfig, EnhanceError, KeyNodePolicy, UnifiedAst};
use crate::interchange::{load_parse_tree, scan_corpus, CorpusManifest, InterchangeError, ManifestEntry, ParseTree};
use crate::unify::{apply_mapping, build_label_set, BuildReport, GrammarSchema, UnifyConfig, UnifyError, UniversalLabelSet};

/// A manifest entry with its parsed tree.
pub type CorpusItem = (ManifestEntry, ParseTree);

/// Scans and loads a corpus directory in manifest order.
pub fn load_corpus(root: &Path, max_nodes: usize) -> Result<(CorpusManifest, Vec<CorpusItem>), InterchangeError> {
    let manifest = scan_corpus(root)?;
    let items = manifest
        .entries
        .par_iter()
        .map(|e| Ok((e.clone(), load_parse_tree(&e.path, max_nodes)?)))
        .collect::<Result<Vec<_>, InterchangeError>>()?;
    Ok((manifest, items))
}

/// Label set over every tree; frequencies come from the trees of
/// `freq_tasks` when given (normally the training split).
pub fn build_labels(
    items: &[CorpusItem],
    schemas: &BTreeMap<String, GrammarSchema>,
    freq_tasks: Option<&BTreeSet<String>>,
    cfg: &UnifyConfig,
) -> Result<(UniversalLabelSet, BuildReport), UnifyError> {
    let all: Vec<ParseTree> = items.iter().map(|(_, t)| t.clone()).collect();
    let freq: Vec<ParseTree> = match freq_tasks {
        Some(tasks) => items.iter().filter(|(e, _)| tasks.contains(&e.task_id)).map(|(_, t)| t.clone()).collect(),
        None => all.clone(),
    };
    build_label_set(&all, &freq, schemas, cfg)
}

/// Maps and enhances every tree, in input order.
pub fn enhance_all(
    items: &[CorpusItem],
    labels: &UniversalLabelSet,
    policy: &KeyNodePolicy,
    cfg: &EnhanceConfig,
) -> Result<Vec<UnifiedAst>, EnhanceError> {
    items
        .par_iter()
        .map(|(e, t)| enhance_tree(&apply_mapping(t, labels), &e.graph_id(), &e.task_id, labels, policy, cfg))
        .collect()
}
