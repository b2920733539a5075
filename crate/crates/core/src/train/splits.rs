//! Task-level splits and split-integrity auditing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pairs::{task_of, PairExample};
use super::TrainError;
use crate::provenance::Provenance;

pub const MIN_TASKS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: u32,
    pub valid: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 8, valid: 1, test: 1 }
    }
}

impl SplitRatios {
    fn total(&self) -> u32 {
        self.train + self.valid + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: BTreeSet<String>,
    pub valid: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub ratios: SplitRatios,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl SplitManifest {
    pub fn tasks(&self, split: Split) -> &BTreeSet<String> {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn tasks_mut(&mut self, split: Split) -> &mut BTreeSet<String> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }

    /// First split (in train, valid, test order) listing the task.
    pub fn split_of(&self, task: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|&s| self.tasks(s).contains(task))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        super::write_file(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = super::read_file(path)?;
        serde_json::from_str(&text).map_err(|e| TrainError::Format { path: path.to_path_buf(), message: e.to_string() })
    }
}

/// Shuffles the sorted task ids with `seed` and cuts them by `ratios`;
/// valid and test sizes are rounded down, train takes the rest.
pub fn make_splits<S: AsRef<str>>(tasks: &[S], ratios: SplitRatios, seed: u64) -> Result<SplitManifest, TrainError> {
    let mut tasks: Vec<String> = tasks.iter().map(|t| t.as_ref().to_string()).collect();
    tasks.sort();
    tasks.dedup();
    if tasks.len() < MIN_TASKS {
        return Err(TrainError::TooFewTasks { found: tasks.len(), need: MIN_TASKS });
    }
    if ratios.total() == 0 || ratios.train == 0 {
        return Err(TrainError::BadRatios(format!("{}:{}:{}", ratios.train, ratios.valid, ratios.test)));
    }
    tasks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = tasks.len();
    let n_valid = n * ratios.valid as usize / ratios.total() as usize;
    let n_test = n * ratios.test as usize / ratios.total() as usize;
    let n_train = n - n_valid - n_test;
    let train = tasks[..n_train].iter().cloned().collect();
    let valid = tasks[n_train..n_train + n_valid].iter().cloned().collect();
    let test = tasks[n_train + n_valid..].iter().cloned().collect();
    Ok(SplitManifest { train, valid, test, ratios, seed, provenance: None })
}

/// Per-split pair and task counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCount {
    pub split: Split,
    pub pairs: usize,
    pub tasks: usize,
}

impl fmt::Display for SplitCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} pairs over {} tasks", self.split, thousands(self.pairs), thousands(self.tasks))
    }
}

pub fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Leakage found by [`check_split_integrity`].
///
/// Each leaked item is attributed once, to the coarsest explanation:
/// a task listed in several splits explains every pair and snippet of that
/// task; an unordered pair occurring in several splits explains its two
/// snippets. `snippet_overlap` counts the remaining shared snippets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub task_overlap: usize,
    pub snippet_overlap: usize,
    pub pair_overlap: usize,
    pub overlapping_tasks: Vec<String>,
    pub overlapping_snippets: Vec<String>,
    pub overlapping_pairs: Vec<(String, String)>,
    /// Pair endpoints whose task is not listed in the pair's split.
    pub foreign_references: usize,
    pub splits: Vec<SplitCount>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.task_overlap == 0 && self.snippet_overlap == 0 && self.pair_overlap == 0
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self.splits.iter().map(|c| c.to_string()).collect();
        out.push(format!("task overlap: {}", self.task_overlap));
        out.push(format!("snippet overlap: {}", self.snippet_overlap));
        out.push(format!("unordered pair overlap: {}", self.pair_overlap));
        out
    }
}

fn canonical(p: &PairExample) -> (String, String) {
    if p.g1_id <= p.g2_id {
        (p.g1_id.clone(), p.g2_id.clone())
    } else {
        (p.g2_id.clone(), p.g1_id.clone())
    }
}

pub fn check_split_integrity(splits: &SplitManifest, pairs: &BTreeMap<Split, Vec<PairExample>>) -> AuditReport {
    let mut task_splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    for s in Split::ALL {
        for t in splits.tasks(s) {
            task_splits.entry(t).or_default().insert(s);
        }
    }
    let bad_tasks: BTreeSet<String> =
        task_splits.iter().filter(|(_, s)| s.len() > 1).map(|(t, _)| t.to_string()).collect();

    let mut pair_splits: BTreeMap<(String, String), BTreeSet<Split>> = BTreeMap::new();
    let mut snippet_splits: BTreeMap<String, BTreeSet<Split>> = BTreeMap::new();
    let mut foreign = 0;
    let mut counts = Vec::new();
    for s in Split::ALL {
        let list = pairs.get(&s).map(Vec::as_slice).unwrap_or(&[]);
        let mut tasks = BTreeSet::new();
        for p in list {
            pair_splits.entry(canonical(p)).or_default().insert(s);
            for id in [&p.g1_id, &p.g2_id] {
                snippet_splits.entry(id.clone()).or_default().insert(s);
                let t = task_of(id);
                if !splits.tasks(s).contains(t) {
                    foreign += 1;
                }
                tasks.insert(t.to_string());
            }
        }
        counts.push(SplitCount { split: s, pairs: list.len(), tasks: tasks.len() });
    }

    let task_explained = |id: &str| bad_tasks.contains(task_of(id));
    let bad_pairs: Vec<(String, String)> = pair_splits
        .iter()
        .filter(|(p, s)| s.len() > 1 && !task_explained(&p.0) && !task_explained(&p.1))
        .map(|(p, _)| p.clone())
        .collect();
    let pair_members: BTreeSet<&str> = bad_pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
    let bad_snippets: Vec<String> = snippet_splits
        .iter()
        .filter(|(id, s)| s.len() > 1 && !task_explained(id) && !pair_members.contains(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();

    AuditReport {
        task_overlap: bad_tasks.len(),
        snippet_overlap: bad_snippets.len(),
        pair_overlap: bad_pairs.len(),
        overlapping_tasks: bad_tasks.into_iter().collect(),
        overlapping_snippets: bad_snippets,
        overlapping_pairs: bad_pairs,
        foreign_references: foreign,
        splits: counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tasks(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i:02}")).collect()
    }

    #[test]
    fn ten_tasks_split_eight_one_one() {
        let m = make_splits(&tasks(10), SplitRatios::default(), 3).unwrap();
        assert_eq!((m.train.len(), m.valid.len(), m.test.len()), (8, 1, 1));
    }

    #[test]
    fn too_few_tasks() {
        assert!(matches!(make_splits(&tasks(9), SplitRatios::default(), 3), Err(TrainError::TooFewTasks { found: 9, .. })));
    }

    #[test]
    fn thousands_separator() {
        assert_eq!(thousands(69434), "69,434");
        assert_eq!(thousands(1093), "1,093");
        assert_eq!(thousands(12), "12");
        assert_eq!(thousands(100000), "100,000");
    }
}
