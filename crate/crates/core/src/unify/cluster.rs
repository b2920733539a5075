//! Union-find clustering of node types and structural merging of clusters.

use std::collections::{BTreeMap, HashMap};

use super::schema::arity_overlaps;
use super::signature::cosine;
use super::LabelKey;

/// Disjoint sets with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when `a` and `b` were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Sets as sorted index lists, ordered by their smallest member.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        let mut gs: Vec<Vec<usize>> = by_root.into_values().collect();
        gs.sort_by_key(|g| g[0]);
        gs
    }
}

/// A partition of label keys. Members of each cluster are sorted; clusters
/// are ordered by their smallest member, which is the representative.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub clusters: Vec<Vec<LabelKey>>,
}

impl Partition {
    pub fn from_groups(mut clusters: Vec<Vec<LabelKey>>) -> Self {
        for c in &mut clusters {
            c.sort();
            c.dedup();
        }
        clusters.retain(|c| !c.is_empty());
        clusters.sort();
        Self { clusters }
    }

    pub fn singletons(keys: &[LabelKey]) -> Self {
        Self::from_groups(keys.iter().map(|k| vec![k.clone()]).collect())
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn cluster_of(&self) -> HashMap<LabelKey, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.iter().map(move |k| (k.clone(), i)))
            .collect()
    }

    pub fn key_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }
}

/// Connected components of the graph `{(i, j) : sim(i, j) ≥ threshold}`.
pub fn cluster_labels(keys: &[LabelKey], mut sim: impl FnMut(usize, usize) -> f64, threshold: f64) -> Partition {
    let mut uf = UnionFind::new(keys.len());
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            if sim(i, j) >= threshold {
                uf.union(i, j);
            }
        }
    }
    Partition::from_groups(uf.groups().into_iter().map(|g| g.into_iter().map(|i| keys[i].clone()).collect()).collect())
}

fn centroid(members: &[LabelKey], vectors: &HashMap<LabelKey, Vec<f64>>) -> Vec<f64> {
    let dim = members.iter().find_map(|k| vectors.get(k)).map_or(0, Vec::len);
    let mut c = vec![0.0; dim];
    for v in members.iter().filter_map(|k| vectors.get(k)) {
        for (a, b) in c.iter_mut().zip(v) {
            *a += b;
        }
    }
    c
}

/// Fraction of the members of `a ∪ b` whose arity range overlaps the range
/// of at least one member of the other cluster.
pub fn arity_compatibility(a: &[LabelKey], b: &[LabelKey], arity: &HashMap<LabelKey, (usize, Option<usize>)>) -> f64 {
    let r = |k: &LabelKey| arity.get(k).copied().unwrap_or((0, None));
    let hits = a.iter().filter(|x| b.iter().any(|y| arity_overlaps(r(x), r(y)))).count()
        + b.iter().filter(|y| a.iter().any(|x| arity_overlaps(r(x), r(y)))).count();
    hits as f64 / (a.len() + b.len()) as f64
}

/// Repeatedly merges the first (in cluster order) pair of clusters whose
/// centroid cosine is ≥ `threshold` and whose arity compatibility is ≥ 0.5,
/// until no such pair remains. The fixed point makes the operation
/// idempotent; clusters are only ever joined, never split.
pub fn merge_equivalent_clusters(
    partition: &Partition,
    vectors: &HashMap<LabelKey, Vec<f64>>,
    arity: &HashMap<LabelKey, (usize, Option<usize>)>,
    threshold: f64,
) -> Partition {
    let mut clusters = partition.clusters.clone();
    let mut centroids: Vec<Vec<f64>> = clusters.iter().map(|c| centroid(c, vectors)).collect();
    'outer: loop {
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                if centroids[i].is_empty() || centroids[j].is_empty() {
                    continue;
                }
                if cosine(&centroids[i], &centroids[j]) >= threshold
                    && arity_compatibility(&clusters[i], &clusters[j], arity) >= 0.5
                {
                    let moved = clusters.remove(j);
                    centroids.remove(j);
                    clusters[i].extend(moved);
                    clusters[i].sort();
                    centroids[i] = centroid(&clusters[i], vectors);
                    continue 'outer;
                }
            }
        }
        break;
    }
    Partition::from_groups(clusters)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(n: usize) -> Vec<LabelKey> {
        (0..n).map(|i| LabelKey::new("l", &format!("t{i}"))).collect()
    }

    #[test]
    fn transitive_chain_forms_one_cluster() {
        let k = keys(3);
        let s = [[1.0, 0.8, 0.1], [0.8, 1.0, 0.9], [0.1, 0.9, 1.0]];
        let p = cluster_labels(&k, |i, j| s[i][j], 0.75);
        assert_eq!(p.clusters, vec![k.clone()]);
    }

    #[test]
    fn below_threshold_gives_singletons() {
        let k = keys(4);
        let p = cluster_labels(&k, |_, _| 0.5, 0.75);
        assert_eq!(p.len(), 4);
    }

    #[test]
    fn union_find_basics() {
        let mut uf = UnionFind::new(5);
        assert!(uf.union(0, 3));
        assert!(!uf.union(3, 0));
        assert!(uf.union(4, 3));
        assert_eq!(uf.groups(), vec![vec![0, 3, 4], vec![1], vec![2]]);
    }
}
