//! Label unification: clustering against brute-force components, merge
//! idempotence, label-set invariants and the similarity providers.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use astbridge::synth::{generate, SynthConfig};
use astbridge::unify::{
    apply_mapping, build_label_set, cluster_labels, merge_equivalent_clusters, LabelKey, Partition, ProviderKind,
    UnifyConfig, GLOBAL_ROOT_ID, OTHER_ID,
};
use proptest::prelude::*;

use common::components::{as_index_sets, brute_components, keys, sim_matrix};

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn clustering_equals_brute_force_components(sim in sim_matrix(), threshold in 0.3f64..0.95) {
        let k = keys(sim.len());
        let p = cluster_labels(&k, |i, j| sim[i][j], threshold);
        prop_assert_eq!(as_index_sets(&p, &k), brute_components(&sim, threshold));
        prop_assert_eq!(p.key_count(), k.len());
    }

    #[test]
    fn merging_is_idempotent_and_only_joins(
        n in 1usize..=30,
        seed_vecs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 30),
        arities in proptest::collection::vec((0usize..3, proptest::option::of(0usize..4)), 30),
        groups in proptest::collection::vec(0usize..10, 30),
        threshold in 0.5f64..0.99,
    ) {
        let k = keys(n);
        let vectors: HashMap<LabelKey, Vec<f64>> = k.iter().cloned().zip(seed_vecs).collect();
        let arity: HashMap<LabelKey, (usize, Option<usize>)> =
            k.iter().cloned().zip(arities.into_iter().map(|(lo, extra)| (lo, extra.map(|e| lo + e)))).collect();
        let mut by_group: BTreeMap<usize, Vec<LabelKey>> = BTreeMap::new();
        for (key, g) in k.iter().zip(groups) {
            by_group.entry(g).or_default().push(key.clone());
        }
        let start = Partition::from_groups(by_group.into_values().collect());
        let once = merge_equivalent_clusters(&start, &vectors, &arity, threshold);
        let twice = merge_equivalent_clusters(&once, &vectors, &arity, threshold);
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.key_count(), n);
        let cluster_of = once.cluster_of();
        for c in &start.clusters {
            let ids: BTreeSet<usize> = c.iter().map(|key| cluster_of[key]).collect();
            prop_assert_eq!(ids.len(), 1);
        }
    }
}

#[test]
fn label_set_covers_every_observed_type_once() {
    let corpus = generate(&SynthConfig::default());
    let trees = corpus.trees();
    let (labels, report) = build_label_set(&trees, &trees, &corpus.schemas, &UnifyConfig::default()).unwrap();
    let mut seen = BTreeSet::new();
    for m in &labels.mapping {
        assert!(seen.insert((m.language.clone(), m.type_name.clone())), "{m:?} mapped twice");
        assert!(m.label_id < labels.len());
        assert_ne!(m.label_id, GLOBAL_ROOT_ID);
    }
    for t in &trees {
        for n in &t.nodes {
            assert!(labels.contains(&t.language, &n.type_name));
        }
    }
    let ids: Vec<usize> = labels.labels.iter().map(|l| l.id).collect();
    assert_eq!(ids, (0..labels.len()).collect::<Vec<_>>());
    // Every non-reserved label has at least one member.
    let members = labels.members();
    for l in &labels.labels[2..] {
        assert!(members.get(&l.id).is_some_and(|m| !m.is_empty()), "{} has no members", l.name);
    }
    // Rare types go to Other; the frequency oracle counts nodes directly.
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    for t in &trees {
        for n in &t.nodes {
            *counts.entry((t.language.clone(), n.type_name.clone())).or_default() += 1;
        }
    }
    for m in &labels.mapping {
        let c = counts.get(&(m.language.clone(), m.type_name.clone())).copied().unwrap_or(0);
        if c < UnifyConfig::default().f_min {
            assert_eq!(m.label_id, OTHER_ID, "{}:{} seen {c} times", m.language, m.type_name);
        }
    }
    assert_eq!(report.provider, ProviderKind::Builtin);
}

#[test]
fn control_flow_types_unify_across_languages() {
    let corpus = generate(&SynthConfig::default());
    let trees = corpus.trees();
    let (labels, _) = build_label_set(&trees, &trees, &corpus.schemas, &UnifyConfig::default()).unwrap();
    for (java, python) in [("IfStatement", "if_statement"), ("WhileStatement", "while_statement"), ("ReturnStatement", "return_statement")] {
        let (a, b) = (labels.label_of("java", java), labels.label_of("python", python));
        assert_ne!(a, OTHER_ID, "{java}");
        assert_eq!(a, b, "{java} vs {python}");
    }
}

#[test]
fn mapping_preserves_tree_structure() {
    let corpus = generate(&SynthConfig { tasks: 4, ..SynthConfig::default() });
    let trees = corpus.trees();
    let (labels, _) = build_label_set(&trees, &trees, &corpus.schemas, &UnifyConfig::default()).unwrap();
    for t in &trees {
        let l = apply_mapping(t, &labels);
        assert_eq!(l.root, t.root);
        assert_eq!(l.nodes.len(), t.nodes.len());
        for (a, b) in l.nodes.iter().zip(&t.nodes) {
            assert_eq!((a.id, &a.children, &a.attrs), (b.id, &b.children, &b.attrs));
            assert_eq!(a.label_id, labels.label_of(&t.language, &b.type_name));
        }
    }
}

#[test]
fn builds_are_byte_identical_and_round_trip() {
    let corpus = generate(&SynthConfig::default());
    let trees = corpus.trees();
    let (a, _) = build_label_set(&trees, &trees, &corpus.schemas, &UnifyConfig::default()).unwrap();
    let (b, _) = build_label_set(&trees, &trees, &corpus.schemas, &UnifyConfig::default()).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.content_hash(), b.content_hash());
    let back = astbridge::unify::UniversalLabelSet::from_json(&a.to_json()).unwrap();
    assert_eq!(back, a);
    assert_eq!(back.label_of("java", "IfStatement"), a.label_of("java", "IfStatement"));
}

#[test]
fn invalid_threshold_is_rejected() {
    let corpus = generate(&SynthConfig { tasks: 2, ..SynthConfig::default() });
    let trees = corpus.trees();
    for t in [0.0, -0.1, 1.5, f64::NAN] {
        let cfg = UnifyConfig { threshold: t, ..UnifyConfig::default() };
        assert!(build_label_set(&trees, &trees, &corpus.schemas, &cfg).is_err(), "threshold {t}");
    }
}

/// Serves `requests` embedding calls, answering each text with a one-hot
/// vector of its position, so no two types are similar.
fn one_hot_server(requests: usize) -> (String, thread::JoinHandle<usize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut served = 0;
        for stream in listener.incoming().take(requests) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            assert!(request_line.starts_with("POST /embed "), "{request_line}");
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let n = req["texts"].as_array().unwrap().len();
            let vectors: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
            let out = serde_json::json!({ "vectors": vectors }).to_string();
            write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{out}", out.len())
                .unwrap();
            served += 1;
        }
        served
    });
    (url, handle)
}

#[test]
fn external_provider_replaces_the_builtin_similarity() {
    let corpus = generate(&SynthConfig { tasks: 4, ..SynthConfig::default() });
    let trees = corpus.trees();
    let (url, server) = one_hot_server(1);
    let cfg = UnifyConfig { endpoint: Some(url.clone()), ..UnifyConfig::default() };
    let (_, report) = build_label_set(&trees, &trees, &corpus.schemas, &cfg).unwrap();
    assert_eq!(server.join().unwrap(), 1);
    assert_eq!(report.provider, ProviderKind::External { endpoint: url });
    // Orthogonal embeddings: nothing clusters.
    assert_eq!(report.clusters.len(), report.clusters.key_count());
    let (_, builtin) = build_label_set(&trees, &trees, &corpus.schemas, &UnifyConfig::default()).unwrap();
    assert!(builtin.clusters.len() < builtin.clusters.key_count());
}

#[test]
fn unreachable_provider_falls_back_to_builtin() {
    let corpus = generate(&SynthConfig { tasks: 4, ..SynthConfig::default() });
    let trees = corpus.trees();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = UnifyConfig { endpoint: Some(format!("http://127.0.0.1:{port}")), ..UnifyConfig::default() };
    let (fallback, report) = build_label_set(&trees, &trees, &corpus.schemas, &cfg).unwrap();
    assert_eq!(report.provider, ProviderKind::Builtin);
    let (builtin, _) = build_label_set(&trees, &trees, &corpus.schemas, &UnifyConfig::default()).unwrap();
    assert_eq!(fallback, builtin);
}
