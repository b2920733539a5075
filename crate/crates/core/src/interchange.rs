//! Language-neutral parse-tree interchange format and corpus layout.
//!
//! External parser toolchains emit one JSON file per snippet:
//!
//! ```json
//! {"language": "java", "source_id": "t1/java/a",
//!  "root": 0,
//!  "nodes": [{"id": 0, "type_name": "program", "attrs": [], "children": [1]}, ...]}
//! ```
//!
//! A corpus is laid out as `<root>/<task_id>/<language>/<snippet_id>.json`.
//! The node cap (`max_nodes`, default 400) bounds the model input
//! size; oversize trees are rejected rather than truncated so
//! that the tree invariants always hold.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_NODES: usize = 400;
pub const DEFAULT_MAX_ATTR_TOKENS: usize = 8;

/// Token emitted for numeric literals.
pub const NUM_TOKEN: &str = "NUM";
/// Token emitted for string literals.
pub const STR_TOKEN: &str = "STR";

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("{path}: i/o error: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{path}: malformed tree: {message}")]
    MalformedTree { path: PathBuf, message: String },
    #[error("{path}: tree has {nodes} nodes, cap is {max_nodes}")]
    OversizeTree { path: PathBuf, nodes: usize, max_nodes: usize },
    #[error("{0}: corpus contains no snippets")]
    EmptyCorpus(PathBuf),
    #[error("duplicate snippet key ({task_id}, {language}, {source_id}): {first} and {second}")]
    DuplicateSnippet { task_id: String, language: String, source_id: String, first: PathBuf, second: PathBuf },
}

impl InterchangeError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParseNode {
    pub id: usize,
    pub type_name: String,
    pub attrs: Vec<String>,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParseTree {
    pub language: String,
    pub source_id: String,
    pub root: usize,
    pub nodes: Vec<ParseNode>,
}

impl ParseTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parent of every node (`None` for the root). Assumes a validated tree.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = vec![None; self.nodes.len()];
        for n in &self.nodes {
            for &c in &n.children {
                parents[c] = Some(n.id);
            }
        }
        parents
    }

    /// Checks every structural invariant: dense ids, a single root, one
    /// parent per non-root node, no cycles, everything reachable.
    ///
    /// Node ids must equal their position in `nodes`.
    pub fn validate(&self, max_nodes: usize) -> Result<(), String> {
        let n = self.nodes.len();
        if n == 0 {
            return Err("tree has no nodes".into());
        }
        if n > max_nodes {
            return Err(format!("oversize: {n} > {max_nodes}"));
        }
        for (pos, node) in self.nodes.iter().enumerate() {
            if node.id != pos {
                return Err(format!("node at position {pos} has id {} (ids must be dense and ordered)", node.id));
            }
            if node.type_name.is_empty() {
                return Err(format!("node {pos} has an empty type_name"));
            }
        }
        if self.root >= n {
            return Err(format!("root {} does not exist", self.root));
        }
        let mut parent: Vec<Option<usize>> = vec![None; n];
        for node in &self.nodes {
            for &c in &node.children {
                if c >= n {
                    return Err(format!("node {} lists child {c} which does not exist", node.id));
                }
                if c == node.id {
                    return Err(format!("node {c} lists itself as a child"));
                }
                if c == self.root {
                    return Err(format!("root {c} has a parent ({})", node.id));
                }
                if let Some(p) = parent[c] {
                    return Err(format!("node {c} has two parents ({p} and {})", node.id));
                }
                parent[c] = Some(node.id);
            }
        }
        // With one parent per non-root node, reachability from the root
        // rules out cycles as well.
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.root]);
        seen[self.root] = true;
        let mut visited = 1;
        while let Some(u) = queue.pop_front() {
            for &c in &self.nodes[u].children {
                if !seen[c] {
                    seen[c] = true;
                    visited += 1;
                    queue.push_back(c);
                }
            }
        }
        if visited != n {
            return Err(format!("{} node(s) unreachable from root (cycle or disconnected)", n - visited));
        }
        Ok(())
    }
}

fn schema_err(path: &Path, message: impl Into<String>) -> InterchangeError {
    InterchangeError::Schema { path: path.to_path_buf(), message: message.into() }
}

/// Parses and validates an interchange document held in memory.
pub fn parse_tree_from_str(text: &str, path: &Path, max_nodes: usize) -> Result<ParseTree, InterchangeError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| schema_err(path, e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| schema_err(path, "top level must be an object"))?;
    for field in ["language", "source_id", "root", "nodes"] {
        if !obj.contains_key(field) {
            return Err(schema_err(path, format!("missing field `{field}`")));
        }
    }
    let tree: ParseTree = serde_json::from_value(value).map_err(|e| schema_err(path, e.to_string()))?;
    if tree.nodes.len() > max_nodes {
        return Err(InterchangeError::OversizeTree { path: path.to_path_buf(), nodes: tree.nodes.len(), max_nodes });
    }
    tree.validate(max_nodes)
        .map_err(|message| InterchangeError::MalformedTree { path: path.to_path_buf(), message })?;
    Ok(tree)
}

pub fn load_parse_tree(path: &Path, max_nodes: usize) -> Result<ParseTree, InterchangeError> {
    let text = fs::read_to_string(path).map_err(|e| InterchangeError::io(path, e))?;
    parse_tree_from_str(&text, path, max_nodes)
}

pub fn write_parse_tree(path: &Path, tree: &ParseTree) -> Result<(), InterchangeError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| InterchangeError::io(dir, e))?;
    }
    let text = serde_json::to_string(tree).expect("parse trees always serialize");
    fs::write(path, text).map_err(|e| InterchangeError::io(path, e))
}

/// One snippet in a corpus.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub task_id: String,
    pub language: String,
    pub source_id: String,
    pub path: PathBuf,
}

impl ManifestEntry {
    /// Stable graph identifier `task/language/snippet`.
    pub fn graph_id(&self) -> String {
        format!("{}/{}/{}", self.task_id, self.language, self.source_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn tasks(&self) -> Vec<String> {
        let mut t: Vec<String> = self.entries.iter().map(|e| e.task_id.clone()).collect();
        t.sort();
        t.dedup();
        t
    }

    pub fn languages(&self) -> Vec<String> {
        let mut l: Vec<String> = self.entries.iter().map(|e| e.language.clone()).collect();
        l.sort();
        l.dedup();
        l
    }

    /// Writes the manifest as JSON lines; the first line carries the corpus id.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", serde_json::json!({ "corpus_id": self.corpus_id }))?;
        for e in &self.entries {
            writeln!(w, "{}", serde_json::to_string(e).expect("entries serialize"))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, String> {
        let mut lines = r.lines();
        let header = lines.next().ok_or("empty manifest")?.map_err(|e| e.to_string())?;
        let header: serde_json::Value = serde_json::from_str(&header).map_err(|e| e.to_string())?;
        let corpus_id = header["corpus_id"].as_str().ok_or("manifest header lacks corpus_id")?.to_string();
        let mut entries = Vec::new();
        for line in lines {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| e.to_string())?);
        }
        Ok(Self { corpus_id, entries })
    }
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>, InterchangeError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| InterchangeError::io(dir, e))? {
        let entry = entry.map_err(|e| InterchangeError::io(dir, e))?;
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

/// Lists every snippet under `root/<task>/<language>/<snippet>.json` in
/// lexicographic order. The corpus id is the root directory's name.
pub fn scan_corpus(root: &Path) -> Result<CorpusManifest, InterchangeError> {
    let mut keyed: BTreeMap<(String, String, String), PathBuf> = BTreeMap::new();
    for task_dir in sorted_dirs(root)?.into_iter().filter(|p| p.is_dir()) {
        let task_id = file_name(&task_dir);
        for lang_dir in sorted_dirs(&task_dir)?.into_iter().filter(|p| p.is_dir()) {
            let language = file_name(&lang_dir);
            for file in sorted_dirs(&lang_dir)? {
                if !file.is_file() || file.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                let key = (task_id.clone(), language.clone(), stem.clone());
                if let Some(first) = keyed.get(&key) {
                    return Err(InterchangeError::DuplicateSnippet {
                        task_id,
                        language,
                        source_id: stem,
                        first: first.clone(),
                        second: file,
                    });
                }
                keyed.insert(key, file);
            }
        }
    }
    if keyed.is_empty() {
        return Err(InterchangeError::EmptyCorpus(root.to_path_buf()));
    }
    let entries = keyed
        .into_iter()
        .map(|((task_id, language, source_id), path)| ManifestEntry { task_id, language, source_id, path })
        .collect();
    Ok(CorpusManifest { corpus_id: file_name(root), entries })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn is_numeric_literal(s: &str) -> bool {
    let t = s.trim();
    let t = t.strip_prefix(['-', '+']).unwrap_or(t);
    if t.is_empty() || !t.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '.') {
        return false;
    }
    if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        return !hex.is_empty() && hex.chars().all(|c| c.is_ascii_hexdigit() || c == '_');
    }
    let body = t.trim_end_matches(|c: char| "lLfFdDuU".contains(c));
    !body.is_empty() && (body.parse::<f64>().is_ok() || body.replace('_', "").parse::<f64>().is_ok())
}

fn is_string_literal(s: &str) -> bool {
    let t = s.trim();
    t.len() >= 2
        && ((t.starts_with('"') && t.ends_with('"'))
            || (t.starts_with('\'') && t.ends_with('\''))
            || (t.starts_with('`') && t.ends_with('`')))
}

/// Splits one identifier on `snake_case`, `kebab-case` and `camelCase`
/// boundaries (including acronym runs such as `HTTPServer` → `http server`).
pub fn split_identifier(ident: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in ident.split(|c: char| !c.is_alphanumeric()) {
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
            let boundary = (prev.is_lowercase() && cur.is_uppercase())
                || (prev.is_uppercase() && cur.is_uppercase() && next_lower)
                || (prev.is_alphabetic() && cur.is_ascii_digit())
                || (prev.is_ascii_digit() && cur.is_alphabetic());
            if boundary {
                out.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        if start < chars.len() {
            out.push(chars[start..].iter().collect::<String>().to_lowercase());
        }
    }
    out
}

/// Attribute tokenizer: numeric literals become `NUM`, string literals
/// `STR`, identifiers are split into lowercase sub-words. The result is
/// truncated to `max_tokens`.
pub fn tokenize_attrs<S: AsRef<str>>(attrs: &[S], max_tokens: usize) -> Vec<String> {
    let mut out = Vec::new();
    for a in attrs {
        let a = a.as_ref();
        if a == NUM_TOKEN || is_numeric_literal(a) {
            out.push(NUM_TOKEN.to_string());
        } else if a == STR_TOKEN || is_string_literal(a) {
            out.push(STR_TOKEN.to_string());
        } else {
            out.extend(split_identifier(a));
        }
        if out.len() >= max_tokens {
            break;
        }
    }
    out.truncate(max_tokens);
    out
}
