//! Browse-node hierarchy and root-category resolution.
//!
//! Nodes may have several parents. When a walk reaches such a node, the
//! parent is picked by a draw keyed on `(seed, node)`, so a node always
//! resolves the same way for a given seed no matter which walk reaches it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Deserialize)]
struct NodeLine {
    node_id: String,
    #[serde(default)]
    parent_ids: Vec<String>,
    #[serde(default)]
    name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaxonomyGraph {
    parents: BTreeMap<String, Vec<String>>,
    names: BTreeMap<String, String>,
    roots: BTreeSet<String>,
    duplicate_lines: usize,
    placeholders: usize,
}

impl TaxonomyGraph {
    /// Builds the graph from `(node, parents, name)` triples. Later triples
    /// for the same node replace earlier ones; parents that are never
    /// declared become placeholder roots.
    pub fn from_nodes<I>(nodes: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<String>, String)>,
    {
        let mut graph = TaxonomyGraph::default();
        for (node, parents, name) in nodes {
            if graph.parents.insert(node.clone(), parents).is_some() {
                graph.duplicate_lines += 1;
            }
            graph.names.insert(node, name);
        }
        let missing: BTreeSet<String> = graph
            .parents
            .values()
            .flatten()
            .filter(|p| !graph.parents.contains_key(*p))
            .cloned()
            .collect();
        graph.placeholders = missing.len();
        for p in missing {
            graph.parents.insert(p, Vec::new());
        }
        graph.roots = graph
            .parents
            .iter()
            .filter(|(_, ps)| ps.is_empty())
            .map(|(n, _)| n.clone())
            .collect();
        if graph.roots.is_empty() {
            return Err(Error::MalformedTaxonomy("no root nodes".into()));
        }
        if graph.duplicate_lines > 0 {
            log::warn!(
                "taxonomy: {} duplicate node lines, last one kept",
                graph.duplicate_lines
            );
        }
        if graph.placeholders > 0 {
            log::warn!(
                "taxonomy: {} undeclared parents added as placeholder roots",
                graph.placeholders
            );
        }
        Ok(graph)
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut nodes = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<taxonomy>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: NodeLine = serde_json::from_str(&line)
                .map_err(|e| Error::MalformedTaxonomy(format!("line {}: {e}", n + 1)))?;
            nodes.push((parsed.node_id, parsed.parent_ids, parsed.name));
        }
        TaxonomyGraph::from_nodes(nodes)
    }

    pub fn parents(&self, node: &str) -> Option<&[String]> {
        self.parents.get(node).map(Vec::as_slice)
    }

    pub fn name(&self, node: &str) -> Option<&str> {
        self.names.get(node).map(String::as_str)
    }

    /// Display name if one was declared, otherwise the id itself.
    pub fn display_name<'a>(&'a self, node: &'a str) -> &'a str {
        match self.name(node) {
            Some(name) if !name.is_empty() => name,
            _ => node,
        }
    }

    pub fn roots(&self) -> &BTreeSet<String> {
        &self.roots
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn duplicate_lines(&self) -> usize {
        self.duplicate_lines
    }

    pub fn placeholders(&self) -> usize {
        self.placeholders
    }

    fn step<'a>(&'a self, node: &str, seed: u64) -> Option<&'a str> {
        let parents = self.parents.get(node)?;
        match parents.len() {
            0 => None,
            1 => Some(&parents[0]),
            k => {
                let pick = derive_seed(seed, &["taxonomy", node]) % k as u64;
                Some(&parents[pick as usize])
            }
        }
    }

    /// Walks parent links from `node` until a root is reached.
    pub fn resolve_root(&self, node: &str, seed: u64) -> Result<String> {
        let path = self.walk(node, seed, &HashMap::new())?;
        Ok(path.root)
    }

    fn walk(&self, node: &str, seed: u64, memo: &HashMap<String, String>) -> Result<Walk> {
        if !self.parents.contains_key(node) {
            return Err(Error::UnknownNode(node.to_string()));
        }
        let mut path: Vec<String> = Vec::new();
        let mut on_path: HashSet<String> = HashSet::new();
        let mut current = node.to_string();
        loop {
            if let Some(root) = memo.get(&current) {
                return Ok(Walk {
                    path,
                    root: root.clone(),
                });
            }
            if !on_path.insert(current.clone()) {
                let start = path.iter().position(|n| *n == current).unwrap_or(0);
                let mut cycle = path[start..].to_vec();
                cycle.push(current);
                return Err(Error::Cycle(cycle));
            }
            path.push(current.clone());
            match self.step(&current, seed) {
                None => {
                    return Ok(Walk {
                        root: current,
                        path,
                    })
                }
                Some(next) => current = next.to_string(),
            }
        }
    }

    /// Batch resolution with memoization. Failures are collected per node
    /// rather than aborting the batch.
    pub fn resolve_all<S: AsRef<str>>(&self, nodes: &[S], seed: u64) -> Resolution {
        let mut memo: HashMap<String, String> = HashMap::new();
        let mut resolution = Resolution::default();
        let mut failed: BTreeSet<String> = BTreeSet::new();
        for node in nodes {
            let node = node.as_ref();
            if resolution.resolved.contains_key(node) || failed.contains(node) {
                continue;
            }
            match self.walk(node, seed, &memo) {
                Ok(walk) => {
                    for n in walk.path {
                        memo.insert(n, walk.root.clone());
                    }
                    resolution.resolved.insert(node.to_string(), walk.root);
                }
                Err(e) => {
                    failed.insert(node.to_string());
                    resolution.errors.push(ResolutionFailure {
                        node: node.to_string(),
                        error: e.to_string(),
                    });
                }
            }
        }
        resolution
    }
}

struct Walk {
    path: Vec<String>,
    root: String,
}

pub fn load_taxonomy(path: &Path) -> Result<TaxonomyGraph> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    TaxonomyGraph::from_reader(BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionFailure {
    pub node: String,
    pub error: String,
}

/// Output of [`TaxonomyGraph::resolve_all`]; serialized as the resolution report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub resolved: BTreeMap<String, String>,
    pub errors: Vec<ResolutionFailure>,
}
