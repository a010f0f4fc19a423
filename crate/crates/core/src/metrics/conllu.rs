//! Dependency trees consumed from CoNLL-U files.
//!
//! Only the ID and HEAD columns are read. Multiword-token ranges (`1-2`)
//! and empty nodes (`1.1`) are skipped. Sentences are separated by blank
//! lines; a `# newdoc` comment starts a new document (one document per
//! response). A file without `# newdoc` markers is a single document.

use super::MetricsError;
use std::path::Path;

/// One token's attachment: 1-based id and head id (0 = root).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepNode {
    pub id: usize,
    pub head: usize,
}

/// A validated single-rooted acyclic dependency tree for one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyTree {
    nodes: Vec<DepNode>,
}

impl DependencyTree {
    /// Validates ids (contiguous from 1), head references, single root,
    /// and acyclicity.
    pub fn new(nodes: Vec<DepNode>) -> Result<Self, MetricsError> {
        if nodes.is_empty() {
            return Err(MetricsError::EmptyTree);
        }
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i + 1 {
                return Err(MetricsError::NonContiguousIds { expected: i + 1, got: node.id });
            }
            if node.head > n {
                return Err(MetricsError::BadHead { id: node.id, head: node.head });
            }
            if node.head == node.id {
                return Err(MetricsError::Cycle { id: node.id });
            }
        }
        let roots = nodes.iter().filter(|n| n.head == 0).count();
        if roots == 0 {
            return Err(MetricsError::NoRoot);
        }
        if roots > 1 {
            return Err(MetricsError::MultipleRoots { count: roots });
        }
        // Walk each node to the root; more than n hops means a cycle.
        for node in &nodes {
            let mut cur = node.head;
            let mut hops = 0;
            while cur != 0 {
                cur = nodes[cur - 1].head;
                hops += 1;
                if hops > n {
                    return Err(MetricsError::Cycle { id: node.id });
                }
            }
        }
        Ok(Self { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[DepNode] {
        &self.nodes
    }

    /// Node count on the longest root-to-leaf path; a single-node tree has
    /// depth 1.
    pub fn depth(&self) -> usize {
        let n = self.nodes.len();
        let mut memo = vec![0usize; n + 1];
        let mut max_depth = 0;
        for node in &self.nodes {
            let mut chain = Vec::new();
            let mut cur = node.id;
            while cur != 0 && memo[cur] == 0 {
                chain.push(cur);
                cur = self.nodes[cur - 1].head;
            }
            let mut depth = if cur == 0 { 0 } else { memo[cur] };
            for &id in chain.iter().rev() {
                depth += 1;
                memo[id] = depth;
            }
            max_depth = max_depth.max(memo[node.id]);
        }
        max_depth
    }
}

/// How sentence depths aggregate into one per-response value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthAggregation {
    /// Deepest sentence of the response (the default).
    #[default]
    MaxOverSentences,
    /// Arithmetic mean over sentences.
    MeanOverSentences,
}

/// Per-response dependency depth: aggregate sentence depths within each
/// parser set, then average across parser sets.
pub fn dependency_depth(
    trees_per_parser: &[(String, Vec<DependencyTree>)],
    aggregation: DepthAggregation,
) -> Result<f64, MetricsError> {
    if trees_per_parser.is_empty() {
        return Err(MetricsError::NoParserSets);
    }
    let mut total = 0.0;
    for (label, trees) in trees_per_parser {
        if trees.is_empty() {
            return Err(MetricsError::EmptyParserSet(label.clone()));
        }
        let value = match aggregation {
            DepthAggregation::MaxOverSentences => {
                trees.iter().map(DependencyTree::depth).max().expect("non-empty") as f64
            }
            DepthAggregation::MeanOverSentences => {
                trees.iter().map(|t| t.depth() as f64).sum::<f64>() / trees.len() as f64
            }
        };
        total += value;
    }
    Ok(total / trees_per_parser.len() as f64)
}

/// Sentences of one document (one response).
#[derive(Debug, Clone, Default)]
pub struct ConlluDoc {
    pub id: Option<String>,
    pub sentences: Vec<DependencyTree>,
}

/// Parses CoNLL-U text into documents of validated trees.
pub fn parse_conllu(text: &str) -> Result<Vec<ConlluDoc>, MetricsError> {
    let mut docs: Vec<ConlluDoc> = Vec::new();
    let mut current_doc: Option<ConlluDoc> = None;
    let mut pending: Vec<DepNode> = Vec::new();

    fn flush_sentence(
        pending: &mut Vec<DepNode>,
        doc: &mut Option<ConlluDoc>,
        line: usize,
    ) -> Result<(), MetricsError> {
        if pending.is_empty() {
            return Ok(());
        }
        let tree = DependencyTree::new(std::mem::take(pending))
            .map_err(|e| MetricsError::Conllu { line, msg: e.to_string() })?;
        doc.get_or_insert_with(ConlluDoc::default).sentences.push(tree);
        Ok(())
    }

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            flush_sentence(&mut pending, &mut current_doc, line_no)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if comment == "newdoc" || comment.starts_with("newdoc ") || comment.starts_with("newdoc\t") {
                flush_sentence(&mut pending, &mut current_doc, line_no)?;
                if let Some(doc) = current_doc.take() {
                    docs.push(doc);
                }
                let id = comment
                    .strip_prefix("newdoc")
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .and_then(|s| s.strip_prefix("id"))
                    .map(|s| s.trim_start_matches([' ', '=']).trim().to_string())
                    .filter(|s| !s.is_empty());
                current_doc = Some(ConlluDoc { id, sentences: Vec::new() });
            }
            continue;
        }
        let mut cols = line.split('\t');
        let id_col = cols.next().unwrap_or_default();
        // Multiword token ranges and empty nodes carry no HEAD of their own.
        if id_col.contains('-') || id_col.contains('.') {
            continue;
        }
        let id: usize = id_col.parse().map_err(|_| MetricsError::Conllu {
            line: line_no,
            msg: format!("bad token id {id_col:?}"),
        })?;
        let head_col = cols.nth(5).ok_or(MetricsError::Conllu {
            line: line_no,
            msg: "missing HEAD column".into(),
        })?;
        let head: usize = head_col.parse().map_err(|_| MetricsError::Conllu {
            line: line_no,
            msg: format!("bad HEAD value {head_col:?}"),
        })?;
        pending.push(DepNode { id, head });
    }
    flush_sentence(&mut pending, &mut current_doc, usize::MAX)?;
    if let Some(doc) = current_doc.take() {
        docs.push(doc);
    }
    Ok(docs)
}

/// Reads one CoNLL-U file as one parser set.
pub fn load_conllu(path: &Path) -> Result<Vec<ConlluDoc>, MetricsError> {
    let text = std::fs::read_to_string(path)?;
    parse_conllu(&text)
}
