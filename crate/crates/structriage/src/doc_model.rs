//! Document structure tree, the index over it, and the metadata prompt.
//!
//! The tree mirrors what a structure extractor produces: sections with
//! levels and titles, paragraphs, tables, figures, each carrying a 1-based
//! page span and markdown text. [`DocumentIndex`] is an immutable lookup
//! built once per document; [`to_metadata`] renders the skeleton JSON that
//! seeds the LLM's system prompt.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::count_tokens;

/// Kind of a structural element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Section,
    Heading,
    Paragraph,
    Table,
    Figure,
    Caption,
    ListItem,
    Other,
}

/// One element of the document tree.
///
/// For `Table` and `Figure` nodes, `text` holds the caption; table rows
/// live in child nodes as pipe-delimited markdown lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureNode {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    pub page_start: u32,
    pub page_end: u32,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub children: Vec<StructureNode>,
}

impl StructureNode {
    pub fn new(id: impl Into<String>, kind: NodeKind, page_start: u32, page_end: u32) -> Self {
        Self {
            id: id.into(),
            kind,
            title: None,
            level: None,
            page_start,
            page_end,
            text: String::new(),
            children: Vec::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DocModelError {
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("node `{child}` pages {child_start}-{child_end} outside parent `{parent}` pages {parent_start}-{parent_end}")]
    InvalidPageRange {
        child: String,
        child_start: u32,
        child_end: u32,
        parent: String,
        parent_start: u32,
        parent_end: u32,
    },
    #[error("page {page} out of range 1..={page_count}")]
    PageOutOfRange { page: u32, page_count: u32 },
}

/// A node flattened into pre-order position, with its subtree extent.
#[derive(Debug, Clone)]
struct FlatNode {
    id: String,
    kind: NodeKind,
    title: Option<String>,
    level: Option<u32>,
    page_start: u32,
    page_end: u32,
    text: String,
    /// Exclusive end of this node's subtree in the pre-order flat list.
    subtree_end: usize,
}

/// Immutable lookup over a [`StructureNode`] tree.
///
/// Safe to share across threads; all accessors are read-only.
#[derive(Debug, Clone)]
pub struct DocumentIndex {
    root: StructureNode,
    flat: Vec<FlatNode>,
    by_id: BTreeMap<String, usize>,
    sections: Vec<usize>,
    tables: Vec<usize>,
    figures: Vec<usize>,
    /// page number -> pre-order positions of text-bearing nodes on that page
    by_page: BTreeMap<u32, Vec<usize>>,
    page_count: u32,
}

/// Build the index, validating id uniqueness and page-range nesting.
pub fn build_index(root: StructureNode) -> Result<DocumentIndex, DocModelError> {
    let mut flat: Vec<FlatNode> = Vec::new();
    flatten(&root, None, &mut flat)?;

    let mut by_id = BTreeMap::new();
    let mut sections = Vec::new();
    let mut tables = Vec::new();
    let mut figures = Vec::new();
    let mut page_count = 1u32;
    for (pos, node) in flat.iter().enumerate() {
        if by_id.insert(node.id.clone(), pos).is_some() {
            return Err(DocModelError::DuplicateId(node.id.clone()));
        }
        match node.kind {
            NodeKind::Section => sections.push(pos),
            NodeKind::Table => tables.push(pos),
            NodeKind::Figure => figures.push(pos),
            _ => {}
        }
        page_count = page_count.max(node.page_end);
    }

    let mut by_page: BTreeMap<u32, Vec<usize>> = (1..=page_count).map(|p| (p, Vec::new())).collect();
    for (pos, node) in flat.iter().enumerate() {
        if node.text.is_empty() {
            continue;
        }
        for page in node.page_start..=node.page_end {
            by_page.get_mut(&page).expect("page within count").push(pos);
        }
    }

    Ok(DocumentIndex {
        root,
        flat,
        by_id,
        sections,
        tables,
        figures,
        by_page,
        page_count,
    })
}

fn flatten(
    node: &StructureNode,
    parent: Option<&StructureNode>,
    out: &mut Vec<FlatNode>,
) -> Result<(), DocModelError> {
    if node.page_start > node.page_end {
        return Err(DocModelError::InvalidPageRange {
            child: node.id.clone(),
            child_start: node.page_start,
            child_end: node.page_end,
            parent: node.id.clone(),
            parent_start: node.page_start,
            parent_end: node.page_end,
        });
    }
    if let Some(p) = parent {
        if node.page_start < p.page_start || node.page_end > p.page_end {
            return Err(DocModelError::InvalidPageRange {
                child: node.id.clone(),
                child_start: node.page_start,
                child_end: node.page_end,
                parent: p.id.clone(),
                parent_start: p.page_start,
                parent_end: p.page_end,
            });
        }
    }
    let pos = out.len();
    out.push(FlatNode {
        id: node.id.clone(),
        kind: node.kind,
        title: node.title.clone(),
        level: node.level,
        page_start: node.page_start,
        page_end: node.page_end,
        text: node.text.clone(),
        subtree_end: 0,
    });
    for child in &node.children {
        flatten(child, Some(node), out)?;
    }
    let end = out.len();
    out[pos].subtree_end = end;
    Ok(())
}

impl DocumentIndex {
    pub fn root(&self) -> &StructureNode {
        &self.root
    }

    pub fn page_count(&self) -> u32 {
        self.page_count
    }

    pub fn section_ids(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|&p| self.flat[p].id.as_str())
    }

    pub fn table_ids(&self) -> impl Iterator<Item = &str> {
        self.tables.iter().map(|&p| self.flat[p].id.as_str())
    }

    pub fn figure_ids(&self) -> impl Iterator<Item = &str> {
        self.figures.iter().map(|&p| self.flat[p].id.as_str())
    }

    pub fn contains_section(&self, id: &str) -> bool {
        self.pos_of_kind(id, NodeKind::Section).is_some()
    }

    fn pos_of_kind(&self, id: &str, kind: NodeKind) -> Option<usize> {
        let pos = *self.by_id.get(id)?;
        (self.flat[pos].kind == kind).then_some(pos)
    }

    /// All text on one page, in document order, blank-line separated.
    pub fn page_text(&self, page: u32) -> Result<String, DocModelError> {
        let positions = self
            .by_page
            .get(&page)
            .ok_or(DocModelError::PageOutOfRange {
                page,
                page_count: self.page_count,
            })?;
        Ok(positions
            .iter()
            .map(|&p| self.flat[p].text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n"))
    }

    /// Markdown rendering of a section: heading line, then the subtree's
    /// content in document order. `None` if the id is not a section.
    pub fn section_markdown(&self, id: &str) -> Option<String> {
        let pos = self.pos_of_kind(id, NodeKind::Section)?;
        Some(self.render_range(pos, self.flat[pos].subtree_end))
    }

    /// Caption plus pipe-delimited rows for a table. `None` if not a table.
    pub fn table_markdown(&self, id: &str) -> Option<String> {
        let pos = self.pos_of_kind(id, NodeKind::Table)?;
        let node = &self.flat[pos];
        let mut parts: Vec<&str> = Vec::new();
        if !node.text.is_empty() {
            parts.push(&node.text);
        }
        for row in &self.flat[pos + 1..node.subtree_end] {
            if !row.text.is_empty() {
                parts.push(&row.text);
            }
        }
        Some(parts.join("\n"))
    }

    /// A figure's caption text. `None` if the id is not a figure.
    pub fn figure_caption(&self, id: &str) -> Option<&str> {
        let pos = self.pos_of_kind(id, NodeKind::Figure)?;
        Some(self.flat[pos].text.as_str())
    }

    fn render_range(&self, start: usize, end: usize) -> String {
        let mut blocks: Vec<String> = Vec::new();
        let mut pos = start;
        while pos < end {
            let node = &self.flat[pos];
            match node.kind {
                NodeKind::Section | NodeKind::Heading => {
                    if let Some(title) = &node.title {
                        let level = node.level.unwrap_or(1).max(1) as usize;
                        blocks.push(format!("{} {}", "#".repeat(level), title));
                    }
                    pos += 1;
                }
                NodeKind::Table => {
                    blocks.push(self.table_markdown(&node.id).expect("kind checked"));
                    pos = node.subtree_end;
                }
                _ => {
                    if !node.text.is_empty() {
                        blocks.push(node.text.clone());
                    }
                    pos += 1;
                }
            }
        }
        blocks.join("\n\n")
    }
}

/// The JSON structure skeleton handed to the model as its initial prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataPrompt {
    pub body: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MetadataOptions {
    /// Include paragraph bodies in the skeleton. Off by default; the
    /// skeleton stays small and the model fetches bodies on demand.
    pub include_paragraph_bodies: bool,
}

#[derive(Serialize)]
struct SectionMeta<'a> {
    id: &'a str,
    title: &'a str,
    level: u32,
    pages: [u32; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    paragraphs: Option<Vec<&'a str>>,
}

#[derive(Serialize)]
struct CaptionedMeta<'a> {
    id: &'a str,
    caption: &'a str,
    pages: [u32; 2],
}

#[derive(Serialize)]
struct DocMeta<'a> {
    page_count: u32,
    sections: Vec<SectionMeta<'a>>,
    tables: Vec<CaptionedMeta<'a>>,
    figures: Vec<CaptionedMeta<'a>>,
}

/// Render the structure skeleton with default options.
pub fn to_metadata(index: &DocumentIndex) -> MetadataPrompt {
    to_metadata_with(index, MetadataOptions::default())
}

pub fn to_metadata_with(index: &DocumentIndex, opts: MetadataOptions) -> MetadataPrompt {
    let sections = index
        .sections
        .iter()
        .map(|&pos| {
            let node = &index.flat[pos];
            let paragraphs = opts.include_paragraph_bodies.then(|| {
                index.flat[pos + 1..node.subtree_end]
                    .iter()
                    .filter(|n| n.kind == NodeKind::Paragraph && !n.text.is_empty())
                    .map(|n| n.text.as_str())
                    .collect()
            });
            SectionMeta {
                id: &node.id,
                title: node.title.as_deref().unwrap_or(""),
                level: node.level.unwrap_or(1),
                pages: [node.page_start, node.page_end],
                paragraphs,
            }
        })
        .collect();
    let captioned = |positions: &[usize]| -> Vec<CaptionedMeta<'_>> {
        positions
            .iter()
            .map(|&pos| {
                let node = &index.flat[pos];
                CaptionedMeta {
                    id: &node.id,
                    caption: &node.text,
                    pages: [node.page_start, node.page_end],
                }
            })
            .collect()
    };
    let meta = DocMeta {
        page_count: index.page_count,
        sections,
        tables: captioned(&index.tables),
        figures: captioned(&index.figures),
    };
    let body = serde_json::to_string_pretty(&meta).expect("skeleton serializes");
    let token_count = count_tokens(&body);
    MetadataPrompt { body, token_count }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn para(id: &str, page: u32, text: &str) -> StructureNode {
        let mut n = StructureNode::new(id, NodeKind::Paragraph, page, page);
        n.text = text.to_string();
        n
    }

    fn section(id: &str, title: &str, ps: u32, pe: u32, children: Vec<StructureNode>) -> StructureNode {
        let mut n = StructureNode::new(id, NodeKind::Section, ps, pe);
        n.title = Some(title.to_string());
        n.level = Some(1);
        n.children = children;
        n
    }

    #[test]
    fn minimal_tree_indexes() {
        let root = section("s1", "Intro", 1, 1, vec![para("p1", 1, "hello world")]);
        let index = build_index(root).unwrap();
        assert_eq!(index.page_count(), 1);
        assert_eq!(index.section_ids().collect::<Vec<_>>(), vec!["s1"]);
        assert_eq!(index.table_ids().count(), 0);
        assert_eq!(index.figure_ids().count(), 0);
    }

    #[test]
    fn duplicate_id_rejected() {
        let root = section("s1", "A", 1, 2, vec![section("s1", "B", 1, 1, vec![])]);
        assert_eq!(
            build_index(root).unwrap_err(),
            DocModelError::DuplicateId("s1".into())
        );
    }

    #[test]
    fn child_outside_parent_range_rejected() {
        let root = section("s1", "A", 1, 1, vec![para("p1", 3, "x")]);
        assert!(matches!(
            build_index(root).unwrap_err(),
            DocModelError::InvalidPageRange { .. }
        ));
    }

    #[test]
    fn page_zero_out_of_range() {
        let root = section("s1", "A", 1, 1, vec![]);
        let index = build_index(root).unwrap();
        assert!(matches!(
            index.page_text(0),
            Err(DocModelError::PageOutOfRange { page: 0, .. })
        ));
    }

    #[test]
    fn empty_page_yields_empty_string() {
        let root = section("s1", "A", 1, 3, vec![para("p1", 1, "x")]);
        let index = build_index(root).unwrap();
        assert_eq!(index.page_text(2).unwrap(), "");
    }

    #[test]
    fn metadata_of_childless_root() {
        let root = section("s1", "Only", 1, 1, vec![]);
        let index = build_index(root).unwrap();
        let meta = to_metadata(&index);
        let value: serde_json::Value = serde_json::from_str(&meta.body).unwrap();
        assert_eq!(value["sections"].as_array().unwrap().len(), 1);
        assert_eq!(value["tables"].as_array().unwrap().len(), 0);
        assert_eq!(value["figures"].as_array().unwrap().len(), 0);
        assert_eq!(meta.token_count, count_tokens(&meta.body));
    }

    #[test]
    fn metadata_escapes_quotes() {
        let mut table = StructureNode::new("t1", NodeKind::Table, 1, 1);
        table.text = "caption with \"quotes\" inside".to_string();
        let root = section("s1", "A", 1, 1, vec![table]);
        let index = build_index(root).unwrap();
        let meta = to_metadata(&index);
        assert!(serde_json::from_str::<serde_json::Value>(&meta.body).is_ok());
    }

    #[test]
    fn metadata_deterministic() {
        let root = section("s1", "A", 1, 1, vec![para("p1", 1, "x")]);
        let a = to_metadata(&build_index(root.clone()).unwrap());
        let b = to_metadata(&build_index(root).unwrap());
        assert_eq!(a.body, b.body);
    }
}
