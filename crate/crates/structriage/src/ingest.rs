//! Producing structure trees from (a) the extraction-interchange JSON and
//! (b) a small HTML subset, plus an HTTP client for an external
//! extraction service that emits the interchange format.
//!
//! The interchange format is a flat element list with slash-delimited
//! ancestry paths (`Document/Section[2]/Table[1]`), which round-trips
//! hierarchies without nesting JSON to unbounded depth. See
//! `docs/interchange.md`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc_model::{NodeKind, StructureNode};

/// Schema version accepted by [`parse_interchange`].
pub const SCHEMA_VERSION: &str = "structriage/1";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("unknown schema version `{0}` (expected `{SCHEMA_VERSION}`)")]
    UnknownSchemaVersion(String),
    #[error("invalid element path `{path}`: {detail}")]
    InvalidPath { path: String, detail: String },
    #[error("malformed HTML: {0}")]
    MalformedHtml(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("extraction service returned HTTP {status}: {body}")]
    Service { status: u16, body: String },
    #[error("interchange validation failed: {0}")]
    Validation(String),
}

/// One extracted element. `path` is the ancestry including the element's
/// own segment, rooted at the literal `Document`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterchangeElement {
    pub path: String,
    pub kind: String,
    pub page: u32,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

/// The neutral stand-in for an extraction service's hierarchical output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterchangeDocument {
    pub schema_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub elements: Vec<InterchangeElement>,
}

fn kind_from_str(kind: &str) -> NodeKind {
    match kind.to_ascii_lowercase().as_str() {
        "section" => NodeKind::Section,
        "heading" | "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => NodeKind::Heading,
        "paragraph" | "p" => NodeKind::Paragraph,
        "table" => NodeKind::Table,
        "figure" => NodeKind::Figure,
        "caption" => NodeKind::Caption,
        "listitem" | "li" => NodeKind::ListItem,
        _ => NodeKind::Other,
    }
}

fn kind_to_str(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Section => "Section",
        NodeKind::Heading => "Heading",
        NodeKind::Paragraph => "Paragraph",
        NodeKind::Table => "Table",
        NodeKind::Figure => "Figure",
        NodeKind::Caption => "Caption",
        NodeKind::ListItem => "ListItem",
        NodeKind::Other => "Other",
    }
}

/// Assign canonical pre-order ids (`sec-<n>`, `tbl-<n>`, `fig-<n>`, ...)
/// to every node that does not already have one.
pub fn assign_ids(root: &mut StructureNode) {
    let mut counters: BTreeMap<&'static str, u32> = BTreeMap::new();
    assign_ids_walk(root, &mut counters);
}

fn assign_ids_walk(node: &mut StructureNode, counters: &mut BTreeMap<&'static str, u32>) {
    if node.id.is_empty() {
        let prefix = match node.kind {
            NodeKind::Section => "sec",
            NodeKind::Heading => "h",
            NodeKind::Paragraph => "p",
            NodeKind::Table => "tbl",
            NodeKind::Figure => "fig",
            NodeKind::Caption => "cap",
            NodeKind::ListItem => "li",
            NodeKind::Other => "el",
        };
        let n = counters.entry(prefix).or_insert(0);
        *n += 1;
        node.id = format!("{prefix}-{n}");
    }
    for child in &mut node.children {
        assign_ids_walk(child, counters);
    }
}

/// Widen every node's page range to cover its children.
fn widen_page_ranges(node: &mut StructureNode) {
    for child in &mut node.children {
        widen_page_ranges(child);
        node.page_start = node.page_start.min(child.page_start);
        node.page_end = node.page_end.max(child.page_end);
    }
}

/// Parse interchange JSON bytes into a structure tree.
pub fn parse_interchange(raw: &[u8]) -> Result<StructureNode, IngestError> {
    let doc: InterchangeDocument =
        serde_json::from_slice(raw).map_err(|e| IngestError::MalformedJson(e.to_string()))?;
    interchange_to_tree(&doc)
}

/// Build the structure tree from a parsed interchange document.
///
/// The tree is rooted at a synthetic node of kind `Other` (id `doc`)
/// carrying the document title; elements hang under it per their paths.
pub fn interchange_to_tree(doc: &InterchangeDocument) -> Result<StructureNode, IngestError> {
    if doc.schema_version != SCHEMA_VERSION {
        return Err(IngestError::UnknownSchemaVersion(doc.schema_version.clone()));
    }
    let mut root = StructureNode::new("doc", NodeKind::Other, 1, 1);
    root.title = Some(doc.title.clone().unwrap_or_else(|| "Document".to_string()));

    // path -> position (child index chain from root)
    let mut positions: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for element in &doc.elements {
        let path = element.path.as_str();
        let invalid = |detail: &str| IngestError::InvalidPath {
            path: path.to_string(),
            detail: detail.to_string(),
        };
        let Some(rest) = path.strip_prefix("Document") else {
            return Err(invalid("path must be rooted at `Document`"));
        };
        if element.page == 0 {
            return Err(IngestError::Validation(format!("element `{path}` has page 0")));
        }
        let mut node = StructureNode::new(
            element.attributes.get("id").cloned().unwrap_or_default(),
            kind_from_str(&element.kind),
            element.page,
            element
                .attributes
                .get("page_end")
                .and_then(|v| v.parse().ok())
                .unwrap_or(element.page),
        );
        node.text = element.text.clone();
        node.title = element.attributes.get("title").cloned();
        node.level = element.attributes.get("level").and_then(|v| v.parse().ok());
        if node.kind == NodeKind::Section && node.title.is_none() {
            node.title = Some(node.text.clone());
        }

        if rest.is_empty() {
            // The root element itself; fold into the synthetic root.
            if !node.text.is_empty() {
                root.text = node.text;
            }
            if node.title.is_some() {
                root.title = node.title;
            }
            continue;
        }
        let parent_end = path.rfind('/').ok_or_else(|| invalid("missing `/` separator"))?;
        let parent_path = &path[..parent_end];
        let parent_chain: Vec<usize> = if parent_path == "Document" {
            Vec::new()
        } else {
            positions
                .get(parent_path)
                .ok_or_else(|| invalid("parent element never declared"))?
                .clone()
        };
        let parent = node_at_mut(&mut root, &parent_chain);
        parent.children.push(node);
        let child_index = parent.children.len() - 1;
        let mut chain = parent_chain;
        chain.push(child_index);
        positions.insert(path, chain);
    }

    if root.children.is_empty() && doc.elements.is_empty() {
        return Err(IngestError::Validation("document has no elements".into()));
    }
    widen_page_ranges(&mut root);
    assign_ids(&mut root);
    Ok(root)
}

fn node_at_mut<'a>(root: &'a mut StructureNode, chain: &[usize]) -> &'a mut StructureNode {
    let mut node = root;
    for &i in chain {
        node = &mut node.children[i];
    }
    node
}

/// Inverse of [`interchange_to_tree`]: flatten a tree back to the
/// interchange format. Node ids are preserved in element attributes.
pub fn emit_interchange(root: &StructureNode) -> InterchangeDocument {
    let mut elements = Vec::new();
    let mut sibling_counters: BTreeMap<String, u32> = BTreeMap::new();
    for child in &root.children {
        emit_walk(child, "Document", &mut sibling_counters, &mut elements);
    }
    InterchangeDocument {
        schema_version: SCHEMA_VERSION.to_string(),
        title: root.title.clone(),
        elements,
    }
}

fn emit_walk(
    node: &StructureNode,
    parent_path: &str,
    counters: &mut BTreeMap<String, u32>,
    out: &mut Vec<InterchangeElement>,
) {
    let kind = kind_to_str(node.kind);
    let counter_key = format!("{parent_path}/{kind}");
    let n = counters.entry(counter_key).or_insert(0);
    *n += 1;
    let path = format!("{parent_path}/{kind}[{n}]");

    let mut attributes = BTreeMap::new();
    attributes.insert("id".to_string(), node.id.clone());
    if let Some(title) = &node.title {
        attributes.insert("title".to_string(), title.clone());
    }
    if let Some(level) = node.level {
        attributes.insert("level".to_string(), level.to_string());
    }
    if node.page_end != node.page_start {
        attributes.insert("page_end".to_string(), node.page_end.to_string());
    }
    out.push(InterchangeElement {
        path: path.clone(),
        kind: kind.to_string(),
        page: node.page_start,
        text: node.text.clone(),
        attributes,
    });
    for child in &node.children {
        emit_walk(child, &path, counters, out);
    }
}

// --- HTML subset parser ----------------------------------------------------

#[derive(Debug, PartialEq)]
enum HtmlEvent {
    Open(String, BTreeMap<String, String>),
    Close(String),
    Text(String),
}

fn tokenize_html(html: &str) -> Result<Vec<HtmlEvent>, IngestError> {
    let mut events = Vec::new();
    let mut rest = html;
    while let Some(lt) = rest.find('<') {
        let (text, tail) = rest.split_at(lt);
        if !text.trim().is_empty() {
            events.push(HtmlEvent::Text(text.trim().to_string()));
        }
        let gt = tail
            .find('>')
            .ok_or_else(|| IngestError::MalformedHtml("unterminated tag".into()))?;
        let inner = &tail[1..gt];
        rest = &tail[gt + 1..];
        if inner.starts_with('!') {
            continue; // comment or doctype
        }
        if let Some(name) = inner.strip_prefix('/') {
            events.push(HtmlEvent::Close(name.trim().to_ascii_lowercase()));
            continue;
        }
        let self_closing = inner.ends_with('/');
        let inner = inner.trim_end_matches('/');
        let mut parts = inner.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| IngestError::MalformedHtml("empty tag".into()))?
            .to_ascii_lowercase();
        let mut attrs = BTreeMap::new();
        for part in parts {
            if let Some((key, value)) = part.split_once('=') {
                attrs.insert(
                    key.to_ascii_lowercase(),
                    value.trim_matches(|c| c == '"' || c == '\'').to_string(),
                );
            }
        }
        if !self_closing {
            events.push(HtmlEvent::Open(name, attrs));
        }
    }
    if !rest.trim().is_empty() {
        events.push(HtmlEvent::Text(rest.trim().to_string()));
    }
    Ok(events)
}

const STRUCTURAL_TAGS: &[&str] = &[
    "h1", "h2", "h3", "h4", "h5", "h6", "p", "table", "tr", "td", "th", "caption", "figure",
    "figcaption", "ol", "ul", "li",
];

/// Parse the declared HTML subset (h1-h6, p, table, figure/figcaption,
/// ol/ul/li) into a structure tree. Unknown inline tags are stripped;
/// `data-page` attributes set the current page (default 1).
pub fn parse_html_lite(html: &str) -> Result<StructureNode, IngestError> {
    let events = tokenize_html(html)?;
    let mut parser = HtmlTreeBuilder::new();
    let mut i = 0;
    while i < events.len() {
        i = parser.step(&events, i)?;
    }
    parser.finish()
}

struct HtmlTreeBuilder {
    /// Open sections, outermost first. Index 0 is the synthetic container.
    stack: Vec<StructureNode>,
    page: u32,
    saw_heading: bool,
}

impl HtmlTreeBuilder {
    fn new() -> Self {
        let container = StructureNode::new("", NodeKind::Other, 1, 1);
        Self { stack: vec![container], page: 1, saw_heading: false }
    }

    fn set_page(&mut self, attrs: &BTreeMap<String, String>) {
        if let Some(page) = attrs.get("data-page").and_then(|v| v.parse().ok()) {
            self.page = page;
        }
    }

    fn push_leaf(&mut self, node: StructureNode) {
        self.stack.last_mut().expect("container present").children.push(node);
    }

    fn close_sections_at_or_below(&mut self, level: u32) {
        while self.stack.len() > 1 {
            let top_level = self.stack.last().unwrap().level.unwrap_or(1);
            if top_level < level {
                break;
            }
            let done = self.stack.pop().unwrap();
            self.stack.last_mut().unwrap().children.push(done);
        }
    }

    /// Collect text until the matching close tag, stripping nested tags.
    fn inline_text(events: &[HtmlEvent], start: usize, tag: &str) -> Result<(String, usize), IngestError> {
        let mut text = String::new();
        let mut i = start;
        let mut depth = 1;
        while i < events.len() {
            match &events[i] {
                HtmlEvent::Text(t) => {
                    if !text.is_empty() {
                        text.push(' ');
                    }
                    text.push_str(t);
                }
                HtmlEvent::Open(name, _) if name == tag => depth += 1,
                HtmlEvent::Close(name) if name == tag => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok((text, i + 1));
                    }
                }
                _ => {}
            }
            i += 1;
        }
        Err(IngestError::MalformedHtml(format!("unclosed <{tag}>")))
    }

    fn step(&mut self, events: &[HtmlEvent], i: usize) -> Result<usize, IngestError> {
        match &events[i] {
            HtmlEvent::Text(_) => Ok(i + 1),
            HtmlEvent::Close(name) => {
                if STRUCTURAL_TAGS.contains(&name.as_str()) && !name.starts_with('h') {
                    return Err(IngestError::MalformedHtml(format!("unexpected </{name}>")));
                }
                Ok(i + 1)
            }
            HtmlEvent::Open(name, attrs) => match name.as_str() {
                "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => {
                    self.set_page(attrs);
                    let level: u32 = name[1..].parse().expect("digit");
                    let (title, next) = Self::inline_text(events, i + 1, name)?;
                    self.close_sections_at_or_below(level);
                    let mut section = StructureNode::new("", NodeKind::Section, self.page, self.page);
                    section.title = Some(title);
                    section.level = Some(level);
                    self.stack.push(section);
                    self.saw_heading = true;
                    Ok(next)
                }
                "p" => {
                    self.set_page(attrs);
                    let (text, next) = Self::inline_text(events, i + 1, "p")?;
                    let mut node = StructureNode::new("", NodeKind::Paragraph, self.page, self.page);
                    node.text = text;
                    self.push_leaf(node);
                    Ok(next)
                }
                "ol" | "ul" => {
                    self.set_page(attrs);
                    self.parse_list(events, i + 1, name.clone())
                }
                "table" => {
                    self.set_page(attrs);
                    self.parse_table(events, i + 1)
                }
                "figure" => {
                    self.set_page(attrs);
                    self.parse_figure(events, i + 1)
                }
                other if STRUCTURAL_TAGS.contains(&other) => Err(IngestError::MalformedHtml(
                    format!("<{other}> outside its container"),
                )),
                _ => Ok(i + 1), // unknown inline tag, skipped
            },
        }
    }

    fn parse_list(&mut self, events: &[HtmlEvent], start: usize, list_tag: String) -> Result<usize, IngestError> {
        let mut i = start;
        loop {
            match events.get(i) {
                Some(HtmlEvent::Open(name, attrs)) if name == "li" => {
                    self.set_page(attrs);
                    let (text, next) = Self::inline_text(events, i + 1, "li")?;
                    let mut node = StructureNode::new("", NodeKind::ListItem, self.page, self.page);
                    node.text = text;
                    self.push_leaf(node);
                    i = next;
                }
                Some(HtmlEvent::Close(name)) if *name == list_tag => return Ok(i + 1),
                Some(HtmlEvent::Text(_)) => i += 1,
                _ => return Err(IngestError::MalformedHtml(format!("unclosed <{list_tag}>"))),
            }
        }
    }

    fn parse_table(&mut self, events: &[HtmlEvent], start: usize) -> Result<usize, IngestError> {
        let mut table = StructureNode::new("", NodeKind::Table, self.page, self.page);
        let mut i = start;
        loop {
            match events.get(i) {
                Some(HtmlEvent::Open(name, _)) if name == "caption" => {
                    let (text, next) = Self::inline_text(events, i + 1, "caption")?;
                    table.text = text;
                    i = next;
                }
                Some(HtmlEvent::Open(name, _)) if name == "tr" => {
                    let (cells, header, next) = Self::parse_row(events, i + 1)?;
                    let row_line = format!("| {} |", cells.join(" | "));
                    let mut row = StructureNode::new("", NodeKind::Other, self.page, self.page);
                    row.text = row_line;
                    let cell_count = cells.len();
                    table.children.push(row);
                    if header {
                        let mut sep = StructureNode::new("", NodeKind::Other, self.page, self.page);
                        sep.text = format!("|{}", " --- |".repeat(cell_count));
                        table.children.push(sep);
                    }
                    i = next;
                }
                Some(HtmlEvent::Close(name)) if name == "table" => {
                    self.push_leaf(table);
                    return Ok(i + 1);
                }
                Some(HtmlEvent::Text(_)) | Some(HtmlEvent::Open(_, _)) | Some(HtmlEvent::Close(_)) => i += 1,
                None => return Err(IngestError::MalformedHtml("unclosed <table>".into())),
            }
        }
    }

    fn parse_row(events: &[HtmlEvent], start: usize) -> Result<(Vec<String>, bool, usize), IngestError> {
        let mut cells = Vec::new();
        let mut header = false;
        let mut i = start;
        loop {
            match events.get(i) {
                Some(HtmlEvent::Open(name, _)) if name == "td" || name == "th" => {
                    header |= name == "th";
                    let tag = name.clone();
                    let (text, next) = Self::inline_text(events, i + 1, &tag)?;
                    cells.push(text);
                    i = next;
                }
                Some(HtmlEvent::Close(name)) if name == "tr" => return Ok((cells, header, i + 1)),
                Some(HtmlEvent::Text(_)) => i += 1,
                _ => return Err(IngestError::MalformedHtml("unclosed <tr>".into())),
            }
        }
    }

    fn parse_figure(&mut self, events: &[HtmlEvent], start: usize) -> Result<usize, IngestError> {
        let mut figure = StructureNode::new("", NodeKind::Figure, self.page, self.page);
        let mut i = start;
        loop {
            match events.get(i) {
                Some(HtmlEvent::Open(name, _)) if name == "figcaption" => {
                    let (text, next) = Self::inline_text(events, i + 1, "figcaption")?;
                    figure.text = text;
                    i = next;
                }
                Some(HtmlEvent::Close(name)) if name == "figure" => {
                    self.push_leaf(figure);
                    return Ok(i + 1);
                }
                Some(_) => i += 1,
                None => return Err(IngestError::MalformedHtml("unclosed <figure>".into())),
            }
        }
    }

    fn finish(mut self) -> Result<StructureNode, IngestError> {
        while self.stack.len() > 1 {
            let done = self.stack.pop().unwrap();
            self.stack.last_mut().unwrap().children.push(done);
        }
        let mut container = self.stack.pop().unwrap();
        let mut root = if !self.saw_heading {
            // No headings: the whole document is one implicit section.
            container.kind = NodeKind::Section;
            container.title = Some("Document".to_string());
            container.level = Some(1);
            container
        } else if container.children.len() == 1
            && container.children[0].kind == NodeKind::Section
        {
            container.children.pop().unwrap()
        } else {
            container.title = Some("Document".to_string());
            container
        };
        widen_page_ranges(&mut root);
        assign_ids(&mut root);
        Ok(root)
    }
}

/// POST document bytes to an extraction service and validate the
/// interchange JSON it returns. No retries; callers own retry policy.
pub fn fetch_extraction(endpoint: &str, document: &[u8]) -> Result<InterchangeDocument, IngestError> {
    let client = reqwest::blocking::Client::new();
    let response = client
        .post(endpoint)
        .header("content-type", "application/octet-stream")
        .body(document.to_vec())
        .send()
        .map_err(|e| IngestError::Network(e.to_string()))?;
    let status = response.status().as_u16();
    let body = response.text().map_err(|e| IngestError::Network(e.to_string()))?;
    if status >= 400 {
        return Err(IngestError::Service { status, body });
    }
    let doc: InterchangeDocument =
        serde_json::from_str(&body).map_err(|e| IngestError::Validation(e.to_string()))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(IngestError::UnknownSchemaVersion(doc.schema_version));
    }
    if let Some(bad) = doc.elements.iter().find(|e| e.page == 0) {
        return Err(IngestError::Validation(format!("element `{}` has page 0", bad.path)));
    }
    // Path validity is checked the same way parsing does.
    interchange_to_tree(&doc)?;
    Ok(doc)
}
