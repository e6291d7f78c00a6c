//! Controlled-language query parser.
//!
//! ```text
//! query       := boilerplate? clause ( ("," | "and" | ", and") clause )*
//! boilerplate := "find images with" | "find images where" | "show me images with"
//!              | "show me images where" | "show me" | "images with" | "images where"
//! clause      := np ( filler? relphrase np )?
//! filler      := "is" | "are" | "that is" | "that are" | "which is" | "which are"
//! np          := article? adj* noun
//! adj         := color | shape | "big" | "large" | "small" | "tiny"
//! ```
//!
//! Relation phrases are matched longest first, so `on top of` is never read
//! as `on`. A noun is one word or a known multiword noun such as
//! `trash can`. Two noun phrases with the same label and the same stated
//! attributes denote one node.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::Predicate;
use crate::vocab::Vocabulary;

/// Short grammar reminder printed next to parse errors.
pub const GRAMMAR_HINT: &str = "queries look like `red ball on a table`, `a car in front of a building and a tree`; \
relations: above, over, below, under, on, on top of, left of, right of, in front of, behind, in, inside, \
containing, near, next to, bigger than, smaller than";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeWord {
    Big,
    Small,
}

impl SizeWord {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeWord::Big => "big",
            SizeWord::Small => "small",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryNode {
    pub node_id: u32,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_word: Option<SizeWord>,
}

impl QueryNode {
    pub fn new(node_id: u32, label: impl Into<String>) -> Self {
        QueryNode {
            node_id,
            label: label.into(),
            color: None,
            shape: None,
            size_word: None,
        }
    }

    pub fn with_color(mut self, color: impl Into<String>) -> Self {
        self.color = Some(color.into());
        self
    }

    pub fn with_shape(mut self, shape: impl Into<String>) -> Self {
        self.shape = Some(shape.into());
        self
    }

    pub fn with_size(mut self, size: SizeWord) -> Self {
        self.size_word = Some(size);
        self
    }

    /// Number of stated attributes (color, shape, size).
    pub fn attribute_count(&self) -> usize {
        self.color.is_some() as usize + self.shape.is_some() as usize + self.size_word.is_some() as usize
    }

    fn description(&self) -> (&str, Option<&str>, Option<&str>, Option<SizeWord>) {
        (&self.label, self.color.as_deref(), self.shape.as_deref(), self.size_word)
    }
}

impl fmt::Display for QueryNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = self.size_word {
            write!(f, "{} ", s.as_str())?;
        }
        if let Some(c) = &self.color {
            write!(f, "{c} ")?;
        }
        if let Some(s) = &self.shape {
            write!(f, "{s} ")?;
        }
        f.write_str(&self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryEdge {
    pub from_node: u32,
    pub predicate: Predicate,
    pub to_node: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGraph {
    pub nodes: Vec<QueryNode>,
    pub edges: Vec<QueryEdge>,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty query")]
    EmptyQuery,
    #[error("at byte {position}: {message}")]
    Syntax {
        /// Byte offset into the query text; equal to its length when the
        /// query ended too early.
        position: usize,
        token: Option<String>,
        message: String,
    },
}

impl ParseError {
    pub fn position(&self) -> Option<usize> {
        match self {
            ParseError::EmptyQuery => None,
            ParseError::Syntax { position, .. } => Some(*position),
        }
    }
}

const BOILERPLATE: [&[&str]; 7] = [
    &["show", "me", "images", "where"],
    &["show", "me", "images", "with"],
    &["find", "images", "where"],
    &["find", "images", "with"],
    &["images", "where"],
    &["images", "with"],
    &["show", "me"],
];

const FILLERS: [&[&str]; 6] = [
    &["that", "is"],
    &["that", "are"],
    &["which", "is"],
    &["which", "are"],
    &["is"],
    &["are"],
];

const RELPHRASES: [(&[&str], Predicate); 19] = [
    (&["to", "the", "left", "of"], Predicate::LeftOf),
    (&["to", "the", "right", "of"], Predicate::RightOf),
    (&["in", "front", "of"], Predicate::InFrontOf),
    (&["on", "top", "of"], Predicate::On),
    (&["left", "of"], Predicate::LeftOf),
    (&["right", "of"], Predicate::RightOf),
    (&["next", "to"], Predicate::Near),
    (&["bigger", "than"], Predicate::BiggerThan),
    (&["smaller", "than"], Predicate::SmallerThan),
    (&["above"], Predicate::Above),
    (&["over"], Predicate::Above),
    (&["below"], Predicate::Below),
    (&["under"], Predicate::Below),
    (&["on"], Predicate::On),
    (&["behind"], Predicate::Behind),
    (&["inside"], Predicate::Inside),
    (&["in"], Predicate::Inside),
    (&["containing"], Predicate::Contains),
    (&["near"], Predicate::Near),
];

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Canonical surface form of a predicate.
pub fn relation_phrase(p: Predicate) -> &'static str {
    match p {
        Predicate::Above => "above",
        Predicate::Below => "below",
        Predicate::On => "on",
        Predicate::LeftOf => "left of",
        Predicate::RightOf => "right of",
        Predicate::InFrontOf => "in front of",
        Predicate::Behind => "behind",
        Predicate::Inside => "inside",
        Predicate::Contains => "containing",
        Predicate::Near => "near",
        Predicate::BiggerThan => "bigger than",
        Predicate::SmallerThan => "smaller than",
    }
}

fn size_word(w: &str) -> Option<SizeWord> {
    match w {
        "big" | "large" => Some(SizeWord::Big),
        "small" | "tiny" => Some(SizeWord::Small),
        _ => None,
    }
}

/// Words that can never start or continue a noun.
fn is_reserved(w: &str) -> bool {
    w == "and"
        || ARTICLES.contains(&w)
        || FILLERS.iter().any(|f| f[0] == w)
        || RELPHRASES.iter().any(|(p, _)| p[0] == w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Word,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    kind: Kind,
    text: String,
    raw: String,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == ',' {
            chars.next();
            out.push(Token {
                kind: Kind::Comma,
                text: ",".into(),
                raw: ",".into(),
                pos: i,
            });
        } else if c.is_alphanumeric() || c == '-' || c == '\'' {
            let mut end = i;
            while let Some(&(j, d)) = chars.peek() {
                if d.is_alphanumeric() || d == '-' || d == '\'' {
                    end = j + d.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            out.push(Token {
                kind: Kind::Word,
                text: text[i..end].to_lowercase(),
                raw: text[i..end].to_string(),
                pos: i,
            });
        } else if matches!(c, '.' | '?' | '!')
            && text[i..].chars().all(|d| d.is_whitespace() || matches!(d, '.' | '?' | '!'))
        {
            break;
        } else {
            return Err(ParseError::Syntax {
                position: i,
                token: Some(c.to_string()),
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    at: usize,
    end: usize,
    vocab: &'a Vocabulary,
    nodes: Vec<QueryNode>,
    edges: Vec<QueryEdge>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn word_at(&self, i: usize) -> Option<&str> {
        self.tokens
            .get(i)
            .filter(|t| t.kind == Kind::Word)
            .map(|t| t.text.as_str())
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let (position, token) = match self.peek() {
            Some(t) => (t.pos, Some(t.raw.clone())),
            None => (self.end, None),
        };
        ParseError::Syntax {
            position,
            token,
            message: message.into(),
        }
    }

    fn error_at(&self, i: usize, message: impl Into<String>) -> ParseError {
        let t = &self.tokens[i];
        ParseError::Syntax {
            position: t.pos,
            token: Some(t.raw.clone()),
            message: message.into(),
        }
    }

    fn matches(&self, phrase: &[&str]) -> bool {
        phrase
            .iter()
            .enumerate()
            .all(|(k, w)| self.word_at(self.at + k) == Some(w))
    }

    fn eat_longest<T: Copy>(&mut self, table: &[(&[&str], T)]) -> Option<T> {
        // tables are ordered longest first
        let (phrase, value) = table.iter().find(|(p, _)| self.matches(p))?;
        self.at += phrase.len();
        Some(*value)
    }

    /// A plain word that may be part of a noun phrase.
    fn is_content_word(&self, i: usize) -> bool {
        self.word_at(i).is_some_and(|w| !is_reserved(w))
    }

    fn query(&mut self) -> Result<(), ParseError> {
        if let Some(p) = BOILERPLATE.iter().find(|p| self.matches(p)) {
            self.at += p.len();
        }
        loop {
            self.clause()?;
            match self.peek() {
                None => return Ok(()),
                Some(t) if t.kind == Kind::Comma => {
                    self.at += 1;
                    if self.word_at(self.at) == Some("and") {
                        self.at += 1;
                    }
                }
                Some(t) if t.text == "and" => self.at += 1,
                Some(_) => return Err(self.error("expected `and`, `,` or the end of the query")),
            }
        }
    }

    fn clause(&mut self) -> Result<(), ParseError> {
        let subject = self.np()?;
        let at_boundary = match self.peek() {
            None => true,
            Some(t) => t.kind == Kind::Comma || t.text == "and",
        };
        if at_boundary {
            return Ok(());
        }
        let filler_at = self.at;
        let filler = FILLERS.iter().find(|f| self.matches(f)).map(|f| f.len());
        if let Some(n) = filler {
            self.at += n;
        }
        let rel_at = self.at;
        let table: Vec<(&[&str], Predicate)> = RELPHRASES.to_vec();
        let Some(predicate) = self.eat_longest(&table) else {
            return Err(if filler.is_some() {
                let after = &self.tokens[filler_at..self.at];
                let words: Vec<&str> = after.iter().map(|t| t.raw.as_str()).collect();
                self.error(format!("expected a relation after `{}`", words.join(" ")))
            } else {
                self.error("expected a relation, `and` or `,`")
            });
        };
        if self.peek().is_none() {
            let words: Vec<&str> = self.tokens[rel_at..self.at].iter().map(|t| t.raw.as_str()).collect();
            return Err(self.error(format!("expected a noun phrase after `{}`", words.join(" "))));
        }
        let object = self.np()?;
        if object == subject {
            return Err(self.error_at(rel_at, "a relation cannot link an object to itself"));
        }
        let edge = QueryEdge {
            from_node: subject,
            predicate,
            to_node: object,
        };
        if !self.edges.contains(&edge) {
            self.edges.push(edge);
        }
        Ok(())
    }

    fn np(&mut self) -> Result<u32, ParseError> {
        if self.word_at(self.at).is_some_and(|w| ARTICLES.contains(&w)) {
            self.at += 1;
        }
        let mut node = QueryNode::new(0, "");
        // An adjective is only taken as such when a noun can follow it, so
        // "an orange on a table" still has a noun.
        while self.is_content_word(self.at + 1) || self.compound_len(self.at + 1) > 0 {
            let i = self.at;
            let w = match self.word_at(i) {
                Some(w) if !is_reserved(w) => w.to_string(),
                _ => break,
            };
            if self.compound_len(i) > 0 {
                break;
            }
            if let Some(c) = self.vocab.canon_color(&w) {
                if node.color.as_ref().is_some_and(|old| *old != c) {
                    return Err(self.error_at(i, format!("conflicting colors `{}` and `{c}`", node.color.as_ref().unwrap())));
                }
                node.color = Some(c);
            } else if let Some(s) = self.vocab.canon_shape(&w) {
                if node.shape.as_ref().is_some_and(|old| *old != s) {
                    return Err(self.error_at(i, format!("conflicting shapes `{}` and `{s}`", node.shape.as_ref().unwrap())));
                }
                node.shape = Some(s);
            } else if let Some(z) = size_word(&w) {
                if node.size_word.is_some_and(|old| old != z) {
                    return Err(self.error_at(i, "conflicting size words"));
                }
                node.size_word = Some(z);
            } else {
                break;
            }
            self.at += 1;
        }

        let noun_at = self.at;
        let compound = self.compound_len(noun_at);
        let noun = if compound > 0 {
            self.at += compound;
            self.tokens[noun_at..self.at]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        } else if self.is_content_word(noun_at) {
            self.at += 1;
            self.tokens[noun_at].text.clone()
        } else {
            return Err(self.error("expected a noun"));
        };
        if self.is_content_word(self.at) {
            let w = &self.tokens[noun_at].raw;
            return Err(self.error_at(noun_at, format!("`{w}` is not a known color, shape or size word")));
        }
        node.label = self.vocab.canon_label(&noun);
        Ok(self.intern(node))
    }

    /// Length of the longest known multiword noun starting at token `i`.
    fn compound_len(&self, i: usize) -> usize {
        let max = self.vocab.max_compound_words();
        for n in (2..=max).rev() {
            let words: Option<Vec<&str>> = (i..i + n).map(|k| self.word_at(k)).collect();
            if let Some(words) = words {
                if self.vocab.is_compound(&words.join(" ")) {
                    return n;
                }
            }
        }
        0
    }

    fn intern(&mut self, mut node: QueryNode) -> u32 {
        if let Some(n) = self.nodes.iter().find(|n| n.description() == node.description()) {
            return n.node_id;
        }
        node.node_id = self.nodes.len() as u32;
        self.nodes.push(node);
        self.nodes.len() as u32 - 1
    }
}

/// Parses a query. Unknown nouns are accepted as labels; unknown adjectives
/// are errors.
pub fn parse(text: &str, vocab: &Vocabulary) -> Result<QueryGraph, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::EmptyQuery);
    }
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(ParseError::EmptyQuery);
    }
    let mut p = Parser {
        tokens,
        at: 0,
        end: text.len(),
        vocab,
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    p.query()?;
    Ok(QueryGraph {
        nodes: p.nodes,
        edges: p.edges,
        raw_text: text.to_string(),
    })
}

/// Canonical text for a graph: one clause per edge, then the nodes that
/// take part in no edge, joined by `and`.
pub fn unparse(graph: &QueryGraph) -> String {
    let node = |id: u32| {
        graph
            .node(id)
            .map(|n| n.to_string())
            .unwrap_or_else(|| format!("node{id}"))
    };
    let mut clauses: Vec<String> = graph
        .edges
        .iter()
        .map(|e| format!("{} {} {}", node(e.from_node), relation_phrase(e.predicate), node(e.to_node)))
        .collect();
    let linked: BTreeSet<u32> = graph.edges.iter().flat_map(|e| [e.from_node, e.to_node]).collect();
    clauses.extend(
        graph
            .nodes
            .iter()
            .filter(|n| !linked.contains(&n.node_id))
            .map(|n| n.to_string()),
    );
    clauses.join(" and ")
}

impl QueryGraph {
    pub fn node(&self, id: u32) -> Option<&QueryNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    /// Scored constraints: every stated attribute plus every edge.
    pub fn constraint_count(&self) -> usize {
        self.nodes.iter().map(QueryNode::attribute_count).sum::<usize>() + self.edges.len()
    }

    /// Structural equality up to node renumbering. `raw_text` is ignored.
    pub fn equivalent(&self, other: &QueryGraph) -> bool {
        if self.nodes.len() != other.nodes.len() || self.edges.len() != other.edges.len() {
            return false;
        }
        let theirs: BTreeSet<QueryEdge> = other.edges.iter().copied().collect();
        if theirs.len() != other.edges.len() {
            return false;
        }
        let mut map = vec![None; self.nodes.len()];
        let mut used = vec![false; other.nodes.len()];
        self.extend_mapping(other, 0, &mut map, &mut used, &theirs)
    }

    fn extend_mapping(
        &self,
        other: &QueryGraph,
        i: usize,
        map: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        theirs: &BTreeSet<QueryEdge>,
    ) -> bool {
        if i == self.nodes.len() {
            let index_of = |g: &QueryGraph, id: u32| g.nodes.iter().position(|n| n.node_id == id);
            return self.edges.iter().all(|e| {
                let (Some(a), Some(b)) = (index_of(self, e.from_node), index_of(self, e.to_node)) else {
                    return false;
                };
                let mapped = QueryEdge {
                    from_node: other.nodes[map[a].unwrap()].node_id,
                    predicate: e.predicate,
                    to_node: other.nodes[map[b].unwrap()].node_id,
                };
                theirs.contains(&mapped)
            });
        }
        for j in 0..other.nodes.len() {
            if used[j] || self.nodes[i].description() != other.nodes[j].description() {
                continue;
            }
            used[j] = true;
            map[i] = Some(j);
            if self.extend_mapping(other, i + 1, map, used, theirs) {
                return true;
            }
            used[j] = false;
            map[i] = None;
        }
        false
    }
}
