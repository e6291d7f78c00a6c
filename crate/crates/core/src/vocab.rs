//! Canonical nouns, colors and shapes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

pub const COLORS: [&str; 12] = [
    "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black", "white", "gray",
    "beige",
];

pub const SHAPES: [&str; 5] = ["round", "square", "rectangular", "triangular", "oval"];

const COLOR_SYNONYMS: [(&str, &str); 6] = [
    ("grey", "gray"),
    ("violet", "purple"),
    ("magenta", "pink"),
    ("tan", "beige"),
    ("cream", "beige"),
    ("silver", "gray"),
];

const SHAPE_SYNONYMS: [(&str, &str); 7] = [
    ("circular", "round"),
    ("spherical", "round"),
    ("rectangle", "rectangular"),
    ("oblong", "rectangular"),
    ("triangle", "triangular"),
    ("elliptical", "oval"),
    ("squared", "square"),
];

const IRREGULAR_PLURALS: [(&str, &str); 12] = [
    ("people", "person"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("buses", "bus"),
    ("glasses", "glass"),
    ("knives", "knife"),
    ("leaves", "leaf"),
];

const COMPOUND_NOUNS: [&str; 12] = [
    "trash can",
    "traffic light",
    "fire hydrant",
    "stop sign",
    "parking meter",
    "teddy bear",
    "cell phone",
    "potted plant",
    "wine glass",
    "baseball bat",
    "hot dog",
    "street lamp",
];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot read vocabulary {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("vocabulary is not a JSON string map: {0}")]
    Format(#[from] serde_json::Error),
    #[error("synonym chain starting at `{0}` is cyclic")]
    Cycle(String),
}

/// Reduces a lowercase noun to a singular form. Idempotent.
pub fn singularize(word: &str) -> String {
    if let Some((head, last)) = word.rsplit_once(' ') {
        return format!("{head} {}", singularize(last));
    }
    let stem = strip_plural(word);
    match IRREGULAR_PLURALS.iter().find(|(p, _)| *p == stem) {
        Some((_, s)) => s.to_string(),
        None => stem,
    }
}

fn strip_plural(word: &str) -> String {
    if IRREGULAR_PLURALS.iter().any(|(p, _)| *p == word) {
        return word.to_string();
    }
    let n = word.len();
    if n <= 3 || !word.is_ascii() {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        return format!("{stem}y");
    }
    for suffix in ["sses", "ches", "shes", "xes"] {
        if word.ends_with(suffix) {
            return word[..n - 2].to_string();
        }
    }
    if word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") && !word.ends_with("is") {
        return word[..n - 1].to_string();
    }
    word.to_string()
}

fn normalize_text(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .replace(':', "-")
}

/// Surface-form canonicalization for labels, colors and shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    label_synonyms: BTreeMap<String, String>,
    color_synonyms: BTreeMap<String, String>,
    shape_synonyms: BTreeMap<String, String>,
    /// Multiword nouns the query parser reads as a single label.
    compounds: BTreeSet<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::with_synonyms(
            [
                ("automobile", "car"),
                ("auto", "car"),
                ("vehicle", "car"),
                ("human", "person"),
                ("man", "person"),
                ("woman", "person"),
                ("child", "person"),
                ("kid", "person"),
                ("puppy", "dog"),
                ("kitten", "cat"),
                ("desk", "table"),
                ("house", "building"),
                ("land", "ground"),
                ("floor", "ground"),
            ]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string())),
        )
        .expect("built-in synonyms are acyclic")
    }
}

impl Vocabulary {
    /// Builds a vocabulary whose label map is resolved to fixed points, so
    /// that `canon_label(canon_label(x)) == canon_label(x)`.
    pub fn with_synonyms(
        synonyms: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, VocabError> {
        let raw: BTreeMap<String, String> = synonyms
            .into_iter()
            .map(|(k, v)| {
                (
                    singularize(&normalize_text(&k)),
                    singularize(&normalize_text(&v)),
                )
            })
            .collect();
        let mut compounds: BTreeSet<String> = COMPOUND_NOUNS.iter().map(|c| c.to_string()).collect();
        for (k, v) in &raw {
            compounds.extend([k, v].into_iter().filter(|w| w.contains(' ')).cloned());
        }
        let raw: BTreeMap<String, String> = raw.into_iter().filter(|(k, v)| k != v).collect();
        let mut resolved = BTreeMap::new();
        for key in raw.keys() {
            let mut cur = key.clone();
            let mut steps = 0;
            while let Some(next) = raw.get(&cur) {
                cur = next.clone();
                steps += 1;
                if steps > raw.len() {
                    return Err(VocabError::Cycle(key.clone()));
                }
            }
            resolved.insert(key.clone(), cur);
        }
        let map = |pairs: &[(&str, &str)]| {
            pairs
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect()
        };
        Ok(Vocabulary {
            label_synonyms: resolved,
            color_synonyms: map(&COLOR_SYNONYMS),
            shape_synonyms: map(&SHAPE_SYNONYMS),
            compounds,
        })
    }

    /// Parses a JSON object mapping surface nouns to canonical nouns.
    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let map: BTreeMap<String, String> = serde_json::from_str(text)?;
        Vocabulary::with_synonyms(map)
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Vocabulary::from_json(&text)
    }

    pub fn canon_label(&self, raw: &str) -> String {
        let s = singularize(&normalize_text(raw));
        self.label_synonyms.get(&s).cloned().unwrap_or(s)
    }

    /// Canonical color name, or `None` when the word is not a known color.
    pub fn canon_color(&self, raw: &str) -> Option<String> {
        let s = normalize_text(raw);
        let s = self.color_synonyms.get(&s).cloned().unwrap_or(s);
        COLORS.contains(&s.as_str()).then_some(s)
    }

    pub fn canon_shape(&self, raw: &str) -> Option<String> {
        let s = normalize_text(raw);
        let s = self.shape_synonyms.get(&s).cloned().unwrap_or(s);
        SHAPES.contains(&s.as_str()).then_some(s)
    }

    pub fn label_synonyms(&self) -> &BTreeMap<String, String> {
        &self.label_synonyms
    }

    /// Registers extra multiword nouns, e.g. the labels found in a corpus.
    pub fn with_compounds<I, S>(mut self, nouns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for n in nouns {
            let n = normalize_text(n.as_ref());
            if n.contains(' ') {
                self.compounds.insert(n);
            }
        }
        self
    }

    /// True if the space-joined words form a known multiword noun, in
    /// singular or plural form.
    pub fn is_compound(&self, words: &str) -> bool {
        let n = normalize_text(words);
        self.compounds.contains(&n) || self.compounds.contains(&singularize(&n))
    }

    /// Word count of the longest known multiword noun.
    pub fn max_compound_words(&self) -> usize {
        self.compounds
            .iter()
            .map(|c| c.split(' ').count())
            .max()
            .unwrap_or(1)
    }
}
