//! Inverted index over scene-graph terms, with on-disk persistence.
//!
//! Directory layout:
//!
//! ```text
//! manifest.json   format version, corpus counts, config snapshot, segment checksums
//! terms.seg       sorted term dictionary with offsets into postings.seg
//! postings.seg    per-term posting lists (document ordinal + object ids)
//! docs.seg        scene graphs, sorted by image id
//! priors.seg      relation prior tables
//! ```
//!
//! Every segment starts with a 4-byte magic and the format version and ends
//! with a CRC-32 of everything before it. Integers are little-endian.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::priors::RelationPriors;
use crate::scene::{BBox, Predicate, RelationTriple, SceneGraph, SceneObject};

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const SEGMENTS: [(&str, [u8; 4]); 4] = [
    ("terms.seg", *b"HRST"),
    ("postings.seg", *b"HRSP"),
    ("docs.seg", *b"HRSD"),
    ("priors.seg", *b"HRSR"),
];

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from an empty corpus")]
    EmptyCorpus,
    #[error("duplicate image_id `{0}`")]
    DuplicateImage(String),
    #[error("index I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("index segment `{segment}` is corrupt: {reason}")]
    Corrupt { segment: String, reason: String },
    #[error("index format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttrKind {
    Color,
    Shape,
}

impl AttrKind {
    fn as_str(self) -> &'static str {
        match self {
            AttrKind::Color => "color",
            AttrKind::Shape => "shape",
        }
    }
}

/// An index key. Printed forms: `label:<label>`,
/// `attr:<label>:color:<color>`, `attr:<label>:shape:<shape>` and
/// `rel:<subject>:<predicate>:<object>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Label(String),
    Attr {
        label: String,
        kind: AttrKind,
        value: String,
    },
    Rel {
        subject: String,
        predicate: Predicate,
        object: String,
    },
}

impl Term {
    pub fn label(label: impl Into<String>) -> Self {
        Term::Label(label.into())
    }

    pub fn color(label: impl Into<String>, color: impl Into<String>) -> Self {
        Term::Attr {
            label: label.into(),
            kind: AttrKind::Color,
            value: color.into(),
        }
    }

    pub fn shape(label: impl Into<String>, shape: impl Into<String>) -> Self {
        Term::Attr {
            label: label.into(),
            kind: AttrKind::Shape,
            value: shape.into(),
        }
    }

    pub fn rel(subject: impl Into<String>, predicate: Predicate, object: impl Into<String>) -> Self {
        Term::Rel {
            subject: subject.into(),
            predicate,
            object: object.into(),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Label(l) => write!(f, "label:{l}"),
            Term::Attr { label, kind, value } => write!(f, "attr:{label}:{}:{value}", kind.as_str()),
            Term::Rel {
                subject,
                predicate,
                object,
            } => write!(f, "rel:{subject}:{predicate}:{object}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed term `{0}`")]
pub struct BadTerm(pub String);

impl FromStr for Term {
    type Err = BadTerm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadTerm(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        if parts.iter().skip(1).any(|p| p.is_empty()) {
            return Err(bad());
        }
        match parts.as_slice() {
            ["label", l] => Ok(Term::label(*l)),
            ["attr", l, "color", v] => Ok(Term::color(*l, *v)),
            ["attr", l, "shape", v] => Ok(Term::shape(*l, *v)),
            ["rel", s, p, o] => Ok(Term::rel(*s, p.parse().map_err(|_| bad())?, *o)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub image_id: String,
    /// Objects realizing the term (subjects, for relation terms); strictly
    /// increasing.
    pub object_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RawPosting {
    pub doc: u32,
    pub objects: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub images: usize,
    pub empty_images: usize,
    pub objects: usize,
    pub triples: usize,
    pub terms: usize,
    pub label_terms: usize,
    pub attr_terms: usize,
    pub rel_terms: usize,
    pub postings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub created_at: DateTime<Utc>,
    pub stats: IndexStats,
    pub config: EngineConfig,
    pub segments: BTreeMap<String, SegmentInfo>,
}

/// An immutable, opened index. Safe to share between threads.
#[derive(Debug, Clone)]
pub struct IndexHandle {
    docs: Vec<SceneGraph>,
    doc_ordinals: HashMap<String, u32>,
    dictionary: BTreeMap<String, Vec<RawPosting>>,
    priors: RelationPriors,
    config: EngineConfig,
    stats: IndexStats,
}

impl PartialEq for IndexHandle {
    fn eq(&self, other: &Self) -> bool {
        self.docs == other.docs
            && self.dictionary == other.dictionary
            && self.priors == other.priors
            && self.config == other.config
    }
}

/// Terms emitted for one scene, each with the ids of the realizing objects.
pub fn scene_terms(graph: &SceneGraph) -> BTreeMap<Term, BTreeSet<u32>> {
    let mut out: BTreeMap<Term, BTreeSet<u32>> = BTreeMap::new();
    for o in &graph.objects {
        out.entry(Term::label(&o.label)).or_default().insert(o.object_id);
        for c in &o.colors {
            out.entry(Term::color(&o.label, c)).or_default().insert(o.object_id);
        }
        if let Some(s) = &o.shape {
            out.entry(Term::shape(&o.label, s)).or_default().insert(o.object_id);
        }
    }
    for (s, p, o) in graph.labeled_relations() {
        out.entry(Term::rel(&s.label, p, &o.label))
            .or_default()
            .insert(s.object_id);
    }
    out
}

impl IndexHandle {
    /// Builds the in-memory index. Nothing is written to disk.
    pub fn build(
        graphs: Vec<SceneGraph>,
        priors: RelationPriors,
        config: EngineConfig,
    ) -> Result<Self, IndexError> {
        if graphs.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let mut docs = graphs;
        docs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        if let Some(w) = docs.windows(2).find(|w| w[0].image_id == w[1].image_id) {
            return Err(IndexError::DuplicateImage(w[0].image_id.clone()));
        }
        let mut dictionary: BTreeMap<String, Vec<RawPosting>> = BTreeMap::new();
        for (ord, g) in docs.iter().enumerate() {
            for (term, objects) in scene_terms(g) {
                dictionary.entry(term.to_string()).or_default().push(RawPosting {
                    doc: ord as u32,
                    objects: objects.into_iter().collect(),
                });
            }
        }
        Ok(IndexHandle::assemble(docs, dictionary, priors, config))
    }

    fn assemble(
        docs: Vec<SceneGraph>,
        dictionary: BTreeMap<String, Vec<RawPosting>>,
        priors: RelationPriors,
        config: EngineConfig,
    ) -> Self {
        let doc_ordinals = docs
            .iter()
            .enumerate()
            .map(|(i, g)| (g.image_id.clone(), i as u32))
            .collect();
        let count = |prefix: &str| dictionary.keys().filter(|k| k.starts_with(prefix)).count();
        let stats = IndexStats {
            images: docs.len(),
            empty_images: docs.iter().filter(|g| g.objects.is_empty()).count(),
            objects: docs.iter().map(|g| g.objects.len()).sum(),
            triples: docs.iter().map(|g| g.relations.len()).sum(),
            terms: dictionary.len(),
            label_terms: count("label:"),
            attr_terms: count("attr:"),
            rel_terms: count("rel:"),
            postings: dictionary.values().map(Vec::len).sum(),
        };
        IndexHandle {
            docs,
            doc_ordinals,
            dictionary,
            priors,
            config,
            stats,
        }
    }

    /// Builds the index and persists it to `dir`.
    pub fn build_to_dir(
        graphs: Vec<SceneGraph>,
        priors: RelationPriors,
        config: EngineConfig,
        dir: &Path,
    ) -> Result<Self, IndexError> {
        let handle = IndexHandle::build(graphs, priors, config)?;
        handle.save(dir)?;
        Ok(handle)
    }

    pub fn documents(&self) -> &[SceneGraph] {
        &self.docs
    }

    pub fn document(&self, image_id: &str) -> Option<&SceneGraph> {
        self.doc_ordinals
            .get(image_id)
            .map(|&i| &self.docs[i as usize])
    }

    pub(crate) fn document_at(&self, ordinal: u32) -> &SceneGraph {
        &self.docs[ordinal as usize]
    }

    pub fn priors(&self) -> &RelationPriors {
        &self.priors
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn stats(&self) -> &IndexStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// All dictionary terms in sorted order.
    pub fn terms(&self) -> impl Iterator<Item = &str> + '_ {
        self.dictionary.keys().map(String::as_str)
    }

    /// Dictionary terms starting with `prefix`, in sorted order.
    pub fn terms_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.dictionary
            .range::<str, _>((std::ops::Bound::Included(prefix), std::ops::Bound::Unbounded))
            .map(|(k, _)| k.as_str())
            .take_while(move |k| k.starts_with(prefix))
    }

    pub(crate) fn raw_postings(&self, term: &str) -> &[RawPosting] {
        self.dictionary.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Exact-match postings sorted by image id; unknown terms give none.
    pub fn lookup(&self, term: &Term) -> Vec<Posting> {
        self.lookup_str(&term.to_string())
    }

    pub fn lookup_str(&self, term: &str) -> Vec<Posting> {
        self.raw_postings(term)
            .iter()
            .map(|p| Posting {
                image_id: self.docs[p.doc as usize].image_id.clone(),
                object_ids: p.objects.clone(),
            })
            .collect()
    }

    /// Image ids present in every list. An empty family constrains nothing
    /// and yields the whole corpus.
    pub fn intersect(&self, lists: &[&[Posting]]) -> Vec<String> {
        if lists.is_empty() {
            return self.docs.iter().map(|g| g.image_id.clone()).collect();
        }
        let ordinals: Vec<Vec<u32>> = lists
            .iter()
            .map(|l| l.iter().filter_map(|p| self.doc_ordinals.get(&p.image_id).copied()).collect())
            .collect();
        let refs: Vec<&[u32]> = ordinals.iter().map(Vec::as_slice).collect();
        intersect_sorted(&refs)
            .into_iter()
            .map(|d| self.docs[d as usize].image_id.clone())
            .collect()
    }

    pub(crate) fn all_ordinals(&self) -> Vec<u32> {
        (0..self.docs.len() as u32).collect()
    }

    /// Writes all segments to a staging directory next to `dir`, then swaps
    /// it into place.
    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(io_err(&parent))?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "index".into());
        let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir(&staging).map_err(io_err(&staging))?;

        let (terms, postings) = self.encode_terms_and_postings();
        let bodies = [
            ("terms.seg", terms),
            ("postings.seg", postings),
            ("docs.seg", encode_docs(&self.docs)),
            ("priors.seg", encode_priors(&self.priors)),
        ];
        let mut segments = BTreeMap::new();
        for ((name, body), (_, magic)) in bodies.into_iter().zip(SEGMENTS) {
            let bytes = frame(magic, body);
            let path = staging.join(name);
            fs::write(&path, &bytes).map_err(io_err(&path))?;
            segments.insert(
                name.to_string(),
                SegmentInfo {
                    bytes: bytes.len() as u64,
                    crc32: crc32fast::hash(&bytes),
                },
            );
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            created_at: Utc::now(),
            stats: self.stats.clone(),
            config: self.config.clone(),
            segments,
        };
        let path = staging.join(MANIFEST);
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(io_err(&path))?;

        if dir.exists() {
            let retired = parent.join(format!(".{name}.retired-{}", std::process::id()));
            fs::rename(dir, &retired).map_err(io_err(dir))?;
            fs::rename(&staging, dir).map_err(io_err(dir))?;
            fs::remove_dir_all(&retired).map_err(io_err(&retired))?;
        } else {
            fs::rename(&staging, dir).map_err(io_err(dir))?;
        }
        Ok(())
    }

    pub fn read_manifest(dir: &Path) -> Result<Manifest, IndexError> {
        let path = dir.join(MANIFEST);
        let text = fs::read(&path).map_err(io_err(&path))?;
        let value: serde_json::Value = serde_json::from_slice(&text).map_err(|e| IndexError::Corrupt {
            segment: MANIFEST.into(),
            reason: e.to_string(),
        })?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| IndexError::Corrupt {
                segment: MANIFEST.into(),
                reason: "missing format_version".into(),
            })? as u32;
        if found != FORMAT_VERSION {
            return Err(IndexError::VersionMismatch {
                found,
                expected: FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| IndexError::Corrupt {
            segment: MANIFEST.into(),
            reason: e.to_string(),
        })
    }

    pub fn open(dir: &Path) -> Result<Self, IndexError> {
        let manifest = IndexHandle::read_manifest(dir)?;
        let mut bodies = Vec::new();
        for (name, magic) in SEGMENTS {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let corrupt = |reason: String| IndexError::Corrupt {
                segment: name.into(),
                reason,
            };
            let info = manifest
                .segments
                .get(name)
                .ok_or_else(|| corrupt("not listed in manifest".into()))?;
            if info.bytes != bytes.len() as u64 || info.crc32 != crc32fast::hash(&bytes) {
                return Err(corrupt("size or checksum differs from manifest".into()));
            }
            bodies.push(unframe(magic, &bytes).map_err(corrupt)?.to_vec());
        }
        let corrupt = |segment: &str| {
            let segment = segment.to_string();
            move |reason: String| IndexError::Corrupt { segment, reason }
        };
        let docs = decode_docs(&bodies[2]).map_err(corrupt("docs.seg"))?;
        let dictionary =
            decode_terms(&bodies[0], &bodies[1], docs.len()).map_err(corrupt("terms.seg"))?;
        let priors = decode_priors(&bodies[3]).map_err(corrupt("priors.seg"))?;
        Ok(IndexHandle::assemble(docs, dictionary, priors, manifest.config))
    }

    /// Opens an index and reports settings that differ from `expected`.
    pub fn open_checked(dir: &Path, expected: &EngineConfig) -> Result<(Self, Vec<String>), IndexError> {
        let handle = IndexHandle::open(dir)?;
        let warnings = handle
            .config
            .index_relevant_differences(expected)
            .into_iter()
            .map(|name| format!("index was built with different `{name}` settings"))
            .collect::<Vec<_>>();
        for w in &warnings {
            tracing::warn!("{w}");
        }
        Ok((handle, warnings))
    }

    fn encode_terms_and_postings(&self) -> (Vec<u8>, Vec<u8>) {
        let mut terms = Writer::default();
        let mut postings = Writer::default();
        terms.u32(self.dictionary.len() as u32);
        for (term, list) in &self.dictionary {
            terms.str(term);
            terms.u64(postings.buf.len() as u64);
            terms.u32(list.len() as u32);
            for p in list {
                postings.u32(p.doc);
                postings.u32(p.objects.len() as u32);
                for &o in &p.objects {
                    postings.u32(o);
                }
            }
        }
        (terms.buf, postings.buf)
    }
}

/// Intersection of ascending lists, smallest first with galloping search.
pub fn intersect_sorted(lists: &[&[u32]]) -> Vec<u32> {
    let Some(first) = lists.iter().min_by_key(|l| l.len()) else {
        return Vec::new();
    };
    let mut others: Vec<&[u32]> = lists.to_vec();
    others.sort_by_key(|l| l.len());
    let mut out = Vec::with_capacity(first.len());
    let mut cursors = vec![0usize; others.len()];
    'candidates: for &value in *first {
        for (list, cursor) in others.iter().zip(cursors.iter_mut()).skip(1) {
            *cursor = gallop(list, *cursor, value);
            if *cursor >= list.len() {
                break 'candidates;
            }
            if list[*cursor] != value {
                continue 'candidates;
            }
        }
        out.push(value);
    }
    out
}

/// First index `>= from` whose value is `>= target`.
fn gallop(list: &[u32], from: usize, target: u32) -> usize {
    let mut step = 1;
    let mut lo = from;
    let mut hi = from;
    while hi < list.len() && list[hi] < target {
        lo = hi + 1;
        hi += step;
        step *= 2;
    }
    let hi = hi.min(list.len());
    lo + list[lo..hi].partition_point(|&v| v < target)
}

fn frame(magic: [u8; 4], body: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 12);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&body);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn unframe(magic: [u8; 4], bytes: &[u8]) -> Result<&[u8], String> {
    if bytes.len() < 12 {
        return Err("truncated".into());
    }
    if bytes[..4] != magic {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format!("segment version {version}"));
    }
    let (payload, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(payload) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err("checksum mismatch".into());
    }
    Ok(&payload[8..])
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn opt_str(&mut self, s: Option<&str>) {
        match s {
            Some(s) => {
                self.u8(1);
                self.str(s);
            }
            None => self.u8(0),
        }
    }
    fn opt_f64(&mut self, v: Option<f64>) {
        match v {
            Some(v) => {
                self.u8(1);
                self.f64(v);
            }
            None => self.u8(0),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format!("unexpected end of data at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, String> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
    fn opt_str(&mut self) -> Result<Option<String>, String> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.str()?)),
            t => Err(format!("bad option tag {t}")),
        }
    }
    fn opt_f64(&mut self) -> Result<Option<f64>, String> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.f64()?)),
            t => Err(format!("bad option tag {t}")),
        }
    }
    fn done(&self) -> Result<(), String> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(format!("{} trailing bytes", self.buf.len() - self.pos))
        }
    }
}

fn encode_docs(docs: &[SceneGraph]) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(docs.len() as u32);
    for g in docs {
        w.str(&g.image_id);
        w.opt_str(g.image_uri.as_deref());
        w.i64(g.built_at.timestamp());
        w.u32(g.built_at.timestamp_subsec_nanos());
        w.u32(g.objects.len() as u32);
        for o in &g.objects {
            w.u32(o.object_id);
            w.str(&o.label);
            for v in [o.bbox.x_min, o.bbox.y_min, o.bbox.x_max, o.bbox.y_max] {
                w.f64(v);
            }
            w.opt_f64(o.depth);
            w.u32(o.colors.len() as u32);
            for c in &o.colors {
                w.str(c);
            }
            w.opt_str(o.shape.as_deref());
            w.f64(o.confidence);
            w.u32(o.attributes.len() as u32);
            for a in &o.attributes {
                w.str(a);
            }
            w.f64(o.area);
            w.u32(o.size_rank);
            w.f64(o.salience);
        }
        w.u32(g.relations.len() as u32);
        for t in &g.relations {
            w.u32(t.subject);
            w.u8(t.predicate.code());
            w.u32(t.object);
        }
    }
    w.buf
}

fn decode_docs(body: &[u8]) -> Result<Vec<SceneGraph>, String> {
    let mut r = Reader::new(body);
    let n = r.u32()? as usize;
    let mut docs = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let image_id = r.str()?;
        let image_uri = r.opt_str()?;
        let secs = r.i64()?;
        let built_at = DateTime::<Utc>::from_timestamp(secs, r.u32()?).ok_or("bad timestamp")?;
        let n_obj = r.u32()? as usize;
        let mut objects = Vec::with_capacity(n_obj.min(1 << 16));
        for _ in 0..n_obj {
            let object_id = r.u32()?;
            let label = r.str()?;
            let bbox = BBox {
                x_min: r.f64()?,
                y_min: r.f64()?,
                x_max: r.f64()?,
                y_max: r.f64()?,
            };
            if !bbox.is_valid() {
                return Err(format!("invalid bbox in `{image_id}`"));
            }
            let depth = r.opt_f64()?;
            let colors = (0..r.u32()?).map(|_| r.str()).collect::<Result<_, _>>()?;
            let shape = r.opt_str()?;
            let confidence = r.f64()?;
            let attributes = (0..r.u32()?).map(|_| r.str()).collect::<Result<_, _>>()?;
            objects.push(SceneObject {
                object_id,
                label,
                bbox,
                depth,
                colors,
                shape,
                confidence,
                attributes,
                area: r.f64()?,
                size_rank: r.u32()?,
                salience: r.f64()?,
            });
        }
        let n_rel = r.u32()? as usize;
        let mut relations = BTreeSet::new();
        for _ in 0..n_rel {
            let subject = r.u32()?;
            let predicate = Predicate::from_code(r.u8()?).ok_or("bad predicate code")?;
            let object = r.u32()?;
            if !objects.iter().any(|o| o.object_id == subject) || !objects.iter().any(|o| o.object_id == object) {
                return Err(format!("dangling relation in `{image_id}`"));
            }
            relations.insert(RelationTriple::new(subject, predicate, object));
        }
        docs.push(SceneGraph {
            image_id,
            image_uri,
            objects,
            relations,
            built_at,
        });
    }
    r.done()?;
    if docs.windows(2).any(|w| w[0].image_id >= w[1].image_id) {
        return Err("documents not sorted by image id".into());
    }
    Ok(docs)
}

fn decode_terms(
    terms: &[u8],
    postings: &[u8],
    n_docs: usize,
) -> Result<BTreeMap<String, Vec<RawPosting>>, String> {
    let mut r = Reader::new(terms);
    let n = r.u32()? as usize;
    let mut dictionary = BTreeMap::new();
    let mut prev: Option<String> = None;
    for _ in 0..n {
        let term = r.str()?;
        if prev.as_ref().is_some_and(|p| *p >= term) {
            return Err("dictionary not sorted".into());
        }
        let offset = r.u64()? as usize;
        let count = r.u32()? as usize;
        let mut pr = Reader::new(postings.get(offset..).ok_or("posting offset out of range")?);
        let mut list = Vec::with_capacity(count.min(n_docs));
        for _ in 0..count {
            let doc = pr.u32()?;
            if doc as usize >= n_docs || list.last().is_some_and(|p: &RawPosting| p.doc >= doc) {
                return Err(format!("bad posting for `{term}`"));
            }
            let k = pr.u32()? as usize;
            let objects = (0..k).map(|_| pr.u32()).collect::<Result<Vec<_>, _>>()?;
            if objects.is_empty() || objects.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("bad object list for `{term}`"));
            }
            list.push(RawPosting { doc, objects });
        }
        prev = Some(term.clone());
        dictionary.insert(term, list);
    }
    r.done()?;
    Ok(dictionary)
}

fn encode_priors(priors: &RelationPriors) -> Vec<u8> {
    let mut w = Writer::default();
    w.f64(priors.alpha());
    w.u32(priors.pair_totals().len() as u32);
    for ((s, o), &n) in priors.pair_totals() {
        w.str(s);
        w.str(o);
        w.u64(n);
    }
    w.u32(priors.counts().len() as u32);
    for ((s, p, o), &n) in priors.counts() {
        w.str(s);
        w.u8(p.code());
        w.str(o);
        w.u64(n);
    }
    w.buf
}

fn decode_priors(body: &[u8]) -> Result<RelationPriors, String> {
    let mut r = Reader::new(body);
    let alpha = r.f64()?;
    let mut pair_totals = BTreeMap::new();
    for _ in 0..r.u32()? {
        let key = (r.str()?, r.str()?);
        pair_totals.insert(key, r.u64()?);
    }
    let mut counts = BTreeMap::new();
    for _ in 0..r.u32()? {
        let s = r.str()?;
        let p = Predicate::from_code(r.u8()?).ok_or("bad predicate code")?;
        let o = r.str()?;
        counts.insert((s, p, o), r.u64()?);
    }
    r.done()?;
    Ok(RelationPriors::from_parts(counts, pair_totals, alpha))
}
