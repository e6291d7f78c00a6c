//! Loading externally produced detections into scene graphs.
//!
//! The annotation file is UTF-8 JSON:
//!
//! ```json
//! { "images": [ { "image_id": "img-1", "image_uri": "photos/1.jpg",
//!                 "width_px": 1000, "height_px": 500,
//!                 "objects": [ { "label": "Car", "bbox_px": [100, 250, 300, 200],
//!                                "depth": 0.3, "colors": ["red"], "shape": null,
//!                                "confidence": 0.92 } ] } ] }
//! ```
//!
//! `bbox_px` is `[x, y, w, h]` in pixels with the origin at the top-left.

use std::collections::{BTreeSet, HashSet};
use std::io::Read;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{BBox, RelationConfig, SalienceWeights, SceneGraph, SceneObject};
use crate::vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("parse error at {path} (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate image_id `{0}`")]
    DuplicateImage(String),
    #[error("bad geometry in image `{image_id}`, object {object_index}: {reason}")]
    BadGeometry {
        image_id: String,
        object_index: usize,
        reason: String,
    },
    #[error("cannot read annotations: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDocument {
    pub images: Vec<AnnotatedImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_uri: Option<String>,
    pub width_px: f64,
    pub height_px: f64,
    pub objects: Vec<AnnotatedObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub label: String,
    /// `[x, y, w, h]` in pixels.
    pub bbox_px: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colors: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<String>>,
}

/// Settings that shape how annotations become scene graphs.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub min_confidence: f64,
    pub relations: RelationConfig,
    pub salience: SalienceWeights,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            min_confidence: 0.0,
            relations: RelationConfig::default(),
            salience: SalienceWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub images: usize,
    pub objects_kept: usize,
    pub objects_dropped: usize,
    /// Images retained with no surviving objects.
    pub empty_images: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub graphs: Vec<SceneGraph>,
    pub report: LoadReport,
}

/// Deserializes an annotation document, reporting the JSON path of the first
/// offending field and collecting ignored unknown fields as warnings.
pub fn parse_document(text: &str) -> Result<(AnnotationDocument, Vec<String>), IngestError> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let mut on_unknown = |path: serde_ignored::Path| {
        unknown.push(format!("unknown field ignored: {path}"));
    };
    let ignoring = serde_ignored::Deserializer::new(&mut de, &mut on_unknown);
    let doc: Result<AnnotationDocument, _> = serde_path_to_error::deserialize(ignoring);
    match doc {
        Ok(doc) => {
            de.end().map_err(|e| IngestError::Parse {
                path: ".".into(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
            Ok((doc, unknown))
        }
        Err(err) => {
            let path = err.path().to_string();
            let inner = err.into_inner();
            Err(IngestError::Parse {
                path,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            })
        }
    }
}

pub fn load_annotations(
    mut source: impl Read,
    vocab: &Vocabulary,
    opts: &IngestOptions,
) -> Result<Loaded, IngestError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let (doc, warnings) = parse_document(&text)?;
    let mut loaded = graphs_from_document(&doc, vocab, opts, Utc::now())?;
    for w in &warnings {
        tracing::warn!("{w}");
    }
    let mut all = warnings;
    all.append(&mut loaded.report.warnings);
    loaded.report.warnings = all;
    Ok(loaded)
}

fn bad(image_id: &str, object_index: usize, reason: impl Into<String>) -> IngestError {
    IngestError::BadGeometry {
        image_id: image_id.to_string(),
        object_index,
        reason: reason.into(),
    }
}

/// Converts an already-parsed document. `built_at` stamps every graph.
pub fn graphs_from_document(
    doc: &AnnotationDocument,
    vocab: &Vocabulary,
    opts: &IngestOptions,
    built_at: DateTime<Utc>,
) -> Result<Loaded, IngestError> {
    let mut seen = HashSet::new();
    let mut report = LoadReport::default();
    let mut graphs = Vec::with_capacity(doc.images.len());

    for image in &doc.images {
        if !seen.insert(image.image_id.as_str()) {
            return Err(IngestError::DuplicateImage(image.image_id.clone()));
        }
        let (w, h) = (image.width_px, image.height_px);
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(bad(&image.image_id, 0, format!("image size {w}x{h} is not positive")));
        }
        let mut objects = Vec::new();
        for (idx, ann) in image.objects.iter().enumerate() {
            let [x, y, bw, bh] = ann.bbox_px;
            if !ann.bbox_px.iter().all(|v| v.is_finite())
                || x < 0.0
                || y < 0.0
                || bw <= 0.0
                || bh <= 0.0
                || x + bw > w
                || y + bh > h
            {
                return Err(bad(
                    &image.image_id,
                    idx,
                    format!("bbox_px {:?} outside {w}x{h}", ann.bbox_px),
                ));
            }
            if let Some(d) = ann.depth {
                if !(0.0..=1.0).contains(&d) {
                    return Err(bad(&image.image_id, idx, format!("depth {d} outside [0,1]")));
                }
            }
            let confidence = ann.confidence.unwrap_or(1.0);
            if !(0.0..=1.0).contains(&confidence) {
                return Err(bad(
                    &image.image_id,
                    idx,
                    format!("confidence {confidence} outside [0,1]"),
                ));
            }
            if confidence < opts.min_confidence {
                report.objects_dropped += 1;
                continue;
            }
            let label = vocab.canon_label(&ann.label);
            if label.is_empty() {
                return Err(bad(&image.image_id, idx, "empty label"));
            }
            let bbox = BBox::new(x / w, y / h, (x + bw) / w, (y + bh) / h)
                .map_err(|e| bad(&image.image_id, idx, e.to_string()))?;

            let mut colors = BTreeSet::new();
            for c in ann.colors.iter().flatten() {
                match vocab.canon_color(c) {
                    Some(c) => {
                        colors.insert(c);
                    }
                    None => report.warnings.push(format!(
                        "image `{}` object {idx}: unknown color `{c}` dropped",
                        image.image_id
                    )),
                }
            }
            let shape = match &ann.shape {
                Some(s) => {
                    let canon = vocab.canon_shape(s);
                    if canon.is_none() {
                        report.warnings.push(format!(
                            "image `{}` object {idx}: unknown shape `{s}` dropped",
                            image.image_id
                        ));
                    }
                    canon
                }
                None => None,
            };
            objects.push(SceneObject {
                object_id: objects.len() as u32,
                label,
                bbox,
                depth: ann.depth,
                colors,
                shape,
                confidence,
                attributes: ann.attributes.clone().unwrap_or_default(),
                area: 0.0,
                size_rank: 0,
                salience: 0.0,
            });
        }
        report.objects_kept += objects.len();
        if objects.is_empty() {
            report.empty_images.push(image.image_id.clone());
        }
        let graph = SceneGraph::build(
            image.image_id.clone(),
            image.image_uri.clone(),
            objects,
            &opts.relations,
            &opts.salience,
            built_at,
        )
        .map_err(|e| bad(&image.image_id, 0, e.to_string()))?;
        graphs.push(graph);
    }
    report.images = graphs.len();
    Ok(Loaded { graphs, report })
}

/// Writes graphs back out as an annotation document on a `width_px` by
/// `height_px` canvas.
pub fn export_document(graphs: &[SceneGraph], width_px: f64, height_px: f64) -> AnnotationDocument {
    AnnotationDocument {
        images: graphs
            .iter()
            .map(|g| AnnotatedImage {
                image_id: g.image_id.clone(),
                image_uri: g.image_uri.clone(),
                width_px,
                height_px,
                objects: g
                    .objects
                    .iter()
                    .map(|o| AnnotatedObject {
                        label: o.label.clone(),
                        bbox_px: [
                            o.bbox.x_min * width_px,
                            o.bbox.y_min * height_px,
                            o.bbox.width() * width_px,
                            o.bbox.height() * height_px,
                        ],
                        depth: o.depth,
                        colors: (!o.colors.is_empty()).then(|| o.colors.iter().cloned().collect()),
                        shape: o.shape.clone(),
                        confidence: Some(o.confidence),
                        attributes: (!o.attributes.is_empty()).then(|| o.attributes.clone()),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Merges independently loaded graph lists, enforcing corpus-wide unique ids.
pub fn merge(batches: Vec<Vec<SceneGraph>>) -> Result<Vec<SceneGraph>, IngestError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for g in batches.into_iter().flatten() {
        if !seen.insert(g.image_id.clone()) {
            return Err(IngestError::DuplicateImage(g.image_id));
        }
        out.push(g);
    }
    Ok(out)
}
