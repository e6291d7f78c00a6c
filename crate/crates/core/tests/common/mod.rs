#![allow(dead_code)]

use std::path::{Path, PathBuf};

/// Three kitchens; only `kitchen-1` has a red ball resting on the table.
pub const KITCHENS: &str = r#"{
  "images": [
    {
      "image_id": "kitchen-1",
      "width_px": 100, "height_px": 100,
      "objects": [
        {"label": "ball", "bbox_px": [45, 30, 10, 20], "colors": ["red"], "shape": "round"},
        {"label": "desk", "bbox_px": [30, 50, 40, 30]}
      ]
    },
    {
      "image_id": "kitchen-2",
      "width_px": 100, "height_px": 100,
      "objects": [
        {"label": "ball", "bbox_px": [45, 30, 10, 20], "colors": ["blue"]},
        {"label": "table", "bbox_px": [30, 50, 40, 30]}
      ]
    },
    {
      "image_id": "kitchen-3",
      "image_uri": "pics/k3.png",
      "width_px": 200, "height_px": 100,
      "objects": [
        {"label": "balls", "bbox_px": [10, 80, 20, 10], "colors": ["Red"]},
        {"label": "table", "bbox_px": [100, 50, 80, 30]},
        {"label": "lamp", "bbox_px": [150, 10, 10, 30], "confidence": 0.2}
      ]
    }
  ]
}"#;

pub fn horse(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv: Vec<String> = std::iter::once("horse".to_string())
        .chain(args.iter().map(|s| s.to_string()))
        .collect();
    let code = horse::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes the kitchen fixture and indexes it; returns the index directory.
pub fn kitchen_index(dir: &Path) -> PathBuf {
    let ann = dir.join("kitchens.json");
    std::fs::write(&ann, KITCHENS).unwrap();
    let idx = dir.join("kitchen-index");
    let (code, _, err) = horse(&["ingest", "--annotations", p(&ann), "--out", p(&idx)]);
    assert_eq!(code, 0, "{err}");
    idx
}

/// `gen` + `ingest` of a 100-scene synthetic corpus; returns the index
/// directory and the annotation file.
pub fn synthetic_index(dir: &Path) -> (PathBuf, PathBuf) {
    let ann = dir.join("scenes.json");
    let idx = dir.join("scene-index");
    let (code, _, err) = horse(&["gen", "--scenes", "100", "--seed", "7", "--anomaly-rate", "0.01", "--out", p(&ann)]);
    assert_eq!(code, 0, "{err}");
    let (code, _, err) = horse(&["ingest", "--annotations", p(&ann), "--out", p(&idx)]);
    assert_eq!(code, 0, "{err}");
    (idx, ann)
}
