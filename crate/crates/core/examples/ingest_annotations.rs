//! Loads an annotation document, dropping low-confidence detections.

use horse::ingest::{load_annotations, IngestOptions};
use horse::vocab::Vocabulary;

const DOC: &str = r#"{"images": [
  {"image_id": "porch", "width_px": 640, "height_px": 480, "objects": [
    {"label": "Cats", "bbox_px": [200, 150, 80, 60], "colors": ["Grey"]},
    {"label": "sofa", "bbox_px": [120, 210, 300, 150]},
    {"label": "ghost", "bbox_px": [10, 10, 30, 30], "confidence": 0.1}
  ], "exposure": 0.3}
]}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let opts = IngestOptions { min_confidence: 0.5, ..Default::default() };
    let loaded = load_annotations(DOC.as_bytes(), &Vocabulary::default(), &opts)?;
    println!("{:?}", loaded.report);
    for g in &loaded.graphs {
        for o in &g.objects {
            println!("{} #{} {:?} salience={:.3}", g.image_id, o.object_id, o.label, o.salience);
        }
        for t in &g.relations {
            println!("  {t:?}");
        }
    }
    Ok(())
}
