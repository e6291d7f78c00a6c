//! Derives spatial relations for a hand-built scene and prints the rule
//! clauses behind one of them.

use horse::scene::{rule_evidence, BBox, Predicate, RelationConfig, SalienceWeights, SceneGraph, SceneObject};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RelationConfig::default();
    let objects = vec![
        SceneObject::new(0, "ball", BBox::new(0.45, 0.30, 0.55, 0.50)?).with_color("red"),
        SceneObject::new(1, "table", BBox::new(0.30, 0.50, 0.70, 0.80)?),
        SceneObject::new(2, "lamp", BBox::new(0.80, 0.10, 0.90, 0.45)?).with_depth(0.7),
    ];
    let graph = SceneGraph::build("demo", None, objects, &cfg, &SalienceWeights::default(), chrono::Utc::now())?;

    for (s, p, o) in graph.labeled_relations() {
        println!("{}({}, {})", p, s.label, o.label);
    }

    let (ball, table) = (graph.object(0).unwrap(), graph.object(1).unwrap());
    println!("\nwhy on(ball, table):");
    for clause in rule_evidence(Predicate::On, ball, table, &cfg) {
        println!("  {clause}");
    }
    Ok(())
}
