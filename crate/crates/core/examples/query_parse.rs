//! Parses controlled-language queries into query graphs and back.

use horse::query::{parse, unparse};
use horse::vocab::Vocabulary;

fn main() {
    let vocab = Vocabulary::default();
    for text in [
        "red ball on a table",
        "show me images where a person is left of a car and the car is next to a fire hydrant",
        "a big blue square box containing a cup",
        "ball on",
        "a shiny ball",
    ] {
        match parse(text, &vocab) {
            Ok(q) => {
                println!("{text:?}");
                for n in &q.nodes {
                    println!("  node {}: {n}", n.node_id);
                }
                for e in &q.edges {
                    println!("  edge {} -{}-> {}", e.from_node, e.predicate, e.to_node);
                }
                println!("  canonical: {}", unparse(&q));
            }
            Err(e) => println!("{text:?}: {e}"),
        }
    }
}
