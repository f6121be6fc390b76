//! Writes the four-level demo taxonomy (letters C and F, three children
//! per node) used by the test fixtures and the README walkthrough.
//!
//! Usage: cargo run -p topicpath-core --example make_fixture_taxonomy -- <out.json>

use topicpath_core::taxonomy::fixture_taxonomy;

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixtures/taxonomy_4level.json".to_string());
    let taxonomy = fixture_taxonomy();
    std::fs::write(&path, taxonomy.to_json()).expect("write taxonomy file");
    println!(
        "wrote {} ({} disciplines, depth {})",
        path,
        taxonomy.len(),
        taxonomy.depth()
    );
}
