//! Regenerate the bundled scenario documents under `assets/scenarios/`.
//!
//! cargo run -p svoflow-core --example author_scenarios

use std::path::PathBuf;

use svoflow::scenario::{authored_document, ScenarioName, ScenarioSpec};

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/scenarios");
    for name in ScenarioName::ALL {
        let doc = authored_document(name);
        if let Err(e) = ScenarioSpec::from_document(doc.clone()) {
            eprintln!("{name}: {e}");
            std::process::exit(1);
        }
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, serde_json::to_string(&doc).unwrap() + "\n").unwrap();
        println!("wrote {}", path.display());
    }
}
