//! Replays the few-shot exemplars through the recorded backend and parses a
//! wrapped vision answer.

use std::path::Path;
use std::sync::Arc;

use streetview_occupancy::vlm::{fewshot_examples, parse_attributes, BackendConfig, RecordedBackend, VlmClient};

fn main() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/fewshot_decisions.json");
    let backend = RecordedBackend::load(&fixture).unwrap();
    let client = VlmClient::new(Arc::new(backend), BackendConfig::default().model_name);

    for (i, (attrs, printed)) in fewshot_examples().iter().enumerate() {
        let d = client.decide_two_stage(attrs).unwrap();
        println!("example {} -> {:<12} (prompt says {printed}) {}", i + 1, d.label.to_string(), &d.request_hash[..12]);
    }

    let answer = "Sure.\n```json\n{\"house_destruction\": false, \"structural_damage\": true, \"exterior_debris\": true, \
                  \"open_doors_windows\": false, \"site_accessible\": true, \"exterior_mud\": false, \
                  \"emergency_markings\": false, \"major_repairs\": false, \"vehicle_presence\": false}\n```";
    println!("parsed: {}", parse_attributes(answer).unwrap().to_canonical_json());
}
