//! Regenerates the derived fixtures (canonical trees, wire/prompt
//! goldens, scaled datasets). Run explicitly after an intentional format
//! change:
//!
//! ```text
//! cargo test --test fixture_gen -- --ignored regenerate_fixtures
//! ```
//!
//! The checked-in copies are frozen; ordinary test runs compare against
//! them and never rewrite them.

use std::path::Path;

use structriage::doc_model::{build_index, to_metadata};
use structriage::ingest::parse_interchange;
use structriage::llm::{encode_request, ChatMessage};
use structriage::orchestrator::{baseline_prompt, pdftriage_system_prompt};
use structriage::triage::tool_declarations;

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))
}

#[test]
#[ignore]
fn regenerate_fixtures() {
    let dir = fixtures();

    // Canonical tree from the hand-authored interchange fixture.
    let raw = std::fs::read(dir.join("minidoc.interchange.json")).unwrap();
    let tree = parse_interchange(&raw).unwrap();
    std::fs::write(
        dir.join("minidoc.json"),
        serde_json::to_string_pretty(&tree).unwrap(),
    )
    .unwrap();

    // Demo corpus for the CLI eval workflow.
    std::fs::create_dir_all(dir.join("demo_corpus")).unwrap();
    std::fs::write(
        dir.join("demo_corpus/minidoc.json"),
        serde_json::to_string_pretty(&tree).unwrap(),
    )
    .unwrap();

    let index = build_index(tree).unwrap();
    let metadata = to_metadata(&index);

    // Prompt goldens, fully substituted for the minidoc fixture.
    std::fs::write(
        dir.join("pdftriage_system_prompt.golden.txt"),
        pdftriage_system_prompt(&metadata.body),
    )
    .unwrap();
    std::fs::write(
        dir.join("baseline_prompt.golden.txt"),
        baseline_prompt(
            "[page 2]\nExample retrieved context.",
            "What regions are listed in Table 1?",
        ),
    )
    .unwrap();

    // Wire-codec request golden.
    let messages = vec![
        ChatMessage::system(pdftriage_system_prompt(&metadata.body)),
        ChatMessage::user("What regions are listed in Table 1?"),
    ];
    let request = encode_request(&messages, &tool_declarations(), "gpt-35-turbo-0613").unwrap();
    std::fs::write(dir.join("request1.json"), request).unwrap();

    // Difficulty fixture at one tenth of the published dataset counts.
    let mut lines = String::new();
    let mut n = 0;
    for (difficulty, count) in [("easy", 39), ("medium", 14), ("hard", 27), ("unsure", 11)] {
        for _ in 0..count {
            n += 1;
            lines.push_str(&format!(
                "{{\"id\":\"q{n}\",\"document_id\":\"minidoc\",\"text\":\"Question {n}?\",\
                 \"category\":\"text_questions\",\"difficulty\":\"{difficulty}\"}}\n"
            ));
        }
    }
    std::fs::write(dir.join("difficulty_scaled.jsonl"), lines).unwrap();
}
