use std::path::Path;

use quota::decouple::{build_frame_scoring_prompt, decouple_or_direct};
use quota::Strategy;
use serde_json::Value;

#[test]
fn every_fixture_parses_to_its_expected_query() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/decouple");
    let mut checked = 0;
    let mut entries: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    for response_path in entries
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
    {
        let expected: Value = serde_json::from_str(
            &std::fs::read_to_string(response_path.with_extension("json")).unwrap(),
        )
        .unwrap();
        let response = std::fs::read_to_string(response_path).unwrap();
        let query = expected["query"].as_str().unwrap();
        let requested: Strategy = expected["requested"].as_str().unwrap().parse().unwrap();

        let d = decouple_or_direct(&response, requested, query);
        let name = response_path.display();
        assert_eq!(
            d.query.strategy().as_str(),
            expected["strategy"].as_str().unwrap(),
            "{name}"
        );
        assert_eq!(d.query.source_query(), query, "{name}");
        let objects = d.query.object_list().map(|o| o.to_vec());
        let expected_objects: Option<Vec<String>> =
            serde_json::from_value(expected["object_list"].clone()).unwrap();
        assert_eq!(objects, expected_objects, "{name}");
        assert_eq!(
            d.query.event_question(),
            expected["event_question"].as_str(),
            "{name}"
        );
        if expected.get("fallback") == Some(&Value::Bool(true)) {
            assert!(d.fallback.is_some(), "{name}");
        }

        // Every parsed query renders to a well-formed binary-choice prompt.
        let prompt = build_frame_scoring_prompt(&d.query);
        assert!(prompt.starts_with("Question: Does "), "{name}");
        assert!(
            prompt.ends_with("A. Yes. B. No.\nAnswer the letter directly."),
            "{name}"
        );
        checked += 1;
    }
    assert!(checked >= 6, "only {checked} fixtures found");
}
