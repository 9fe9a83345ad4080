#![allow(dead_code)]

use std::path::Path;

pub fn schema_errors(doc_path: &Path) -> Vec<String> {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../../schema/report.schema.json")).expect("schema parses");
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(doc_path).unwrap()).unwrap();
    validator.iter_errors(&doc).map(|e| format!("{} at {}", e, e.instance_path)).collect()
}

pub fn assert_schema_valid(doc_path: &Path) {
    let errs = schema_errors(doc_path);
    assert!(errs.is_empty(), "{}: {errs:?}", doc_path.display());
}

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}
