//! The published config schema must describe exactly what the loader accepts
//! and emits.

use std::collections::BTreeSet;
use std::path::Path;

use flc_harness::parse_config;
use serde_json::{json, Value};

fn schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/config.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Serialized configs with every optional field present at least once.
fn samples() -> Vec<Value> {
    let texts = [
        r#"{"name": "s", "output": "o", "dataset": {"kind": "synthetic"}}"#,
        r#"{"dataset": {"kind": "mnist"}, "training": {"optimizer": {"kind": "adam", "lr": 0.01}}}"#,
    ];
    texts
        .iter()
        .map(|t| serde_json::to_value(parse_config(t, Path::new("t.json")).unwrap()).unwrap())
        .collect()
}

/// Picks the `oneOf` branch whose `kind` constant matches the value.
fn branch<'a>(schema: &'a Value, value: &Value) -> &'a Value {
    match schema.get("oneOf") {
        Some(Value::Array(options)) if value.get("kind").is_some() => options
            .iter()
            .find(|o| o["properties"]["kind"]["const"] == value["kind"])
            .unwrap_or_else(|| panic!("no branch for {}", value["kind"])),
        _ => schema,
    }
}

fn walk(schema: &Value, value: &Value, path: &str, seen: &mut BTreeSet<String>) {
    let Value::Object(fields) = value else { return };
    let schema = branch(schema, value);
    let props = schema["properties"].as_object().unwrap_or_else(|| panic!("{path} has no properties"));
    for (key, child) in fields {
        let full = format!("{path}{key}");
        let sub = props.get(key).unwrap_or_else(|| panic!("{full} missing from schema"));
        seen.insert(full.clone());
        walk(sub, child, &format!("{full}."), seen);
    }
}

fn declared(schema: &Value, path: &str, out: &mut BTreeSet<String>) {
    let branches: Vec<&Value> = match schema.get("oneOf") {
        Some(Value::Array(o)) => o.iter().collect(),
        _ => vec![schema],
    };
    for b in branches {
        if let Some(props) = b.get("properties").and_then(Value::as_object) {
            for (key, sub) in props {
                let full = format!("{path}{key}");
                out.insert(full.clone());
                declared(sub, &format!("{full}."), out);
            }
        }
    }
}

#[test]
fn schema_and_serialization_name_the_same_keys() {
    let schema = schema();
    let mut seen = BTreeSet::new();
    for sample in samples() {
        walk(&schema, &sample, "", &mut seen);
    }
    let mut listed = BTreeSet::new();
    declared(&schema, "", &mut listed);
    let missing: Vec<_> = listed.difference(&seen).collect();
    assert!(missing.is_empty(), "schema keys never emitted: {missing:?}");
}

fn same(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

fn check_defaults(schema: &Value, value: &Value, path: &str) {
    let Value::Object(fields) = value else { return };
    let schema = branch(schema, value);
    for (key, child) in fields {
        let sub = &schema["properties"][key];
        if let Some(default) = sub.get("default") {
            if key != "hidden" && key != "path" {
                assert!(same(default, child), "{path}{key}: schema {default}, loader {child}");
            }
        }
        check_defaults(sub, child, &format!("{path}{key}."));
    }
}

#[test]
fn schema_defaults_match_the_loader() {
    let schema = schema();
    for sample in samples() {
        let mut sample = sample;
        // Fields a sample sets on purpose.
        if let Some(obj) = sample.as_object_mut() {
            obj.remove("name");
            obj.remove("output");
            if obj["training"]["optimizer"]["kind"] == "adam" {
                obj["training"]["optimizer"] = json!({"kind": "sgd", "lr": 0.1});
            }
        }
        check_defaults(&schema, &sample, "");
    }
}
