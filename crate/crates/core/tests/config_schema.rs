use serde_json::{json, Value};
use simpose::augment::{AugmentConfig, DiscardRule};

fn schema() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../schemas/augment_config.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn validator() -> jsonschema::Validator {
    jsonschema::draft202012::new(&schema()).unwrap()
}

/// Both gates agree: the schema and the typed parse plus `validate`.
fn accepted(doc: &Value) -> (bool, bool) {
    let by_schema = validator().is_valid(doc);
    let by_serde = serde_json::from_value::<AugmentConfig>(doc.clone())
        .map(|c| c.validate().is_ok())
        .unwrap_or(false);
    (by_schema, by_serde)
}

#[test]
fn defaults_and_identity_conform() {
    let v = validator();
    for cfg in [AugmentConfig::default(), AugmentConfig::identity()] {
        let doc = serde_json::to_value(&cfg).unwrap();
        let errors: Vec<String> = v.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{errors:?}");
    }
    let mut c = AugmentConfig::default();
    c.depth.background = None;
    c.rotation_discard = DiscardRule::MinVisibleFraction { fraction: 0.4 };
    assert!(v.is_valid(&serde_json::to_value(&c).unwrap()));
    assert!(v.is_valid(&json!({})));
}

/// Every serialized field is declared in the schema and vice versa.
#[test]
fn schema_properties_match_serialized_fields() {
    let s = schema();
    let defs = &s["$defs"];
    let keys = |v: &Value| -> Vec<String> {
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    let doc = serde_json::to_value(AugmentConfig::default()).unwrap();
    assert_eq!(keys(&doc), keys(&s["properties"]));
    assert_eq!(keys(&doc["rgb"]), keys(&defs["rgb"]["properties"]));
    assert_eq!(keys(&doc["depth"]), keys(&defs["depth"]["properties"]));
    assert_eq!(keys(&doc["depth"]["background"]), keys(&defs["background"]["properties"]));
    assert_eq!(keys(&doc["depth"]["background"]["grid_a"]), keys(&defs["grid"]["properties"]));
    assert_eq!(keys(&doc["depth"]["shift_perlin"]), keys(&defs["perlin"]["properties"]));
}

#[test]
fn schema_and_typed_validation_agree() {
    let base = serde_json::to_value(AugmentConfig::default()).unwrap();
    let with = |path: &[&str], value: Value| {
        let mut d = base.clone();
        let mut cur = &mut d;
        for p in &path[..path.len() - 1] {
            cur = &mut cur[*p];
        }
        cur[path[path.len() - 1]] = value;
        d
    };
    let rejected = [
        with(&["rgb", "blur_prob"], json!(1.5)),
        with(&["rgb", "extra"], json!(0)),
        with(&["depth", "sobel_threshold"], json!(0.0)),
        with(&["depth", "shift_perlin", "frequency"], json!([0.0, 1.0])),
        with(&["depth", "background", "grid_b", "grid_cols"], json!(1)),
        with(&["depth", "background", "offset_behind"], json!(0.0)),
        with(&["rotation_discard"], json!({"rule": "min_visible_fraction", "fraction": 2.0})),
        with(&["rotation_discard"], json!({"rule": "sometimes"})),
        with(&["schema_version"], json!(2)),
    ];
    for doc in &rejected {
        let (a, b) = accepted(doc);
        assert!(!a, "schema accepted {doc}");
        if doc["schema_version"] == 1 {
            assert!(!b, "typed config accepted {doc}");
        }
    }
    let fine = [
        with(&["depth", "background"], Value::Null),
        with(&["rgb", "seed"], json!(12345)),
        with(&["depth", "edge_dilation"], json!(2)),
    ];
    for doc in &fine {
        assert_eq!(accepted(doc), (true, true), "{doc}");
    }
}
