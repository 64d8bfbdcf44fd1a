use emgevm::dataio::{synth_recording, Gesture, RecordingKey, Side, SynthConfig};
use emgevm::pipeline::{
    evaluate, extract, train, Bundle, ClassifierKind, FeatureTable, RunConfig, WindowConfig,
};
use emgevm::Error;

fn table_and_config() -> (FeatureTable, RunConfig) {
    let synth = SynthConfig {
        subjects: 1,
        samples: 3000,
        ..SynthConfig::default()
    };
    let recs: Vec<_> = Gesture::ALL[..4]
        .iter()
        .flat_map(|&label| {
            (1..=6).map(move |trial| RecordingKey {
                subject: 1,
                label,
                trial,
            })
        })
        .map(|key| synth_recording(&synth, key, 2))
        .collect();
    let cfg = RunConfig {
        window: WindowConfig {
            win_len: 300,
            step: 300,
            trim: 0.1,
        },
        order: 4,
        ..RunConfig::default()
    };
    (extract(&recs, &cfg).unwrap(), cfg)
}

#[test]
fn saved_bundle_predicts_identically() {
    let (table, cfg) = table_and_config();
    let dir = tempfile::tempdir().unwrap();
    for kind in [ClassifierKind::Evm, ClassifierKind::Knn] {
        let cfg = RunConfig {
            classifier: kind,
            ..cfg.clone()
        };
        let (bundle, _) = train(&table, &cfg).unwrap();
        let path = dir.path().join("model.json");
        bundle.save(&path).unwrap();
        let loaded = Bundle::load(&path).unwrap();
        assert_eq!(loaded, bundle);
        let a = evaluate(&bundle, &table, Side::Test).unwrap();
        let b = evaluate(&loaded, &table, Side::Test).unwrap();
        assert_eq!(a.predictions, b.predictions);
    }
}

#[test]
fn feature_csv_survives_disk() {
    let (table, _) = table_and_config();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    table.write_csv(&path).unwrap();
    assert_eq!(FeatureTable::read_csv(&path).unwrap(), table);
}

#[test]
fn bundle_load_errors_name_the_field() {
    let (table, cfg) = table_and_config();
    let (bundle, _) = train(&table, &cfg).unwrap();
    let text = bundle.to_json().unwrap();

    let wrong_version = text.replacen("\"format_version\": 1", "\"format_version\": 9", 1);
    match Bundle::from_json(&wrong_version) {
        Err(Error::ModelLoad { field, .. }) => assert_eq!(field, "format_version"),
        other => panic!("{other:?}"),
    }
    let no_scaler = text.replacen("\"scaler\"", "\"scalar\"", 1);
    match Bundle::from_json(&no_scaler) {
        Err(Error::ModelLoad { field, msg }) => assert!(
            field.contains("scaler") || msg.contains("scaler"),
            "{field}: {msg}"
        ),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        Bundle::from_json(&text[..text.len() / 2]),
        Err(Error::ModelLoad { .. })
    ));
}

#[test]
fn defaults_are_recorded_in_the_bundle() {
    let (table, cfg) = table_and_config();
    let (bundle, _) = train(&table, &cfg).unwrap();
    let v: serde_json::Value = serde_json::from_str(&bundle.to_json().unwrap()).unwrap();
    assert_eq!(v["config"]["evm"]["metric"], "cosine");
    assert_eq!(v["config"]["evm"]["tail_size"], 27);
    assert_eq!(v["config"]["evm"]["cover_threshold"], 0.3);
    assert_eq!(v["model"]["kind"], "evm");
    assert_eq!(v["config"]["filters"][0]["kind"], "notch");
}
