use std::path::Path;

use qvc_core::data::{load_csv, LabelColumn, Preprocessing};
use qvc_core::eval::accuracy;
use qvc_core::model::{ModelDocument, ModelSpec};

#[test]
fn csv_to_saved_model_and_back() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/breast_cancer.csv");
    let raw = load_csv(&path, &LabelColumn::Name("label".into()), true).unwrap();
    assert_eq!((raw.len(), raw.num_features()), (569, 30));

    let prep = Preprocessing::fit(&raw, Some(8)).unwrap();
    let data = prep.apply(&raw).unwrap();
    assert!(data.rows().flatten().all(|v| (0.0..=std::f64::consts::PI).contains(v)));

    let spec: ModelSpec = "bagging:learners=3,depth=1,budget=80".parse().unwrap();
    let model = spec.train(&data, 11).unwrap();
    let acc = accuracy(&model.predictions(&data).unwrap(), data.labels()).unwrap();
    assert!(acc > data.majority_rate(), "{acc}");

    let doc = ModelDocument::new(spec, 11, model);
    let back = ModelDocument::from_json(&doc.to_json().unwrap()).unwrap();
    for i in (0..raw.len()).step_by(37) {
        let (p, label) = back.model.predict_raw(raw.row(i)).unwrap();
        assert_eq!(p, doc.model.predict_proba(data.row(i)).unwrap());
        assert_eq!(label, u8::from(p >= 0.5));
    }
}

#[test]
fn digits_boosting_terminates_within_cap() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/digits_8_9.csv");
    let raw = load_csv(&path, &LabelColumn::Last, true).unwrap();
    let data = Preprocessing::fit(&raw, Some(8)).unwrap().apply(&raw).unwrap();
    let model = ModelSpec::boosting_default().train(&data, 2).unwrap();
    assert!((1..=50).contains(&model.learner_count()));
}
