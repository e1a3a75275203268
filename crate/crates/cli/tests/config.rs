use p2m_cli::RunConfig;

#[test]
fn defaults_round_trip() {
    let c = RunConfig::default();
    assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    assert_eq!(RunConfig::from_json("{}").unwrap(), c);
}

#[test]
fn unknown_key_names_its_path() {
    let e = RunConfig::from_json(r#"{"training": {"weights": {"gann": 1.0}}}"#).unwrap_err();
    let m = e.to_string();
    assert!(m.contains("training.weights"), "{m}");
    assert!(m.contains("gann"), "{m}");
}

#[test]
fn wrong_type_names_its_path() {
    let e = RunConfig::from_json(r#"{"data": {"window": "long"}}"#).unwrap_err();
    assert!(e.to_string().contains("data.window"), "{e}");
}

#[test]
fn semantic_checks() {
    assert!(RunConfig::from_json(r#"{"data": {"pose_fraction": 1.5}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"training": {"arch": {"kernel": 4}}}"#).is_err());
}
