#[test]
fn committed_header_matches_generated() {
    let generated = std::fs::read_to_string(concat!(env!("OUT_DIR"), "/edgesched.h")).unwrap();
    let committed = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/edgesched.h")).unwrap();
    assert!(
        generated == committed,
        "include/edgesched.h is stale; copy the generated header from {}",
        env!("OUT_DIR")
    );
}
