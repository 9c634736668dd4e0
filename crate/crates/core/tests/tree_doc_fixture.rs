use scm_forge_core::tree_doc;
use scm_forge_testkit::checks::seeded_device;

const FIXTURE: &[u8] = include_bytes!("fixtures/seeded_tree.xml");

#[test]
fn fixture_roundtrip_is_byte_exact() {
    let tree = tree_doc::load(FIXTURE).unwrap();
    assert_eq!(tree_doc::save(&tree), FIXTURE);
}

#[test]
fn seeded_device_renders_the_fixture() {
    let d = seeded_device();
    let doc = tree_doc::save(d.tree());
    if std::env::var_os("SCM_WRITE_FIXTURE").is_some() {
        std::fs::write(
            concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/seeded_tree.xml"),
            &doc,
        )
        .unwrap();
    }
    assert_eq!(
        String::from_utf8(doc).unwrap(),
        String::from_utf8(FIXTURE.to_vec()).unwrap()
    );
}

#[test]
fn loaded_fixture_equals_seeded_tree() {
    let d = seeded_device();
    assert_eq!(&tree_doc::load(FIXTURE).unwrap(), d.tree());
}
