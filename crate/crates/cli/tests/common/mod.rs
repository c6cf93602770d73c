//! Shared helpers for the integration and acceptance tests.

use std::path::{Path, PathBuf};

use sectorfolio_cli::RunConfig;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_config() -> RunConfig {
    RunConfig::load(&fixture_dir().join("config.toml")).expect("bundled fixture config loads")
}

/// Copy the bundled fixture tree into a temp dir (so tests can mutate it).
#[allow(dead_code)]
pub fn copy_fixture_to(dest: &Path) {
    copy_tree(&fixture_dir(), dest);
}

#[allow(dead_code)]
fn copy_tree(src: &Path, dest: &Path) {
    std::fs::create_dir_all(dest).unwrap();
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let target = dest.join(entry.file_name());
        if entry.path().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}
