//! Scenarios shipped with the binary.

use crate::config::{ConfigError, ScenarioConfig};

pub const BUILTIN: [(&str, &str); 9] = [
    ("trivial-suspension", include_str!("../scenarios/trivial-suspension.toml")),
    ("rigid-rotation", include_str!("../scenarios/rigid-rotation.toml")),
    ("tilted-rotation", include_str!("../scenarios/tilted-rotation.toml")),
    ("annulus-col", include_str!("../scenarios/annulus-col.toml")),
    ("normally-contracting", include_str!("../scenarios/normally-contracting.toml")),
    ("split-winding", include_str!("../scenarios/split-winding.toml")),
    ("model-field", include_str!("../scenarios/model-field.toml")),
    ("noncommuting-control", include_str!("../scenarios/noncommuting-control.toml")),
    ("model-map-suite", include_str!("../scenarios/model-map-suite.toml")),
];

/// Source of a built-in scenario. Accepts an optional `.toml` or `.cfg` suffix.
pub fn source(name: &str) -> Option<&'static str> {
    let stem = name
        .strip_suffix(".toml")
        .or_else(|| name.strip_suffix(".cfg"))
        .unwrap_or(name);
    BUILTIN.iter().find(|(n, _)| *n == stem).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Option<Result<ScenarioConfig, ConfigError>> {
    source(name).map(ScenarioConfig::parse)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}
