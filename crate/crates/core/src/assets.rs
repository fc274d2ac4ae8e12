//! Bundled prompt texts, addressable from configs as `asset:<name>`.

use thiserror::Error;

const RAW: &[(&str, &str)] = &[
    (
        "tictactoe_task",
        include_str!("../assets/tictactoe_task.txt"),
    ),
    ("persona_ceo", include_str!("../assets/persona_ceo.txt")),
    (
        "persona_product_manager",
        include_str!("../assets/persona_product_manager.txt"),
    ),
    (
        "persona_developer",
        include_str!("../assets/persona_developer.txt"),
    ),
    (
        "knowledge_control",
        include_str!("../assets/knowledge_control.txt"),
    ),
    (
        "knowledge_template",
        include_str!("../assets/knowledge_template.txt"),
    ),
    (
        "ipa_labeling_prompt",
        include_str!("../assets/ipa_labeling_prompt.txt"),
    ),
];

pub const ASSET_PREFIX: &str = "asset:";

/// Placeholder in the knowledge template replaced by a move description.
pub const TEMPLATE_PLACEHOLDER: &str = "{description}";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown asset `{0}`")]
pub struct UnknownAsset(pub String);

/// Asset text without the file's final newline.
pub fn get(name: &str) -> Option<&'static str> {
    RAW.iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| text.strip_suffix('\n').unwrap_or(text))
}

pub fn names() -> impl Iterator<Item = &'static str> {
    RAW.iter().map(|(n, _)| *n)
}

/// Expands an `asset:<name>` reference; any other text is returned as is.
pub fn resolve(text: &str) -> Result<String, UnknownAsset> {
    match text.trim().strip_prefix(ASSET_PREFIX) {
        Some(name) => get(name)
            .map(str::to_string)
            .ok_or_else(|| UnknownAsset(name.to_string())),
        None => Ok(text.to_string()),
    }
}

pub fn labeling_prompt() -> &'static str {
    get("ipa_labeling_prompt").expect("bundled")
}

pub fn task_prompt() -> &'static str {
    get("tictactoe_task").expect("bundled")
}

pub fn knowledge_control() -> &'static str {
    get("knowledge_control").expect("bundled")
}

pub fn knowledge_template() -> &'static str {
    get("knowledge_template").expect("bundled")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_asset_resolves() {
        for n in names() {
            let t = resolve(&format!("asset:{n}")).unwrap();
            assert!(!t.is_empty());
            assert!(!t.ends_with('\n'), "{n}");
        }
    }

    #[test]
    fn literal_text_passes_through() {
        assert_eq!(resolve("just text").unwrap(), "just text");
    }

    #[test]
    fn unknown_asset_errors() {
        assert_eq!(resolve("asset:nope"), Err(UnknownAsset("nope".into())));
    }

    #[test]
    fn template_has_placeholder() {
        assert!(knowledge_template().contains(TEMPLATE_PLACEHOLDER));
    }
}
