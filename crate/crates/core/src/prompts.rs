//! Editable prompt assets.
//!
//! Defaults are compiled in; a directory holding files with the same names
//! overrides them one by one.

use std::path::Path;

macro_rules! asset {
    ($name:literal) => {
        include_str!(concat!("../assets/prompts/", $name))
    };
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    pub templating: String,
    pub templating_examples: String,
    pub answerability: String,
    pub answerability_examples: String,
    pub suggest: String,
    pub combined: String,
    pub impute: String,
    pub retrieval_only_note: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            templating: asset!("templating.txt").into(),
            templating_examples: asset!("templating_examples.txt").into(),
            answerability: asset!("answerability.txt").into(),
            answerability_examples: asset!("answerability_examples.txt").into(),
            suggest: asset!("suggest.txt").into(),
            combined: asset!("combined.txt").into(),
            impute: asset!("impute.txt").into(),
            retrieval_only_note: asset!("retrieval_only_note.txt").into(),
        }
    }
}

impl PromptSet {
    /// Defaults overridden by any matching `*.txt` file in `dir`.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let mut set = PromptSet::default();
        let slots: [(&str, &mut String); 8] = [
            ("templating.txt", &mut set.templating),
            ("templating_examples.txt", &mut set.templating_examples),
            ("answerability.txt", &mut set.answerability),
            ("answerability_examples.txt", &mut set.answerability_examples),
            ("suggest.txt", &mut set.suggest),
            ("combined.txt", &mut set.combined),
            ("impute.txt", &mut set.impute),
            ("retrieval_only_note.txt", &mut set.retrieval_only_note),
        ];
        for (name, slot) in slots {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path)?;
            }
        }
        Ok(set)
    }
}

/// Replaces each `{{key}}` with its value. Unknown placeholders are left as-is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}

/// Content between `<tag>` and `</tag>`, trimmed.
pub fn extract_tagged<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = start + text[start..].find(&close)?;
    Some(text[start..end].trim())
}
