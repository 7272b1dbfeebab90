//! TOML prompt templates.
//!
//! ```toml
//! body = "{instruction}\n{examples}\nQuery: {query}\nAnswer:"
//! example_format = "Query: {input}\nAnswer: {output}"
//! example_separator = "\n\n"
//! examples_header = "Examples:\n"   # optional
//! ```

use std::fs;
use std::path::Path;

use iclorder_core::PromptTemplate;
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    body: String,
    example_format: String,
    #[serde(default = "default_separator")]
    example_separator: String,
    #[serde(default)]
    examples_header: String,
}

fn default_separator() -> String {
    "\n".into()
}

pub fn parse_template(text: &str) -> std::result::Result<PromptTemplate, String> {
    let file: TemplateFile = toml::from_str(text).map_err(|e| e.to_string())?;
    PromptTemplate::with_header(file.body, file.example_format, file.example_separator, file.examples_header)
        .map_err(|e| e.to_string())
}

pub fn load_template(path: &Path) -> Result<PromptTemplate> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_template(&text).map_err(|message| Error::Config(format!("{}: {message}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separator_defaults_to_newline() {
        let t = parse_template("body = \"{instruction}{examples}{query}\"\nexample_format = \"{input}={output}\"").unwrap();
        assert_eq!(t.example_separator(), "\n");
        assert_eq!(t.examples_header(), "");
    }

    #[test]
    fn rejects_bad_placeholders_and_unknown_keys() {
        assert!(parse_template("body = \"{instruction}{query}\"\nexample_format = \"{input}{output}\"").is_err());
        assert!(parse_template("body = \"{instruction}{examples}{query}\"\nexample_format = \"{input}{output}\"\nfoo = 1").is_err());
    }
}
