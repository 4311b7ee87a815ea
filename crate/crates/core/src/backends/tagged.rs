//! Extraction of `<tag>...</tag>` sections from teacher output.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TagError {
    #[error("required tag <{0}> is absent")]
    MissingTag(String),
    #[error("tag <{0}> is never closed")]
    UnclosedTag(String),
}

/// Raw teacher output plus the contents extracted per expected tag, in
/// order of occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedOutput {
    pub raw: String,
    pub tags: BTreeMap<String, Vec<String>>,
}

impl TaggedOutput {
    /// First occurrence of a tag's content, if any.
    pub fn first(&self, tag: &str) -> Option<&str> {
        self.tags.get(tag).and_then(|v| v.first()).map(|s| s.as_str())
    }

    pub fn all(&self, tag: &str) -> &[String] {
        self.tags.get(tag).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Extract the content between `<tag>` and `</tag>` for every expected tag.
/// Multiple occurrences are collected in order; contents are trimmed.
/// A required tag that is absent or unclosed is an error naming the tag.
pub fn parse_tagged(raw: &str, expected_tags: &[&str]) -> Result<TaggedOutput, TagError> {
    let mut tags = BTreeMap::new();
    for &tag in expected_tags {
        let open = format!("<{tag}>");
        let close = format!("</{tag}>");
        let mut contents = Vec::new();
        let mut cursor = 0usize;
        while let Some(rel) = raw[cursor..].find(&open) {
            let content_start = cursor + rel + open.len();
            let rel_end = raw[content_start..]
                .find(&close)
                .ok_or_else(|| TagError::UnclosedTag(tag.to_string()))?;
            contents.push(raw[content_start..content_start + rel_end].trim().to_string());
            cursor = content_start + rel_end + close.len();
        }
        if contents.is_empty() {
            return Err(TagError::MissingTag(tag.to_string()));
        }
        tags.insert(tag.to_string(), contents);
    }
    Ok(TaggedOutput {
        raw: raw.to_string(),
        tags,
    })
}
