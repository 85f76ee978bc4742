use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps logical field names to the column names used in a corpus file.
/// Defaults to the ReINTEL public header names.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct SchemaMap {
    pub id: String,
    pub user_id: String,
    pub text: String,
    pub timestamp: String,
    pub likes: String,
    pub comments: String,
    pub shares: String,
    pub image_refs: String,
    pub label: String,
}

impl Default for SchemaMap {
    fn default() -> Self {
        SchemaMap {
            id: "id".into(),
            user_id: "user_name".into(),
            text: "post_message".into(),
            timestamp: "timestamp_post".into(),
            likes: "num_like_post".into(),
            comments: "num_comment_post".into(),
            shares: "num_share_post".into(),
            image_refs: "image".into(),
            label: "label".into(),
        }
    }
}

/// Column indices resolved against a concrete header. The label column is the
/// only one allowed to be absent (unlabeled test files).
pub(crate) struct ResolvedColumns {
    pub id: usize,
    pub user_id: usize,
    pub text: usize,
    pub timestamp: usize,
    pub likes: usize,
    pub comments: usize,
    pub shares: usize,
    pub image_refs: usize,
    pub label: Option<usize>,
}

impl SchemaMap {
    pub(crate) fn resolve(&self, headers: &csv::StringRecord) -> Result<ResolvedColumns> {
        let index: HashMap<&str, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim(), i))
            .collect();
        let find = |column: &str| -> Result<usize> {
            index.get(column).copied().ok_or_else(|| Error::Schema {
                column: column.to_string(),
            })
        };
        Ok(ResolvedColumns {
            id: find(&self.id)?,
            user_id: find(&self.user_id)?,
            text: find(&self.text)?,
            timestamp: find(&self.timestamp)?,
            likes: find(&self.likes)?,
            comments: find(&self.comments)?,
            shares: find(&self.shares)?,
            image_refs: find(&self.image_refs)?,
            label: index.get(self.label.as_str()).copied(),
        })
    }

    pub fn header_row(&self) -> Vec<String> {
        vec![
            self.id.clone(),
            self.user_id.clone(),
            self.text.clone(),
            self.timestamp.clone(),
            self.likes.clone(),
            self.comments.clone(),
            self.shares.clone(),
            self.image_refs.clone(),
            self.label.clone(),
        ]
    }
}

/// One social post as loaded, before cleaning. `None` means missing.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub user_id: Option<String>,
    pub text: Option<String>,
    pub timestamp: Option<i64>,
    pub likes: Option<i64>,
    pub comments: Option<i64>,
    pub shares: Option<i64>,
    pub image_refs: Vec<String>,
    /// 0 = reliable, 1 = unreliable; absent on test rows. Kept wide here so
    /// out-of-domain values survive parsing and can be reported by
    /// `drop_invalid`.
    pub label: Option<i64>,
}

impl RawRecord {
    /// Convenience constructor for a fully present labeled record.
    pub fn labeled(id: &str, user_id: &str, text: &str, timestamp: i64, label: i64) -> Self {
        RawRecord {
            id: id.to_string(),
            user_id: Some(user_id.to_string()),
            text: Some(text.to_string()),
            timestamp: Some(timestamp),
            likes: Some(0),
            comments: Some(0),
            shares: Some(0),
            image_refs: Vec::new(),
            label: Some(label),
        }
    }

    /// First structural-validity failure, if any.
    pub fn invalid_reason(&self) -> Option<String> {
        if self.id.trim().is_empty() {
            return Some("empty id".to_string());
        }
        if let Some(l) = self.label {
            if l != 0 && l != 1 {
                return Some("invalid label".to_string());
            }
        }
        for count in [self.likes, self.comments, self.shares].into_iter().flatten() {
            if count < 0 {
                return Some("negative count".to_string());
            }
        }
        None
    }
}

/// One social post after cleaning: no missing fields.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CleanRecord {
    pub id: String,
    pub user_id: String,
    pub text: String,
    pub timestamp: i64,
    pub likes: u64,
    pub comments: u64,
    pub shares: u64,
    pub image_refs: Vec<String>,
    pub label: Option<u8>,
}

impl CleanRecord {
    /// View a clean record as a raw one (used by idempotence checks and by
    /// callers re-running the fill policy over already-clean data).
    pub fn to_raw(&self) -> RawRecord {
        RawRecord {
            id: self.id.clone(),
            user_id: Some(self.user_id.clone()),
            text: Some(self.text.clone()),
            timestamp: Some(self.timestamp),
            likes: Some(self.likes as i64),
            comments: Some(self.comments as i64),
            shares: Some(self.shares as i64),
            image_refs: self.image_refs.clone(),
            label: self.label.map(i64::from),
        }
    }
}

fn parse_opt_int(cell: Option<&str>) -> Option<i64> {
    let cell = cell?.trim();
    if cell.is_empty() {
        return None;
    }
    // Counts sometimes arrive as floats ("12.0"); accept them when integral.
    if let Ok(v) = cell.parse::<i64>() {
        return Some(v);
    }
    match cell.parse::<f64>() {
        Ok(f) if f.fract() == 0.0 && f.abs() < 9e15 => Some(f as i64),
        _ => None,
    }
}

fn parse_opt_text(cell: Option<&str>) -> Option<String> {
    cell.map(|c| c.to_string())
}

fn parse_image_refs(cell: Option<&str>) -> Vec<String> {
    let Some(cell) = cell else { return Vec::new() };
    cell.split(|c: char| c == '|' || c == ',' || c.is_whitespace())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

pub(crate) fn parse_row(row: &csv::StringRecord, columns: &ResolvedColumns) -> RawRecord {
    RawRecord {
        id: row.get(columns.id).unwrap_or("").trim().to_string(),
        user_id: parse_opt_text(row.get(columns.user_id)).filter(|s| !s.trim().is_empty()),
        text: parse_opt_text(row.get(columns.text)).filter(|s| !s.is_empty()),
        timestamp: parse_opt_int(row.get(columns.timestamp)),
        likes: parse_opt_int(row.get(columns.likes)),
        comments: parse_opt_int(row.get(columns.comments)),
        shares: parse_opt_int(row.get(columns.shares)),
        image_refs: parse_image_refs(row.get(columns.image_refs)),
        label: columns.label.and_then(|c| parse_opt_int(row.get(c))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_counts_parse_when_integral() {
        assert_eq!(parse_opt_int(Some("12.0")), Some(12));
        assert_eq!(parse_opt_int(Some("12.5")), None);
        assert_eq!(parse_opt_int(Some("-3")), Some(-3));
        assert_eq!(parse_opt_int(Some("")), None);
    }

    #[test]
    fn image_refs_split_on_separators() {
        let refs = parse_image_refs(Some("a.jpg|b.png c.gif"));
        assert_eq!(refs, vec!["a.jpg", "b.png", "c.gif"]);
        assert!(parse_image_refs(Some("")).is_empty());
        assert!(parse_image_refs(None).is_empty());
    }
}
