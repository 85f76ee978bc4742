//! Corpus ingestion: load delimiter-separated post data, validate and clean
//! rows, fill missing values, and produce stratified cross-validation folds.

mod folds;
mod records;
pub mod synth;

pub use folds::{fold_assignments, make_folds, make_folds_with, FoldPlan};
pub use records::{CleanRecord, RawRecord, SchemaMap};
pub use synth::{synthesize_corpus, SignalSpec};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One dropped row with the reason it failed validation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DropEntry {
    pub id: String,
    pub reason: String,
}

pub type DropReport = Vec<DropEntry>;

/// Read a corpus from a UTF-8 CSV/TSV file with a header row. The schema maps
/// logical field names to column names; unparseable cells become missing.
pub fn load_corpus(path: &Path, schema: &SchemaMap) -> Result<Vec<RawRecord>> {
    let delimiter = match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => b'\t',
        _ => b',',
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::Data(e.to_string()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .clone();
    let columns = schema.resolve(&headers)?;

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Data(format!("malformed row: {e}")))?;
        out.push(records::parse_row(&row, &columns));
    }
    Ok(out)
}

/// Remove rows failing structural checks. Returns survivors (order preserved)
/// plus a report naming each dropped id.
pub fn drop_invalid(records: &[RawRecord]) -> (Vec<RawRecord>, DropReport) {
    let mut kept = Vec::with_capacity(records.len());
    let mut report = DropReport::new();
    for r in records {
        if let Some(reason) = r.invalid_reason() {
            report.push(DropEntry {
                id: r.id.clone(),
                reason,
            });
        } else {
            kept.push(r.clone());
        }
    }
    (kept, report)
}

/// Minimum present timestamp over a split. Errors when every timestamp is
/// missing (there is nothing to anchor the fill policy to).
pub fn min_timestamp(records: &[RawRecord]) -> Result<i64> {
    records
        .iter()
        .filter_map(|r| r.timestamp)
        .min()
        .ok_or_else(|| {
            Error::Config("all timestamps missing; timestamp floor undefined".to_string())
        })
}

/// Replace missing values: numbers with 0, timestamps with the training-split
/// minimum, text with the empty string. Present values are untouched.
pub fn fill_missing(records: &[RawRecord], timestamp_floor: i64) -> Vec<CleanRecord> {
    records
        .iter()
        .map(|r| CleanRecord {
            id: r.id.clone(),
            user_id: r.user_id.clone().unwrap_or_default(),
            text: r.text.clone().unwrap_or_default(),
            timestamp: r.timestamp.unwrap_or(timestamp_floor),
            likes: r.likes.unwrap_or(0).max(0) as u64,
            comments: r.comments.unwrap_or(0).max(0) as u64,
            shares: r.shares.unwrap_or(0).max(0) as u64,
            image_refs: r.image_refs.clone(),
            label: r.label.and_then(|l| u8::try_from(l).ok()),
        })
        .collect()
}

/// Re-emit a cleaned corpus in the same column layout it was loaded with.
pub fn save_corpus(path: &Path, records: &[CleanRecord], schema: &SchemaMap) -> Result<()> {
    let delimiter = match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => b'\t',
        _ => b',',
    };
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| Error::Data(e.to_string()))?;
    writer
        .write_record(schema.header_row())
        .map_err(|e| Error::Data(e.to_string()))?;
    for r in records {
        writer
            .write_record(records_to_row(r))
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn records_to_row(r: &CleanRecord) -> Vec<String> {
    vec![
        r.id.clone(),
        r.user_id.clone(),
        r.text.clone(),
        r.timestamp.to_string(),
        r.likes.to_string(),
        r.comments.to_string(),
        r.shares.to_string(),
        r.image_refs.join("|"),
        r.label.map_or_else(String::new, |l| l.to_string()),
    ]
}

pub fn save_drop_report(path: &Path, report: &DropReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(json.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const HEADER: &str =
        "id,user_name,post_message,timestamp_post,num_like_post,num_comment_post,num_share_post,image,label";

    #[test]
    fn load_preserves_file_order() {
        let f = write_csv(&format!(
            "{HEADER}\na,u1,hello,100,1,2,3,,0\nb,u2,world,200,4,5,6,,1\nc,u3,again,300,7,8,9,,0\n"
        ));
        let recs = load_corpus(f.path(), &SchemaMap::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].id, "a");
        assert_eq!(recs[2].id, "c");
        assert_eq!(recs[1].likes, Some(4));
    }

    #[test]
    fn empty_cell_becomes_missing() {
        let f = write_csv(&format!("{HEADER}\na,u1,hello,,1,2,3,,0\n"));
        let recs = load_corpus(f.path(), &SchemaMap::default()).unwrap();
        assert_eq!(recs[0].timestamp, None);
    }

    #[test]
    fn unparseable_cell_becomes_missing() {
        let f = write_csv(&format!("{HEADER}\na,u1,hello,not_a_number,xyz,2,3,,0\n"));
        let recs = load_corpus(f.path(), &SchemaMap::default()).unwrap();
        assert_eq!(recs[0].timestamp, None);
        assert_eq!(recs[0].likes, None);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_corpus(Path::new("/nonexistent/corpus.csv"), &SchemaMap::default());
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    #[test]
    fn missing_column_names_the_column() {
        let f = write_csv("id,post_message\na,hello\n");
        let err = load_corpus(f.path(), &SchemaMap::default());
        match err {
            Err(Error::Schema { column }) => assert_eq!(column, "user_name"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn drop_invalid_filters_and_reports() {
        let mut records = vec![RawRecord::labeled("a", "u", "t", 1, 0)];
        let mut bad_label = RawRecord::labeled("b", "u", "t", 1, 0);
        bad_label.label = Some(2);
        let mut negative = RawRecord::labeled("c", "u", "t", 1, 0);
        negative.likes = Some(-3);
        let mut empty_id = RawRecord::labeled("", "u", "t", 1, 0);
        empty_id.id = String::new();
        records.extend([bad_label, negative, empty_id]);

        let (kept, report) = drop_invalid(&records);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.len(), 3);
        assert_eq!(report[0].reason, "invalid label");
        assert_eq!(report[1].reason, "negative count");
        assert_eq!(report[2].reason, "empty id");
    }

    #[test]
    fn drop_invalid_identity_on_valid_input() {
        let records = vec![
            RawRecord::labeled("a", "u", "t", 1, 0),
            RawRecord::labeled("b", "u", "t", 2, 1),
        ];
        let (kept, report) = drop_invalid(&records);
        assert_eq!(kept, records);
        assert!(report.is_empty());
    }

    #[test]
    fn drop_invalid_is_idempotent() {
        let mut records = vec![RawRecord::labeled("a", "u", "t", 1, 0)];
        records[0].label = Some(9);
        records.push(RawRecord::labeled("b", "u", "t", 2, 1));
        let (once, _) = drop_invalid(&records);
        let (twice, second_report) = drop_invalid(&once);
        assert_eq!(once, twice);
        assert!(second_report.is_empty());
    }

    #[test]
    fn fill_missing_applies_policy() {
        let mut r = RawRecord::labeled("a", "u", "t", 100, 0);
        r.likes = None;
        r.timestamp = None;
        r.text = None;
        let clean = fill_missing(&[r], 1_577_836_800);
        assert_eq!(clean[0].likes, 0);
        assert_eq!(clean[0].timestamp, 1_577_836_800);
        assert_eq!(clean[0].text, "");
    }

    #[test]
    fn fill_missing_leaves_present_values() {
        let r = RawRecord::labeled("a", "u", "text", 55, 1);
        let clean = fill_missing(&[r.clone()], 10);
        assert_eq!(clean[0].timestamp, 55);
        assert_eq!(clean[0].text, "text");
        assert_eq!(clean[0].label, Some(1));
    }

    #[test]
    fn fill_missing_is_idempotent() {
        let mut r = RawRecord::labeled("a", "u", "t", 100, 0);
        r.comments = None;
        let once = fill_missing(&[r], 42);
        let as_raw: Vec<RawRecord> = once.iter().map(CleanRecord::to_raw).collect();
        let twice = fill_missing(&as_raw, 42);
        assert_eq!(once, twice);
    }

    #[test]
    fn min_timestamp_requires_a_present_value() {
        let mut r = RawRecord::labeled("a", "u", "t", 0, 0);
        r.timestamp = None;
        assert!(matches!(min_timestamp(&[r]), Err(Error::Config(_))));
        let ok = RawRecord::labeled("b", "u", "t", 77, 0);
        assert_eq!(min_timestamp(&[ok]).unwrap(), 77);
    }

    #[test]
    fn corpus_roundtrip_through_file() {
        let raw = vec![
            RawRecord::labeled("a", "u1", "xin chào", 100, 0),
            RawRecord::labeled("b", "u2", "tin nóng", 200, 1),
        ];
        let clean = fill_missing(&raw, 100);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        save_corpus(&path, &clean, &SchemaMap::default()).unwrap();
        let reloaded = load_corpus(&path, &SchemaMap::default()).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded[1].text.as_deref(), Some("tin nóng"));
        assert_eq!(reloaded[1].label, Some(1));
    }
}
