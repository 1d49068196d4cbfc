//! Line-delimited JSON dataset files in canonical form: UTF-8, one record per
//! line, keys in declaration order, `\n` terminators.

use std::path::Path;

use crate::data::{DataError, Dataset, PreferenceExample};
use crate::io_util::write_atomic;

pub fn to_canonical_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    for ex in dataset {
        out.push_str(&serde_json::to_string(ex).expect("records always serialize"));
        out.push('\n');
    }
    out
}

pub fn parse(text: &str) -> Result<Dataset, DataError> {
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: PreferenceExample = serde_json::from_str(line).map_err(|e| DataError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        examples.push(ex);
    }
    Dataset::new(examples)
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    write_atomic(path, to_canonical_string(dataset).as_bytes())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset, DataError> {
    parse(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RECORD: &str = r#"{"id":"a","sensor":"thermal","task":"counting","context":[0,3,7],"positive":[30,2],"negatives":[[31,2],[32,2]]}"#;

    #[test]
    fn empty_input_is_an_empty_dataset() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn canonical_record_round_trips() {
        let text = format!("{RECORD}\n");
        let ds = parse(&text).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(to_canonical_string(&ds), text);
    }

    #[test]
    fn duplicate_positive_is_a_validation_error() {
        let bad = RECORD.replace("[[31,2]", "[[30,2]");
        match parse(&bad) {
            Err(DataError::Validation { id, .. }) => assert_eq!(id, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = format!("{RECORD}\n{{\"id\": 3\n");
        match parse(&text) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_sensor_tag_is_rejected() {
        let bad = RECORD.replace("thermal", "sonar");
        assert!(matches!(parse(&bad), Err(DataError::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_negative_list_is_rejected() {
        let bad = RECORD.replace("[[31,2],[32,2]]", "[]");
        assert!(matches!(parse(&bad), Err(DataError::Validation { .. })));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = format!("{RECORD}\n{RECORD}\n");
        assert!(matches!(parse(&text), Err(DataError::Validation { .. })));
    }
}
