//! Line-delimited JSON datasets, one task per line:
//! `{id, instruction, examples: [{input, output}], query, ground_truth?, task_kind, label_space?}`.

use std::fs;
use std::path::Path;

use iclorder_core::IclTask;
use serde_json::Value;

use crate::error::{Error, Result};

const REQUIRED: [&str; 5] = ["id", "instruction", "examples", "query", "task_kind"];

pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<IclTask>> {
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |field: &str, message: String| Error::Schema {
            path: path.to_path_buf(),
            line: line_no,
            field: field.to_string(),
            message,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let object = value
            .as_object()
            .ok_or_else(|| schema("record", "expected a JSON object".into()))?;
        if let Some(missing) = REQUIRED.iter().find(|f| !object.contains_key(**f)) {
            return Err(schema(missing, "missing required field".into()));
        }
        let task: IclTask = serde_json::from_value(value).map_err(|e| schema("record", e.to_string()))?;
        task.validate().map_err(|e| schema("record", e.to_string()))?;
        tasks.push(task);
    }
    let mut seen = std::collections::BTreeSet::new();
    for t in &tasks {
        if !seen.insert(t.id.as_str()) {
            return Err(Error::Config(format!("{}: duplicate task id {:?}", path.display(), t.id)));
        }
    }
    Ok(tasks)
}

pub fn load_dataset(path: &Path) -> Result<Vec<IclTask>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use iclorder_core::parse_api_sequence;

    const ROW: &str = r#"{"id":"t1","instruction":"List the APIs.","examples":[{"input":"q","output":"<<A>>"}],"query":"Who directed Lost in Translation?","ground_truth":"<<SearchPerson, PersonMovieCredits>>","task_kind":"sequence_generation"}"#;

    #[test]
    fn loads_each_line() {
        let text = format!("{ROW}\n{}\n\n{}\n", ROW.replace("t1", "t2"), ROW.replace("t1", "t3"));
        let tasks = parse_dataset(&text, Path::new("d.jsonl")).unwrap();
        assert_eq!(tasks.len(), 3);
        let gold = parse_api_sequence(tasks[0].ground_truth.as_deref().unwrap()).unwrap();
        assert_eq!(gold.names, vec!["SearchPerson", "PersonMovieCredits"]);
    }

    #[test]
    fn missing_query_names_line_and_field() {
        let bad = ROW.replace(r#""query":"Who directed Lost in Translation?","#, "");
        let err = parse_dataset(&format!("{ROW}\n{bad}\n"), Path::new("d.jsonl")).unwrap_err();
        match err {
            Error::Schema { line, field, .. } => assert_eq!((line, field.as_str()), (2, "query")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let err = parse_dataset("{nope", Path::new("d.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn classification_needs_label_space() {
        let row = r#"{"id":"c","instruction":"i","examples":[{"input":"x","output":"World"}],"query":"q","ground_truth":"World","task_kind":"classification"}"#;
        assert!(matches!(parse_dataset(row, Path::new("d")), Err(Error::Schema { .. })));
    }
}
