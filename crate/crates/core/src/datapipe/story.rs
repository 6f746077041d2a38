use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Images and sentences per story.
pub const STORY_LEN: usize = 5;

/// One story: five images, each paired with one sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorySample {
    pub story_id: String,
    pub image_ids: Vec<String>,
    pub sentences: Vec<String>,
}

impl StorySample {
    pub fn validate(&self) -> Result<()> {
        if self.image_ids.len() != STORY_LEN || self.sentences.len() != STORY_LEN {
            return Err(Error::DataContract(format!(
                "story {:?} has {} images and {} sentences; expected {STORY_LEN} of each",
                self.story_id,
                self.image_ids.len(),
                self.sentences.len()
            )));
        }
        Ok(())
    }
}

/// Parses JSON Lines; blank lines are skipped.
pub fn parse_stories(text: &str, source_name: &str) -> Result<Vec<StorySample>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let sample: StorySample = serde_json::from_str(trimmed)
            .map_err(|e| Error::format(source_name, start, e.to_string()))?;
        sample
            .validate()
            .map_err(|e| Error::format(source_name, start, e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

pub fn read_stories(path: &Path) -> Result<Vec<StorySample>> {
    let mut text = String::new();
    let mut reader = BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
    loop {
        let n = reader.read_line(&mut text).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
    }
    parse_stories(&text, &path.display().to_string())
}

pub fn write_stories(path: &Path, stories: &[StorySample]) -> Result<()> {
    let mut buf = Vec::new();
    for s in stories {
        serde_json::to_writer(&mut buf, s)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_offsets() {
        let good = r#"{"story_id":"s1","image_ids":["a","b","c","d","e"],"sentences":["1","2","3","4","5"]}"#;
        let text = format!("{good}\n\n{{\"story_id\":\"s2\",\"image_ids\":[],\"sentences\":[]}}\n");
        let err = parse_stories(&text, "x.jsonl").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, good.len() as u64 + 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_stories(good, "x").unwrap().len(), 1);
    }
}
