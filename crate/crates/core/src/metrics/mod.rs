//! Text-generation metrics: corpus BLEU and a stem-matching METEOR.

pub mod bleu;
pub mod meteor;

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu, BleuScore, MAX_ORDER};
pub use meteor::{align, meteor_lite, Alignment};

use crate::error::{Error, Result};

/// Scores in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub bleu_cumulative: [f64; MAX_ORDER],
    pub bleu_precisions: [f64; MAX_ORDER],
    pub meteor: f64,
    pub sentence_count: usize,
}

/// On-disk form, on the 0–100 scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub bleu: [f64; MAX_ORDER],
    pub precisions: [f64; MAX_ORDER],
    pub meteor: f64,
    pub sentences: usize,
}

impl ScoreReport {
    pub fn to_json(&self) -> ReportJson {
        ReportJson {
            bleu: self.bleu_cumulative.map(|x| x * 100.0),
            precisions: self.bleu_precisions.map(|x| x * 100.0),
            meteor: self.meteor * 100.0,
            sentences: self.sentence_count,
        }
    }
}

/// Scores paired sentence lists.
pub fn score_sentences<G: AsRef<str> + Sync, R: AsRef<str> + Sync>(generated: &[G], references: &[R]) -> Result<ScoreReport> {
    let b = bleu(generated, references, MAX_ORDER)?;
    let meteor = generated
        .iter()
        .zip(references)
        .map(|(g, r)| meteor_lite(g.as_ref(), r.as_ref()))
        .sum::<f64>()
        / generated.len() as f64;
    let arr = |v: &[f64]| -> [f64; MAX_ORDER] { v.try_into().expect("MAX_ORDER values") };
    Ok(ScoreReport {
        bleu_cumulative: arr(&b.cumulative),
        bleu_precisions: arr(&b.precisions),
        meteor,
        sentence_count: generated.len(),
    })
}

/// A story id with its sentences.
pub type StoryText = (String, Vec<String>);

/// Pairs generated stories with references by `story_id` and scores all
/// sentence pairs by position. Every generated id must have a reference;
/// references without a generation are ignored.
pub fn score_corpus(generated: &[StoryText], references: &[StoryText]) -> Result<ScoreReport> {
    let mut by_id: HashMap<&str, &[String]> = HashMap::new();
    for (id, sents) in references {
        if by_id.insert(id, sents).is_some() {
            return Err(Error::Alignment(format!("duplicate reference story_id {id:?}")));
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut gen_s = Vec::new();
    let mut ref_s = Vec::new();
    for (id, sents) in generated {
        if !seen.insert(id.as_str()) {
            return Err(Error::Alignment(format!("duplicate generated story_id {id:?}")));
        }
        let refs = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Alignment(format!("story_id {id:?} has no reference")))?;
        if refs.len() != sents.len() {
            return Err(Error::Alignment(format!(
                "story_id {id:?}: {} generated vs {} reference sentences",
                sents.len(),
                refs.len()
            )));
        }
        gen_s.extend(sents.iter().map(String::as_str));
        ref_s.extend(refs.iter().map(String::as_str));
    }
    if gen_s.is_empty() {
        return Err(Error::Config("nothing to score".into()));
    }
    score_sentences(&gen_s, &ref_s)
}

#[derive(Deserialize)]
struct AnyStory {
    story_id: String,
    #[serde(default)]
    generated: Option<Vec<String>>,
    #[serde(default)]
    sentences: Option<Vec<String>>,
}

/// Reads story texts from JSON Lines holding either generation output
/// (`generated`) or story samples (`sentences`); `generated` wins when
/// both are present.
pub fn read_story_texts(path: &Path) -> Result<Vec<StoryText>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            let s: AnyStory = serde_json::from_str(&line).map_err(|e| Error::format(&name, offset, e.to_string()))?;
            let sents = s
                .generated
                .or(s.sentences)
                .ok_or_else(|| Error::format(&name, offset, "record has neither `generated` nor `sentences`"))?;
            out.push((s.story_id, sents));
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn story(id: &str, s: &[&str]) -> StoryText {
        (id.into(), s.iter().map(|x| x.to_string()).collect())
    }

    #[test]
    fn self_score_is_perfect() {
        let refs = vec![
            story("a", &["we went to the beach", "the water was cold today", "we had fun and then", "the sun went down slowly", "we drove back home"]),
            story("b", &["my dog likes the park", "he runs very fast there", "then he found a stick", "we played for an hour", "he slept all night long"]),
        ];
        let r = score_corpus(&refs, &refs).unwrap();
        assert_eq!(r.bleu_cumulative, [1.0; 4]);
        let j = r.to_json();
        assert_eq!(j.bleu, [100.0; 4]);
        assert!(j.meteor > 99.0);
        assert_eq!(j.sentences, 10);
        let v = serde_json::to_value(&j).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 4);
    }

    #[test]
    fn permutation_invariant() {
        let g = vec![story("a", &["a b c", "b b"]), story("b", &["c a", "a"])];
        let r = vec![story("a", &["a b", "b c"]), story("b", &["c a b", "a a"])];
        let x = score_corpus(&g, &r).unwrap();
        let gr: Vec<_> = g.iter().rev().cloned().collect();
        let rr: Vec<_> = r.iter().rev().cloned().collect();
        assert_eq!(x, score_corpus(&gr, &rr).unwrap());
    }

    #[test]
    fn unmatched_id_is_named() {
        let g = vec![story("zzz", &["a"])];
        let r = vec![story("a", &["a"])];
        match score_corpus(&g, &r) {
            Err(Error::Alignment(msg)) => assert!(msg.contains("zzz")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reads_both_record_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        std::fs::write(
            &p,
            "{\"story_id\":\"a\",\"image_ids\":[],\"sentences\":[\"x\"]}\n\n{\"story_id\":\"b\",\"generated\":[\"y\"],\"reference\":[\"z\"]}\n",
        )
        .unwrap();
        let t = read_story_texts(&p).unwrap();
        assert_eq!(t, vec![story("a", &["x"]), story("b", &["y"])]);
        std::fs::write(&p, "{\"story_id\":\"a\"}\n").unwrap();
        assert!(matches!(read_story_texts(&p), Err(Error::Format { offset: 0, .. })));
    }
}
