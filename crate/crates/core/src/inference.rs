//! Greedy story generation.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::{
    decode_ids, empty_sentence, encode_ids, make_windows, window_tensor, FeatureSet, StorySample, TokenId,
    Vocabulary, END, NULL, START, STORY_LEN, UNK,
};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::storymodel::StoryModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenerateOptions {
    /// Never emit `<UNK>`.
    pub suppress_unk: bool,
}

/// Index of the largest logit, lowest index on ties. `<NULL>` and `<START>`
/// are never chosen.
pub fn greedy_token(logits: &[f64], opts: GenerateOptions) -> TokenId {
    let mut best = END;
    let mut best_val = f64::NEG_INFINITY;
    for (id, &v) in logits.iter().enumerate() {
        if id == NULL || id == START || (opts.suppress_unk && id == UNK) {
            continue;
        }
        if v > best_val {
            best = id;
            best_val = v;
        }
    }
    best
}

/// Generates one sentence's word ids (no `START`/`END`) from an image
/// window `[T_w × feature_dim]` and the encoded previous sentence.
/// Stops at `END` or after `max_sentence_len` words.
pub fn generate_sentence(
    model: &StoryModel,
    window: &Tensor,
    prev_ids: &[TokenId],
    opts: GenerateOptions,
) -> Result<Vec<TokenId>> {
    let (steps, dim) = window.rows_cols();
    let batched = window.clone().reshape(&[1, steps, dim])?;
    let img = model.encode_images(&batched)?;
    let sent = model.encode_prev_sentence(&[prev_ids.to_vec()])?;
    let mut states = model.init_decoder_state(&img, &sent)?;
    let mut token = START;
    let mut out = Vec::new();
    while out.len() < model.config().max_sentence_len {
        let step = model.decode_step(&states, token)?;
        token = greedy_token(step.logits.data(), opts);
        if token == END {
            break;
        }
        out.push(token);
        states = step.states;
    }
    Ok(out)
}

/// Generates five sentences from five image feature rows `[5 × F]`. Each
/// sentence is conditioned on the re-encoded previous generation.
pub fn generate_story(model: &StoryModel, images: &Tensor, opts: GenerateOptions) -> Result<Vec<Vec<TokenId>>> {
    let (n, dim) = images.rows_cols();
    if images.rank() != 2 || n != STORY_LEN {
        return Err(Error::DataContract(format!(
            "story generation needs {STORY_LEN} images, got {n}"
        )));
    }
    let max_len = model.config().max_sentence_len;
    let mut prev = empty_sentence(max_len);
    let mut story = Vec::with_capacity(n);
    for idx in make_windows(n, model.config().window) {
        let rows: Vec<f64> = idx.iter().flat_map(|&i| images.row(i).to_vec()).collect();
        let window = Tensor::from_vec(vec![idx.len(), dim], rows)?;
        let words = generate_sentence(model, &window, &prev, opts)?;
        prev = encode_ids(&words, max_len);
        story.push(words);
    }
    Ok(story)
}

/// One line of generation output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedStory {
    pub story_id: String,
    pub generated: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<String>>,
}

/// Looks up the sample's features and generates its text. The reference
/// sentences are carried along.
pub fn generate_for_sample(
    model: &StoryModel,
    vocab: &Vocabulary,
    sample: &StorySample,
    features: &FeatureSet,
    opts: GenerateOptions,
) -> Result<GeneratedStory> {
    sample.validate()?;
    let ids: Vec<&str> = sample.image_ids.iter().map(String::as_str).collect();
    let images = window_tensor(features, &ids)?;
    let story = generate_story(model, &images, opts)?;
    Ok(GeneratedStory {
        story_id: sample.story_id.clone(),
        generated: story.iter().map(|s| decode_ids(vocab, s)).collect(),
        reference: Some(sample.sentences.clone()),
    })
}

pub fn write_generations(path: &Path, stories: &[GeneratedStory]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in stories {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_generations(path: &Path) -> Result<Vec<GeneratedStory>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            let g: GeneratedStory =
                serde_json::from_str(&line).map_err(|e| Error::format(&name, offset, e.to_string()))?;
            out.push(g);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded;
    use crate::storymodel::{ModelConfig, PROJ_B};

    fn biased_model(token: TokenId) -> StoryModel {
        let mut model = StoryModel::new(ModelConfig::toy(8), &mut seeded(1)).unwrap();
        let id = model.params().index_of(PROJ_B).unwrap();
        model.params_mut().value_mut(id).data_mut()[token] = 1e3;
        model
    }

    fn images(seed: u64) -> Tensor {
        Tensor::uniform(&[5, 16], 1.0, &mut seeded(seed))
    }

    #[test]
    fn argmax_rules() {
        let opts = GenerateOptions::default();
        assert_eq!(greedy_token(&[9.0, 9.0, 1.0, 1.0, 2.0], opts), 4);
        assert_eq!(greedy_token(&[0.0, 0.0, 1.0, 3.0, 3.0], opts), 3);
        let sup = GenerateOptions { suppress_unk: true };
        assert_eq!(greedy_token(&[0.0, 0.0, 1.0, 3.0, 2.0], sup), 4);
    }

    #[test]
    fn immediate_end_gives_empty_sentences() {
        let model = biased_model(END);
        let story = generate_story(&model, &images(2), GenerateOptions::default()).unwrap();
        assert_eq!(story, vec![Vec::<TokenId>::new(); 5]);
    }

    #[test]
    fn self_loop_is_capped() {
        let model = biased_model(5);
        let story = generate_story(&model, &images(2), GenerateOptions::default()).unwrap();
        for s in &story {
            assert_eq!(s, &vec![5; 20]);
        }
    }

    #[test]
    fn wrong_image_count() {
        let model = biased_model(END);
        let four = Tensor::zeros(&[4, 16]);
        assert!(matches!(
            generate_story(&model, &four, GenerateOptions::default()),
            Err(Error::DataContract(_))
        ));
    }

    #[test]
    fn future_images_do_not_matter() {
        let model = StoryModel::new(ModelConfig::toy(8), &mut seeded(3)).unwrap();
        let base = images(4);
        let a = generate_story(&model, &base, GenerateOptions::default()).unwrap();
        for t in 0..4 {
            let mut data = base.data().to_vec();
            for v in &mut data[(t + 1) * 16..] {
                *v = -*v + 0.5;
            }
            let moved = Tensor::from_vec(vec![5, 16], data).unwrap();
            let b = generate_story(&model, &moved, GenerateOptions::default()).unwrap();
            assert_eq!(a[..=t], b[..=t]);
        }
    }

    #[test]
    fn deterministic() {
        let model = StoryModel::new(ModelConfig::toy(8), &mut seeded(5)).unwrap();
        let x = images(6);
        let a = generate_story(&model, &x, GenerateOptions::default()).unwrap();
        let b = generate_story(&model, &x, GenerateOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.jsonl");
        let items = vec![
            GeneratedStory {
                story_id: "a".into(),
                generated: vec!["x y".into(); 5],
                reference: None,
            },
            GeneratedStory {
                story_id: "b".into(),
                generated: vec![String::new(); 5],
                reference: Some(vec!["r".into(); 5]),
            },
        ];
        write_generations(&path, &items).unwrap();
        assert_eq!(read_generations(&path).unwrap(), items);
    }
}
