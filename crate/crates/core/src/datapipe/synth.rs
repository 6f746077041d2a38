//! Small deterministic corpora for tests and smoke runs.

use rand::Rng;

use super::features::{synth_features, FeatureSet};
use super::story::{StorySample, STORY_LEN};
use crate::error::Result;
use crate::numerics::rng::stream;

const WORDS: [&str; 10] = [
    "we", "went", "to", "the", "beach", "park", "and", "had", "fun", "dinner",
];

/// `n_stories` stories of five 4–7 word sentences drawn from a ten-word
/// lexicon, plus unit-norm features of dimension `feature_dim` for every
/// image.
pub fn synth_corpus(seed: u64, n_stories: usize, feature_dim: usize) -> Result<(Vec<StorySample>, FeatureSet)> {
    let mut rng = stream(seed, 1);
    let stories: Vec<StorySample> = (0..n_stories)
        .map(|s| StorySample {
            story_id: format!("story{s:03}"),
            image_ids: (0..STORY_LEN).map(|i| format!("s{s:03}_img{i}")).collect(),
            sentences: (0..STORY_LEN)
                .map(|_| {
                    let len = rng.random_range(4..=7);
                    (0..len)
                        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect(),
        })
        .collect();
    let ids: Vec<String> = stories.iter().flat_map(|s| s.image_ids.iter().cloned()).collect();
    let features = synth_features(seed, &ids, feature_dim)?;
    Ok((stories, features))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let (a, fa) = synth_corpus(7, 4, 16).unwrap();
        let (b, fb) = synth_corpus(7, 4, 16).unwrap();
        assert_eq!(a, b);
        assert_eq!(fa.to_bytes(), fb.to_bytes());
        assert_eq!(fa.len(), 20);
        for s in &a {
            s.validate().unwrap();
            for sent in &s.sentences {
                assert!((4..=7).contains(&sent.split(' ').count()));
            }
        }
    }
}
