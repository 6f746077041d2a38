use std::ops::RangeInclusive;

use super::encode::{empty_sentence, encode_sentence, loss_mask};
use super::features::FeatureSet;
use super::story::StorySample;
use super::vocab::{TokenId, Vocabulary, END, START};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Default number of most recent images encoded per sentence.
pub const DEFAULT_WINDOW: usize = 3;

/// Image indices visible when writing sentence `t`: the last `window`
/// images up to and including `t`.
pub fn window_for(t: usize, window: usize) -> RangeInclusive<usize> {
    (t + 1).saturating_sub(window.max(1))..=t
}

/// One window per sentence position of an `n_images` story.
pub fn make_windows(n_images: usize, window: usize) -> Vec<Vec<usize>> {
    (0..n_images).map(|t| window_for(t, window).collect()).collect()
}

/// Everything needed to train on one sentence of one story.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingInstance {
    pub story_id: String,
    pub position: usize,
    /// `[T_w × feature_dim]`, oldest image first.
    pub window_features: Tensor,
    pub prev_ids: Vec<TokenId>,
    pub curr_ids: Vec<TokenId>,
    pub loss_mask: Vec<f64>,
}

impl TrainingInstance {
    pub fn window_len(&self) -> usize {
        self.window_features.shape()[0]
    }

    pub fn validate(&self, window: usize) -> Result<()> {
        let t_w = self.window_len();
        let ok = (1..=window).contains(&t_w)
            && self.prev_ids.first() == Some(&START)
            && self.curr_ids.first() == Some(&START)
            && self.prev_ids.iter().filter(|&&t| t == END).count() == 1
            && self.curr_ids.iter().filter(|&&t| t == END).count() == 1
            && self.loss_mask.len() + 1 == self.curr_ids.len();
        if ok {
            Ok(())
        } else {
            Err(Error::DataContract(format!(
                "malformed training instance {}#{}",
                self.story_id, self.position
            )))
        }
    }
}

/// Stacks the feature vectors of `ids` into `[ids.len() × dim]`.
pub fn window_tensor(features: &FeatureSet, ids: &[&str]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(ids.len() * features.dim());
    for id in ids {
        data.extend(features.lookup(id)?);
    }
    Tensor::from_vec(vec![ids.len(), features.dim()], data)
}

/// The five training instances of one story. Sentence 0 is conditioned on
/// the empty-sentence encoding.
pub fn build_instances(
    sample: &StorySample,
    vocab: &Vocabulary,
    features: &FeatureSet,
    window: usize,
    max_len: usize,
) -> Result<Vec<TrainingInstance>> {
    sample.validate()?;
    if window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    let encoded: Vec<Vec<TokenId>> = sample
        .sentences
        .iter()
        .map(|s| encode_sentence(vocab, s, max_len))
        .collect();
    let windows = make_windows(sample.image_ids.len(), window);
    windows
        .iter()
        .enumerate()
        .map(|(t, idx)| {
            let ids: Vec<&str> = idx.iter().map(|&i| sample.image_ids[i].as_str()).collect();
            let curr_ids = encoded[t].clone();
            Ok(TrainingInstance {
                story_id: sample.story_id.clone(),
                position: t,
                window_features: window_tensor(features, &ids)?,
                prev_ids: if t == 0 { empty_sentence(max_len) } else { encoded[t - 1].clone() },
                loss_mask: loss_mask(&curr_ids),
                curr_ids,
            })
        })
        .collect()
}

/// Instances stacked along a batch axis. All rows share one window length.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// One `[b × feature_dim]` tensor per window step.
    pub window: Vec<Tensor>,
    pub prev_ids: Vec<Vec<TokenId>>,
    pub curr_ids: Vec<Vec<TokenId>>,
    pub loss_mask: Vec<Vec<f64>>,
}

impl Batch {
    pub fn from_instances(items: &[&TrainingInstance]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Config("cannot batch zero instances".into()))?;
        let t_w = first.window_len();
        let dim = first.window_features.shape()[1];
        if let Some(bad) = items.iter().find(|i| i.window_len() != t_w) {
            return Err(Error::DataContract(format!(
                "batch mixes window lengths {t_w} and {}",
                bad.window_len()
            )));
        }
        let window = (0..t_w)
            .map(|step| {
                let data = items
                    .iter()
                    .flat_map(|i| i.window_features.row(step).iter().copied())
                    .collect();
                Tensor::from_vec(vec![items.len(), dim], data)
            })
            .collect::<Result<_>>()?;
        Ok(Batch {
            window,
            prev_ids: items.iter().map(|i| i.prev_ids.clone()).collect(),
            curr_ids: items.iter().map(|i| i.curr_ids.clone()).collect(),
            loss_mask: items.iter().map(|i| i.loss_mask.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.curr_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curr_ids.is_empty()
    }

    pub fn mask_count(&self) -> f64 {
        self.loss_mask.iter().flatten().sum()
    }
}
