//! Teacher-forced training with Adam, plus checkpoint files.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datapipe::features::ByteReader;
use crate::datapipe::{build_instances, build_vocab, synth_corpus, Batch, TrainingInstance, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::rng::stream;
use crate::numerics::{gradcheck, Coverage, GradCheckReport, Gradients, ParamStore, SeedRng, Tensor};
use crate::storymodel::{ModelConfig, StoryModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables periodic
    /// checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn round_to_f32(&mut self) {
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.round_to_f32();
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient (e.g. a
/// frozen embedding) are left alone. Every gradient is checked for
/// finiteness before anything is modified.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Config(format!(
            "optimizer state tracks {} tensors, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (id, g) in grads.iter() {
        if g.shape() != params.value(id).shape() {
            return Err(Error::Dimension(format!(
                "gradient for {} has shape {:?}, parameter has {:?}",
                params.name(id),
                g.shape(),
                params.value(id).shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(params.name(id).to_owned()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (id, g) in grads.iter() {
        let m = state.m[id].data_mut();
        let v = state.v[id].data_mut();
        let theta = params.value_mut(id).data_mut();
        for i in 0..theta.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Groups instances by window length, shuffles within each group, cuts
/// groups into batches of at most `batch_size`, and shuffles the batches.
pub fn make_batches(instances: &[TrainingInstance], batch_size: usize, rng: &mut SeedRng) -> Result<Vec<Batch>> {
    let mut buckets: BTreeMap<usize, Vec<&TrainingInstance>> = BTreeMap::new();
    for inst in instances {
        buckets.entry(inst.window_len()).or_default().push(inst);
    }
    let mut batches = Vec::new();
    for bucket in buckets.values_mut() {
        bucket.shuffle(rng);
        for chunk in bucket.chunks(batch_size.max(1)) {
            batches.push(Batch::from_instances(chunk)?);
        }
    }
    batches.shuffle(rng);
    Ok(batches)
}

/// One pass over `instances` with dropout on; returns the mean loss
/// weighted by each batch's loss-mask count.
pub fn train_epoch(
    model: &mut StoryModel,
    instances: &[TrainingInstance],
    cfg: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut SeedRng,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let batches = make_batches(instances, cfg.batch_size, rng)?;
    let mut weighted = 0.0;
    let mut total = 0.0;
    for batch in &batches {
        let (loss, grads) = model.loss_and_grads(batch, Some(rng))?;
        adam_step(model.params_mut(), &grads, adam, cfg)?;
        // Keep parameters and moments exactly representable on disk.
        model.params_mut().round_to_f32();
        adam.round_to_f32();
        let n = batch.mask_count();
        weighted += loss * n;
        total += n;
    }
    Ok(weighted / total)
}

/// Mean inference-mode loss, weighted like [`train_epoch`].
pub fn evaluate_loss(model: &StoryModel, instances: &[TrainingInstance], batch_size: usize) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut buckets: BTreeMap<usize, Vec<&TrainingInstance>> = BTreeMap::new();
    for inst in instances {
        buckets.entry(inst.window_len()).or_default().push(inst);
    }
    let mut weighted = 0.0;
    let mut total = 0.0;
    for bucket in buckets.values() {
        for chunk in bucket.chunks(batch_size.max(1)) {
            let batch = Batch::from_instances(chunk)?;
            let n = batch.mask_count();
            weighted += model.loss(&batch)? * n;
            total += n;
        }
    }
    Ok(weighted / total)
}

/// Model, optimizer state and RNG for a training run.
pub struct Trainer {
    pub model: StoryModel,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub epoch: usize,
    rng: SeedRng,
}

impl Trainer {
    pub fn new(model: StoryModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params());
        let rng = stream(config.seed, 2);
        Ok(Trainer {
            model,
            adam,
            config,
            epoch: 0,
            rng,
        })
    }

    /// Continues from a checkpoint's optimizer state and epoch count.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = stream(config.seed ^ checkpoint.epoch as u64, 2);
        Ok(Trainer {
            model: checkpoint.model,
            adam: checkpoint.adam,
            config,
            epoch: checkpoint.epoch,
            rng,
        })
    }

    pub fn train_epoch(&mut self, instances: &[TrainingInstance]) -> Result<f64> {
        let loss = train_epoch(&mut self.model, instances, &self.config, &mut self.adam, &mut self.rng)?;
        self.epoch += 1;
        Ok(loss)
    }

    /// Runs `config.epochs` epochs, calling `on_epoch(trainer, loss)` after
    /// each. Returns the loss trace.
    pub fn run<F>(&mut self, instances: &[TrainingInstance], mut on_epoch: F) -> Result<Vec<f64>>
    where
        F: FnMut(&Trainer, f64) -> Result<()>,
    {
        let mut trace = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let loss = self.train_epoch(instances)?;
            trace.push(loss);
            on_epoch(self, loss)?;
        }
        Ok(trace)
    }

    pub fn checkpoint(&self, vocab: &Vocabulary) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            adam: self.adam.clone(),
            train_config: self.config.clone(),
            epoch: self.epoch,
            vocab: vocab.clone(),
        }
    }
}

/// Finite-difference step for [`model_gradcheck`]. Smaller steps let
/// roundoff swamp the sub-1e-6 gradients deep in the encoders.
pub const DEFAULT_GRADCHECK_EPS: f64 = 1e-4;

/// Central-difference check of the full model on a synthetic batch with
/// every width set from `dims` and dropout off.
pub fn model_gradcheck(dims: usize, seed: u64, epsilon: f64, coverage: Coverage) -> Result<GradCheckReport> {
    if dims < 2 {
        return Err(Error::Config(format!("gradcheck dims {dims} must be at least 2")));
    }
    let (stories, feats) = synth_corpus(seed, 1, dims)?;
    let vocab = build_vocab(stories[0].sentences.iter().map(String::as_str), 1)?;
    let config = ModelConfig {
        feature_dim: dims,
        embed_dim: dims,
        img_hidden: dims / 2,
        sent_hidden: dims - dims / 2,
        dec_hidden: dims,
        max_sentence_len: 7,
        dropout_in: 0.0,
        dropout_pre_softmax: 0.0,
        ..ModelConfig::toy(vocab.len())
    };
    let mut rng = stream(seed, 3);
    let mut model = StoryModel::new(config, &mut rng)?;
    // Random biases so no gate sits at an exact symmetry point.
    for id in 0..model.params().len() {
        let t = model.params_mut().value_mut(id);
        let noise = Tensor::uniform(t.shape(), 0.2, &mut rng);
        for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
    let inst = build_instances(&stories[0], &vocab, &feats, model.config().window, model.config().max_sentence_len)?;
    let batch = Batch::from_instances(&[&inst[2], &inst[3], &inst[4]])?;
    let config = model.config().clone();
    gradcheck(
        |g, store| {
            let view = StoryModel::from_params(config.clone(), store.clone())?;
            let m = view.bind(g)?;
            view.loss_on(g, &m, &batch, None)
        },
        model.params(),
        epsilon,
        coverage,
    )
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or generate.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: StoryModel,
    pub adam: AdamState,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub vocab: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    adam_step: u64,
    embedding_trainable: bool,
    vocab: Vec<String>,
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    if name.len() > u16::MAX as usize || t.rank() > u8::MAX as usize {
        return Err(Error::Config(format!("tensor {name:?} cannot be serialized")));
    }
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

impl Checkpoint {
    /// Binary layout (little-endian): magic `VSCK`, `u32` version, `u32`
    /// tensor count; per tensor a `u16` name length, UTF-8 name, `u8` rank,
    /// `rank × u32` dims and `f32` data; then a `u32`-length-prefixed JSON
    /// block with the configuration and vocabulary. Tensors are the model
    /// parameters in declaration order followed by `adam.m.*` and
    /// `adam.v.*`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&((params.len() * 3) as u32).to_le_bytes());
        for (name, t) in params.iter() {
            push_tensor(&mut out, name, t)?;
        }
        for (kind, moments) in [("m", &self.adam.m), ("v", &self.adam.v)] {
            for ((name, _), t) in params.iter().zip(moments) {
                push_tensor(&mut out, &format!("adam.{kind}.{name}"), t)?;
            }
        }
        let meta = CheckpointMeta {
            model: self.model.config().clone(),
            train: self.train_config.clone(),
            epoch: self.epoch,
            adam_step: self.adam.t,
            embedding_trainable: self.model.embedding_trainable(),
            vocab: self.vocab.tokens().to_vec(),
        };
        let json = serde_json::to_vec(&meta)?;
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], source_name: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, source_name);
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(source_name, 0, "bad magic, expected \"VSCK\""));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(source_name, 4, format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.offset();
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|e| Error::format(source_name, at, format!("tensor name is not UTF-8: {e}")))?
                .to_owned();
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.saturating_mul(4), "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            let t = Tensor::from_vec(shape, data)
                .map_err(|e| Error::format(source_name, at, format!("tensor {name:?}: {e}")))?;
            tensors.push((name, t));
        }
        let json_len = r.u32("config length")? as usize;
        let at = r.offset();
        let meta: CheckpointMeta = serde_json::from_slice(r.take(json_len, "config JSON")?)
            .map_err(|e| Error::format(source_name, at, e.to_string()))?;
        if r.remaining() != 0 {
            return Err(Error::format(source_name, r.offset(), "trailing bytes after config"));
        }

        let vocab = Vocabulary::from_tokens(meta.vocab)?;
        if vocab.len() != meta.model.vocab_size {
            return Err(Error::Config(format!(
                "checkpoint vocabulary has {} tokens but model vocab_size is {}",
                vocab.len(),
                meta.model.vocab_size
            )));
        }
        let n_params = meta.model.parameter_shapes().len();
        if tensors.len() != 3 * n_params {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, expected {}",
                tensors.len(),
                3 * n_params
            )));
        }
        let mut iter = tensors.into_iter();
        let mut params = ParamStore::new();
        for (name, t) in iter.by_ref().take(n_params) {
            params.insert(name, t)?;
        }
        let mut model = StoryModel::from_params(meta.model, params)?;
        model.set_embedding_trainable(meta.embedding_trainable);
        let mut adam = AdamState::new(model.params());
        adam.t = meta.adam_step;
        for (kind, slot) in [("m", &mut adam.m), ("v", &mut adam.v)] {
            for (i, (name, t)) in iter.by_ref().take(n_params).enumerate() {
                let expect = format!("adam.{kind}.{}", model.params().name(i));
                if name != expect || t.shape() != slot[i].shape() {
                    return Err(Error::Config(format!(
                        "optimizer tensor {name:?} {:?} does not match {expect:?} {:?}",
                        t.shape(),
                        slot[i].shape()
                    )));
                }
                slot[i] = t;
            }
        }
        Ok(Checkpoint {
            model,
            adam,
            train_config: meta.train,
            epoch: meta.epoch,
            vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Loads and checks that the checkpoint was trained on `vocab`.
    pub fn load_for_vocab(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.vocab.len() != vocab.len() {
            return Err(Error::Config(format!(
                "checkpoint vocabulary size {} differs from supplied vocabulary size {}",
                ck.vocab.len(),
                vocab.len()
            )));
        }
        if ck.vocab != *vocab {
            return Err(Error::Config("checkpoint vocabulary differs from supplied vocabulary".into()));
        }
        Ok(ck)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
