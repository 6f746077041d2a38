//! The dual-encoder story model.
//!
//! ```text
//! image window ──► 2-layer GRU ──► (h₀ᶦᵐᵍ, h₁ᶦᵐᵍ) ─┐
//!                                                ├─ concat per layer ─► decoder h₀, h₁
//! previous sentence ─► embed ─► GRU ──► hˢᵉⁿᵗ ───┘
//! current sentence ─► embed ─► 2-layer GRU decoder ─► affine ─► softmax
//! ```
//!
//! Decoder layer `i` starts from `concat(image-encoder layer i final,
//! sentence-encoder final)`, so `dec_hidden` must equal
//! `img_hidden + sent_hidden`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::vocab::{TokenId, START};
use crate::datapipe::Batch;
use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, ParamStore, SeedRng, Tensor, Var};
use crate::recurrent::{
    check_ids, embed_column, glorot_limit, gru_run_on, gru_step_on, stacked_gru_run_on, EmbeddingTable,
    GruCellParams, GruVars, GRU_PARAM_NAMES,
};

pub const EMBEDDING: &str = "embedding";
pub const PROJ_W: &str = "proj.w";
pub const PROJ_B: &str = "proj.b";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub img_hidden: usize,
    pub sent_hidden: usize,
    pub dec_hidden: usize,
    pub img_layers: usize,
    pub dec_layers: usize,
    pub vocab_size: usize,
    pub max_sentence_len: usize,
    pub window: usize,
    pub dropout_in: f64,
    pub dropout_pre_softmax: f64,
}

impl ModelConfig {
    /// Full-size configuration: 4096-d image features, 300-d embeddings,
    /// 1024/512/1536 hidden units.
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            feature_dim: 4096,
            embed_dim: 300,
            img_hidden: 1024,
            sent_hidden: 512,
            dec_hidden: 1536,
            img_layers: 2,
            dec_layers: 2,
            vocab_size,
            max_sentence_len: 20,
            window: 3,
            dropout_in: 0.3,
            dropout_pre_softmax: 0.5,
        }
    }

    /// Tiny dimensions for fast tests: features 16, hidden 8/4/12, embed 8.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            feature_dim: 16,
            embed_dim: 8,
            img_hidden: 8,
            sent_hidden: 4,
            dec_hidden: 12,
            ..Self::new(vocab_size)
        }
    }

    /// Slots in an encoded sentence: START, words, END, padding.
    pub fn sentence_slots(&self) -> usize {
        self.max_sentence_len + 2
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dec_hidden != self.img_hidden + self.sent_hidden {
            return fail(format!(
                "dec_hidden {} must equal img_hidden {} + sent_hidden {}",
                self.dec_hidden, self.img_hidden, self.sent_hidden
            ));
        }
        if self.img_layers != 2 || self.dec_layers != 2 {
            return fail(format!(
                "image encoder and decoder are two-layer stacks (got {} and {})",
                self.img_layers, self.dec_layers
            ));
        }
        let dims = [
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("img_hidden", self.img_hidden),
            ("sent_hidden", self.sent_hidden),
            ("window", self.window),
            ("max_sentence_len", self.max_sentence_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be at least 1"));
        }
        if self.vocab_size < 5 {
            return fail(format!(
                "vocab_size {} leaves no room beyond the four control tokens",
                self.vocab_size
            ));
        }
        for (name, rate) in [("dropout_in", self.dropout_in), ("dropout_pre_softmax", self.dropout_pre_softmax)] {
            if !(0.0..1.0).contains(&rate) {
                return fail(format!("{name} {rate} must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Every parameter name with its shape, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![(EMBEDDING.to_owned(), vec![self.vocab_size, self.embed_dim])];
        let mut gru = |prefix: String, input: usize, hidden: usize| {
            for name in GRU_PARAM_NAMES {
                let shape = match &name[..1] {
                    "w" => vec![input, hidden],
                    "u" => vec![hidden, hidden],
                    _ => vec![hidden],
                };
                out.push((format!("{prefix}.{name}"), shape));
            }
        };
        gru("img_enc.0".into(), self.feature_dim, self.img_hidden);
        gru("img_enc.1".into(), self.img_hidden, self.img_hidden);
        gru("sent_enc".into(), self.embed_dim, self.sent_hidden);
        gru("dec.0".into(), self.embed_dim, self.dec_hidden);
        gru("dec.1".into(), self.dec_hidden, self.dec_hidden);
        out.push((PROJ_W.to_owned(), vec![self.dec_hidden, self.vocab_size]));
        out.push((PROJ_B.to_owned(), vec![self.vocab_size]));
        out
    }
}

/// Model parameters plus the configuration they were built for.
#[derive(Clone, Debug)]
pub struct StoryModel {
    config: ModelConfig,
    params: ParamStore,
    embedding_trainable: bool,
}

/// A model's parameters recorded on one graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundModel {
    embedding: Var,
    img: [GruVars; 2],
    sent: GruVars,
    dec: [GruVars; 2],
    proj_w: Var,
    proj_b: Var,
}

/// One greedy decoding step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub states: [Tensor; 2],
    pub logits: Tensor,
    pub probs: Tensor,
}

impl StoryModel {
    /// Glorot-uniform initialization (zero biases), rounded to `f32`.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let emb = EmbeddingTable::glorot(config.vocab_size, config.embed_dim, rng);
        params.insert(EMBEDDING, emb.matrix)?;
        let c = &config;
        let cells = [
            ("img_enc.0", c.feature_dim, c.img_hidden),
            ("img_enc.1", c.img_hidden, c.img_hidden),
            ("sent_enc", c.embed_dim, c.sent_hidden),
            ("dec.0", c.embed_dim, c.dec_hidden),
            ("dec.1", c.dec_hidden, c.dec_hidden),
        ];
        for (prefix, i, h) in cells {
            GruCellParams::glorot(i, h, rng).insert_into(&mut params, prefix)?;
        }
        let limit = glorot_limit(c.dec_hidden, c.vocab_size);
        params.insert(PROJ_W, Tensor::uniform(&[c.dec_hidden, c.vocab_size], limit, rng))?;
        params.insert(PROJ_B, Tensor::zeros(&[c.vocab_size]))?;
        params.round_to_f32();
        Ok(StoryModel {
            config,
            params,
            embedding_trainable: true,
        })
    }

    /// Every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in config.parameter_shapes() {
            params.insert(name, Tensor::zeros(&shape))?;
        }
        Ok(StoryModel {
            config,
            params,
            embedding_trainable: true,
        })
    }

    /// Wraps an existing parameter set, checking names and shapes against
    /// the configuration.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let declared = config.parameter_shapes();
        if declared.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                declared.len(),
                params.len()
            )));
        }
        for (name, shape) in &declared {
            let t = params
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name:?} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(StoryModel {
            config,
            params,
            embedding_trainable: true,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embedding_trainable(&self) -> bool {
        self.embedding_trainable
    }

    pub fn set_embedding_trainable(&mut self, trainable: bool) {
        self.embedding_trainable = trainable;
    }

    /// Replaces the embedding matrix (e.g. with pretrained vectors).
    pub fn set_embedding(&mut self, table: EmbeddingTable) -> Result<()> {
        let want = [self.config.vocab_size, self.config.embed_dim];
        if table.matrix.shape() != want {
            return Err(Error::Config(format!(
                "embedding table {:?} does not match [vocab_size × embed_dim] {want:?}",
                table.matrix.shape()
            )));
        }
        let mut m = table.matrix;
        m.round_to_f32();
        *self.params.get_mut(EMBEDDING).expect("declared") = m;
        self.embedding_trainable = table.trainable;
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundModel> {
        let p = &self.params;
        let embedding = if self.embedding_trainable {
            g.param(p, EMBEDDING)?
        } else {
            g.frozen_param(p, EMBEDDING)?
        };
        Ok(BoundModel {
            embedding,
            img: [GruVars::bind(g, p, "img_enc.0")?, GruVars::bind(g, p, "img_enc.1")?],
            sent: GruVars::bind(g, p, "sent_enc")?,
            dec: [GruVars::bind(g, p, "dec.0")?, GruVars::bind(g, p, "dec.1")?],
            proj_w: g.param(p, PROJ_W)?,
            proj_b: g.param(p, PROJ_B)?,
        })
    }

    fn zero_state(&self, g: &mut Graph, batch: usize, width: usize) -> Var {
        g.constant(Tensor::zeros(&[batch, width]))
    }

    /// Final state of both image-encoder layers. `window` holds one
    /// `[b × feature_dim]` node per image, oldest first. `dropout` is the
    /// training RNG; `None` means inference.
    pub fn encode_images_on(
        &self,
        g: &mut Graph,
        m: &BoundModel,
        window: &[Var],
        mut dropout: Option<&mut SeedRng>,
    ) -> Result<[Var; 2]> {
        let first = *window
            .first()
            .ok_or_else(|| Error::EmptySequence("image window is empty".into()))?;
        if window.len() > self.config.window {
            return Err(Error::DataContract(format!(
                "image window of {} exceeds configured window {}",
                window.len(),
                self.config.window
            )));
        }
        let (b, dim) = g.value(first).rows_cols();
        if dim != self.config.feature_dim {
            return Err(Error::Dimension(format!(
                "image features have dim {dim}, model expects {}",
                self.config.feature_dim
            )));
        }
        let inputs = window
            .iter()
            .map(|&x| g.dropout(x, self.config.dropout_in, dropout.as_deref_mut()))
            .collect::<Result<Vec<_>>>()?;
        let h0 = [
            self.zero_state(g, b, self.config.img_hidden),
            self.zero_state(g, b, self.config.img_hidden),
        ];
        let run = stacked_gru_run_on(g, &m.img, &inputs, &h0)?;
        Ok([run.finals[0], run.finals[1]])
    }

    fn check_sentences(&self, ids: &[Vec<TokenId>], what: &str) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::EmptySequence(format!("no {what} sentences")));
        }
        let slots = self.config.sentence_slots();
        if let Some(bad) = ids.iter().find(|r| r.len() != slots) {
            return Err(Error::DataContract(format!(
                "{what} sentence has {} slots, expected {slots}",
                bad.len()
            )));
        }
        check_ids(ids, self.config.vocab_size)
    }

    /// Final state of the previous-sentence encoder over all slots.
    pub fn encode_prev_sentence_on(
        &self,
        g: &mut Graph,
        m: &BoundModel,
        prev_ids: &[Vec<TokenId>],
        mut dropout: Option<&mut SeedRng>,
    ) -> Result<Var> {
        self.check_sentences(prev_ids, "previous")?;
        let inputs = (0..self.config.sentence_slots())
            .map(|t| {
                let e = embed_column(g, m.embedding, prev_ids, t)?;
                g.dropout(e, self.config.dropout_in, dropout.as_deref_mut())
            })
            .collect::<Result<Vec<_>>>()?;
        let h0 = self.zero_state(g, prev_ids.len(), self.config.sent_hidden);
        let outs = gru_run_on(g, &m.sent, &inputs, h0)?;
        Ok(*outs.last().expect("non-empty"))
    }

    /// Decoder layer `i` starts at `concat(img_states[i], sent_state)`.
    pub fn init_decoder_state_on(&self, g: &mut Graph, img_states: [Var; 2], sent_state: Var) -> Result<[Var; 2]> {
        let c = &self.config;
        for &s in &img_states {
            if g.value(s).rows_cols().1 != c.img_hidden {
                return Err(Error::Config(format!(
                    "image state width {} != img_hidden {}",
                    g.value(s).rows_cols().1,
                    c.img_hidden
                )));
            }
        }
        if g.value(sent_state).rows_cols().1 != c.sent_hidden {
            return Err(Error::Config(format!(
                "sentence state width {} != sent_hidden {}",
                g.value(sent_state).rows_cols().1,
                c.sent_hidden
            )));
        }
        let d0 = g.concat(img_states[0], sent_state)?;
        let d1 = g.concat(img_states[1], sent_state)?;
        Ok([d0, d1])
    }

    fn project(&self, g: &mut Graph, m: &BoundModel, top: Var) -> Result<Var> {
        let z = g.matmul(top, m.proj_w)?;
        g.add(z, m.proj_b)
    }

    /// Logits for slots `1..slots` given tokens `0..slots-1`, one
    /// `[b × vocab_size]` node per prediction slot.
    pub fn decode_teacher_forced_on(
        &self,
        g: &mut Graph,
        m: &BoundModel,
        init: [Var; 2],
        curr_ids: &[Vec<TokenId>],
        mut dropout: Option<&mut SeedRng>,
    ) -> Result<Vec<Var>> {
        self.check_sentences(curr_ids, "current")?;
        if let Some(row) = curr_ids.iter().position(|r| r[0] != START) {
            return Err(Error::DataContract(format!(
                "current sentence in batch row {row} does not begin with <START>"
            )));
        }
        let steps = self.config.sentence_slots() - 1;
        let inputs = (0..steps)
            .map(|t| {
                let e = embed_column(g, m.embedding, curr_ids, t)?;
                g.dropout(e, self.config.dropout_in, dropout.as_deref_mut())
            })
            .collect::<Result<Vec<_>>>()?;
        let run = stacked_gru_run_on(g, &m.dec, &inputs, &init)?;
        run.outputs
            .iter()
            .map(|&h| {
                let h = g.dropout(h, self.config.dropout_pre_softmax, dropout.as_deref_mut())?;
                self.project(g, m, h)
            })
            .collect()
    }

    /// Masked mean cross-entropy of a batch, as a scalar node.
    pub fn loss_on(&self, g: &mut Graph, m: &BoundModel, batch: &Batch, mut dropout: Option<&mut SeedRng>) -> Result<Var> {
        let window: Vec<Var> = batch.window.iter().map(|t| g.constant(t.clone())).collect();
        let img = self.encode_images_on(g, m, &window, dropout.as_deref_mut())?;
        let sent = self.encode_prev_sentence_on(g, m, &batch.prev_ids, dropout.as_deref_mut())?;
        let init = self.init_decoder_state_on(g, img, sent)?;
        let logits = self.decode_teacher_forced_on(g, m, init, &batch.curr_ids, dropout)?;
        let stacked = g.stack_rows(&logits)?;
        let probs = g.softmax(stacked);
        let mut targets = Vec::with_capacity(logits.len() * batch.len());
        let mut mask = Vec::with_capacity(targets.capacity());
        for t in 0..logits.len() {
            for (ids, row_mask) in batch.curr_ids.iter().zip(&batch.loss_mask) {
                targets.push(ids[t + 1]);
                mask.push(row_mask[t]);
            }
        }
        g.cross_entropy(probs, &targets, &mask)
    }

    /// Loss value and parameter gradients of one batch.
    pub fn loss_and_grads(&self, batch: &Batch, dropout: Option<&mut SeedRng>) -> Result<(f64, Gradients)> {
        let mut g = Graph::new();
        let m = self.bind(&mut g)?;
        let loss = self.loss_on(&mut g, &m, batch, dropout)?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss, &self.params)?;
        Ok((value, grads))
    }

    /// Inference-mode loss of one batch.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let m = self.bind(&mut g)?;
        let loss = self.loss_on(&mut g, &m, batch, None)?;
        Ok(g.value(loss).data()[0])
    }

    /// One decoder step from `states` on `token`, in inference mode.
    pub fn decode_step_on(&self, g: &mut Graph, m: &BoundModel, states: [Var; 2], token: TokenId) -> Result<([Var; 2], Var)> {
        let (b, _) = g.value(states[0]).rows_cols();
        let ids = vec![vec![token]; b];
        check_ids(&ids, self.config.vocab_size)?;
        let x = embed_column(g, m.embedding, &ids, 0)?;
        let h0 = gru_step_on(g, &m.dec[0], x, states[0])?;
        let h1 = gru_step_on(g, &m.dec[1], h0, states[1])?;
        let logits = self.project(g, m, h1)?;
        Ok(([h0, h1], logits))
    }

    // Tensor-level entry points, all in inference mode.

    /// `window: [b × T_w × feature_dim]`.
    pub fn encode_images(&self, window: &Tensor) -> Result<[Tensor; 2]> {
        let mut g = Graph::new();
        let m = self.bind(&mut g)?;
        let steps = window.time_slices()?;
        let xs: Vec<Var> = steps.into_iter().map(|t| g.constant(t)).collect();
        let [a, b] = self.encode_images_on(&mut g, &m, &xs, None)?;
        Ok([g.value(a).clone(), g.value(b).clone()])
    }

    pub fn encode_prev_sentence(&self, prev_ids: &[Vec<TokenId>]) -> Result<Tensor> {
        let mut g = Graph::new();
        let m = self.bind(&mut g)?;
        let h = self.encode_prev_sentence_on(&mut g, &m, prev_ids, None)?;
        Ok(g.value(h).clone())
    }

    pub fn init_decoder_state(&self, img_states: &[Tensor; 2], sent_state: &Tensor) -> Result<[Tensor; 2]> {
        let mut g = Graph::new();
        let img = [g.constant(img_states[0].clone()), g.constant(img_states[1].clone())];
        let sent = g.constant(sent_state.clone());
        let [a, b] = self.init_decoder_state_on(&mut g, img, sent)?;
        Ok([g.value(a).clone(), g.value(b).clone()])
    }

    /// `[b × (slots-1) × vocab_size]` logits.
    pub fn decode_teacher_forced(&self, init: &[Tensor; 2], curr_ids: &[Vec<TokenId>]) -> Result<Tensor> {
        let mut g = Graph::new();
        let m = self.bind(&mut g)?;
        let init = [g.constant(init[0].clone()), g.constant(init[1].clone())];
        let logits = self.decode_teacher_forced_on(&mut g, &m, init, curr_ids, None)?;
        let steps: Vec<Tensor> = logits.iter().map(|&v| g.value(v).clone()).collect();
        Tensor::stack_time(&steps)
    }

    pub fn decode_step(&self, states: &[Tensor; 2], token: TokenId) -> Result<StepOutput> {
        let mut g = Graph::new();
        let m = self.bind(&mut g)?;
        let s = [g.constant(states[0].clone()), g.constant(states[1].clone())];
        let ([h0, h1], logits) = self.decode_step_on(&mut g, &m, s, token)?;
        let logits = g.value(logits).clone();
        Ok(StepOutput {
            states: [g.value(h0).clone(), g.value(h1).clone()],
            probs: crate::numerics::softmax(&logits),
            logits,
        })
    }
}
