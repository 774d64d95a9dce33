use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::math::{gelu, layer_norm_rows, softmax, LayerNormCache, Matrix};
use super::params::{LayerParams, ModelParams};
use super::ModelError;
use crate::tokenizer::EncodedSequence;

/// A fixed-shape stack of packed sequences, `batch_size × seq_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    /// Target class per sequence.
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_sequences(sequences: &[&EncodedSequence], labels: &[usize]) -> Result<Self, ModelError> {
        if sequences.len() != labels.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} sequences but {} labels",
                sequences.len(),
                labels.len()
            )));
        }
        let seq_len = sequences.first().map_or(0, |s| s.len());
        let mut batch = Batch {
            batch_size: sequences.len(),
            seq_len,
            token_ids: Vec::with_capacity(sequences.len() * seq_len),
            segment_ids: Vec::with_capacity(sequences.len() * seq_len),
            attention_mask: Vec::with_capacity(sequences.len() * seq_len),
            labels: labels.to_vec(),
        };
        for s in sequences {
            if s.len() != seq_len || s.segment_ids.len() != seq_len || s.attention_mask.len() != seq_len {
                return Err(ModelError::ShapeMismatch(format!(
                    "sequence length {} differs from batch length {seq_len}",
                    s.len()
                )));
            }
            batch.token_ids.extend_from_slice(&s.token_ids);
            batch.segment_ids.extend_from_slice(&s.segment_ids);
            batch.attention_mask.extend_from_slice(&s.attention_mask);
        }
        Ok(batch)
    }

    pub fn ids(&self, i: usize) -> &[u32] {
        &self.token_ids[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn segments(&self, i: usize) -> &[u8] {
        &self.segment_ids[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn mask(&self, i: usize) -> &[u8] {
        &self.attention_mask[i * self.seq_len..(i + 1) * self.seq_len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Eval,
    /// Dropout active; masks are derived from `dropout_seed` and the position
    /// of each sequence in the batch.
    Train { dropout_seed: u64 },
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    /// Attention weights per head (`len × len`), before dropout.
    pub probs: Vec<Matrix>,
    pub prob_dropout: Option<Vec<Matrix>>,
    /// Concatenated per-head context vectors, before the output projection.
    pub context: Matrix,
    pub output: Matrix,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Matrix,
    pub attention: AttentionOutput,
    pub(crate) attn_dropout: Option<Vec<f64>>,
    pub(crate) attn_norm: LayerNormCache,
    pub(crate) attn_normed: Matrix,
    pub(crate) ff_pre: Matrix,
    pub(crate) ff_act: Matrix,
    pub(crate) ff_dropout: Option<Vec<f64>>,
    pub(crate) ff_norm: LayerNormCache,
}

/// Activations of one sequence, retained for backpropagation.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    pub(crate) embed_norm: LayerNormCache,
    pub(crate) embed_dropout: Option<Vec<f64>>,
    pub layers: Vec<LayerCache>,
    pub hidden: Matrix,
    pub(crate) cls_dropout: Option<Vec<f64>>,
    pub(crate) classifier_input: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `batch_size × num_classes`
    pub logits: Matrix,
    pub mode: ForwardMode,
    /// Per-sequence activations; populated in train mode only.
    pub caches: Vec<SequenceCache>,
    pub(crate) token_ids: Vec<u32>,
}

struct Dropout {
    rng: ChaCha8Rng,
    rate: f64,
}

impl Dropout {
    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    fn apply(&mut self, values: &mut [f64]) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        values
            .iter_mut()
            .map(|v| {
                let s = if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep };
                *v *= s;
                s
            })
            .collect()
    }
}

fn maybe_drop(dropout: &mut Option<Dropout>, values: &mut [f64]) -> Option<Vec<f64>> {
    dropout.as_mut().map(|d| d.apply(values))
}

fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut y = x.matmul(w);
    y.add_row_vector(&b.data);
    y
}

/// Scaled dot-product attention over all heads of one sequence. Keys whose
/// mask entry is 0 get `-inf` scores and therefore zero weight.
pub fn multi_head_attention(
    hidden: &Matrix,
    mask: &[u8],
    layer: &LayerParams,
    num_heads: usize,
) -> Result<AttentionOutput, ModelError> {
    attention_with_dropout(hidden, mask, layer, num_heads, &mut None)
}

fn attention_with_dropout(
    hidden: &Matrix,
    mask: &[u8],
    layer: &LayerParams,
    num_heads: usize,
    dropout: &mut Option<Dropout>,
) -> Result<AttentionOutput, ModelError> {
    let len = hidden.rows;
    if mask.len() != len {
        return Err(ModelError::ShapeMismatch(format!(
            "mask length {} for sequence of {len}",
            mask.len()
        )));
    }
    if !mask.contains(&1) {
        return Err(ModelError::AllMasked(0));
    }
    let h = hidden.cols;
    let d = h / num_heads;
    let scale = 1.0 / (d as f64).sqrt();
    let query = linear(hidden, &layer.query_w, &layer.query_b);
    let key = linear(hidden, &layer.key_w, &layer.key_b);
    let value = linear(hidden, &layer.value_w, &layer.value_b);
    let mut context = Matrix::zeros(len, h);
    let mut probs = Vec::with_capacity(num_heads);
    let mut prob_dropout = dropout.as_ref().map(|_| Vec::with_capacity(num_heads));
    for head in 0..num_heads {
        let q = query.column_block(head * d, d);
        let k = key.column_block(head * d, d);
        let v = value.column_block(head * d, d);
        let mut scores = q.matmul_t(&k);
        let mut p = Matrix::zeros(len, len);
        for i in 0..len {
            let row = scores.row_mut(i);
            for (j, s) in row.iter_mut().enumerate() {
                *s = if mask[j] == 1 { *s * scale } else { f64::NEG_INFINITY };
            }
            p.row_mut(i).copy_from_slice(&softmax(row));
        }
        let mut dropped = p.clone();
        if let (Some(store), Some(dp)) = (prob_dropout.as_mut(), dropout.as_mut()) {
            let m = dp.apply(&mut dropped.data);
            store.push(Matrix::from_vec(len, len, m));
        }
        context.set_column_block(head * d, &dropped.matmul(&v));
        probs.push(p);
    }
    let output = linear(&context, &layer.attn_out_w, &layer.attn_out_b);
    Ok(AttentionOutput {
        query,
        key,
        value,
        probs,
        prob_dropout,
        context,
        output,
    })
}

fn forward_sequence(
    params: &ModelParams,
    ids: &[u32],
    segments: &[u8],
    mask: &[u8],
    dropout_seed: Option<(u64, usize)>,
) -> Result<(Vec<f64>, SequenceCache), ModelError> {
    let cfg = &params.config;
    let len = ids.len();
    let h = cfg.hidden_size;
    let mut dropout = match dropout_seed {
        Some((seed, index)) if cfg.dropout_rate > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            Some(Dropout {
                rng,
                rate: cfg.dropout_rate,
            })
        }
        _ => None,
    };

    let mut emb = Matrix::zeros(len, h);
    for t in 0..len {
        let row = emb.row_mut(t);
        let tok = params.token_embeddings.row(ids[t] as usize);
        let pos = params.position_embeddings.row(t);
        let seg = params.segment_embeddings.row(segments[t] as usize);
        for c in 0..h {
            row[c] = tok[c] + pos[c] + seg[c];
        }
    }
    let (mut x, embed_norm) = layer_norm_rows(
        &emb,
        &params.embed_norm_scale.data,
        &params.embed_norm_shift.data,
        cfg.layer_norm_eps,
    );
    let embed_dropout = maybe_drop(&mut dropout, &mut x.data);

    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let attention = attention_with_dropout(&x, mask, layer, cfg.num_heads, &mut dropout)?;
        let mut residual = attention.output.clone();
        let attn_dropout = maybe_drop(&mut dropout, &mut residual.data);
        residual.add_assign(&x);
        let (attn_normed, attn_norm) = layer_norm_rows(
            &residual,
            &layer.attn_norm_scale.data,
            &layer.attn_norm_shift.data,
            cfg.layer_norm_eps,
        );

        let ff_pre = linear(&attn_normed, &layer.ff_in_w, &layer.ff_in_b);
        let ff_act = Matrix::from_vec(ff_pre.rows, ff_pre.cols, ff_pre.data.iter().map(|&z| gelu(z)).collect());
        let mut ff_out = linear(&ff_act, &layer.ff_out_w, &layer.ff_out_b);
        let ff_dropout = maybe_drop(&mut dropout, &mut ff_out.data);
        ff_out.add_assign(&attn_normed);
        let (out, ff_norm) = layer_norm_rows(
            &ff_out,
            &layer.ff_norm_scale.data,
            &layer.ff_norm_shift.data,
            cfg.layer_norm_eps,
        );

        let input = std::mem::replace(&mut x, out);
        layers.push(LayerCache {
            input,
            attention,
            attn_dropout,
            attn_norm,
            attn_normed,
            ff_pre,
            ff_act,
            ff_dropout,
            ff_norm,
        });
    }

    let mut classifier_input = x.row(0).to_vec();
    let cls_dropout = maybe_drop(&mut dropout, &mut classifier_input);
    let mut logits = params.classifier_b.data.clone();
    for (i, &v) in classifier_input.iter().enumerate() {
        for (l, &w) in logits.iter_mut().zip(params.classifier_w.row(i)) {
            *l += v * w;
        }
    }
    Ok((
        logits,
        SequenceCache {
            embed_norm,
            embed_dropout,
            layers,
            hidden: x,
            cls_dropout,
            classifier_input,
        },
    ))
}

fn validate_batch(params: &ModelParams, batch: &Batch) -> Result<(), ModelError> {
    let cfg = &params.config;
    let n = batch.batch_size * batch.seq_len;
    if batch.token_ids.len() != n || batch.segment_ids.len() != n || batch.attention_mask.len() != n {
        return Err(ModelError::ShapeMismatch("batch tensors disagree with batch shape".into()));
    }
    if batch.labels.len() != batch.batch_size {
        return Err(ModelError::ShapeMismatch("one label per sequence required".into()));
    }
    if batch.seq_len > cfg.max_len {
        return Err(ModelError::ShapeMismatch(format!(
            "sequence length {} exceeds position table of {}",
            batch.seq_len, cfg.max_len
        )));
    }
    if let Some(&id) = batch.token_ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    if batch.segment_ids.iter().any(|&s| s > 1) || batch.attention_mask.iter().any(|&m| m > 1) {
        return Err(ModelError::ShapeMismatch("segment and mask entries must be 0 or 1".into()));
    }
    for i in 0..batch.batch_size {
        if !batch.mask(i).contains(&1) {
            return Err(ModelError::AllMasked(i));
        }
    }
    Ok(())
}

/// Runs the encoder and classifier over a batch. In train mode dropout is
/// active and activations are kept for [`crate::training::backward`].
pub fn forward(params: &ModelParams, batch: &Batch, mode: ForwardMode) -> Result<ForwardOutput, ModelError> {
    validate_batch(params, batch)?;
    let seed = match mode {
        ForwardMode::Eval => None,
        ForwardMode::Train { dropout_seed } => Some(dropout_seed),
    };
    let results: Vec<(Vec<f64>, SequenceCache)> = (0..batch.batch_size)
        .into_par_iter()
        .map(|i| forward_sequence(params, batch.ids(i), batch.segments(i), batch.mask(i), seed.map(|s| (s, i))))
        .collect::<Result<_, _>>()?;
    let classes = params.config.num_classes;
    let mut logits = Matrix::zeros(batch.batch_size, classes);
    let mut caches = Vec::new();
    for (i, (row, cache)) in results.into_iter().enumerate() {
        logits.row_mut(i).copy_from_slice(&row);
        if seed.is_some() {
            caches.push(cache);
        }
    }
    Ok(ForwardOutput {
        logits,
        mode,
        caches,
        token_ids: batch.token_ids.clone(),
    })
}
