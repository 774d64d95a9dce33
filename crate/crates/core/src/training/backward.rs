//! Reverse-mode gradients for the encoder, hand-derived per operation.

use rayon::prelude::*;

use crate::encoder::math::{dot, gelu_derivative, layer_norm_rows_backward, Matrix};
use crate::encoder::{Batch, ForwardMode, ForwardOutput, ModelParams, SequenceCache};
use crate::encoder::math::softmax;

use super::TrainError;

fn mul_mask(values: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, s) in values.iter_mut().zip(m) {
            *v *= s;
        }
    }
}

fn add_vec(acc: &mut Matrix, v: &[f64]) {
    for (a, b) in acc.data.iter_mut().zip(v) {
        *a += b;
    }
}

/// Gradient of the mean cross-entropy with respect to the logits of one row.
pub fn logit_gradient(logits: &[f64], gold: usize, batch_size: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[gold] -= 1.0;
    let inv = 1.0 / batch_size as f64;
    for x in &mut g {
        *x *= inv;
    }
    g
}

fn sequence_backward(
    params: &ModelParams,
    ids: &[u32],
    segments: &[u8],
    cache: &SequenceCache,
    dlogits: &[f64],
) -> ModelParams {
    let cfg = &params.config;
    let h = cfg.hidden_size;
    let len = ids.len();
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut g = params.zeros_like();

    // classifier head on the [CLS] row
    for (i, &x) in cache.classifier_input.iter().enumerate() {
        for (gw, &dl) in g.classifier_w.row_mut(i).iter_mut().zip(dlogits) {
            *gw += x * dl;
        }
    }
    add_vec(&mut g.classifier_b, dlogits);
    let mut dcls: Vec<f64> = (0..h).map(|i| dot(params.classifier_w.row(i), dlogits)).collect();
    mul_mask(&mut dcls, &cache.cls_dropout);
    let mut dx = Matrix::zeros(len, h);
    dx.row_mut(0).copy_from_slice(&dcls);

    for (l, lc) in cache.layers.iter().enumerate().rev() {
        let layer = &params.layers[l];
        let gl = &mut g.layers[l];

        // out = LN(h1 + drop(FFN(h1)))
        let dres = layer_norm_rows_backward(
            &dx,
            &lc.ff_norm,
            &layer.ff_norm_scale.data,
            &mut gl.ff_norm_scale.data,
            &mut gl.ff_norm_shift.data,
        );
        let mut dh1 = dres.clone();
        let mut dff = dres;
        mul_mask(&mut dff.data, &lc.ff_dropout);
        gl.ff_out_w.add_assign(&lc.ff_act.t_matmul(&dff));
        add_vec(&mut gl.ff_out_b, &dff.column_sums());
        let mut dact = dff.matmul_t(&layer.ff_out_w);
        for (da, &z) in dact.data.iter_mut().zip(&lc.ff_pre.data) {
            *da *= gelu_derivative(z);
        }
        gl.ff_in_w.add_assign(&lc.attn_normed.t_matmul(&dact));
        add_vec(&mut gl.ff_in_b, &dact.column_sums());
        dh1.add_assign(&dact.matmul_t(&layer.ff_in_w));

        // h1 = LN(x + drop(Attn(x)))
        let dres = layer_norm_rows_backward(
            &dh1,
            &lc.attn_norm,
            &layer.attn_norm_scale.data,
            &mut gl.attn_norm_scale.data,
            &mut gl.attn_norm_shift.data,
        );
        let mut dinput = dres.clone();
        let mut dao = dres;
        mul_mask(&mut dao.data, &lc.attn_dropout);
        let att = &lc.attention;
        gl.attn_out_w.add_assign(&att.context.t_matmul(&dao));
        add_vec(&mut gl.attn_out_b, &dao.column_sums());
        let dctx = dao.matmul_t(&layer.attn_out_w);

        let mut dq = Matrix::zeros(len, h);
        let mut dk = Matrix::zeros(len, h);
        let mut dv = Matrix::zeros(len, h);
        for head in 0..cfg.num_heads {
            let q = att.query.column_block(head * d, d);
            let k = att.key.column_block(head * d, d);
            let v = att.value.column_block(head * d, d);
            let probs = &att.probs[head];
            let drop = att.prob_dropout.as_ref().map(|m| &m[head]);
            let dropped = match drop {
                Some(m) => Matrix::from_vec(len, len, probs.data.iter().zip(&m.data).map(|(p, s)| p * s).collect()),
                None => probs.clone(),
            };
            let dctx_h = dctx.column_block(head * d, d);
            let mut dp = dctx_h.matmul_t(&v);
            dv.set_column_block(head * d, &dropped.t_matmul(&dctx_h));
            if let Some(m) = drop {
                for (x, s) in dp.data.iter_mut().zip(&m.data) {
                    *x *= s;
                }
            }
            // softmax backward, then the 1/sqrt(d) scaling
            let mut ds = Matrix::zeros(len, len);
            for i in 0..len {
                let p = probs.row(i);
                let dpi = dp.row(i);
                let inner = dot(p, dpi);
                for (j, s) in ds.row_mut(i).iter_mut().enumerate() {
                    *s = p[j] * (dpi[j] - inner) * scale;
                }
            }
            dq.set_column_block(head * d, &ds.matmul(&k));
            dk.set_column_block(head * d, &ds.t_matmul(&q));
        }
        for (dproj, w, gw, gb) in [
            (&dq, &layer.query_w, &mut gl.query_w, &mut gl.query_b),
            (&dk, &layer.key_w, &mut gl.key_w, &mut gl.key_b),
            (&dv, &layer.value_w, &mut gl.value_w, &mut gl.value_b),
        ] {
            gw.add_assign(&lc.input.t_matmul(dproj));
            add_vec(gb, &dproj.column_sums());
            dinput.add_assign(&dproj.matmul_t(w));
        }
        dx = dinput;
    }

    mul_mask(&mut dx.data, &cache.embed_dropout);
    let demb = layer_norm_rows_backward(
        &dx,
        &cache.embed_norm,
        &params.embed_norm_scale.data,
        &mut g.embed_norm_scale.data,
        &mut g.embed_norm_shift.data,
    );
    for t in 0..len {
        let row = demb.row(t);
        for (dst, table_row) in [
            (&mut g.token_embeddings, ids[t] as usize),
            (&mut g.position_embeddings, t),
            (&mut g.segment_embeddings, segments[t] as usize),
        ] {
            for (a, b) in dst.row_mut(table_row).iter_mut().zip(row) {
                *a += b;
            }
        }
    }
    g
}

/// Exact gradients of the mean batch cross-entropy with respect to every
/// parameter, from activations cached by a train-mode [`crate::encoder::forward`]
/// on the same batch.
pub fn backward(params: &ModelParams, batch: &Batch, output: &ForwardOutput) -> Result<ModelParams, TrainError> {
    if !matches!(output.mode, ForwardMode::Train { .. }) {
        return Err(TrainError::StaleCache("forward ran in eval mode; no activations cached".into()));
    }
    if output.caches.len() != batch.batch_size || output.token_ids != batch.token_ids {
        return Err(TrainError::StaleCache("cached activations belong to a different batch".into()));
    }
    if output.logits.cols != params.config.num_classes {
        return Err(TrainError::StaleCache("cached logits do not match the classifier head".into()));
    }
    for &label in &batch.labels {
        if label >= params.config.num_classes {
            return Err(TrainError::LabelOutOfRange {
                label,
                num_classes: params.config.num_classes,
            });
        }
    }
    let per_sequence: Vec<ModelParams> = (0..batch.batch_size)
        .into_par_iter()
        .map(|i| {
            let dlogits = logit_gradient(output.logits.row(i), batch.labels[i], batch.batch_size);
            sequence_backward(params, batch.ids(i), batch.segments(i), &output.caches[i], &dlogits)
        })
        .collect();
    // fixed summation order keeps results independent of thread count
    let mut total = params.zeros_like();
    for g in &per_sequence {
        total.add_assign(g);
    }
    Ok(total)
}
