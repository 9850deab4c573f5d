//! Parameter layout, forward pass and backpropagation of the two-stage
//! mutator network.
//!
//! Stage 1 embeds the parent's interleaved sparsity tokens, runs a
//! bidirectional LSTM over them and maps `[h_fwd(last); h_bwd(first)]` to one
//! logit per gene position. Stage 2 feeds the length-2 sequence
//! `[position embedding of the chosen gene, embedding of its current token]`
//! through a 2-layer LSTM; the final hidden state goes to the attention head
//! or the FFN head depending on the gene's sublayer.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::lstm::{affine, affine_backward, cell_backward, cell_forward, CellTrace};
use crate::scalar::Scalar;
use crate::space::{SpaceSpec, Sublayer};

/// Network widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub num_genes: usize,
    pub vocab: usize,
    pub num_heads: usize,
    pub ffn_steps: usize,
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
}

impl NetDims {
    pub fn new(spec: &SpaceSpec, embed_dim: usize, encoder_hidden: usize, decoder_hidden: usize) -> Self {
        Self {
            num_genes: spec.num_genes(),
            vocab: spec.vocab_size(),
            num_heads: spec.num_heads,
            ffn_steps: spec.ffn_steps,
            embed_dim,
            encoder_hidden,
            decoder_hidden,
        }
    }
}

/// Offsets of every parameter group inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embed: Range<usize>,
    pub enc_fwd_w: Range<usize>,
    pub enc_fwd_b: Range<usize>,
    pub enc_bwd_w: Range<usize>,
    pub enc_bwd_b: Range<usize>,
    pub layer_head_w: Range<usize>,
    pub layer_head_b: Range<usize>,
    pub pos_embed: Range<usize>,
    pub dec1_w: Range<usize>,
    pub dec1_b: Range<usize>,
    pub dec2_w: Range<usize>,
    pub dec2_b: Range<usize>,
    pub attn_head_w: Range<usize>,
    pub attn_head_b: Range<usize>,
    pub ffn_head_w: Range<usize>,
    pub ffn_head_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(d: &NetDims) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (e, h1, h2) = (d.embed_dim, d.encoder_hidden, d.decoder_hidden);
        let embed = take(d.vocab * e);
        let enc_fwd_w = take(4 * h1 * (e + h1));
        let enc_fwd_b = take(4 * h1);
        let enc_bwd_w = take(4 * h1 * (e + h1));
        let enc_bwd_b = take(4 * h1);
        let layer_head_w = take(d.num_genes * 2 * h1);
        let layer_head_b = take(d.num_genes);
        let pos_embed = take(d.num_genes * e);
        let dec1_w = take(4 * h2 * (e + h2));
        let dec1_b = take(4 * h2);
        let dec2_w = take(4 * h2 * (2 * h2));
        let dec2_b = take(4 * h2);
        let attn_head_w = take(d.num_heads * h2);
        let attn_head_b = take(d.num_heads);
        let ffn_head_w = take(d.ffn_steps * h2);
        let ffn_head_b = take(d.ffn_steps);
        Self {
            embed,
            enc_fwd_w,
            enc_fwd_b,
            enc_bwd_w,
            enc_bwd_b,
            layer_head_w,
            layer_head_b,
            pos_embed,
            dec1_w,
            dec1_b,
            dec2_w,
            dec2_b,
            attn_head_w,
            attn_head_b,
            ffn_head_w,
            ffn_head_b,
            total: at,
        }
    }

    /// Named parameter groups in storage order.
    pub fn groups(&self) -> Vec<(&'static str, Range<usize>)> {
        vec![
            ("embedding", self.embed.clone()),
            ("encoder_fwd_w", self.enc_fwd_w.clone()),
            ("encoder_fwd_b", self.enc_fwd_b.clone()),
            ("encoder_bwd_w", self.enc_bwd_w.clone()),
            ("encoder_bwd_b", self.enc_bwd_b.clone()),
            ("layer_head_w", self.layer_head_w.clone()),
            ("layer_head_b", self.layer_head_b.clone()),
            ("position_embedding", self.pos_embed.clone()),
            ("decoder1_w", self.dec1_w.clone()),
            ("decoder1_b", self.dec1_b.clone()),
            ("decoder2_w", self.dec2_w.clone()),
            ("decoder2_b", self.dec2_b.clone()),
            ("attention_head_w", self.attn_head_w.clone()),
            ("attention_head_b", self.attn_head_b.clone()),
            ("ffn_head_w", self.ffn_head_w.clone()),
            ("ffn_head_b", self.ffn_head_b.clone()),
        ]
    }
}

/// Softmax with optional excluded entry (probability exactly zero).
pub(crate) fn softmax<T: Scalar>(logits: &[T], exclude: Option<usize>) -> Vec<T> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .fold(T::neg_infinity(), |m, (_, &v)| m.max(v));
    let mut p: Vec<T> = logits
        .iter()
        .enumerate()
        .map(|(i, &v)| if Some(i) == exclude { T::zero() } else { (v - max).exp() })
        .collect();
    let sum = p.iter().fold(T::zero(), |a, &b| a + b);
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

pub(crate) struct Stage1<T> {
    tokens: Vec<usize>,
    fwd: Vec<CellTrace<T>>,
    /// Indexed by sequence position.
    bwd: Vec<CellTrace<T>>,
    enc: Vec<T>,
    pub logits: Vec<T>,
}

pub(crate) struct Stage2<T> {
    pos: usize,
    cur_token: usize,
    l1: [CellTrace<T>; 2],
    l2: [CellTrace<T>; 2],
    sublayer: Sublayer,
    pub logits: Vec<T>,
}

pub(crate) struct Net<'a, T> {
    pub dims: &'a NetDims,
    pub layout: &'a Layout,
    pub params: &'a [T],
}

impl<T: Scalar> Net<'_, T> {
    fn p(&self, r: &Range<usize>) -> &[T] {
        &self.params[r.clone()]
    }

    fn embedding(&self, table: &Range<usize>, row: usize) -> &[T] {
        let e = self.dims.embed_dim;
        &self.params[table.start + row * e..table.start + (row + 1) * e]
    }

    pub fn stage1(&self, tokens: &[usize]) -> Stage1<T> {
        let l = self.layout;
        let h1 = self.dims.encoder_hidden;
        let zeros = vec![T::zero(); h1];
        let mut fwd: Vec<CellTrace<T>> = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            let (h, c) = fwd.last().map_or((&zeros, &zeros), |t| (&t.h, &t.c));
            let step = cell_forward(self.p(&l.enc_fwd_w), self.p(&l.enc_fwd_b), self.embedding(&l.embed, tok), h, c);
            fwd.push(step);
        }
        let mut bwd_rev: Vec<CellTrace<T>> = Vec::with_capacity(tokens.len());
        for &tok in tokens.iter().rev() {
            let (h, c) = bwd_rev.last().map_or((&zeros, &zeros), |t| (&t.h, &t.c));
            let step = cell_forward(self.p(&l.enc_bwd_w), self.p(&l.enc_bwd_b), self.embedding(&l.embed, tok), h, c);
            bwd_rev.push(step);
        }
        bwd_rev.reverse();
        let mut enc = fwd.last().expect("nonempty").h.clone();
        enc.extend_from_slice(&bwd_rev[0].h);
        let mut logits = vec![T::zero(); self.dims.num_genes];
        affine(self.p(&l.layer_head_w), self.p(&l.layer_head_b), &enc, &mut logits);
        Stage1 { tokens: tokens.to_vec(), fwd, bwd: bwd_rev, enc, logits }
    }

    pub fn stage2(&self, pos: usize, cur_token: usize, sublayer: Sublayer) -> Stage2<T> {
        let l = self.layout;
        let h2 = self.dims.decoder_hidden;
        let zeros = vec![T::zero(); h2];
        let u0 = self.embedding(&l.pos_embed, pos);
        let u1 = self.embedding(&l.embed, cur_token);
        let a0 = cell_forward(self.p(&l.dec1_w), self.p(&l.dec1_b), u0, &zeros, &zeros);
        let a1 = cell_forward(self.p(&l.dec1_w), self.p(&l.dec1_b), u1, &a0.h, &a0.c);
        let b0 = cell_forward(self.p(&l.dec2_w), self.p(&l.dec2_b), &a0.h, &zeros, &zeros);
        let b1 = cell_forward(self.p(&l.dec2_w), self.p(&l.dec2_b), &a1.h, &b0.h, &b0.c);
        let (w, b, n) = match sublayer {
            Sublayer::Attention => (&l.attn_head_w, &l.attn_head_b, self.dims.num_heads),
            Sublayer::Ffn => (&l.ffn_head_w, &l.ffn_head_b, self.dims.ffn_steps),
        };
        let mut logits = vec![T::zero(); n];
        affine(self.p(w), self.p(b), &b1.h, &mut logits);
        Stage2 { pos, cur_token, l1: [a0, a1], l2: [b0, b1], sublayer, logits }
    }

    /// Accumulates `d/dθ` of a scalar objective into `grad`, given the
    /// objective's gradients on the stage-1 and stage-2 logits.
    pub fn backward(&self, s1: &Stage1<T>, s2: &Stage2<T>, dlogits1: &[T], dlogits2: &[T], grad: &mut [T]) {
        let l = self.layout;
        let (e, h1, h2) = (self.dims.embed_dim, self.dims.encoder_hidden, self.dims.decoder_hidden);
        let zeros2 = vec![T::zero(); h2];

        // Stage 2 output head.
        let (hw, hb) = match s2.sublayer {
            Sublayer::Attention => (&l.attn_head_w, &l.attn_head_b),
            Sublayer::Ffn => (&l.ffn_head_w, &l.ffn_head_b),
        };
        let mut dout = vec![T::zero(); h2];
        {
            let (dw, db) = split_two(grad, hw, hb);
            affine_backward(self.p(hw), &s2.l2[1].h, dlogits2, dw, db, &mut dout);
        }

        // Decoder layer 2, steps 1 then 0.
        let (dw, db) = split_two(grad, &l.dec2_w, &l.dec2_b);
        let g = cell_backward(self.p(&l.dec2_w), &s2.l2[1], &dout, &zeros2, dw, db);
        let mut dh1_step1 = g.dx;
        let g0 = cell_backward(self.p(&l.dec2_w), &s2.l2[0], &g.dh_prev, &g.dc_prev, dw, db);
        let mut dh1_step0 = g0.dx;

        // Decoder layer 1.
        let (dw, db) = split_two(grad, &l.dec1_w, &l.dec1_b);
        let g = cell_backward(self.p(&l.dec1_w), &s2.l1[1], &dh1_step1, &zeros2, dw, db);
        let du1 = g.dx;
        for (a, b) in dh1_step0.iter_mut().zip(&g.dh_prev) {
            *a += *b;
        }
        let g0 = cell_backward(self.p(&l.dec1_w), &s2.l1[0], &dh1_step0, &g.dc_prev, dw, db);
        let du0 = g0.dx;
        dh1_step1.clear();

        add_row(grad, &l.pos_embed, s2.pos, e, &du0);
        add_row(grad, &l.embed, s2.cur_token, e, &du1);

        // Stage 1 layer head.
        let mut denc = vec![T::zero(); 2 * h1];
        {
            let (dw, db) = split_two(grad, &l.layer_head_w, &l.layer_head_b);
            affine_backward(self.p(&l.layer_head_w), &s1.enc, dlogits1, dw, db, &mut denc);
        }
        let n = s1.tokens.len();
        let zeros1 = vec![T::zero(); h1];

        // Forward-direction encoder: gradient enters at the last step.
        let mut dh = denc[..h1].to_vec();
        let mut dc = zeros1.clone();
        let mut dx_tokens: Vec<Vec<T>> = vec![vec![T::zero(); e]; n];
        {
            let (dw, db) = split_two(grad, &l.enc_fwd_w, &l.enc_fwd_b);
            for t in (0..n).rev() {
                let g = cell_backward(self.p(&l.enc_fwd_w), &s1.fwd[t], &dh, &dc, dw, db);
                dx_tokens[t] = g.dx;
                dh = g.dh_prev;
                dc = g.dc_prev;
            }
        }
        // Backward-direction encoder ran from the last token to the first.
        let mut dh = denc[h1..].to_vec();
        let mut dc = zeros1;
        {
            let (dw, db) = split_two(grad, &l.enc_bwd_w, &l.enc_bwd_b);
            for t in 0..n {
                let g = cell_backward(self.p(&l.enc_bwd_w), &s1.bwd[t], &dh, &dc, dw, db);
                for (a, b) in dx_tokens[t].iter_mut().zip(&g.dx) {
                    *a += *b;
                }
                dh = g.dh_prev;
                dc = g.dc_prev;
            }
        }
        for (t, dx) in dx_tokens.iter().enumerate() {
            add_row(grad, &l.embed, s1.tokens[t], e, dx);
        }
    }
}

/// Disjoint mutable views of a weight range and its bias range.
fn split_two<'g, T>(grad: &'g mut [T], w: &Range<usize>, b: &Range<usize>) -> (&'g mut [T], &'g mut [T]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grad[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}

fn add_row<T: Scalar>(grad: &mut [T], table: &Range<usize>, row: usize, width: usize, delta: &[T]) {
    let start = table.start + row * width;
    for (g, &d) in grad[start..start + width].iter_mut().zip(delta) {
        *g += d;
    }
}
