use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, NormCache};
use super::{Freeze, ParamInfo, Parameterized};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{dot, Scalar};
use crate::textproc::TokenizedInput;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim: 64,
            layers: 2,
            heads: 2,
            ffn_dim: 128,
            max_len,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("encoder {name} must be at least 1")));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// Parameter groups the optimizer should leave alone.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderFreeze {
    pub token_embeddings: bool,
    pub position_embeddings: bool,
    pub blocks: bool,
    pub final_norm: bool,
    /// Individual token-embedding rows, e.g. the `[NIL]` anchor.
    pub tokens: Vec<u32>,
}

impl EncoderFreeze {
    pub fn everything() -> Self {
        EncoderFreeze {
            token_embeddings: true,
            position_embeddings: true,
            blocks: true,
            final_norm: true,
            tokens: Vec::new(),
        }
    }

    fn group(flag: bool) -> Freeze {
        if flag {
            Freeze::All
        } else {
            Freeze::None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block<T> {
    ln1_g: Vec<T>,
    ln1_b: Vec<T>,
    wq: Vec<T>,
    bq: Vec<T>,
    wk: Vec<T>,
    bk: Vec<T>,
    wv: Vec<T>,
    bv: Vec<T>,
    wo: Vec<T>,
    bo: Vec<T>,
    ln2_g: Vec<T>,
    ln2_b: Vec<T>,
    w1: Vec<T>,
    b1: Vec<T>,
    w2: Vec<T>,
    b2: Vec<T>,
}

impl<T: Scalar> Block<T> {
    /// `sample` draws standard normals; each matrix is scaled by
    /// `1/sqrt(fan_in)`.
    fn init(d: usize, f: usize, sample: &mut impl FnMut() -> T) -> Self {
        let mut mat = |fan_in: usize, n: usize| {
            let scale = T::lit(1.0 / (fan_in as f64).sqrt());
            (0..n).map(|_| sample() * scale).collect::<Vec<T>>()
        };
        Block {
            ln1_g: vec![T::one(); d],
            ln1_b: vec![T::zero(); d],
            wq: mat(d, d * d),
            bq: vec![T::zero(); d],
            wk: mat(d, d * d),
            bk: vec![T::zero(); d],
            wv: mat(d, d * d),
            bv: vec![T::zero(); d],
            wo: mat(d, d * d),
            bo: vec![T::zero(); d],
            ln2_g: vec![T::one(); d],
            ln2_b: vec![T::zero(); d],
            w1: mat(d, d * f),
            b1: vec![T::zero(); f],
            w2: mat(f, f * d),
            b2: vec![T::zero(); d],
        }
    }

    fn tensors(&self, d: usize, f: usize) -> [(&'static str, Vec<usize>, &[T]); 16] {
        [
            ("ln1.gain", vec![d], &self.ln1_g),
            ("ln1.bias", vec![d], &self.ln1_b),
            ("attn.wq", vec![d, d], &self.wq),
            ("attn.bq", vec![d], &self.bq),
            ("attn.wk", vec![d, d], &self.wk),
            ("attn.bk", vec![d], &self.bk),
            ("attn.wv", vec![d, d], &self.wv),
            ("attn.bv", vec![d], &self.bv),
            ("attn.wo", vec![d, d], &self.wo),
            ("attn.bo", vec![d], &self.bo),
            ("ln2.gain", vec![d], &self.ln2_g),
            ("ln2.bias", vec![d], &self.ln2_b),
            ("ffn.w1", vec![d, f], &self.w1),
            ("ffn.b1", vec![f], &self.b1),
            ("ffn.w2", vec![f, d], &self.w2),
            ("ffn.b2", vec![d], &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [T]; 16] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// Transformer encoder; `encode` returns the final-layer vector at position 0
/// (the `[CLS]` slot).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    config: EncoderConfig,
    tok_emb: Vec<T>,
    pos_emb: Vec<T>,
    blocks: Vec<Block<T>>,
    lnf_g: Vec<T>,
    lnf_b: Vec<T>,
    pub freeze: EncoderFreeze,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    norm1: NormCache<T>,
    h1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// heads × n × n attention weights
    probs: Vec<T>,
    ctx: Vec<T>,
    norm2: NormCache<T>,
    h2: Vec<T>,
    pre_act: Vec<T>,
    act: Vec<T>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    tokens: Vec<usize>,
    positions: Vec<usize>,
    layers: Vec<LayerCache<T>>,
    final_norm: NormCache<T>,
}

const EMBED_STD: f64 = 0.02;

impl<T: Scalar> Encoder<T> {
    /// Embeddings ~ N(0, 0.02²), projection weights ~ N(0, 1/fan_in), biases
    /// zero, norm gains one; fully determined by `config.seed`.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let f = config.ffn_dim;
        let mut rng = rng::seeded(config.seed);
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let mut sample = || T::lit(normal.sample(&mut rng));
        let emb = T::lit(EMBED_STD);
        let tok_emb = (0..config.vocab_size * d).map(|_| sample() * emb).collect();
        let pos_emb = (0..config.max_len * d).map(|_| sample() * emb).collect();
        let blocks = (0..config.layers)
            .map(|_| Block::init(d, f, &mut sample))
            .collect();
        Ok(Encoder {
            config,
            tok_emb,
            pos_emb,
            blocks,
            lnf_g: vec![T::one(); d],
            lnf_b: vec![T::zero(); d],
            freeze: EncoderFreeze::default(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn token_embedding(&self, id: u32) -> &[T] {
        let d = self.dim();
        &self.tok_emb[id as usize * d..(id as usize + 1) * d]
    }

    pub fn encode(&self, input: &TokenizedInput) -> Result<Vec<T>> {
        Ok(self.forward(input)?.0)
    }

    /// Runs the unmasked positions only; masked positions can neither attend
    /// nor be attended to, so they do not affect position 0.
    pub fn forward(&self, input: &TokenizedInput) -> Result<(Vec<T>, ForwardCache<T>)> {
        if input.ids.len() != input.mask.len() {
            return Err(Error::Shape(format!(
                "{} ids but {} mask entries",
                input.ids.len(),
                input.mask.len()
            )));
        }
        let mut tokens = Vec::new();
        let mut positions = Vec::new();
        for (pos, (&id, &m)) in input.ids.iter().zip(&input.mask).enumerate() {
            if m == 0 {
                continue;
            }
            if id as usize >= self.config.vocab_size {
                return Err(Error::InvalidArgument(format!(
                    "token id {id} out of range for vocabulary of {}",
                    self.config.vocab_size
                )));
            }
            if pos >= self.config.max_len {
                return Err(Error::InvalidArgument(format!(
                    "position {pos} beyond encoder max_len {}",
                    self.config.max_len
                )));
            }
            tokens.push(id as usize);
            positions.push(pos);
        }
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("input has no unmasked position".into()));
        }
        Ok(self.forward_tokens(tokens, positions))
    }

    fn forward_tokens(&self, tokens: Vec<usize>, positions: Vec<usize>) -> (Vec<T>, ForwardCache<T>) {
        let d = self.config.embed_dim;
        let f = self.config.ffn_dim;
        let heads = self.config.heads;
        let hd = self.config.head_dim();
        let n = tokens.len();
        let scale = T::one() / T::lit(hd as f64).sqrt();

        let mut x = vec![T::zero(); n * d];
        for (i, (&t, &p)) in tokens.iter().zip(&positions).enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            let te = &self.tok_emb[t * d..(t + 1) * d];
            let pe = &self.pos_emb[p * d..(p + 1) * d];
            for j in 0..d {
                row[j] = te[j] + pe[j];
            }
        }

        let mut layers = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (h1, norm1) = ops::layer_norm(&x, &b.ln1_g, &b.ln1_b);
            let mut q = ops::matmul(&h1, &b.wq, n, d, d);
            ops::add_bias(&mut q, &b.bq);
            let mut k = ops::matmul(&h1, &b.wk, n, d, d);
            ops::add_bias(&mut k, &b.bk);
            let mut v = ops::matmul(&h1, &b.wv, n, d, d);
            ops::add_bias(&mut v, &b.bv);

            let mut probs = vec![T::zero(); heads * n * n];
            let mut ctx = vec![T::zero(); n * d];
            for h in 0..heads {
                let off = h * hd;
                for i in 0..n {
                    let qi = &q[i * d + off..i * d + off + hd];
                    let prow = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                    let mut max = T::neg_infinity();
                    for j in 0..n {
                        let kj = &k[j * d + off..j * d + off + hd];
                        let s = dot(qi, kj) * scale;
                        prow[j] = s;
                        max = max.max(s);
                    }
                    let mut total = T::zero();
                    for p in prow.iter_mut() {
                        *p = (*p - max).exp();
                        total += *p;
                    }
                    for p in prow.iter_mut() {
                        *p /= total;
                    }
                    let crow = &mut ctx[i * d + off..i * d + off + hd];
                    for j in 0..n {
                        let w = prow[j];
                        let vj = &v[j * d + off..j * d + off + hd];
                        for (c, &vv) in crow.iter_mut().zip(vj) {
                            *c += w * vv;
                        }
                    }
                }
            }
            let mut attn_out = ops::matmul(&ctx, &b.wo, n, d, d);
            ops::add_bias(&mut attn_out, &b.bo);
            for (xi, a) in x.iter_mut().zip(&attn_out) {
                *xi += *a;
            }

            let (h2, norm2) = ops::layer_norm(&x, &b.ln2_g, &b.ln2_b);
            let mut pre_act = ops::matmul(&h2, &b.w1, n, d, f);
            ops::add_bias(&mut pre_act, &b.b1);
            let act: Vec<T> = pre_act.iter().map(|&u| ops::gelu(u)).collect();
            let mut ffn_out = ops::matmul(&act, &b.w2, n, f, d);
            ops::add_bias(&mut ffn_out, &b.b2);
            for (xi, a) in x.iter_mut().zip(&ffn_out) {
                *xi += *a;
            }

            layers.push(LayerCache {
                norm1,
                h1,
                q,
                k,
                v,
                probs,
                ctx,
                norm2,
                h2,
                pre_act,
                act,
            });
        }

        let (y, final_norm) = ops::layer_norm(&x, &self.lnf_g, &self.lnf_b);
        let out = y[..d].to_vec();
        (
            out,
            ForwardCache {
                tokens,
                positions,
                layers,
                final_norm,
            },
        )
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to the encoder output is `d_out`. Frozen groups are left at zero.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &[T], grads: &mut Encoder<T>) {
        let d = self.config.embed_dim;
        let f = self.config.ffn_dim;
        let heads = self.config.heads;
        let hd = self.config.head_dim();
        let n = cache.tokens.len();
        let scale = T::one() / T::lit(hd as f64).sqrt();

        let mut dy = vec![T::zero(); n * d];
        dy[..d].copy_from_slice(d_out);
        let mut dx = ops::layer_norm_backward(
            &dy,
            &cache.final_norm,
            &self.lnf_g,
            &mut grads.lnf_g,
            &mut grads.lnf_b,
        );

        for (l, b) in self.blocks.iter().enumerate().rev() {
            let c = &cache.layers[l];
            let g = &mut grads.blocks[l];

            // feed-forward residual branch
            ops::acc_at_g(&mut g.w2, &c.act, &dx, n, f, d);
            ops::acc_col_sum(&mut g.b2, &dx);
            let mut d_pre = ops::matmul_bt(&dx, &b.w2, n, f, d);
            for (dp, &u) in d_pre.iter_mut().zip(&c.pre_act) {
                *dp *= ops::gelu_grad(u);
            }
            ops::acc_at_g(&mut g.w1, &c.h2, &d_pre, n, d, f);
            ops::acc_col_sum(&mut g.b1, &d_pre);
            let dh2 = ops::matmul_bt(&d_pre, &b.w1, n, d, f);
            let dmid = ops::layer_norm_backward(&dh2, &c.norm2, &b.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
            for (a, m) in dx.iter_mut().zip(&dmid) {
                *a += *m;
            }

            // attention residual branch
            ops::acc_at_g(&mut g.wo, &c.ctx, &dx, n, d, d);
            ops::acc_col_sum(&mut g.bo, &dx);
            let dctx = ops::matmul_bt(&dx, &b.wo, n, d, d);
            let mut dq = vec![T::zero(); n * d];
            let mut dk = vec![T::zero(); n * d];
            let mut dv = vec![T::zero(); n * d];
            let mut dp = vec![T::zero(); n];
            for h in 0..heads {
                let off = h * hd;
                for i in 0..n {
                    let prow = &c.probs[(h * n + i) * n..(h * n + i + 1) * n];
                    let dci = &dctx[i * d + off..i * d + off + hd];
                    let mut weighted = T::zero();
                    for j in 0..n {
                        let vj = &c.v[j * d + off..j * d + off + hd];
                        dp[j] = dot(dci, vj);
                        weighted += dp[j] * prow[j];
                        let w = prow[j];
                        let dvj = &mut dv[j * d + off..j * d + off + hd];
                        for (o, &gc) in dvj.iter_mut().zip(dci) {
                            *o += w * gc;
                        }
                    }
                    let qi: Vec<T> = c.q[i * d + off..i * d + off + hd].to_vec();
                    for j in 0..n {
                        let ds = prow[j] * (dp[j] - weighted) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        for t in 0..hd {
                            dq[i * d + off + t] += ds * c.k[j * d + off + t];
                            dk[j * d + off + t] += ds * qi[t];
                        }
                    }
                }
            }
            ops::acc_at_g(&mut g.wq, &c.h1, &dq, n, d, d);
            ops::acc_col_sum(&mut g.bq, &dq);
            ops::acc_at_g(&mut g.wk, &c.h1, &dk, n, d, d);
            ops::acc_col_sum(&mut g.bk, &dk);
            ops::acc_at_g(&mut g.wv, &c.h1, &dv, n, d, d);
            ops::acc_col_sum(&mut g.bv, &dv);
            let mut dh1 = ops::matmul_bt(&dq, &b.wq, n, d, d);
            for (a, x) in dh1.iter_mut().zip(ops::matmul_bt(&dk, &b.wk, n, d, d)) {
                *a += x;
            }
            for (a, x) in dh1.iter_mut().zip(ops::matmul_bt(&dv, &b.wv, n, d, d)) {
                *a += x;
            }
            let din = ops::layer_norm_backward(&dh1, &c.norm1, &b.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
            for (a, m) in dx.iter_mut().zip(&din) {
                *a += *m;
            }
        }

        for (i, (&t, &p)) in cache.tokens.iter().zip(&cache.positions).enumerate() {
            let src = &dx[i * d..(i + 1) * d];
            for (o, &s) in grads.tok_emb[t * d..(t + 1) * d].iter_mut().zip(src) {
                *o += s;
            }
            for (o, &s) in grads.pos_emb[p * d..(p + 1) * d].iter_mut().zip(src) {
                *o += s;
            }
        }
        super::mask_frozen(self, grads);
    }
}

impl<T: Scalar> Parameterized<T> for Encoder<T> {
    fn params(&self) -> Vec<(ParamInfo, &[T])> {
        let d = self.config.embed_dim;
        let f = self.config.ffn_dim;
        let fr = &self.freeze;
        let tok_freeze = if fr.token_embeddings {
            Freeze::All
        } else if fr.tokens.is_empty() {
            Freeze::None
        } else {
            Freeze::Rows(fr.tokens.iter().map(|&t| t as usize).collect())
        };
        let mut out = vec![
            (
                ParamInfo::new("tok_emb", &[self.config.vocab_size, d], tok_freeze),
                self.tok_emb.as_slice(),
            ),
            (
                ParamInfo::new(
                    "pos_emb",
                    &[self.config.max_len, d],
                    EncoderFreeze::group(fr.position_embeddings),
                ),
                self.pos_emb.as_slice(),
            ),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            for (name, shape, data) in b.tensors(d, f) {
                out.push((
                    ParamInfo::new(format!("block{l}.{name}"), &shape, EncoderFreeze::group(fr.blocks)),
                    data,
                ));
            }
        }
        let nf = EncoderFreeze::group(fr.final_norm);
        out.push((ParamInfo::new("final_norm.gain", &[d], nf.clone()), &self.lnf_g));
        out.push((ParamInfo::new("final_norm.bias", &[d], nf), &self.lnf_b));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::Special;

    fn input(ids: &[u32], max_len: usize) -> TokenizedInput {
        let mut v = ids.to_vec();
        v.resize(max_len, Special::Pad.id());
        let mut mask = vec![1u8; ids.len()];
        mask.resize(max_len, 0);
        TokenizedInput {
            ids: v,
            mask,
            mention_truncated: false,
        }
    }

    fn tiny() -> Encoder<f64> {
        Encoder::new(EncoderConfig {
            vocab_size: 20,
            embed_dim: 8,
            layers: 2,
            heads: 2,
            ffn_dim: 12,
            max_len: 10,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig::new(10, 8);
        c.heads = 3;
        assert!(Encoder::<f64>::new(c.clone()).is_err());
        c.heads = 2;
        c.ffn_dim = 0;
        assert!(Encoder::<f64>::new(c).is_err());
    }

    #[test]
    fn deterministic_and_pad_invariant() {
        let enc = tiny();
        let a = input(&[0, 11, 12, 1], 10);
        let v1 = enc.encode(&a).unwrap();
        assert_eq!(v1, enc.encode(&a).unwrap());
        assert_eq!(v1, tiny().encode(&a).unwrap());
        let mut b = a.clone();
        b.ids[6] = 17;
        b.ids[9] = 5;
        assert_eq!(v1, enc.encode(&b).unwrap());
        assert_eq!(v1.len(), 8);
    }

    #[test]
    fn cls_only_input_is_finite() {
        let enc = tiny();
        let v = enc.encode(&input(&[0], 10)).unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn out_of_range_token_is_an_error() {
        let enc = tiny();
        assert!(matches!(
            enc.encode(&input(&[0, 25], 10)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(enc.encode(&input(&[0, 1], 12)).is_ok());
        assert!(enc.encode(&input(&[0; 11], 12)).is_err());
    }

    #[test]
    fn f32_and_f64_agree_loosely() {
        let cfg = tiny().config().clone();
        let e32 = Encoder::<f32>::new(cfg).unwrap();
        let x = input(&[0, 4, 9, 1], 10);
        let a = tiny().encode(&x).unwrap();
        let b = e32.encode(&x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - *q as f64).abs() < 1e-4);
        }
    }
}
