//! Asymmetric masked autoencoder over tube tokens.
//!
//! The encoder sees only visible tubes: a linear tube embedding (the
//! kernel-equals-stride 3D convolution), a learnable positional row per tube
//! index, pre-norm transformer blocks and a final layer norm. The decoder
//! projects encoder outputs to its own width, fills every masked position
//! with one shared mask token, adds its own positional table, runs its blocks
//! and maps every token back to a flattened tube.
//!
//! Several samples are processed together by stacking their token rows;
//! attention never crosses sample boundaries.

mod config;

pub use config::{block_param_count, param_count, ModelConfig};

use crate::error::{ensure, Result};
use crate::numerics::{trunc_normal, NdArray, ParamId, ParamStore, Scalar, Segments, Tape, Var};
use crate::seed;
use crate::tubes::{apply_mask, MaskSpec};

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub ln1: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embed: Linear,
    pub pos: ParamId,
    pub blocks: Vec<Block>,
    pub norm: Norm,
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub embed: Linear,
    pub mask_token: ParamId,
    pub pos: ParamId,
    pub blocks: Vec<Block>,
    pub norm: Norm,
    pub head: Linear,
}

struct Init<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: seed::Rng,
}

impl<T: Scalar> Init<'_, T> {
    fn normal(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        let v = trunc_normal(&mut self.rng, shape, INIT_STD);
        self.store.add(name, v)
    }

    fn filled(&mut self, name: String, shape: &[usize], v: f64) -> Result<ParamId> {
        self.store.add(name, NdArray::full(shape, T::lit(v)))
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) -> Result<Linear> {
        Ok(Linear {
            w: self.normal(format!("{name}.w"), &[i, o])?,
            b: self.filled(format!("{name}.b"), &[o], 0.0)?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        Ok(Norm {
            g: self.filled(format!("{name}.g"), &[d], 1.0)?,
            b: self.filled(format!("{name}.b"), &[d], 0.0)?,
        })
    }

    fn block(&mut self, name: &str, d: usize, ratio: usize) -> Result<Block> {
        Ok(Block {
            ln1: self.norm(&format!("{name}.ln1"), d)?,
            q: self.linear(&format!("{name}.attn.q"), d, d)?,
            k: self.linear(&format!("{name}.attn.k"), d, d)?,
            v: self.linear(&format!("{name}.attn.v"), d, d)?,
            o: self.linear(&format!("{name}.attn.o"), d, d)?,
            ln2: self.norm(&format!("{name}.ln2"), d)?,
            fc1: self.linear(&format!("{name}.mlp.fc1"), d, ratio * d)?,
            fc2: self.linear(&format!("{name}.mlp.fc2"), ratio * d, d)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct MaeModel<T: Scalar = f32> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl<T: Scalar> MaeModel<T> {
    /// Freshly initialized model, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: seed::rng_for(seed, &[0x1417]),
        };
        let (p, n, de, dd, r) = (
            config.patch_dim(),
            config.tokens,
            config.enc_dim,
            config.dec_dim,
            config.mlp_ratio,
        );
        let encoder = EncoderParams {
            embed: init.linear("enc.embed", p, de)?,
            pos: init.normal("enc.pos".into(), &[n, de])?,
            blocks: (0..config.enc_depth)
                .map(|i| init.block(&format!("enc.blocks.{i}"), de, r))
                .collect::<Result<_>>()?,
            norm: init.norm("enc.norm", de)?,
        };
        let decoder = DecoderParams {
            embed: init.linear("dec.embed", de, dd)?,
            mask_token: init.normal("dec.mask_token".into(), &[dd])?,
            pos: init.normal("dec.pos".into(), &[n, dd])?,
            blocks: (0..config.dec_depth)
                .map(|i| init.block(&format!("dec.blocks.{i}"), dd, r))
                .collect::<Result<_>>()?,
            norm: init.norm("dec.norm", dd)?,
            head: init.linear("dec.head", dd, p)?,
        };
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> MaeModel<U> {
        MaeModel {
            config: self.config.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }

    /// Parameter ids of the encoder (embedding, positions, blocks, norm).
    pub fn encoder_ids(&self) -> Vec<ParamId> {
        let e = &self.encoder;
        let mut ids = vec![e.embed.w, e.embed.b, e.pos];
        for b in &e.blocks {
            ids.extend(block_ids(b));
        }
        ids.extend([e.norm.g, e.norm.b]);
        ids
    }

    fn linear(&self, t: &mut Tape<'_, T>, x: Var, l: &Linear) -> Result<Var> {
        let w = t.param(l.w);
        let b = t.param(l.b);
        let y = t.matmul(x, w)?;
        t.add_row(y, b)
    }

    fn norm(&self, t: &mut Tape<'_, T>, x: Var, n: &Norm) -> Result<Var> {
        let g = t.param(n.g);
        let b = t.param(n.b);
        t.layer_norm(x, g, b, T::lit(LN_EPS))
    }

    fn block(&self, t: &mut Tape<'_, T>, x: Var, b: &Block, heads: usize, seg: &Segments) -> Result<Var> {
        let h = self.norm(t, x, &b.ln1)?;
        let q = self.linear(t, h, &b.q)?;
        let k = self.linear(t, h, &b.k)?;
        let v = self.linear(t, h, &b.v)?;
        let a = t.attention(q, k, v, heads, seg)?;
        let a = self.linear(t, a, &b.o)?;
        let x = t.add(x, a)?;
        let h = self.norm(t, x, &b.ln2)?;
        let h = self.linear(t, h, &b.fc1)?;
        let h = t.gelu(h);
        let h = self.linear(t, h, &b.fc2)?;
        t.add(x, h)
    }

    /// Embeds `rows × P` tubes and adds the positional row of each tube's
    /// original index.
    pub fn tube_embed(&self, t: &mut Tape<'_, T>, tubes: Var, positions: &[usize]) -> Result<Var> {
        let shape = t.shape(tubes).to_vec();
        ensure!(
            shape.len() == 2 && shape[1] == self.config.patch_dim() && shape[0] == positions.len(),
            Contract,
            "tube_embed: got {:?} for {} positions, tube length {}",
            shape,
            positions.len(),
            self.config.patch_dim()
        );
        let n = self.config.tokens;
        if let Some(&p) = positions.iter().find(|&&p| p >= n) {
            return Err(crate::Error::Contract(format!(
                "tube position {p} out of range for {n} tokens"
            )));
        }
        let x = self.linear(t, tubes, &self.encoder.embed)?;
        let pos = t.param(self.encoder.pos);
        let pos = t.gather_rows(pos, positions)?;
        t.add(x, pos)
    }

    /// Encoder blocks and final norm over stacked token sequences.
    pub fn encode(&self, t: &mut Tape<'_, T>, tokens: Var, seg: &Segments) -> Result<Var> {
        let shape = t.shape(tokens).to_vec();
        ensure!(
            shape.len() == 2 && shape[1] == self.config.enc_dim && shape[0] == seg.total(),
            Contract,
            "encode: tokens {:?} for width {} and {} rows",
            shape,
            self.config.enc_dim,
            seg.total()
        );
        let mut x = tokens;
        for b in &self.encoder.blocks {
            x = self.block(t, x, b, self.config.enc_heads, seg)?;
        }
        let z = self.norm(t, x, &self.encoder.norm)?;
        debug_assert_eq!(t.shape(z), &shape[..]);
        Ok(z)
    }

    /// Predicts all N tubes of every sample; `z` stacks the encoder outputs
    /// of each sample's visible tubes in mask order.
    pub fn decode(&self, t: &mut Tape<'_, T>, z: Var, masks: &[&MaskSpec]) -> Result<Var> {
        let n = self.config.tokens;
        let rows = t.shape(z)[0];
        let visible: usize = masks.iter().map(|m| m.n_visible()).sum();
        ensure!(
            rows == visible,
            Contract,
            "decode: {rows} encoder rows for {visible} visible tubes"
        );
        ensure!(
            masks.iter().all(|m| m.total == n),
            Contract,
            "decode: mask size differs from token count {n}"
        );
        let y = self.linear(t, z, &self.decoder.embed)?;
        let token = t.param(self.decoder.mask_token);
        let mut parts = Vec::with_capacity(masks.len());
        let mut off = 0;
        for m in masks {
            let idx: Vec<usize> = (off..off + m.n_visible()).collect();
            off += m.n_visible();
            let src = t.gather_rows(y, &idx)?;
            parts.push(t.scatter_rows(src, token, &m.visible, n)?);
        }
        let mut x = if parts.len() == 1 { parts[0] } else { t.concat_rows(&parts)? };
        let pos = t.param(self.decoder.pos);
        let tiled: Vec<usize> = (0..masks.len()).flat_map(|_| 0..n).collect();
        let pos = t.gather_rows(pos, &tiled)?;
        x = t.add(x, pos)?;
        let seg = Segments::uniform(masks.len(), n)?;
        for b in &self.decoder.blocks {
            x = self.block(t, x, b, self.config.dec_heads, &seg)?;
        }
        let x = self.norm(t, x, &self.decoder.norm)?;
        let out = self.linear(t, x, &self.decoder.head)?;
        debug_assert_eq!(t.shape(out), &[masks.len() * n, self.config.patch_dim()]);
        Ok(out)
    }

    /// Masked forward pass over several samples. `tubes[i]` is the full
    /// `N × P` tube matrix of sample `i`. Returns stacked `(B·N) × P`
    /// predictions.
    pub fn forward_batch(&self, t: &mut Tape<'_, T>, tubes: &[&NdArray<f32>], masks: &[MaskSpec]) -> Result<Var> {
        ensure!(
            tubes.len() == masks.len() && !tubes.is_empty(),
            Contract,
            "{} samples with {} masks",
            tubes.len(),
            masks.len()
        );
        let (z, _) = self.encode_visible(t, tubes, masks)?;
        let refs: Vec<&MaskSpec> = masks.iter().collect();
        self.decode(t, z, &refs)
    }

    /// Encoder outputs for the visible tubes of every sample.
    pub fn encode_visible(
        &self,
        t: &mut Tape<'_, T>,
        tubes: &[&NdArray<f32>],
        masks: &[MaskSpec],
    ) -> Result<(Var, Segments)> {
        let p = self.config.patch_dim();
        let mut data = Vec::new();
        let mut positions = Vec::new();
        let mut lens = Vec::with_capacity(tubes.len());
        for (x, m) in tubes.iter().zip(masks) {
            ensure!(
                x.shape() == [self.config.tokens, p],
                Contract,
                "sample tubes {:?} do not match N={} × P={p}",
                x.shape(),
                self.config.tokens
            );
            ensure!(
                m.visible.windows(2).all(|w| w[0] < w[1]),
                Contract,
                "visible positions must be strictly increasing"
            );
            let vis = apply_mask(x, m)?;
            data.extend(vis.data().iter().map(|&v| T::lit(v as f64)));
            positions.extend_from_slice(&m.visible);
            lens.push(m.n_visible());
        }
        let seg = Segments::new(lens)?;
        let input = t.constant(NdArray::from_vec(&[positions.len(), p], data)?);
        let tokens = self.tube_embed(t, input, &positions)?;
        Ok((self.encode(t, tokens, &seg)?, seg))
    }
}

fn block_ids(b: &Block) -> Vec<ParamId> {
    let mut ids = Vec::with_capacity(16);
    for l in [b.q, b.k, b.v, b.o, b.fc1, b.fc2] {
        ids.extend([l.w, l.b]);
    }
    for n in [b.ln1, b.ln2] {
        ids.extend([n.g, n.b]);
    }
    ids
}
