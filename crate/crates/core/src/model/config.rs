use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Shape of the asymmetric encoder/decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Tube extents (C_p, T_p, F_p).
    pub tube: [usize; 3],
    /// Extra data dimension D_i of the spectro tensor.
    pub depth_in: usize,
    pub enc_dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    pub mlp_ratio: usize,
    /// Token count N (one token per tube).
    pub tokens: usize,
}

impl ModelConfig {
    /// 2×16×16 tubes on a 12×96×96 grid, 384-wide 12-block encoder,
    /// 192-wide 4-block decoder.
    pub fn full_scale() -> Self {
        Self {
            tube: [2, 16, 16],
            depth_in: 1,
            enc_dim: 384,
            enc_depth: 12,
            enc_heads: 6,
            dec_dim: 192,
            dec_depth: 4,
            dec_heads: 3,
            mlp_ratio: 4,
            tokens: 216,
        }
    }

    /// Desk-scale model: 64-wide 4-block encoder, 32-wide 2-block decoder.
    pub fn tiny(tube: [usize; 3], depth_in: usize, tokens: usize) -> Self {
        Self {
            tube,
            depth_in,
            enc_dim: 64,
            enc_depth: 4,
            enc_heads: 4,
            dec_dim: 32,
            dec_depth: 2,
            dec_heads: 2,
            mlp_ratio: 4,
            tokens,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.tube.iter().all(|&e| e > 0) && self.depth_in > 0,
            Contract,
            "tube extents and D_i must be positive"
        );
        ensure!(self.tokens > 0, Contract, "token count must be positive");
        ensure!(
            self.enc_dim > 0 && self.enc_heads > 0 && self.enc_dim.is_multiple_of(self.enc_heads),
            Contract,
            "encoder width {} not divisible by {} heads",
            self.enc_dim,
            self.enc_heads
        );
        ensure!(
            self.dec_dim > 0 && self.dec_heads > 0 && self.dec_dim.is_multiple_of(self.dec_heads),
            Contract,
            "decoder width {} not divisible by {} heads",
            self.dec_dim,
            self.dec_heads
        );
        ensure!(self.mlp_ratio > 0, Contract, "mlp ratio must be positive");
        Ok(())
    }

    /// Flattened tube length P = C_p·T_p·F_p·D_i.
    pub fn patch_dim(&self) -> usize {
        self.tube.iter().product::<usize>() * self.depth_in
    }
}

/// Learnable scalars in one pre-norm block of width `d`.
pub fn block_param_count(d: usize, mlp_ratio: usize) -> usize {
    let norms = 2 * 2 * d;
    let attn = 4 * (d * d + d);
    let hidden = mlp_ratio * d;
    let mlp = d * hidden + hidden + hidden * d + d;
    norms + attn + mlp
}

/// Exact learnable-scalar count of [`super::MaeModel`] for `cfg`.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (p, n, de, dd) = (cfg.patch_dim(), cfg.tokens, cfg.enc_dim, cfg.dec_dim);
    let encoder = p * de + de + n * de + cfg.enc_depth * block_param_count(de, cfg.mlp_ratio) + 2 * de;
    let decoder = de * dd
        + dd
        + dd
        + n * dd
        + cfg.dec_depth * block_param_count(dd, cfg.mlp_ratio)
        + 2 * dd
        + dd * p
        + p;
    encoder + decoder
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_count() {
        let cfg = ModelConfig::full_scale();
        cfg.validate().unwrap();
        assert_eq!(block_param_count(384, 4), 1_774_464);
        assert_eq!(block_param_count(192, 4), 444_864);
        assert_eq!(param_count(&cfg), 23_568_512);
    }

    #[test]
    fn zero_depth_hand_count() {
        let cfg = ModelConfig {
            tube: [1, 2, 2],
            depth_in: 1,
            enc_dim: 4,
            enc_depth: 0,
            enc_heads: 1,
            dec_dim: 2,
            dec_depth: 0,
            dec_heads: 1,
            mlp_ratio: 4,
            tokens: 3,
        };
        // embed 4·4+4, pos 3·4, norm 8 | proj 4·2+2, mask 2, pos 3·2, norm 4, head 2·4+4
        assert_eq!(param_count(&cfg), 20 + 12 + 8 + 10 + 2 + 6 + 4 + 12);
    }

    #[test]
    fn linear_in_depth() {
        let mut cfg = ModelConfig::full_scale();
        let base = param_count(&cfg);
        cfg.enc_depth = 24;
        assert_eq!(param_count(&cfg) - base, 12 * block_param_count(384, 4));
    }

    #[test]
    fn head_divisibility() {
        let mut cfg = ModelConfig::full_scale();
        cfg.enc_heads = 5;
        assert!(cfg.validate().is_err());
    }
}
