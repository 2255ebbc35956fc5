//! FC, self-attention and cross-attention heads.
//!
//! Attention blocks follow the post-norm residual form
//! `X' = LN[X_q + softmax(X_q X_kvᵀ/√D) X_kv]`, `Y = LN[X' + FFN(X')]`.
//! By default the raw features act as queries, keys and values; learned
//! projections are opt-in. Every head ends in the FC tail: temporal mean
//! pooling, then `linear → ReLU → linear` to class logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::attention::{scaled_dot_attention, scaled_dot_attention_backward, AttentionCache};
use crate::nn::layers::{relu, relu_backward, FeedForwardCache, LayerNormCache};
use crate::nn::{FeedForward, LayerNorm, Linear, Matrix, Param, PositionalEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Fc,
    Sa,
    Ca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Attention blocks; ignored by FC. For CA the first block is cross,
    /// the rest self.
    #[serde(default = "one")]
    pub depth: usize,
    #[serde(default = "yes")]
    pub pos_emb: bool,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    pub frames: usize,
    /// Width of the features entering the head.
    pub input_dim: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    #[serde(default)]
    pub projections: bool,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_hidden() -> usize {
    512
}
fn default_classes() -> usize {
    14
}
fn default_ffn_mult() -> usize {
    4
}

impl HeadConfig {
    pub fn new(kind: HeadKind, frames: usize, input_dim: usize) -> Self {
        Self {
            kind,
            depth: 1,
            pos_emb: true,
            hidden: default_hidden(),
            n_classes: default_classes(),
            frames,
            input_dim,
            ffn_mult: default_ffn_mult(),
            projections: false,
        }
    }

    /// Parses variant names such as `FC`, `SA`, `SAx2`, `CA`, `CA+SA`,
    /// `CA+SAx2` into `(kind, depth)`.
    pub fn parse_variant(name: &str) -> Result<(HeadKind, usize)> {
        let upper = name.trim().to_ascii_uppercase();
        let bad = || Error::Config(format!("unknown head variant {name:?}"));
        let sa_depth = |s: &str| -> Result<usize> {
            match s {
                "SA" => Ok(1),
                _ => s
                    .strip_prefix("SAX")
                    .and_then(|n| n.parse().ok())
                    .filter(|&n: &usize| n >= 1)
                    .ok_or_else(bad),
            }
        };
        match upper.as_str() {
            "FC" => Ok((HeadKind::Fc, 1)),
            "CA" => Ok((HeadKind::Ca, 1)),
            s if s.starts_with("CA+") => Ok((HeadKind::Ca, 1 + sa_depth(&s[3..])?)),
            s => Ok((HeadKind::Sa, sa_depth(s)?)),
        }
    }

    pub fn variant_name(&self) -> String {
        match (self.kind, self.depth) {
            (HeadKind::Fc, _) => "FC".into(),
            (HeadKind::Sa, 1) => "SA".into(),
            (HeadKind::Sa, d) => format!("SAx{d}"),
            (HeadKind::Ca, 1) => "CA".into(),
            (HeadKind::Ca, 2) => "CA+SA".into(),
            (HeadKind::Ca, d) => format!("CA+SAx{}", d - 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("head depth must be >= 1".into()));
        }
        if self.frames == 0 || self.input_dim < 2 || self.hidden == 0 || self.n_classes == 0 {
            return Err(Error::Config(format!("degenerate head shape {self:?}")));
        }
        if self.ffn_mult == 0 {
            return Err(Error::Config("ffn_mult must be >= 1".into()));
        }
        Ok(())
    }

    /// Scalar parameters this config allocates; `None` on overflow. Lets
    /// decoders reject a config before allocating it.
    pub fn param_count(&self) -> Option<usize> {
        let d = self.input_dim;
        let inner = d.checked_mul(self.ffn_mult)?;
        let pos = if self.kind != HeadKind::Fc && self.pos_emb { self.frames.checked_mul(d)? } else { 0 };
        let proj = if self.projections { d.checked_mul(d)?.checked_mul(3)? } else { 0 };
        let ffn = d.checked_mul(inner)?.checked_mul(2)?.checked_add(inner)?.checked_add(d)?;
        let block = proj.checked_add(ffn)?.checked_add(d.checked_mul(4)?)?;
        let fc1 = d.checked_add(1)?.checked_mul(self.hidden)?;
        let fc2 = self.hidden.checked_add(1)?.checked_mul(self.n_classes)?;
        block
            .checked_mul(self.n_blocks())?
            .checked_add(pos)?
            .checked_add(fc1)?
            .checked_add(fc2)
    }

    fn n_blocks(&self) -> usize {
        match self.kind {
            HeadKind::Fc => 0,
            _ => self.depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Projections {
    query: Param,
    key: Param,
    value: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    proj: Option<Projections>,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: AttentionCache,
    ln1: LayerNormCache,
    h: Matrix,
    ffn: FeedForwardCache,
    ln2: LayerNormCache,
}

impl AttentionBlock {
    fn new(name: &str, dim: usize, inner: usize, projections: bool, rng: &mut ChaCha8Rng) -> Self {
        let proj = projections.then(|| Projections {
            query: Param::uniform(format!("{name}.proj.query"), dim, dim, dim, rng),
            key: Param::uniform(format!("{name}.proj.key"), dim, dim, dim, rng),
            value: Param::uniform(format!("{name}.proj.value"), dim, dim, dim, rng),
        });
        Self {
            proj,
            ln1: LayerNorm::new(&format!("{name}.ln1"), dim),
            ffn: FeedForward::new(&format!("{name}.ffn"), dim, inner, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), dim),
        }
    }

    /// `queries` attends over `context`; pass the same matrix twice for
    /// self-attention.
    pub fn forward(&self, queries: &Matrix, context: &Matrix) -> Result<(Matrix, BlockCache)> {
        let (q, k, v) = match &self.proj {
            Some(p) => (
                queries.matmul(&p.query.value)?,
                context.matmul(&p.key.value)?,
                context.matmul(&p.value.value)?,
            ),
            None => (queries.clone(), context.clone(), context.clone()),
        };
        let (attended, attn) = scaled_dot_attention(&q, &k, &v)?;
        let (h, ln1) = self.ln1.forward(&queries.add(&attended)?)?;
        let (f, ffn) = self.ffn.forward(&h)?;
        let (y, ln2) = self.ln2.forward(&h.add(&f)?)?;
        Ok((
            y,
            BlockCache {
                q,
                k,
                v,
                attn,
                ln1,
                h,
                ffn,
                ln2,
            },
        ))
    }

    /// Returns gradients for `(queries, context)`.
    fn backward(
        &mut self,
        queries: &Matrix,
        context: &Matrix,
        cache: &BlockCache,
        dy: &Matrix,
    ) -> Result<(Matrix, Matrix)> {
        let dr2 = self.ln2.backward(&cache.ln2, dy)?;
        let mut dh = self.ffn.backward(&cache.h, &cache.ffn, &dr2)?;
        dh.add_assign(&dr2)?;
        let dr1 = self.ln1.backward(&cache.ln1, &dh)?;
        let g = scaled_dot_attention_backward(&cache.attn, &cache.q, &cache.k, &cache.v, &dr1)?;
        let (dq_in, dk_in, dv_in) = match &mut self.proj {
            Some(p) => {
                p.query.grad.add_assign(&queries.t_matmul(&g.dq)?)?;
                p.key.grad.add_assign(&context.t_matmul(&g.dk)?)?;
                p.value.grad.add_assign(&context.t_matmul(&g.dv)?)?;
                (
                    g.dq.matmul_t(&p.query.value)?,
                    g.dk.matmul_t(&p.key.value)?,
                    g.dv.matmul_t(&p.value.value)?,
                )
            }
            None => (g.dq, g.dk, g.dv),
        };
        let dqueries = dr1.add(&dq_in)?;
        let dcontext = dk_in.add(&dv_in)?;
        Ok((dqueries, dcontext))
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        if let Some(p) = &self.proj {
            out.extend([&p.query, &p.key, &p.value]);
        }
        out.extend(self.ln1.params());
        out.extend(self.ffn.params());
        out.extend(self.ln2.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.proj {
            out.extend([&mut p.query, &mut p.key, &mut p.value]);
        }
        out.extend(self.ln1.params_mut());
        out.extend(self.ffn.params_mut());
        out.extend(self.ln2.params_mut());
        out
    }
}

/// What a head consumes: one (already aggregated) feature, or the two
/// features a cross-attention head fuses itself.
#[derive(Debug, Clone, Copy)]
pub enum HeadInput<'a> {
    Single(&'a Matrix),
    Pair(&'a Matrix, &'a Matrix),
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    /// Inputs after positional embedding.
    embedded: Vec<Matrix>,
    /// Input to each block (queries side) and its cache.
    block_inputs: Vec<Matrix>,
    blocks: Vec<BlockCache>,
    pooled: Matrix,
    pre_hidden: Matrix,
    hidden: Matrix,
    frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    config: HeadConfig,
    pos: Option<PositionalEmbedding>,
    blocks: Vec<AttentionBlock>,
    fc1: Linear,
    fc2: Linear,
}

impl FusionHead {
    pub fn new(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = config.input_dim;
        let pos = (config.kind != HeadKind::Fc && config.pos_emb)
            .then(|| PositionalEmbedding::new("pos", config.frames, dim, true));
        let blocks = (0..config.n_blocks())
            .map(|i| {
                AttentionBlock::new(
                    &format!("block{i}"),
                    dim,
                    dim * config.ffn_mult,
                    config.projections,
                    &mut rng,
                )
            })
            .collect();
        let fc1 = Linear::new("fc1", dim, config.hidden, &mut rng);
        let fc2 = Linear::new("fc2", config.hidden, config.n_classes, &mut rng);
        Ok(Self {
            config,
            pos,
            blocks,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[AttentionBlock] {
        &self.blocks
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        let want = (self.config.frames, self.config.input_dim);
        // FC pools over time, so any clip length works there.
        let ok = match self.config.kind {
            HeadKind::Fc => x.cols() == want.1 && x.rows() >= 1,
            _ => x.shape() == want,
        };
        if !ok {
            return Err(Error::shape(
                "fusion_head",
                format!("input {:?}, head expects {:?}", x.shape(), want),
            ));
        }
        Ok(())
    }

    fn embed(&self, x: &Matrix) -> Result<Matrix> {
        match &self.pos {
            Some(p) => p.forward(x),
            None => Ok(x.clone()),
        }
    }

    pub fn forward(&self, input: HeadInput<'_>) -> Result<(Matrix, HeadCache)> {
        let embedded: Vec<Matrix> = match input {
            HeadInput::Single(x) => {
                self.check_input(x)?;
                vec![self.embed(x)?]
            }
            HeadInput::Pair(a, b) => {
                if self.config.kind != HeadKind::Ca {
                    return Err(Error::Invalid(
                        "only the cross-attention head takes a feature pair".into(),
                    ));
                }
                self.check_input(a)?;
                self.check_input(b)?;
                vec![self.embed(a)?, self.embed(b)?]
            }
        };
        if self.config.kind == HeadKind::Ca && embedded.len() != 2 {
            return Err(Error::Invalid("cross-attention head needs a feature pair".into()));
        }

        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut current = embedded[0].clone();
        for (i, block) in self.blocks.iter().enumerate() {
            let context = if i == 0 && embedded.len() == 2 {
                &embedded[1]
            } else {
                &current
            };
            let (y, cache) = block.forward(&current, context)?;
            block_inputs.push(current);
            caches.push(cache);
            current = y;
        }

        let frames = current.rows();
        let pooled = current.mean_rows();
        let pre_hidden = self.fc1.forward(&pooled)?;
        let hidden = relu(&pre_hidden);
        let logits = self.fc2.forward(&hidden)?;
        Ok((
            logits,
            HeadCache {
                embedded,
                block_inputs,
                blocks: caches,
                pooled,
                pre_hidden,
                hidden,
                frames,
            },
        ))
    }

    pub fn logits(&self, input: HeadInput<'_>) -> Result<Matrix> {
        Ok(self.forward(input)?.0)
    }

    /// Accumulates parameter gradients; returns one gradient per input
    /// feature.
    pub fn backward(&mut self, cache: &HeadCache, dlogits: &Matrix) -> Result<Vec<Matrix>> {
        let dhidden = self.fc2.backward(&cache.hidden, dlogits)?;
        let dpre = relu_backward(&cache.pre_hidden, &dhidden);
        let dpooled = self.fc1.backward(&cache.pooled, &dpre)?;
        let scale = 1.0 / cache.frames as f64;
        let row: Vec<f64> = dpooled.data().iter().map(|v| v * scale).collect();
        let mut dcurrent =
            Matrix::from_vec(cache.frames, row.len(), row.repeat(cache.frames))?;

        let pair = cache.embedded.len() == 2;
        let mut dcontext_first = None;
        for i in (0..self.blocks.len()).rev() {
            let queries = &cache.block_inputs[i];
            let cross = i == 0 && pair;
            let context = if cross { &cache.embedded[1] } else { queries };
            let (dq, dctx) = self.blocks[i].backward(queries, context, &cache.blocks[i], &dcurrent)?;
            if cross {
                dcontext_first = Some(dctx);
                dcurrent = dq;
            } else {
                dcurrent = dq.add(&dctx)?;
            }
        }

        let mut grads = vec![dcurrent];
        if pair {
            grads.push(dcontext_first.expect("cross block present"));
        }
        if let Some(p) = &mut self.pos {
            for g in &grads {
                p.backward(g)?;
            }
        }
        Ok(grads)
    }

    /// Parameters in a fixed order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        if let Some(p) = &self.pos {
            out.push(&p.table);
        }
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.fc1.params());
        out.extend(self.fc2.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.pos {
            out.push(&mut p.table);
        }
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.fc1.params_mut());
        out.extend(self.fc2.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, Matrix)> {
        self.params()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Rebuilds a head from its config and a full set of named tensors.
    pub fn from_tensors(config: HeadConfig, tensors: &[(String, Matrix)]) -> Result<Self> {
        config.validate()?;
        let supplied: usize = tensors.iter().map(|(_, m)| m.data().len()).sum();
        if config.param_count() != Some(supplied) {
            return Err(Error::Checkpoint(format!(
                "config needs {:?} parameters, tensors hold {supplied}",
                config.param_count()
            )));
        }
        let mut head = Self::new(config, 0)?;
        let expected = head.params().len();
        if tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} tensors, found {}",
                tensors.len()
            )));
        }
        for p in head.params_mut() {
            let (_, value) = tensors
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {:?}", p.name)))?;
            if value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} has shape {:?}, expected {:?}",
                    p.name,
                    value.shape(),
                    p.value.shape()
                )));
            }
            if !value.is_finite() {
                return Err(Error::Checkpoint(format!("tensor {:?} is not finite", p.name)));
            }
            p.value = value.clone();
        }
        Ok(head)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for name in ["FC", "SA", "SAx2", "SAx3", "CA", "CA+SA", "CA+SAx2"] {
            let (kind, depth) = HeadConfig::parse_variant(name).unwrap();
            let cfg = HeadConfig { kind, depth, ..HeadConfig::new(kind, 8, 16) };
            assert_eq!(cfg.variant_name(), name);
        }
        assert_eq!(HeadConfig::parse_variant("ca+sax2").unwrap(), (HeadKind::Ca, 3));
        assert!(HeadConfig::parse_variant("SAx0").is_err());
        assert!(HeadConfig::parse_variant("MLP").is_err());
    }

    #[test]
    fn parameter_counts() {
        let fc = FusionHead::new(HeadConfig::new(HeadKind::Fc, 8, 16), 1).unwrap();
        assert_eq!(fc.params().len(), 4);
        let mut cfg = HeadConfig::new(HeadKind::Sa, 8, 16);
        cfg.depth = 2;
        let sa = FusionHead::new(cfg.clone(), 1).unwrap();
        assert_eq!(sa.params().len(), 1 + 2 * 8 + 4);
        cfg.pos_emb = false;
        cfg.projections = true;
        let sa = FusionHead::new(cfg, 1).unwrap();
        assert_eq!(sa.params().len(), 2 * 11 + 4);
    }

    #[test]
    fn param_count_matches_allocation() {
        for kind in [HeadKind::Fc, HeadKind::Sa, HeadKind::Ca] {
            for (depth, pos_emb, projections) in [(1, true, false), (3, false, true), (2, true, true)] {
                let cfg = HeadConfig { depth, pos_emb, projections, hidden: 7, ..HeadConfig::new(kind, 5, 6) };
                let head = FusionHead::new(cfg.clone(), 1).unwrap();
                let real: usize = head.params().iter().map(|p| p.value.data().len()).sum();
                assert_eq!(cfg.param_count(), Some(real), "{cfg:?}");
            }
        }
        let huge = HeadConfig { hidden: usize::MAX / 2, ..HeadConfig::new(HeadKind::Fc, 8, 16) };
        assert_eq!(huge.param_count(), None);
        assert!(FusionHead::from_tensors(huge, &[]).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = HeadConfig::new(HeadKind::Sa, 8, 16);
        cfg.depth = 0;
        assert!(FusionHead::new(cfg, 1).is_err());
        assert!(FusionHead::new(HeadConfig::new(HeadKind::Fc, 8, 1), 1).is_err());
    }

    #[test]
    fn pair_input_only_for_cross_attention() {
        let x = Matrix::zeros(8, 16);
        let sa = FusionHead::new(HeadConfig::new(HeadKind::Sa, 8, 16), 1).unwrap();
        assert!(sa.forward(HeadInput::Pair(&x, &x)).is_err());
        let ca = FusionHead::new(HeadConfig::new(HeadKind::Ca, 8, 16), 1).unwrap();
        assert!(ca.forward(HeadInput::Single(&x)).is_err());
        assert!(ca.forward(HeadInput::Pair(&x, &Matrix::zeros(8, 15))).is_err());
        assert!(sa.forward(HeadInput::Single(&Matrix::zeros(7, 16))).is_err());
    }

    #[test]
    fn tensors_round_trip() {
        let mut cfg = HeadConfig::new(HeadKind::Ca, 4, 8);
        cfg.depth = 2;
        let head = FusionHead::new(cfg.clone(), 3).unwrap();
        let back = FusionHead::from_tensors(cfg.clone(), &head.named_tensors()).unwrap();
        assert_eq!(back, head);
        let mut missing = head.named_tensors();
        missing.pop();
        assert!(FusionHead::from_tensors(cfg, &missing).is_err());
    }
}
