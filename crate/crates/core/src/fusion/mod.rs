//! Composite-feature fusion: aggregation strategies, classification heads
//! and the trained model that ties them together.

pub mod aggregate;
pub mod head;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use aggregate::{AggregationConfig, AggregationKind, Aggregator, CompactBilinear};
pub use head::{FusionHead, HeadCache, HeadConfig, HeadInput, HeadKind};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Checkpoint, Matrix};

/// Head plus the aggregation it was trained with.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub head: FusionHead,
    pub aggregator: Aggregator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpec {
    head: HeadConfig,
    aggregation: AggregationConfig,
}

impl FusionModel {
    /// `feature_dim` is the raw clip feature width; the head is sized for the
    /// aggregator's output.
    pub fn new(
        mut head: HeadConfig,
        aggregation: AggregationConfig,
        feature_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let aggregator = Aggregator::new(aggregation, feature_dim)?;
        if head.kind == HeadKind::Ca && aggregator.config().kind == AggregationKind::CountSketch {
            return Err(Error::Config(
                "the cross-attention head fuses raw pairs; it cannot follow a sketch".into(),
            ));
        }
        head.input_dim = aggregator.output_dim();
        Ok(Self {
            head: FusionHead::new(head, seed)?,
            aggregator,
        })
    }

    /// Training-time logits for a set of member features. Non-CA heads see
    /// the aggregated feature; CA cross-attends the first member against
    /// the second, or against the aggregate of the rest when k > 2.
    pub fn forward_members<R: rand::Rng + ?Sized>(
        &self,
        members: &[&Matrix],
        rng: &mut R,
    ) -> Result<(Matrix, HeadCache)> {
        match (self.head.config().kind, members) {
            (HeadKind::Ca, [a, b]) => self.head.forward(HeadInput::Pair(a, b)),
            (HeadKind::Ca, [a, rest @ ..]) if !rest.is_empty() => {
                let context = self.aggregator.aggregate(rest, rng)?;
                self.head.forward(HeadInput::Pair(a, &context))
            }
            (HeadKind::Ca, _) => Err(Error::Invalid(
                "cross-attention head needs at least 2 features".into(),
            )),
            _ => {
                let fused = self.aggregator.aggregate(members, rng)?;
                self.head.forward(HeadInput::Single(&fused))
            }
        }
    }

    /// Logits for a real clip, fed through the two-input interface as
    /// `(x, x)`.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        match self.head.config().kind {
            HeadKind::Ca => self.head.logits(HeadInput::Pair(x, x)),
            _ => {
                let fused = self.aggregator.replicate(x)?;
                self.head.logits(HeadInput::Single(&fused))
            }
        }
    }

    /// Per-class sigmoid scores for one clip.
    pub fn infer(&self, x: &Matrix) -> Result<Vec<f64>> {
        let logits = self.logits(x)?.ensure_finite("infer")?;
        Ok(logits.data().iter().map(|&z| sigmoid(z)).collect())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let spec = ModelSpec {
            head: self.head.config().clone(),
            aggregation: self.aggregator.config().clone(),
        };
        Ok(Checkpoint {
            config: serde_json::to_string(&spec)?,
            tensors: self.head.named_tensors(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, feature_dim: usize) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(&ckpt.config)
            .map_err(|e| Error::Checkpoint(format!("bad config block: {e}")))?;
        let width = match spec.aggregation.kind {
            AggregationKind::CountSketch => spec.aggregation.sketch_dim,
            _ => feature_dim,
        };
        if spec.head.input_dim != width {
            return Err(Error::Checkpoint(format!(
                "head expects width {}, aggregation yields {width}",
                spec.head.input_dim
            )));
        }
        // the head first: its tensors bound every size the aggregator allocates
        let head = FusionHead::from_tensors(spec.head, &ckpt.tensors)?;
        Ok(Self {
            head,
            aggregator: Aggregator::new(spec.aggregation, feature_dim)?,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_checkpoint()?.encode())
    }

    pub fn from_bytes(bytes: &[u8], feature_dim: usize) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::decode(bytes)?, feature_dim)
    }

    /// Writes the checkpoint and returns its sha256 hex digest.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, &bytes)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(path: &Path, feature_dim: usize) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_owned()),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes, feature_dim)
    }
}

/// Late fusion across camera views: the mean of per-view score vectors.
pub fn fuse_views(scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = scores.first() else {
        return Err(Error::Invalid("no views to fuse".into()));
    };
    if scores.iter().any(|s| s.len() != first.len()) {
        return Err(Error::shape("fuse_views", "views disagree on class count"));
    }
    let n = scores.len() as f64;
    Ok((0..first.len())
        .map(|c| scores.iter().map(|s| s[c]).sum::<f64>() / n)
        .collect())
}
