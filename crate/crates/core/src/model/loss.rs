//! Pair embedding and the contrastive objectives.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{l2_normalize, l2_normalize_backward, NormMode, Normalized, Tensor, EPS_NORM};

/// `T(X_i, X_j) = (X_i - X_j) / ‖X_i - X_j‖`, unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEmbedding {
    normalized: Normalized,
}

impl PairEmbedding {
    pub fn vector(&self) -> &Tensor {
        &self.normalized.output
    }

    pub fn raw_norm(&self) -> f64 {
        self.normalized.norm
    }

    /// Chain a gradient w.r.t. the embedding back to the feature difference
    /// `X_i - X_j`.
    pub fn backward(&self, d_embedding: &Tensor) -> Result<Tensor> {
        l2_normalize_backward(&self.normalized, d_embedding)
    }
}

/// Strict mode fails on `‖X_i - X_j‖ < eps`; clamped mode divides by `eps`
/// instead (used during training).
pub fn embed_pair(xi: &Tensor, xj: &Tensor, mode: NormMode) -> Result<PairEmbedding> {
    let diff = xi.sub(xj)?;
    Ok(PairEmbedding {
        normalized: l2_normalize(&diff, mode, EPS_NORM)?,
    })
}

/// Euclidean distance between two pair embeddings.
pub fn embedding_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(a.sub(b)?.norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    Single { margin: f64 },
    Double { pos_margin: f64, neg_margin: f64 },
}

impl Default for LossMode {
    fn default() -> Self {
        LossMode::Double {
            pos_margin: 0.2,
            neg_margin: 0.4,
        }
    }
}

impl LossMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossMode::Single { margin } if margin > 0.0 && margin.is_finite() => Ok(()),
            LossMode::Double { pos_margin, neg_margin }
                if 0.0 <= pos_margin && pos_margin <= neg_margin && neg_margin.is_finite() =>
            {
                Ok(())
            }
            other => Err(Error::Config(format!(
                "margins must satisfy m > 0 or 0 <= m_P <= m_N, got {other}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossMode::Single { .. } => "single",
            LossMode::Double { .. } => "double",
        }
    }

    /// Loss as a function of the embedding distance.
    pub fn value(&self, distance: f64, positive: bool) -> f64 {
        let (pos_margin, neg_margin) = self.margins();
        if positive {
            (distance - pos_margin).max(0.0)
        } else {
            (neg_margin - distance).max(0.0)
        }
    }

    /// d(loss)/d(distance), taking 0 at the hinge kinks.
    pub fn slope(&self, distance: f64, positive: bool) -> f64 {
        let (pos_margin, neg_margin) = self.margins();
        if positive {
            if distance > pos_margin {
                1.0
            } else {
                0.0
            }
        } else if distance < neg_margin {
            -1.0
        } else {
            0.0
        }
    }

    /// Single margin is the double-margin loss with `m_P = 0`, `m_N = m`.
    fn margins(&self) -> (f64, f64) {
        match *self {
            LossMode::Single { margin } => (0.0, margin),
            LossMode::Double { pos_margin, neg_margin } => (pos_margin, neg_margin),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossMode::Single { margin } => write!(f, "single(m={margin})"),
            LossMode::Double { pos_margin, neg_margin } => {
                write!(f, "double(m_P={pos_margin}, m_N={neg_margin})")
            }
        }
    }
}

/// `y ‖x12 - x34‖ + (1 - y) max(m - ‖x12 - x34‖, 0)`
pub fn loss_single_margin(x12: &Tensor, x34: &Tensor, positive: bool, margin: f64) -> Result<f64> {
    let d = embedding_distance(x12, x34)?;
    Ok(if positive { d } else { (margin - d).max(0.0) })
}

/// `y max(‖x12 - x34‖ - m_P, 0) + (1 - y) max(m_N - ‖x12 - x34‖, 0)`
pub fn loss_double_margin(
    x12: &Tensor,
    x34: &Tensor,
    positive: bool,
    pos_margin: f64,
    neg_margin: f64,
) -> Result<f64> {
    LossMode::Double { pos_margin, neg_margin }.validate()?;
    let d = embedding_distance(x12, x34)?;
    Ok(if positive {
        (d - pos_margin).max(0.0)
    } else {
        (neg_margin - d).max(0.0)
    })
}

/// Loss of one embedded quadruple and its gradients w.r.t. both pair
/// embeddings. At zero distance the gradient is taken as 0.
pub fn contrastive_with_grad(
    loss: &LossMode,
    x12: &Tensor,
    x34: &Tensor,
    positive: bool,
) -> Result<(f64, f64, Tensor, Tensor)> {
    let diff = x12.sub(x34)?;
    let distance = diff.norm();
    let value = loss.value(distance, positive);
    let slope = loss.slope(distance, positive);
    let d12 = if distance > 0.0 && slope != 0.0 {
        diff.scale(slope / distance)
    } else {
        Tensor::zeros(diff.shape())
    };
    let d34 = d12.scale(-1.0);
    Ok((value, distance, d12, d34))
}
