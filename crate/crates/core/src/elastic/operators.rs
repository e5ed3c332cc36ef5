use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tinynn::LayerSpec;

/// The fixed compression operator pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperatorKind {
    BaselineConv,
    DepthwiseSeparable,
    GroupedShuffle,
    LowRankDecomposed,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 4] = [
        OperatorKind::BaselineConv,
        OperatorKind::DepthwiseSeparable,
        OperatorKind::GroupedShuffle,
        OperatorKind::LowRankDecomposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::BaselineConv => "baseline_conv",
            OperatorKind::DepthwiseSeparable => "depthwise_separable",
            OperatorKind::GroupedShuffle => "grouped_shuffle",
            OperatorKind::LowRankDecomposed => "lowrank_decomposed",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown operator `{s}`")))
    }
}

/// Geometry of a swappable position in the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotShape {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

/// An operator kind plus its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompressionOperator {
    pub kind: OperatorKind,
    /// Group count for `GroupedShuffle`.
    pub groups: usize,
    /// Explicit rank for `LowRankDecomposed`; `None` means ⌈min(d_in, d_out)/4⌉.
    pub rank: Option<usize>,
}

impl From<OperatorKind> for CompressionOperator {
    fn from(kind: OperatorKind) -> Self {
        Self {
            kind,
            groups: 2,
            rank: None,
        }
    }
}

/// Default low-rank width for a `d_in × d_out` linear map.
pub fn default_rank(d_in: usize, d_out: usize) -> usize {
    d_in.min(d_out).div_ceil(4).max(1)
}

impl CompressionOperator {
    /// Layers implementing this operator at a slot of the given shape.
    pub fn realize(&self, slot: usize, shape: &SlotShape) -> Result<Vec<LayerSpec>> {
        let incompatible = |reason: &str| Error::IncompatibleOperator {
            slot,
            operator: self.kind.name().into(),
            reason: reason.into(),
        };
        let specs = match (*shape, self.kind) {
            (
                SlotShape::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                },
                kind,
            ) => match kind {
                OperatorKind::BaselineConv => vec![LayerSpec::conv(in_channels, out_channels, kernel, stride)],
                OperatorKind::DepthwiseSeparable => vec![LayerSpec::DepthwiseSeparable {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                }],
                OperatorKind::GroupedShuffle => vec![LayerSpec::GroupedShuffle {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    groups: self.groups,
                }],
                OperatorKind::LowRankDecomposed => {
                    let rank = self
                        .rank
                        .unwrap_or_else(|| default_rank(in_channels * kernel * kernel, out_channels));
                    vec![
                        LayerSpec::Conv2d {
                            in_channels,
                            out_channels: rank,
                            kernel,
                            stride,
                            padding: kernel / 2,
                            groups: 1,
                            bias: false,
                        },
                        LayerSpec::Conv2d {
                            in_channels: rank,
                            out_channels,
                            kernel: 1,
                            stride: 1,
                            padding: 0,
                            groups: 1,
                            bias: true,
                        },
                    ]
                }
            },
            (
                SlotShape::Dense {
                    in_features,
                    out_features,
                },
                kind,
            ) => match kind {
                OperatorKind::BaselineConv => vec![LayerSpec::fc(in_features, out_features)],
                OperatorKind::LowRankDecomposed => vec![LayerSpec::LowRankFc {
                    in_features,
                    out_features,
                    rank: self.rank.unwrap_or_else(|| default_rank(in_features, out_features)),
                }],
                _ => return Err(incompatible("spatial operator on a dense slot")),
            },
        };
        for s in &specs {
            s.validate().map_err(|e| incompatible(&e.to_string()))?;
        }
        Ok(specs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynn::Sequential;

    fn params(op: OperatorKind, shape: &SlotShape) -> usize {
        let specs = CompressionOperator::from(op).realize(1, shape).unwrap();
        Sequential::from_specs("t", &specs, 0).unwrap().num_params()
    }

    const CONV: SlotShape = SlotShape::Conv {
        in_channels: 8,
        out_channels: 16,
        kernel: 3,
        stride: 1,
    };

    #[test]
    fn depthwise_separable_saves_params() {
        assert_eq!(params(OperatorKind::BaselineConv, &CONV), 1168);
        // 72 depthwise + 128 pointwise + 16 pointwise bias
        assert_eq!(params(OperatorKind::DepthwiseSeparable, &CONV), 216);
        // 16 * 4 * 9 + 16
        assert_eq!(params(OperatorKind::GroupedShuffle, &CONV), 592);
        // rank = ceil(min(72, 16) / 4) = 4: 72*4 + 4*16 + 16
        assert_eq!(params(OperatorKind::LowRankDecomposed, &CONV), 368);
    }

    #[test]
    fn lowrank_dense_count() {
        let shape = SlotShape::Dense {
            in_features: 40,
            out_features: 12,
        };
        let op = CompressionOperator {
            kind: OperatorKind::LowRankDecomposed,
            groups: 2,
            rank: Some(3),
        };
        let specs = op.realize(1, &shape).unwrap();
        let seq = Sequential::from_specs("t", &specs, 0).unwrap();
        let weights: usize = seq
            .params()
            .filter(|p| p.name.ends_with("weight"))
            .map(|p| p.numel())
            .sum();
        assert_eq!(weights, 40 * 3 + 3 * 12);
        assert!(weights < 40 * 12);
    }

    #[test]
    fn spatial_ops_rejected_on_dense_slot() {
        let shape = SlotShape::Dense {
            in_features: 4,
            out_features: 4,
        };
        assert!(CompressionOperator::from(OperatorKind::DepthwiseSeparable)
            .realize(2, &shape)
            .is_err());
        let odd = SlotShape::Conv {
            in_channels: 3,
            out_channels: 3,
            kernel: 3,
            stride: 1,
        };
        assert!(CompressionOperator::from(OperatorKind::GroupedShuffle).realize(1, &odd).is_err());
    }

    #[test]
    fn names_round_trip() {
        for k in OperatorKind::ALL {
            assert_eq!(k.name().parse::<OperatorKind>().unwrap(), k);
        }
        assert!("nas".parse::<OperatorKind>().is_err());
    }
}
