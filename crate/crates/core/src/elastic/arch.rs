//! Architecture description files.
//!
//! ```text
//! [network]
//! input = 1x16x16
//! num_classes = 4
//! exit_channels = 8
//! exit_hidden = 8
//! dropout = 0.5
//! operators = baseline_conv, depthwise_separable, grouped_shuffle, lowrank_decomposed
//!
//! [segment 1]
//! layers = conv:8:3:1, relu
//! slot = yes
//! ```
//!
//! Layer tokens: `conv:OUT:K:S`, `relu`. A `slot=yes` segment appends a
//! swappable `3×3` stride-1 block (`slot_out` channels, default unchanged)
//! followed by a relu.

use std::path::Path;

use super::operators::OperatorKind;
use crate::error::{Error, Result};
use crate::kv;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerToken {
    Conv { out: usize, kernel: usize, stride: usize },
    Relu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSpec {
    pub index: usize,
    pub layers: Vec<LayerToken>,
    pub slot: bool,
    pub slot_out: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    /// Per-sample input shape `[C, H, W]`.
    pub input: [usize; 3],
    pub num_classes: usize,
    pub exit_channels: usize,
    /// Bottleneck width of the exit classifier.
    pub exit_hidden: usize,
    pub dropout: f32,
    pub operators: Vec<OperatorKind>,
    pub segments: Vec<SegmentSpec>,
}

pub const MAX_EXIT_HIDDEN: usize = 16;

impl ArchSpec {
    /// The desk-scale 4-segment network used throughout the tests.
    pub fn toy() -> Self {
        Self::toy_with_segments(4)
    }

    /// First `n` (1..=4) segments of the toy network.
    pub fn toy_with_segments(n: usize) -> Self {
        let widths = [(8, 1), (16, 2), (24, 2), (32, 2)];
        let segments = widths
            .iter()
            .take(n.clamp(1, 4))
            .enumerate()
            .map(|(i, &(out, stride))| SegmentSpec {
                index: i + 1,
                layers: vec![
                    LayerToken::Conv {
                        out,
                        kernel: 3,
                        stride,
                    },
                    LayerToken::Relu,
                ],
                slot: true,
                slot_out: None,
            })
            .collect();
        Self {
            input: [1, 16, 16],
            num_classes: 4,
            exit_channels: 8,
            exit_hidden: 8,
            dropout: 0.5,
            operators: OperatorKind::ALL.to_vec(),
            segments,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let sections = kv::parse(text)?;
        let mut spec = ArchSpec {
            segments: Vec::new(),
            ..Self::toy()
        };
        let mut saw_network = false;
        for sec in &sections {
            if sec.name == "network" {
                saw_network = true;
                if let Some(e) = sec.get("input") {
                    spec.input = parse_input(&e.value).ok_or_else(|| {
                        Error::config(e.line, format!("input must be CxHxW, got `{}`", e.value))
                    })?;
                }
                spec.num_classes = sec.parse_or("num_classes", spec.num_classes)?;
                spec.exit_channels = sec.parse_or("exit_channels", spec.exit_channels)?;
                spec.exit_hidden = sec.parse_or("exit_hidden", spec.exit_hidden)?;
                spec.dropout = sec.parse_or("dropout", spec.dropout)?;
                if let Some(e) = sec.get("operators") {
                    spec.operators = e
                        .value
                        .split(',')
                        .map(|s| s.trim().parse::<OperatorKind>())
                        .collect::<Result<Vec<_>>>()
                        .map_err(|err| Error::config(e.line, err.to_string()))?;
                }
                if spec.num_classes < 2 {
                    return Err(Error::config(sec.line, "num_classes must be >= 2"));
                }
                if spec.exit_hidden == 0 || spec.exit_hidden > MAX_EXIT_HIDDEN {
                    return Err(Error::config(
                        sec.line,
                        format!("exit_hidden must be in 1..={MAX_EXIT_HIDDEN}"),
                    ));
                }
            } else if let Some(idx) = sec.name.strip_prefix("segment ") {
                let index: usize = idx
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(sec.line, format!("bad segment index `{idx}`")))?;
                if let Some(prev) = spec.segments.last() {
                    if index <= prev.index {
                        return Err(Error::config(
                            sec.line,
                            format!(
                                "exit positions must be strictly increasing: segment {index} after {}",
                                prev.index
                            ),
                        ));
                    }
                }
                let layers_entry = sec
                    .get("layers")
                    .ok_or_else(|| Error::config(sec.line, "segment without layers="))?;
                let layers = layers_entry
                    .value
                    .split(',')
                    .map(|t| parse_token(t.trim()).ok_or_else(|| Error::config(layers_entry.line, format!("bad layer token `{}`", t.trim()))))
                    .collect::<Result<Vec<_>>>()?;
                let slot = match sec.get("slot") {
                    None => false,
                    Some(e) => match e.value.as_str() {
                        "yes" | "true" => true,
                        "no" | "false" => false,
                        v => return Err(Error::config(e.line, format!("slot must be yes/no, got `{v}`"))),
                    },
                };
                spec.segments.push(SegmentSpec {
                    index,
                    layers,
                    slot,
                    slot_out: sec.parse("slot_out")?,
                });
            } else {
                let line = sec.entries.first().map_or(sec.line, |e| e.line);
                return Err(Error::config(line, format!("unknown section `{}`", sec.name)));
            }
        }
        if !saw_network && spec.segments.is_empty() {
            return Err(Error::config(1, "no [network] or [segment] sections"));
        }
        if spec.segments.is_empty() {
            return Err(Error::config(1, "architecture has no segments"));
        }
        if spec.operators.is_empty() {
            return Err(Error::config(1, "empty operator pool"));
        }
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("[network]\n");
        s.push_str(&format!(
            "input = {}x{}x{}\nnum_classes = {}\nexit_channels = {}\nexit_hidden = {}\ndropout = {}\n",
            self.input[0], self.input[1], self.input[2], self.num_classes, self.exit_channels, self.exit_hidden, self.dropout
        ));
        let ops: Vec<_> = self.operators.iter().map(|o| o.name()).collect();
        s.push_str(&format!("operators = {}\n", ops.join(", ")));
        for seg in &self.segments {
            s.push_str(&format!("\n[segment {}]\n", seg.index));
            let toks: Vec<String> = seg
                .layers
                .iter()
                .map(|t| match t {
                    LayerToken::Conv { out, kernel, stride } => format!("conv:{out}:{kernel}:{stride}"),
                    LayerToken::Relu => "relu".into(),
                })
                .collect();
            s.push_str(&format!("layers = {}\n", toks.join(", ")));
            s.push_str(&format!("slot = {}\n", if seg.slot { "yes" } else { "no" }));
            if let Some(o) = seg.slot_out {
                s.push_str(&format!("slot_out = {o}\n"));
            }
        }
        s
    }
}

fn parse_input(v: &str) -> Option<[usize; 3]> {
    let dims: Vec<usize> = v.split('x').map(|d| d.trim().parse().ok()).collect::<Option<_>>()?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Some([c, h, w]),
        _ => None,
    }
}

fn parse_token(t: &str) -> Option<LayerToken> {
    let parts: Vec<&str> = t.split(':').collect();
    match parts[..] {
        ["relu"] => Some(LayerToken::Relu),
        ["conv", out, k, s] => Some(LayerToken::Conv {
            out: out.parse().ok().filter(|v| *v > 0)?,
            kernel: k.parse().ok().filter(|v| *v > 0)?,
            stride: s.parse().ok().filter(|v| *v > 0)?,
        }),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_round_trips_through_text() {
        let spec = ArchSpec::toy();
        assert_eq!(ArchSpec::parse(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn duplicate_exit_position_rejected() {
        let text = "[network]\nnum_classes=4\n[segment 1]\nlayers=conv:4:3:1, relu\n[segment 1]\nlayers=relu\n";
        match ArchSpec::parse(text).unwrap_err() {
            Error::Config { line, msg } => {
                assert_eq!(line, 5);
                assert!(msg.contains("strictly increasing"), "{msg}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_token_reports_line() {
        let text = "[network]\n[segment 1]\nslot=yes\nlayers=conv:4:3\n";
        assert!(matches!(ArchSpec::parse(text), Err(Error::Config { line: 4, .. })));
        let text = "[network]\n[segment 1]\nlayers=relu\nslot=maybe\n";
        assert!(matches!(ArchSpec::parse(text), Err(Error::Config { line: 4, .. })));
    }

    #[test]
    fn operator_subset() {
        let text = "[network]\noperators=baseline_conv\n[segment 1]\nlayers=conv:4:3:1\nslot=yes\n";
        let spec = ArchSpec::parse(text).unwrap();
        assert_eq!(spec.operators, vec![OperatorKind::BaselineConv]);
        assert!(ArchSpec::parse("[network]\noperators=nas\n[segment 1]\nlayers=relu\n").is_err());
    }
}
