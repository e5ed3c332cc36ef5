use std::collections::BTreeMap;

use super::arch::{ArchSpec, LayerToken};
use super::operators::{CompressionOperator, OperatorKind, SlotShape};
use super::variant::{self, VariantConfig};
use crate::error::{Error, Result};
use crate::tinynn::{
    decode_checkpoint, encode_checkpoint, softmax_cross_entropy, ForwardCtx, LayerSpec, Parameter,
    Sequential, Tensor,
};

/// Lightweight classifier head: 3×3 stride-2 conv, relu, global average
/// pool, dropout, then a low-width (bottleneck) classifier.
#[derive(Debug)]
pub struct ExitBranch {
    pub(crate) layers: Sequential,
}

impl ExitBranch {
    fn new(exit: usize, in_channels: usize, arch: &ArchSpec, seed: u64) -> Result<Self> {
        let specs = [
            LayerSpec::conv(in_channels, arch.exit_channels, 3, 2),
            LayerSpec::Relu,
            LayerSpec::AdaptiveAvgPool { out_h: 1, out_w: 1 },
            LayerSpec::Dropout { p: arch.dropout },
            LayerSpec::LowRankFc {
                in_features: arch.exit_channels,
                out_features: arch.num_classes,
                rank: arch.exit_hidden,
            },
        ];
        Ok(Self {
            layers: Sequential::from_specs(&format!("exit{exit}"), &specs, seed)?,
        })
    }

    pub fn layers(&self) -> &Sequential {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.num_params()
    }
}

/// A swappable position holding one pre-built block per operator.
#[derive(Debug)]
pub struct Slot {
    pub(crate) shape: SlotShape,
    pub(crate) in_shape: Vec<usize>,
    pub(crate) blocks: Vec<(CompressionOperator, Sequential)>,
    pub(crate) active: usize,
}

impl Slot {
    pub fn active_operator(&self) -> CompressionOperator {
        self.blocks[self.active].0
    }

    pub fn active_block(&self) -> &Sequential {
        &self.blocks[self.active].1
    }

    fn active_block_mut(&mut self) -> &mut Sequential {
        &mut self.blocks[self.active].1
    }

    pub fn shape(&self) -> SlotShape {
        self.shape
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.in_shape
    }

    fn block_for(&self, kind: OperatorKind) -> Option<usize> {
        self.blocks.iter().position(|(op, _)| op.kind == kind)
    }
}

/// Backbone segment (partition) `i`: fixed layers, an optional slot, and the
/// exit branch attached after it.
#[derive(Debug)]
pub struct Segment {
    pub index: usize,
    pub(crate) body: Sequential,
    pub(crate) slot: Option<Slot>,
    pub(crate) exit: ExitBranch,
    pub(crate) in_shape: Vec<usize>,
    pub(crate) out_shape: Vec<usize>,
}

impl Segment {
    fn forward(&mut self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let h = self.body.forward(x, ctx)?;
        match &mut self.slot {
            Some(slot) => slot.active_block_mut().forward(&h, ctx),
            None => Ok(h),
        }
    }

    fn backward(&mut self, grad: &Tensor, need_input: bool) -> Result<Option<Tensor>> {
        let g = match &mut self.slot {
            Some(slot) => {
                let need_mid = need_input || self.body.params().any(|p| !p.frozen);
                match slot.active_block_mut().backward(grad, need_mid)? {
                    Some(g) => g,
                    None => return Ok(None),
                }
            }
            None => grad.clone(),
        };
        self.body.backward(&g, need_input)
    }

    /// Parameters on the currently active path (body + active slot block).
    pub fn active_params(&self) -> impl Iterator<Item = &Parameter> {
        self.body
            .params()
            .chain(self.slot.iter().flat_map(|s| s.active_block().params()))
    }

    /// All backbone parameters of the segment including inactive operator blocks.
    pub fn backbone_params(&self) -> impl Iterator<Item = &Parameter> {
        self.body
            .params()
            .chain(self.slot.iter().flat_map(|s| s.blocks.iter().flat_map(|(_, b)| b.params())))
    }

    pub fn backbone_params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.body.params_mut().chain(
            self.slot
                .iter_mut()
                .flat_map(|s| s.blocks.iter_mut().flat_map(|(_, b)| b.params_mut())),
        )
    }

    pub fn exit(&self) -> &ExitBranch {
        &self.exit
    }

    pub fn exit_params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.exit.layers.params_mut()
    }

    pub fn body(&self) -> &Sequential {
        &self.body
    }

    pub fn slot(&self) -> Option<&Slot> {
        self.slot.as_ref()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.out_shape
    }

    /// Backbone layer count on the active path.
    pub fn active_layer_count(&self) -> usize {
        self.body.len() + self.slot.as_ref().map_or(0, |s| s.active_block().len())
    }
}

/// The multi-branch elastic network.
#[derive(Debug)]
pub struct ElasticNetwork {
    arch: ArchSpec,
    seed: u64,
    segments: Vec<Segment>,
    /// Segment index (0-based) owning each slot, in slot order.
    slot_segments: Vec<usize>,
    active_exit: usize,
}

/// Per-sample input normalization: `[C,H,W]` → `[1,C,H,W]`.
fn batched(x: &Tensor, input: &[usize; 3]) -> Result<(Tensor, bool)> {
    match x.rank() {
        3 if x.shape() == input => Ok((x.clone().reshape(&[1, input[0], input[1], input[2]])?, false)),
        4 if &x.shape()[1..] == input => Ok((x.clone(), true)),
        _ => Err(Error::Shape {
            layer: "network input".into(),
            expected: format!("{input:?} or [N, {}, {}, {}]", input[0], input[1], input[2]),
            got: x.shape().to_vec(),
        }),
    }
}

impl ElasticNetwork {
    /// Build the network with the baseline operator active at every slot.
    pub fn build(arch: &ArchSpec, seed: u64) -> Result<Self> {
        if arch.segments.is_empty() {
            return Err(Error::invalid("architecture has no segments"));
        }
        for pair in arch.segments.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(Error::invalid(format!(
                    "exit positions must be strictly increasing ({} then {})",
                    pair[0].index, pair[1].index
                )));
            }
        }
        if arch.operators.is_empty() {
            return Err(Error::invalid("empty operator pool"));
        }
        let mut shape = arch.input.to_vec();
        let mut segments = Vec::with_capacity(arch.segments.len());
        let mut slot_segments = Vec::new();
        for (si, seg) in arch.segments.iter().enumerate() {
            let seg_no = si + 1;
            let in_shape = shape.clone();
            let mut specs = Vec::new();
            for tok in &seg.layers {
                let spec = match *tok {
                    LayerToken::Conv { out, kernel, stride } => LayerSpec::conv(shape[0], out, kernel, stride),
                    LayerToken::Relu => LayerSpec::Relu,
                };
                shape = spec.output_shape(&shape)?;
                specs.push(spec);
            }
            let body = Sequential::from_specs(&format!("seg{seg_no}.body"), &specs, seed)?;
            let slot = if seg.slot {
                let slot_no = slot_segments.len() + 1;
                let slot_shape = SlotShape::Conv {
                    in_channels: shape[0],
                    out_channels: seg.slot_out.unwrap_or(shape[0]),
                    kernel: 3,
                    stride: 1,
                };
                let slot_in = shape.clone();
                let mut blocks = Vec::new();
                for &kind in &arch.operators {
                    let op = CompressionOperator::from(kind);
                    blocks.push((op, Self::build_block(seg_no, slot_no, &op, &slot_shape, &slot_in, seed)?));
                }
                shape = CompressionOperator::from(OperatorKind::BaselineConv)
                    .realize(slot_no, &slot_shape)?[0]
                    .output_shape(&slot_in)?;
                let active = blocks
                    .iter()
                    .position(|(op, _)| op.kind == OperatorKind::BaselineConv)
                    .unwrap_or(0);
                slot_segments.push(si);
                Some(Slot {
                    shape: slot_shape,
                    in_shape: slot_in,
                    blocks,
                    active,
                })
            } else {
                None
            };
            let exit = ExitBranch::new(seg_no, shape[0], arch, seed)?;
            segments.push(Segment {
                index: seg.index,
                body,
                slot,
                exit,
                in_shape,
                out_shape: shape.clone(),
            });
        }
        let active_exit = segments.len();
        Ok(Self {
            arch: arch.clone(),
            seed,
            segments,
            slot_segments,
            active_exit,
        })
    }

    fn build_block(
        seg_no: usize,
        slot_no: usize,
        op: &CompressionOperator,
        shape: &SlotShape,
        in_shape: &[usize],
        seed: u64,
    ) -> Result<Sequential> {
        let mut specs = op.realize(slot_no, shape)?;
        let expected = CompressionOperator::from(OperatorKind::BaselineConv).realize(slot_no, shape)?[0]
            .output_shape(in_shape)?;
        let mut cur = in_shape.to_vec();
        for s in &specs {
            cur = s.output_shape(&cur).map_err(|e| Error::IncompatibleOperator {
                slot: slot_no,
                operator: op.kind.name().into(),
                reason: e.to_string(),
            })?;
        }
        if cur != expected {
            return Err(Error::IncompatibleOperator {
                slot: slot_no,
                operator: op.kind.name().into(),
                reason: format!("output shape {cur:?} != slot shape {expected:?}"),
            });
        }
        specs.push(LayerSpec::Relu);
        Sequential::from_specs(&format!("seg{seg_no}.slot.{}", op.kind.name()), &specs, seed)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn num_exits(&self) -> usize {
        self.segments.len()
    }

    pub fn num_slots(&self) -> usize {
        self.slot_segments.len()
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.arch.input
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [Segment] {
        &mut self.segments
    }

    /// 1-based segment number owning slot `slot` (1-based).
    pub fn slot_segment(&self, slot: usize) -> Option<usize> {
        slot.checked_sub(1)
            .and_then(|s| self.slot_segments.get(s))
            .map(|si| si + 1)
    }

    pub fn operator_pool(&self) -> &[OperatorKind] {
        &self.arch.operators
    }

    pub fn active_variant(&self) -> VariantConfig {
        let ops = self
            .slot_segments
            .iter()
            .map(|&si| self.segments[si].slot.as_ref().expect("slot").active_operator().kind)
            .collect();
        VariantConfig::new(ops, self.active_exit)
    }

    pub fn active_exit(&self) -> usize {
        self.active_exit
    }

    pub fn set_exit(&mut self, exit_id: usize) -> Result<()> {
        self.check_exit(exit_id)?;
        self.active_exit = exit_id;
        Ok(())
    }

    fn check_exit(&self, exit_id: usize) -> Result<()> {
        if exit_id == 0 || exit_id > self.segments.len() {
            return Err(Error::invalid(format!(
                "exit_id {exit_id} outside 1..={}",
                self.segments.len()
            )));
        }
        Ok(())
    }

    /// Swap the operator at `slot` (1-based). Other parameters are untouched;
    /// on error the network is unchanged.
    pub fn apply_compression_operator(
        &mut self,
        slot: usize,
        operator: impl Into<CompressionOperator>,
    ) -> Result<VariantConfig> {
        let op = operator.into();
        let si = *slot
            .checked_sub(1)
            .and_then(|s| self.slot_segments.get(s))
            .ok_or_else(|| Error::invalid(format!("slot {slot} does not exist")))?;
        let seed = self.seed;
        let seg_no = si + 1;
        let s = self.segments[si].slot.as_mut().expect("slot segment");
        match s.block_for(op.kind) {
            Some(i) if s.blocks[i].0 == op => s.active = i,
            existing => {
                let block = Self::build_block(seg_no, slot, &op, &s.shape, &s.in_shape, seed)?;
                match existing {
                    Some(i) => {
                        s.blocks[i] = (op, block);
                        s.active = i;
                    }
                    None => {
                        s.blocks.push((op, block));
                        s.active = s.blocks.len() - 1;
                    }
                }
            }
        }
        Ok(self.active_variant())
    }

    /// Activate every slot operator and the exit of `variant`.
    pub fn apply_variant(&mut self, variant: &VariantConfig) -> Result<()> {
        if variant.operators.len() != self.num_slots() {
            return Err(Error::invalid(format!(
                "variant has {} slot operators, network has {} slots",
                variant.operators.len(),
                self.num_slots()
            )));
        }
        self.check_exit(variant.exit_id)?;
        for (i, &kind) in variant.operators.iter().enumerate() {
            let si = self.slot_segments[i];
            let s = self.segments[si].slot.as_ref().expect("slot");
            if s.active_operator().kind != kind {
                self.apply_compression_operator(i + 1, kind)?;
            }
        }
        self.active_exit = variant.exit_id;
        Ok(())
    }

    /// Deterministic operator×exit enumeration, truncated to `budget`.
    pub fn enumerate_variants(&self, budget: usize) -> Vec<VariantConfig> {
        variant::enumerate(&self.arch.operators, self.num_slots(), self.num_exits(), budget)
    }

    /// Eval-mode logits at `exit_id`; segments past the exit are not touched.
    pub fn forward_to_exit(&mut self, x: &Tensor, exit_id: usize) -> Result<Tensor> {
        self.check_exit(exit_id)?;
        let (xb, was_batched) = batched(x, &self.arch.input)?;
        let mut ctx = ForwardCtx::eval();
        let mut h = xb;
        for seg in &mut self.segments[..exit_id] {
            h = seg.forward(&h, &mut ctx)?;
        }
        let logits = self.segments[exit_id - 1].exit.layers.forward(&h, &mut ctx)?;
        if was_batched {
            Ok(logits)
        } else {
            let k = logits.numel();
            logits.reshape(&[k])
        }
    }

    /// Exit at the first branch whose max-softmax confidence reaches
    /// `threshold`; thresholds above 1 never exit early.
    pub fn forward_adaptive(&mut self, x: &Tensor, threshold: f32) -> Result<(Tensor, usize)> {
        if threshold.is_nan() || threshold < 0.0 {
            return Err(Error::invalid(format!("confidence threshold {threshold} < 0")));
        }
        let (xb, was_batched) = batched(x, &self.arch.input)?;
        if xb.shape()[0] != 1 {
            return Err(Error::invalid("forward_adaptive takes a single sample"));
        }
        let mut ctx = ForwardCtx::eval();
        let n = self.segments.len();
        let mut h = xb;
        for e in 1..=n {
            h = self.segments[e - 1].forward(&h, &mut ctx)?;
            let logits = self.segments[e - 1].exit.layers.forward(&h, &mut ctx)?;
            let conf = softmax_cross_entropy(logits.data(), 0)?.confidence;
            if e == n || (threshold <= 1.0 && conf >= threshold) {
                let out = if was_batched {
                    logits
                } else {
                    let k = logits.numel();
                    logits.reshape(&[k])?
                };
                return Ok((out, e));
            }
        }
        unreachable!("loop returns at the final exit")
    }

    /// Eval-mode activations entering the slot of segment `seg` (0-based).
    pub(crate) fn slot_input(&mut self, x: &Tensor, seg: usize) -> Result<Tensor> {
        let (mut h, _) = batched(x, &self.arch.input)?;
        let mut ctx = ForwardCtx::eval();
        for s in &mut self.segments[..seg] {
            h = s.forward(&h, &mut ctx)?;
        }
        self.segments[seg].body.forward(&h, &mut ctx)
    }

    /// Forward a batch through segments up to `max(exits)`, returning the
    /// logits of each requested exit. Activations are recorded per `ctx`.
    pub fn forward_exits(&mut self, x: &Tensor, exits: &[usize], ctx: &mut ForwardCtx) -> Result<Vec<Tensor>> {
        let last = *exits.iter().max().ok_or_else(|| Error::invalid("no exits requested"))?;
        for &e in exits {
            self.check_exit(e)?;
        }
        let (mut h, _) = batched(x, &self.arch.input)?;
        let mut out: Vec<Option<Tensor>> = vec![None; exits.len()];
        for e in 1..=last {
            h = self.segments[e - 1].forward(&h, ctx)?;
            for (slot, _) in exits.iter().enumerate().filter(|(_, x)| **x == e) {
                out[slot] = Some(self.segments[e - 1].exit.layers.forward(&h, ctx)?);
            }
        }
        Ok(out.into_iter().map(|t| t.expect("every exit visited")).collect())
    }

    /// Backward pass for logits gradients produced by [`forward_exits`].
    /// Propagation stops below the shallowest trainable segment.
    pub fn backward_exits(&mut self, grads: &[(usize, Tensor)]) -> Result<()> {
        let last = grads
            .iter()
            .map(|(e, _)| *e)
            .max()
            .ok_or_else(|| Error::invalid("no exit gradients"))?;
        let trainable: Vec<bool> = self.segments[..last]
            .iter()
            .map(|s| s.active_params().any(|p| !p.frozen))
            .collect();
        let trainable_below = |s: usize| trainable[..s].iter().any(|t| *t);
        let mut exit_grads: Vec<Option<Tensor>> = vec![None; last];
        for (e, g) in grads {
            let need = trainable_below(*e);
            if let Some(gi) = self.segments[e - 1].exit.layers.backward(g, need)? {
                exit_grads[e - 1] = Some(match exit_grads[e - 1].take() {
                    Some(prev) => add(&prev, &gi)?,
                    None => gi,
                });
            }
        }
        let mut carry: Option<Tensor> = None;
        for s in (1..=last).rev() {
            if !trainable_below(s) {
                break;
            }
            let g = match (carry.take(), exit_grads[s - 1].take()) {
                (Some(a), Some(b)) => add(&a, &b)?,
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => continue,
            };
            carry = self.segments[s - 1].backward(&g, trainable_below(s - 1))?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.segments
            .iter()
            .flat_map(|s| s.backbone_params().chain(s.exit.layers.params()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.segments.iter_mut().flat_map(|s| {
            let Segment { body, slot, exit, .. } = s;
            body.params_mut()
                .chain(slot.iter_mut().flat_map(|s| s.blocks.iter_mut().flat_map(|(_, b)| b.params_mut())))
                .chain(exit.layers.params_mut())
        })
    }

    /// Parameters read by `forward_to_exit(exit_id)` under the active operators.
    pub fn variant_params(&self, exit_id: usize) -> impl Iterator<Item = &Parameter> {
        self.segments[..exit_id]
            .iter()
            .flat_map(|s| s.active_params())
            .chain(self.segments[exit_id - 1].exit.layers.params())
    }

    pub fn backbone_param_count(&self) -> usize {
        self.segments.iter().map(|s| s.active_params().map(Parameter::numel).sum::<usize>()).sum()
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        encode_checkpoint(self.params().map(|p| (p.name.as_str(), &p.value)))
    }

    /// Load parameter values by name. Every network parameter must be
    /// present with a matching shape; unknown names are returned.
    pub fn load_params(&mut self, entries: &[(String, Tensor)]) -> Result<Vec<String>> {
        let lookup: std::collections::HashMap<&str, &Tensor> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for p in self.params() {
            match lookup.get(p.name.as_str()) {
                Some(t) if t.shape() == p.value.shape() => {}
                Some(t) => {
                    return Err(Error::Shape {
                        layer: p.name.clone(),
                        expected: format!("{:?}", p.value.shape()),
                        got: t.shape().to_vec(),
                    })
                }
                None => return Err(Error::Corrupt(format!("checkpoint lacks parameter {}", p.name))),
            }
        }
        let known: std::collections::HashSet<String> = self.params().map(|p| p.name.clone()).collect();
        for p in self.params_mut() {
            p.value = lookup[p.name.as_str()].clone();
        }
        Ok(entries
            .iter()
            .filter(|(n, _)| !known.contains(n))
            .map(|(n, _)| n.clone())
            .collect())
    }

    pub fn load_checkpoint_bytes(&mut self, bytes: &[u8]) -> Result<Vec<String>> {
        self.load_params(&decode_checkpoint(bytes)?)
    }

    /// Eval accuracy of every exit under the active operators, batched in
    /// chunks of `chunk` samples.
    pub fn exit_accuracies(&mut self, images: &Tensor, labels: &[usize], chunk: usize) -> Result<Vec<f64>> {
        let exits: Vec<usize> = (1..=self.num_exits()).collect();
        self.accuracies(images, labels, &exits, chunk)
    }

    /// Eval accuracy of a single exit; later segments are not evaluated.
    pub fn exit_accuracies_upto(&mut self, images: &Tensor, labels: &[usize], exit: usize, chunk: usize) -> Result<f64> {
        Ok(self.accuracies(images, labels, &[exit], chunk)?[0])
    }

    /// Eval accuracy of each variant, in input order. Variants sharing an
    /// operator prefix share the activations up to where they diverge, so
    /// each distinct (prefix, exit) is evaluated once.
    pub fn variant_accuracies(&mut self, variants: &[VariantConfig], images: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        let n = labels.len();
        if variants.is_empty() {
            return Ok(Vec::new());
        }
        if n == 0 {
            return Err(Error::invalid("empty evaluation set"));
        }
        let mut wanted: BTreeMap<(Vec<OperatorKind>, usize), Option<f64>> = BTreeMap::new();
        for v in variants {
            if v.operators.len() != self.num_slots() {
                return Err(Error::invalid(format!("variant {v} does not match {} slots", self.num_slots())));
            }
            self.check_exit(v.exit_id)?;
            wanted.insert(self.prefix_key(v), None);
        }
        let restore = self.active_variant();
        let mut shape = vec![n];
        shape.extend_from_slice(&self.arch.input);
        let x = images.clone().reshape(&shape)?;
        let mut prefix = Vec::new();
        let res = self.accuracy_dfs(0, x, &mut prefix, &mut wanted, labels);
        self.apply_variant(&restore)?;
        res?;
        Ok(variants
            .iter()
            .map(|v| wanted[&self.prefix_key(v)].expect("every prefix visited"))
            .collect())
    }

    fn prefix_key(&self, v: &VariantConfig) -> (Vec<OperatorKind>, usize) {
        let used = self.slot_segments.iter().filter(|&&si| si < v.exit_id).count();
        (v.operators[..used].to_vec(), v.exit_id)
    }

    fn accuracy_dfs(
        &mut self,
        seg: usize,
        h: Tensor,
        prefix: &mut Vec<OperatorKind>,
        wanted: &mut BTreeMap<(Vec<OperatorKind>, usize), Option<f64>>,
        labels: &[usize],
    ) -> Result<()> {
        let needed = |prefix: &[OperatorKind], wanted: &BTreeMap<(Vec<OperatorKind>, usize), Option<f64>>| {
            wanted.keys().any(|(ops, e)| *e > seg && ops.starts_with(prefix))
        };
        if seg == self.segments.len() || !needed(prefix, wanted) {
            return Ok(());
        }
        let mut ctx = ForwardCtx::eval();
        let body = self.segments[seg].body.forward(&h, &mut ctx)?;
        let kinds: Vec<Option<OperatorKind>> = match &self.segments[seg].slot {
            Some(_) => self.arch.operators.iter().map(|k| Some(*k)).collect(),
            None => vec![None],
        };
        for kind in kinds {
            let out = match kind {
                Some(k) => {
                    prefix.push(k);
                    if !needed(prefix, wanted) {
                        prefix.pop();
                        continue;
                    }
                    let slot = self.slot_segments.iter().position(|&si| si == seg).expect("slot") + 1;
                    self.apply_compression_operator(slot, k)?;
                    let s = self.segments[seg].slot.as_mut().expect("slot");
                    s.active_block_mut().forward(&body, &mut ctx)?
                }
                None => body.clone(),
            };
            if let Some(acc) = wanted.get_mut(&(prefix.clone(), seg + 1)) {
                let logits = self.segments[seg].exit.layers.forward(&out, &mut ctx)?;
                let correct = labels.iter().enumerate().filter(|(i, l)| argmax(logits.row(*i)) == **l).count();
                *acc = Some(correct as f64 / labels.len() as f64);
            }
            self.accuracy_dfs(seg + 1, out, prefix, wanted, labels)?;
            if kind.is_some() {
                prefix.pop();
            }
        }
        Ok(())
    }

    fn accuracies(&mut self, images: &Tensor, labels: &[usize], exits: &[usize], chunk: usize) -> Result<Vec<f64>> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::invalid("empty evaluation set"));
        }
        let mut correct = vec![0usize; exits.len()];
        let per: usize = self.arch.input.iter().product();
        if images.numel() != n * per {
            return Err(Error::Shape {
                layer: "evaluation set".into(),
                expected: format!("{n} samples of {:?}", self.arch.input),
                got: images.shape().to_vec(),
            });
        }
        let mut ctx = ForwardCtx::eval();
        let chunk = chunk.max(1);
        for start in (0..n).step_by(chunk) {
            let end = (start + chunk).min(n);
            let mut shape = vec![end - start];
            shape.extend_from_slice(&self.arch.input);
            let x = Tensor::new(shape, images.data()[start * per..end * per].to_vec())?;
            let logits = self.forward_exits(&x, exits, &mut ctx)?;
            for (e, l) in logits.iter().enumerate() {
                for (i, label) in labels[start..end].iter().enumerate() {
                    if argmax(l.row(i)) == *label {
                        correct[e] += 1;
                    }
                }
            }
        }
        Ok(correct.iter().map(|c| *c as f64 / n as f64).collect())
    }
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}
