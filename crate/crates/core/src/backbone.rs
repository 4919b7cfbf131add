//! The 5-stage convolutional encoder with intermediate-layer taps, the two
//! random-feature baseline architectures, freezing semantics, and channel
//! compression blocks for intermediate taps.

use std::collections::BTreeMap;

use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::NamedTensor;
use crate::frame::{frames_to_batch, ImageFrame};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, BatchNorm2d, Conv2d, Dropout, Elu, MaxPool2,
    Param, Relu,
};
use crate::{derive_seed, sha256_hex, Error, Result};

/// Tap layers of the staged encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    L3,
    L4,
    L5,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::L3, Layer::L4, Layer::L5];

    /// Zero-based stage index the tap sits after.
    pub fn stage_index(self) -> usize {
        match self {
            Layer::L3 => 2,
            Layer::L4 => 3,
            Layer::L5 => 4,
        }
    }
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Layer::L3 => write!(f, "L3"),
            Layer::L4 => write!(f, "L4"),
            Layer::L5 => write!(f, "L5"),
        }
    }
}

/// The pretraining objective a backbone was trained with, recorded so that
/// compression fine-tuning can insist on the same objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainObjective {
    Contrastive,
    Supervised,
}

/// Architecture of the staged encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    /// Square input resolution in pixels.
    pub input_size: usize,
    /// Output channels of each of the 5 stride-2 stages.
    pub stage_channels: Vec<usize>,
    pub seed: u64,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self { input_size: 64, stage_channels: vec![16, 32, 64, 128, 128], seed: 0 }
    }
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != 5 {
            return Err(Error::InvalidSpec(format!(
                "expected exactly 5 stages, got {}",
                self.stage_channels.len()
            )));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidSpec("stage channels must be positive".into()));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::InvalidSpec(format!(
                "input_size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        Ok(())
    }

    /// (channels, height, width) of the tap feature map.
    pub fn tap_shape(&self, layer: Layer) -> (usize, usize, usize) {
        let idx = layer.stage_index();
        let side = self.input_size >> (idx + 1);
        (self.stage_channels[idx], side, side)
    }
}

/// One stride-2 stage: conv(3×3, stride 2, pad 1) → batch-norm → ReLU.
#[derive(Debug, Clone)]
struct Stage {
    conv: Conv2d,
    bn: BatchNorm2d,
    relu: Relu,
}

impl Stage {
    fn new(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> Self {
        Self { conv: Conv2d::new(rng, cin, cout, 3, 2, 1), bn: BatchNorm2d::new(cout), relu: Relu::new() }
    }

    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let y = self.conv.forward(x, train);
        let y = self.bn.forward(&y, train);
        self.relu.forward4(&y, train)
    }

    fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        let y = self.conv.forward_no_cache(x);
        let y = self.bn.forward_eval(&y);
        y.mapv(|v| v.max(0.0))
    }

    fn backward(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let d = self.relu.backward4(dy);
        let d = self.bn.backward(&d);
        self.conv.backward(&d)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv.params_mut();
        p.extend(self.bn.params_mut());
        p
    }

    fn write_bytes(&self, out: &mut Vec<u8>) {
        for p in self.conv.params().into_iter().chain(self.bn.params()) {
            out.extend_from_slice(&p.to_le_bytes());
        }
        for &v in self.bn.running_mean.iter().chain(self.bn.running_var.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Residual block: conv(3×3) → bn → ReLU → conv(3×3) → bn, plus a 1×1-conv
/// shortcut when the channel count changes, ReLU after the sum.
#[derive(Debug, Clone)]
pub struct ResBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<Conv2d>,
    relu_out: Relu,
}

impl ResBlock {
    pub fn new(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> Self {
        Self {
            conv1: Conv2d::new(rng, cin, cout, 3, 1, 1),
            bn1: BatchNorm2d::new(cout),
            relu1: Relu::new(),
            conv2: Conv2d::new(rng, cout, cout, 3, 1, 1),
            bn2: BatchNorm2d::new(cout),
            shortcut: (cin != cout).then(|| Conv2d::new(rng, cin, cout, 1, 1, 0)),
            relu_out: Relu::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let b = self.conv1.forward(x, train);
        let b = self.bn1.forward(&b, train);
        let b = self.relu1.forward4(&b, train);
        let b = self.conv2.forward(&b, train);
        let b = self.bn2.forward(&b, train);
        let s = match &mut self.shortcut {
            Some(c) => c.forward(x, train),
            None => x.clone(),
        };
        self.relu_out.forward4(&(&b + &s), train)
    }

    pub fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        let b = self.conv1.forward_no_cache(x);
        let b = self.bn1.forward_eval(&b);
        let b = b.mapv(|v| v.max(0.0));
        let b = self.conv2.forward_no_cache(&b);
        let b = self.bn2.forward_eval(&b);
        let s = match &self.shortcut {
            Some(sc) => sc.forward_no_cache(x),
            None => x.clone(),
        };
        (&b + &s).mapv(|v| v.max(0.0))
    }

    /// Returns dX.
    pub fn backward(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let d = self.relu_out.backward4(dy);
        let db = self.bn2.backward(&d);
        let db = self.conv2.backward(&db);
        let db = self.relu1.backward4(&db);
        let db = self.bn1.backward(&db);
        let mut dx = self.conv1.backward(&db);
        match &mut self.shortcut {
            Some(c) => dx = dx + c.backward(&d),
            None => dx = dx + &d,
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv1.params_mut();
        p.extend(self.bn1.params_mut());
        p.extend(self.conv2.params_mut());
        p.extend(self.bn2.params_mut());
        if let Some(c) = &mut self.shortcut {
            p.extend(c.params_mut());
        }
        p
    }

    fn write_bytes(&self, out: &mut Vec<u8>) {
        for p in self
            .conv1
            .params()
            .into_iter()
            .chain(self.bn1.params())
            .chain(self.conv2.params())
            .chain(self.bn2.params())
        {
            out.extend_from_slice(&p.to_le_bytes());
        }
        if let Some(c) = &self.shortcut {
            for p in c.params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        for bn in [&self.bn1, &self.bn2] {
            for &v in bn.running_mean.iter().chain(bn.running_var.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

/// Autoencoder-style pair of residual blocks at an intermediate tap: the
/// compress block projects to the stage-5 channel count, the expand block
/// restores the tap's original channel count for the downstream stages.
#[derive(Debug, Clone)]
pub struct CompressionBlock {
    pub attach_layer: Layer,
    pub target_channels: usize,
    pub compress: ResBlock,
    pub expand: ResBlock,
}

/// Training-mode activations of one compression pair, returned by
/// [`Backbone::compression_forward_train`].
#[derive(Debug, Clone)]
pub struct CompressionTapTrain {
    pub layer: Layer,
    /// Raw tap map (input to the compress block).
    pub tap: Array4<f32>,
    /// Globally pooled compress-block output (the PVR embedding).
    pub compressed_pooled: Array2<f32>,
    /// Expand-block output (reconstruction of the tap).
    pub expanded: Array4<f32>,
}

/// The staged encoder with taps at stages 3, 4, and 5.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub spec: BackboneSpec,
    stages: Vec<Stage>,
    compression: BTreeMap<Layer, CompressionBlock>,
    pub frozen: bool,
    pub frozen_checksum: Option<String>,
    pub objective: Option<PretrainObjective>,
    /// Spatial side of the L5 map from the last training forward.
    last_l5_spatial: usize,
}

/// Deterministically builds an unfrozen backbone from its spec.
pub fn build_backbone(spec: &BackboneSpec) -> Result<Backbone> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "backbone-init"));
    let mut stages = Vec::new();
    let mut cin = 3;
    for &cout in &spec.stage_channels {
        stages.push(Stage::new(&mut rng, cin, cout));
        cin = cout;
    }
    Ok(Backbone {
        spec: spec.clone(),
        stages,
        compression: BTreeMap::new(),
        frozen: false,
        frozen_checksum: None,
        objective: None,
        last_l5_spatial: 0,
    })
}

impl Backbone {
    /// Pooled embedding length at a tap (accounts for compression).
    pub fn embed_dim(&self, layer: Layer) -> usize {
        if self.compression.contains_key(&layer) {
            self.spec.stage_channels[4]
        } else {
            self.spec.stage_channels[layer.stage_index()]
        }
    }

    pub fn has_compression(&self, layer: Layer) -> bool {
        self.compression.contains_key(&layer)
    }

    /// Inserts a compression block at L3 or L4. The backbone must be unfrozen
    /// (the blocks are trained before freezing).
    pub fn attach_compression(&mut self, layer: Layer) -> Result<()> {
        if layer == Layer::L5 {
            return Err(Error::InvalidLayer("compression attaches at L3 or L4 only".into()));
        }
        if self.frozen {
            return Err(Error::FrozenViolation("cannot attach compression to a frozen backbone".into()));
        }
        let cin = self.spec.stage_channels[layer.stage_index()];
        let target = self.spec.stage_channels[4];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.spec.seed,
            &format!("compression-{layer}"),
        ));
        let block = CompressionBlock {
            attach_layer: layer,
            target_channels: target,
            compress: ResBlock::new(&mut rng, cin, target),
            expand: ResBlock::new(&mut rng, target, cin),
        };
        self.compression.insert(layer, block);
        Ok(())
    }

    pub fn compression_mut(&mut self, layer: Layer) -> Option<&mut CompressionBlock> {
        self.compression.get_mut(&layer)
    }

    pub fn compression(&self, layer: Layer) -> Option<&CompressionBlock> {
        self.compression.get(&layer)
    }

    /// Raw tap feature map in evaluation mode, routing through any attached
    /// compress/expand pairs at earlier taps.
    pub fn forward_map_eval(&self, x: &Array4<f32>, upto: Layer) -> Array4<f32> {
        let mut h = x.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.forward_eval(&h);
            if i < upto.stage_index() {
                for l in [Layer::L3, Layer::L4] {
                    if l.stage_index() == i {
                        if let Some(cb) = self.compression.get(&l) {
                            let t = cb.compress.forward_eval(&h);
                            h = cb.expand.forward_eval(&t);
                        }
                    }
                }
            }
            if i == upto.stage_index() {
                break;
            }
        }
        h
    }

    /// Pooled embedding batch in evaluation mode. With compression attached at
    /// the tap, returns the pooled compress-block output.
    pub fn embed_batch(&self, x: &Array4<f32>, layer: Layer) -> Result<Array2<f32>> {
        let (_, c, h, w) = x.dim();
        if c != 3 || h != self.spec.input_size || w != self.spec.input_size {
            return Err(Error::InvalidInput(format!(
                "frame batch {h}x{w}x{c} does not match input size {}",
                self.spec.input_size
            )));
        }
        let map = self.forward_map_eval(x, layer);
        match self.compression.get(&layer) {
            Some(cb) => Ok(global_avg_pool(&cb.compress.forward_eval(&map))),
            None => Ok(global_avg_pool(&map)),
        }
    }

    /// Single-frame pooled embedding at a tap.
    pub fn embed(&self, frame: &ImageFrame, layer: Layer) -> Result<Vec<f32>> {
        let batch = frames_to_batch(&[frame]);
        let e = self.embed_batch(&batch, layer)?;
        Ok(e.row(0).to_vec())
    }

    /// Training-mode forward to the pooled L5 embedding. Only valid while the
    /// backbone is unfrozen and has no compression attached (the pretraining
    /// path). Caches activations for [`Backbone::pooled_l5_backward`].
    pub fn pooled_l5_forward_train(&mut self, x: &Array4<f32>) -> Result<Array2<f32>> {
        if self.frozen {
            return Err(Error::FrozenViolation("training forward through a frozen backbone".into()));
        }
        if !self.compression.is_empty() {
            return Err(Error::InvalidConfig(
                "training the stage path with compression attached is not supported".into(),
            ));
        }
        let mut h = x.clone();
        for stage in self.stages.iter_mut() {
            h = stage.forward(&h, true);
        }
        self.last_l5_spatial = h.dim().2;
        Ok(global_avg_pool(&h))
    }

    /// Backward from pooled L5 gradients; accumulates stage gradients.
    pub fn pooled_l5_backward(&mut self, d: &Array2<f32>) {
        let side = self.last_l5_spatial;
        let mut dh = global_avg_pool_backward(d, side, side);
        for stage in self.stages.iter_mut().rev() {
            dh = stage.backward(&dh);
        }
    }

    /// Routed training-mode forward for compression fine-tuning: stages run
    /// in eval mode (they stay frozen in effect), compress/expand blocks run
    /// in train mode and cache for [`Backbone::compression_backward`]. The
    /// expanded map feeds downstream stages with its gradient stopped.
    pub fn compression_forward_train(&mut self, x: &Array4<f32>) -> Result<Vec<CompressionTapTrain>> {
        if self.frozen {
            return Err(Error::FrozenViolation("fine-tuning a frozen backbone".into()));
        }
        if self.compression.is_empty() {
            return Err(Error::InvalidConfig("no compression blocks attached".into()));
        }
        let last = self.compression.keys().map(|l| l.stage_index()).max().unwrap();
        let mut out = Vec::new();
        let mut h = x.clone();
        for i in 0..=last {
            h = self.stages[i].forward_eval(&h);
            for layer in [Layer::L3, Layer::L4] {
                if layer.stage_index() != i {
                    continue;
                }
                if let Some(cb) = self.compression.get_mut(&layer) {
                    let tap = h.clone();
                    let compressed = cb.compress.forward(&tap, true);
                    let pooled = global_avg_pool(&compressed);
                    let expanded = cb.expand.forward(&compressed, true);
                    h = expanded.clone();
                    out.push(CompressionTapTrain { layer, tap, compressed_pooled: pooled, expanded });
                }
            }
        }
        Ok(out)
    }

    /// Backward for [`Backbone::compression_forward_train`]: accumulates
    /// gradients into the compression blocks only. `d_pooled` is the gradient
    /// of the pooled compressed embedding, `d_expanded` of the expanded map.
    pub fn compression_backward(
        &mut self,
        grads: &[(Layer, Array2<f32>, Array4<f32>)],
    ) -> Result<()> {
        for (layer, d_pooled, d_expanded) in grads {
            let cb = self
                .compression
                .get_mut(layer)
                .ok_or_else(|| Error::InvalidLayer(format!("no compression at {layer}")))?;
            let (n, c) = d_pooled.dim();
            let (_, _, h, w) = d_expanded.dim();
            debug_assert_eq!((n, c), (d_expanded.dim().0, cb.target_channels));
            let mut d_comp = global_avg_pool_backward(d_pooled, h, w);
            d_comp = d_comp + cb.expand.backward(d_expanded);
            cb.compress.backward(&d_comp);
        }
        Ok(())
    }

    pub fn stage_params_mut(&mut self) -> Vec<&mut Param> {
        self.stages.iter_mut().flat_map(|s| s.params_mut()).collect()
    }

    pub fn compression_params_mut(&mut self) -> Vec<&mut Param> {
        self.compression
            .values_mut()
            .flat_map(|c| {
                let mut p = c.compress.params_mut();
                p.extend(c.expand.params_mut());
                p
            })
            .collect()
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> =
            self.stages.iter_mut().flat_map(|s| s.params_mut()).collect();
        p.extend(self.compression.values_mut().flat_map(|c| {
            let mut q = c.compress.params_mut();
            q.extend(c.expand.params_mut());
            q
        }));
        p
    }

    /// Canonical stage-ordered little-endian float32 serialization of all
    /// parameters (and batch-norm statistics), used for checksums.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for s in &self.stages {
            s.write_bytes(&mut out);
        }
        for cb in self.compression.values() {
            cb.compress.write_bytes(&mut out);
            cb.expand.write_bytes(&mut out);
        }
        out
    }

    /// Checksum over stage parameters only (compression excluded), used to
    /// verify that fine-tuning left the original stages untouched.
    pub fn stage_checksum(&self) -> String {
        let mut out = Vec::new();
        for s in &self.stages {
            s.write_bytes(&mut out);
        }
        sha256_hex(&out)
    }

    pub fn checksum(&self) -> String {
        sha256_hex(&self.param_bytes())
    }

    /// Marks the backbone frozen and records its checksum. Idempotent.
    pub fn freeze(&mut self) {
        if !self.frozen {
            self.frozen = true;
            self.frozen_checksum = Some(self.checksum());
        }
    }

    /// Number of encoder stages.
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Evaluation-mode forward through a single stage.
    pub fn stage_eval(&self, i: usize, x: &Array4<f32>) -> Array4<f32> {
        self.stages[i].forward_eval(x)
    }

    /// Momentum (key-encoder) update: every parameter and batch-norm statistic
    /// becomes m·self + (1−m)·query. Structures must match.
    pub fn momentum_merge(&mut self, query: &Backbone, m: f32) {
        for (sk, sq) in self.stages.iter_mut().zip(&query.stages) {
            merge_conv(&mut sk.conv, &sq.conv, m);
            merge_bn(&mut sk.bn, &sq.bn, m);
        }
        for (ck, cq) in self.compression.values_mut().zip(query.compression.values()) {
            merge_resblock(&mut ck.compress, &cq.compress, m);
            merge_resblock(&mut ck.expand, &cq.expand, m);
        }
    }

    /// Explicitly unfreezes (required before finetune-mode training).
    pub fn thaw(&mut self) {
        self.frozen = false;
        self.frozen_checksum = None;
    }
}

fn merge_param(k: &mut Param, q: &Param, m: f32) {
    ndarray::Zip::from(&mut k.value).and(&q.value).for_each(|a, &b| *a = m * *a + (1.0 - m) * b);
}

fn merge_vec(k: &mut ndarray::Array1<f32>, q: &ndarray::Array1<f32>, m: f32) {
    ndarray::Zip::from(k).and(q).for_each(|a, &b| *a = m * *a + (1.0 - m) * b);
}

fn merge_conv(k: &mut Conv2d, q: &Conv2d, m: f32) {
    merge_param(&mut k.weight, &q.weight, m);
    merge_param(&mut k.bias, &q.bias, m);
}

fn merge_bn(k: &mut BatchNorm2d, q: &BatchNorm2d, m: f32) {
    merge_param(&mut k.gamma, &q.gamma, m);
    merge_param(&mut k.beta, &q.beta, m);
    merge_vec(&mut k.running_mean, &q.running_mean, m);
    merge_vec(&mut k.running_var, &q.running_var, m);
}

fn merge_resblock(k: &mut ResBlock, q: &ResBlock, m: f32) {
    merge_conv(&mut k.conv1, &q.conv1, m);
    merge_bn(&mut k.bn1, &q.bn1, m);
    merge_conv(&mut k.conv2, &q.conv2, m);
    merge_bn(&mut k.bn2, &q.bn2, m);
    if let (Some(ks), Some(qs)) = (&mut k.shortcut, &q.shortcut) {
        merge_conv(ks, qs, m);
    }
}

// ---------------------------------------------------------------------------
// Named-tensor export/import (checkpoint exchange)
// ---------------------------------------------------------------------------

fn push_param(out: &mut Vec<NamedTensor>, name: String, p: &Param) {
    out.push(NamedTensor::new(
        name,
        p.value.shape().to_vec(),
        p.value.iter().cloned().collect(),
    ));
}

fn push_vec(out: &mut Vec<NamedTensor>, name: String, v: &ndarray::Array1<f32>) {
    out.push(NamedTensor::new(name, vec![v.len()], v.to_vec()));
}

fn pull<'a>(map: &'a BTreeMap<String, NamedTensor>, name: &str) -> Result<&'a NamedTensor> {
    map.get(name)
        .ok_or_else(|| Error::InvalidInput(format!("checkpoint missing tensor {name}")))
}

fn pull_param(map: &BTreeMap<String, NamedTensor>, name: &str, p: &mut Param) -> Result<()> {
    let t = pull(map, name)?;
    if t.shape != p.value.shape() {
        return Err(Error::InvalidInput(format!(
            "tensor {name} shape {:?} does not match {:?}",
            t.shape,
            p.value.shape()
        )));
    }
    p.value = ndarray::ArrayD::from_shape_vec(t.shape.clone(), t.data.clone()).unwrap();
    Ok(())
}

fn pull_vec(
    map: &BTreeMap<String, NamedTensor>,
    name: &str,
    v: &mut ndarray::Array1<f32>,
) -> Result<()> {
    let t = pull(map, name)?;
    if t.shape != [v.len()] {
        return Err(Error::InvalidInput(format!("tensor {name} length mismatch")));
    }
    *v = ndarray::Array1::from(t.data.clone());
    Ok(())
}

fn export_conv(out: &mut Vec<NamedTensor>, prefix: &str, c: &Conv2d) {
    push_param(out, format!("{prefix}.weight"), &c.weight);
    push_param(out, format!("{prefix}.bias"), &c.bias);
}

fn import_conv(map: &BTreeMap<String, NamedTensor>, prefix: &str, c: &mut Conv2d) -> Result<()> {
    pull_param(map, &format!("{prefix}.weight"), &mut c.weight)?;
    pull_param(map, &format!("{prefix}.bias"), &mut c.bias)
}

fn export_bn(out: &mut Vec<NamedTensor>, prefix: &str, bn: &BatchNorm2d) {
    push_param(out, format!("{prefix}.gamma"), &bn.gamma);
    push_param(out, format!("{prefix}.beta"), &bn.beta);
    push_vec(out, format!("{prefix}.running_mean"), &bn.running_mean);
    push_vec(out, format!("{prefix}.running_var"), &bn.running_var);
}

fn import_bn(map: &BTreeMap<String, NamedTensor>, prefix: &str, bn: &mut BatchNorm2d) -> Result<()> {
    pull_param(map, &format!("{prefix}.gamma"), &mut bn.gamma)?;
    pull_param(map, &format!("{prefix}.beta"), &mut bn.beta)?;
    pull_vec(map, &format!("{prefix}.running_mean"), &mut bn.running_mean)?;
    pull_vec(map, &format!("{prefix}.running_var"), &mut bn.running_var)
}

impl Stage {
    fn export_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        export_conv(out, &format!("{prefix}.conv"), &self.conv);
        export_bn(out, &format!("{prefix}.bn"), &self.bn);
    }

    fn import_tensors(&mut self, prefix: &str, map: &BTreeMap<String, NamedTensor>) -> Result<()> {
        import_conv(map, &format!("{prefix}.conv"), &mut self.conv)?;
        import_bn(map, &format!("{prefix}.bn"), &mut self.bn)
    }
}

impl ResBlock {
    fn export_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        export_conv(out, &format!("{prefix}.conv1"), &self.conv1);
        export_bn(out, &format!("{prefix}.bn1"), &self.bn1);
        export_conv(out, &format!("{prefix}.conv2"), &self.conv2);
        export_bn(out, &format!("{prefix}.bn2"), &self.bn2);
        if let Some(sc) = &self.shortcut {
            export_conv(out, &format!("{prefix}.shortcut"), sc);
        }
    }

    fn import_tensors(&mut self, prefix: &str, map: &BTreeMap<String, NamedTensor>) -> Result<()> {
        import_conv(map, &format!("{prefix}.conv1"), &mut self.conv1)?;
        import_bn(map, &format!("{prefix}.bn1"), &mut self.bn1)?;
        import_conv(map, &format!("{prefix}.conv2"), &mut self.conv2)?;
        import_bn(map, &format!("{prefix}.bn2"), &mut self.bn2)?;
        if let Some(sc) = &mut self.shortcut {
            import_conv(map, &format!("{prefix}.shortcut"), sc)?;
        }
        Ok(())
    }
}

impl Backbone {
    pub fn export_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            s.export_tensors(&format!("stage{i}"), &mut out);
        }
        for (layer, cb) in &self.compression {
            cb.compress.export_tensors(&format!("comp_{layer}.compress"), &mut out);
            cb.expand.export_tensors(&format!("comp_{layer}.expand"), &mut out);
        }
        out
    }

    pub fn import_tensors(&mut self, map: &BTreeMap<String, NamedTensor>) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenViolation("import into a frozen backbone".into()));
        }
        for i in 0..self.stages.len() {
            let prefix = format!("stage{i}");
            self.stages[i].import_tensors(&prefix, map)?;
        }
        let layers: Vec<Layer> = self.compression.keys().cloned().collect();
        for layer in layers {
            let cb = self.compression.get_mut(&layer).unwrap();
            cb.compress.import_tensors(&format!("comp_{layer}.compress"), map)?;
            cb.expand.import_tensors(&format!("comp_{layer}.expand"), map)?;
        }
        Ok(())
    }
}

/// Variant of the random-feature baseline encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomVariant {
    /// 5 conv layers, 32 filters, 3×3, stride 2, pad 1, ELU; flattened output.
    Nav,
    /// 4 conv layers, 32 filters, 3×3, stride 1, pad 0, ReLU, batch-norm and
    /// max-pool (stride 2) between layers, dropout 0.2 between layers 2 and 3;
    /// pooled output.
    Control,
}

#[derive(Debug, Clone)]
enum RfOp {
    Conv(Conv2d),
    Bn(BatchNorm2d),
    Relu(Relu),
    Elu(Elu),
    Pool(MaxPool2),
    Drop(Dropout),
}

/// Randomly initialized convolutional baseline (frozen by the caller, or
/// trained as part of the policy in from-scratch mode).
#[derive(Debug, Clone)]
pub struct RandomFeatures {
    pub variant: RandomVariant,
    pub input_size: usize,
    pub seed: u64,
    ops: Vec<RfOp>,
    flatten: bool,
    pub frozen: bool,
    pub frozen_checksum: Option<String>,
    last_map_shape: (usize, usize, usize),
}

/// Builds a random-feature encoder for 64×64 inputs.
pub fn build_random_features(variant: RandomVariant, seed: u64) -> RandomFeatures {
    let input_size = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "random-features"));
    let mut ops = Vec::new();
    let flatten;
    match variant {
        RandomVariant::Nav => {
            let mut cin = 3;
            for _ in 0..5 {
                ops.push(RfOp::Conv(Conv2d::new(&mut rng, cin, 32, 3, 2, 1)));
                ops.push(RfOp::Elu(Elu::new()));
                cin = 32;
            }
            flatten = true;
        }
        RandomVariant::Control => {
            let mut cin = 3;
            for i in 0..4 {
                ops.push(RfOp::Conv(Conv2d::new(&mut rng, cin, 32, 3, 1, 0)));
                ops.push(RfOp::Bn(BatchNorm2d::new(32)));
                ops.push(RfOp::Relu(Relu::new()));
                if i < 3 {
                    ops.push(RfOp::Pool(MaxPool2::new()));
                }
                if i == 1 {
                    ops.push(RfOp::Drop(Dropout::new(0.20)));
                }
                cin = 32;
            }
            flatten = false;
        }
    }
    RandomFeatures {
        variant,
        input_size,
        seed,
        ops,
        flatten,
        frozen: false,
        frozen_checksum: None,
        last_map_shape: (0, 0, 0),
    }
}

impl RandomFeatures {
    pub fn out_dim(&self) -> usize {
        match self.variant {
            RandomVariant::Nav => {
                let side = self.input_size >> 5;
                32 * side * side
            }
            RandomVariant::Control => 32,
        }
    }

    /// Forward to the output vector. `train` enables caches, batch statistics,
    /// and dropout (which draws from `rng`).
    pub fn embed_batch(
        &mut self,
        x: &Array4<f32>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Array2<f32> {
        let mut h = x.clone();
        for op in self.ops.iter_mut() {
            h = match op {
                RfOp::Conv(c) => c.forward(&h, train),
                RfOp::Bn(b) => b.forward(&h, train),
                RfOp::Relu(r) => r.forward4(&h, train),
                RfOp::Elu(e) => e.forward4(&h, train),
                RfOp::Pool(p) => p.forward4(&h, train),
                RfOp::Drop(d) => d.forward4(&h, train, rng),
            };
        }
        let (n, c, hh, ww) = h.dim();
        self.last_map_shape = (c, hh, ww);
        if self.flatten {
            h.into_shape_with_order((n, c * hh * ww)).unwrap()
        } else {
            global_avg_pool(&h)
        }
    }

    pub fn embed_batch_eval(&self, x: &Array4<f32>) -> Array2<f32> {
        let mut c = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        c.embed_batch(x, false, &mut rng)
    }

    /// Backward from output-vector gradients; accumulates parameter grads.
    pub fn backward(&mut self, d: &Array2<f32>) {
        let (c, hh, ww) = self.last_map_shape;
        let n = d.shape()[0];
        let mut dh = if self.flatten {
            d.clone().into_shape_with_order((n, c, hh, ww)).unwrap()
        } else {
            global_avg_pool_backward(d, hh, ww)
        };
        for op in self.ops.iter_mut().rev() {
            dh = match op {
                RfOp::Conv(cv) => cv.backward(&dh),
                RfOp::Bn(b) => b.backward(&dh),
                RfOp::Relu(r) => r.backward4(&dh),
                RfOp::Elu(e) => e.backward4(&dh),
                RfOp::Pool(p) => p.backward4(&dh),
                RfOp::Drop(dr) => dr.backward4(&dh),
            };
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.ops
            .iter_mut()
            .flat_map(|op| match op {
                RfOp::Conv(c) => c.params_mut(),
                RfOp::Bn(b) => b.params_mut(),
                _ => Vec::new(),
            })
            .collect()
    }

    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for op in &self.ops {
            match op {
                RfOp::Conv(c) => {
                    for p in c.params() {
                        out.extend_from_slice(&p.to_le_bytes());
                    }
                }
                RfOp::Bn(b) => {
                    for p in b.params() {
                        out.extend_from_slice(&p.to_le_bytes());
                    }
                    for &v in b.running_mean.iter().chain(b.running_var.iter()) {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn checksum(&self) -> String {
        sha256_hex(&self.param_bytes())
    }

    pub fn freeze(&mut self) {
        if !self.frozen {
            self.frozen = true;
            self.frozen_checksum = Some(self.checksum());
        }
    }

    pub fn export_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (i, op) in self.ops.iter().enumerate() {
            match op {
                RfOp::Conv(c) => export_conv(&mut out, &format!("{prefix}op{i}.conv"), c),
                RfOp::Bn(b) => export_bn(&mut out, &format!("{prefix}op{i}.bn"), b),
                _ => {}
            }
        }
        out
    }

    pub fn import_tensors(
        &mut self,
        prefix: &str,
        map: &BTreeMap<String, NamedTensor>,
    ) -> Result<()> {
        for (i, op) in self.ops.iter_mut().enumerate() {
            match op {
                RfOp::Conv(c) => import_conv(map, &format!("{prefix}op{i}.conv"), c)?,
                RfOp::Bn(b) => import_bn(map, &format!("{prefix}op{i}.bn"), b)?,
                _ => {}
            }
        }
        Ok(())
    }
}
