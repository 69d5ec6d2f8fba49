//! The three frame classifiers behind one interface.
//!
//! TCFPN: a temporal convolutional encoder whose levels form a feature
//! pyramid; the decoder fuses 1x1 lateral projections with upsampled
//! coarser levels by element-wise sum, runs an anti-aliasing conv per
//! level, and averages the K per-level softmax heads into the output.
//! ED-TCN: the plain encoder-decoder baseline with one head. MLP: a
//! frame-wise two-layer perceptron.
//!
//! Sequences are processed channel-major `[channels, time]`; the public
//! boundary speaks `FeatureSequence` (frames x dims) and
//! `SoftLabelSequence` (frames x classes). Variable-length input is edge-
//! padded up to a multiple of `2^(depth-1)` so pooling and upsampling stay
//! exact inverses, and the output is trimmed back.

use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSequence;
use crate::targets::SoftLabelSequence;

use super::layers::{BatchNorm, BnCache, Conv1d, ConvCache, TensorReader, TensorVisitor};
use super::{ops, NetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tcfpn,
    EdTcn,
    Mlp,
}

/// Architecture description. `encoder_filters` has one entry per pyramid
/// level; the first level is the raw input, so entry 0 is ignored and the
/// convolutions producing levels 2..=depth use entries 1.. (for the MLP the
/// last entry doubles as the hidden width).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub depth: usize,
    pub conv_width: usize,
    pub encoder_filters: Vec<usize>,
    pub lateral_dim: usize,
    pub num_classes: usize,
    pub input_dim: usize,
}

impl ModelConfig {
    /// Defaults (depth 3, width 25, filters [48, 64, 96], lateral 64) for
    /// the given problem size.
    pub fn new(kind: ModelKind, num_classes: usize, input_dim: usize) -> Self {
        Self {
            kind,
            depth: 3,
            conv_width: 25,
            encoder_filters: vec![48, 64, 96],
            lateral_dim: 64,
            num_classes,
            input_dim,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |field, reason: String| Err(NetError::InvalidConfig { field, reason });
        if self.depth < 1 {
            return bad("depth", "must be at least 1".into());
        }
        if self.conv_width < 1 || self.conv_width.is_multiple_of(2) {
            return bad(
                "conv_width",
                format!("must be an odd positive integer, got {}", self.conv_width),
            );
        }
        if self.encoder_filters.len() != self.depth {
            return bad(
                "encoder_filters",
                format!(
                    "needs exactly depth={} entries, got {}",
                    self.depth,
                    self.encoder_filters.len()
                ),
            );
        }
        if self.encoder_filters.contains(&0) {
            return bad("encoder_filters", "entries must be positive".into());
        }
        if self.lateral_dim == 0 {
            return bad("lateral_dim", "must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes", "must be positive".into());
        }
        if self.input_dim == 0 {
            return bad("input_dim", "must be positive".into());
        }
        Ok(())
    }

    /// Channel count of encoder level `j` (0-based; level 0 is the input).
    fn level_channels(&self, j: usize) -> usize {
        if j == 0 {
            self.input_dim
        } else {
            self.encoder_filters[j]
        }
    }

    /// Length quantum: sequences are padded to a multiple of this.
    pub fn pad_multiple(&self) -> usize {
        match self.kind {
            ModelKind::Tcfpn | ModelKind::EdTcn => 1 << (self.depth - 1),
            ModelKind::Mlp => 1,
        }
    }
}

#[derive(Debug, Clone)]
struct EncStage {
    conv: Conv1d,
    bn: BatchNorm,
}

struct EncStageCache {
    conv: ConvCache,
    bn: BnCache,
    bn_out: Array2<f64>,
    pool_idx: Array2<u8>,
}

impl EncStage {
    fn new(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, width: usize) -> Self {
        Self {
            conv: Conv1d::new(rng, c_in, c_out, width),
            bn: BatchNorm::new(c_out),
        }
    }

    fn forward_infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let y = self.conv.forward(&x.view());
        let y = ops::relu(&self.bn.forward_infer(&y));
        ops::maxpool2(&y).0
    }

    fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, EncStageCache) {
        let (y, conv) = self.conv.forward_cached(&x.view());
        let (bn_out, bn) = self.bn.forward_train(&y);
        let (y, pool_idx) = ops::maxpool2(&ops::relu(&bn_out));
        (
            y,
            EncStageCache {
                conv,
                bn,
                bn_out,
                pool_idx,
            },
        )
    }

    fn backward(&mut self, cache: &EncStageCache, dy: &Array2<f64>) -> Array2<f64> {
        let d = ops::maxpool2_backward(dy, &cache.pool_idx);
        let d = ops::relu_backward(&cache.bn_out, &d);
        let d = self.bn.backward(&cache.bn, &d);
        self.conv.backward(&cache.conv, &d)
    }

    fn zero_grads(&mut self) {
        self.conv.zero_grads();
        self.bn.zero_grads();
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut TensorVisitor) {
        self.conv.visit_tensors(&format!("{prefix}.conv"), f);
        self.bn.visit_tensors(&format!("{prefix}.bn"), f);
    }

    fn read_tensors(&self, prefix: &str, f: &mut TensorReader) {
        self.conv.read_tensors(&format!("{prefix}.conv"), f);
        self.bn.read_tensors(&format!("{prefix}.bn"), f);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TcfpnNet {
    enc: Vec<EncStage>,
    lateral: Vec<Conv1d>,
    anti: Vec<Conv1d>,
    head: Vec<Conv1d>,
}

struct TcfpnLevelCache {
    lateral: ConvCache,
    anti: ConvCache,
    head: ConvCache,
    p: Array2<f64>,
}

pub(crate) struct TcfpnCache {
    enc: Vec<EncStageCache>,
    levels: Vec<TcfpnLevelCache>,
}

impl TcfpnNet {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let k = cfg.depth;
        let enc = (0..k - 1)
            .map(|s| {
                EncStage::new(
                    rng,
                    cfg.level_channels(s),
                    cfg.level_channels(s + 1),
                    cfg.conv_width,
                )
            })
            .collect();
        let lateral = (0..k)
            .map(|i| Conv1d::pointwise(rng, cfg.level_channels(k - 1 - i), cfg.lateral_dim))
            .collect();
        let anti = (0..k)
            .map(|_| Conv1d::new(rng, cfg.lateral_dim, cfg.lateral_dim, cfg.conv_width))
            .collect();
        let head = (0..k)
            .map(|_| Conv1d::pointwise(rng, cfg.lateral_dim, cfg.num_classes))
            .collect();
        Self {
            enc,
            lateral,
            anti,
            head,
        }
    }

    fn depth(&self) -> usize {
        self.enc.len() + 1
    }

    fn encode_infer(&self, xp: &Array2<f64>) -> Result<Vec<Array2<f64>>, NetError> {
        let mut enc = vec![xp.clone()];
        for (s, stage) in self.enc.iter().enumerate() {
            let y = stage.forward_infer(&enc[s]);
            ops::check_finite(&format!("enc{}", s + 1), &y)?;
            enc.push(y);
        }
        Ok(enc)
    }

    /// Per-level probability sequences, each upsampled to the padded length.
    fn level_outputs(&self, xp: &Array2<f64>) -> Result<Vec<Array2<f64>>, NetError> {
        let k = self.depth();
        let enc = self.encode_infer(xp)?;
        let mut levels = Vec::with_capacity(k);
        let mut d = self.lateral[0].forward(&enc[k - 1].view());
        for i in 0..k {
            if i > 0 {
                d = ops::upsample_repeat(&d, 2) + self.lateral[i].forward(&enc[k - 1 - i].view());
            }
            ops::check_finite(&format!("decoder{i}"), &d)?;
            let a = self.anti[i].forward(&d.view());
            let p = ops::softmax_cols(&self.head[i].forward(&a.view()));
            ops::check_finite(&format!("head{i}"), &p)?;
            levels.push(ops::upsample_repeat(&p, 1 << (k - 1 - i)));
        }
        Ok(levels)
    }

    fn forward_infer(&self, xp: &Array2<f64>) -> Result<Array2<f64>, NetError> {
        let levels = self.level_outputs(xp)?;
        let k = levels.len() as f64;
        let mut acc = levels[0].clone();
        for level in &levels[1..] {
            acc += level;
        }
        Ok(acc / k)
    }

    fn forward_train(&mut self, xp: &Array2<f64>) -> Result<(Array2<f64>, TcfpnCache), NetError> {
        let k = self.depth();
        let mut enc_outs = vec![xp.clone()];
        let mut enc_caches = Vec::with_capacity(k - 1);
        for (s, stage) in self.enc.iter_mut().enumerate() {
            let (y, cache) = stage.forward_train(&enc_outs[s]);
            ops::check_finite(&format!("enc{}", s + 1), &y)?;
            enc_outs.push(y);
            enc_caches.push(cache);
        }
        let mut levels = Vec::with_capacity(k);
        let mut acc: Option<Array2<f64>> = None;
        let (mut d, lat0) = {
            let (d, c) = self.lateral[0].forward_cached(&enc_outs[k - 1].view());
            (d, c)
        };
        let mut lat_cache = Some(lat0);
        for i in 0..k {
            if i > 0 {
                let (l, c) = self.lateral[i].forward_cached(&enc_outs[k - 1 - i].view());
                lat_cache = Some(c);
                d = ops::upsample_repeat(&d, 2) + l;
            }
            ops::check_finite(&format!("decoder{i}"), &d)?;
            let (a, anti) = self.anti[i].forward_cached(&d.view());
            let (logits, head) = self.head[i].forward_cached(&a.view());
            let p = ops::softmax_cols(&logits);
            ops::check_finite(&format!("head{i}"), &p)?;
            let up = ops::upsample_repeat(&p, 1 << (k - 1 - i));
            acc = Some(match acc {
                None => up,
                Some(mut acc) => {
                    acc += &up;
                    acc
                }
            });
            levels.push(TcfpnLevelCache {
                lateral: lat_cache.take().expect("fresh cache each level"),
                anti,
                head,
                p,
            });
        }
        let avg = acc.expect("depth >= 1") / k as f64;
        Ok((
            avg,
            TcfpnCache {
                enc: enc_caches,
                levels,
            },
        ))
    }

    fn backward(&mut self, cache: &TcfpnCache, davg: &Array2<f64>) {
        let k = self.depth();
        let kf = k as f64;
        let mut branch = Vec::with_capacity(k);
        for i in 0..k {
            let dup = davg.mapv(|v| v / kf);
            let dp = ops::upsample_repeat_backward(&dup, 1 << (k - 1 - i));
            let dlogits = ops::softmax_cols_backward(&cache.levels[i].p, &dp);
            let da = self.head[i].backward(&cache.levels[i].head, &dlogits);
            branch.push(self.anti[i].backward(&cache.levels[i].anti, &da));
        }
        let mut denc: Vec<Option<Array2<f64>>> = (0..k).map(|_| None).collect();
        let mut dd = branch.pop().expect("depth >= 1");
        for i in (1..k).rev() {
            let dlat = self.lateral[i].backward(&cache.levels[i].lateral, &dd);
            denc[k - 1 - i] = Some(dlat);
            dd = ops::upsample_repeat_backward(&dd, 2) + branch.pop().expect("one per level");
        }
        denc[k - 1] = Some(self.lateral[0].backward(&cache.levels[0].lateral, &dd));
        let mut g = denc[k - 1].take().expect("set just above");
        for s in (0..k - 1).rev() {
            let dx = self.enc[s].backward(&cache.enc[s], &g);
            g = match denc[s].take() {
                Some(lat) => dx + lat,
                None => dx,
            };
        }
    }

    fn zero_grads(&mut self) {
        for stage in &mut self.enc {
            stage.zero_grads();
        }
        for c in self
            .lateral
            .iter_mut()
            .chain(&mut self.anti)
            .chain(&mut self.head)
        {
            c.zero_grads();
        }
    }

    fn visit_tensors(&mut self, f: &mut TensorVisitor) {
        for (s, stage) in self.enc.iter_mut().enumerate() {
            stage.visit_tensors(&format!("enc{s}"), f);
        }
        for (i, c) in self.lateral.iter_mut().enumerate() {
            c.visit_tensors(&format!("lateral{i}"), f);
        }
        for (i, c) in self.anti.iter_mut().enumerate() {
            c.visit_tensors(&format!("anti{i}"), f);
        }
        for (i, c) in self.head.iter_mut().enumerate() {
            c.visit_tensors(&format!("head{i}"), f);
        }
    }

    fn read_tensors(&self, f: &mut TensorReader) {
        for (s, stage) in self.enc.iter().enumerate() {
            stage.read_tensors(&format!("enc{s}"), f);
        }
        for (i, c) in self.lateral.iter().enumerate() {
            c.read_tensors(&format!("lateral{i}"), f);
        }
        for (i, c) in self.anti.iter().enumerate() {
            c.read_tensors(&format!("anti{i}"), f);
        }
        for (i, c) in self.head.iter().enumerate() {
            c.read_tensors(&format!("head{i}"), f);
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EdTcnNet {
    enc: Vec<EncStage>,
    dec: Vec<(Conv1d, BatchNorm)>,
    head: Conv1d,
}

struct DecStageCache {
    conv: ConvCache,
    bn: BnCache,
    bn_out: Array2<f64>,
}

pub(crate) struct EdTcnCache {
    enc: Vec<EncStageCache>,
    dec: Vec<DecStageCache>,
    head: ConvCache,
    p: Array2<f64>,
}

impl EdTcnNet {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let k = cfg.depth;
        let enc: Vec<EncStage> = (0..k - 1)
            .map(|s| {
                EncStage::new(
                    rng,
                    cfg.level_channels(s),
                    cfg.level_channels(s + 1),
                    cfg.conv_width,
                )
            })
            .collect();
        // decoder widths mirror the encoder in reverse, floored at level 1
        let dec = (0..k - 1)
            .map(|j| {
                let c_in = cfg.level_channels(k - 1 - j);
                let c_out = cfg.level_channels((k - 2 - j).max(1));
                (
                    Conv1d::new(rng, c_in, c_out, cfg.conv_width),
                    BatchNorm::new(c_out),
                )
            })
            .collect();
        let head_in = if k == 1 {
            cfg.input_dim
        } else {
            cfg.level_channels(1)
        };
        let head = Conv1d::pointwise(rng, head_in, cfg.num_classes);
        Self { enc, dec, head }
    }

    fn forward_infer(&self, xp: &Array2<f64>) -> Result<Array2<f64>, NetError> {
        let mut y = xp.clone();
        for (s, stage) in self.enc.iter().enumerate() {
            y = stage.forward_infer(&y);
            ops::check_finite(&format!("enc{}", s + 1), &y)?;
        }
        for (j, (conv, bn)) in self.dec.iter().enumerate() {
            let up = ops::upsample_repeat(&y, 2);
            y = ops::relu(&bn.forward_infer(&conv.forward(&up.view())));
            ops::check_finite(&format!("dec{j}"), &y)?;
        }
        let p = ops::softmax_cols(&self.head.forward(&y.view()));
        ops::check_finite("head", &p)?;
        Ok(p)
    }

    fn forward_train(&mut self, xp: &Array2<f64>) -> Result<(Array2<f64>, EdTcnCache), NetError> {
        let mut y = xp.clone();
        let mut enc_caches = Vec::with_capacity(self.enc.len());
        for (s, stage) in self.enc.iter_mut().enumerate() {
            let (out, cache) = stage.forward_train(&y);
            ops::check_finite(&format!("enc{}", s + 1), &out)?;
            y = out;
            enc_caches.push(cache);
        }
        let mut dec_caches = Vec::with_capacity(self.dec.len());
        for (j, (conv, bn)) in self.dec.iter_mut().enumerate() {
            let up = ops::upsample_repeat(&y, 2);
            let (c, conv_cache) = conv.forward_cached(&up.view());
            let (bn_out, bn_cache) = bn.forward_train(&c);
            y = ops::relu(&bn_out);
            ops::check_finite(&format!("dec{j}"), &y)?;
            dec_caches.push(DecStageCache {
                conv: conv_cache,
                bn: bn_cache,
                bn_out,
            });
        }
        let (logits, head) = self.head.forward_cached(&y.view());
        let p = ops::softmax_cols(&logits);
        ops::check_finite("head", &p)?;
        Ok((
            p.clone(),
            EdTcnCache {
                enc: enc_caches,
                dec: dec_caches,
                head,
                p,
            },
        ))
    }

    fn backward(&mut self, cache: &EdTcnCache, dp: &Array2<f64>) {
        let dlogits = ops::softmax_cols_backward(&cache.p, dp);
        let mut g = self.head.backward(&cache.head, &dlogits);
        for (j, (conv, bn)) in self.dec.iter_mut().enumerate().rev() {
            let d = ops::relu_backward(&cache.dec[j].bn_out, &g);
            let d = bn.backward(&cache.dec[j].bn, &d);
            let d = conv.backward(&cache.dec[j].conv, &d);
            g = ops::upsample_repeat_backward(&d, 2);
        }
        for (s, stage) in self.enc.iter_mut().enumerate().rev() {
            g = stage.backward(&cache.enc[s], &g);
        }
    }

    fn zero_grads(&mut self) {
        for stage in &mut self.enc {
            stage.zero_grads();
        }
        for (conv, bn) in &mut self.dec {
            conv.zero_grads();
            bn.zero_grads();
        }
        self.head.zero_grads();
    }

    fn visit_tensors(&mut self, f: &mut TensorVisitor) {
        for (s, stage) in self.enc.iter_mut().enumerate() {
            stage.visit_tensors(&format!("enc{s}"), f);
        }
        for (j, (conv, bn)) in self.dec.iter_mut().enumerate() {
            conv.visit_tensors(&format!("dec{j}.conv"), f);
            bn.visit_tensors(&format!("dec{j}.bn"), f);
        }
        self.head.visit_tensors("head", f);
    }

    fn read_tensors(&self, f: &mut TensorReader) {
        for (s, stage) in self.enc.iter().enumerate() {
            stage.read_tensors(&format!("enc{s}"), f);
        }
        for (j, (conv, bn)) in self.dec.iter().enumerate() {
            conv.read_tensors(&format!("dec{j}.conv"), f);
            bn.read_tensors(&format!("dec{j}.bn"), f);
        }
        self.head.read_tensors("head", f);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MlpNet {
    fc1: Conv1d,
    fc2: Conv1d,
}

pub(crate) struct MlpCache {
    fc1: ConvCache,
    pre_relu: Array2<f64>,
    fc2: ConvCache,
    p: Array2<f64>,
}

impl MlpNet {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let hidden = *cfg.encoder_filters.last().expect("validated non-empty");
        Self {
            fc1: Conv1d::pointwise(rng, cfg.input_dim, hidden),
            fc2: Conv1d::pointwise(rng, hidden, cfg.num_classes),
        }
    }

    fn forward_infer(&self, x: &Array2<f64>) -> Result<Array2<f64>, NetError> {
        let h = ops::relu(&self.fc1.forward(&x.view()));
        ops::check_finite("fc1", &h)?;
        let p = ops::softmax_cols(&self.fc2.forward(&h.view()));
        ops::check_finite("fc2", &p)?;
        Ok(p)
    }

    fn forward_train(&mut self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpCache), NetError> {
        let (pre_relu, fc1) = self.fc1.forward_cached(&x.view());
        let h = ops::relu(&pre_relu);
        ops::check_finite("fc1", &h)?;
        let (logits, fc2) = self.fc2.forward_cached(&h.view());
        let p = ops::softmax_cols(&logits);
        ops::check_finite("fc2", &p)?;
        Ok((
            p.clone(),
            MlpCache {
                fc1,
                pre_relu,
                fc2,
                p,
            },
        ))
    }

    fn backward(&mut self, cache: &MlpCache, dp: &Array2<f64>) {
        let dlogits = ops::softmax_cols_backward(&cache.p, dp);
        let dh = self.fc2.backward(&cache.fc2, &dlogits);
        let dpre = ops::relu_backward(&cache.pre_relu, &dh);
        self.fc1.backward(&cache.fc1, &dpre);
    }

    fn zero_grads(&mut self) {
        self.fc1.zero_grads();
        self.fc2.zero_grads();
    }

    fn visit_tensors(&mut self, f: &mut TensorVisitor) {
        self.fc1.visit_tensors("fc1", f);
        self.fc2.visit_tensors("fc2", f);
    }

    fn read_tensors(&self, f: &mut TensorReader) {
        self.fc1.read_tensors("fc1", f);
        self.fc2.read_tensors("fc2", f);
    }
}

#[derive(Debug, Clone)]
pub(crate) enum NetCore {
    Tcfpn(TcfpnNet),
    EdTcn(Box<EdTcnNet>),
    Mlp(Box<MlpNet>),
}

pub(crate) enum NetCache {
    Tcfpn(TcfpnCache),
    EdTcn(EdTcnCache),
    Mlp(MlpCache),
}

impl NetCore {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        match cfg.kind {
            ModelKind::Tcfpn => Self::Tcfpn(TcfpnNet::new(cfg, rng)),
            ModelKind::EdTcn => Self::EdTcn(Box::new(EdTcnNet::new(cfg, rng))),
            ModelKind::Mlp => Self::Mlp(Box::new(MlpNet::new(cfg, rng))),
        }
    }

    fn forward_infer(&self, xp: &Array2<f64>) -> Result<Array2<f64>, NetError> {
        match self {
            Self::Tcfpn(n) => n.forward_infer(xp),
            Self::EdTcn(n) => n.forward_infer(xp),
            Self::Mlp(n) => n.forward_infer(xp),
        }
    }

    fn forward_train(&mut self, xp: &Array2<f64>) -> Result<(Array2<f64>, NetCache), NetError> {
        match self {
            Self::Tcfpn(n) => n.forward_train(xp).map(|(p, c)| (p, NetCache::Tcfpn(c))),
            Self::EdTcn(n) => n.forward_train(xp).map(|(p, c)| (p, NetCache::EdTcn(c))),
            Self::Mlp(n) => n.forward_train(xp).map(|(p, c)| (p, NetCache::Mlp(c))),
        }
    }

    fn backward(&mut self, cache: &NetCache, dp: &Array2<f64>) {
        match (self, cache) {
            (Self::Tcfpn(n), NetCache::Tcfpn(c)) => n.backward(c, dp),
            (Self::EdTcn(n), NetCache::EdTcn(c)) => n.backward(c, dp),
            (Self::Mlp(n), NetCache::Mlp(c)) => n.backward(c, dp),
            _ => unreachable!("cache kind matches net kind"),
        }
    }

    fn zero_grads(&mut self) {
        match self {
            Self::Tcfpn(n) => n.zero_grads(),
            Self::EdTcn(n) => n.zero_grads(),
            Self::Mlp(n) => n.zero_grads(),
        }
    }

    fn visit_tensors(&mut self, f: &mut TensorVisitor) {
        match self {
            Self::Tcfpn(n) => n.visit_tensors(f),
            Self::EdTcn(n) => n.visit_tensors(f),
            Self::Mlp(n) => n.visit_tensors(f),
        }
    }

    fn read_tensors(&self, f: &mut TensorReader) {
        match self {
            Self::Tcfpn(n) => n.read_tensors(f),
            Self::EdTcn(n) => n.read_tensors(f),
            Self::Mlp(n) => n.read_tensors(f),
        }
    }
}

/// A classifier with its configuration and per-epoch training losses.
/// Inference (`forward`, `forward_levels`) takes `&self` and is pure, so a
/// trained model can be shared across threads.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    config: ModelConfig,
    core: NetCore,
    training_log: Vec<f64>,
}

impl TrainedModel {
    /// Fresh model with seeded parameter initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, NetError> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(config, &mut rng)
    }

    pub(crate) fn init_with_rng(
        config: ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NetError> {
        config.validate()?;
        Ok(Self {
            core: NetCore::init(&config, rng),
            config,
            training_log: Vec::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn training_log(&self) -> &[f64] {
        &self.training_log
    }

    pub(crate) fn push_epoch_loss(&mut self, loss: f64) {
        self.training_log.push(loss);
    }

    fn padded_input(&self, features: &FeatureSequence) -> Result<Array2<f64>, NetError> {
        if features.dim() != self.config.input_dim {
            return Err(NetError::DimensionMismatch {
                what: "input feature dimension",
                expected: self.config.input_dim,
                got: features.dim(),
            });
        }
        let x = features.to_f64().reversed_axes();
        let m = self.config.pad_multiple();
        let np = features.n().div_ceil(m) * m;
        Ok(if np == features.n() {
            x.as_standard_layout().into_owned()
        } else {
            ops::pad_edge(&x.view(), np)
        })
    }

    fn to_labels(p: &Array2<f64>, n: usize) -> Result<SoftLabelSequence, NetError> {
        let trimmed = p.slice(s![.., ..n]);
        let rows = trimmed.t().as_standard_layout().into_owned();
        SoftLabelSequence::new(rows).map_err(|e| NetError::Internal(e.to_string()))
    }

    /// Frame-wise class probabilities in inference mode.
    pub fn forward(&self, features: &FeatureSequence) -> Result<SoftLabelSequence, NetError> {
        let xp = self.padded_input(features)?;
        let p = self.core.forward_infer(&xp)?;
        Self::to_labels(&p, features.n())
    }

    /// The per-level probability sequences whose mean is `forward`'s
    /// output. Single-element for the non-pyramid models.
    pub fn forward_levels(
        &self,
        features: &FeatureSequence,
    ) -> Result<Vec<SoftLabelSequence>, NetError> {
        match &self.core {
            NetCore::Tcfpn(net) => {
                let xp = self.padded_input(features)?;
                net.level_outputs(&xp)?
                    .iter()
                    .map(|p| Self::to_labels(p, features.n()))
                    .collect()
            }
            _ => Ok(vec![self.forward(features)?]),
        }
    }

    fn check_target(&self, features: &FeatureSequence, target: &SoftLabelSequence) -> Result<(), NetError> {
        if target.k() != self.config.num_classes {
            return Err(NetError::DimensionMismatch {
                what: "target class count",
                expected: self.config.num_classes,
                got: target.k(),
            });
        }
        if target.n() != features.n() {
            return Err(NetError::DimensionMismatch {
                what: "target frame count",
                expected: features.n(),
                got: target.n(),
            });
        }
        Ok(())
    }

    /// Mean per-frame cross-entropy of a train-mode forward pass.
    pub fn training_loss(
        &mut self,
        features: &FeatureSequence,
        target: &SoftLabelSequence,
    ) -> Result<f64, NetError> {
        self.check_target(features, target)?;
        let xp = self.padded_input(features)?;
        let (p, _) = self.core.forward_train(&xp)?;
        Ok(ce_loss_grad(&p, target).0)
    }

    /// One train-mode forward/backward pass: accumulates parameter
    /// gradients for the cross-entropy loss and returns its value.
    /// Gradients add up across calls; `zero_grads` resets them.
    pub fn loss_and_grad(
        &mut self,
        features: &FeatureSequence,
        target: &SoftLabelSequence,
    ) -> Result<f64, NetError> {
        self.check_target(features, target)?;
        let xp = self.padded_input(features)?;
        let (p, cache) = self.core.forward_train(&xp)?;
        let (loss, dp) = ce_loss_grad(&p, target);
        self.core.backward(&cache, &dp);
        Ok(loss)
    }

    pub fn zero_grads(&mut self) {
        self.core.zero_grads();
    }

    /// Walk every persistent tensor; see `layers::TensorVisitor`.
    pub fn visit_tensors(&mut self, f: &mut TensorVisitor) {
        self.core.visit_tensors(f);
    }

    /// Read-only walk in the same order as `visit_tensors`.
    pub fn read_tensors(&self, f: &mut TensorReader) {
        self.core.read_tensors(f);
    }
}

const LOG_FLOOR: f64 = 1e-300;

/// Cross-entropy against soft targets over the first `target.n()` frames of
/// the padded probability sequence, and its gradient (zero on the padding
/// tail).
fn ce_loss_grad(p: &Array2<f64>, target: &SoftLabelSequence) -> (f64, Array2<f64>) {
    let n = target.n();
    let y = target.probs();
    let mut dp = Array2::zeros(p.raw_dim());
    let mut loss = 0.0;
    for t in 0..n {
        for c in 0..p.nrows() {
            let yv = y[[t, c]];
            if yv > 0.0 {
                let pv = p[[c, t]].max(LOG_FLOOR);
                loss -= yv * pv.ln();
                dp[[c, t]] = -yv / (pv * n as f64);
            }
        }
    }
    (loss / n as f64, dp)
}
