//! Tracker network: feature extraction stack, channel attention, feature
//! concatenation and the fusion/regression head, in four variants.

mod forward;
mod serialize;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{conv_output_dim, Param, RunningStats, Tensor};
use crate::seeds::{derive_seed, SeedPurpose};

pub use forward::{
    can_weight, pool_to_common, AttentionWeights, BatchTrace, Gradients, PatchPair, Prediction,
};
pub use serialize::{load_model, read_model, save_model, write_model, MODEL_MAGIC};

/// Number of feature levels tapped from the extraction stack.
pub const LEVELS: usize = 5;
/// Spatial size every level is pooled to before attention and fusion.
pub const COMMON_SIZE: usize = 6;
/// Hidden width of each attention perceptron (one unit per pooled activation).
pub const CAN_HIDDEN: usize = COMMON_SIZE * COMMON_SIZE;

/// Kernel, stride, padding and optional trailing max-pool `(k, stride)` of
/// each extraction layer.
const FEN_LAYERS: [(usize, usize, usize, Option<(usize, usize)>); LEVELS] = [
    (7, 2, 0, Some((3, 2))),
    (5, 2, 2, Some((3, 2))),
    (3, 1, 1, None),
    (3, 1, 1, None),
    (3, 1, 1, Some((3, 2))),
];

/// Spatial size of each level's output for a 224 input.
pub const LEVEL_SIZES: [usize; LEVELS] = [54, 13, 13, 13, 6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Two streams, all levels, channel attention.
    Aftn,
    /// Two streams, all levels, no attention.
    AftnNoAtt,
    /// Current frame only, all levels, channel attention.
    AftnC,
    /// Two streams, last level only, no attention.
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Aftn, Variant::AftnNoAtt, Variant::AftnC, Variant::Baseline];

    pub fn streams(self) -> usize {
        match self {
            Variant::AftnC => 1,
            _ => 2,
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::Aftn | Variant::AftnC)
    }

    /// Feature levels (0-based) that feed the head.
    pub fn levels(self) -> &'static [usize] {
        match self {
            Variant::Baseline => &[4],
            _ => &[0, 1, 2, 3, 4],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Aftn => "aftn",
            Variant::AftnNoAtt => "aftn-no-att",
            Variant::AftnC => "aftn-c",
            Variant::Baseline => "baseline",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::Aftn => 0,
            Variant::AftnNoAtt => 1,
            Variant::AftnC => 2,
            Variant::Baseline => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.code() == code)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected aftn, aftn-no-att, aftn-c or baseline)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FenConfig {
    pub channels: [usize; LEVELS],
    pub input_size: usize,
    pub frozen: bool,
    /// Constant multiplier applied to mean-subtracted patches before the
    /// first convolution.
    pub input_scale: f64,
}

impl Default for FenConfig {
    fn default() -> Self {
        Self {
            channels: [4, 8, 16, 16, 16],
            input_size: 224,
            frozen: true,
            input_scale: 1.0 / 128.0,
        }
    }
}

impl FenConfig {
    /// Full-width channel counts.
    pub fn full() -> Self {
        Self {
            channels: [96, 256, 512, 512, 512],
            ..Self::default()
        }
    }

    /// Spatial size of each level for the configured input size.
    pub fn level_sizes(&self) -> Result<[usize; LEVELS]> {
        let mut size = self.input_size;
        let mut out = [0; LEVELS];
        for (l, &(k, s, p, pool)) in FEN_LAYERS.iter().enumerate() {
            size = conv_output_dim(size, k, s, p)?;
            if let Some((pk, ps)) = pool {
                if size < pk {
                    return Err(Error::dim("fen", format!("level {} too small to pool", l + 1)));
                }
                size = (size - pk) / ps + 1;
            }
            out[l] = size;
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(Error::Config("every level needs at least one channel".into()));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::Config("input_scale must be positive".into()));
        }
        let sizes = self.level_sizes().map_err(|e| Error::Config(e.to_string()))?;
        if sizes != LEVEL_SIZES {
            return Err(Error::Config(format!(
                "input size {} yields level sizes {sizes:?}, expected {LEVEL_SIZES:?}",
                self.input_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Number of 1×1 fusion kernels.
    pub fusion_kernels: usize,
    /// Width of the two hidden fully connected layers.
    pub fc_units: usize,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            fusion_kernels: 32,
            fc_units: 128,
            dropout: 0.5,
        }
    }
}

impl HeadConfig {
    pub fn full() -> Self {
        Self {
            fusion_kernels: 256,
            fc_units: 4096,
            dropout: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.fusion_kernels == 0 || self.fc_units == 0 {
            return Err(Error::Config("head sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Index of a parameter in the model's arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub pool: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub(crate) struct CanLayer {
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadLayers {
    pub fuse_w: ParamId,
    pub fuse_b: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
    pub fc3_w: ParamId,
    pub fc3_b: ParamId,
}

/// Assembled tracker network.
#[derive(Debug, Clone)]
pub struct TrackerModel {
    variant: Variant,
    fen_config: FenConfig,
    head_config: HeadConfig,
    seed: u64,
    mean_rgb: [f64; 3],
    params: Vec<Param>,
    pub(crate) fen: Vec<ConvLayer>,
    pub(crate) cans: Option<Vec<CanLayer>>,
    pub(crate) head: HeadLayers,
    pub(crate) bn_stats: RunningStats,
}

struct Builder {
    params: Vec<Param>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize], bound: f64, decay: bool) -> ParamId {
        let n: usize = shape.iter().product();
        let data = if bound == 0.0 {
            vec![0.0; n]
        } else {
            (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
        };
        let value = Tensor::new(shape.to_vec(), data).expect("builder shapes are valid");
        self.params.push(Param::new(name, value, decay));
        ParamId(self.params.len() - 1)
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.params.push(Param::new(name, Tensor::filled(shape, value), false));
        ParamId(self.params.len() - 1)
    }
}

fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

impl TrackerModel {
    /// Build a freshly initialized model. All initial values derive from `seed`.
    pub fn new(variant: Variant, fen_config: FenConfig, head_config: HeadConfig, seed: u64) -> Result<Self> {
        fen_config.validate()?;
        head_config.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedPurpose::Init)),
        };

        let mut fen = Vec::with_capacity(LEVELS);
        let mut c_in = 3;
        for (l, &(k, stride, pad, pool)) in FEN_LAYERS.iter().enumerate() {
            let c_out = fen_config.channels[l];
            let w = b.push(format!("fen.conv{}.weight", l + 1), &[c_out, c_in, k, k], he_bound(c_in * k * k), true);
            let bias = b.push(format!("fen.conv{}.bias", l + 1), &[c_out], 0.0, false);
            fen.push(ConvLayer { w, b: bias, stride, pad, pool });
            c_in = c_out;
        }

        // The output layer of each attention perceptron starts at zero, so
        // every channel weight is exactly 1 at initialization.
        let cans = variant.uses_attention().then(|| {
            (1..=LEVELS)
                .map(|l| CanLayer {
                    fc1_w: b.push(format!("can{l}.fc1.weight"), &[CAN_HIDDEN, CAN_HIDDEN], he_bound(CAN_HIDDEN), true),
                    fc1_b: b.push(format!("can{l}.fc1.bias"), &[CAN_HIDDEN], 0.0, false),
                    fc2_w: b.push(format!("can{l}.fc2.weight"), &[1, CAN_HIDDEN], 0.0, true),
                    fc2_b: b.push(format!("can{l}.fc2.bias"), &[1], 0.0, false),
                })
                .collect()
        });

        let in_channels: usize =
            variant.streams() * variant.levels().iter().map(|&l| fen_config.channels[l]).sum::<usize>();
        let f = head_config.fusion_kernels;
        let u = head_config.fc_units;
        let flat = f * CAN_HIDDEN;
        let head = HeadLayers {
            fuse_w: b.push("head.fuse.weight".into(), &[f, in_channels, 1, 1], he_bound(in_channels), true),
            fuse_b: b.push("head.fuse.bias".into(), &[f], 0.0, false),
            bn_gamma: b.constant("head.bn.gamma".into(), &[f], 1.0),
            bn_beta: b.constant("head.bn.beta".into(), &[f], 0.0),
            fc1_w: b.push("head.fc1.weight".into(), &[u, flat], he_bound(flat), true),
            fc1_b: b.push("head.fc1.bias".into(), &[u], 0.0, false),
            fc2_w: b.push("head.fc2.weight".into(), &[u, u], he_bound(u), true),
            fc2_b: b.push("head.fc2.bias".into(), &[u], 0.0, false),
            fc3_w: b.push("head.fc3.weight".into(), &[3, u], (1.0 / u as f64).sqrt(), true),
            fc3_b: b.push("head.fc3.bias".into(), &[3], 0.0, false),
        };

        let mut model = Self {
            variant,
            fen_config,
            head_config,
            seed,
            mean_rgb: [128.0; 3],
            params: b.params,
            fen,
            cans,
            head,
            bn_stats: RunningStats::new(f),
        };
        model.set_fen_frozen(fen_config.frozen);
        Ok(model)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn fen_config(&self) -> &FenConfig {
        &self.fen_config
    }

    pub fn head_config(&self) -> &HeadConfig {
        &self.head_config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Per-channel mean subtracted from every patch before it enters the
    /// network; set from the training split.
    pub fn mean_rgb(&self) -> [f64; 3] {
        self.mean_rgb
    }

    pub fn set_mean_rgb(&mut self, mean: [f64; 3]) {
        self.mean_rgb = mean;
    }

    pub fn input_size(&self) -> usize {
        self.fen_config.input_size
    }

    /// Channels entering the 1×1 fusion convolution.
    pub fn fusion_in_channels(&self) -> usize {
        self.param(self.head.fuse_w).shape()[1]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn param_by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn running_stats(&self) -> &RunningStats {
        &self.bn_stats
    }

    pub fn is_fen_param(&self, id: ParamId) -> bool {
        self.fen.iter().any(|c| c.w == id || c.b == id)
    }

    pub fn set_fen_frozen(&mut self, frozen: bool) {
        self.fen_config.frozen = frozen;
        let ids: Vec<ParamId> = self.fen.iter().flat_map(|c| [c.w, c.b]).collect();
        for id in ids {
            self.params[id.0].trainable = !frozen;
        }
    }

    /// Set every attention parameter to zero (all channel weights become 1).
    pub fn zero_attention(&mut self) {
        let Some(cans) = &self.cans else { return };
        let ids: Vec<ParamId> = cans
            .iter()
            .flat_map(|c| [c.fc1_w, c.fc1_b, c.fc2_w, c.fc2_b])
            .collect();
        for id in ids {
            self.params[id.0].value.data_mut().fill(0.0);
        }
    }

    /// Copy every parameter that exists (same name and shape) in `other`.
    pub fn copy_shared_params_from(&mut self, other: &TrackerModel) {
        for p in &mut self.params {
            if let Some(src) = other.param_by_name(&p.name) {
                if src.shape() == p.shape() {
                    p.value = src.value.clone();
                }
            }
        }
        if self.bn_stats.mean.len() == other.bn_stats.mean.len() {
            self.bn_stats = other.bn_stats.clone();
        }
    }

    /// Add accumulated per-batch gradients into the parameters' grad buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(grads.buffers()) {
            if let Some(g) = g {
                for (a, b) in p.grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Param::zero_grad);
    }
}
