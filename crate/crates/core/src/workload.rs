//! Convolution workloads and the searchable block space that produces them.
//!
//! A network is a flat list of [`ConvLayerDesc`]s. Searchable blocks are
//! inverted-residual triples (1x1 expand, depthwise kxk, 1x1 project); a skip
//! block contributes no layers at all.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six loop dimensions of a convolution, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dim {
    X,
    Y,
    R,
    S,
    C,
    K,
}

impl Dim {
    pub const ALL: [Dim; 6] = [Dim::X, Dim::Y, Dim::R, Dim::S, Dim::C, Dim::K];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Dim {
        Dim::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Dim::X => "X",
            Dim::Y => "Y",
            Dim::R => "R",
            Dim::S => "S",
            Dim::C => "C",
            Dim::K => "K",
        }
    }
}

impl std::fmt::Display for Dim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_one() -> u64 {
    1
}

/// One convolution workload.
///
/// `x`/`y` are output width/height, `r`/`s` kernel height/width, `c`/`k`
/// input/output channels. Depthwise layers have one input channel per output
/// channel; `groups` > 1 describes a grouped (non-depthwise) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerDesc {
    pub x: u64,
    pub y: u64,
    pub r: u64,
    pub s: u64,
    pub c: u64,
    pub k: u64,
    #[serde(default = "default_one")]
    pub stride: u64,
    #[serde(default)]
    pub depthwise: bool,
    #[serde(default = "default_one")]
    pub groups: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprints {
    pub weights: u64,
    pub ifmap: u64,
    pub ofmap: u64,
}

impl ConvLayerDesc {
    /// A standard (ungrouped) convolution with stride 1.
    pub fn standard(x: u64, y: u64, r: u64, s: u64, c: u64, k: u64) -> Self {
        ConvLayerDesc { x, y, r, s, c, k, stride: 1, depthwise: false, groups: 1 }
    }

    pub fn depthwise(x: u64, y: u64, r: u64, s: u64, channels: u64, stride: u64) -> Self {
        ConvLayerDesc { x, y, r, s, c: channels, k: channels, stride, depthwise: true, groups: 1 }
    }

    pub fn with_stride(mut self, stride: u64) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: u64) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("x", self.x),
            ("y", self.y),
            ("r", self.r),
            ("s", self.s),
            ("c", self.c),
            ("k", self.k),
            ("stride", self.stride),
            ("groups", self.groups),
        ] {
            if v == 0 {
                return Err(Error::InvalidLayer(format!("{name} must be >= 1")));
            }
        }
        if self.depthwise {
            if self.c != self.k {
                return Err(Error::InvalidLayer(format!(
                    "depthwise layer needs c == k (got c={}, k={})",
                    self.c, self.k
                )));
            }
        } else if self.c % self.groups != 0 || self.k % self.groups != 0 {
            return Err(Error::InvalidLayer(format!(
                "groups={} must divide c={} and k={}",
                self.groups, self.c, self.k
            )));
        }
        Ok(())
    }

    pub fn dim(&self, d: Dim) -> u64 {
        match d {
            Dim::X => self.x,
            Dim::Y => self.y,
            Dim::R => self.r,
            Dim::S => self.s,
            Dim::C => self.c,
            Dim::K => self.k,
        }
    }

    /// Reduction channels seen by one output channel.
    pub fn channels_per_group(&self) -> u64 {
        if self.depthwise {
            1
        } else {
            self.c / self.groups
        }
    }

    /// Trip counts of the six-deep loop nest. The C loop of a depthwise
    /// layer runs once; a grouped layer reduces over its per-group channels.
    pub fn loop_dims(&self) -> [u64; 6] {
        [self.x, self.y, self.r, self.s, self.channels_per_group(), self.k]
    }

    /// The loop dimension that selects the ifmap channel.
    pub fn ifmap_channel_dim(&self) -> Dim {
        if self.depthwise {
            Dim::K
        } else {
            Dim::C
        }
    }

    pub fn macs(&self) -> u64 {
        self.loop_dims().iter().product()
    }

    pub fn tensor_footprints(&self) -> Footprints {
        let weights = self.r * self.s * self.channels_per_group() * self.k;
        let rows = (self.x - 1) * self.stride + self.r;
        let cols = (self.y - 1) * self.stride + self.s;
        Footprints { weights, ifmap: self.c * rows * cols, ofmap: self.k * self.x * self.y }
    }
}

/// One searchable block candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockChoice {
    #[serde(default)]
    pub kernel_size: u64,
    #[serde(default)]
    pub expansion_ratio: u64,
    #[serde(default = "default_one")]
    pub group: u64,
    #[serde(default)]
    pub is_skip: bool,
}

impl BlockChoice {
    pub fn new(kernel_size: u64, expansion_ratio: u64, group: u64) -> Self {
        BlockChoice { kernel_size, expansion_ratio, group, is_skip: false }
    }

    pub fn skip() -> Self {
        BlockChoice { kernel_size: 0, expansion_ratio: 0, group: 1, is_skip: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_skip {
            return Ok(());
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::InvalidChoice(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if self.expansion_ratio == 0 {
            return Err(Error::InvalidChoice("expansion_ratio must be >= 1".into()));
        }
        if self.group == 0 {
            return Err(Error::InvalidChoice("group must be >= 1".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if self.is_skip {
            "skip".to_string()
        } else if self.group == 1 {
            format!("k{}_e{}", self.kernel_size, self.expansion_ratio)
        } else {
            format!("k{}_e{}_g{}", self.kernel_size, self.expansion_ratio, self.group)
        }
    }
}

/// Expands a block into its inverted-residual layers: 1x1 expand, depthwise
/// kxk (carrying the stride), 1x1 project. Skip blocks expand to nothing.
pub fn expand_block(
    choice: &BlockChoice,
    in_channels: u64,
    out_channels: u64,
    spatial: u64,
    stride: u64,
) -> Result<Vec<ConvLayerDesc>> {
    choice.validate()?;
    if choice.is_skip {
        return Ok(Vec::new());
    }
    if in_channels == 0 || out_channels == 0 || spatial == 0 || stride == 0 {
        return Err(Error::InvalidLayer("block shapes must be >= 1".into()));
    }
    if spatial % stride != 0 {
        return Err(Error::InvalidLayer(format!("spatial size {spatial} not divisible by stride {stride}")));
    }
    let mid = in_channels * choice.expansion_ratio;
    let g = choice.group;
    if in_channels % g != 0 || mid % g != 0 || out_channels % g != 0 {
        return Err(Error::InvalidChoice(format!("group {g} must divide channels {in_channels}/{mid}/{out_channels}")));
    }
    let k = choice.kernel_size;
    let out_spatial = spatial / stride;
    let expand = ConvLayerDesc::standard(spatial, spatial, 1, 1, in_channels, mid).with_groups(g);
    let dw = ConvLayerDesc::depthwise(out_spatial, out_spatial, k, k, mid, stride);
    let project = ConvLayerDesc::standard(out_spatial, out_spatial, 1, 1, mid, out_channels).with_groups(g);
    Ok(vec![expand, dw, project])
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDesc {
    pub layers: Vec<ConvLayerDesc>,
}

impl NetworkDesc {
    pub fn new(layers: Vec<ConvLayerDesc>) -> Self {
        NetworkDesc { layers }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.validate())
    }
}

/// One searchable position in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSlot {
    pub out_channels: u64,
    #[serde(default = "default_one")]
    pub stride: u64,
}

/// The searchable network space: a fixed sequence of block positions, each
/// choosing one of the shared candidates. Skip is only admissible where a
/// position keeps its channel count and spatial size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpace {
    pub input_channels: u64,
    pub input_spatial: u64,
    pub layers: Vec<LayerSlot>,
    pub candidates: Vec<BlockChoice>,
}

impl NetworkSpace {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// (in_channels, spatial) entering position `l`.
    pub fn input_shape(&self, l: usize) -> (u64, u64) {
        let mut ch = self.input_channels;
        let mut sp = self.input_spatial;
        for slot in &self.layers[..l] {
            ch = slot.out_channels;
            sp /= slot.stride;
        }
        (ch, sp)
    }

    pub fn allowed(&self, l: usize, k: usize) -> bool {
        let cand = &self.candidates[k];
        if !cand.is_skip {
            return true;
        }
        let (ch, _) = self.input_shape(l);
        let slot = &self.layers[l];
        slot.stride == 1 && slot.out_channels == ch
    }

    pub fn allowed_mask(&self) -> Vec<Vec<bool>> {
        (0..self.num_layers()).map(|l| (0..self.num_candidates()).map(|k| self.allowed(l, k)).collect()).collect()
    }

    /// Layers produced by candidate `k` at position `l`.
    pub fn candidate_layers(&self, l: usize, k: usize) -> Result<Vec<ConvLayerDesc>> {
        let (ch, sp) = self.input_shape(l);
        let slot = &self.layers[l];
        expand_block(&self.candidates[k], ch, slot.out_channels, sp, slot.stride)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network space needs at least one layer".into()));
        }
        if self.candidates.is_empty() {
            return Err(Error::Config("network space needs at least one candidate".into()));
        }
        for l in 0..self.num_layers() {
            if !(0..self.num_candidates()).any(|k| self.allowed(l, k)) {
                return Err(Error::Config(format!("layer {l} has no admissible candidate")));
            }
            for k in 0..self.num_candidates() {
                self.candidate_layers(l, k)?;
            }
        }
        Ok(())
    }

    /// Expands one candidate index per position into a concrete network.
    pub fn expand(&self, choices: &[usize]) -> Result<NetworkDesc> {
        if choices.len() != self.num_layers() {
            return Err(Error::ShapeMismatch(format!("expected {} choices, got {}", self.num_layers(), choices.len())));
        }
        let mut layers = Vec::new();
        for (l, &k) in choices.iter().enumerate() {
            if k >= self.num_candidates() || !self.allowed(l, k) {
                return Err(Error::InvalidChoice(format!("candidate {k} not admissible at layer {l}")));
            }
            layers.extend(self.candidate_layers(l, k)?);
        }
        Ok(NetworkDesc::new(layers))
    }

    /// Upper bound on the number of conv layers any expansion can produce.
    pub fn max_conv_layers(&self) -> usize {
        (0..self.num_layers())
            .map(|l| {
                (0..self.num_candidates())
                    .filter(|&k| self.allowed(l, k))
                    .map(|k| if self.candidates[k].is_skip { 0 } else { 3 })
                    .max()
                    .unwrap_or(0)
            })
            .sum()
    }

    /// Per-dimension least common multiple of the loop trip counts of every
    /// layer any candidate can produce.
    pub fn reference_dims(&self) -> Result<[u64; 6]> {
        let mut dims = [1u64; 6];
        for l in 0..self.num_layers() {
            for k in 0..self.num_candidates() {
                if !self.allowed(l, k) {
                    continue;
                }
                for layer in self.candidate_layers(l, k)? {
                    merge_lcm(&mut dims, &layer.loop_dims());
                }
            }
        }
        Ok(dims)
    }
}

pub fn merge_lcm(acc: &mut [u64; 6], dims: &[u64; 6]) {
    for (a, &d) in acc.iter_mut().zip(dims) {
        *a = lcm(*a, d);
    }
}

/// Reference dimensions covering every layer of `net`.
pub fn network_reference_dims(net: &NetworkDesc) -> [u64; 6] {
    let mut dims = [1u64; 6];
    for layer in &net.layers {
        merge_lcm(&mut dims, &layer.loop_dims());
    }
    dims
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub fn lcm(a: u64, b: u64) -> u64 {
    if a == 0 || b == 0 {
        return 0;
    }
    a / gcd(a, b) * b
}
