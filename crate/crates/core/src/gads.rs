//! The generic accelerator design space.
//!
//! An accelerator is a four-level memory hierarchy (DRAM, global buffer, PE
//! array behind a NoC, per-PE register file) described as a tiled loop nest.
//! Searchable parameters are: loop order at DRAM/GB/RF, loop size (tile
//! factor) at GB/PE/RF, the NoC dataflow, the PE budget and the
//! multi-cycle/pipeline micro-architecture. DRAM loop sizes are never searched;
//! they are the residual `dim / (gb * pe * rf)`.
//!
//! Tile factors are sampled as a divisor chain against per-dimension reference
//! sizes (RF first, then PE from the remaining quotient, then GB), so every
//! sampled design is product-legal. A design shared by several layers is
//! projected onto each layer with a gcd chain, see [`LayerMapping::project`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::costmodel::HardwareCostTables;
use crate::error::{Error, Result};
use crate::workload::{gcd, ConvLayerDesc, Dim, NetworkDesc};

pub const NUM_DIMS: usize = 6;

/// NoC dataflow: which loop dimensions the PE array may run as parallel-for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NocChoice {
    /// Output partial sums in parallel: K, Y, X.
    OutputParallel,
    /// Kernels in parallel: K, C, R, S.
    KernelParallel,
    /// Kernel and output dimensions in parallel: K, R, X.
    KernelOutputParallel,
}

impl NocChoice {
    pub const ALL: [NocChoice; 3] =
        [NocChoice::OutputParallel, NocChoice::KernelParallel, NocChoice::KernelOutputParallel];

    pub fn parallel_dims(self) -> &'static [Dim] {
        match self {
            NocChoice::OutputParallel => &[Dim::K, Dim::Y, Dim::X],
            NocChoice::KernelParallel => &[Dim::K, Dim::C, Dim::R, Dim::S],
            NocChoice::KernelOutputParallel => &[Dim::K, Dim::R, Dim::X],
        }
    }

    pub fn allows(self, d: Dim) -> bool {
        self.parallel_dims().contains(&d)
    }
}

/// Per-dimension factors, serialized as `{"X": .., "Y": .., ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "DimFactorsRepr", into = "DimFactorsRepr")]
pub struct DimFactors(pub [u64; NUM_DIMS]);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimFactorsRepr {
    #[serde(rename = "X")]
    x: u64,
    #[serde(rename = "Y")]
    y: u64,
    #[serde(rename = "R")]
    r: u64,
    #[serde(rename = "S")]
    s: u64,
    #[serde(rename = "C")]
    c: u64,
    #[serde(rename = "K")]
    k: u64,
}

impl From<DimFactorsRepr> for DimFactors {
    fn from(r: DimFactorsRepr) -> Self {
        DimFactors([r.x, r.y, r.r, r.s, r.c, r.k])
    }
}

impl From<DimFactors> for DimFactorsRepr {
    fn from(f: DimFactors) -> Self {
        let [x, y, r, s, c, k] = f.0;
        DimFactorsRepr { x, y, r, s, c, k }
    }
}

impl DimFactors {
    pub const ONES: DimFactors = DimFactors([1; NUM_DIMS]);

    pub fn get(&self, d: Dim) -> u64 {
        self.0[d.index()]
    }

    pub fn set(&mut self, d: Dim, v: u64) {
        self.0[d.index()] = v;
    }

    pub fn product(&self) -> u64 {
        self.0.iter().product()
    }
}

impl Default for DimFactors {
    fn default() -> Self {
        DimFactors::ONES
    }
}

pub type LoopOrder = [Dim; NUM_DIMS];

pub const CANONICAL_ORDER: LoopOrder = Dim::ALL;

/// Loop orders at the three temporal levels, outermost loop first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopOrders {
    pub dram: LoopOrder,
    pub gb: LoopOrder,
    pub rf: LoopOrder,
}

impl Default for LoopOrders {
    fn default() -> Self {
        LoopOrders { dram: CANONICAL_ORDER, gb: CANONICAL_ORDER, rf: CANONICAL_ORDER }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileFactors {
    pub gb: DimFactors,
    pub pe: DimFactors,
    pub rf: DimFactors,
}

/// One complete dataflow: NoC, loop orders and tile factors. A multi-cycle
/// accelerator has one; a pipelined accelerator has one per chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataflowDesign {
    pub noc: NocChoice,
    pub loop_order: LoopOrders,
    pub tiles: TileFactors,
}

impl DataflowDesign {
    /// All tiles 1, canonical orders: every loop runs at DRAM level.
    pub fn trivial(noc: NocChoice) -> Self {
        DataflowDesign { noc, loop_order: LoopOrders::default(), tiles: TileFactors::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExecMode {
    MultiCycle,
    /// `chunk_of_layer[i]` is the chunk (and design index) executing layer i.
    Pipeline {
        chunk_of_layer: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorConfig {
    pub mode: ExecMode,
    pub max_pes: u64,
    pub designs: Vec<DataflowDesign>,
}

impl AcceleratorConfig {
    pub fn multi_cycle(max_pes: u64, design: DataflowDesign) -> Self {
        AcceleratorConfig { mode: ExecMode::MultiCycle, max_pes, designs: vec![design] }
    }

    /// Design index executing layer `i`.
    pub fn design_index(&self, layer: usize) -> usize {
        match &self.mode {
            ExecMode::MultiCycle => 0,
            ExecMode::Pipeline { chunk_of_layer } => chunk_of_layer.get(layer).copied().unwrap_or(0),
        }
    }

    pub fn num_chunks(&self) -> usize {
        match &self.mode {
            ExecMode::MultiCycle => 1,
            ExecMode::Pipeline { .. } => self.designs.len(),
        }
    }
}

// ---------------------------------------------------------------------------
// Per-layer projection

pub const LEVEL_DRAM: usize = 0;
pub const LEVEL_GB: usize = 1;
pub const LEVEL_PE: usize = 2;
pub const LEVEL_RF: usize = 3;

/// A design resolved against one layer: exact trip counts per level.
/// `trips[level][dim]` multiply to the layer's loop dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMapping {
    pub layer: ConvLayerDesc,
    pub trips: [[u64; NUM_DIMS]; 4],
    pub orders: LoopOrders,
    pub noc: NocChoice,
}

impl LayerMapping {
    /// Projects a (possibly shared) design onto `layer` with a gcd chain:
    /// `rf' = gcd(rf, D)`, `pe' = gcd(pe, D/rf')`, `gb' = gcd(gb, D/(rf'pe'))`,
    /// DRAM takes the residual. Fails if a PE tile lands on a dimension the
    /// NoC cannot parallelize.
    pub fn project(layer: &ConvLayerDesc, design: &DataflowDesign) -> Result<LayerMapping> {
        let dims = layer.loop_dims();
        let mut trips = [[1u64; NUM_DIMS]; 4];
        for d in Dim::ALL {
            let i = d.index();
            let full = dims[i];
            let rf = gcd(design.tiles.rf.get(d).max(1), full);
            let pe = gcd(design.tiles.pe.get(d).max(1), full / rf);
            let gb = gcd(design.tiles.gb.get(d).max(1), full / (rf * pe));
            if pe > 1 && !design.noc.allows(d) {
                return Err(Error::IllegalConfig(format!(
                    "PE tile {pe} on {d} not parallelizable under {:?}",
                    design.noc
                )));
            }
            trips[LEVEL_RF][i] = rf;
            trips[LEVEL_PE][i] = pe;
            trips[LEVEL_GB][i] = gb;
            trips[LEVEL_DRAM][i] = full / (rf * pe * gb);
        }
        Ok(LayerMapping { layer: *layer, trips, orders: design.loop_order, noc: design.noc })
    }

    /// Like [`project`](Self::project) but requires the design's tiles to
    /// chain-divide the layer exactly (no gcd truncation).
    pub fn exact(layer: &ConvLayerDesc, design: &DataflowDesign) -> Result<LayerMapping> {
        let m = Self::project(layer, design)?;
        for d in Dim::ALL {
            let i = d.index();
            let t = &design.tiles;
            if m.trips[LEVEL_RF][i] != t.rf.get(d)
                || m.trips[LEVEL_PE][i] != t.pe.get(d)
                || m.trips[LEVEL_GB][i] != t.gb.get(d)
            {
                return Err(Error::IllegalConfig(format!(
                    "tiles on {d} (gb {}, pe {}, rf {}) do not divide {}",
                    t.gb.get(d),
                    t.pe.get(d),
                    t.rf.get(d),
                    layer.loop_dims()[i]
                )));
            }
        }
        Ok(m)
    }

    pub fn pe_used(&self) -> u64 {
        self.trips[LEVEL_PE].iter().product()
    }

    /// Tile extent per dimension resident at a level (product of the level's
    /// own factor and everything inside it). Level GB covers GB*PE*RF; RF
    /// covers RF only.
    pub fn tile_extent(&self, level: usize) -> [u64; NUM_DIMS] {
        let mut ext = [1u64; NUM_DIMS];
        for (i, e) in ext.iter_mut().enumerate() {
            *e = match level {
                LEVEL_GB => self.trips[LEVEL_GB][i] * self.trips[LEVEL_PE][i] * self.trips[LEVEL_RF][i],
                LEVEL_PE => self.trips[LEVEL_PE][i] * self.trips[LEVEL_RF][i],
                LEVEL_RF => self.trips[LEVEL_RF][i],
                _ => self.layer.loop_dims()[i],
            };
        }
        ext
    }
}

// ---------------------------------------------------------------------------
// Space definition

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PipelineOption {
    MultiCycle,
    Pipeline { chunks: usize },
}

impl PipelineOption {
    pub fn chunks(self) -> usize {
        match self {
            PipelineOption::MultiCycle => 1,
            PipelineOption::Pipeline { chunks } => chunks,
        }
    }
}

/// Whether a level's loop order is searched or pinned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderSearch {
    Search,
    Fixed(LoopOrder),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderSearchSpec {
    pub dram: OrderSearch,
    pub gb: OrderSearch,
    pub rf: OrderSearch,
}

impl Default for OrderSearchSpec {
    fn default() -> Self {
        OrderSearchSpec { dram: OrderSearch::Search, gb: OrderSearch::Search, rf: OrderSearch::Search }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    #[serde(default)]
    pub dsp_limit: Option<u64>,
    #[serde(default)]
    pub area_limit: Option<f64>,
}

fn all_dims() -> Vec<Dim> {
    Dim::ALL.to_vec()
}

fn all_nocs() -> Vec<NocChoice> {
    NocChoice::ALL.to_vec()
}

/// Declarative description of an accelerator space; turned into an
/// [`AcceleratorSpace`] once reference dimensions are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccelSpaceSpec {
    #[serde(default = "all_nocs")]
    pub noc_options: Vec<NocChoice>,
    pub pe_count_options: Vec<u64>,
    pub pipeline_options: Vec<PipelineOption>,
    #[serde(default)]
    pub loop_orders: OrderSearchSpec,
    /// Dimensions that get tile slots; the rest stay at DRAM level.
    #[serde(default = "all_dims")]
    pub tile_dims: Vec<Dim>,
    #[serde(default)]
    pub constraints: Constraints,
    /// Overrides the reference sizes derived from the workload.
    #[serde(default)]
    pub reference_dims: Option<DimFactors>,
}

impl Default for AccelSpaceSpec {
    fn default() -> Self {
        AccelSpaceSpec {
            noc_options: all_nocs(),
            pe_count_options: vec![16, 32, 64, 128, 256],
            pipeline_options: vec![
                PipelineOption::MultiCycle,
                PipelineOption::Pipeline { chunks: 2 },
                PipelineOption::Pipeline { chunks: 3 },
            ],
            loop_orders: OrderSearchSpec::default(),
            tile_dims: all_dims(),
            constraints: Constraints { dsp_limit: Some(256), area_limit: None },
            reference_dims: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderLevel {
    Dram,
    Gb,
    Rf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileLevel {
    Gb,
    Pe,
    Rf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Mode,
    MaxPes,
    ChunkOf(usize),
    Noc(usize),
    Order(usize, OrderLevel),
    Tile(usize, TileLevel, Dim),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub kind: SlotKind,
    /// Number of options; for an order slot this is n (its logits are n x n).
    pub options: usize,
    pub is_order: bool,
}

impl Slot {
    pub fn logit_len(&self) -> usize {
        if self.is_order {
            self.options * self.options
        } else {
            self.options
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct GroupSlots {
    noc: usize,
    orders: [Option<usize>; 3],
    /// [RF, PE, GB][dim]
    tiles: [[Option<usize>; NUM_DIMS]; 3],
}

/// A concrete, indexed accelerator space: every categorical parameter is a
/// slot with a fixed option list.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceleratorSpace {
    pub spec: AccelSpaceSpec,
    pub reference_dims: [u64; NUM_DIMS],
    /// Number of chunk-assignment slots (max layers a network may have).
    pub layer_slots: usize,
    pub tile_options: [Vec<u64>; NUM_DIMS],
    pub slots: Vec<Slot>,
    mode_slot: usize,
    pes_slot: usize,
    chunk_slots: Vec<usize>,
    groups: Vec<GroupSlots>,
}

/// Receives one decision per slot while a config is being built.
pub trait Decider {
    /// Picks an option index for a categorical slot; `mask[i]` is false for
    /// options that are structurally excluded.
    fn categorical(&mut self, slot: usize, mask: &[bool]) -> usize;
    fn order(&mut self, slot: usize) -> LoopOrder;
}

impl AcceleratorSpace {
    pub fn new(spec: AccelSpaceSpec, reference_dims: [u64; NUM_DIMS], layer_slots: usize) -> Result<Self> {
        if spec.noc_options.is_empty() || spec.pe_count_options.is_empty() || spec.pipeline_options.is_empty() {
            return Err(Error::Config("accelerator space has an empty option list".into()));
        }
        if spec.pe_count_options.contains(&0) {
            return Err(Error::Config("pe_count_options must be >= 1".into()));
        }
        for p in &spec.pipeline_options {
            if p.chunks() == 0 {
                return Err(Error::Config("pipeline needs at least one chunk".into()));
            }
        }
        for o in [spec.loop_orders.dram, spec.loop_orders.gb, spec.loop_orders.rf] {
            if let OrderSearch::Fixed(order) = o {
                check_permutation(&order)?;
            }
        }
        let reference_dims = match spec.reference_dims {
            Some(f) => f.0,
            None => reference_dims,
        };
        if reference_dims.contains(&0) {
            return Err(Error::Config("reference dims must be >= 1".into()));
        }
        let tile_dims: BTreeSet<Dim> = spec.tile_dims.iter().copied().collect();
        let tile_options: [Vec<u64>; NUM_DIMS] = std::array::from_fn(|i| {
            if tile_dims.contains(&Dim::from_index(i)) {
                divisors(reference_dims[i])
            } else {
                vec![1]
            }
        });

        let max_chunks = spec.pipeline_options.iter().map(|p| p.chunks()).max().unwrap_or(1);
        let has_pipeline = spec.pipeline_options.iter().any(|p| matches!(p, PipelineOption::Pipeline { .. }));

        let mut slots = Vec::new();
        let mut push = |kind: SlotKind, options: usize, is_order: bool| {
            slots.push(Slot { kind, options, is_order });
            slots.len() - 1
        };
        let mode_slot = push(SlotKind::Mode, spec.pipeline_options.len(), false);
        let pes_slot = push(SlotKind::MaxPes, spec.pe_count_options.len(), false);
        let chunk_slots = if has_pipeline {
            (0..layer_slots).map(|i| push(SlotKind::ChunkOf(i), max_chunks, false)).collect()
        } else {
            Vec::new()
        };
        let mut groups = Vec::new();
        for g in 0..max_chunks {
            let noc = push(SlotKind::Noc(g), spec.noc_options.len(), false);
            let mut orders = [None; 3];
            for (j, (lvl, search)) in [
                (OrderLevel::Dram, spec.loop_orders.dram),
                (OrderLevel::Gb, spec.loop_orders.gb),
                (OrderLevel::Rf, spec.loop_orders.rf),
            ]
            .into_iter()
            .enumerate()
            {
                if search == OrderSearch::Search {
                    orders[j] = Some(push(SlotKind::Order(g, lvl), NUM_DIMS, true));
                }
            }
            let mut tiles = [[None; NUM_DIMS]; 3];
            for d in Dim::ALL {
                if !tile_dims.contains(&d) || reference_dims[d.index()] == 1 {
                    continue;
                }
                let n = tile_options[d.index()].len();
                for (j, lvl) in [TileLevel::Rf, TileLevel::Pe, TileLevel::Gb].into_iter().enumerate() {
                    tiles[j][d.index()] = Some(push(SlotKind::Tile(g, lvl, d), n, false));
                }
            }
            groups.push(GroupSlots { noc, orders, tiles });
        }
        Ok(AcceleratorSpace {
            spec,
            reference_dims,
            layer_slots,
            tile_options,
            slots,
            mode_slot,
            pes_slot,
            chunk_slots,
            groups,
        })
    }

    /// A space sized for one specific network.
    pub fn for_network(spec: AccelSpaceSpec, net: &NetworkDesc) -> Result<Self> {
        let refs = crate::workload::network_reference_dims(net);
        Self::new(spec, refs, net.len())
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// Builds one config for a network with `num_layers` layers, asking
    /// `decider` for every slot actually used. Tile options are masked into a
    /// divisor chain (RF, then PE restricted to NoC dimensions, then GB).
    pub fn build_config(&self, num_layers: usize, decider: &mut dyn Decider) -> Result<AcceleratorConfig> {
        let spec = &self.spec;
        let mode_pick = decider.categorical(self.mode_slot, &vec![true; spec.pipeline_options.len()]);
        let pes_pick = decider.categorical(self.pes_slot, &vec![true; spec.pe_count_options.len()]);
        let max_pes = spec.pe_count_options[pes_pick];
        let option = spec.pipeline_options[mode_pick];
        let (mode, chunks) = match option {
            PipelineOption::MultiCycle => (ExecMode::MultiCycle, 1),
            PipelineOption::Pipeline { chunks } => {
                if num_layers > self.chunk_slots.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "network has {num_layers} layers but the space has {} chunk slots",
                        self.chunk_slots.len()
                    )));
                }
                let max_chunks = self.groups.len();
                let mask: Vec<bool> = (0..max_chunks).map(|c| c < chunks).collect();
                let assign = (0..num_layers).map(|i| decider.categorical(self.chunk_slots[i], &mask)).collect();
                (ExecMode::Pipeline { chunk_of_layer: assign }, chunks)
            }
        };
        let mut designs = Vec::with_capacity(chunks);
        for g in &self.groups[..chunks] {
            let noc_pick = decider.categorical(g.noc, &vec![true; spec.noc_options.len()]);
            let noc = spec.noc_options[noc_pick];
            let fixed = [spec.loop_orders.dram, spec.loop_orders.gb, spec.loop_orders.rf];
            let mut orders = [CANONICAL_ORDER; 3];
            for j in 0..3 {
                orders[j] = match (g.orders[j], fixed[j]) {
                    (Some(slot), _) => decider.order(slot),
                    (None, OrderSearch::Fixed(o)) => o,
                    (None, OrderSearch::Search) => CANONICAL_ORDER,
                };
            }
            let mut tiles = TileFactors::default();
            for d in Dim::ALL {
                let i = d.index();
                let [Some(rf_slot), Some(pe_slot), Some(gb_slot)] = [g.tiles[0][i], g.tiles[1][i], g.tiles[2][i]]
                else {
                    continue;
                };
                let opts = &self.tile_options[i];
                let full = self.reference_dims[i];
                let rf = opts[decider.categorical(rf_slot, &vec![true; opts.len()])];
                let pe_mask: Vec<bool> =
                    opts.iter().map(|&v| (full / rf) % v == 0 && (v == 1 || noc.allows(d))).collect();
                let pe = opts[decider.categorical(pe_slot, &pe_mask)];
                let gb_mask: Vec<bool> = opts.iter().map(|&v| (full / (rf * pe)) % v == 0).collect();
                let gb = opts[decider.categorical(gb_slot, &gb_mask)];
                tiles.rf.set(d, rf);
                tiles.pe.set(d, pe);
                tiles.gb.set(d, gb);
            }
            designs.push(DataflowDesign {
                noc,
                loop_order: LoopOrders { dram: orders[0], gb: orders[1], rf: orders[2] },
                tiles,
            });
        }
        Ok(AcceleratorConfig { mode, max_pes, designs })
    }

    /// Every config the space can build for a `num_layers`-layer network, in
    /// lexicographic decision order. Stops with an error past `cap`.
    pub fn enumerate_configs(&self, num_layers: usize, cap: usize) -> Result<Vec<AcceleratorConfig>> {
        let mut out = Vec::new();
        let mut path: Vec<usize> = Vec::new();
        loop {
            let mut replay = Replay { path: &path, pos: 0, lens: Vec::new(), picks: Vec::new() };
            let cfg = self.build_config(num_layers, &mut replay)?;
            out.push(cfg);
            if out.len() > cap {
                return Err(Error::Config(format!("space has more than {cap} configs")));
            }
            let (lens, picks) = (replay.lens, replay.picks);
            // advance the odometer over the decisions actually taken
            let Some(i) = (0..lens.len()).rev().find(|&i| picks[i] + 1 < lens[i]) else {
                break;
            };
            path = picks[..=i].to_vec();
            path[i] += 1;
        }
        Ok(out)
    }

    pub fn space_size(&self) -> SpaceSize {
        let mut log10 = 0.0f64;
        let mut exact: Option<u128> = Some(1);
        for slot in &self.slots {
            let n: u128 = if slot.is_order { factorial(slot.options as u128) } else { slot.options as u128 };
            log10 += (n as f64).log10();
            exact = exact.and_then(|e| e.checked_mul(n));
        }
        SpaceSize { log10, exact }
    }
}

/// Number of configurations, as the product of option counts over all slots
/// (n! per searched loop order). Cross-slot masks are ignored, so this is an
/// upper bound on distinct buildable configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceSize {
    pub log10: f64,
    pub exact: Option<u128>,
}

struct Replay<'a> {
    path: &'a [usize],
    pos: usize,
    lens: Vec<usize>,
    picks: Vec<usize>,
}

impl Replay<'_> {
    fn next(&mut self, n: usize) -> usize {
        let k = self.path.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        self.lens.push(n);
        self.picks.push(k);
        k
    }
}

impl Decider for Replay<'_> {
    fn categorical(&mut self, _slot: usize, mask: &[bool]) -> usize {
        let allowed: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let k = self.next(allowed.len());
        allowed[k]
    }

    fn order(&mut self, _slot: usize) -> LoopOrder {
        let k = self.next(720);
        unrank_permutation(k)
    }
}

fn factorial(n: u128) -> u128 {
    (1..=n).product()
}

/// The k-th permutation of the six dimensions in lexicographic order.
pub fn unrank_permutation(mut k: usize) -> LoopOrder {
    let mut pool: Vec<Dim> = Dim::ALL.to_vec();
    let mut out = [Dim::X; NUM_DIMS];
    for (i, slot) in out.iter_mut().enumerate() {
        let f = (1..NUM_DIMS - i).product::<usize>();
        let j = k / f;
        k %= f;
        *slot = pool.remove(j);
    }
    out
}

pub fn check_permutation(order: &LoopOrder) -> Result<()> {
    let set: BTreeSet<Dim> = order.iter().copied().collect();
    if set.len() != NUM_DIMS {
        return Err(Error::Config(format!("loop order {order:?} repeats a dimension")));
    }
    Ok(())
}

/// All positive divisors of `n`, ascending.
pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n % i == 0 {
            small.push(i);
            if i * i != n {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// All ordered `num_levels`-tuples of positive integers whose product is `dim`.
pub fn enumerate_tilings(dim: u64, num_levels: usize) -> Vec<Vec<u64>> {
    if num_levels == 0 {
        return if dim == 1 { vec![vec![]] } else { vec![] };
    }
    if num_levels == 1 {
        return vec![vec![dim]];
    }
    let mut out = Vec::new();
    for d in divisors(dim) {
        for mut rest in enumerate_tilings(dim / d, num_levels - 1) {
            rest.insert(0, d);
            out.push(rest);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Structure { detail: String },
    TileProductMismatch { design: usize, dim: Dim, product: u64, reference: u64 },
    NocDimensionMisuse { design: usize, dim: Dim, noc: NocChoice },
    PeOverflow { chunk: usize, used: u64, limit: u64 },
    GbCapacity { layer: usize, required: u64, capacity: u64 },
    RfCapacity { layer: usize, required: u64, capacity: u64 },
    DspBudget { used: u64, limit: u64 },
    AreaBudget { used: f64, limit: f64 },
}

impl Violation {
    /// Relative overshoot used by the soft penalty; structural problems count
    /// as a full overshoot.
    pub fn overflow_ratio(&self) -> f64 {
        fn ratio(used: f64, limit: f64) -> f64 {
            if limit <= 0.0 {
                1.0
            } else {
                ((used - limit) / limit).max(0.0)
            }
        }
        match self {
            Violation::PeOverflow { used, limit, .. } => ratio(*used as f64, *limit as f64),
            Violation::GbCapacity { required, capacity, .. } | Violation::RfCapacity { required, capacity, .. } => {
                ratio(*required as f64, *capacity as f64)
            }
            Violation::DspBudget { used, limit } => ratio(*used as f64, *limit as f64),
            Violation::AreaBudget { used, limit } => ratio(*used, *limit),
            _ => 1.0,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Structure { detail } => write!(f, "structure: {detail}"),
            Violation::TileProductMismatch { design, dim, product, reference } => write!(
                f,
                "tile-product mismatch: design {design} dim {dim} product {product} does not divide {reference}"
            ),
            Violation::NocDimensionMisuse { design, dim, noc } => {
                write!(f, "NoC-dimension misuse: design {design} tiles {dim} in parallel under {noc:?}")
            }
            Violation::PeOverflow { chunk, used, limit } => write!(f, "PE overflow {used} > {limit} (chunk {chunk})"),
            Violation::GbCapacity { layer, required, capacity } => {
                write!(f, "GB capacity overflow {required} > {capacity} (layer {layer})")
            }
            Violation::RfCapacity { layer, required, capacity } => {
                write!(f, "RF capacity overflow {required} > {capacity} (layer {layer})")
            }
            Violation::DspBudget { used, limit } => write!(f, "DSP budget overflow {used} > {limit}"),
            Violation::AreaBudget { used, limit } => write!(f, "area budget overflow {used} > {limit}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LegalityReport {
    pub violations: Vec<Violation>,
}

impl LegalityReport {
    pub fn is_legal(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn overflow_sum(&self) -> f64 {
        self.violations.iter().map(Violation::overflow_ratio).fold(0.0, |a, b| a + b)
    }
}

/// PE and GB budget of one pipeline chunk (or the whole array in
/// multi-cycle mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkBudget {
    pub pes: u64,
    pub gb_capacity: u64,
    pub macs: u64,
}

/// Splits PEs and GB capacity across chunks in proportion to each chunk's MAC
/// share (floor, at least one PE for a non-empty chunk).
pub fn chunk_budgets(net: &NetworkDesc, config: &AcceleratorConfig, tables: &HardwareCostTables) -> Vec<ChunkBudget> {
    let chunks = config.num_chunks().max(1);
    let mut macs = vec![0u64; chunks];
    for (i, layer) in net.layers.iter().enumerate() {
        let c = config.design_index(i);
        if c < chunks {
            macs[c] += layer.macs();
        }
    }
    if matches!(config.mode, ExecMode::MultiCycle) {
        return vec![ChunkBudget { pes: config.max_pes, gb_capacity: tables.gb_capacity, macs: macs[0] }];
    }
    let total: u64 = macs.iter().sum::<u64>().max(1);
    macs.iter()
        .map(|&m| {
            if m == 0 {
                return ChunkBudget { pes: 0, gb_capacity: 0, macs: 0 };
            }
            let share = |v: u64| ((v as u128 * m as u128) / total as u128) as u64;
            ChunkBudget { pes: share(config.max_pes).max(1), gb_capacity: share(tables.gb_capacity), macs: m }
        })
        .collect()
}

/// Checks a config against a network. Violations are data; an empty report
/// means the config is legal.
pub fn validate(
    config: &AcceleratorConfig,
    net: &NetworkDesc,
    space: &AcceleratorSpace,
    tables: &HardwareCostTables,
) -> LegalityReport {
    let mut v = Vec::new();
    let structure = |detail: String| Violation::Structure { detail };
    if config.designs.is_empty() {
        v.push(structure("config has no dataflow design".into()));
        return LegalityReport { violations: v };
    }
    if config.max_pes == 0 {
        v.push(structure("max_pes must be >= 1".into()));
    }
    match &config.mode {
        ExecMode::MultiCycle => {
            if config.designs.len() != 1 {
                v.push(structure(format!("multi-cycle mode needs 1 design, got {}", config.designs.len())));
            }
        }
        ExecMode::Pipeline { chunk_of_layer } => {
            if chunk_of_layer.len() != net.len() {
                v.push(structure(format!(
                    "chunk assignment covers {} layers, network has {}",
                    chunk_of_layer.len(),
                    net.len()
                )));
            }
            if let Some(&bad) = chunk_of_layer.iter().find(|&&c| c >= config.designs.len()) {
                v.push(structure(format!("chunk index {bad} out of range")));
            }
        }
    }
    for (gi, design) in config.designs.iter().enumerate() {
        if check_permutation(&design.loop_order.dram).is_err()
            || check_permutation(&design.loop_order.gb).is_err()
            || check_permutation(&design.loop_order.rf).is_err()
        {
            v.push(structure(format!("design {gi} has a loop order that is not a permutation")));
        }
        for d in Dim::ALL {
            let t = &design.tiles;
            let product = t.gb.get(d) * t.pe.get(d) * t.rf.get(d);
            let reference = space.reference_dims[d.index()];
            if product == 0 || reference % product != 0 {
                v.push(Violation::TileProductMismatch { design: gi, dim: d, product, reference });
            }
            if t.pe.get(d) > 1 && !design.noc.allows(d) {
                v.push(Violation::NocDimensionMisuse { design: gi, dim: d, noc: design.noc });
            }
        }
    }
    if !v.is_empty() {
        return LegalityReport { violations: v };
    }

    let budgets = chunk_budgets(net, config, tables);
    let mut pe_peak = vec![0u64; budgets.len()];
    for (li, layer) in net.layers.iter().enumerate() {
        let c = config.design_index(li);
        let mapping = match LayerMapping::project(layer, &config.designs[c]) {
            Ok(m) => m,
            Err(e) => {
                v.push(structure(format!("layer {li}: {e}")));
                continue;
            }
        };
        pe_peak[c] = pe_peak[c].max(mapping.pe_used());
        let gb_req = 2 * crate::costmodel::level_footprint(&mapping, LEVEL_GB);
        if gb_req > budgets[c].gb_capacity {
            v.push(Violation::GbCapacity { layer: li, required: gb_req, capacity: budgets[c].gb_capacity });
        }
        let rf_req = 2 * crate::costmodel::level_footprint(&mapping, LEVEL_RF);
        if rf_req > tables.rf_capacity {
            v.push(Violation::RfCapacity { layer: li, required: rf_req, capacity: tables.rf_capacity });
        }
    }
    for (c, (&used, b)) in pe_peak.iter().zip(&budgets).enumerate() {
        if used > b.pes {
            v.push(Violation::PeOverflow { chunk: c, used, limit: b.pes });
        }
    }
    let cons = &space.spec.constraints;
    if let Some(limit) = cons.dsp_limit {
        let used = config.max_pes * tables.dsp_per_pe;
        if used > limit {
            v.push(Violation::DspBudget { used, limit });
        }
    }
    if let Some(limit) = cons.area_limit {
        let used = tables.area(config.max_pes);
        if used > limit {
            v.push(Violation::AreaBudget { used, limit });
        }
    }
    LegalityReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisor_lists() {
        assert_eq!(divisors(1), vec![1]);
        assert_eq!(divisors(7), vec![1, 7]);
        assert_eq!(divisors(12), vec![1, 2, 3, 4, 6, 12]);
        assert_eq!(divisors(16), vec![1, 2, 4, 8, 16]);
    }

    #[test]
    fn tilings_of_small_dims() {
        assert_eq!(enumerate_tilings(1, 3), vec![vec![1, 1, 1]]);
        let mut t4 = enumerate_tilings(4, 3);
        t4.sort();
        let mut expected =
            vec![vec![1, 1, 4], vec![1, 4, 1], vec![4, 1, 1], vec![1, 2, 2], vec![2, 1, 2], vec![2, 2, 1]];
        expected.sort();
        assert_eq!(t4, expected);
        assert_eq!(enumerate_tilings(13, 2).len(), 2);
    }

    #[test]
    fn permutation_unranking() {
        assert_eq!(unrank_permutation(0), Dim::ALL);
        assert_eq!(unrank_permutation(719), [Dim::K, Dim::C, Dim::S, Dim::R, Dim::Y, Dim::X]);
        let all: BTreeSet<LoopOrder> = (0..720).map(unrank_permutation).collect();
        assert_eq!(all.len(), 720);
    }

    #[test]
    fn projection_chains() {
        let layer = ConvLayerDesc::standard(4, 4, 3, 3, 8, 6);
        let mut design = DataflowDesign::trivial(NocChoice::OutputParallel);
        design.tiles.rf.set(Dim::C, 4);
        design.tiles.pe.set(Dim::K, 4);
        design.tiles.gb.set(Dim::X, 8);
        let m = LayerMapping::project(&layer, &design).unwrap();
        assert_eq!(m.trips[LEVEL_RF][Dim::C.index()], 4);
        assert_eq!(m.trips[LEVEL_DRAM][Dim::C.index()], 2);
        assert_eq!(m.trips[LEVEL_PE][Dim::K.index()], 2);
        assert_eq!(m.trips[LEVEL_DRAM][Dim::K.index()], 3);
        assert_eq!(m.trips[LEVEL_GB][Dim::X.index()], 4);
        assert!(LayerMapping::exact(&layer, &design).is_err());
        for i in 0..NUM_DIMS {
            let p: u64 = (0..4).map(|l| m.trips[l][i]).product();
            assert_eq!(p, layer.loop_dims()[i]);
        }
    }

    fn small_space(spec: AccelSpaceSpec) -> AcceleratorSpace {
        AcceleratorSpace::new(spec, [4, 4, 1, 1, 4, 4], 1).unwrap()
    }

    fn generous() -> HardwareCostTables {
        HardwareCostTables { gb_capacity: 1 << 40, rf_capacity: 1 << 40, ..HardwareCostTables::default() }
    }

    #[test]
    fn degenerate_config_is_legal() {
        let space = small_space(AccelSpaceSpec::default());
        let net = NetworkDesc::new(vec![ConvLayerDesc::standard(4, 4, 1, 1, 4, 4)]);
        let cfg = AcceleratorConfig::multi_cycle(16, DataflowDesign::trivial(NocChoice::OutputParallel));
        assert!(validate(&cfg, &net, &space, &generous()).is_legal());
    }

    #[test]
    fn noc_misuse_and_pe_overflow() {
        let space = small_space(AccelSpaceSpec::default());
        let net = NetworkDesc::new(vec![ConvLayerDesc::standard(4, 4, 1, 1, 4, 4)]);
        let mut d = DataflowDesign::trivial(NocChoice::OutputParallel);
        d.tiles.pe.set(Dim::C, 2);
        let rep = validate(&AcceleratorConfig::multi_cycle(16, d), &net, &space, &generous());
        assert!(rep.violations.iter().any(|v| matches!(v, Violation::NocDimensionMisuse { dim: Dim::C, .. })));
        assert!(rep.violations[0].to_string().starts_with("NoC-dimension misuse"));

        let mut d = DataflowDesign::trivial(NocChoice::OutputParallel);
        d.tiles.pe.set(Dim::K, 4);
        d.tiles.pe.set(Dim::Y, 4);
        let rep = validate(&AcceleratorConfig::multi_cycle(8, d), &net, &space, &generous());
        assert_eq!(rep.violations, vec![Violation::PeOverflow { chunk: 0, used: 16, limit: 8 }]);
        assert_eq!(rep.violations[0].to_string(), "PE overflow 16 > 8 (chunk 0)");
        assert!((rep.overflow_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_and_budget_violations() {
        let mut spec = AccelSpaceSpec::default();
        spec.constraints = Constraints { dsp_limit: Some(8), area_limit: Some(1.0) };
        let space = small_space(spec);
        let net = NetworkDesc::new(vec![ConvLayerDesc::standard(4, 4, 1, 1, 4, 4)]);
        let mut d = DataflowDesign::trivial(NocChoice::OutputParallel);
        d.tiles.rf.set(Dim::C, 4);
        d.tiles.rf.set(Dim::K, 4);
        let tables = HardwareCostTables { rf_capacity: 8, gb_capacity: 16, ..HardwareCostTables::default() };
        let rep = validate(&AcceleratorConfig::multi_cycle(16, d), &net, &space, &tables);
        let kinds: Vec<&str> = rep
            .violations
            .iter()
            .map(|v| match v {
                Violation::GbCapacity { .. } => "gb",
                Violation::RfCapacity { .. } => "rf",
                Violation::DspBudget { .. } => "dsp",
                Violation::AreaBudget { .. } => "area",
                _ => "other",
            })
            .collect();
        assert_eq!(kinds, vec!["gb", "rf", "dsp", "area"]);
    }

    #[test]
    fn tile_mismatch_detected() {
        let space = small_space(AccelSpaceSpec::default());
        let net = NetworkDesc::new(vec![ConvLayerDesc::standard(4, 4, 1, 1, 4, 4)]);
        let mut d = DataflowDesign::trivial(NocChoice::OutputParallel);
        d.tiles.gb.set(Dim::X, 3);
        let rep = validate(&AcceleratorConfig::multi_cycle(16, d), &net, &space, &generous());
        assert!(matches!(rep.violations[0], Violation::TileProductMismatch { dim: Dim::X, .. }));
    }

    #[test]
    fn space_sizes() {
        // one binary slot only
        let spec = AccelSpaceSpec {
            noc_options: vec![NocChoice::OutputParallel],
            pe_count_options: vec![4, 8],
            pipeline_options: vec![PipelineOption::MultiCycle],
            loop_orders: OrderSearchSpec {
                dram: OrderSearch::Fixed(CANONICAL_ORDER),
                gb: OrderSearch::Fixed(CANONICAL_ORDER),
                rf: OrderSearch::Fixed(CANONICAL_ORDER),
            },
            tile_dims: vec![],
            constraints: Constraints::default(),
            reference_dims: None,
        };
        let s = AcceleratorSpace::new(spec.clone(), [4; 6], 1).unwrap();
        assert_eq!(s.space_size().exact, Some(2));
        assert_eq!(s.enumerate_configs(1, 10).unwrap().len(), 2);

        let orders_only = AccelSpaceSpec { pe_count_options: vec![4], loop_orders: OrderSearchSpec::default(), ..spec };
        let s = AcceleratorSpace::new(orders_only, [4; 6], 1).unwrap();
        assert_eq!(s.space_size().exact, Some(720u128.pow(3)));
        assert!((s.space_size().log10 - 8.5716).abs() < 1e-3);
    }

    #[test]
    fn enumeration_respects_chains() {
        let spec = AccelSpaceSpec {
            noc_options: vec![NocChoice::OutputParallel, NocChoice::KernelParallel],
            pe_count_options: vec![4],
            pipeline_options: vec![PipelineOption::MultiCycle],
            loop_orders: OrderSearchSpec {
                dram: OrderSearch::Fixed(CANONICAL_ORDER),
                gb: OrderSearch::Fixed(CANONICAL_ORDER),
                rf: OrderSearch::Fixed(CANONICAL_ORDER),
            },
            tile_dims: vec![Dim::C],
            ..AccelSpaceSpec::default()
        };
        let s = AcceleratorSpace::new(spec, [1, 1, 1, 1, 4, 1], 1).unwrap();
        let all = s.enumerate_configs(1, 1000).unwrap();
        // OutputParallel: C chains with pe = 1 -> 6 ordered (rf, gb) pairs dividing 4;
        // KernelParallel: all 10 ordered 4-factorizations of 4 (with DRAM residual).
        assert_eq!(all.len(), 6 + enumerate_tilings(4, 4).len());
        let uniq: BTreeSet<String> = all.iter().map(|c| format!("{c:?}")).collect();
        assert_eq!(uniq.len(), all.len());
    }
}
