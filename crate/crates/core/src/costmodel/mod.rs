//! Analytical hardware cost model.
//!
//! Reuse model: a tensor tile stays resident at a level until one of the
//! enclosing temporal loop indices it depends on changes. With the enclosing
//! loops listed outermost first, the number of residencies is the product of
//! trip counts up to and including the innermost loop that has trip > 1 and
//! indexes a dimension of the tensor. Each residency moves one tile across
//! the boundary. Ofmap tiles are written back at the end of every residency
//! and fetched back (psum refetch) on every residency after their first.
//!
//! Parallel-for (PE array) loops never cause refills; they replicate the
//! per-PE stream across lanes, so NoC traffic is `lanes * tile * refills`.
//! Ifmap halos are not deduplicated between neighbouring tiles.

mod oracle;
mod sweep;

pub use oracle::{oracle_simulate, oracle_simulate_mapped, OracleLimits, OracleResult, DEFAULT_MAC_CAP};
pub use sweep::{analytical_model, corrupted_reuse_model, run_sweep, Counterexample, OracleSweep, SweepReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gads::{
    chunk_budgets, AcceleratorConfig, DataflowDesign, LayerMapping, LoopOrder, LEVEL_DRAM, LEVEL_GB, LEVEL_RF, NUM_DIMS,
};
use crate::workload::{ConvLayerDesc, Dim, NetworkDesc};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitEnergy {
    pub rf: f64,
    pub noc: f64,
    pub gb: f64,
    pub dram: f64,
    pub mac: f64,
}

/// Words per cycle across the DRAM/GB and GB/PE-array boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bandwidth {
    pub dram: f64,
    pub noc: f64,
}

/// Unit costs of the abstract hardware. Energies are in arbitrary units,
/// capacities in words (RF capacity is per PE).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareCostTables {
    pub unit_energy: UnitEnergy,
    pub bandwidth: Bandwidth,
    pub gb_capacity: u64,
    pub rf_capacity: u64,
    pub clock_freq: f64,
    pub dsp_per_pe: u64,
    pub area_per_pe: f64,
    pub area_per_word: f64,
}

impl Default for HardwareCostTables {
    fn default() -> Self {
        HardwareCostTables {
            unit_energy: UnitEnergy { rf: 1.0, noc: 2.0, gb: 6.0, dram: 200.0, mac: 1.0 },
            bandwidth: Bandwidth { dram: 16.0, noc: 64.0 },
            gb_capacity: 65536,
            rf_capacity: 256,
            clock_freq: 200e6,
            dsp_per_pe: 1,
            area_per_pe: 1.0,
            area_per_word: 0.01,
        }
    }
}

impl HardwareCostTables {
    pub fn validate(&self) -> Result<()> {
        let e = &self.unit_energy;
        let reals = [
            e.rf,
            e.noc,
            e.gb,
            e.dram,
            e.mac,
            self.bandwidth.dram,
            self.bandwidth.noc,
            self.clock_freq,
            self.area_per_pe,
            self.area_per_word,
        ];
        if reals.iter().any(|v| !(*v > 0.0) || v.is_nan()) {
            return Err(Error::Config("cost tables must be strictly positive".into()));
        }
        if self.gb_capacity == 0 || self.rf_capacity == 0 || self.dsp_per_pe == 0 {
            return Err(Error::Config("capacities and dsp_per_pe must be >= 1".into()));
        }
        Ok(())
    }

    pub fn area(&self, max_pes: u64) -> f64 {
        max_pes as f64 * self.area_per_pe
            + (self.gb_capacity as f64 + max_pes as f64 * self.rf_capacity as f64) * self.area_per_word
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tensor {
    Weights,
    Ifmap,
    Ofmap,
}

impl Tensor {
    pub const ALL: [Tensor; 3] = [Tensor::Weights, Tensor::Ifmap, Tensor::Ofmap];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::Weights => "weights",
            Tensor::Ifmap => "ifmap",
            Tensor::Ofmap => "ofmap",
        }
    }

    /// Loop dimensions this tensor is indexed by.
    pub fn depends_on(self, layer: &ConvLayerDesc, d: Dim) -> bool {
        match self {
            Tensor::Weights => matches!(d, Dim::R | Dim::S | Dim::C | Dim::K),
            Tensor::Ifmap => matches!(d, Dim::X | Dim::Y | Dim::R | Dim::S) || d == layer.ifmap_channel_dim(),
            Tensor::Ofmap => matches!(d, Dim::X | Dim::Y | Dim::K),
        }
    }
}

/// Words of `tensor` covered by a tile with per-dimension extents `ext`.
pub fn tile_footprint(layer: &ConvLayerDesc, tensor: Tensor, ext: &[u64; NUM_DIMS]) -> u64 {
    let e = |d: Dim| ext[d.index()];
    match tensor {
        Tensor::Weights => e(Dim::R) * e(Dim::S) * e(Dim::C) * e(Dim::K),
        Tensor::Ifmap => {
            let rows = (e(Dim::X) - 1) * layer.stride + e(Dim::R);
            let cols = (e(Dim::Y) - 1) * layer.stride + e(Dim::S);
            e(layer.ifmap_channel_dim()) * rows * cols
        }
        Tensor::Ofmap => e(Dim::K) * e(Dim::X) * e(Dim::Y),
    }
}

/// Sum of all tensor tiles resident at `level` (GB: whole GB tile, RF: one PE).
pub fn level_footprint(m: &LayerMapping, level: usize) -> u64 {
    let ext = m.tile_extent(level);
    Tensor::ALL.iter().map(|&t| tile_footprint(&m.layer, t, &ext)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReadWrite {
    pub reads: u64,
    pub writes: u64,
}

impl ReadWrite {
    pub fn total(&self) -> u64 {
        self.reads + self.writes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TensorCounts {
    pub weights: ReadWrite,
    pub ifmap: ReadWrite,
    pub ofmap: ReadWrite,
}

impl TensorCounts {
    pub fn get(&self, t: Tensor) -> &ReadWrite {
        match t {
            Tensor::Weights => &self.weights,
            Tensor::Ifmap => &self.ifmap,
            Tensor::Ofmap => &self.ofmap,
        }
    }

    pub fn get_mut(&mut self, t: Tensor) -> &mut ReadWrite {
        match t {
            Tensor::Weights => &mut self.weights,
            Tensor::Ifmap => &mut self.ifmap,
            Tensor::Ofmap => &mut self.ofmap,
        }
    }

    pub fn total(&self) -> u64 {
        self.weights.total() + self.ifmap.total() + self.ofmap.total()
    }
}

/// Word accesses per memory level and tensor.
///
/// DRAM/GB/RF count reads and writes of that memory; NoC counts words moved
/// between the GB and the PE register files (reads = towards the PEs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccessCounts {
    pub dram: TensorCounts,
    pub gb: TensorCounts,
    pub noc: TensorCounts,
    pub rf: TensorCounts,
}

pub const LEVEL_NAMES: [&str; 4] = ["DRAM", "GB", "NoC", "RF"];

impl AccessCounts {
    pub fn levels(&self) -> [&TensorCounts; 4] {
        [&self.dram, &self.gb, &self.noc, &self.rf]
    }

    pub fn add(&mut self, other: &AccessCounts) {
        fn add_tc(a: &mut TensorCounts, b: &TensorCounts) {
            for t in Tensor::ALL {
                a.get_mut(t).reads += b.get(t).reads;
                a.get_mut(t).writes += b.get(t).writes;
            }
        }
        add_tc(&mut self.dram, &other.dram);
        add_tc(&mut self.gb, &other.gb);
        add_tc(&mut self.noc, &other.noc);
        add_tc(&mut self.rf, &other.rf);
    }
}

/// Boundary traffic of one tensor: tiles moved down, psums fetched back down,
/// tiles written back up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct Boundary {
    pub down: u64,
    pub refetch: u64,
    pub up: u64,
}

/// Assembles per-level counts from the two boundaries. Shared by the
/// analytical model and its fault-injected variant; the oracle builds its
/// own.
pub(crate) fn assemble_counts(
    dram: &[Boundary; 3],
    noc: &[Boundary; 3],
    macs: u64,
    rf_first_touches: u64,
) -> AccessCounts {
    let mut c = AccessCounts::default();
    for (ti, t) in Tensor::ALL.into_iter().enumerate() {
        let (d, n) = (dram[ti], noc[ti]);
        match t {
            Tensor::Weights | Tensor::Ifmap => {
                c.dram.get_mut(t).reads = d.down;
                c.gb.get_mut(t).writes = d.down;
                c.gb.get_mut(t).reads = n.down;
                c.noc.get_mut(t).reads = n.down;
                c.rf.get_mut(t).writes = n.down;
                c.rf.get_mut(t).reads = macs;
            }
            Tensor::Ofmap => {
                c.dram.ofmap = ReadWrite { reads: d.refetch, writes: d.up };
                c.gb.ofmap = ReadWrite { reads: n.refetch + d.up, writes: d.refetch + n.up };
                c.noc.ofmap = ReadWrite { reads: n.refetch, writes: n.up };
                c.rf.ofmap = ReadWrite { reads: macs - rf_first_touches + n.up, writes: n.refetch + macs };
            }
        }
    }
    c
}

/// `(dim, trip)` pairs of a level's temporal loops, outermost first.
pub(crate) fn level_loops<'a>(
    order: &'a LoopOrder,
    trips: &'a [u64; NUM_DIMS],
) -> impl Iterator<Item = (Dim, u64)> + 'a {
    order.iter().map(move |&d| (d, trips[d.index()]))
}

/// Residency count under the stationary-until-relevant-change rule.
pub(crate) fn refills(loops: &[(Dim, u64)], relevant: impl Fn(Dim) -> bool) -> u64 {
    let Some(last) = loops.iter().rposition(|&(d, t)| t > 1 && relevant(d)) else {
        return 1;
    };
    loops[..=last].iter().map(|&(_, t)| t).product()
}

/// Number of distinct tiles visited.
pub(crate) fn distinct(loops: &[(Dim, u64)], relevant: impl Fn(Dim) -> bool) -> u64 {
    loops.iter().filter(|&&(d, _)| relevant(d)).map(|&(_, t)| t).product()
}

pub(crate) fn boundary_traffic(m: &LayerMapping, loops: &[(Dim, u64)], tile_level: usize, lanes: u64) -> [Boundary; 3] {
    let ext = m.tile_extent(tile_level);
    Tensor::ALL.map(|t| {
        let rel = |d: Dim| t.depends_on(&m.layer, d);
        let fp = tile_footprint(&m.layer, t, &ext) * lanes;
        let n = refills(loops, rel);
        match t {
            Tensor::Ofmap => {
                let first = distinct(loops, rel);
                Boundary { down: 0, refetch: (n - first) * fp, up: n * fp }
            }
            _ => Boundary { down: n * fp, refetch: 0, up: 0 },
        }
    })
}

pub(crate) fn dram_loops(m: &LayerMapping) -> Vec<(Dim, u64)> {
    level_loops(&m.orders.dram, &m.trips[LEVEL_DRAM]).collect()
}

pub(crate) fn dram_gb_loops(m: &LayerMapping) -> Vec<(Dim, u64)> {
    level_loops(&m.orders.dram, &m.trips[LEVEL_DRAM]).chain(level_loops(&m.orders.gb, &m.trips[LEVEL_GB])).collect()
}

/// Exact access counts of one mapped layer.
pub fn count_accesses_mapped(m: &LayerMapping) -> AccessCounts {
    let lanes = m.pe_used();
    let dram = boundary_traffic(m, &dram_loops(m), LEVEL_GB, 1);
    let noc = boundary_traffic(m, &dram_gb_loops(m), LEVEL_RF, lanes);
    assemble_counts(&dram, &noc, m.layer.macs(), noc[2].up)
}

pub fn count_accesses(layer: &ConvLayerDesc, design: &DataflowDesign) -> Result<AccessCounts> {
    Ok(count_accesses_mapped(&LayerMapping::project(layer, design)?))
}

/// Temporal steps of the parallel schedule: product of all non-PE trips.
pub fn compute_cycles_mapped(m: &LayerMapping) -> u64 {
    [LEVEL_DRAM, LEVEL_GB, LEVEL_RF].iter().map(|&l| m.trips[l].iter().product::<u64>()).product()
}

pub fn compute_cycles(layer: &ConvLayerDesc, design: &DataflowDesign) -> Result<u64> {
    Ok(compute_cycles_mapped(&LayerMapping::project(layer, design)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    pub chunk: usize,
    pub macs: u64,
    pub pe_used: u64,
    pub compute_cycles: u64,
    pub dram_cycles: u64,
    pub noc_cycles: u64,
    pub cycles: u64,
    pub energy: f64,
    pub accesses: AccessCounts,
}

fn memory_cycles(words: u64, bandwidth: f64) -> u64 {
    (words as f64 / bandwidth).ceil() as u64
}

pub fn energy_of(counts: &AccessCounts, macs: u64, tables: &HardwareCostTables) -> f64 {
    let e = &tables.unit_energy;
    counts.dram.total() as f64 * e.dram
        + counts.gb.total() as f64 * e.gb
        + counts.noc.total() as f64 * e.noc
        + counts.rf.total() as f64 * e.rf
        + macs as f64 * e.mac
}

/// Roofline cost of one layer: cycles are the max of compute and per-boundary
/// memory cycles.
pub fn layer_cost_mapped(m: &LayerMapping, tables: &HardwareCostTables) -> LayerCost {
    let accesses = count_accesses_mapped(m);
    let macs = m.layer.macs();
    let compute = compute_cycles_mapped(m);
    let dram_cycles = memory_cycles(accesses.dram.total(), tables.bandwidth.dram);
    let noc_cycles = memory_cycles(accesses.noc.total(), tables.bandwidth.noc);
    LayerCost {
        layer: 0,
        chunk: 0,
        macs,
        pe_used: m.pe_used(),
        compute_cycles: compute,
        dram_cycles,
        noc_cycles,
        cycles: compute.max(dram_cycles).max(noc_cycles),
        energy: energy_of(&accesses, macs, tables),
        accesses,
    }
}

pub fn layer_cost(layer: &ConvLayerDesc, design: &DataflowDesign, tables: &HardwareCostTables) -> Result<LayerCost> {
    Ok(layer_cost_mapped(&LayerMapping::project(layer, design)?, tables))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// Cycles per image (pipeline bottleneck in pipeline mode).
    pub cycles: u64,
    /// Sum of all layer cycles: single-image latency.
    pub latency_cycles: u64,
    pub energy: f64,
    pub edp: f64,
    pub fps: f64,
    pub pe_used: u64,
    pub dsp_used: u64,
    pub area_used: f64,
    pub chunk_cycles: Vec<u64>,
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn total_accesses(&self) -> AccessCounts {
        let mut acc = AccessCounts::default();
        for l in &self.layers {
            acc.add(&l.accesses);
        }
        acc
    }
}

/// Whole-network cost. Multi-cycle: layers run back to back on the full
/// array. Pipeline: chunks run concurrently on their PE share, throughput is
/// set by the slowest chunk. Energy always sums over layers.
pub fn network_cost(net: &NetworkDesc, config: &AcceleratorConfig, tables: &HardwareCostTables) -> Result<CostReport> {
    if net.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    if config.designs.is_empty() {
        return Err(Error::IllegalConfig("no dataflow design".into()));
    }
    let budgets = chunk_budgets(net, config, tables);
    let mut chunk_cycles = vec![0u64; budgets.len()];
    let mut chunk_pes = vec![0u64; budgets.len()];
    let mut layers = Vec::with_capacity(net.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let c = config.design_index(i);
        let design = config
            .designs
            .get(c)
            .ok_or_else(|| Error::IllegalConfig(format!("layer {i} assigned to missing chunk {c}")))?;
        let m = LayerMapping::project(layer, design).map_err(|e| Error::IllegalConfig(format!("layer {i}: {e}")))?;
        let mut lc = layer_cost_mapped(&m, tables);
        lc.layer = i;
        lc.chunk = c;
        chunk_cycles[c] += lc.cycles;
        chunk_pes[c] = chunk_pes[c].max(lc.pe_used);
        layers.push(lc);
    }
    let cycles = chunk_cycles.iter().copied().max().unwrap_or(0);
    let latency_cycles = layers.iter().map(|l| l.cycles).sum();
    let energy: f64 = layers.iter().map(|l| l.energy).sum();
    Ok(CostReport {
        cycles,
        latency_cycles,
        energy,
        edp: energy * cycles as f64,
        fps: tables.clock_freq / cycles as f64,
        pe_used: chunk_pes.iter().sum(),
        dsp_used: config.max_pes * tables.dsp_per_pe,
        area_used: tables.area(config.max_pes),
        chunk_cycles,
        layers,
    })
}

/// Hardware objective to minimize. FPS is optimized by minimizing cycles per
/// image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Fps,
    Edp,
    Latency,
}

impl Objective {
    pub fn value(self, report: &CostReport) -> f64 {
        match self {
            Objective::Fps => report.cycles as f64,
            Objective::Latency => report.latency_cycles as f64,
            Objective::Edp => report.edp,
        }
    }

    /// Cost of a group of layers evaluated in isolation (back to back).
    pub fn of_layers(self, layers: &[LayerCost]) -> f64 {
        let cycles: u64 = layers.iter().map(|l| l.cycles).sum();
        match self {
            Objective::Fps | Objective::Latency => cycles as f64,
            Objective::Edp => layers.iter().map(|l| l.energy).sum::<f64>() * cycles as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gads::{ExecMode, NocChoice};

    fn huge() -> HardwareCostTables {
        HardwareCostTables {
            gb_capacity: 1 << 40,
            rf_capacity: 1 << 40,
            bandwidth: Bandwidth { dram: f64::INFINITY, noc: f64::INFINITY },
            ..HardwareCostTables::default()
        }
    }

    #[test]
    fn refill_rule() {
        // A irrelevant outer, B relevant inner: every step refills
        let loops = [(Dim::C, 3), (Dim::K, 2)];
        assert_eq!(refills(&loops, |d| d == Dim::K), 6);
        // relevant outer, irrelevant inner: reuse across the inner loop
        assert_eq!(refills(&loops, |d| d == Dim::C), 3);
        // trip-1 loops never force a refill
        assert_eq!(refills(&[(Dim::C, 3), (Dim::K, 1)], |d| d == Dim::K), 1);
        assert_eq!(distinct(&loops, |d| d == Dim::K), 2);
    }

    #[test]
    fn single_mac_moves_one_word_everywhere() {
        let layer = ConvLayerDesc::standard(1, 1, 1, 1, 1, 1);
        let c = count_accesses(&layer, &DataflowDesign::trivial(NocChoice::OutputParallel)).unwrap();
        for t in [Tensor::Weights, Tensor::Ifmap] {
            assert_eq!(*c.dram.get(t), ReadWrite { reads: 1, writes: 0 });
            assert_eq!(*c.noc.get(t), ReadWrite { reads: 1, writes: 0 });
            assert_eq!(c.rf.get(t).reads, 1);
        }
        assert_eq!(c.dram.ofmap, ReadWrite { reads: 0, writes: 1 });
        assert_eq!(c.noc.ofmap, ReadWrite { reads: 0, writes: 1 });
        // one psum write from the MAC plus the drain read
        assert_eq!(c.rf.ofmap, ReadWrite { reads: 1, writes: 1 });
    }

    #[test]
    fn compute_cycles_follow_pe_tiles() {
        let layer = ConvLayerDesc::standard(2, 2, 1, 1, 2, 2); // 16 MACs
        let serial = DataflowDesign::trivial(NocChoice::OutputParallel);
        assert_eq!(compute_cycles(&layer, &serial).unwrap(), 16);
        let mut k2 = serial;
        k2.tiles.pe.set(Dim::K, 2);
        assert_eq!(compute_cycles(&layer, &k2).unwrap(), 8);
        let mut ky = k2;
        ky.tiles.pe.set(Dim::Y, 2);
        assert_eq!(compute_cycles(&layer, &ky).unwrap(), 4);
        let mut bad = serial;
        bad.tiles.pe.set(Dim::C, 2);
        assert!(matches!(compute_cycles(&layer, &bad), Err(Error::IllegalConfig(_))));
    }

    #[test]
    fn roofline_and_energy() {
        let layer = ConvLayerDesc::depthwise(2, 2, 3, 3, 8, 1); // 288 MACs
        let d = DataflowDesign::trivial(NocChoice::OutputParallel);
        let lc = layer_cost(&layer, &d, &huge()).unwrap();
        assert_eq!(lc.cycles, lc.compute_cycles);

        let mut t = huge();
        t.unit_energy = UnitEnergy { rf: 0.0, noc: 0.0, gb: 0.0, dram: 0.0, mac: 1.0 };
        assert_eq!(layer_cost(&layer, &d, &t).unwrap().energy, 288.0);

        // bandwidth-bound: compute 10 cycles, 100 DRAM words at 1 word/cycle
        let layer = ConvLayerDesc::standard(10, 1, 1, 1, 1, 1);
        let mut d = DataflowDesign::trivial(NocChoice::OutputParallel);
        d.tiles.gb.set(Dim::X, 10);
        let m = LayerMapping::project(&layer, &d).unwrap();
        let words = count_accesses_mapped(&m).dram.total();
        let mut t = huge();
        t.bandwidth.dram = 1.0;
        let lc = layer_cost_mapped(&m, &t);
        assert_eq!(lc.compute_cycles, 10);
        assert_eq!(lc.cycles, words);
        assert!(words > 10);
    }

    #[test]
    fn network_modes() {
        let l1 = ConvLayerDesc::standard(4, 4, 1, 1, 4, 4);
        let l2 = ConvLayerDesc::standard(2, 2, 3, 3, 4, 4);
        let d = DataflowDesign::trivial(NocChoice::OutputParallel);
        let t = huge();
        let single = NetworkDesc::new(vec![l1]);
        let mc = network_cost(&single, &AcceleratorConfig::multi_cycle(16, d), &t).unwrap();
        let p1 =
            AcceleratorConfig { mode: ExecMode::Pipeline { chunk_of_layer: vec![0] }, max_pes: 16, designs: vec![d] };
        assert_eq!(network_cost(&single, &p1, &t).unwrap().cycles, mc.cycles);

        let net = NetworkDesc::new(vec![l1, l2]);
        let c1 = layer_cost(&l1, &d, &t).unwrap().cycles;
        let c2 = layer_cost(&l2, &d, &t).unwrap().cycles;
        let mc = network_cost(&net, &AcceleratorConfig::multi_cycle(16, d), &t).unwrap();
        assert_eq!(mc.cycles, c1 + c2);
        let p2 = AcceleratorConfig {
            mode: ExecMode::Pipeline { chunk_of_layer: vec![0, 1] },
            max_pes: 16,
            designs: vec![d, d],
        };
        let pr = network_cost(&net, &p2, &t).unwrap();
        assert_eq!(pr.cycles, c1.max(c2));
        assert_eq!(pr.latency_cycles, c1 + c2);
        assert_eq!(pr.energy, mc.energy);
        assert_eq!(pr.edp, pr.energy * pr.cycles as f64);
        assert!((pr.fps * pr.cycles as f64 - t.clock_freq).abs() < 1e-6 * t.clock_freq);
        assert!(matches!(network_cost(&NetworkDesc::default(), &p2, &t), Err(Error::EmptyNetwork)));
    }

    #[test]
    fn dram_energy_monotone() {
        let layer = ConvLayerDesc::standard(4, 4, 3, 3, 4, 4);
        let d = DataflowDesign::trivial(NocChoice::KernelParallel);
        let mut t = HardwareCostTables::default();
        let mut prev = 0.0;
        for e in [1.0, 10.0, 100.0, 1000.0] {
            t.unit_energy.dram = e;
            let en = layer_cost(&layer, &d, &t).unwrap().energy;
            assert!(en >= prev);
            prev = en;
        }
    }
}
