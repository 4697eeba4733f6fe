//! Brute-force loop-nest walker used to check the analytical model.
//!
//! Walks every MAC in DRAM, GB, PE-lane, RF order and tracks which tile of
//! each tensor is resident in the GB and in every PE's RF. A tile is
//! identified by the outer loop indices the tensor depends on; whenever that
//! identity changes the old tile is evicted and its measured footprint
//! (distinct elements for weights/ofmap, bounding box for the ifmap) crosses
//! the boundary.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::gads::{
    DataflowDesign, LayerMapping, LoopOrder, CANONICAL_ORDER, LEVEL_DRAM, LEVEL_GB, LEVEL_PE, LEVEL_RF, NUM_DIMS,
};
use crate::workload::{ConvLayerDesc, Dim};

use super::{AccessCounts, HardwareCostTables, ReadWrite, Tensor};

pub const DEFAULT_MAC_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleLimits {
    pub gb_capacity: u64,
    pub rf_capacity: u64,
    pub mac_cap: u64,
}

impl OracleLimits {
    pub fn from_tables(t: &HardwareCostTables) -> Self {
        OracleLimits { gb_capacity: t.gb_capacity, rf_capacity: t.rf_capacity, mac_cap: DEFAULT_MAC_CAP }
    }

    pub fn unlimited() -> Self {
        OracleLimits { gb_capacity: u64::MAX / 4, rf_capacity: u64::MAX / 4, mac_cap: DEFAULT_MAC_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    pub counts: AccessCounts,
    pub cycles: u64,
    pub macs: u64,
    /// Peak words resident in the GB / one RF (single-buffered).
    pub gb_footprint: u64,
    pub rf_footprint: u64,
}

/// Index vectors of a loop level, outermost loop of `order` varying slowest.
fn odometer(order: &LoopOrder, trips: &[u64; NUM_DIMS]) -> Vec<[u64; NUM_DIMS]> {
    let mut out = Vec::new();
    let mut idx = [0u64; NUM_DIMS];
    loop {
        out.push(idx);
        let mut lvl = NUM_DIMS;
        loop {
            if lvl == 0 {
                return out;
            }
            lvl -= 1;
            let d = order[lvl].index();
            idx[d] += 1;
            if idx[d] < trips[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[derive(Default)]
struct Tile {
    id: Option<Vec<u64>>,
    seen: HashSet<Vec<u64>>,
    refetch: bool,
    elems: HashSet<[u64; 4]>,
    lo: [u64; 3],
    hi: [u64; 3],
    peak: u64,
    down: u64,
    refetched: u64,
    up: u64,
}

impl Tile {
    fn footprint(&self, t: Tensor) -> u64 {
        if self.elems.is_empty() {
            return 0;
        }
        match t {
            Tensor::Ifmap => (0..3).map(|i| self.hi[i] - self.lo[i] + 1).product(),
            _ => self.elems.len() as u64,
        }
    }

    fn close(&mut self, t: Tensor) {
        if self.id.is_none() {
            return;
        }
        let fp = self.footprint(t);
        self.peak = self.peak.max(fp);
        match t {
            Tensor::Ofmap => {
                self.up += fp;
                if self.refetch {
                    self.refetched += fp;
                }
            }
            _ => self.down += fp,
        }
        self.elems.clear();
        self.id = None;
    }

    fn visit(&mut self, t: Tensor, id: Vec<u64>) {
        if self.id.as_ref() == Some(&id) {
            return;
        }
        self.close(t);
        self.refetch = !self.seen.insert(id.clone());
        self.id = Some(id);
    }

    /// Records an element access; returns true if it was already touched in
    /// this residency.
    fn touch(&mut self, coord: [u64; 4]) -> bool {
        if self.elems.is_empty() {
            self.lo = [coord[0], coord[1], coord[2]];
            self.hi = self.lo;
        } else {
            for i in 0..3 {
                self.lo[i] = self.lo[i].min(coord[i]);
                self.hi[i] = self.hi[i].max(coord[i]);
            }
        }
        !self.elems.insert(coord)
    }
}

fn identity(layer: &ConvLayerDesc, t: Tensor, idx: &[&[u64; NUM_DIMS]]) -> Vec<u64> {
    let mut id = Vec::new();
    for level in idx {
        for d in Dim::ALL {
            if t.depends_on(layer, d) {
                id.push(level[d.index()]);
            }
        }
    }
    id
}

fn coord(layer: &ConvLayerDesc, t: Tensor, g: &[u64; NUM_DIMS]) -> [u64; 4] {
    let v = |d: Dim| g[d.index()];
    match t {
        Tensor::Weights => [v(Dim::C), v(Dim::R), v(Dim::S), v(Dim::K)],
        Tensor::Ifmap => [
            v(layer.ifmap_channel_dim()),
            v(Dim::X) * layer.stride + v(Dim::R),
            v(Dim::Y) * layer.stride + v(Dim::S),
            0,
        ],
        Tensor::Ofmap => [v(Dim::K), v(Dim::X), v(Dim::Y), 0],
    }
}

pub fn oracle_simulate(layer: &ConvLayerDesc, design: &DataflowDesign, limits: &OracleLimits) -> Result<OracleResult> {
    oracle_simulate_mapped(&LayerMapping::project(layer, design)?, limits)
}

pub fn oracle_simulate_mapped(m: &LayerMapping, limits: &OracleLimits) -> Result<OracleResult> {
    let layer = &m.layer;
    let macs = layer.macs();
    if macs > limits.mac_cap {
        return Err(Error::CapExceeded { macs, cap: limits.mac_cap });
    }
    let t = &m.trips;
    let dram_steps = odometer(&m.orders.dram, &t[LEVEL_DRAM]);
    let gb_steps = odometer(&m.orders.gb, &t[LEVEL_GB]);
    let lanes = odometer(&CANONICAL_ORDER, &t[LEVEL_PE]);
    let rf_steps = odometer(&m.orders.rf, &t[LEVEL_RF]);

    let mut gb_tiles: [Tile; 3] = Default::default();
    let mut rf_tiles: Vec<[Tile; 3]> = lanes.iter().map(|_| Default::default()).collect();
    let mut cycles = 0u64;
    let mut mac_count = 0u64;
    let mut rf_psum_reads = 0u64;
    let mut global = [0u64; NUM_DIMS];

    for di in &dram_steps {
        for (ti, tensor) in Tensor::ALL.into_iter().enumerate() {
            gb_tiles[ti].visit(tensor, identity(layer, tensor, &[di]));
        }
        for gi in &gb_steps {
            for tiles in rf_tiles.iter_mut() {
                for (ti, tensor) in Tensor::ALL.into_iter().enumerate() {
                    tiles[ti].visit(tensor, identity(layer, tensor, &[di, gi]));
                }
            }
            for ri in &rf_steps {
                cycles += 1;
                for (pi, tiles) in lanes.iter().zip(rf_tiles.iter_mut()) {
                    for d in 0..NUM_DIMS {
                        global[d] =
                            ((di[d] * t[LEVEL_GB][d] + gi[d]) * t[LEVEL_PE][d] + pi[d]) * t[LEVEL_RF][d] + ri[d];
                    }
                    mac_count += 1;
                    for (ti, tensor) in Tensor::ALL.into_iter().enumerate() {
                        let c = coord(layer, tensor, &global);
                        gb_tiles[ti].touch(c);
                        let again = tiles[ti].touch(c);
                        if tensor == Tensor::Ofmap && again {
                            rf_psum_reads += 1;
                        }
                    }
                }
            }
        }
    }
    for (ti, tensor) in Tensor::ALL.into_iter().enumerate() {
        gb_tiles[ti].close(tensor);
        for tiles in rf_tiles.iter_mut() {
            tiles[ti].close(tensor);
        }
    }

    let sum_lanes = |f: &dyn Fn(&Tile) -> u64, ti: usize| rf_tiles.iter().map(|tl| f(&tl[ti])).sum::<u64>();
    let mut c = AccessCounts::default();
    for (ti, tensor) in Tensor::ALL.into_iter().enumerate() {
        let g = &gb_tiles[ti];
        let lane_down = sum_lanes(&|x| x.down, ti);
        let lane_ref = sum_lanes(&|x| x.refetched, ti);
        let lane_up = sum_lanes(&|x| x.up, ti);
        match tensor {
            Tensor::Ofmap => {
                c.dram.ofmap = ReadWrite { reads: g.refetched, writes: g.up };
                c.noc.ofmap = ReadWrite { reads: lane_ref, writes: lane_up };
                c.gb.ofmap = ReadWrite { reads: lane_ref + g.up, writes: g.refetched + lane_up };
                c.rf.ofmap = ReadWrite { reads: rf_psum_reads + lane_up, writes: lane_ref + mac_count };
            }
            _ => {
                c.dram.get_mut(tensor).reads = g.down;
                c.gb.get_mut(tensor).writes = g.down;
                c.gb.get_mut(tensor).reads = lane_down;
                c.noc.get_mut(tensor).reads = lane_down;
                c.rf.get_mut(tensor).writes = lane_down;
                c.rf.get_mut(tensor).reads = mac_count;
            }
        }
    }

    let gb_footprint: u64 = gb_tiles.iter().map(|x| x.peak).sum();
    let rf_footprint: u64 = (0..3).map(|ti| rf_tiles.iter().map(|tl| tl[ti].peak).max().unwrap_or(0)).sum();
    if 2 * gb_footprint > limits.gb_capacity {
        return Err(Error::OracleCapacity(format!(
            "GB holds {gb_footprint} words, double-buffered exceeds {}",
            limits.gb_capacity
        )));
    }
    if 2 * rf_footprint > limits.rf_capacity {
        return Err(Error::OracleCapacity(format!(
            "RF holds {rf_footprint} words, double-buffered exceeds {}",
            limits.rf_capacity
        )));
    }
    Ok(OracleResult { counts: c, cycles, macs: mac_count, gb_footprint, rf_footprint })
}
