//! Exhaustive comparison of an access model against the loop-nest oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gads::{
    DataflowDesign, DimFactors, LayerMapping, LoopOrder, LoopOrders, NocChoice, TileFactors, CANONICAL_ORDER, LEVEL_GB,
    LEVEL_RF,
};
use crate::workload::{ConvLayerDesc, Dim};

use super::oracle::{oracle_simulate_mapped, OracleLimits};
use super::{
    assemble_counts, compute_cycles_mapped, distinct, dram_gb_loops, dram_loops, level_footprint, tile_footprint,
    AccessCounts, Boundary, HardwareCostTables, Tensor,
};

/// Grid of small layers and designs. Every loop level takes each order in
/// `orders`; per dimension the RF, PE and GB factors are each 1 or the
/// dimension's smallest prime factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSweep {
    pub layers: Vec<ConvLayerDesc>,
    pub orders: Vec<LoopOrder>,
    pub nocs: Vec<NocChoice>,
    pub tables: HardwareCostTables,
}

const REVERSED_ORDER: LoopOrder = [Dim::K, Dim::C, Dim::S, Dim::R, Dim::Y, Dim::X];

impl Default for OracleSweep {
    fn default() -> Self {
        OracleSweep {
            layers: vec![
                ConvLayerDesc::standard(2, 2, 1, 1, 2, 2),
                ConvLayerDesc::standard(4, 1, 3, 1, 1, 2),
                ConvLayerDesc::standard(2, 2, 2, 1, 2, 1).with_stride(2),
                ConvLayerDesc::depthwise(2, 1, 3, 3, 2, 1),
                ConvLayerDesc::standard(2, 1, 1, 1, 4, 2).with_groups(2),
            ],
            orders: vec![CANONICAL_ORDER, REVERSED_ORDER],
            nocs: NocChoice::ALL.to_vec(),
            tables: HardwareCostTables::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub layer: ConvLayerDesc,
    pub design: DataflowDesign,
    pub model: AccessCounts,
    pub oracle: AccessCounts,
    pub model_cycles: u64,
    pub oracle_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub checked: usize,
    pub skipped_capacity: usize,
    pub mismatches: usize,
    pub first_counterexample: Option<Counterexample>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

fn smallest_prime(n: u64) -> u64 {
    (2..=n).find(|p| n % p == 0).unwrap_or(1)
}

/// (rf, pe, gb) factor triples for one dimension.
fn dim_options(extent: u64, pe_ok: bool) -> Vec<[u64; 3]> {
    let p = smallest_prime(extent);
    let vals: &[u64] = if p > 1 { &[1, p] } else { &[1] };
    let mut out = Vec::new();
    for &rf in vals {
        for &pe in vals {
            if pe > 1 && !pe_ok {
                continue;
            }
            for &gb in vals {
                if extent % (rf * pe * gb) == 0 {
                    out.push([rf, pe, gb]);
                }
            }
        }
    }
    out
}

impl OracleSweep {
    /// All designs of the grid (legal or not) paired with their layer.
    pub fn designs(&self) -> Vec<(ConvLayerDesc, DataflowDesign)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            let dims = layer.loop_dims();
            for &noc in &self.nocs {
                let per_dim: Vec<Vec<[u64; 3]>> =
                    Dim::ALL.iter().map(|&d| dim_options(dims[d.index()], noc.allows(d))).collect();
                let mut tilings =
                    vec![TileFactors { gb: DimFactors::ONES, pe: DimFactors::ONES, rf: DimFactors::ONES }];
                for (i, opts) in per_dim.iter().enumerate() {
                    let mut next = Vec::with_capacity(tilings.len() * opts.len());
                    for t in &tilings {
                        for o in opts {
                            let mut t = *t;
                            t.rf.0[i] = o[0];
                            t.pe.0[i] = o[1];
                            t.gb.0[i] = o[2];
                            next.push(t);
                        }
                    }
                    tilings = next;
                }
                for tiles in &tilings {
                    for &dram in &self.orders {
                        for &gb in &self.orders {
                            for &rf in &self.orders {
                                let design =
                                    DataflowDesign { noc, loop_order: LoopOrders { dram, gb, rf }, tiles: *tiles };
                                out.push((*layer, design));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// The shipped model: `(access counts, compute cycles)`.
pub fn analytical_model(m: &LayerMapping) -> (AccessCounts, u64) {
    (super::count_accesses_mapped(m), compute_cycles_mapped(m))
}

/// Fault-injected model that ignores loop order: every relevant loop is
/// assumed to refill exactly once per distinct tile.
pub fn corrupted_reuse_model(m: &LayerMapping) -> (AccessCounts, u64) {
    let traffic = |loops: &[(Dim, u64)], level: usize, lanes: u64| -> [Boundary; 3] {
        let ext = m.tile_extent(level);
        Tensor::ALL.map(|t| {
            let n = distinct(loops, |d| t.depends_on(&m.layer, d));
            let fp = tile_footprint(&m.layer, t, &ext) * lanes;
            match t {
                Tensor::Ofmap => Boundary { down: 0, refetch: 0, up: n * fp },
                _ => Boundary { down: n * fp, refetch: 0, up: 0 },
            }
        })
    };
    let dram = traffic(&dram_loops(m), LEVEL_GB, 1);
    let noc = traffic(&dram_gb_loops(m), LEVEL_RF, m.pe_used());
    (assemble_counts(&dram, &noc, m.layer.macs(), noc[2].up), compute_cycles_mapped(m))
}

/// Checks `model` against the oracle on every design of the sweep that fits
/// the capacity limits of `sweep.tables`.
pub fn run_sweep<F>(sweep: &OracleSweep, model: F) -> Result<SweepReport>
where
    F: Fn(&LayerMapping) -> (AccessCounts, u64) + Sync,
{
    let limits = OracleLimits::from_tables(&sweep.tables);
    let designs = sweep.designs();
    let results: Vec<Result<Option<Option<Counterexample>>>> = designs
        .par_iter()
        .map(|(layer, design)| {
            let m = LayerMapping::exact(layer, design)?;
            if 2 * level_footprint(&m, LEVEL_GB) > limits.gb_capacity
                || 2 * level_footprint(&m, LEVEL_RF) > limits.rf_capacity
            {
                return Ok(None);
            }
            let o = oracle_simulate_mapped(&m, &limits)?;
            let (counts, cycles) = model(&m);
            if counts == o.counts && cycles == o.cycles {
                Ok(Some(None))
            } else {
                Ok(Some(Some(Counterexample {
                    layer: *layer,
                    design: *design,
                    model: counts,
                    oracle: o.counts,
                    model_cycles: cycles,
                    oracle_cycles: o.cycles,
                })))
            }
        })
        .collect();
    let mut report = SweepReport { checked: 0, skipped_capacity: 0, mismatches: 0, first_counterexample: None };
    for r in results {
        match r? {
            None => report.skipped_capacity += 1,
            Some(None) => report.checked += 1,
            Some(Some(cx)) => {
                report.checked += 1;
                report.mismatches += 1;
                if report.first_counterexample.is_none() {
                    report.first_counterexample = Some(cx);
                }
            }
        }
    }
    Ok(report)
}
