use std::collections::BTreeMap;
use std::ops::Range;

use crate::arz::TrafficState;
use crate::config::RunConfig;
use crate::units::vehm_to_vehkm;

use super::scenario::GroundTruth;

/// Density above which a cell counts as congested [veh/km].
pub const CONGESTED_VEHKM: f64 = 150.0;
/// Density at which an estimate is taken to have picked up the queue [veh/km].
pub const DETECTED_VEHKM: f64 = 100.0;
/// Distance upstream of the reduced-limit zone still counted as bottleneck [m].
pub const REGION_UPSTREAM_M: f64 = 200.0;
/// Averaging block for locating the congestion front [s].
pub const FRONT_BLOCK_S: f64 = 10.0;

/// Cells overlapping the reduced-limit zone or the stretch just upstream.
pub fn bottleneck_cells(cfg: &RunConfig) -> Range<usize> {
    let start = (cfg.bottleneck_position_m - REGION_UPSTREAM_M).max(0.0);
    let end = cfg.bottleneck_position_m + cfg.bottleneck_length_m;
    let first = (start / cfg.dh_m).floor() as usize;
    let last = ((end / cfg.dh_m).ceil() as usize).min(cfg.n_cells);
    first.min(last)..last
}

/// First window sample at which a bottleneck cell exceeds [`CONGESTED_VEHKM`].
pub fn onset(gt: &GroundTruth, cells: Range<usize>) -> Option<usize> {
    (gt.k0..=gt.k1).find(|&k| {
        cells
            .clone()
            .any(|i| vehm_to_vehkm(gt.fields.rho[k - gt.k0][i]) > CONGESTED_VEHKM)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrontBlock {
    /// First sample of the block.
    pub k: usize,
    /// Upstream-most cell whose block-mean density exceeds
    /// [`CONGESTED_VEHKM`], if any.
    pub front: Option<usize>,
}

/// Congestion front over consecutive blocks of `block` samples from `from`.
/// A trailing partial block is dropped.
pub fn front_trace(gt: &GroundTruth, from: usize, block: usize) -> Vec<FrontBlock> {
    let n = gt.fields.rho.first().map_or(0, Vec::len);
    let block = block.max(1);
    let mut out = Vec::new();
    let mut k = from.max(gt.k0);
    while k + block <= gt.k1 + 1 {
        let front = (0..n).find(|&i| {
            let mean = (k..k + block)
                .map(|j| gt.fields.rho[j - gt.k0][i])
                .sum::<f64>()
                / block as f64;
            vehm_to_vehkm(mean) > CONGESTED_VEHKM
        });
        out.push(FrontBlock { k, front });
        k += block;
    }
    out
}

/// Whether the front never moves downstream while congestion persists. The
/// blocks considered run from the first to the last congested one.
pub fn front_non_increasing(trace: &[FrontBlock]) -> bool {
    let fronts: Vec<usize> = trace.iter().filter_map(|b| b.front).collect();
    let first = trace.iter().position(|b| b.front.is_some());
    let last = trace.iter().rposition(|b| b.front.is_some());
    let contiguous = match (first, last) {
        (Some(a), Some(b)) => trace[a..=b].iter().all(|b| b.front.is_some()),
        _ => false,
    };
    contiguous && fronts.windows(2).all(|w| w[1] <= w[0])
}

/// First sample at which an estimate exceeds [`DETECTED_VEHKM`] in `cells`.
pub fn detection(estimates: &BTreeMap<usize, TrafficState>, cells: Range<usize>) -> Option<usize> {
    estimates
        .iter()
        .find(|(_, x)| cells.clone().any(|i| vehm_to_vehkm(x.rho(i)) > DETECTED_VEHKM))
        .map(|(&k, _)| k)
}
