//! Runs sets of cells, one simulation per worker thread.

use lambdanet_core::simkernel::SimError;
use lambdanet_core::workload::{generate, WorkloadError};
use lambdanet_core::{Mode, NetworkGraph, SimConfig, WorkloadSpec};
use rayon::prelude::*;

use crate::report::{Cell, RunRecord};

/// Everything a cell does not override.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: NetworkGraph,
    pub workload: WorkloadSpec,
    pub base: SimConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// `(W, |Λc|)` pairs of the three benchmark tables.
pub const BENCH_WAVELENGTHS: [(usize, usize); 3] = [(4, 1), (16, 4), (64, 16)];
pub const BENCH_PARALLELISM: [usize; 4] = [1, 4, 8, 16];

/// 3 × 4 × 2 cells: wavelength pair, then parallelism, then existing before
/// proposed.
pub fn benchmark_grid() -> Vec<Cell> {
    let mut cells = Vec::with_capacity(24);
    for (wavelengths, control) in BENCH_WAVELENGTHS {
        for parallelism in BENCH_PARALLELISM {
            for mode in [Mode::Baseline, Mode::ProposedConnection] {
                cells.push(Cell { wavelengths, control, parallelism, mode });
            }
        }
    }
    cells
}

pub fn run_cell(scenario: &Scenario, cell: Cell, seed: u64) -> Result<RunRecord, SweepError> {
    let config = SimConfig {
        wavelengths: cell.wavelengths,
        control: cell.control,
        parallelism: cell.parallelism,
        mode: cell.mode,
        seed,
        ..scenario.base
    };
    let workload = generate(&WorkloadSpec { seed, ..scenario.workload }, &scenario.graph)?;
    let metrics = lambdanet_core::run(&config, &scenario.graph, &workload)?;
    Ok(RunRecord { cell, seed, metrics })
}

/// Every cell under every seed. Output is ordered by cell, then seed,
/// whatever order the workers finish in.
pub fn run_cells(scenario: &Scenario, cells: &[Cell], seeds: &[u64]) -> Result<Vec<RunRecord>, SweepError> {
    let jobs: Vec<(Cell, u64)> = cells.iter().flat_map(|&c| seeds.iter().map(move |&s| (c, s))).collect();
    jobs.into_par_iter().map(|(c, s)| run_cell(scenario, c, s)).collect()
}
