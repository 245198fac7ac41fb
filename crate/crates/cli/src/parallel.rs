//! Worker-pool execution of the sensitivity grid. Every (layer, round)
//! cell derives its own seeds from (master, layer, round, step), so cells
//! are order-independent and the assembled grid is identical for any
//! worker count, serial included.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use prunesense_core::data::DatasetSplit;
use prunesense_core::error::Error;
use prunesense_core::model::Network;
use prunesense_core::sensitivity::{measure_cell, HierarchyConfig, RoundRecord};
use prunesense_core::surgery::prunable_layers;
use prunesense_core::train::evaluate;
use prunesense_core::Result;

/// Runs the full accuracy grid with up to `workers` threads (0 and 1 both
/// mean serial) and assembles the per-layer, per-round curves.
pub fn run_grid(
    net: &Network,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    cfg: &HierarchyConfig,
    master_seed: u64,
    workers: usize,
) -> Result<RoundRecord> {
    cfg.validate()?;
    let layers = prunable_layers(net);
    if layers.is_empty() {
        return Err(Error::Constraint(
            "network has no prunable conv layers to probe".into(),
        ));
    }
    let baseline = evaluate(net, test_split)?.0;

    let jobs: Vec<(usize, usize)> = (0..layers.len())
        .flat_map(|p| (0..cfg.rounds).map(move |m| (p, m)))
        .collect();
    let mut cells: Vec<Option<Vec<f64>>> = vec![None; jobs.len()];

    if workers <= 1 {
        for (j, &(p, m)) in jobs.iter().enumerate() {
            cells[j] = Some(measure_cell(
                net,
                train_split,
                test_split,
                cfg,
                layers[p],
                m,
                master_seed,
            )?);
        }
    } else {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<Vec<f64>>>>> =
            Mutex::new(vec![None; jobs.len()]);
        thread::scope(|scope| {
            for _ in 0..workers.min(jobs.len()) {
                scope.spawn(|| loop {
                    let j = next.fetch_add(1, Ordering::Relaxed);
                    if j >= jobs.len() {
                        break;
                    }
                    let (p, m) = jobs[j];
                    let out = measure_cell(
                        net,
                        train_split,
                        test_split,
                        cfg,
                        layers[p],
                        m,
                        master_seed,
                    );
                    results.lock().unwrap()[j] = Some(out);
                });
            }
        });
        let results = results.into_inner().unwrap();
        for (j, slot) in results.into_iter().enumerate() {
            match slot {
                Some(Ok(curve)) => cells[j] = Some(curve),
                Some(Err(e)) => return Err(e),
                None => {
                    return Err(Error::Training {
                        epoch: 0,
                        message: format!("grid cell {j} was never computed"),
                    })
                }
            }
        }
    }

    let mut curves = vec![Vec::with_capacity(cfg.rounds); layers.len()];
    for (j, &(p, _)) in jobs.iter().enumerate() {
        curves[p].push(cells[j].take().unwrap());
    }
    let record = RoundRecord {
        baseline,
        ratios: cfg.ratio_set(),
        layers,
        curves,
    };
    record.validate()?;
    Ok(record)
}
