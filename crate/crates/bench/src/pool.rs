//! Fixed-size worker pool: one job per worker at a time, results returned
//! in input order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use crate::error::BenchResult;
use crate::scenario::{run_scenario, Run, ScenarioConfig};

pub fn worker_count() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = worker_count().min(items.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let out = f(item);
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every job ran"))
        .collect()
}

pub fn run_many(cfgs: &[ScenarioConfig]) -> Vec<BenchResult<Run>> {
    par_map(cfgs, run_scenario)
}
