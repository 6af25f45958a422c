//! Unnormalized d-dimensional FFTs over cubic arrays stored row-major.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

type Plan = Arc<dyn Fft<f64>>;

const ROWS_PER_TASK: usize = 64;

/// Columns gathered per batch along strided axes.
const STRIP: usize = 4;

thread_local! {
    static LINES: std::cell::RefCell<Vec<Complex64>> = const { std::cell::RefCell::new(Vec::new()) };
}

struct PlanPair {
    forward: Plan,
    inverse: Plan,
}

fn plans(n: usize) -> (Plan, Plan) {
    static CACHE: OnceLock<Mutex<HashMap<usize, PlanPair>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let pair = guard.entry(n).or_insert_with(|| {
        let mut planner = FftPlanner::new();
        PlanPair {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    });
    (pair.forward.clone(), pair.inverse.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Direction {
    Forward,
    Inverse,
}

/// In-place transform over every axis of an `n^d` array. No scaling.
pub(crate) fn transform(data: &mut [Complex64], n: usize, d: usize, dir: Direction) {
    debug_assert_eq!(data.len(), n.pow(d as u32));
    let (fwd, inv) = plans(n);
    let plan = match dir {
        Direction::Forward => fwd,
        Direction::Inverse => inv,
    };
    for axis in 0..d {
        transform_axis(data, n, d, axis, &plan);
    }
}

fn transform_axis(data: &mut [Complex64], n: usize, d: usize, axis: usize, plan: &Plan) {
    let inner = n.pow((d - 1 - axis) as u32);
    let block = n * inner;
    if inner == 1 {
        // Contiguous lines; hand rustfft batches of rows.
        data.par_chunks_mut(n * ROWS_PER_TASK).for_each(|chunk| {
            let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
            plan.process_with_scratch(chunk, &mut scratch);
        });
        return;
    }
    data.par_chunks_mut(block).for_each(|blk| {
        LINES.with(|cell| {
            let mut buf = cell.borrow_mut();
            buf.resize(STRIP * n + plan.get_inplace_scratch_len(), Complex64::default());
            let (lines, scratch) = buf.split_at_mut(STRIP * n);
            // blk is (n x inner); transform strips of STRIP columns at a time.
            for c0 in (0..inner).step_by(STRIP) {
                let w = STRIP.min(inner - c0);
                let lines = &mut lines[..w * n];
                for r in 0..n {
                    let row = &blk[r * inner + c0..r * inner + c0 + w];
                    for (c, z) in row.iter().enumerate() {
                        lines[c * n + r] = *z;
                    }
                }
                plan.process_with_scratch(lines, scratch);
                for r in 0..n {
                    let row = &mut blk[r * inner + c0..r * inner + c0 + w];
                    for (c, z) in row.iter_mut().enumerate() {
                        *z = lines[c * n + r];
                    }
                }
            }
        });
    });
}
