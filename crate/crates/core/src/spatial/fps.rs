use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{dist2, Point};
use crate::scalar::Real;

const PAR_THRESHOLD: usize = 1 << 14;

/// Greedy max-min (farthest point) selection of `m` indices starting from
/// `seed_index`, returned in selection order. Each pick maximises the
/// distance to the already selected set; ties go to the smallest index.
pub fn farthest_point_sampling<T: Real>(positions: &[Point<T>], m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if m == 0 || m > n {
        return Err(Error::param(format!("cannot select {m} of {n} points")));
    }
    if seed_index >= n {
        return Err(Error::param(format!("seed index {seed_index} out of range for {n} points")));
    }
    let mut selected = Vec::with_capacity(m);
    selected.push(seed_index);
    // squared distance to the selected set; selected points are parked at -1
    let mut min_d2 = vec![T::infinity(); n];
    min_d2[seed_index] = -T::one();
    let mut last = seed_index;
    while selected.len() < m {
        let anchor = positions[last];
        let update = |(d, p): (&mut T, &Point<T>)| {
            if *d >= T::zero() {
                let nd = dist2(p, &anchor);
                if nd < *d {
                    *d = nd;
                }
            }
        };
        if n >= PAR_THRESHOLD {
            min_d2.par_iter_mut().zip(positions.par_iter()).for_each(update);
        } else {
            min_d2.iter_mut().zip(positions.iter()).for_each(update);
        }
        let mut best = 0;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > min_d2[best] {
                best = i;
            }
        }
        min_d2[best] = -T::one();
        selected.push(best);
        last = best;
    }
    Ok(selected)
}
