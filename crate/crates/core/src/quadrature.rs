//! Globally adaptive Gauss-Kronrod (7/15) integration of vector-valued
//! integrands over `[a, b]` with caller-supplied breakpoints.
//!
//! The interval with the largest error estimate is bisected until the summed
//! estimate drops under the absolute tolerance or the interval budget runs out.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the odd Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            max_intervals: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadResult {
    pub values: Vec<f64>,
    /// Summed error estimate, max-norm over components.
    pub error: f64,
    pub intervals: usize,
    pub evaluations: usize,
}

struct Piece {
    a: f64,
    b: f64,
    values: Vec<f64>,
    errors: Vec<f64>,
    norm: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.norm
            .total_cmp(&other.norm)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

fn gk15<F>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> Piece
where
    F: FnMut(f64, &mut [f64]),
{
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut left = vec![0.0; dim];

    f(centre, buf);
    for k in 0..dim {
        kron[k] = WGK[7] * buf[k];
        gauss[k] = WG[3] * buf[k];
    }
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let dx = half * x;
        f(centre - dx, buf);
        left.copy_from_slice(&buf[..dim]);
        f(centre + dx, buf);
        for k in 0..dim {
            let s = left[k] + buf[k];
            kron[k] += w * s;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    let mut errors = vec![0.0; dim];
    let mut norm = 0.0f64;
    for k in 0..dim {
        kron[k] *= half;
        gauss[k] *= half;
        errors[k] = (kron[k] - gauss[k]).abs();
        norm = norm.max(errors[k]);
    }
    Piece {
        a,
        b,
        values: kron,
        errors,
        norm,
    }
}

/// Integrates `f` (writing `dim` components into its output slice) over
/// `[a, b]`, splitting first at every breakpoint strictly inside the range.
pub fn integrate<F>(mut f: F, dim: usize, a: f64, b: f64, breaks: &[f64], cfg: &QuadConfig) -> Result<QuadResult>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut points: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x > a && *x < b)
        .collect();
    points.push(a);
    points.push(b);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut buf = vec![0.0; dim];
    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in points.windows(2) {
        heap.push(gk15(&mut f, w[0], w[1], dim, &mut buf));
        evaluations += 15;
    }

    let total_error = |heap: &BinaryHeap<Piece>| {
        let mut errs = vec![0.0; dim];
        for p in heap.iter() {
            for (e, pe) in errs.iter_mut().zip(&p.errors) {
                *e += pe;
            }
        }
        errs.into_iter().fold(0.0, f64::max)
    };

    // Running error is tracked incrementally; recomputed exactly on exit.
    let mut running: Vec<f64> = vec![0.0; dim];
    for p in heap.iter() {
        for (e, pe) in running.iter_mut().zip(&p.errors) {
            *e += pe;
        }
    }

    loop {
        let err = running.iter().copied().fold(0.0, f64::max);
        if err <= cfg.abs_tol || heap.len() >= cfg.max_intervals {
            break;
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // Interval cannot be split further in floating point.
            heap.push(worst);
            break;
        }
        let left = gk15(&mut f, worst.a, mid, dim, &mut buf);
        let right = gk15(&mut f, mid, worst.b, dim, &mut buf);
        evaluations += 30;
        for (k, r) in running.iter_mut().enumerate() {
            *r += left.errors[k] + right.errors[k] - worst.errors[k];
        }
        heap.push(left);
        heap.push(right);
    }

    let error = total_error(&heap);
    let intervals = heap.len();
    let mut pieces = heap.into_vec();
    // Sum in position order so results do not depend on heap layout.
    pieces.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut values = vec![0.0; dim];
    for p in &pieces {
        for (v, pv) in values.iter_mut().zip(&p.values) {
            *v += pv;
        }
    }
    if error > cfg.abs_tol {
        return Err(Error::Quadrature {
            error,
            tolerance: cfg.abs_tol,
            intervals,
        });
    }
    Ok(QuadResult {
        values,
        error,
        intervals,
        evaluations,
    })
}
