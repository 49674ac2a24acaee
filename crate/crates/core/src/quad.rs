//! Adaptive Gauss-Kronrod (7/15) quadrature for complex- and real-valued
//! integrands on finite intervals.
//!
//! Global adaptive bisection: the interval with the largest error estimate is
//! split until the summed estimate drops under `max(abs_tol, rel_tol*|I|)` or
//! the interval budget runs out.

use num_complex::Complex64;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

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

// Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-10,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: Complex64,
    pub error: f64,
    pub intervals: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: Complex64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> (Complex64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += s * WGK[j];
        if j % 2 == 1 {
            gauss += s * WG[j / 2];
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).norm();
    (value, error)
}

/// Integrates `f` over `[a, b]`, splitting first at the given interior
/// breakpoints (kinks or discontinuities of the integrand).
pub fn integrate_complex<F>(f: F, a: f64, b: f64, breakpoints: &[f64], cfg: QuadConfig) -> QuadResult
where
    F: Fn(f64) -> Complex64,
{
    if !(b > a) {
        return QuadResult {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
            intervals: 0,
        };
    }
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&x| x > a && x < b)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut heap = BinaryHeap::new();
    let mut total = Complex64::new(0.0, 0.0);
    let mut total_err = 0.0;
    let mut lo = a;
    for &hi in cuts.iter().chain(std::iter::once(&b)) {
        let (value, error) = gk15(&f, lo, hi);
        total += value;
        total_err += error;
        heap.push(Segment { a: lo, b: hi, value, error });
        lo = hi;
    }

    while total_err > cfg.abs_tol.max(cfg.rel_tol * total.norm()) && heap.len() < cfg.max_intervals {
        let worst = match heap.pop() {
            Some(s) => s,
            None => break,
        };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval at machine resolution
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }

    // Re-sum to shed accumulated round-off from the running updates.
    let mut value = Complex64::new(0.0, 0.0);
    let mut error = 0.0;
    let intervals = heap.len();
    for s in heap.into_iter() {
        value += s.value;
        error += s.error;
    }
    QuadResult { value, error, intervals }
}

pub fn integrate<F>(f: F, a: f64, b: f64, breakpoints: &[f64], cfg: QuadConfig) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let r = integrate_complex(|x| Complex64::new(f(x), 0.0), a, b, breakpoints, cfg);
    (r.value.re, r.error)
}
