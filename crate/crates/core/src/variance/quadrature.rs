//! Adaptive Gauss-Kronrod (7/15) quadrature with global error control.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Result, SmcError};
use crate::sum::NeumaierSum;

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
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error)
    }
}

/// Result of [`integrate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

/// Integrate `f` over the sorted breakpoints `points` (at least two) until
/// the estimated error is below `rel_tol * |value| + abs_tol`.
pub fn integrate(f: impl Fn(f64) -> f64, points: &[f64], rel_tol: f64, abs_tol: f64) -> Result<Quadrature> {
    const MAX_PIECES: usize = 4_000;
    if points.len() < 2 {
        return Err(SmcError::invalid("quadrature needs at least two breakpoints"));
    }
    let mut heap = BinaryHeap::new();
    for w in points.windows(2) {
        if w[1] > w[0] {
            let (value, error) = gk15(&f, w[0], w[1]);
            heap.push(Piece { a: w[0], b: w[1], value, error });
        }
    }
    loop {
        let value: f64 = heap.iter().map(|p| p.value).collect::<NeumaierSum>().value();
        let error: f64 = heap.iter().map(|p| p.error).sum();
        if !value.is_finite() || !error.is_finite() {
            return Err(SmcError::Quadrature { achieved: f64::INFINITY });
        }
        if error <= rel_tol * value.abs() + abs_tol {
            return Ok(Quadrature { value, error });
        }
        if heap.len() >= MAX_PIECES {
            return Err(SmcError::Quadrature {
                achieved: error / value.abs().max(f64::MIN_POSITIVE),
            });
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(SmcError::Quadrature {
                achieved: error / value.abs().max(f64::MIN_POSITIVE),
            });
        }
        for (a, b) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = gk15(&f, a, b);
            heap.push(Piece { a, b, value, error });
        }
    }
}
