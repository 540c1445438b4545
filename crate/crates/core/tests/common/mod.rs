//! Independent numerical oracles for the integration tests.

#![allow(dead_code)]

use qavar_core::NoiseParams;

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
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
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod integral of `f` over `[a, b]` to relative error `rel`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, v: f64, e: f64, tol: f64, depth: u32) -> f64 {
        // stop at the round-off floor as well as at the target
        if e <= tol || e <= 8.0 * f64::EPSILON * v.abs() || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        let (vl, el) = gk15(f, a, m);
        let (vr, er) = gk15(f, m, b);
        rec(f, a, m, vl, el, 0.5 * tol, depth - 1) + rec(f, m, b, vr, er, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (v, e) = gk15(f, a, b);
    rec(f, a, b, v, e, rel * v.abs(), 30)
}

/// `int_{a1}^{b1} int_{a2}^{b2} R(|t1 - t2|) dt2 dt1` by nested quadrature of
/// the exponential part, split at the kink `t2 = t1`; the delta part
/// contributes `beta` times the overlap of the two intervals.
pub fn block_integral(p: &NoiseParams, (a1, b1): (f64, f64), (a2, b2): (f64, f64)) -> f64 {
    let tol = 1e-14;
    let inner = |t1: f64| {
        let g = |t2: f64| p.alpha * (-p.gamma * (t1 - t2).abs()).exp();
        if t1 > a2 && t1 < b2 {
            integrate(&g, a2, t1, tol) + integrate(&g, t1, b2, tol)
        } else {
            integrate(&g, a2, b2, tol)
        }
    };
    let overlap = (b1.min(b2) - a1.max(a2)).max(0.0);
    integrate(&inner, a1, b1, tol) + p.beta * overlap
}

/// `G_ij` over steps of length `step`.
pub fn quad_block_kernel(p: &NoiseParams, step: f64, steps: usize) -> Vec<Vec<f64>> {
    let cell = |i: usize| (i as f64 * step, (i + 1) as f64 * step);
    (0..steps)
        .map(|i| {
            (0..steps)
                .map(|j| block_integral(p, cell(i), cell(j)))
                .collect()
        })
        .collect()
}

/// `H_i = (int_{step i} int_tau^{2 tau} R - int_{step i} int_0^tau R) / tau`
/// for the `2k - 1` interrogated steps.
pub fn quad_cross_kernel(p: &NoiseParams, step: f64, k: usize) -> Vec<f64> {
    let tau = k as f64 * step;
    (0..2 * k - 1)
        .map(|i| {
            let cell = (i as f64 * step, (i + 1) as f64 * step);
            let late = block_integral(p, cell, (tau, 2.0 * tau));
            let early = block_integral(p, cell, (0.0, tau));
            (late - early) / tau
        })
        .collect()
}

/// Relative closeness with an absolute floor for entries near zero.
pub fn close(got: f64, want: f64, rel: f64, floor: f64) -> bool {
    (got - want).abs() <= rel * want.abs().max(floor)
}
