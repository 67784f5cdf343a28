//! Oscillatory integrals and root finding for the correlation analysis.
//!
//! `airy_cos_integral` is A(x) = int_0^x cos(pi/2 t^3) dt and
//! `fresnel_integrals` returns (B, D) with B(x) = int_0^x cos(pi/2 t^2) dt and
//! D(x) = int_0^x sin(pi/2 t^2) dt. Both split [0, x] into panels of a
//! quarter period of phase and run adaptive Gauss-Kronrod on each panel.

use std::f64::consts::FRAC_PI_2;

use crate::{Error, Result};

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * K15_WEIGHTS[7];
    let mut g = fc * G7_WEIGHTS[3];
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        k += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) quadrature with absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, e) = gk15(f, a, b);
        if e <= tol || depth == 0 || (b - a).abs() < 1e-15 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth - 1) + rec(f, m, b, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    rec(f, a, b, tol, 40)
}

// Integrate over panels whose edges are t_j = (j)^(1/p) so each panel spans
// a quarter period of the phase pi/2 t^p.
fn paneled<F: Fn(f64) -> f64>(f: F, x: f64, power: f64) -> f64 {
    let mut total = 0.0;
    let mut lo = 0.0;
    let mut j = 1.0f64;
    while lo < x {
        let hi = j.powf(1.0 / power).min(x);
        total += integrate(&f, lo, hi, 1e-14);
        lo = hi;
        j += 1.0;
    }
    total
}

fn check_arg(x: f64, name: &'static str) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite(name));
    }
    if x < 0.0 {
        return Err(Error::InvalidConfig {
            field: "x",
            reason: format!("{name} needs x >= 0, got {x}"),
        });
    }
    Ok(())
}

/// A(x) = int_0^x cos(pi/2 t^3) dt.
pub fn airy_cos_integral(x: f64) -> Result<f64> {
    check_arg(x, "airy_cos_integral")?;
    Ok(paneled(|t| (FRAC_PI_2 * t * t * t).cos(), x, 3.0))
}

/// (B(x), D(x)): Fresnel cosine and sine integrals with the pi/2 t^2 kernel.
pub fn fresnel_integrals(x: f64) -> Result<(f64, f64)> {
    check_arg(x, "fresnel_integrals")?;
    let b = paneled(|t| (FRAC_PI_2 * t * t).cos(), x, 2.0);
    let d = paneled(|t| (FRAC_PI_2 * t * t).sin(), x, 2.0);
    Ok((b, d))
}

/// Bisection for `f(root) = target` on a bracket whose ends straddle the target.
pub fn solve_monotone_root<F: Fn(f64) -> f64>(f: F, target: f64, bracket: (f64, f64)) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    let mut flo = f(lo) - target;
    let fhi = f(hi) - target;
    if !flo.is_finite() || !fhi.is_finite() {
        return Err(Error::NonFinite("solve_monotone_root"));
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoBracket { lo, hi, target });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid) - target;
        if fm == 0.0 || (hi - lo) < 1e-15 * (1.0 + mid.abs()) {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Scan from `start` in steps of `step` until `f` first drops to `target` or
/// below. Returns the bracket around that first crossing.
pub fn first_descent_bracket<F: Fn(f64) -> f64>(
    f: F,
    target: f64,
    start: f64,
    step: f64,
    max: f64,
) -> Result<(f64, f64)> {
    let mut lo = start;
    while lo < max {
        let hi = lo + step;
        if f(hi) <= target {
            return Ok((lo, hi));
        }
        lo = hi;
    }
    Err(Error::NoBracket {
        lo: start,
        hi: max,
        target,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntegralFunction {
    AiryCos,
    FresnelCos,
    FresnelSin,
}

impl IntegralFunction {
    pub fn eval(self, x: f64) -> Result<f64> {
        match self {
            IntegralFunction::AiryCos => airy_cos_integral(x),
            IntegralFunction::FresnelCos => Ok(fresnel_integrals(x)?.0),
            IntegralFunction::FresnelSin => Ok(fresnel_integrals(x)?.1),
        }
    }
}

/// Tabulated integral on a uniform grid over [0, x_max] with local Lagrange
/// interpolation.
#[derive(Clone, Debug)]
pub struct IntegralTable {
    pub function_id: IntegralFunction,
    pub x_max: f64,
    pub samples: Vec<(f64, f64)>,
    pub interpolation_order: usize,
}

impl IntegralTable {
    pub fn build(function_id: IntegralFunction, x_max: f64, n: usize, order: usize) -> Result<Self> {
        if n < order + 1 || !(x_max > 0.0) {
            return Err(Error::InvalidConfig {
                field: "integral_table",
                reason: format!("need n > order and x_max > 0 (n={n}, order={order})"),
            });
        }
        let h = x_max / (n - 1) as f64;
        // Running sum over consecutive intervals keeps the build linear in n.
        let mut samples = Vec::with_capacity(n);
        let mut acc = 0.0;
        samples.push((0.0, 0.0));
        for i in 1..n {
            let (a, b) = ((i - 1) as f64 * h, i as f64 * h);
            acc += match function_id {
                IntegralFunction::AiryCos => integrate(&|t: f64| (FRAC_PI_2 * t * t * t).cos(), a, b, 1e-15),
                IntegralFunction::FresnelCos => integrate(&|t: f64| (FRAC_PI_2 * t * t).cos(), a, b, 1e-15),
                IntegralFunction::FresnelSin => integrate(&|t: f64| (FRAC_PI_2 * t * t).sin(), a, b, 1e-15),
            };
            samples.push((b, acc));
        }
        Ok(Self {
            function_id,
            x_max,
            samples,
            interpolation_order: order,
        })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=self.x_max).contains(&x) {
            return Err(Error::InvalidConfig {
                field: "x",
                reason: format!("{x} outside table domain [0, {}]", self.x_max),
            });
        }
        let n = self.samples.len();
        let h = self.x_max / (n - 1) as f64;
        let p = self.interpolation_order + 1;
        let centre = (x / h).round() as isize - (p as isize - 1) / 2;
        let start = centre.clamp(0, (n - p) as isize) as usize;
        let pts = &self.samples[start..start + p];
        let mut sum = 0.0;
        for (i, &(xi, yi)) in pts.iter().enumerate() {
            let mut l = 1.0;
            for (j, &(xj, _)) in pts.iter().enumerate() {
                if i != j {
                    l *= (x - xj) / (xi - xj);
                }
            }
            sum += l * yi;
        }
        Ok(sum)
    }
}

const AI0: f64 = 0.355_028_053_887_817_24;
const AIP0: f64 = 0.258_819_403_792_806_8;

/// Airy function Ai(x) for real x.
pub fn airy_ai(x: f64) -> f64 {
    use std::f64::consts::PI;
    if (-8.0..=5.0).contains(&x) {
        let x3 = x * x * x;
        let (mut f, mut g) = (1.0, x);
        let (mut tf, mut tg) = (1.0, x);
        for k in 0..200 {
            let k = k as f64;
            tf *= x3 / ((3.0 * k + 2.0) * (3.0 * k + 3.0));
            tg *= x3 / ((3.0 * k + 3.0) * (3.0 * k + 4.0));
            f += tf;
            g += tg;
            if tf.abs() < 1e-18 * f.abs().max(1.0) && tg.abs() < 1e-18 * g.abs().max(1.0) {
                break;
            }
        }
        return AI0 * f - AIP0 * g;
    }
    let u = [
        1.0,
        5.0 / 72.0,
        385.0 / 10368.0,
        85085.0 / 2239488.0,
        37182145.0 / 644972544.0,
        0.116_099_064_025_515_41,
    ];
    let ax = x.abs();
    let zeta = 2.0 / 3.0 * ax.powf(1.5);
    if x > 0.0 {
        let mut s = 0.0;
        let mut zk = 1.0;
        for (k, uk) in u.iter().enumerate() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * uk / zk;
            zk *= zeta;
        }
        (-zeta).exp() / (2.0 * PI.sqrt() * ax.powf(0.25)) * s
    } else {
        let z2 = zeta * zeta;
        let p = 1.0 - u[2] / z2 + u[4] / (z2 * z2);
        let q = u[1] / zeta - u[3] / (z2 * zeta) + u[5] / (z2 * z2 * zeta);
        let phase = zeta + PI / 4.0;
        (phase.sin() * p - phase.cos() * q) / (PI.sqrt() * ax.powf(0.25))
    }
}
