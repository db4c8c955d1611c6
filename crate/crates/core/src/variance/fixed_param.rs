//! Asymptotic variances for the Beta-Bernoulli fixed-parameter model with
//! the identity kernel, `pi~_0` instrumental and `pi~_t = pi_{t-1}`.
//!
//! Every term is an integral of a product of Beta densities against a
//! bounded function of `theta`, evaluated by adaptive quadrature split at
//! the kernel's mode, at multiples of its spread and at the points where the
//! residual weight `v_k` crosses an integer.

use super::quadrature::integrate;
use super::recursion::fractional_part;
use crate::error::{Result, SmcError};
use crate::models::beta_bernoulli::{ln_beta_fn, BetaBernoulliModel};
use crate::resampling::SelectionScheme;

/// Relative tolerance of every quadrature.
pub const QUAD_REL_TOL: f64 = 1e-10;

/// The three variances at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedParamVariances {
    pub t: usize,
    pub sis: f64,
    pub multinomial: f64,
    pub residual: f64,
}

/// Breakpoints for a Beta-like kernel with effective shape `(a, b)`.
fn kernel_points(a: f64, b: f64, extra: &[f64]) -> Vec<f64> {
    let mut pts = vec![0.0, 1.0];
    let s = a + b;
    let centre = if a > 1.0 && b > 1.0 { (a - 1.0) / (s - 2.0) } else { a / s };
    let sd = (a * b / (s * s * (s + 1.0))).sqrt();
    pts.push(centre);
    for m in [0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 40.0] {
        pts.push(centre - m * sd);
        pts.push(centre + m * sd);
    }
    pts.extend_from_slice(extra);
    let mut pts: Vec<f64> = pts.into_iter().filter(|x| (0.0..=1.0).contains(x)).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Points in `(0, 1)` where `floor(v_k(theta))` changes.
fn integer_crossings(model: &BetaBernoulliModel, shapes: &Shapes, k: usize) -> Result<Vec<f64>> {
    if k >= 1 {
        let (a0, b0) = shapes.proposal(k);
        let m = a0 / (a0 + b0);
        let success = model.observations[k - 1] == 1;
        let (slope_inv, top) = if success { (m, 1.0 / m) } else { (1.0 - m, 1.0 / (1.0 - m)) };
        return Ok((1..)
            .take_while(|n| (*n as f64) < top)
            .map(|n| {
                let x = n as f64 * slope_inv;
                if success {
                    x
                } else {
                    1.0 - x
                }
            })
            .collect());
    }
    // v_0 is a ratio of Beta densities: scan and bisect
    const GRID: usize = 4000;
    let v = |x: f64| model.weight_at(0, x);
    let mut out = Vec::new();
    let mut prev_x = 0.5 / GRID as f64;
    let mut prev = v(prev_x)?.floor();
    for i in 1..GRID {
        let x = (i as f64 + 0.5) / GRID as f64;
        let cur = v(x)?.floor();
        if cur != prev {
            let (mut lo, mut hi) = (prev_x, x);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if v(mid)?.floor() == prev {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        prev = cur;
        prev_x = x;
    }
    Ok(out)
}

/// Beta log density with the normaliser computed once.
#[derive(Clone, Copy)]
struct LnBeta {
    a: f64,
    b: f64,
    c: f64,
}

impl LnBeta {
    fn new((a, b): (f64, f64)) -> Self {
        LnBeta { a, b, c: ln_beta_fn(a, b) }
    }

    fn at(&self, x: f64) -> f64 {
        (self.a - 1.0) * x.ln() + (self.b - 1.0) * (-x).ln_1p() - self.c
    }
}

/// `v_k` as a closure with its constants resolved.
fn weight_fn<'a>(model: &'a BetaBernoulliModel, shapes: &Shapes, k: usize) -> Box<dyn Fn(f64) -> f64 + Sync + 'a> {
    if k == 0 {
        let num = LnBeta::new(shapes.posterior(0));
        let den = LnBeta::new(shapes.proposal(0));
        return Box::new(move |x| (num.at(x) - den.at(x)).exp());
    }
    let (a0, b0) = shapes.proposal(k);
    let m = a0 / (a0 + b0);
    if model.observations[k - 1] == 1 {
        Box::new(move |x| x / m)
    } else {
        Box::new(move |x| (1.0 - x) / (1.0 - m))
    }
}

/// Posterior shapes for `k = 0..=t` and the instrumental shape.
struct Shapes {
    initial: (f64, f64),
    posterior: Vec<(f64, f64)>,
}

impl Shapes {
    fn new(model: &BetaBernoulliModel, t: usize) -> Result<Self> {
        if t > model.horizon() {
            return Err(SmcError::invalid(format!("t = {t} beyond horizon {}", model.horizon())));
        }
        let mut posterior = Vec::with_capacity(t + 1);
        let (mut a, mut b) = (model.alpha, model.beta);
        posterior.push((a, b));
        for y in &model.observations[..t] {
            if *y == 1 {
                a += 1.0;
            } else {
                b += 1.0;
            }
            posterior.push((a, b));
        }
        Ok(Shapes {
            initial: (model.alpha0, model.beta0),
            posterior,
        })
    }

    fn posterior(&self, k: usize) -> (f64, f64) {
        self.posterior[k]
    }

    fn proposal(&self, k: usize) -> (f64, f64) {
        if k == 0 {
            self.initial
        } else {
            self.posterior[k - 1]
        }
    }
}

struct Setup<'a> {
    model: &'a BetaBernoulliModel,
    phi: &'a (dyn Fn(f64) -> f64 + Sync),
    t: usize,
    shapes: Shapes,
    at: f64,
    bt: f64,
    pi_t: LnBeta,
    mean: f64,
}

impl<'a> Setup<'a> {
    fn new(model: &'a BetaBernoulliModel, phi: &'a (dyn Fn(f64) -> f64 + Sync), t: usize) -> Result<Self> {
        model.validate()?;
        let shapes = Shapes::new(model, t)?;
        let (at, bt) = shapes.posterior(t);
        let pi_t = LnBeta::new((at, bt));
        let pts = kernel_points(at, bt, &[]);
        let q = integrate(|x| pi_t.at(x).exp() * phi(x), &pts, QUAD_REL_TOL * 1e-2, 1e-300)?;
        Ok(Setup {
            model,
            phi,
            t,
            shapes,
            at,
            bt,
            pi_t,
            mean: q.value,
        })
    }

    fn phi_bar(&self, x: f64) -> f64 {
        (self.phi)(x) - self.mean
    }

    fn ln_pi_t(&self, x: f64) -> f64 {
        self.pi_t.at(x)
    }

    /// `int pi_t^2 phi_bar^2 / q` for a Beta density `q = Beta(a, b)`.
    fn ratio_moment(&self, a: f64, b: f64) -> Result<f64> {
        let (ea, eb) = (2.0 * self.at - a, 2.0 * self.bt - b);
        let pts = kernel_points(ea.max(0.5), eb.max(0.5), &[]);
        let q = LnBeta::new((a, b));
        let f = |x: f64| {
            let pb = self.phi_bar(x);
            (2.0 * self.ln_pi_t(x) - q.at(x)).exp() * pb * pb
        };
        Ok(integrate(f, &pts, QUAD_REL_TOL, 1e-300)?.value)
    }

    fn sis(&self) -> Result<f64> {
        self.ratio_moment(self.model.alpha0, self.model.beta0)
    }

    /// `R_k((pi_t / pi_k) phi_bar)` under `pi~_k`.
    fn residual_term(&self, k: usize) -> Result<f64> {
        let (qa, qb) = self.shapes.proposal(k);
        let (ka, kb) = self.shapes.posterior(k);
        let cross = integer_crossings(self.model, &self.shapes, k)?;
        let v = weight_fn(self.model, &self.shapes, k);
        let r = |x: f64| fractional_part(v(x));
        let (q, pk) = (LnBeta::new((qa, qb)), LnBeta::new((ka, kb)));
        let lq = |x: f64| q.at(x);
        let lratio = |x: f64| self.ln_pi_t(x) - pk.at(x);
        let p0 = kernel_points(qa, qb, &cross);
        let e_r = integrate(|x| lq(x).exp() * r(x), &p0, QUAD_REL_TOL, 1e-300)?.value;
        if e_r == 0.0 {
            return Ok(0.0);
        }
        let (ea, eb) = (qa + 2.0 * (self.at - ka), qb + 2.0 * (self.bt - kb));
        let p2 = kernel_points(ea.max(0.5), eb.max(0.5), &cross);
        let e_r2 = integrate(
            |x| {
                let pb = self.phi_bar(x);
                (lq(x) + 2.0 * lratio(x)).exp() * r(x) * pb * pb
            },
            &p2,
            QUAD_REL_TOL,
            1e-300,
        )?
        .value;
        let (ea, eb) = (qa + self.at - ka, qb + self.bt - kb);
        let p1 = kernel_points(ea.max(0.5), eb.max(0.5), &cross);
        // Cauchy-Schwarz scale for the signed integral
        let scale = (e_r * e_r2).sqrt();
        let e_r1 = integrate(
            |x| (lq(x) + lratio(x)).exp() * r(x) * self.phi_bar(x),
            &p1,
            QUAD_REL_TOL,
            QUAD_REL_TOL * 1e-2 * scale,
        )?
        .value;
        Ok(e_r2 - e_r1 * e_r1 / e_r)
    }
}

fn check_scalar(phi: &(dyn Fn(f64) -> f64 + Sync)) -> Result<()> {
    for x in [1e-9, 0.25, 0.5, 0.75, 1.0 - 1e-9] {
        if !phi(x).is_finite() {
            return Err(SmcError::UnboundedFunctional);
        }
    }
    Ok(())
}

/// Importance sampling variance `E_{pi~_0}[(pi_t / pi~_0)^2 phi_bar^2]`.
pub fn sis_variance_beta(model: &BetaBernoulliModel, phi: &(dyn Fn(f64) -> f64 + Sync), t: usize) -> Result<f64> {
    check_scalar(phi)?;
    Setup::new(model, phi, t)?.sis()
}

/// All three variances at step `t`.
pub fn fixed_param_variances(
    model: &BetaBernoulliModel,
    phi: &(dyn Fn(f64) -> f64 + Sync),
    t: usize,
) -> Result<FixedParamVariances> {
    check_scalar(phi)?;
    let s = Setup::new(model, phi, t)?;
    let sis = s.sis()?;
    let terms = crate::par::try_map_range(t, |k| -> Result<(f64, f64)> {
        let (a, b) = s.shapes.posterior(k);
        Ok((s.ratio_moment(a, b)?, s.residual_term(k)?))
    })?;
    let multinomial = sis + terms.iter().map(|x| x.0).collect::<crate::sum::NeumaierSum>().value();
    let residual = sis + terms.iter().map(|x| x.1).collect::<crate::sum::NeumaierSum>().value();
    debug_assert_eq!(s.t, t);
    Ok(FixedParamVariances {
        t,
        sis,
        multinomial,
        residual,
    })
}

/// `V_t(phi)` (multinomial), `V^r_t(phi)` (residual) or the importance
/// sampling variance (`None`).
pub fn sir_fixed_param_variance(
    model: &BetaBernoulliModel,
    phi: &(dyn Fn(f64) -> f64 + Sync),
    t: usize,
    scheme: SelectionScheme,
) -> Result<f64> {
    match scheme {
        SelectionScheme::None => sis_variance_beta(model, phi, t),
        SelectionScheme::Multinomial => Ok(fixed_param_variances(model, phi, t)?.multinomial),
        SelectionScheme::Residual => Ok(fixed_param_variances(model, phi, t)?.residual),
        SelectionScheme::Systematic => Err(SmcError::invalid(
            "no asymptotic variance is available for systematic selection",
        )),
    }
}
