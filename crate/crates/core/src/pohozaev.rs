//! Numerical evaluation of the local identities obtained by pairing the
//! system residual with dilation, translation, and scale-derivative fields:
//! solution certificates on exact pairs and algebra checks on synthetic
//! compactly supported fields.

use crate::bubble::{
    bubble_eval, bubble_gradient, bubble_laplacian, bubble_scale_derivative, dist2,
    riesz_convolution_bubble, Bubble, BubblePair,
};
use crate::multibubble::{CutoffSpec, PolygonConfig};
use crate::params::{gamma_fn, SystemParams};
use crate::quadrature::{radial_convolution, BubbleCloudSampler, CounterRng, MonteCarloSpec};
use crate::reduced::PotentialPair;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Integration region: the solid of revolution
/// D_rho = { x : |(|x'|, x'') - (r0, x0'')| <= rho }, with rho constrained to
/// the working window (2 delta, 5 delta).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PohozaevDomain {
    pub r0: f64,
    pub x0pp: Vec<f64>,
    pub rho: f64,
}

impl PohozaevDomain {
    pub fn new(r0: f64, x0pp: Vec<f64>, rho: f64, delta: f64) -> Result<Self> {
        if !(rho > 2.0 * delta && rho < 5.0 * delta) {
            return Err(Error::Domain(format!(
                "rho = {rho} must lie in (2 delta, 5 delta) = ({}, {})",
                2.0 * delta,
                5.0 * delta
            )));
        }
        if rho >= r0 {
            return Err(Error::Domain(format!(
                "rho = {rho} must stay below the ring radius r0 = {r0}"
            )));
        }
        Ok(Self { r0, x0pp, rho })
    }

    /// Default window midpoint rho = 3.5 delta.
    pub fn default_for(cutoff: &CutoffSpec) -> Result<Self> {
        Self::new(cutoff.r0, cutoff.x0pp.clone(), 3.5 * cutoff.delta, cutoff.delta)
    }

    fn dim(&self) -> usize {
        self.x0pp.len() + 2
    }

    /// Exact volume: 2 pi r0 Vol(B_rho^(N-1)); the linear term in r
    /// integrates to zero over the centred ball.
    pub fn volume(&self) -> f64 {
        let d = self.dim() as f64 - 1.0;
        let ball =
            PI.powf(d / 2.0) / gamma_fn(d / 2.0 + 1.0).expect("positive dim") * self.rho.powf(d);
        2.0 * PI * self.r0 * ball
    }

    /// Membership in the (r, x'') distance sense.
    pub fn contains(&self, x: &[f64]) -> bool {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let mut d2 = (r - self.r0) * (r - self.r0);
        for (xi, ci) in x[2..].iter().zip(&self.x0pp) {
            d2 += (xi - ci) * (xi - ci);
        }
        d2.sqrt() <= self.rho
    }

    /// Uniform sample (w.r.t. Lebesgue measure of R^N) by rejection in the
    /// revolved coordinates.
    fn sample(&self, rng: &mut CounterRng, out: &mut Vec<f64>) {
        let d = self.dim() - 1;
        let mut dir = Vec::new();
        loop {
            rng.unit_direction(d, &mut dir);
            let t = self.rho * rng.next_f64().powf(1.0 / d as f64);
            let r = self.r0 + t * dir[0];
            if r <= 0.0 {
                continue;
            }
            if rng.next_f64() * (self.r0 + self.rho) > r {
                continue;
            }
            let theta = 2.0 * PI * rng.next_f64();
            out.clear();
            out.push(r * theta.cos());
            out.push(r * theta.sin());
            for (k, c) in self.x0pp.iter().enumerate() {
                out.push(c + t * dir[k + 1]);
            }
            return;
        }
    }
}

/// Monte Carlo value with standard error and the sample count used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Potentials seen by the residual: flat (exactly 1) or the quadratic pair.
#[derive(Clone, Copy)]
pub enum Potentials<'a> {
    Flat,
    Pair(&'a PotentialPair),
}

impl Potentials<'_> {
    fn k(&self, which: usize, x: &[f64]) -> f64 {
        match self {
            Potentials::Flat => 1.0,
            Potentials::Pair(p) => {
                if which == 1 {
                    p.k1_at(x)
                } else {
                    p.k2_at(x)
                }
            }
        }
    }

    fn is_flat(&self) -> bool {
        matches!(self, Potentials::Flat)
    }
}

/// System residual component at x for the exact pair under the given
/// potentials: res = -Delta own - K(x) [conv_1 + conv((K-1) V^(2*))] V^(2*-1),
/// where conv_1 is the flat closed form and the deviation convolution is
/// folded in as an importance sample at y (unbiased in expectation).
fn residual_component(
    own: &Bubble,
    other: &Bubble,
    which: usize,
    k: &Potentials<'_>,
    x: &[f64],
    y: &[f64],
    qy: f64,
) -> f64 {
    let params = own.params;
    let p = params.two_star_alpha;
    let mu = params.system_kernel();
    let k_at = k.k(which, x);
    let conv1 = riesz_convolution_bubble(mu, other, x).unwrap_or(0.0);
    let v_val = bubble_eval(other, x);
    let mut res = bubble_laplacian(own, x) - k_at * conv1 * v_val.powf(p - 1.0);
    if !k.is_flat() && qy > 0.0 {
        let d2 = dist2(x, y);
        if d2 > 1e-20 {
            let dev = k_at * (k.k(which, y) - 1.0) * bubble_eval(other, y).powf(p)
                * d2.powf(-mu.mu / 2.0)
                / qy;
            res -= dev * v_val.powf(p - 1.0);
        }
    }
    res
}

enum Pairing {
    /// <x, grad .>
    Dilation,
    /// d/dx_i, 0-based coordinate index
    Translation(usize),
}

fn residual_pairing(
    pair: &BubblePair,
    k: Potentials<'_>,
    dom: &PohozaevDomain,
    pairing: Pairing,
    mc: &MonteCarloSpec,
) -> Result<ResidualEstimate> {
    let vol = dom.volume();
    let sampler = BubbleCloudSampler::new(vec![pair.u.center.clone()], pair.u.scale, 2.0)?;
    let reflect_index = match pairing {
        Pairing::Translation(i) => Some(i),
        Pairing::Dilation => None,
    };

    let term = |x: &[f64], y: &[f64], qy: f64| -> f64 {
        let pairing_field = |other: &Bubble| -> f64 {
            let g = bubble_gradient(other, x);
            match pairing {
                Pairing::Dilation => x.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>(),
                Pairing::Translation(i) => g[i],
            }
        };
        residual_component(&pair.u, &pair.v, 1, &k, x, y, qy) * pairing_field(&pair.v)
            + residual_component(&pair.v, &pair.u, 2, &k, x, y, qy) * pairing_field(&pair.u)
    };

    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..mc.sample_count {
        let mut rng = CounterRng::for_sample(mc.seed, i as u64);
        dom.sample(&mut rng, &mut x);
        let qy = if k.is_flat() {
            0.0
        } else {
            sampler.sample(&mut rng, &mut y);
            sampler.pdf(&y)
        };
        let ypt: &[f64] = if k.is_flat() { &x } else { &y };
        let mut v = term(&x, ypt, qy);
        if let Some(i) = reflect_index {
            // antithetic reflection across the x_i symmetry hyperplane
            let c = dom.x0pp[i - 2];
            let mut xm = x.clone();
            xm[i] = 2.0 * c - xm[i];
            let ym: Vec<f64> = if k.is_flat() {
                xm.clone()
            } else {
                let mut ym = ypt.to_vec();
                ym[i] = 2.0 * c - ym[i];
                ym
            };
            v = 0.5 * (v + term(&xm, &ym, qy));
        }
        sum += v;
        sum2 += v * v;
    }
    let m = mc.sample_count as f64;
    let mean = sum / m;
    let var = ((sum2 - sum * sum / m) / (m - 1.0)).max(0.0);
    Ok(ResidualEstimate {
        value: vol * mean,
        std_error: vol * (var / m).sqrt(),
        samples: mc.sample_count,
    })
}

/// Local identity paired with the dilation fields <x, grad v>, <x, grad u>
/// over D_rho. Vanishes on exact solution pairs with flat potentials.
pub fn pohozaev_dilation_residual(
    pair: &BubblePair,
    k: Potentials<'_>,
    dom: &PohozaevDomain,
    mc: &MonteCarloSpec,
) -> Result<ResidualEstimate> {
    residual_pairing(pair, k, dom, Pairing::Dilation, mc)
}

/// Local identity paired with the translation fields d v/d x_i, d u/d x_i,
/// i in 3..=N, over D_rho. Antithetic reflection across the symmetry
/// hyperplane cancels the estimator exactly on symmetric configurations.
pub fn pohozaev_translation_residual(
    pair: &BubblePair,
    k: Potentials<'_>,
    dom: &PohozaevDomain,
    i: usize,
    mc: &MonteCarloSpec,
) -> Result<ResidualEstimate> {
    let n = pair.u.params.n as usize;
    if !(3..=n).contains(&i) {
        return Err(Error::Domain(format!(
            "translation pairing needs a coordinate in 3..=N, got {i}"
        )));
    }
    residual_pairing(pair, k, dom, Pairing::Translation(i - 1), mc)
}

/// Scale pairing: the residual of the exact pair paired with the scale
/// derivative of the cutoffed ansatz. The pairing field is supported in the
/// cutoff, so the full-space integral reduces to the revolved 2 delta ball.
pub fn pohozaev_scaling_residual(
    pair: &BubblePair,
    cfg: &PolygonConfig,
    cutoff: &CutoffSpec,
    k: Potentials<'_>,
    mc: &MonteCarloSpec,
) -> Result<ResidualEstimate> {
    let dom = PohozaevDomain {
        r0: cutoff.r0,
        x0pp: cutoff.x0pp.clone(),
        rho: 2.0 * cutoff.delta * 1.0001,
    };
    let vol = dom.volume();
    let sampler = BubbleCloudSampler::new(vec![pair.u.center.clone()], pair.u.scale, 2.0)?;
    let bubbles = cfg.bubbles();

    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..mc.sample_count {
        let mut rng = CounterRng::for_sample(mc.seed, i as u64);
        dom.sample(&mut rng, &mut x);
        let qy = if k.is_flat() {
            0.0
        } else {
            sampler.sample(&mut rng, &mut y);
            sampler.pdf(&y)
        };
        let ypt: &[f64] = if k.is_flat() { &x } else { &y };
        let pair_deriv: f64 = cutoff.eval(&x)
            * bubbles.iter().map(|b| bubble_scale_derivative(b, &x)).sum::<f64>();
        let v = (residual_component(&pair.u, &pair.v, 1, &k, &x, ypt, qy)
            + residual_component(&pair.v, &pair.u, 2, &k, &x, ypt, qy))
            * pair_deriv;
        sum += v;
        sum2 += v * v;
    }
    let m = mc.sample_count as f64;
    let mean = sum / m;
    let var = ((sum2 - sum * sum / m) / (m - 1.0)).max(0.0);
    Ok(ResidualEstimate {
        value: vol * mean,
        std_error: vol * (var / m).sqrt(),
        samples: mc.sample_count,
    })
}

/// A smooth compactly supported radial bump A exp(1 - 1/(1 - t^2)),
/// t = |x - c| / R, with analytic gradient and Laplacian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialBump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
}

impl RadialBump {
    fn profile(&self, t: f64) -> f64 {
        if t >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - 1.0 / (1.0 - t * t)).exp()
        }
    }

    fn profile_d1(&self, t: f64) -> f64 {
        if t >= 1.0 {
            0.0
        } else {
            let om = 1.0 - t * t;
            self.profile(t) * (-2.0 * t / (om * om))
        }
    }

    fn profile_d2(&self, t: f64) -> f64 {
        if t >= 1.0 {
            0.0
        } else {
            let om = 1.0 - t * t;
            self.profile(t)
                * (4.0 * t * t / om.powi(4) - 2.0 / (om * om) - 8.0 * t * t / om.powi(3))
        }
    }

    pub fn value_radial(&self, rho: f64) -> f64 {
        self.profile(rho / self.radius)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_radial(dist2(x, &self.center).sqrt())
    }

    /// Radial derivative d u / d rho.
    pub fn deriv_radial(&self, rho: f64) -> f64 {
        self.profile_d1(rho / self.radius) / self.radius
    }

    /// Laplacian at radius rho in dimension n.
    pub fn laplacian_radial(&self, rho: f64, n: u32) -> f64 {
        let r2 = self.radius * self.radius;
        let t = rho / self.radius;
        if rho == 0.0 {
            return n as f64 * self.profile_d2(0.0) / r2;
        }
        self.profile_d2(t) / r2 + (n as f64 - 1.0) * self.profile_d1(t) / (self.radius * rho)
    }
}

/// Two independent evaluations of the rearranged local identity for a
/// synthetic radial pair u = v supported away from the boundary, with flat
/// potentials (the potential-gradient block drops): lhs pairs the residual
/// with <x, grad u> directly; rhs assembles the integrated-by-parts form
/// -(N-2) Int |grad u|^2 + (2N/2*) Int u^(2*) W + (2/2*) Int u^(2*) W' rho,
/// W the kernel convolution of u^(2*). Both reduce to 1-D quadratures.
pub fn identity_check_d12(bump: &RadialBump, params: &SystemParams, tol: f64) -> Result<(f64, f64)> {
    let n = params.n;
    let nf = params.nf();
    let p = params.two_star_alpha;
    let mu = params.system_kernel();
    let area = crate::params::sphere_surface_area(n)?;
    let rad = bump.radius;
    if bump.amplitude == 0.0 {
        return Ok((0.0, 0.0));
    }

    let b = bump.clone();
    let upow = move |s: f64| b.value_radial(s).powf(p);
    // the convolution profile is smooth; precompute once on a dense grid and
    // interpolate cubically inside the quadrature loops
    let grid_max = 1.5 * rad;
    let grid_n = 320usize;
    let mut ys = Vec::with_capacity(grid_n + 1);
    for i in 0..=grid_n {
        let rho = grid_max * i as f64 / grid_n as f64;
        ys.push(radial_convolution(mu, &upow, rho, n, tol)?);
    }
    let conv = move |rho: f64| -> f64 {
        let t = (rho / grid_max * grid_n as f64).clamp(0.0, grid_n as f64);
        let i = (t.floor() as usize).clamp(1, grid_n - 2);
        let s = t - i as f64;
        // 4-point Lagrange on the uniform grid
        let (y0, y1, y2, y3) = (ys[i - 1], ys[i], ys[i + 1], ys[i + 2]);
        let a0 = -s * (s - 1.0) * (s - 2.0) / 6.0;
        let a1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0;
        let a2 = -(s + 1.0) * s * (s - 2.0) / 2.0;
        let a3 = (s + 1.0) * s * (s - 1.0) / 6.0;
        a0 * y0 + a1 * y1 + a2 * y2 + a3 * y3
    };

    // lhs = 2 |S| Int [(-lap u)(rho) - W(rho) u^(2*-1)] u'(rho) rho^N drho
    let mut lhs_integrand = |rho: f64| -> f64 {
        let neg_lap = -bump.laplacian_radial(rho, n);
        let u = bump.value_radial(rho);
        (neg_lap - conv(rho) * u.powf(p - 1.0)) * bump.deriv_radial(rho) * rho.powf(nf)
    };
    let lhs = 2.0 * area
        * crate::quadrature::integrate_adaptive(&mut lhs_integrand, 0.0, rad, tol, 1 << 16)?;

    let mut grad_integrand =
        |rho: f64| -> f64 { bump.deriv_radial(rho).powi(2) * rho.powf(nf - 1.0) };
    let grad_term = area
        * crate::quadrature::integrate_adaptive(&mut grad_integrand, 0.0, rad, tol, 1 << 16)?;
    let mut conv_integrand =
        |rho: f64| -> f64 { bump.value_radial(rho).powf(p) * conv(rho) * rho.powf(nf - 1.0) };
    let conv_term = area
        * crate::quadrature::integrate_adaptive(&mut conv_integrand, 0.0, rad, tol, 1 << 16)?;
    let h = 1e-4 * rad;
    let mut wprime_integrand = |rho: f64| -> f64 {
        let lo = (rho - h).max(0.0);
        let wp = (conv(rho + h) - conv(lo)) / (rho + h - lo);
        bump.value_radial(rho).powf(p) * wp * rho.powf(nf)
    };
    let wprime_term = area
        * crate::quadrature::integrate_adaptive(&mut wprime_integrand, 0.0, rad, tol, 1 << 16)?;
    let rhs = -(nf - 2.0) * grad_term + (2.0 * nf / p) * conv_term + (2.0 / p) * wprime_term;

    Ok((lhs, rhs))
}
