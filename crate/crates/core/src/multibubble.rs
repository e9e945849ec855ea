//! The m-bubble polygonal ansatz: ring centers, the smooth cutoff and its
//! derivatives, ansatz fields and their parameter-derivative basis, the
//! weighted sup norms, and numeric probes for the interaction estimates and
//! the ansatz residual.

use crate::bubble::{
    bubble_eval, bubble_gradient, bubble_scale_derivative, dist2, riesz_convolution_bubble, Bubble,
};
use crate::params::SystemParams;
use crate::quadrature::{
    monte_carlo_integral, radial_convolution, CounterRng, Domain, MonteCarloSpec,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Polygonal configuration: m bubbles on the ring of radius r_bar in the
/// x'-plane at offset x_bar_pp, all at scale lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonConfig {
    pub m: u32,
    pub r_bar: f64,
    pub x_bar_pp: Vec<f64>,
    pub lambda: f64,
    pub params: SystemParams,
}

impl PolygonConfig {
    pub fn new(m: u32, r_bar: f64, x_bar_pp: Vec<f64>, lambda: f64, params: SystemParams) -> Result<Self> {
        if m < 1 {
            return Err(Error::Domain("need at least one bubble".into()));
        }
        if !(r_bar > 0.0) || !(lambda > 0.0) {
            return Err(Error::Domain(format!("r_bar and lambda must be positive, got {r_bar}, {lambda}")));
        }
        if x_bar_pp.len() != params.n as usize - 2 {
            return Err(Error::Domain(format!(
                "offset must live in R^(N-2) = R^{}, got dimension {}",
                params.n - 2,
                x_bar_pp.len()
            )));
        }
        Ok(Self { m, r_bar, x_bar_pp, lambda, params })
    }

    /// The scale window [L0 m^((N-2)/(N-4)), L1 m^((N-2)/(N-4))].
    pub fn scale_window(&self, l0: f64, l1: f64) -> (f64, f64) {
        let e = (self.params.nf() - 2.0) / (self.params.nf() - 4.0);
        let base = (self.m as f64).powf(e);
        (l0 * base, l1 * base)
    }

    pub fn in_scale_window(&self, l0: f64, l1: f64) -> bool {
        let (lo, hi) = self.scale_window(l0, l1);
        (lo..=hi).contains(&self.lambda)
    }

    pub fn bubbles(&self) -> Vec<Bubble> {
        polygon_centers(self)
            .into_iter()
            .map(|z| Bubble { center: z, scale: self.lambda, params: self.params })
            .collect()
    }
}

/// Ring centers z_j = (r_bar cos(2(j-1)pi/m), r_bar sin(2(j-1)pi/m), x_bar_pp).
pub fn polygon_centers(cfg: &PolygonConfig) -> Vec<Vec<f64>> {
    (0..cfg.m)
        .map(|j| {
            let th = 2.0 * j as f64 * PI / cfg.m as f64;
            let mut z = Vec::with_capacity(cfg.params.n as usize);
            z.push(cfg.r_bar * th.cos());
            z.push(cfg.r_bar * th.sin());
            z.extend_from_slice(&cfg.x_bar_pp);
            z
        })
        .collect()
}

/// Sum over the ring of inverse chord powers:
/// sum_{j=2}^m (2 r_bar sin((j-1) pi / m))^(-p). Empty for m < 2.
pub fn interaction_sum(cfg: &PolygonConfig, p: f64) -> f64 {
    (1..cfg.m)
        .map(|j| {
            let chord = 2.0 * cfg.r_bar * (j as f64 * PI / cfg.m as f64).sin();
            chord.powf(-p)
        })
        .sum()
}

/// Smooth cutoff centred at (r0, x0'') in the (|x'|, x'') half-space:
/// 1 inside distance delta, 0 outside 2 delta, with the ramp
/// exp(1 - 1/(1 - s^2)), s = (d - delta)/delta, in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub r0: f64,
    pub x0pp: Vec<f64>,
    pub delta: f64,
}

impl CutoffSpec {
    pub fn new(r0: f64, x0pp: Vec<f64>, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Domain(format!("cutoff width must be positive, got {delta}")));
        }
        if !(r0 > 0.0) {
            return Err(Error::Domain(format!("cutoff ring radius must be positive, got {r0}")));
        }
        Ok(Self { r0, x0pp, delta })
    }

    /// Distance in the (r, x'') half-space from the cutoff centre.
    pub fn dist(&self, x: &[f64]) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let mut d2 = (r - self.r0) * (r - self.r0);
        for (xi, ci) in x[2..].iter().zip(&self.x0pp) {
            d2 += (xi - ci) * (xi - ci);
        }
        d2.sqrt()
    }

    fn ramp(&self, s: f64) -> f64 {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.dist(x);
        if d <= self.delta {
            1.0
        } else if d >= 2.0 * self.delta {
            0.0
        } else {
            self.ramp((d - self.delta) / self.delta)
        }
    }

    /// d xi / d d and d^2 xi / d d^2 along the profile.
    fn profile_derivatives(&self, d: f64) -> (f64, f64) {
        if d <= self.delta || d >= 2.0 * self.delta {
            return (0.0, 0.0);
        }
        let s = (d - self.delta) / self.delta;
        let xi = self.ramp(s);
        let om = 1.0 - s * s;
        let dxi_ds = xi * (-2.0 * s / (om * om));
        let d2xi_ds2 = xi * (4.0 * s * s / om.powi(4) - 2.0 / (om * om) - 8.0 * s * s / om.powi(3));
        (dxi_ds / self.delta, d2xi_ds2 / (self.delta * self.delta))
    }

    /// Gradient of the cutoff in R^N.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let d = self.dist(x);
        let (xi_p, _) = self.profile_derivatives(d);
        let mut g = vec![0.0; n];
        if xi_p == 0.0 || d == 0.0 {
            return g;
        }
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if r > 0.0 {
            let fac = (r - self.r0) / (d * r);
            g[0] = xi_p * fac * x[0];
            g[1] = xi_p * fac * x[1];
        }
        for k in 2..n {
            g[k] = xi_p * (x[k] - self.x0pp[k - 2]) / d;
        }
        g
    }

    /// Laplacian of the cutoff in R^N:
    /// xi''(d) + xi'(d) [ (N-2)/d + (r - r0)/(r d) ].
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let d = self.dist(x);
        let (xi_p, xi_pp) = self.profile_derivatives(d);
        if xi_p == 0.0 && xi_pp == 0.0 {
            return 0.0;
        }
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        xi_pp + xi_p * ((n - 2.0) / d + (r - self.r0) / (r * d))
    }
}

/// Which ansatz field to evaluate: the cutoffed sums Z, Y or the raw sums
/// Z*, Y*. The synchronized solution makes Y identical to Z; both tags are
/// kept for the two system components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnsatzField {
    Z,
    Y,
    ZStar,
    YStar,
}

/// Evaluate an ansatz field at x.
pub fn ansatz_eval(cfg: &PolygonConfig, cutoff: &CutoffSpec, which: AnsatzField, x: &[f64]) -> f64 {
    let raw: f64 = cfg.bubbles().iter().map(|b| bubble_eval(b, x)).sum();
    match which {
        AnsatzField::Z | AnsatzField::Y => cutoff.eval(x) * raw,
        AnsatzField::ZStar | AnsatzField::YStar => raw,
    }
}

/// Gradient of the raw sum Z*.
pub fn ansatz_star_gradient(cfg: &PolygonConfig, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for b in cfg.bubbles() {
        for (gi, bi) in g.iter_mut().zip(bubble_gradient(&b, x)) {
            *gi += bi;
        }
    }
    g
}

/// Parameter derivative of the cutoffed bubble j: l = 1 is d/d lambda,
/// l = 2 is d/d r_bar, l = 3..=N is d/d x_bar''_l. The cutoff is anchored
/// at the critical point and does not move with the parameters.
pub fn derivative_basis_eval(
    cfg: &PolygonConfig,
    cutoff: &CutoffSpec,
    j: u32,
    l: u32,
    x: &[f64],
) -> Result<f64> {
    if j < 1 || j > cfg.m {
        return Err(Error::Domain(format!("bubble index must lie in 1..={}, got {j}", cfg.m)));
    }
    if l < 1 || l > cfg.params.n {
        return Err(Error::Domain(format!("parameter index must lie in 1..={}, got {l}", cfg.params.n)));
    }
    let b = &cfg.bubbles()[(j - 1) as usize];
    let xi = cutoff.eval(x);
    if xi == 0.0 {
        return Ok(0.0);
    }
    let th = 2.0 * (j - 1) as f64 * PI / cfg.m as f64;
    let val = match l {
        1 => bubble_scale_derivative(b, x),
        2 => {
            let g = bubble_gradient(b, x);
            -(g[0] * th.cos() + g[1] * th.sin())
        }
        k => -bubble_gradient(b, x)[(k - 1) as usize],
    };
    Ok(xi * val)
}

/// Which weighted norm to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    Star,
    StarStar,
}

/// Weighted sup-norm specification: the exponent shift tau = 1 + eta_bar and
/// the evaluation points over which the sup is taken (a lower bound on the
/// true sup).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNormSpec {
    pub tau: f64,
    pub sample_set: Vec<Vec<f64>>,
}

impl WeightedNormSpec {
    /// Structured sample set: bubble peaks, midpoints between adjacent
    /// peaks, the cutoff band, and seeded random fill.
    pub fn standard(cfg: &PolygonConfig, cutoff: &CutoffSpec, fill: usize, seed: u64) -> Self {
        let mut pts = polygon_centers(cfg);
        let centers = polygon_centers(cfg);
        for j in 0..centers.len() {
            let k = (j + 1) % centers.len();
            if k != j {
                pts.push(
                    centers[j].iter().zip(&centers[k]).map(|(a, b)| 0.5 * (a + b)).collect(),
                );
            }
        }
        // cutoff band: radial and offset excursions at distance 1.5 delta
        let lift = |r: f64, xpp: &[f64]| {
            let mut v = vec![r, 0.0];
            v.extend_from_slice(xpp);
            v
        };
        pts.push(lift(cutoff.r0 + 1.5 * cutoff.delta, &cutoff.x0pp));
        if cutoff.r0 - 1.5 * cutoff.delta > 0.0 {
            pts.push(lift(cutoff.r0 - 1.5 * cutoff.delta, &cutoff.x0pp));
        }
        for k in 0..cutoff.x0pp.len() {
            let mut xpp = cutoff.x0pp.clone();
            xpp[k] += 1.5 * cutoff.delta;
            pts.push(lift(cutoff.r0, &xpp));
        }
        // random fill inside the configuration ball
        let radius = cfg.r_bar + 2.0 * cutoff.delta;
        let n = cfg.params.n as usize;
        for i in 0..fill {
            let mut rng = CounterRng::for_sample(seed, i as u64);
            let mut dir = Vec::new();
            rng.unit_direction(n, &mut dir);
            let rr = radius * rng.next_f64().powf(1.0 / n as f64);
            let mut p = vec![0.0; n];
            p[..2].copy_from_slice(&[rr * dir[0], rr * dir[1]]);
            for k in 2..n {
                p[k] = cfg.x_bar_pp[k - 2] + rr * dir[k];
            }
            pts.push(p);
        }
        Self { tau: 1.05, sample_set: pts }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

/// Weighted sup-norm of a field over the sample set:
/// star uses lambda^(-(N-2)/2) |u| / sum_j (1 + lambda |x - z_j|)^(-((N-2)/2 + tau)),
/// starstar the (N+2)/2 analog.
pub fn weighted_norm(
    kind: NormKind,
    field: &dyn Fn(&[f64]) -> f64,
    cfg: &PolygonConfig,
    spec: &WeightedNormSpec,
) -> Result<f64> {
    if spec.sample_set.is_empty() {
        return Err(Error::Domain("empty sample set".into()));
    }
    let half = match kind {
        NormKind::Star => (cfg.params.nf() - 2.0) / 2.0,
        NormKind::StarStar => (cfg.params.nf() + 2.0) / 2.0,
    };
    let centers = polygon_centers(cfg);
    let mut best: f64 = 0.0;
    for x in &spec.sample_set {
        best = best.max(weighted_ratio(field(x), x, &centers, cfg.lambda, half, spec.tau));
    }
    Ok(best)
}

fn weighted_ratio(value: f64, x: &[f64], centers: &[Vec<f64>], lambda: f64, half: f64, tau: f64) -> f64 {
    let weight: f64 = centers
        .iter()
        .map(|z| (1.0 + lambda * dist2(x, z).sqrt()).powf(-(half + tau)))
        .sum();
    lambda.powf(-half) * value.abs() / weight
}

/// Pointwise report of the ansatz residual probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmPointReport {
    pub x: Vec<f64>,
    pub l_m1: f64,
    pub l_m2: f64,
    pub conv_std_error: f64,
    pub weighted_ratio_1: f64,
    pub weighted_ratio_2: f64,
}

/// Result of the ansatz residual probe: a weighted-norm estimate of the
/// residual pair over the sample set, with Monte Carlo errors per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmProbeReport {
    pub norm_estimate: f64,
    pub per_point: Vec<LmPointReport>,
}

/// Ansatz residual at the sample points:
/// l_1 = K1 (|.|^(-(N-alpha)) * K1 |Y|^(2*)) Y^(2*-1)
///       - xi sum_j (|.|^(-(N-alpha)) * V_j^(2*)) V_j^(2*-1)
///       + Z* Delta xi + 2 grad xi . grad Z*,
/// l_2 symmetric. Per-bubble convolutions are closed form; the cross-term
/// correction of the convolution is seeded Monte Carlo.
#[allow(clippy::too_many_arguments)]
pub fn residual_lm_probe(
    cfg: &PolygonConfig,
    cutoff: &CutoffSpec,
    k1: &dyn Fn(&[f64]) -> f64,
    k2: &dyn Fn(&[f64]) -> f64,
    norm_spec: &WeightedNormSpec,
    mc: &MonteCarloSpec,
) -> Result<LmProbeReport> {
    let params = cfg.params;
    let nf = params.nf();
    let p = params.two_star_alpha;
    let mu = params.system_kernel();
    let bubbles = cfg.bubbles();
    let centers = polygon_centers(cfg);

    // Monte Carlo domain: ball covering the cutoff support and the ring
    let mut c0 = vec![0.0; params.n as usize];
    c0[2..].copy_from_slice(&cfg.x_bar_pp);
    let radius = cfg.r_bar.max(cutoff.r0) + 6.0 * cutoff.delta;
    let domain = Domain::Ball { center: c0, radius };

    let sum_bubbles = |x: &[f64]| -> f64 { bubbles.iter().map(|b| bubble_eval(b, x)).sum() };
    let sum_pow = |x: &[f64]| -> f64 { bubbles.iter().map(|b| bubble_eval(b, x).powf(p)).sum() };

    let mut per_point = Vec::with_capacity(norm_spec.sample_set.len());
    let mut norm1: f64 = 0.0;
    let mut norm2: f64 = 0.0;
    for x in &norm_spec.sample_set {
        let xi = cutoff.eval(x);
        let y_val = xi * sum_bubbles(x);
        // closed-form per-bubble convolutions
        let closed: f64 = bubbles
            .iter()
            .map(|b| riesz_convolution_bubble(mu, b, x).unwrap_or(0.0))
            .sum();
        // correction: integral of (K1 |Y|^(2*) - sum_j V_j^(2*)) against the kernel
        let xv = x.clone();
        let g = |y: &[f64]| -> f64 {
            let d = dist2(y, &xv);
            if d < 1e-12 {
                return 0.0;
            }
            let xi_y = cutoff.eval(y);
            let y_y = xi_y * sum_bubbles(y);
            (k1(y) * y_y.powf(p) - sum_pow(y)) * d.powf(-(nf - params.alpha) / 2.0)
        };
        let (corr, corr_se) = monte_carlo_integral(&g, &domain, mc)?;
        let w1 = closed + corr;

        let commutator = {
            let zstar = sum_bubbles(x);
            let grad_xi = cutoff.gradient(x);
            let grad_zstar = ansatz_star_gradient(cfg, x);
            zstar * cutoff.laplacian(x)
                + 2.0 * grad_xi.iter().zip(&grad_zstar).map(|(a, b)| a * b).sum::<f64>()
        };

        let per_bubble_part: f64 = bubbles
            .iter()
            .map(|b| {
                riesz_convolution_bubble(mu, b, x).unwrap_or(0.0) * bubble_eval(b, x).powf(p - 1.0)
            })
            .sum();

        let l_m1 = k1(x) * w1 * y_val.powf(p - 1.0) - xi * per_bubble_part + commutator;
        // second component: same structure with K2
        let g2 = |y: &[f64]| -> f64 {
            let d = dist2(y, &xv);
            if d < 1e-12 {
                return 0.0;
            }
            let xi_y = cutoff.eval(y);
            let y_y = xi_y * sum_bubbles(y);
            (k2(y) * y_y.powf(p) - sum_pow(y)) * d.powf(-(nf - params.alpha) / 2.0)
        };
        let (corr2, corr2_se) = monte_carlo_integral(&g2, &domain, mc)?;
        let w2 = closed + corr2;
        let l_m2 = k2(x) * w2 * y_val.powf(p - 1.0) - xi * per_bubble_part + commutator;

        let half = (nf + 2.0) / 2.0;
        let r1 = weighted_ratio(l_m1, x, &centers, cfg.lambda, half, norm_spec.tau);
        let r2 = weighted_ratio(l_m2, x, &centers, cfg.lambda, half, norm_spec.tau);
        norm1 = norm1.max(r1);
        norm2 = norm2.max(r2);
        per_point.push(LmPointReport {
            x: x.clone(),
            l_m1,
            l_m2,
            conv_std_error: corr_se.max(corr2_se),
            weighted_ratio_1: r1,
            weighted_ratio_2: r2,
        });
    }
    Ok(LmProbeReport { norm_estimate: norm1 + norm2, per_point })
}

/// Which interaction estimate to probe empirically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EstimateProbe {
    /// Product of two off-centre decay factors against the separated bound:
    /// exponents alpha, beta >= 1, split 0 < delta <= min(alpha, beta),
    /// centres at the given separation.
    PairProduct { alpha: f64, beta: f64, delta: f64, separation: f64 },
    /// Green-kernel convolution of (1+|y|)^(-(2+delta)) against the
    /// (1+|x|)^(-delta) envelope, 0 < delta < N-2.
    GreenDecay { delta: f64 },
    /// Riesz convolution of a scaled bubble-like tail: the decay exponent of
    /// |x|^(-mu) * lambda^(N-mu/2) (1+lambda|x-z|)^(-(N-mu+eta)) is
    /// min(mu, eta).
    KernelDecay { mu: f64, eta: f64, lambda: f64 },
}

/// Outcome of an estimate probe: the empirical sup of LHS/RHS with the
/// unknown constant stripped, the samples behind it, and a fitted decay
/// exponent where the estimate predicts one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub max_ratio: f64,
    pub fitted_exponent: Option<f64>,
    pub samples: Vec<[f64; 2]>,
}

/// Run an interaction-estimate probe with `sample_count` points (or grid
/// nodes) and the given seed.
pub fn estimate_probe(
    which: EstimateProbe,
    n: u32,
    sample_count: usize,
    seed: u64,
) -> Result<ProbeReport> {
    match which {
        EstimateProbe::PairProduct { alpha, beta, delta, separation } => {
            if alpha < 1.0 || beta < 1.0 {
                return Err(Error::Domain("pair-product exponents must be >= 1".into()));
            }
            if !(delta > 0.0 && delta <= alpha.min(beta)) {
                return Err(Error::Domain(format!(
                    "split exponent must satisfy 0 < delta <= min(alpha, beta), got {delta}"
                )));
            }
            let dim = n as usize;
            let mut zj = vec![0.0; dim];
            let mut zk = vec![0.0; dim];
            zj[0] = -separation / 2.0;
            zk[0] = separation / 2.0;
            let ratio_at = |x: &[f64]| -> (f64, f64) {
                let dj = dist2(x, &zj).sqrt();
                let dk = dist2(x, &zk).sqrt();
                let lhs = (1.0 + dj).powf(-alpha) * (1.0 + dk).powf(-beta);
                let rhs = separation.powf(-delta)
                    * ((1.0 + dj).powf(-(alpha + beta - delta))
                        + (1.0 + dk).powf(-(alpha + beta - delta)));
                (dj.min(dk), lhs / rhs)
            };
            let mut max_ratio: f64 = 0.0;
            let mut samples = Vec::new();
            // axis scan pins down the extremal region; random fill covers the rest
            for i in 0..=(4 * 64) {
                let t = -2.0 + 5.0 * i as f64 / (4.0 * 64.0);
                let mut x = vec![0.0; dim];
                x[0] = zj[0] + t * separation;
                let (d, ratio) = ratio_at(&x);
                max_ratio = max_ratio.max(ratio);
                samples.push([d, ratio]);
            }
            for i in 0..sample_count {
                let mut rng = CounterRng::for_sample(seed, i as u64);
                let x: Vec<f64> =
                    (0..dim).map(|_| (rng.next_f64() - 0.5) * 6.0 * separation).collect();
                let (d, ratio) = ratio_at(&x);
                max_ratio = max_ratio.max(ratio);
                samples.push([d, ratio]);
            }
            Ok(ProbeReport { max_ratio, fitted_exponent: None, samples })
        }
        EstimateProbe::GreenDecay { delta } => {
            let nf = n as f64;
            if !(delta > 0.0 && delta < nf - 2.0) {
                return Err(Error::Domain(format!(
                    "green-decay split must satisfy 0 < delta < N-2, got {delta}"
                )));
            }
            let mu = crate::params::KernelExponent::new(n, nf - 2.0)?;
            let f = move |s: f64| (1.0 + s).powf(-(2.0 + delta));
            let mut max_ratio: f64 = 0.0;
            let mut samples = Vec::new();
            for i in 0..sample_count.max(2) {
                let r = 1e3f64.powf(i as f64 / (sample_count.max(2) - 1) as f64) - 1.0;
                let conv = radial_convolution(mu, &f, r, n, 1e-7)?;
                let ratio = conv * (1.0 + r).powf(delta);
                max_ratio = max_ratio.max(ratio);
                samples.push([r, ratio]);
            }
            Ok(ProbeReport { max_ratio, fitted_exponent: None, samples })
        }
        EstimateProbe::KernelDecay { mu, eta, lambda } => {
            if !(eta > 0.0) {
                return Err(Error::Domain(format!("decay shift must be positive, got {eta}")));
            }
            let nf = n as f64;
            let ke = crate::params::KernelExponent::new(n, mu)?;
            let f = move |s: f64| {
                lambda.powf(nf - mu / 2.0) * (1.0 + lambda * s).powf(-(nf - mu + eta))
            };
            let expect = mu.min(eta);
            let mut samples = Vec::new();
            let count = sample_count.max(4);
            for i in 0..count {
                // radii with lambda t spanning [10, 2000]
                let lt = 10.0 * 200f64.powf(i as f64 / (count - 1) as f64);
                let t = lt / lambda;
                let conv = radial_convolution(ke, &f, t, n, 1e-7)?;
                samples.push([(1.0 + lt).ln(), conv.ln()]);
            }
            let slope = fit_slope(&samples);
            let mut max_ratio: f64 = 0.0;
            for s in &samples {
                let ratio = (s[1] - lambda.powf(mu / 2.0).ln() + expect * s[0]).exp();
                max_ratio = max_ratio.max(ratio);
            }
            Ok(ProbeReport { max_ratio, fitted_exponent: Some(-slope), samples })
        }
    }
}

fn fit_slope(samples: &[[f64; 2]]) -> f64 {
    let n = samples.len() as f64;
    let sx: f64 = samples.iter().map(|s| s[0]).sum();
    let sy: f64 = samples.iter().map(|s| s[1]).sum();
    let sxx: f64 = samples.iter().map(|s| s[0] * s[0]).sum();
    let sxy: f64 = samples.iter().map(|s| s[0] * s[1]).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn params5() -> SystemParams {
        SystemParams::new(5, 1.0).unwrap()
    }

    fn config(m: u32, lambda: f64) -> PolygonConfig {
        PolygonConfig::new(m, 1.0, vec![0.0; 3], lambda, params5()).unwrap()
    }

    #[test]
    fn centers_on_ring() {
        let cfg = config(1, 4.0);
        let c = polygon_centers(&cfg);
        assert_eq!(c.len(), 1);
        assert_relative_eq!(c[0][0], 1.0, max_relative = 1e-14);
        assert_abs_diff_eq!(c[0][1], 0.0);

        let cfg = config(6, 4.0);
        let c = polygon_centers(&cfg);
        // chord lengths |z_1 - z_j| = 2 r sin((j-1) pi / m)
        for j in 1..6 {
            let chord = dist2(&c[0], &c[j]).sqrt();
            let expect = 2.0 * cfg.r_bar * (j as f64 * PI / 6.0).sin();
            assert_relative_eq!(chord, expect, max_relative = 1e-12);
        }
        // ring coordinates sum to zero for m >= 2
        let sx: f64 = c.iter().map(|z| z[0]).sum();
        let sy: f64 = c.iter().map(|z| z[1]).sum();
        assert_abs_diff_eq!(sx, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sy, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn interaction_sum_reference_values() {
        let cfg = config(2, 4.0);
        assert_relative_eq!(interaction_sum(&cfg, 1.5), (2.0f64).powf(-1.5), max_relative = 1e-13);
        let cfg = config(4, 4.0);
        // chords r sqrt2, 2r, r sqrt2 at r = 1
        assert_relative_eq!(
            interaction_sum(&cfg, 1.0),
            2f64.sqrt() + 0.5,
            max_relative = 1e-13
        );
        let cfg = config(1, 4.0);
        assert_eq!(interaction_sum(&cfg, 2.0), 0.0);
    }

    #[test]
    fn interaction_sum_growth_and_scale_invariance() {
        let p = 2.0;
        let cfg64 = config(64, 4.0);
        let cfg128 = config(128, 4.0);
        let ratio = interaction_sum(&cfg128, p) / interaction_sum(&cfg64, p);
        assert!((ratio / 2f64.powf(p) - 1.0).abs() < 0.05, "ratio = {ratio}");
        // r_bar^p scaling: chords scale linearly in r_bar
        let cfg_a = PolygonConfig::new(8, 0.5, vec![0.0; 3], 4.0, params5()).unwrap();
        let cfg_b = PolygonConfig::new(8, 2.0, vec![0.0; 3], 4.0, params5()).unwrap();
        assert_relative_eq!(
            interaction_sum(&cfg_a, p) * 0.5f64.powf(p),
            interaction_sum(&cfg_b, p) * 2.0f64.powf(p),
            max_relative = 1e-12
        );
    }

    #[test]
    fn scale_window_exponent() {
        let cfg = config(4, 4.0);
        let (lo, hi) = cfg.scale_window(0.5, 2.0);
        let e = (5.0 - 2.0) / (5.0 - 4.0);
        assert_relative_eq!(lo, 0.5 * 4f64.powf(e), max_relative = 1e-14);
        assert_relative_eq!(hi, 2.0 * 4f64.powf(e), max_relative = 1e-14);
        assert!(PolygonConfig::new(4, 1.0, vec![0.0; 3], 40.0, params5())
            .unwrap()
            .in_scale_window(0.5, 2.0));
    }

    #[test]
    fn cutoff_plateau_band_and_tail() {
        let cut = CutoffSpec::new(1.0, vec![0.0; 3], 0.2).unwrap();
        let at = |r: f64| {
            let x = vec![r, 0.0, 0.0, 0.0, 0.0];
            cut.eval(&x)
        };
        assert_eq!(at(1.0 + 0.5 * 0.2), 1.0);
        assert_eq!(at(1.0 + 3.0 * 0.2), 0.0);
        let mid = at(1.0 + 1.5 * 0.2);
        assert!(mid > 0.0 && mid < 1.0);
        // monotone through the band
        let mut prev = 1.0;
        for i in 0..20 {
            let v = at(1.0 + 0.2 * (1.0 + i as f64 / 20.0));
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn cutoff_gradient_and_laplacian_match_fd() {
        let cut = CutoffSpec::new(1.0, vec![0.1, -0.2, 0.0], 0.3).unwrap();
        let x = vec![1.1, 0.35, 0.2, -0.35, 0.15];
        let h = 1e-5;
        let g = cut.gradient(&x);
        let mut lap_fd = 0.0;
        for i in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (cut.eval(&xp) - cut.eval(&xm)) / (2.0 * h);
            assert_abs_diff_eq!(fd, g[i], epsilon = 1e-6);
            lap_fd += cut.eval(&xp) - 2.0 * cut.eval(&x) + cut.eval(&xm);
        }
        lap_fd /= h * h;
        assert_relative_eq!(lap_fd, cut.laplacian(&x), max_relative = 1e-4);
    }

    #[test]
    fn ansatz_plateau_and_rotation_invariance() {
        let cfg = config(4, 8.0);
        let cut = CutoffSpec::new(1.0, vec![0.0; 3], 0.3).unwrap();
        // inside the plateau the cutoffed and raw sums agree
        let x = vec![1.05, 0.0, 0.0, 0.0, 0.0];
        assert_relative_eq!(
            ansatz_eval(&cfg, &cut, AnsatzField::Z, &x),
            ansatz_eval(&cfg, &cut, AnsatzField::ZStar, &x),
            max_relative = 1e-14
        );
        assert_eq!(
            ansatz_eval(&cfg, &cut, AnsatzField::Z, &x),
            ansatz_eval(&cfg, &cut, AnsatzField::Y, &x)
        );
        // rotation by 2 pi / m in the x' plane leaves the field invariant
        let th = 2.0 * PI / 4.0;
        let xr = vec![
            x[0] * th.cos() - x[1] * th.sin(),
            x[0] * th.sin() + x[1] * th.cos(),
            x[2],
            x[3],
            x[4],
        ];
        for which in [AnsatzField::Z, AnsatzField::ZStar] {
            assert_relative_eq!(
                ansatz_eval(&cfg, &cut, which, &x),
                ansatz_eval(&cfg, &cut, which, &xr),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn ansatz_peak_dominated_by_own_bubble() {
        let cfg = config(4, 64.0);
        let cut = CutoffSpec::new(1.0, vec![0.0; 3], 0.3).unwrap();
        let z1 = polygon_centers(&cfg)[0].clone();
        let peak = ansatz_eval(&cfg, &cut, AnsatzField::Z, &z1);
        let own = bubble_eval(&cfg.bubbles()[0], &z1);
        let rel = (peak / own - 1.0).abs();
        // neighbour tails contribute O(m / (lambda r)^{N-2})
        let bound = 10.0 * interaction_sum(&cfg, 3.0) / cfg.lambda.powf(3.0);
        assert!(rel <= bound.max(1e-6), "rel = {rel}, bound = {bound}");
    }

    #[test]
    fn derivative_basis_matches_fd() {
        let p = params5();
        let cut = CutoffSpec::new(1.0, vec![0.0; 3], 0.4).unwrap();
        let h = 1e-6;
        for i in 0..20 {
            let mut rng = CounterRng::for_sample(313, i);
            let base: Vec<f64> = vec![
                1.0 + 0.3 * (rng.next_f64() - 0.5),
                0.3 * (rng.next_f64() - 0.5),
                0.3 * (rng.next_f64() - 0.5),
                0.3 * (rng.next_f64() - 0.5),
                0.3 * (rng.next_f64() - 0.5),
            ];
            for j in 1..=3u32 {
                for l in 1..=5u32 {
                    let cfg0 = PolygonConfig::new(3, 1.0, vec![0.0; 3], 6.0, p).unwrap();
                    let analytic = derivative_basis_eval(&cfg0, &cut, j, l, &base).unwrap();
                    let bump = |delta: f64| -> PolygonConfig {
                        let mut r_bar = 1.0;
                        let mut x_bar = vec![0.0; 3];
                        let mut lambda = 6.0;
                        match l {
                            1 => lambda += delta,
                            2 => r_bar += delta,
                            k => x_bar[(k - 3) as usize] += delta,
                        }
                        PolygonConfig::new(3, r_bar, x_bar, lambda, p).unwrap()
                    };
                    let up = bump(h);
                    let dn = bump(-h);
                    let fd = (cut.eval(&base) * bubble_eval(&up.bubbles()[(j - 1) as usize], &base)
                        - cut.eval(&base) * bubble_eval(&dn.bubbles()[(j - 1) as usize], &base))
                        / (2.0 * h);
                    let scale = analytic.abs().max(1e-8);
                    assert!(
                        (fd - analytic).abs() <= 1e-5 * scale.max(1e-4),
                        "j={j}, l={l}: fd {fd} vs {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn derivative_basis_support_and_scaling() {
        let cfg = config(4, 16.0);
        let cut = CutoffSpec::new(1.0, vec![0.0; 3], 0.2).unwrap();
        // outside the cutoff support the basis vanishes
        let far = vec![3.0, 0.0, 0.0, 0.0, 0.0];
        for l in 1..=5 {
            assert_eq!(derivative_basis_eval(&cfg, &cut, 1, l, &far).unwrap(), 0.0);
        }
        // near the peak, the scale derivative is ~ lambda^{-1} x bubble size
        let z1 = polygon_centers(&cfg)[0].clone();
        let d = derivative_basis_eval(&cfg, &cut, 1, 1, &z1).unwrap();
        let peak = bubble_eval(&cfg.bubbles()[0], &z1);
        assert_relative_eq!(
            d,
            (cfg.params.nf() - 2.0) / 2.0 * peak / cfg.lambda,
            max_relative = 1e-10
        );
        assert!(derivative_basis_eval(&cfg, &cut, 9, 1, &z1).is_err());
        assert!(derivative_basis_eval(&cfg, &cut, 1, 7, &z1).is_err());
    }

    #[test]
    fn weighted_norm_definitional_field() {
        let cfg = config(3, 8.0);
        let cut = CutoffSpec::new(1.0, vec![0.0; 3], 0.3).unwrap();
        let spec = WeightedNormSpec::standard(&cfg, &cut, 30, 99);
        let centers = polygon_centers(&cfg);
        let tau = spec.tau;
        let lambda = cfg.lambda;
        let nf = cfg.params.nf();
        let field = move |x: &[f64]| -> f64 {
            lambda.powf((nf - 2.0) / 2.0)
                * centers
                    .iter()
                    .map(|z| (1.0 + lambda * dist2(x, z).sqrt()).powf(-((nf - 2.0) / 2.0 + tau)))
                    .sum::<f64>()
        };
        let norm = weighted_norm(NormKind::Star, &field, &cfg, &spec).unwrap();
        assert_relative_eq!(norm, 1.0, max_relative = 1e-12);
        // homogeneity
        let scaled = move |x: &[f64]| 3.0 * field(x);
        let norm3 = weighted_norm(NormKind::Star, &scaled, &cfg, &spec).unwrap();
        assert_relative_eq!(norm3, 3.0, max_relative = 1e-12);
        // sup monotone under sample growth
        let bigger = WeightedNormSpec::standard(&cfg, &cut, 90, 99);
        let f2 = |x: &[f64]| bubble_eval(&cfg.bubbles()[0], x);
        let small = weighted_norm(NormKind::StarStar, &f2, &cfg, &spec).unwrap();
        let large = weighted_norm(NormKind::StarStar, &f2, &cfg, &bigger).unwrap();
        assert!(large >= small - 1e-15);
        let empty = WeightedNormSpec { tau: 1.05, sample_set: vec![] };
        assert!(weighted_norm(NormKind::Star, &f2, &cfg, &empty).is_err());
    }

    #[test]
    fn lm_probe_single_bubble_small_inside_plateau() {
        // m = 1, K = 1, evaluation inside the plateau: closed-form parts
        // cancel, leaving only the convolution truncation and MC noise
        let p = params5();
        let cfg = PolygonConfig::new(1, 1.0, vec![0.0; 3], 8.0, p).unwrap();
        let cut = CutoffSpec::new(1.0, vec![0.0; 3], 0.5).unwrap();
        let z1 = polygon_centers(&cfg)[0].clone();
        let spec = WeightedNormSpec { tau: 1.05, sample_set: vec![z1.clone()] };
        let unit = |_: &[f64]| 1.0;
        let mc = MonteCarloSpec::with_shells(20_000, 7, 8);
        let rep = residual_lm_probe(&cfg, &cut, &unit, &unit, &spec, &mc).unwrap();
        let pt = &rep.per_point[0];
        // compare against the single-bubble scale -Delta U at the peak
        let scale = crate::bubble::bubble_laplacian(&cfg.bubbles()[0], &z1);
        assert!(
            pt.l_m1.abs() <= 1e-2 * scale,
            "l_m1 = {}, scale = {scale}, se = {}",
            pt.l_m1,
            pt.conv_std_error
        );
    }

    #[test]
    fn lm_probe_decays_when_lambda_doubles() {
        let p = params5();
        let unit = |_: &[f64]| 1.0;
        let cut = CutoffSpec::new(1.0, vec![0.0; 3], 0.1).unwrap();
        let mut norms = Vec::new();
        for &lambda in &[32.0, 64.0] {
            let cfg = PolygonConfig::new(4, 1.0, vec![0.0; 3], lambda, p).unwrap();
            let spec = WeightedNormSpec::standard(&cfg, &cut, 20, 5);
            let mc = MonteCarloSpec::with_shells(8_000, 11, 8);
            let rep = residual_lm_probe(&cfg, &cut, &unit, &unit, &spec, &mc).unwrap();
            norms.push(rep.norm_estimate);
        }
        assert!(
            norms[1] < norms[0],
            "residual norm should decay with lambda: {norms:?}"
        );
    }

    #[test]
    fn pair_product_probe_symmetric_and_finite() {
        let a = estimate_probe(
            EstimateProbe::PairProduct { alpha: 2.0, beta: 2.0, delta: 2.0, separation: 1.0 },
            5,
            500,
            3,
        )
        .unwrap();
        assert!(a.max_ratio.is_finite() && a.max_ratio > 0.0);
        // stable under sample doubling
        let b = estimate_probe(
            EstimateProbe::PairProduct { alpha: 2.0, beta: 2.0, delta: 2.0, separation: 1.0 },
            5,
            1000,
            3,
        )
        .unwrap();
        assert!((a.max_ratio - b.max_ratio).abs() <= 0.1 * a.max_ratio.max(b.max_ratio));
        // symmetric under swapping the two exponents
        let sw = estimate_probe(
            EstimateProbe::PairProduct { alpha: 1.5, beta: 2.5, delta: 1.5, separation: 1.0 },
            5,
            500,
            3,
        )
        .unwrap();
        let sw2 = estimate_probe(
            EstimateProbe::PairProduct { alpha: 2.5, beta: 1.5, delta: 1.5, separation: 1.0 },
            5,
            500,
            3,
        )
        .unwrap();
        assert!((sw.max_ratio - sw2.max_ratio).abs() <= 0.15 * sw.max_ratio);
        assert!(estimate_probe(
            EstimateProbe::PairProduct { alpha: 0.5, beta: 2.0, delta: 0.5, separation: 1.0 },
            5,
            10,
            1
        )
        .is_err());
    }

    #[test]
    fn green_decay_probe_stable_under_grid_doubling() {
        let a = estimate_probe(EstimateProbe::GreenDecay { delta: 1.5 }, 5, 12, 1).unwrap();
        let b = estimate_probe(EstimateProbe::GreenDecay { delta: 1.5 }, 5, 24, 1).unwrap();
        assert!(a.max_ratio.is_finite());
        assert!((a.max_ratio - b.max_ratio).abs() <= 0.1 * a.max_ratio);
        assert!(estimate_probe(EstimateProbe::GreenDecay { delta: 3.5 }, 5, 8, 1).is_err());
    }

    #[test]
    fn kernel_decay_probe_exponent() {
        // eta < mu: decay exponent is eta
        let rep = estimate_probe(
            EstimateProbe::KernelDecay { mu: 3.0, eta: 1.2, lambda: 4.0 },
            5,
            10,
            1,
        )
        .unwrap();
        let fitted = rep.fitted_exponent.unwrap();
        assert!((fitted - 1.2).abs() < 0.1, "fitted exponent {fitted}");
        // eta > mu: decay exponent saturates at mu
        let rep = estimate_probe(
            EstimateProbe::KernelDecay { mu: 2.0, eta: 6.0, lambda: 4.0 },
            5,
            10,
            1,
        )
        .unwrap();
        let fitted = rep.fitted_exponent.unwrap();
        assert!((fitted - 2.0).abs() < 0.1, "fitted exponent {fitted}");
        assert!(estimate_probe(
            EstimateProbe::KernelDecay { mu: 2.0, eta: -1.0, lambda: 4.0 },
            5,
            8,
            1
        )
        .is_err());
    }
}
