//! Numerical integration: Gauss-Legendre and Gauss-Jacobi rules, the zonal
//! quadrature oracle for Funk-Hecke eigenvalues, radial reductions of R^N
//! integrals, radial Riesz convolutions, and seeded Monte Carlo.
//!
//! The Riesz convolution reduces an N-dimensional convolution against a
//! radial function to a 2-D (radius x angle) integral. The angular kernel
//! blows up on the diagonal r = s; panels are graded geometrically toward
//! the diagonal and, for kernel exponents mu >= N-1, the leading power
//! singularity is integrated in closed form and subtracted.

use crate::params::{gamma_fn, ln_gamma, sphere_surface_area, KernelExponent};
use crate::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// One-dimensional quadrature rule selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rule {
    Legendre,
    Jacobi { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub node_count: usize,
    pub rule: Rule,
    pub target_rel_tol: f64,
}

impl QuadratureSpec {
    pub fn legendre(node_count: usize, target_rel_tol: f64) -> Self {
        Self { node_count, rule: Rule::Legendre, target_rel_tol }
    }
}

/// Stratification scheme for Monte Carlo sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Stratification {
    None,
    RadialShells(usize),
}

/// Seeded Monte Carlo specification. Identical (seed, spec) pairs produce
/// bit-identical estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub sample_count: usize,
    pub seed: u64,
    pub stratification: Stratification,
}

impl MonteCarloSpec {
    pub fn new(sample_count: usize, seed: u64) -> Self {
        Self { sample_count, seed, stratification: Stratification::None }
    }

    pub fn with_shells(sample_count: usize, seed: u64, shells: usize) -> Self {
        Self { sample_count, seed, stratification: Stratification::RadialShells(shells) }
    }
}

// ---------------------------------------------------------------------------
// Gauss rules via Golub-Welsch
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes and weights on [-1, 1]; exact for polynomials of
/// degree <= 2n - 1.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    gauss_jacobi(n, 0.0, 0.0)
}

/// Gauss-Jacobi nodes and weights for the weight (1-x)^a (1+x)^b on [-1, 1].
///
/// Golub-Welsch: eigen-decompose the symmetrized Jacobi recurrence matrix.
pub fn gauss_jacobi(n: usize, a: f64, b: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 1 {
        return Err(Error::Domain(format!("need at least one node, got {n}")));
    }
    if a <= -1.0 || b <= -1.0 {
        return Err(Error::Domain(format!("jacobi exponents must exceed -1, got a={a}, b={b}")));
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut diag = (b - a) / (2.0 + a + b);
    for i in 0..n - 1 {
        let k = i as f64 + 1.0;
        let denom = 2.0 * k + a + b;
        let off = 2.0 / denom
            * (k * (k + a) * (k + b) * (k + a + b) / ((denom + 1.0) * (denom - 1.0))).sqrt();
        m[(i, i)] = diag;
        m[(i, i + 1)] = off;
        m[(i + 1, i)] = off;
        diag = (b * b - a * a) / (denom * (denom + 2.0));
    }
    m[(n - 1, n - 1)] = diag;

    let eigen = m.symmetric_eigen();
    // total mass of the weight: 2^(a+b+1) B(a+1, b+1)
    let total = ((a + b + 1.0) * 2f64.ln() + ln_gamma(a + 1.0)? + ln_gamma(b + 1.0)?
        - ln_gamma(a + b + 2.0)?)
        .exp();
    let mut pairs: Vec<(f64, f64)> = eigen
        .eigenvalues
        .iter()
        .copied()
        .zip(eigen.eigenvectors.row(0).iter().map(|v| v * v * total))
        .collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    // symmetric weights put the middle node of an odd rule exactly at 0
    if a == b && n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Ok(pairs.into_iter().unzip())
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    CACHE.get_or_init(|| gauss_legendre(16).expect("fixed rule"))
}

/// Fixed 16-point Gauss-Legendre panel on [a, b].
fn gl16_panel(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gl16();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Adaptive panel integration on [a, b]: bisect until the two-half estimate
/// agrees with the whole-panel estimate, with a global evaluation budget.
pub fn integrate_adaptive(
    f: &mut dyn FnMut(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    budget: usize,
) -> Result<f64> {
    let mut evals = 0usize;
    let eval_panel = |f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, evals: &mut usize| {
        *evals += 16;
        gl16_panel(f, a, b)
    };
    let whole = eval_panel(f, a, b, &mut evals);
    let scale = whole.abs().max(1e-300);
    let mut total = 0.0f64;
    let mut stack = vec![(a, b, whole)];
    while let Some((lo, hi, est)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = eval_panel(f, lo, mid, &mut evals);
        let right = eval_panel(f, mid, hi, &mut evals);
        let refined = left + right;
        let err = (refined - est).abs();
        let local_tol = rel_tol * scale.max(total.abs()) * ((hi - lo) / (b - a)).max(1e-6);
        if err <= local_tol || hi - lo < 1e-14 * (b - a).abs() {
            total += refined;
        } else {
            if evals > budget {
                return Err(Error::Accuracy {
                    message: format!("panel budget {budget} exhausted on [{a}, {b}]"),
                    partial: total + refined,
                });
            }
            stack.push((lo, mid, left));
            stack.push((mid, hi, right));
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Gegenbauer polynomials and the Funk-Hecke oracle
// ---------------------------------------------------------------------------

/// Gegenbauer polynomial C_k^(nu)(s) normalized to 1 at s = 1, via the
/// three-term recurrence evaluated at s and at 1.
pub fn gegenbauer_normalized(k: u32, nu: f64, s: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("gegenbauer order must be positive, got {nu}")));
    }
    if !(-1.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("gegenbauer argument must lie in [-1, 1], got {s}")));
    }
    Ok(gegenbauer_raw(k, nu, s) / gegenbauer_raw(k, nu, 1.0))
}

fn gegenbauer_raw(k: u32, nu: f64, s: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => 2.0 * nu * s,
        _ => {
            let mut prev = 1.0;
            let mut cur = 2.0 * nu * s;
            for j in 2..=k {
                let jf = j as f64;
                let next = (2.0 * (jf - 1.0 + nu) * s * cur - (jf - 2.0 + 2.0 * nu) * prev) / jf;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Quadrature estimate of the Funk-Hecke eigenvalue lambda_k(t) on S^N,
/// independent of the closed form: the zonal reduction
/// |S^(N-1)| 2^(-t/2) Integral_{-1}^{1} (1-s)^((N-2-t)/2) (1+s)^((N-2)/2) P_k(s) ds
/// evaluated with a Gauss-Jacobi rule that absorbs the endpoint weight
/// exactly, leaving the degree-k polynomial P_k.
pub fn funk_hecke_oracle(n: u32, t: f64, k: u32, spec: &QuadratureSpec) -> Result<f64> {
    let nf = n as f64;
    if !(t > 0.0 && t < nf) {
        return Err(Error::Domain(format!(
            "zonal kernel exponent must satisfy 0 < t < N = {n}, got {t} (non-integrable otherwise)"
        )));
    }
    let a = (nf - 2.0 - t) / 2.0;
    let b = (nf - 2.0) / 2.0;
    let (nodes, weights) = gauss_jacobi(spec.node_count, a, b)?;
    let nu = (nf - 1.0) / 2.0;
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        acc += w * gegenbauer_normalized(k, nu, x.clamp(-1.0, 1.0))?;
    }
    Ok(sphere_surface_area(n)? * 2f64.powf(-t / 2.0) * acc)
}

// ---------------------------------------------------------------------------
// Radial reductions
// ---------------------------------------------------------------------------

/// Integral over R^N of a radial function: |S^(N-1)| Integral_0^inf r^(N-1) f(r) dr,
/// with the tail compactified by r = u/(1-u).
pub fn radial_integral(f: &dyn Fn(f64) -> f64, n: u32, tol: f64) -> Result<f64> {
    let area = sphere_surface_area(n)?;
    let nf = n as f64;
    let mut g = |u: f64| {
        if u >= 1.0 - 1e-15 {
            return 0.0;
        }
        let r = u / (1.0 - u);
        let jac = 1.0 / ((1.0 - u) * (1.0 - u));
        f(r) * r.powf(nf - 1.0) * jac
    };
    let val = integrate_adaptive(&mut g, 0.0, 1.0, tol, 1 << 16)?;
    Ok(area * val)
}

/// Degree-d angular kernel of the Riesz convolution on R^N:
/// k_mu^(d)(r, s) = |S^(N-2)| Integral_0^pi (r^2 + s^2 - 2 r s cos th)^(-mu/2)
///                  P_d(cos th) sin^(N-2) th dth,
/// where P_d is the Gegenbauer polynomial of S^(N-1) normalized at 1.
/// Panels are graded geometrically from th_0 = |r-s|/max(r,s).
fn angular_kernel(n: u32, mu: f64, degree: u32, r: f64, s: f64) -> Result<f64> {
    let nf = n as f64;
    let area = sphere_surface_area(n - 1)?;
    let nu = (nf - 2.0) / 2.0;
    if r == 0.0 || s == 0.0 {
        if degree == 0 {
            let m = r.max(s);
            let wallis = PI.sqrt() * gamma_fn((nf - 1.0) / 2.0)? / gamma_fn(nf / 2.0)?;
            return Ok(area * wallis * m.powf(-mu));
        }
        return Ok(0.0);
    }
    let big = r.max(s);
    let gap2 = (r - s) * (r - s);
    let cross4 = 4.0 * r * s;
    let mut f = |th: f64| {
        // 1 - cos th = 2 sin^2(th/2), stable for tiny th
        let half_sin = (0.5 * th).sin();
        let q = gap2 + cross4 * half_sin * half_sin;
        let p = match degree {
            0 => 1.0,
            1 => th.cos(),
            d => gegenbauer_raw(d, nu, th.cos()) / gegenbauer_raw(d, nu, 1.0),
        };
        q.powf(-mu / 2.0) * th.sin().powf(nf - 2.0) * p
    };
    let theta0 = ((r - s).abs() / big).clamp(1e-13, 1.0);
    let mut acc = 0.0;
    let mut lo = 0.0;
    let mut hi = theta0.min(PI);
    loop {
        acc += gl16_panel(&mut f, lo, hi);
        if hi >= PI {
            break;
        }
        lo = hi;
        hi = (hi * 2.0).min(PI);
    }
    Ok(area * acc)
}

/// Riesz convolution of a radial function: (|.|^(-mu) * f)(x) at |x| = r,
/// via the 2-D reduction over (s, theta). Near the diagonal s = r the
/// kernel's power singularity |r-s|^(N-1-mu) is either graded into (mu <
/// N-1) or integrated in closed form and subtracted (mu >= N-1).
pub fn radial_convolution(
    mu: KernelExponent,
    f: &dyn Fn(f64) -> f64,
    r: f64,
    n: u32,
    tol: f64,
) -> Result<f64> {
    radial_convolution_degree(mu, 0, f, r, n, tol)
}

/// Degree-d generalization of [`radial_convolution`]: convolves the
/// separable field f(|y|) Y_d(y/|y|) and returns the radial factor F_d(r),
/// so that the full convolution is F_d(|x|) Y_d(x/|x|). Degrees 0 and 1
/// cover the translation and dilation kernel modes.
pub fn radial_convolution_degree(
    mu: KernelExponent,
    degree: u32,
    f: &dyn Fn(f64) -> f64,
    r: f64,
    n: u32,
    tol: f64,
) -> Result<f64> {
    let nf = n as f64;
    let mu = mu.mu;
    if !(mu > 0.0 && mu < nf) {
        return Err(Error::Domain(format!("kernel exponent must lie in (0, N), got {mu}")));
    }
    if r < 0.0 {
        return Err(Error::Domain(format!("radius must be nonnegative, got {r}")));
    }

    if r == 0.0 {
        if degree != 0 {
            return Ok(0.0);
        }
        let area = sphere_surface_area(n)?;
        let mut g = |u: f64| {
            if u >= 1.0 - 1e-15 {
                return 0.0;
            }
            let s = u / (1.0 - u);
            let jac = 1.0 / ((1.0 - u) * (1.0 - u));
            f(s) * s.powf(nf - 1.0 - mu) * jac
        };
        return Ok(area * integrate_adaptive(&mut g, 0.0, 1.0, tol, 1 << 16)?);
    }

    let mut integrand = |s: f64| -> f64 {
        f(s) * s.powf(nf - 1.0) * angular_kernel(n, mu, degree, r, s).unwrap_or(f64::NAN)
    };

    let mut total = 0.0;
    // smooth head
    total += integrate_adaptive(&mut integrand, 0.0, 0.5 * r, tol, 1 << 16)?;

    // geometric grading toward the diagonal from both sides
    let singular = mu >= nf - 1.0;
    let levels: i32 = if singular { 17 } else { 44 };
    let eps_gap = 2f64.powi(-levels);
    let mut lo = 0.5 * r;
    for k in 2..=levels {
        let hi = r * (1.0 - 2f64.powi(-k));
        total += gl16_panel(&mut integrand, lo, hi);
        lo = hi;
    }
    total += gl16_panel(&mut integrand, lo, r * (1.0 - eps_gap));
    let mut hi = r * (1.0 + eps_gap);
    for k in (2..=levels).rev() {
        let next = r * (1.0 + 2f64.powi(-k));
        total += gl16_panel(&mut integrand, hi, next);
        hi = next;
    }
    total += gl16_panel(&mut integrand, hi, 2.0 * r);

    if singular {
        total += diagonal_gap(n, mu, degree, f, r, eps_gap)?;
    }

    // tail beyond 2r, compactified
    let scale = r.max(1.0);
    let mut tail = |u: f64| {
        if u >= 1.0 - 1e-15 {
            return 0.0;
        }
        let s = 2.0 * r + scale * u / (1.0 - u);
        let jac = scale / ((1.0 - u) * (1.0 - u));
        integrand(s) * jac
    };
    total += integrate_adaptive(&mut tail, 0.0, 1.0, tol, 1 << 16)?;

    if total.is_nan() {
        return Err(Error::Accuracy {
            message: "angular kernel evaluation failed".into(),
            partial: total,
        });
    }
    Ok(total)
}

/// Contribution of the band |s - r| <= eps r when the angular kernel has a
/// non-integrable pointwise diagonal blow-up (mu >= N-1): the leading
/// power law A |r-s|^(N-1-mu) (rs)^((1-N)/2) is integrated in closed form
/// with a power-law substitution, the smooth remainder by graded panels.
fn diagonal_gap(
    n: u32,
    mu: f64,
    degree: u32,
    f: &dyn Fn(f64) -> f64,
    r: f64,
    eps: f64,
) -> Result<f64> {
    let nf = n as f64;
    let nu_pow = nf - 1.0 - mu; // in (-1, 0]
    let area = sphere_surface_area(n - 1)?;
    // A = |S^(N-2)| (1/2) B((N-1)/2, (mu-N+1)/2); at mu = N-1 the Beta pole
    // makes the subtraction degenerate, so nudge inside the open regime.
    let beta_arg = (mu - nf + 1.0) / 2.0;
    let a_const = if beta_arg > 1e-8 {
        area * 0.5
            * (ln_gamma((nf - 1.0) / 2.0)? + ln_gamma(beta_arg)? - ln_gamma((nf - 1.0) / 2.0 + beta_arg)?)
                .exp()
    } else {
        0.0
    };
    let h = eps * r;

    // closed-form part: A Integral g(s) |s-r|^nu_pow ds, g = f s^(N-1) (rs)^((1-N)/2)
    let g = |s: f64| f(s) * s.powf(nf - 1.0) * (r * s).powf((1.0 - nf) / 2.0);
    let mut closed = 0.0;
    if a_const != 0.0 {
        let p = 1.0 / (nu_pow + 1.0);
        let (tnodes, tweights) = gauss_legendre(12)?;
        for side in [-1.0, 1.0] {
            let mut acc = 0.0;
            for (x, w) in tnodes.iter().zip(&tweights) {
                let tau = 0.5 * (x + 1.0);
                let t = h * tau.powf(p);
                acc += w * 0.5 * g(r + side * t);
            }
            closed += a_const * h.powf(nu_pow + 1.0) / (nu_pow + 1.0) * acc;
        }
    }

    // remainder: graded panels of the bounded difference kernel
    let mut rem = 0.0;
    let mut diff_direct = |s: f64| {
        let k_full = angular_kernel(n, mu, degree, r, s).unwrap_or(f64::NAN);
        let lead = a_const * (s - r).abs().powf(nu_pow) * (r * s).powf((1.0 - nf) / 2.0);
        f(s) * s.powf(nf - 1.0) * (k_full - lead)
    };
    let inner_levels = 18;
    let mut lo = r * (1.0 - eps);
    for k in 1..=inner_levels {
        let hi = r * (1.0 - eps * 2f64.powi(-k));
        rem += gl16_panel(&mut diff_direct, lo, hi);
        lo = hi;
    }
    let mut hi = r * (1.0 + eps * 2f64.powi(-inner_levels));
    for k in (1..=inner_levels).rev() {
        let next = r * (1.0 + eps * 2f64.powi(-(k - 1)));
        rem += gl16_panel(&mut diff_direct, hi, next);
        hi = next;
    }

    Ok(closed + rem)
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

/// Integration domain for Monte Carlo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Ball { center: Vec<f64>, radius: f64 },
    Annulus { center: Vec<f64>, r_inner: f64, r_outer: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } | Domain::Annulus { center, .. } => center.len(),
            Domain::Box { lo, .. } => lo.len(),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Domain::Ball { center, radius } => ball_volume(center.len(), *radius),
            Domain::Annulus { center, r_inner, r_outer } => {
                ball_volume(center.len(), *r_outer) - ball_volume(center.len(), *r_inner)
            }
            Domain::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
        }
    }
}

fn ball_volume(n: usize, radius: f64) -> f64 {
    let nf = n as f64;
    PI.powf(nf / 2.0) / gamma_fn(nf / 2.0 + 1.0).expect("positive dim") * radius.powf(nf)
}

/// Counter-based deterministic generator: each (seed, index) pair owns an
/// independent stream, so shard order cannot change the estimate.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    state: u64,
}

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    let mut x = z;
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

impl CounterRng {
    pub fn for_sample(seed: u64, index: u64) -> Self {
        let key = splitmix(seed ^ splitmix(index.wrapping_mul(0xd1342543de82ef95)));
        Self { state: key }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        splitmix(self.state)
    }

    /// Uniform in (0, 1].
    pub fn next_f64(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via Box-Muller.
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let rad = (-2.0 * u1.ln()).sqrt();
        let ang = 2.0 * PI * u2;
        (rad * ang.cos(), rad * ang.sin())
    }

    pub fn unit_direction(&mut self, n: usize, out: &mut Vec<f64>) {
        out.clear();
        let mut norm2 = 0.0;
        let mut i = 0;
        while i < n {
            let (g1, g2) = self.next_normal_pair();
            out.push(g1);
            norm2 += g1 * g1;
            i += 1;
            if i < n {
                out.push(g2);
                norm2 += g2 * g2;
                i += 1;
            }
        }
        let norm = norm2.sqrt().max(1e-300);
        for v in out.iter_mut() {
            *v /= norm;
        }
    }
}

fn sample_in_domain(domain: &Domain, rng: &mut CounterRng, shell: Option<(usize, usize)>, out: &mut Vec<f64>) {
    let n = domain.dim();
    match domain {
        Domain::Ball { center, radius } => {
            let (r_lo_n, r_hi_n) = shell_bounds(0.0, *radius, n, shell);
            radial_point(center, r_lo_n, r_hi_n, n, rng, out);
        }
        Domain::Annulus { center, r_inner, r_outer } => {
            let (r_lo_n, r_hi_n) = shell_bounds(*r_inner, *r_outer, n, shell);
            radial_point(center, r_lo_n, r_hi_n, n, rng, out);
        }
        Domain::Box { lo, hi } => {
            out.clear();
            for (a, b) in lo.iter().zip(hi) {
                out.push(a + (b - a) * rng.next_f64());
            }
        }
    }
}

fn shell_bounds(r_inner: f64, r_outer: f64, n: usize, shell: Option<(usize, usize)>) -> (f64, f64) {
    let lo_n = r_inner.powi(n as i32);
    let hi_n = r_outer.powi(n as i32);
    match shell {
        None => (lo_n, hi_n),
        Some((idx, count)) => {
            let step = (hi_n - lo_n) / count as f64;
            (lo_n + idx as f64 * step, lo_n + (idx + 1) as f64 * step)
        }
    }
}

fn radial_point(center: &[f64], r_lo_n: f64, r_hi_n: f64, n: usize, rng: &mut CounterRng, out: &mut Vec<f64>) {
    let u = rng.next_f64();
    let radius = (r_lo_n + u * (r_hi_n - r_lo_n)).powf(1.0 / n as f64);
    rng.unit_direction(n, out);
    for (o, c) in out.iter_mut().zip(center) {
        *o = c + radius * *o;
    }
}

/// Importance sampler concentrated on a cloud of bubble centers: a uniform
/// mixture over centers of radial densities with survival function
/// (1 + lambda t)^(-kappa). Density is evaluable, so it can serve as the
/// proposal of an unbiased weighted estimator.
#[derive(Debug, Clone)]
pub struct BubbleCloudSampler {
    pub centers: Vec<Vec<f64>>,
    pub lambda: f64,
    pub kappa: f64,
    area: f64,
}

impl BubbleCloudSampler {
    pub fn new(centers: Vec<Vec<f64>>, lambda: f64, kappa: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Domain("need at least one center".into()));
        }
        let n = centers[0].len();
        let area = sphere_surface_area(n as u32)?;
        Ok(Self { centers, lambda, kappa, area })
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn sample(&self, rng: &mut CounterRng, out: &mut Vec<f64>) {
        let idx = (rng.next_u64() % self.centers.len() as u64) as usize;
        let u = rng.next_f64();
        let t = ((1.0 - u).powf(-1.0 / self.kappa) - 1.0) / self.lambda;
        let n = self.dim();
        rng.unit_direction(n, out);
        for (o, c) in out.iter_mut().zip(&self.centers[idx]) {
            *o = c + t * *o;
        }
    }

    /// Mixture density at x.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        let n = self.dim() as f64;
        let mut acc = 0.0;
        for c in &self.centers {
            let t = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if t <= 0.0 {
                return f64::INFINITY;
            }
            let radial = self.kappa * self.lambda * (1.0 + self.lambda * t).powf(-(self.kappa + 1.0));
            acc += radial / (self.area * t.powf(n - 1.0));
        }
        acc / self.centers.len() as f64
    }
}

/// Unbiased importance-sampled integral of `g` over R^N against a bubble
/// cloud proposal, with standard error. Deterministic per seed.
pub fn importance_integral(
    g: &dyn Fn(&[f64]) -> f64,
    sampler: &BubbleCloudSampler,
    sample_count: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if sample_count == 0 {
        return Err(Error::Domain("sample count must be positive".into()));
    }
    let mut point = Vec::new();
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for i in 0..sample_count {
        let mut rng = CounterRng::for_sample(seed, i as u64);
        sampler.sample(&mut rng, &mut point);
        let q = sampler.pdf(&point);
        let w = if q.is_finite() && q > 0.0 { g(&point) / q } else { 0.0 };
        sum += w;
        sum2 += w * w;
    }
    let m = sample_count as f64;
    let mean = sum / m;
    let var = ((sum2 - sum * sum / m) / (m - 1.0)).max(0.0);
    Ok((mean, (var / m).sqrt()))
}

/// Unbiased importance-sampled double integral of g(x, y) over R^N x R^N,
/// both coordinates drawn from the same bubble cloud proposal.
pub fn importance_pair_integral(
    g: &dyn Fn(&[f64], &[f64]) -> f64,
    sampler: &BubbleCloudSampler,
    sample_count: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if sample_count == 0 {
        return Err(Error::Domain("sample count must be positive".into()));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for i in 0..sample_count {
        let mut rng = CounterRng::for_sample(seed, i as u64);
        sampler.sample(&mut rng, &mut x);
        sampler.sample(&mut rng, &mut y);
        let qx = sampler.pdf(&x);
        let qy = sampler.pdf(&y);
        let w = if qx.is_finite() && qy.is_finite() && qx > 0.0 && qy > 0.0 {
            g(&x, &y) / (qx * qy)
        } else {
            0.0
        };
        sum += w;
        sum2 += w * w;
    }
    let m = sample_count as f64;
    let mean = sum / m;
    let var = ((sum2 - sum * sum / m) / (m - 1.0)).max(0.0);
    Ok((mean, (var / m).sqrt()))
}

/// Unbiased Monte Carlo integral of `g` over `domain` with reported standard
/// error. Deterministic per (seed, spec); shell stratification splits a ball
/// or annulus into equal-volume shells with equal allocation.
pub fn monte_carlo_integral(
    g: &dyn Fn(&[f64]) -> f64,
    domain: &Domain,
    spec: &MonteCarloSpec,
) -> Result<(f64, f64)> {
    if spec.sample_count == 0 {
        return Err(Error::Domain("sample count must be positive".into()));
    }
    let vol = domain.volume();
    let shells = match (spec.stratification, domain) {
        (Stratification::RadialShells(c), Domain::Ball { .. } | Domain::Annulus { .. }) if c > 1 => c,
        _ => 1,
    };
    let per_shell = spec.sample_count / shells;
    let per_shell = per_shell.max(2);
    let mut point = Vec::new();
    let mut mean_acc = 0.0;
    let mut var_acc = 0.0;
    for shell in 0..shells {
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for i in 0..per_shell {
            let idx = (shell * per_shell + i) as u64;
            let mut rng = CounterRng::for_sample(spec.seed, idx);
            let sh = if shells > 1 { Some((shell, shells)) } else { None };
            sample_in_domain(domain, &mut rng, sh, &mut point);
            let v = g(&point);
            sum += v;
            sum2 += v * v;
        }
        let m = per_shell as f64;
        let mean = sum / m;
        let var = ((sum2 - sum * sum / m) / (m - 1.0)).max(0.0);
        // each shell covers volume vol/shells
        mean_acc += mean / shells as f64;
        var_acc += var / (shells as f64 * shells as f64 * m);
    }
    Ok((vol * mean_acc, vol * var_acc.sqrt()))
}
