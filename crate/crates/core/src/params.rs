//! System parameters and the closed-form constants of the critical Hartree
//! system: gamma-function machinery, the HLS sharp constant, the bubble
//! amplitude, Funk-Hecke eigenvalues and spherical-harmonic dimensions.
//!
//! Everything here is a pure function of its arguments. `SystemParams`
//! memoizes the derived constants at construction so downstream reports
//! stay bit-stable.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

// Lanczos coefficients, g = 7, n = 9 (GSL set).
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Gamma function via the Lanczos approximation, accurate to ~13-15
/// significant digits for moderate arguments.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("gamma requires x > 0, got {x}")));
    }
    Ok(gamma_unchecked(x))
}

fn gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        PI / ((PI * x).sin() * gamma_unchecked(1.0 - x))
    } else {
        let xm = x - 1.0;
        let mut t = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            t += c / (xm + i as f64);
        }
        let w = xm + 7.5;
        (2.0 * PI).sqrt() * w.powf(xm + 0.5) * (-w).exp() * t
    }
}

/// Natural log of the gamma function, same Lanczos coefficients.
///
/// Preferred over `gamma_fn` in ratios of large gammas: forming the ratio in
/// log space avoids overflow and keeps the relative error near 1e-13 even
/// when the individual gammas are ~1e80.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("ln_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma_unchecked(x))
}

fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        (PI / (PI * x).sin()).ln() - ln_gamma_unchecked(1.0 - x)
    } else {
        let xm = x - 1.0;
        let mut t = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            t += c / (xm + i as f64);
        }
        let w = xm + 7.5;
        0.5 * (2.0 * PI).ln() + (xm + 0.5) * w.ln() - w + t.ln()
    }
}

/// Surface area of the unit sphere S^(n-1) in R^n: 2 pi^(n/2) / Gamma(n/2).
pub fn sphere_surface_area(n: u32) -> Result<f64> {
    if n < 1 {
        return Err(Error::Domain(format!("sphere dimension must be >= 1, got {n}")));
    }
    let nh = n as f64 / 2.0;
    Ok(2.0 * PI.powf(nh) / gamma_unchecked(nh))
}

/// Riesz kernel exponent mu in (0, N); the kernel is |x|^(-mu).
///
/// The system's own kernel corresponds to mu = N - alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelExponent {
    pub mu: f64,
}

impl KernelExponent {
    pub fn new(n: u32, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < n as f64) {
            return Err(Error::Domain(format!(
                "kernel exponent must satisfy 0 < mu < N = {n}, got {mu}"
            )));
        }
        Ok(Self { mu })
    }
}

/// Sharp constant of the Hardy-Littlewood-Sobolev inequality at the
/// conformal exponent t = r = 2N/(2N - mu):
/// C(N, mu) = pi^(mu/2) Gamma(N/2 - mu/2)/Gamma(N - mu/2)
///            * (Gamma(N/2)/Gamma(N))^(mu/N - 1).
pub fn hls_sharp_constant(n: u32, mu: KernelExponent) -> Result<f64> {
    let nf = n as f64;
    let mu = mu.mu;
    let ln = (mu / 2.0) * PI.ln() + ln_gamma_unchecked(nf / 2.0 - mu / 2.0)
        - ln_gamma_unchecked(nf - mu / 2.0)
        + (mu / nf - 1.0) * (ln_gamma_unchecked(nf / 2.0) - ln_gamma_unchecked(nf));
    Ok(ln.exp())
}

/// Dimension of the space of degree-k spherical harmonics on S^N (the unit
/// sphere of R^(N+1)): 1 for k = 0, N+1 for k = 1, and
/// C(k+N, k) - C(k+N-2, k-2) for k >= 2.
pub fn harmonic_dim(n: u32, k: u32) -> u64 {
    match k {
        0 => 1,
        1 => n as u64 + 1,
        _ => binomial(k as u64 + n as u64, k as u64) - binomial(k as u64 + n as u64 - 2, k as u64 - 2),
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// Funk-Hecke eigenvalue of the zonal kernel |xi - eta|^(-t) on S^N:
/// lambda_k(t) = 2^(N-t) pi^(N/2) Gamma(k + t/2) Gamma((N-t)/2)
///               / (Gamma(t/2) Gamma(k + N - t/2)).
pub fn funk_hecke_eigenvalue(n: u32, t: f64, k: u32) -> Result<f64> {
    let nf = n as f64;
    if !(t > 0.0 && t < nf) {
        return Err(Error::Domain(format!("funk-hecke exponent needs 0 < t < N = {n}, got {t}")));
    }
    let kf = k as f64;
    let ln = (nf - t) * 2f64.ln() + (nf / 2.0) * PI.ln() + ln_gamma_unchecked(kf + t / 2.0)
        + ln_gamma_unchecked((nf - t) / 2.0)
        - ln_gamma_unchecked(t / 2.0)
        - ln_gamma_unchecked(kf + nf - t / 2.0);
    Ok(ln.exp())
}

/// Amplitude of the explicit solution bubble:
/// C_{N,alpha} = ( N(N-2) Gamma((N+alpha)/2) / (pi^(N/2) Gamma(alpha/2)) )^((N-2)/(2alpha+4)).
pub fn bubble_amplitude(params: &SystemParams) -> f64 {
    params.derived.c_n_alpha
}

fn bubble_amplitude_compute(n: u32, alpha: f64) -> f64 {
    let nf = n as f64;
    let ln_base = nf.ln() + (nf - 2.0).ln() + ln_gamma_unchecked((nf + alpha) / 2.0)
        - (nf / 2.0) * PI.ln()
        - ln_gamma_unchecked(alpha / 2.0);
    ((nf - 2.0) / (2.0 * alpha + 4.0) * ln_base).exp()
}

/// The constant C_mu in the exact convolution identity
/// |x|^(-mu) * (1 + |y|^2)^(-(2N-mu)/2) = C_mu (1 + |x|^2)^(-mu/2),
/// namely C_mu = pi^(N/2) Gamma((N-mu)/2) / Gamma(N - mu/2).
pub fn riesz_selfconv_constant(n: u32, mu: KernelExponent) -> f64 {
    let nf = n as f64;
    let mu = mu.mu;
    ((nf / 2.0) * PI.ln() + ln_gamma_unchecked((nf - mu) / 2.0) - ln_gamma_unchecked(nf - mu / 2.0))
        .exp()
}

/// Admissibility verdict for (N, alpha) with named diagnostics.
pub fn check_admissible(n: u32, alpha: f64) -> (bool, Vec<String>) {
    let mut diags = Vec::new();
    let nf = n as f64;
    if n < 5 {
        diags.push(format!("dimension N = {n} below the floor N >= 5"));
    }
    if !(alpha > 0.0) {
        diags.push(format!("alpha = {alpha} must be positive"));
    }
    if alpha >= nf {
        diags.push(format!("alpha = {alpha} must be below N = {n}"));
    }
    let bound = nf - 5.0 + 6.0 / (nf - 2.0);
    if n >= 5 && alpha >= bound {
        diags.push(format!("alpha = {alpha} must be below N - 5 + 6/(N-2) = {bound}"));
    }
    (diags.is_empty(), diags)
}

/// Constants derived once per (N, alpha) and reused verbatim everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// Bubble amplitude C_{N,alpha}.
    pub c_n_alpha: f64,
    /// Green-kernel normalization Gamma(N/2) / (2 (N-2) pi^(N/2)).
    pub c_n_green: f64,
    /// Self-convolution constant at the system kernel mu = N - alpha.
    pub selfconv_system: f64,
    /// C_{N,alpha}^((2 alpha + 4)/(N-2)), the amplitude raised to the power
    /// that appears in the spectral multiplier and the PDE identity.
    pub amplitude_power: f64,
}

/// Dimension, convolution parameter and the derived exponent of the system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n: u32,
    pub alpha: f64,
    pub two_star_alpha: f64,
    pub derived: DerivedConstants,
}

impl SystemParams {
    /// Construct and validate. Admissibility is enforced here; downstream
    /// modules assume it.
    pub fn new(n: u32, alpha: f64) -> Result<Self> {
        let (ok, diags) = check_admissible(n, alpha);
        if !ok {
            return Err(Error::Domain(diags.join("; ")));
        }
        let nf = n as f64;
        let c_n_alpha = bubble_amplitude_compute(n, alpha);
        let exponent = (2.0 * alpha + 4.0) / (nf - 2.0);
        let derived = DerivedConstants {
            c_n_alpha,
            c_n_green: gamma_unchecked(nf / 2.0) / (2.0 * (nf - 2.0) * PI.powf(nf / 2.0)),
            selfconv_system: riesz_selfconv_constant(n, KernelExponent { mu: nf - alpha }),
            amplitude_power: c_n_alpha.powf(exponent),
        };
        Ok(Self { n, alpha, two_star_alpha: (nf + alpha) / (nf - 2.0), derived })
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    /// Kernel exponent of the system's Riesz potential, mu = N - alpha.
    pub fn system_kernel(&self) -> KernelExponent {
        KernelExponent { mu: self.nf() - self.alpha }
    }
}
