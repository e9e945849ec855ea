//! The exact solution pair of the unperturbed system, its derivative kernel
//! basis, closed-form Riesz convolutions, analytic Laplacians, pointwise PDE
//! residuals, and the linearized operators acting on separable fields.

use crate::params::{riesz_selfconv_constant, KernelExponent, SystemParams};
use crate::quadrature::{radial_convolution, radial_convolution_degree};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub(crate) fn dist2(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// A single bubble profile C_{N,alpha} (lambda / (1 + lambda^2 |x-z|^2))^((N-2)/2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bubble {
    pub center: Vec<f64>,
    pub scale: f64,
    pub params: SystemParams,
}

impl Bubble {
    pub fn new(center: Vec<f64>, scale: f64, params: SystemParams) -> Result<Self> {
        if center.len() != params.n as usize {
            return Err(Error::Domain(format!(
                "center has dimension {}, params say N = {}",
                center.len(),
                params.n
            )));
        }
        if !(scale > 0.0) {
            return Err(Error::Domain(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { center, scale, params })
    }

    pub fn unit(params: SystemParams) -> Self {
        Self { center: vec![0.0; params.n as usize], scale: 1.0, params }
    }
}

/// The synchronized solution pair (U, V) with U = V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubblePair {
    pub u: Bubble,
    pub v: Bubble,
}

impl BubblePair {
    pub fn synchronized(b: Bubble) -> Self {
        Self { u: b.clone(), v: b }
    }
}

/// Index into the derivative kernel basis at the unit bubble: translations
/// 1..=N, dilation N+1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelBasisElement {
    Translation(u32),
    Dilation,
}

impl KernelBasisElement {
    pub fn from_index(n: u32, index: u32) -> Result<Self> {
        match index {
            i if (1..=n).contains(&i) => Ok(Self::Translation(i)),
            i if i == n + 1 => Ok(Self::Dilation),
            i => Err(Error::Domain(format!("kernel basis index must lie in 1..={}, got {i}", n + 1))),
        }
    }
}

/// Pointwise value of the bubble.
pub fn bubble_eval(b: &Bubble, x: &[f64]) -> f64 {
    let q = dist2(x, &b.center);
    let den = 1.0 + b.scale * b.scale * q;
    b.params.derived.c_n_alpha * (b.scale / den).powf((b.params.nf() - 2.0) / 2.0)
}

/// Gradient of the bubble: -(N-2) C lambda^((N+2)/2) (x-z) / (1 + lambda^2 |x-z|^2)^(N/2).
pub fn bubble_gradient(b: &Bubble, x: &[f64]) -> Vec<f64> {
    let nf = b.params.nf();
    let q = dist2(x, &b.center);
    let den = 1.0 + b.scale * b.scale * q;
    let pre = -(nf - 2.0) * b.params.derived.c_n_alpha * b.scale.powf((nf + 2.0) / 2.0)
        / den.powf(nf / 2.0);
    x.iter().zip(&b.center).map(|(xi, zi)| pre * (xi - zi)).collect()
}

/// Scale derivative of the bubble:
/// d U / d lambda = C (N-2)/2 lambda^((N-4)/2) (1 - lambda^2 |x-z|^2) / (1 + lambda^2 |x-z|^2)^(N/2).
pub fn bubble_scale_derivative(b: &Bubble, x: &[f64]) -> f64 {
    let nf = b.params.nf();
    let q = dist2(x, &b.center);
    let l2q = b.scale * b.scale * q;
    b.params.derived.c_n_alpha * (nf - 2.0) / 2.0 * b.scale.powf((nf - 4.0) / 2.0) * (1.0 - l2q)
        / (1.0 + l2q).powf(nf / 2.0)
}

/// Closed-form kernel basis element at the unit bubble (z = 0, lambda = 1):
/// translations (2-N) U x_j / (1+|x|^2), dilation (N-2)/2 U (1-|x|^2)/(1+|x|^2).
pub fn kernel_basis_eval(e: KernelBasisElement, params: &SystemParams, x: &[f64]) -> Result<f64> {
    let nf = params.nf();
    let unit = Bubble::unit(*params);
    let q = dist2(x, &unit.center);
    let u = bubble_eval(&unit, x);
    match e {
        KernelBasisElement::Translation(j) => {
            if j == 0 || j > params.n {
                return Err(Error::Domain(format!("translation index out of range: {j}")));
            }
            Ok((2.0 - nf) * u * x[(j - 1) as usize] / (1.0 + q))
        }
        KernelBasisElement::Dilation => Ok((nf - 2.0) / 2.0 * u * (1.0 - q) / (1.0 + q)),
    }
}

/// Analytic negative Laplacian of the bubble:
/// -Delta U = N (N-2) C lambda^((N+2)/2) / (1 + lambda^2 |x-z|^2)^((N+2)/2).
pub fn bubble_laplacian(b: &Bubble, x: &[f64]) -> f64 {
    let nf = b.params.nf();
    let q = dist2(x, &b.center);
    let den = 1.0 + b.scale * b.scale * q;
    nf * (nf - 2.0) * b.params.derived.c_n_alpha * b.scale.powf((nf + 2.0) / 2.0)
        / den.powf((nf + 2.0) / 2.0)
}

/// Analytic negative Laplacian of a kernel basis element at the unit bubble,
/// obtained by differentiating -Delta U in the matching parameter.
pub fn kernel_basis_neg_laplacian(
    e: KernelBasisElement,
    params: &SystemParams,
    x: &[f64],
) -> Result<f64> {
    let nf = params.nf();
    let c = params.derived.c_n_alpha;
    let q: f64 = x.iter().map(|v| v * v).sum();
    match e {
        KernelBasisElement::Translation(j) => {
            if j == 0 || j > params.n {
                return Err(Error::Domain(format!("translation index out of range: {j}")));
            }
            Ok(-nf * (nf - 2.0) * (nf + 2.0) * c * x[(j - 1) as usize]
                / (1.0 + q).powf((nf + 4.0) / 2.0))
        }
        KernelBasisElement::Dilation => Ok(nf * (nf - 2.0) * (nf + 2.0) / 2.0 * c * (1.0 - q)
            / (1.0 + q).powf((nf + 4.0) / 2.0)),
    }
}

/// Closed-form Riesz convolution of the bubble power:
/// (|.|^(-mu) * U^((2N-mu)/(N-2)))(x)
///   = I(mu/2) C_{N,alpha}^((2N-mu)/(N-2)) (lambda/(1+lambda^2|x-z|^2))^(mu/2).
/// The system's own kernel corresponds to mu = N - alpha, where the bubble
/// power is exactly 2*_alpha.
pub fn riesz_convolution_bubble(mu: KernelExponent, b: &Bubble, x: &[f64]) -> Result<f64> {
    let nf = b.params.nf();
    if !(mu.mu > 0.0 && mu.mu < nf) {
        return Err(Error::Domain(format!("kernel exponent must lie in (0, N), got {}", mu.mu)));
    }
    let c_conv = riesz_selfconv_constant(b.params.n, mu)
        * b.params.derived.c_n_alpha.powf((2.0 * nf - mu.mu) / (nf - 2.0));
    let q = dist2(x, &b.center);
    let den = 1.0 + b.scale * b.scale * q;
    Ok(c_conv * (b.scale / den).powf(mu.mu / 2.0))
}

/// A potential that is radial about the bubble center, which keeps the
/// convolution with the bubble power radial.
#[derive(Clone, Copy)]
pub enum RadialPotential<'a> {
    Unit,
    Const(f64),
    Profile(&'a dyn Fn(f64) -> f64),
}

impl RadialPotential<'_> {
    pub fn eval(&self, dist: f64) -> f64 {
        match self {
            RadialPotential::Unit => 1.0,
            RadialPotential::Const(c) => *c,
            RadialPotential::Profile(f) => f(dist),
        }
    }
}

/// Pointwise residual of the full system at x:
/// res_u = -Delta u - K1(x) (|.|^(-(N-alpha)) * K1 v^(2*_alpha)) v^(2*_alpha - 1),
/// res_v symmetric. The convolution uses the closed form for constant K and
/// radial quadrature otherwise.
pub fn pde_residual(
    pair: &BubblePair,
    x: &[f64],
    k1: RadialPotential<'_>,
    k2: RadialPotential<'_>,
    tol: f64,
) -> Result<(f64, f64)> {
    let res_u = half_residual(&pair.u, &pair.v, x, k1, tol)?;
    let res_v = half_residual(&pair.v, &pair.u, x, k2, tol)?;
    Ok((res_u, res_v))
}

fn half_residual(
    own: &Bubble,
    other: &Bubble,
    x: &[f64],
    k: RadialPotential<'_>,
    tol: f64,
) -> Result<f64> {
    let params = own.params;
    let mu = params.system_kernel();
    let p = params.two_star_alpha;
    let dist = dist2(x, &other.center).sqrt();
    let conv = match k {
        RadialPotential::Unit => riesz_convolution_bubble(mu, other, x)?,
        RadialPotential::Const(c) => c * riesz_convolution_bubble(mu, other, x)?,
        RadialPotential::Profile(f) => {
            let o = other.clone();
            let prof = move |s: f64| {
                let mut probe = o.center.clone();
                probe[0] += s;
                f(s) * bubble_eval(&o, &probe).powf(p)
            };
            radial_convolution(mu, &prof, dist, params.n, tol)?
        }
    };
    let v_val = bubble_eval(other, x);
    Ok(bubble_laplacian(own, x) - k.eval(dist) * conv * v_val.powf(p - 1.0))
}

/// Which half of the linearized system to apply. The synchronized solution
/// makes the two operators functionally identical; the tag records intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearizedOp {
    T1,
    T2,
}

/// A field f(|x|) Y(x/|x|) with Y a spherical harmonic of degree 0 or 1
/// about the unit-bubble center; covers the whole kernel basis.
pub struct SeparableField<'a> {
    pub degree: u32,
    pub direction: Option<Vec<f64>>,
    pub radial: &'a dyn Fn(f64) -> f64,
}

impl<'a> SeparableField<'a> {
    pub fn zonal(radial: &'a dyn Fn(f64) -> f64) -> Self {
        Self { degree: 0, direction: None, radial }
    }

    pub fn linear(radial: &'a dyn Fn(f64) -> f64, direction: Vec<f64>) -> Self {
        Self { degree: 1, direction: Some(direction), radial }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ang = match self.degree {
            0 => 1.0,
            1 => {
                if r == 0.0 {
                    return 0.0;
                }
                let dir = self.direction.as_ref().expect("degree-1 field needs a direction");
                x.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>() / r
            }
            _ => unreachable!(),
        };
        (self.radial)(r) * ang
    }
}

/// Radial profile of the dilation kernel mode at the unit bubble (degree 0).
pub fn dilation_mode_profile(params: SystemParams) -> impl Fn(f64) -> f64 {
    let c = params.derived.c_n_alpha;
    let nf = params.nf();
    move |s: f64| {
        (nf - 2.0) / 2.0 * c * (1.0 + s * s).powf(-(nf - 2.0) / 2.0) * (1.0 - s * s) / (1.0 + s * s)
    }
}

/// Radial profile of a translation kernel mode at the unit bubble (degree 1,
/// to be paired with the coordinate direction).
pub fn translation_mode_profile(params: SystemParams) -> impl Fn(f64) -> f64 {
    let c = params.derived.c_n_alpha;
    let nf = params.nf();
    move |s: f64| (2.0 - nf) * c * (1.0 + s * s).powf(-(nf - 2.0) / 2.0) * s / (1.0 + s * s)
}

/// Apply the linearized operator to a separable field at x, reducing the
/// nonlocal term to 1-D integrals against the degree-matched angular kernel:
/// T(psi) = 2*_alpha (|.|^(-(N-alpha)) * V^(2*_alpha - 1) psi) V^(2*_alpha - 1)
///        + (2*_alpha - 1) (|.|^(-(N-alpha)) * V^(2*_alpha)) V^(2*_alpha - 2) psi.
/// Both convolutions are evaluated by quadrature, independent of the closed
/// forms they are tested against.
pub fn linearized_apply(
    _which: LinearizedOp,
    params: &SystemParams,
    psi: &SeparableField<'_>,
    x: &[f64],
    tol: f64,
) -> Result<f64> {
    if psi.degree > 1 {
        return Err(Error::Domain(format!("separable fields of degree {} unsupported", psi.degree)));
    }
    let n = params.n;
    let nf = params.nf();
    let mu = params.system_kernel();
    let p = params.two_star_alpha;
    let c = params.derived.c_n_alpha;
    let unit_pow = move |s: f64, e: f64| (c * (1.0 + s * s).powf(-(nf - 2.0) / 2.0)).powf(e);

    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let v_at_x = unit_pow(r, 1.0);

    // first term: degree-d convolution of V^(2*-1) psi
    let radial = psi.radial;
    let f1 = move |s: f64| unit_pow(s, p - 1.0) * radial(s);
    let conv1_rad = radial_convolution_degree(mu, psi.degree, &f1, r, n, tol)?;
    let ang = match psi.degree {
        0 => 1.0,
        _ => {
            if r == 0.0 {
                0.0
            } else {
                let dir = psi.direction.as_ref().expect("degree-1 field needs a direction");
                x.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>() / r
            }
        }
    };
    let term1 = p * conv1_rad * ang * v_at_x.powf(p - 1.0);

    // second term: zonal convolution of V^(2*), times V^(2*-2) psi
    let f2 = move |s: f64| unit_pow(s, p);
    let conv2 = radial_convolution(mu, &f2, r, n, tol)?;
    let term2 = (p - 1.0) * conv2 * v_at_x.powf(p - 2.0) * psi.eval(x);

    Ok(term1 + term2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SystemParams;
    use crate::quadrature::CounterRng;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn params(n: u32, alpha: f64) -> SystemParams {
        SystemParams::new(n, alpha).unwrap()
    }

    fn rand_point(seed: u64, i: u64, n: usize, spread: f64) -> Vec<f64> {
        let mut rng = CounterRng::for_sample(seed, i);
        (0..n).map(|_| (rng.next_f64() - 0.5) * 2.0 * spread).collect()
    }

    #[test]
    fn bubble_peak_and_formula() {
        let p = params(6, 1.5);
        let b = Bubble::new(vec![0.3, -0.2, 0.0, 1.0, 0.0, 0.5], 2.5, p).unwrap();
        let peak = bubble_eval(&b, &b.center);
        assert_relative_eq!(
            peak,
            p.derived.c_n_alpha * 2.5f64.powf((p.nf() - 2.0) / 2.0),
            max_relative = 1e-13
        );
        let unit = Bubble::unit(p);
        let mut x = vec![0.0; 6];
        x[0] = 1.0;
        assert_relative_eq!(
            bubble_eval(&unit, &x),
            p.derived.c_n_alpha * 2f64.powf(-(p.nf() - 2.0) / 2.0),
            max_relative = 1e-13
        );
        assert!(Bubble::new(vec![0.0; 3], 1.0, p).is_err());
        assert!(Bubble::new(vec![0.0; 6], -1.0, p).is_err());
    }

    #[test]
    fn bubble_scaling_law() {
        let p = params(5, 1.0);
        let b = Bubble::new(vec![0.4, 0.0, -0.7, 0.2, 0.1], 3.0, p).unwrap();
        let unit = Bubble::unit(p);
        for i in 0..20 {
            let x = rand_point(5, i, 5, 2.0);
            let scaled: Vec<f64> =
                x.iter().zip(&b.center).map(|(xi, zi)| b.scale * (xi - zi)).collect();
            assert_relative_eq!(
                bubble_eval(&b, &x),
                b.scale.powf((p.nf() - 2.0) / 2.0) * bubble_eval(&unit, &scaled),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn kernel_basis_closed_forms() {
        let p = params(7, 2.0);
        let origin = vec![0.0; 7];
        for j in 1..=7 {
            let v = kernel_basis_eval(KernelBasisElement::Translation(j), &p, &origin).unwrap();
            assert_abs_diff_eq!(v, 0.0);
        }
        let d = kernel_basis_eval(KernelBasisElement::Dilation, &p, &origin).unwrap();
        assert_relative_eq!(d, (p.nf() - 2.0) / 2.0 * p.derived.c_n_alpha, max_relative = 1e-13);
        // dilation mode vanishes on the unit sphere
        let mut x = vec![0.0; 7];
        x[2] = 1.0;
        let d = kernel_basis_eval(KernelBasisElement::Dilation, &p, &x).unwrap();
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-15);
        assert!(KernelBasisElement::from_index(7, 9).is_err());
        assert!(KernelBasisElement::from_index(7, 0).is_err());
    }

    #[test]
    fn kernel_basis_matches_finite_differences() {
        let p = params(5, 1.2);
        let unit = Bubble::unit(p);
        let h = 1e-5;
        for i in 0..20 {
            let x = rand_point(17, i, 5, 1.5);
            for j in 1..=5u32 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[(j - 1) as usize] += h;
                xm[(j - 1) as usize] -= h;
                let fd = (bubble_eval(&unit, &xp) - bubble_eval(&unit, &xm)) / (2.0 * h);
                let cf = kernel_basis_eval(KernelBasisElement::Translation(j), &p, &x).unwrap();
                assert_relative_eq!(fd, cf, max_relative = 1e-6, epsilon = 1e-9);
            }
            let bp = Bubble::new(vec![0.0; 5], 1.0 + h, p).unwrap();
            let bm = Bubble::new(vec![0.0; 5], 1.0 - h, p).unwrap();
            let fd = (bubble_eval(&bp, &x) - bubble_eval(&bm, &x)) / (2.0 * h);
            let cf = kernel_basis_eval(KernelBasisElement::Dilation, &p, &x).unwrap();
            assert_relative_eq!(fd, cf, max_relative = 1e-6, epsilon = 1e-9);
            let sd = bubble_scale_derivative(&unit, &x);
            assert_relative_eq!(sd, cf, max_relative = 1e-12);
        }
    }

    #[test]
    fn laplacian_closed_form_and_fd() {
        let p = params(6, 2.0);
        let b = Bubble::new(vec![0.1, 0.0, -0.3, 0.0, 0.2, 0.0], 2.0, p).unwrap();
        let unit = Bubble::unit(p);
        assert_relative_eq!(
            bubble_laplacian(&unit, &vec![0.0; 6]),
            p.nf() * (p.nf() - 2.0) * p.derived.c_n_alpha,
            max_relative = 1e-13
        );
        // radial symmetry
        let mut xa = b.center.clone();
        let mut xb = b.center.clone();
        xa[0] += 0.8;
        xb[3] -= 0.8;
        assert_relative_eq!(bubble_laplacian(&b, &xa), bubble_laplacian(&b, &xb), max_relative = 1e-13);
        // second differences of bubble_eval, scale-aware step
        let h = 1e-3 / b.scale;
        for i in 0..20 {
            let x = rand_point(23, i, 6, 1.0);
            let mut lap = 0.0;
            for j in 0..6 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                lap += bubble_eval(&b, &xp) - 2.0 * bubble_eval(&b, &x) + bubble_eval(&b, &xm);
            }
            lap /= h * h;
            assert_relative_eq!(-lap, bubble_laplacian(&b, &x), max_relative = 1e-5);
        }
    }

    #[test]
    fn laplacian_local_equation_identity() {
        // -Delta U = N(N-2) C^{-4/(N-2)} U^{(N+2)/(N-2)} pointwise
        let p = params(5, 0.8);
        let b = Bubble::new(vec![0.2, -0.4, 0.0, 0.0, 1.0], 1.7, p).unwrap();
        for i in 0..30 {
            let x = rand_point(31, i, 5, 2.0);
            let u = bubble_eval(&b, &x);
            let rhs = p.nf() * (p.nf() - 2.0)
                * p.derived.c_n_alpha.powf(-4.0 / (p.nf() - 2.0))
                * u.powf((p.nf() + 2.0) / (p.nf() - 2.0));
            assert_relative_eq!(bubble_laplacian(&b, &x), rhs, max_relative = 1e-10);
        }
    }

    #[test]
    fn gradient_matches_fd() {
        let p = params(6, 1.0);
        let b = Bubble::new(vec![0.0, 0.5, 0.0, -0.2, 0.0, 0.0], 1.4, p).unwrap();
        let h = 1e-6;
        let x = rand_point(41, 0, 6, 1.2);
        let g = bubble_gradient(&b, &x);
        for j in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (bubble_eval(&b, &xp) - bubble_eval(&b, &xm)) / (2.0 * h);
            assert_relative_eq!(fd, g[j], max_relative = 1e-6, epsilon = 1e-10);
        }
    }

    #[test]
    fn riesz_convolution_closed_vs_quadrature() {
        let p = params(6, 2.0);
        let unit = Bubble::unit(p);
        let mu = p.system_kernel();
        let closed = riesz_convolution_bubble(mu, &unit, &vec![0.0; 6]).unwrap();
        let pw = p.two_star_alpha;
        let prof = move |s: f64| {
            (p.derived.c_n_alpha * (1.0 + s * s).powf(-(p.nf() - 2.0) / 2.0)).powf(pw)
        };
        let quad = radial_convolution(mu, &prof, 0.0, 6, 1e-9).unwrap();
        assert_relative_eq!(closed, quad, max_relative = 1e-7);
        // proportionality exponent mu/2: ratio constant over x
        let b = Bubble::new(vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0], 2.0, p).unwrap();
        let mut base = None;
        for &d in &[0.0, 0.3, 1.0, 4.0] {
            let mut x = b.center.clone();
            x[1] += d;
            let v = riesz_convolution_bubble(mu, &b, &x).unwrap();
            let den = 1.0 + b.scale * b.scale * d * d;
            let ratio = v / (b.scale / den).powf(mu.mu / 2.0);
            match base {
                None => base = Some(ratio),
                Some(r0) => assert_relative_eq!(ratio, r0, max_relative = 1e-12),
            }
        }
        assert!(riesz_convolution_bubble(KernelExponent { mu: 7.0 }, &b, &vec![0.0; 6]).is_err());
    }

    #[test]
    fn translation_covariance_of_convolution() {
        let p = params(5, 1.4);
        let mu = p.system_kernel();
        let b1 = Bubble::new(vec![1.0, 0.0, 0.0, 0.0, 0.0], 1.3, p).unwrap();
        let b2 = Bubble::new(vec![0.0, -2.0, 0.0, 0.0, 0.0], 1.3, p).unwrap();
        let mut x1 = b1.center.clone();
        x1[2] += 0.9;
        let mut x2 = b2.center.clone();
        x2[4] -= 0.9;
        let v1 = riesz_convolution_bubble(mu, &b1, &x1).unwrap();
        let v2 = riesz_convolution_bubble(mu, &b2, &x2).unwrap();
        assert_relative_eq!(v1, v2, max_relative = 1e-13);
    }

    #[test]
    fn exact_pair_is_a_solution() {
        for &(n, alpha) in &[(5u32, 1.0), (6, 2.0), (8, 3.0)] {
            let p = params(n, alpha);
            let b =
                Bubble::new((0..n as usize).map(|i| 0.1 * i as f64).collect(), 1.9, p).unwrap();
            let pair = BubblePair::synchronized(b);
            for i in 0..25 {
                let x = rand_point(61, i, n as usize, 2.5);
                let (ru, rv) =
                    pde_residual(&pair, &x, RadialPotential::Unit, RadialPotential::Unit, 1e-8)
                        .unwrap();
                let scale = bubble_laplacian(&pair.u, &x).abs();
                assert!(ru.abs() <= 1e-10 * scale, "res_u = {ru}, scale = {scale}");
                assert!(rv.abs() <= 1e-10 * scale, "res_v = {rv}");
            }
        }
    }

    #[test]
    fn constant_potential_pushes_residual_negative() {
        let p = params(6, 1.0);
        let pair = BubblePair::synchronized(Bubble::unit(p));
        let x = vec![0.0; 6];
        let (ru, _) = pde_residual(
            &pair,
            &x,
            RadialPotential::Const(2.0),
            RadialPotential::Const(2.0),
            1e-8,
        )
        .unwrap();
        assert!(ru < 0.0, "doubling K should overshoot the Laplacian at the peak");
    }

    #[test]
    fn radial_potential_keeps_residual_rotationally_symmetric() {
        let p = params(5, 1.0);
        let pair = BubblePair::synchronized(Bubble::unit(p));
        let bump = |s: f64| 1.0 + 0.3 * (-s * s).exp();
        let k = RadialPotential::Profile(&bump);
        let mut xa = vec![0.0; 5];
        let mut xb = vec![0.0; 5];
        xa[0] = 1.2;
        xb[3] = -1.2;
        let (ua, va) = pde_residual(&pair, &xa, k, k, 1e-8).unwrap();
        let (ub, vb) = pde_residual(&pair, &xb, k, k, 1e-8).unwrap();
        assert_relative_eq!(ua, ub, max_relative = 1e-6);
        assert_relative_eq!(va, vb, max_relative = 1e-6);
    }

    #[test]
    fn linearized_kernel_identity_dilation() {
        // -Delta phi_{N+1} = T1(psi_{N+1}) at several radii
        let p = params(5, 1.0);
        let prof = dilation_mode_profile(p);
        let psi = SeparableField::zonal(&prof);
        for &r in &[0.2, 0.7, 1.4, 3.0] {
            let mut x = vec![0.0; 5];
            x[0] = r;
            let lhs = kernel_basis_neg_laplacian(KernelBasisElement::Dilation, &p, &x).unwrap();
            let rhs = linearized_apply(LinearizedOp::T1, &p, &psi, &x, 1e-9).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1e-12);
            assert!((lhs - rhs).abs() <= 1e-6 * scale, "r = {r}: lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn linearized_kernel_identity_translation() {
        let p = params(6, 1.5);
        let prof = translation_mode_profile(p);
        let mut dir = vec![0.0; 6];
        dir[0] = 1.0;
        let psi = SeparableField::linear(&prof, dir);
        for &r in &[0.3, 1.0, 2.2] {
            let mut x = vec![0.0; 6];
            x[0] = r;
            let lhs =
                kernel_basis_neg_laplacian(KernelBasisElement::Translation(1), &p, &x).unwrap();
            let rhs = linearized_apply(LinearizedOp::T1, &p, &psi, &x, 1e-9).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1e-12);
            assert!((lhs - rhs).abs() <= 1e-5 * scale, "r = {r}: lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn linearized_apply_linear_in_field() {
        let p = params(5, 0.7);
        let base = dilation_mode_profile(p);
        let base2 = dilation_mode_profile(p);
        let scaled = move |s: f64| 3.5 * base2(s);
        let psi = SeparableField::zonal(&base);
        let psi_scaled = SeparableField::zonal(&scaled);
        let mut x = vec![0.0; 5];
        x[1] = 0.9;
        let a = linearized_apply(LinearizedOp::T1, &p, &psi, &x, 1e-8).unwrap();
        let b = linearized_apply(LinearizedOp::T2, &p, &psi_scaled, &x, 1e-8).unwrap();
        assert_relative_eq!(b, 3.5 * a, max_relative = 1e-9);
    }

    #[test]
    fn linearized_decay_envelope() {
        // |T1(psi)| tau^(nu+4) stays bounded when |psi| <= tau^(-nu)
        let p = params(5, 1.0);
        let prof = dilation_mode_profile(p); // decays like tau^{-(N-2)}
        let psi = SeparableField::zonal(&prof);
        let nu = p.nf() - 2.0;
        let mut max_weighted: f64 = 0.0;
        for &r in &[0.5, 1.5, 3.0, 6.0, 12.0] {
            let mut x = vec![0.0; 5];
            x[0] = r;
            let t = linearized_apply(LinearizedOp::T1, &p, &psi, &x, 1e-7).unwrap();
            let tau = (1.0 + r * r).sqrt();
            max_weighted = max_weighted.max(t.abs() * tau.powf(nu + 4.0));
        }
        assert!(max_weighted.is_finite() && max_weighted > 0.0);
        let mut x = vec![0.0; 5];
        x[0] = 24.0;
        let t_far = linearized_apply(LinearizedOp::T1, &p, &psi, &x, 1e-7).unwrap();
        let tau_far = (1.0 + 24.0f64 * 24.0).sqrt();
        assert!(t_far.abs() * tau_far.powf(nu + 4.0) <= 4.0 * max_weighted);
    }
}
