//! Conformal transport between R^N and the unit sphere S^N in R^(N+1):
//! forward/inverse stereographic maps, the Jacobian, the distance identity,
//! and the weighted pushforward/pullback of functions.

use crate::{Error, Result};

const SOUTH_POLE_GUARD: f64 = 1e-9;

/// A point on S^N subset R^(N+1), kept unit to 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    pub xi: Vec<f64>,
}

impl SpherePoint {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        let norm2: f64 = xi.iter().map(|v| v * v).sum();
        if (norm2.sqrt() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("sphere point has |xi| = {}", norm2.sqrt())));
        }
        Ok(Self { xi })
    }

    pub fn last(&self) -> f64 {
        *self.xi.last().expect("nonempty")
    }
}

/// S(x) = (2x/(1+|x|^2), (1-|x|^2)/(1+|x|^2)).
pub fn stereo_forward(x: &[f64]) -> SpherePoint {
    let q: f64 = x.iter().map(|v| v * v).sum();
    let den = 1.0 + q;
    let mut xi: Vec<f64> = x.iter().map(|v| 2.0 * v / den).collect();
    xi.push((1.0 - q) / den);
    // renormalize away the last bits of rounding
    let norm: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in xi.iter_mut() {
        *v /= norm;
    }
    SpherePoint { xi }
}

/// S^(-1)(xi) = (xi_1/(1+xi_{N+1}), ..., xi_N/(1+xi_{N+1})).
pub fn stereo_inverse(xi: &SpherePoint) -> Result<Vec<f64>> {
    let last = xi.last();
    if 1.0 + last < SOUTH_POLE_GUARD {
        return Err(Error::Singular(format!(
            "inverse stereographic map blows up near the south pole (1 + xi_last = {})",
            1.0 + last
        )));
    }
    Ok(xi.xi[..xi.xi.len() - 1].iter().map(|v| v / (1.0 + last)).collect())
}

/// Jacobian J_S(x) = (2/(1+|x|^2))^N.
pub fn stereo_jacobian(x: &[f64]) -> f64 {
    let q: f64 = x.iter().map(|v| v * v).sum();
    (2.0 / (1.0 + q)).powi(x.len() as i32)
}

/// Both sides of the distance identity |S(x) - S(y)| = |x - y| r(x) r(y),
/// r(x) = (2/(1+|x|^2))^(1/2).
pub fn distance_identity_check(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sx = stereo_forward(x);
    let sy = stereo_forward(y);
    let lhs = sx.xi.iter().zip(&sy.xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let dist = crate::bubble::dist2(x, y).sqrt();
    let rx = (2.0 / (1.0 + x.iter().map(|v| v * v).sum::<f64>())).sqrt();
    let ry = (2.0 / (1.0 + y.iter().map(|v| v * v).sum::<f64>())).sqrt();
    (lhs, dist * rx * ry)
}

/// Weighted pushforward S_* h(xi) = J_S^((2-N)/(2N))(S^(-1) xi) h(S^(-1) xi).
pub fn pushforward(h: &dyn Fn(&[f64]) -> f64, xi: &SpherePoint) -> Result<f64> {
    let x = stereo_inverse(xi)?;
    let n = x.len() as f64;
    Ok(stereo_jacobian(&x).powf((2.0 - n) / (2.0 * n)) * h(&x))
}

/// Weighted pullback S^* H(x) = J_S^((N-2)/(2N))(x) H(S x).
pub fn pullback(h: &dyn Fn(&SpherePoint) -> f64, x: &[f64]) -> f64 {
    let n = x.len() as f64;
    stereo_jacobian(x).powf((n - 2.0) / (2.0 * n)) * h(&stereo_forward(x))
}

/// Seeded uniform sample on S^N (ambient dimension n + 1): normalized
/// Gaussian draw.
pub fn sample_sphere(n: u32, seed: u64, index: u64) -> SpherePoint {
    let mut rng = crate::quadrature::CounterRng::for_sample(seed, index);
    let mut xi = Vec::with_capacity(n as usize + 1);
    rng.unit_direction(n as usize + 1, &mut xi);
    SpherePoint { xi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble::{kernel_basis_eval, KernelBasisElement};
    use crate::params::SystemParams;
    use crate::quadrature::{radial_integral, CounterRng};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn rand_point(seed: u64, i: u64, n: usize, spread: f64) -> Vec<f64> {
        let mut rng = CounterRng::for_sample(seed, i);
        (0..n).map(|_| (rng.next_f64() - 0.5) * 2.0 * spread).collect()
    }

    #[test]
    fn forward_map_basics() {
        let x = vec![0.0; 5];
        let np = stereo_forward(&x);
        assert_abs_diff_eq!(np.last(), 1.0, epsilon = 1e-15);
        // |x| = 1 maps onto the equator (x, 0)
        let mut e = vec![0.0; 5];
        e[2] = 1.0;
        let eq = stereo_forward(&e);
        assert_abs_diff_eq!(eq.last(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.xi[2], 1.0, epsilon = 1e-15);
        for i in 0..50 {
            let x = rand_point(3, i, 5, 4.0);
            let s = stereo_forward(&x);
            let norm: f64 = s.xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let mut np = vec![0.0; 6];
        np[5] = 1.0;
        let x = stereo_inverse(&SpherePoint::new(np).unwrap()).unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-15));
        let mut eq = vec![0.0; 6];
        eq[0] = 1.0;
        let x = stereo_inverse(&SpherePoint::new(eq).unwrap()).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-14);
        for i in 0..100 {
            let x = rand_point(9, i, 5, 3.0);
            let back = stereo_inverse(&stereo_forward(&x)).unwrap();
            for (a, b) in x.iter().zip(&back) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
        let mut sp = vec![0.0; 6];
        sp[5] = -1.0;
        assert!(stereo_inverse(&SpherePoint { xi: sp }).is_err());
        assert!(SpherePoint::new(vec![0.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn jacobian_value_and_integral() {
        let x = vec![0.0; 6];
        assert_relative_eq!(stereo_jacobian(&x), 64.0, max_relative = 1e-14);
        // integral of J_S over R^N equals |S^N|
        for n in [5u32, 7] {
            let nf = n as f64;
            let integral =
                radial_integral(&move |r: f64| (2.0 / (1.0 + r * r)).powf(nf), n, 1e-10).unwrap();
            let area = crate::params::sphere_surface_area(n + 1).unwrap();
            assert_relative_eq!(integral, area, max_relative = 1e-8);
        }
        // far-field decay ~ (2/|x|^2)^N
        let mut far = vec![0.0; 5];
        far[0] = 40.0;
        assert_relative_eq!(stereo_jacobian(&far), (2.0 / 1601.0f64).powi(5), max_relative = 1e-12);
    }

    #[test]
    fn distance_identity() {
        for n in [5usize, 6, 10] {
            for i in 0..1000 {
                let x = rand_point(101, 2 * i, n, 3.0);
                let y = rand_point(101, 2 * i + 1, n, 3.0);
                let (lhs, rhs) = distance_identity_check(&x, &y);
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12 * (1.0 + rhs));
            }
            let x = rand_point(55, 7, n, 2.0);
            let (lhs, rhs) = distance_identity_check(&x, &x);
            assert_abs_diff_eq!(lhs, 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(rhs, 0.0, epsilon = 1e-14);
            // inversion partner x -> x/|x|^2
            let q: f64 = x.iter().map(|v| v * v).sum();
            let y: Vec<f64> = x.iter().map(|v| v / q).collect();
            let (lhs, rhs) = distance_identity_check(&x, &y);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12 * (1.0 + rhs));
        }
    }

    #[test]
    fn pushforward_of_kernel_basis_is_linear_in_xi() {
        // S_* phi_j = (2-N) 2^(-N/2) C xi_j and the dilation analog
        for &(n, alpha) in &[(5u32, 1.0), (6, 2.0), (9, 4.0)] {
            let p = SystemParams::new(n, alpha).unwrap();
            let nf = p.nf();
            let c = p.derived.c_n_alpha;
            for i in 0..50 {
                let xi = sample_sphere(n, 77, i);
                if 1.0 + xi.last() < 1e-3 {
                    continue;
                }
                for j in 1..=n {
                    let h = move |x: &[f64]| {
                        kernel_basis_eval(KernelBasisElement::Translation(j), &p, x).unwrap()
                    };
                    let lhs = pushforward(&h, &xi).unwrap();
                    let rhs = (2.0 - nf) * 2f64.powf(-nf / 2.0) * c * xi.xi[(j - 1) as usize];
                    assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10 * (1.0 + rhs.abs()));
                }
                let h =
                    move |x: &[f64]| kernel_basis_eval(KernelBasisElement::Dilation, &p, x).unwrap();
                let lhs = pushforward(&h, &xi).unwrap();
                let rhs = (nf - 2.0) * 2f64.powf(-nf / 2.0) * c * xi.last();
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10 * (1.0 + rhs.abs()));
            }
        }
    }

    #[test]
    fn push_pull_round_trip() {
        let h = |x: &[f64]| (1.0 + crate::bubble::dist2(x, &[0.3, 0.0, 0.0, 0.0, -0.1])).powf(-1.5);
        for i in 0..40 {
            let x = rand_point(91, i, 5, 2.0);
            let pushed = move |xi: &SpherePoint| pushforward(&h, xi).unwrap();
            let back = pullback(&pushed, &x);
            assert_relative_eq!(back, h(&x), max_relative = 1e-11);
        }
    }

    #[test]
    fn conformal_norm_preservation() {
        // integral of |h|^(2N/(N-2)) over R^N equals the S^N integral of
        // |S_* h|^(2N/(N-2)), the latter estimated by seeded sphere sampling
        let n = 5u32;
        let nf = n as f64;
        let p = SystemParams::new(n, 1.0).unwrap();
        let b = crate::bubble::Bubble::unit(p);
        let pow = 2.0 * nf / (nf - 2.0);
        let plane: f64 = radial_integral(
            &move |r: f64| (p.derived.c_n_alpha * (1.0 + r * r).powf(-(nf - 2.0) / 2.0)).powf(pow),
            n,
            1e-10,
        )
        .unwrap();
        let samples = 200_000u64;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for i in 0..samples {
            let xi = sample_sphere(n, 2024, i);
            let v = if 1.0 + xi.last() < 1e-9 {
                0.0
            } else {
                let h = |x: &[f64]| crate::bubble::bubble_eval(&b, x);
                pushforward(&h, &xi).unwrap().abs().powf(pow)
            };
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / samples as f64;
        let var = (acc2 / samples as f64 - mean * mean).max(0.0);
        let area = crate::params::sphere_surface_area(n + 1).unwrap();
        let sphere = area * mean;
        let sigma = area * (var / samples as f64).sqrt();
        assert!(
            (sphere - plane).abs() <= 3.0 * sigma,
            "plane {plane}, sphere {sphere}, sigma {sigma}"
        );
    }
}
