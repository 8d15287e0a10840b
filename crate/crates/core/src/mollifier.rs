//! Gaussian mollifier δ_ε and the approximation identities built on it.
//!
//! Integrals `∫ f(y) δ_ε(y − x) dy` are computed after the substitution
//! `y = x + ε z`, which turns the kernel into the standard normal density.
//! Each axis of the truncated box `[-R, R]` is split at `z = 0` into two
//! Gauss–Legendre panels, so a kink of `f` at the evaluation point does not
//! spoil convergence; the tensor product of these rules covers `n <= 3`.

use std::f64::consts::PI;

use crate::error::QuadratureError;

/// Largest dimension handled by the tensor rule.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierParams {
    pub epsilon: f64,
    pub dim: usize,
    /// Quadrature nodes per axis (split evenly between the two panels).
    pub nodes: usize,
    /// Cutoff radius in units of ε.
    pub cutoff: f64,
}

impl MollifierParams {
    pub fn new(epsilon: f64, dim: usize) -> Self {
        MollifierParams {
            epsilon,
            dim,
            nodes: 64,
            cutoff: 8.0,
        }
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.dim == 0 {
            return Err("dimension must be positive".into());
        }
        if self.nodes < 8 || !self.nodes.is_multiple_of(2) {
            return Err(format!("nodes per axis must be even and >= 8, got {}", self.nodes));
        }
        if !(self.cutoff >= 4.0) {
            return Err(format!("cutoff must be >= 4, got {}", self.cutoff));
        }
        Ok(())
    }
}

/// Hölder condition `|f(y1) − f(y2)| <= L |y1 − y2|^ς`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderWitness {
    pub constant: f64,
    pub exponent: f64,
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes by Newton iteration on P_n, weights `2 / ((1 − x²) P_n'(x)²)`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Rule mapped onto `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        (
            self.nodes.iter().map(|x| mid + half * x).collect(),
            self.weights.iter().map(|w| half * w).collect(),
        )
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Product Gaussian kernel `Π_i exp(−u_i² / (2ε²)) / (ε √(2π))`.
pub fn delta_eps(u: &[f64], params: &MollifierParams) -> f64 {
    let eps = params.epsilon;
    u.iter()
        .map(|ui| (-(ui * ui) / (2.0 * eps * eps)).exp() / (eps * (2.0 * PI).sqrt()))
        .product()
}

/// Bound `4 ε^ς L / √(2π)` on `|∫ f δ_ε − f|` for a Hölder `f`.
pub fn holder_error_bound(params: &MollifierParams, witness: &HolderWitness) -> f64 {
    4.0 * params.epsilon.powf(witness.exponent) * witness.constant / (2.0 * PI).sqrt()
}

/// Precomputed tensor rule for one parameter set.
#[derive(Debug, Clone)]
pub struct Mollifier {
    params: MollifierParams,
    /// Standard-normal nodes along one axis.
    z: Vec<f64>,
    /// Quadrature weight times standard normal density.
    w: Vec<f64>,
}

impl Mollifier {
    pub fn new(params: MollifierParams) -> Result<Self, QuadratureError> {
        if params.dim > MAX_DIM {
            return Err(QuadratureError::TooManyDimensions(params.dim));
        }
        params.validate().map_err(QuadratureError::InvalidParams)?;
        let rule = GaussLegendre::new(params.nodes / 2);
        let (zl, wl) = rule.on(-params.cutoff, 0.0);
        let (zr, wr) = rule.on(0.0, params.cutoff);
        let z: Vec<f64> = zl.into_iter().chain(zr).collect();
        let w = wl
            .into_iter()
            .chain(wr)
            .zip(&z)
            .map(|(wi, zi)| wi * std_normal_pdf(*zi))
            .collect();
        Ok(Mollifier { params, z, w })
    }

    pub fn params(&self) -> &MollifierParams {
        &self.params
    }

    /// `∫ g(z) Π φ(z_i) dz` over the cutoff box, φ the standard normal density.
    pub fn integrate(&self, mut g: impl FnMut(&[f64]) -> f64) -> Result<f64, QuadratureError> {
        let n = self.params.dim;
        let h = self.z.len();
        let mut idx = vec![0usize; n];
        let mut z = vec![0.0; n];
        let mut total = 0.0;
        loop {
            let mut weight = 1.0;
            for (k, &i) in idx.iter().enumerate() {
                z[k] = self.z[i];
                weight *= self.w[i];
            }
            let v = g(&z);
            if !v.is_finite() {
                return Err(QuadratureError::QuadratureOverflow { node: z, value: v });
            }
            total += weight * v;
            // odometer increment
            let mut k = 0;
            loop {
                if k == n {
                    return Ok(total);
                }
                idx[k] += 1;
                if idx[k] < h {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// `∫ δ_ε(y − x) dy` over the cutoff box.
    pub fn delta_integral(&self) -> f64 {
        self.integrate(|_| 1.0).expect("constant integrand is finite")
    }

    fn shifted(&self, x: &[f64], z: &[f64], y: &mut [f64]) {
        let eps = self.params.epsilon;
        for ((yi, xi), zi) in y.iter_mut().zip(x).zip(z) {
            *yi = xi + eps * zi;
        }
    }

    /// `∫ f(y) δ_ε(y − x) dy`.
    pub fn mollify(&self, f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Result<f64, QuadratureError> {
        let mut y = vec![0.0; x.len()];
        self.integrate(|z| {
            self.shifted(x, z, &mut y);
            f(&y)
        })
    }

    /// Per axis i: `(−∫ f ∂_{y_i} δ_ε dy, ∫ δ_ε ∂_{y_i} f dy)`.
    pub fn grad_transfer(
        &self,
        f: impl Fn(&[f64]) -> f64,
        grad: impl Fn(&[f64]) -> Vec<f64>,
        x: &[f64],
    ) -> Result<Vec<(f64, f64)>, QuadratureError> {
        let eps = self.params.epsilon;
        let mut y = vec![0.0; x.len()];
        (0..x.len())
            .map(|i| {
                // −∂_y δ_ε(y − x) = (z / ε) δ_ε
                let lhs = self.integrate(|z| {
                    self.shifted(x, z, &mut y);
                    f(&y) * z[i] / eps
                })?;
                let rhs = self.integrate(|z| {
                    self.shifted(x, z, &mut y);
                    grad(&y)[i]
                })?;
                Ok((lhs, rhs))
            })
            .collect()
    }

    /// Per axis i: `(∫ f ∂²_{y_i} δ_ε dy, ∫ δ_ε ∂²_{y_i} f dy)`.
    pub fn second_transfer(
        &self,
        f: impl Fn(&[f64]) -> f64,
        second: impl Fn(&[f64]) -> Vec<f64>,
        x: &[f64],
    ) -> Result<Vec<(f64, f64)>, QuadratureError> {
        let eps = self.params.epsilon;
        let mut y = vec![0.0; x.len()];
        (0..x.len())
            .map(|i| {
                // ∂²_y δ_ε(y − x) = ((z² − 1) / ε²) δ_ε
                let lhs = self.integrate(|z| {
                    self.shifted(x, z, &mut y);
                    f(&y) * (z[i] * z[i] - 1.0) / (eps * eps)
                })?;
                let rhs = self.integrate(|z| {
                    self.shifted(x, z, &mut y);
                    second(&y)[i]
                })?;
                Ok((lhs, rhs))
            })
            .collect()
    }
}

/// One-shot [`Mollifier::mollify`].
pub fn mollify(f: impl Fn(&[f64]) -> f64, x: &[f64], params: &MollifierParams) -> Result<f64, QuadratureError> {
    Mollifier::new(*params)?.mollify(f, x)
}

/// One-shot [`Mollifier::grad_transfer`].
pub fn mollify_grad_transfer(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    params: &MollifierParams,
) -> Result<Vec<(f64, f64)>, QuadratureError> {
    Mollifier::new(*params)?.grad_transfer(f, grad, x)
}

/// One-shot [`Mollifier::second_transfer`].
pub fn mollify_second_transfer(
    f: impl Fn(&[f64]) -> f64,
    second: impl Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    params: &MollifierParams,
) -> Result<Vec<(f64, f64)>, QuadratureError> {
    Mollifier::new(*params)?.second_transfer(f, second, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p1(eps: f64) -> MollifierParams {
        MollifierParams::new(eps, 1)
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // degree 2n-1 exactness: ∫_{-1}^{1} x^k = 2/(k+1) for even k
        for n in [4usize, 7, 32] {
            let r = GaussLegendre::new(n);
            for k in 0..2 * n {
                let q: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
                assert!((q - exact).abs() < 1e-13, "n={n} k={k}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn kernel_at_origin() {
        assert!((delta_eps(&[0.0], &p1(1.0)) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn kernel_normalizes_in_one_to_three_dims() {
        for dim in 1..=3 {
            for eps in [0.5, 0.1, 0.02, 1e-3] {
                let m = Mollifier::new(MollifierParams::new(eps, dim)).unwrap();
                assert!((m.delta_integral() - 1.0).abs() < 1e-10, "dim {dim} eps {eps}");
            }
        }
    }

    #[test]
    fn low_moments() {
        let five = mollify(|_| 5.0, &[0.3], &p1(0.2)).unwrap();
        assert!((five - 5.0).abs() < 1e-10);
        for eps in [1.0, 0.1, 0.01] {
            let lin = mollify(|y| y[0], &[2.0], &p1(eps)).unwrap();
            assert!((lin - 2.0).abs() < 1e-10);
        }
        let sq = mollify(|y| y[0] * y[0], &[0.0], &p1(0.1)).unwrap();
        assert!((sq - 0.01).abs() < 1e-8);
    }

    #[test]
    fn absolute_value_matches_closed_form_and_bound() {
        let w = HolderWitness {
            constant: 1.0,
            exponent: 1.0,
        };
        for eps in [0.5, 0.1, 0.02] {
            let measured = mollify(|y| y[0].abs(), &[0.0], &p1(eps)).unwrap();
            let exact = eps * (2.0 / PI).sqrt();
            assert!((measured - exact).abs() < 1e-6);
            assert!(measured <= holder_error_bound(&p1(eps), &w));
        }
    }

    #[test]
    fn quadrature_error_is_within_one_percent_of_bound() {
        // E|εZ| = ε√(2/π), E|εZ|^½ = √ε · 2^¼ Γ(¾) / √π
        const GAMMA_3_4: f64 = 1.225_416_702_465_177_6;
        let eps = 0.02;
        let cases: [(fn(f64) -> f64, f64, f64); 2] = [
            (f64::abs, 1.0, eps * (2.0 / PI).sqrt()),
            (|v| v.abs().sqrt(), 0.5, eps.sqrt() * 2f64.powf(0.25) * GAMMA_3_4 / PI.sqrt()),
        ];
        for (f, exponent, exact) in cases {
            let got = mollify(|y| f(y[0]), &[0.0], &p1(eps)).unwrap();
            let bound = holder_error_bound(&p1(eps), &HolderWitness { constant: 1.0, exponent });
            assert!((got - exact).abs() <= 0.01 * bound, "{got} vs {exact}");
        }
    }

    #[test]
    fn bound_values() {
        let b = |eps, l| holder_error_bound(&p1(eps), &HolderWitness { constant: l, exponent: 1.0 });
        assert!((b(1.0, 1.0) - 1.595_769).abs() < 1e-6);
        assert!((b(0.1, 2.0) - 0.319_154).abs() < 1e-6);
        assert_eq!(b(0.3, 0.0), 0.0);
    }

    #[test]
    fn first_derivative_transfer_on_square() {
        let r = mollify_grad_transfer(|y| y[0] * y[0], |y| vec![2.0 * y[0]], &[1.0], &p1(0.1)).unwrap();
        let (lhs, rhs) = r[0];
        assert!((lhs - 2.0).abs() < 1e-6 && (rhs - 2.0).abs() < 1e-6, "{lhs} {rhs}");
    }

    #[test]
    fn transfer_of_constant_is_zero() {
        let r = mollify_grad_transfer(|_| 3.0, |_| vec![0.0], &[0.4], &p1(0.1)).unwrap();
        assert!(r[0].0.abs() < 1e-10 && r[0].1.abs() < 1e-10);
    }

    #[test]
    fn second_derivative_transfer_on_cube() {
        let r = mollify_second_transfer(|y| y[0].powi(3), |y| vec![6.0 * y[0]], &[0.0], &p1(0.1)).unwrap();
        assert!(r[0].0.abs() < 1e-8 && r[0].1.abs() < 1e-8, "{:?}", r);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let err = mollify(|y| 1.0 / y[0].abs().min(0.0), &[0.0], &p1(0.1)).unwrap_err();
        assert!(matches!(err, QuadratureError::QuadratureOverflow { .. }));
    }

    #[test]
    fn four_dimensions_are_refused() {
        assert_eq!(
            Mollifier::new(MollifierParams::new(0.1, 4)).unwrap_err(),
            QuadratureError::TooManyDimensions(4)
        );
    }

    #[test]
    fn invalid_params_are_described() {
        assert!(MollifierParams::new(0.0, 1).validate().is_err());
        assert!(MollifierParams::new(0.1, 1).with_nodes(6).validate().is_err());
        assert!(MollifierParams::new(0.1, 2).validate().is_ok());
    }

    proptest! {
        #[test]
        fn kernel_is_even(u in prop::collection::vec(-3.0f64..3.0, 1..4), eps in 0.01f64..2.0) {
            let p = MollifierParams::new(eps, u.len());
            let neg: Vec<f64> = u.iter().map(|v| -v).collect();
            prop_assert_eq!(delta_eps(&u, &p), delta_eps(&neg, &p));
        }
    }
}
