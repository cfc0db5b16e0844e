//! Grids, symbols in the kernel picture `φ(q; x)` and the phase-space picture
//! `f(q, p)`, the partial Fourier transform between them, and the norms used
//! by the harness.
//!
//! Fourier convention: `(𝔽f)(q; x) = (2π)^{−N} ∫ dk e^{−i x·k} f(q, k)` with
//! inverse `f(q, k) = ∫ dx e^{i x·k} (𝔽f)(q; x)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::{Error, Result, C64, MAX_DIM};

/// Uniform tensor grid `{−L + mΔ : 0 ≤ m < n}` per axis, flat index lexicographic
/// with axis 0 most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    n: usize,
    spacing: f64,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Domain(format!("grid dimension must lie in 1..={MAX_DIM}, got {dim}")));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Domain(format!("grid half-width must be positive, got {half_width}")));
        }
        if n < 2 || n % 2 != 0 {
            return Err(Error::Domain(format!("points per axis must be even and at least 2, got {n}")));
        }
        Ok(Self { dim, half_width, n, spacing: 2.0 * half_width / n as f64 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total number of nodes `n^N`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn coordinate(&self, m: usize) -> f64 {
        -self.half_width + m as f64 * self.spacing
    }

    /// Per-axis indices of a flat index.
    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for axis in (0..self.dim).rev() {
            out[axis] = flat % self.n;
            flat /= self.n;
        }
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx[..self.dim].iter().fold(0, |acc, &m| acc * self.n + m)
    }

    pub fn point(&self, flat: usize, out: &mut [f64]) {
        let mut idx = [0usize; MAX_DIM];
        self.multi_index(flat, &mut idx);
        for axis in 0..self.dim {
            out[axis] = self.coordinate(idx[axis]);
        }
    }

    /// All node coordinates, `len() × dim` row-major.
    pub fn points(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * self.dim];
        for (flat, chunk) in out.chunks_mut(self.dim).enumerate() {
            self.point(flat, chunk);
        }
        out
    }

    /// Index of the node nearest to `x` on each axis, if `x` is a node to within `tol·Δ`.
    pub fn node_index(&self, x: &[f64], tol: f64) -> Option<usize> {
        let mut idx = [0usize; MAX_DIM];
        for axis in 0..self.dim {
            let m = (x[axis] + self.half_width) / self.spacing;
            let r = m.round();
            if (m - r).abs() > tol || r < 0.0 || r >= self.n as f64 {
                return None;
            }
            idx[axis] = r as usize;
        }
        Some(self.flat_index(&idx))
    }

    /// Spacing `2π / (nΔ) = π / L` of the dual grid.
    pub fn dual_spacing(&self) -> f64 {
        PI / self.half_width
    }

    pub fn dual_coordinate(&self, m: usize) -> f64 {
        (m as f64 - (self.n / 2) as f64) * self.dual_spacing()
    }

    pub fn dual_point(&self, flat: usize, out: &mut [f64]) {
        let mut idx = [0usize; MAX_DIM];
        self.multi_index(flat, &mut idx);
        for axis in 0..self.dim {
            out[axis] = self.dual_coordinate(idx[axis]);
        }
    }

    pub fn dual_points(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * self.dim];
        for (flat, chunk) in out.chunks_mut(self.dim).enumerate() {
            self.dual_point(flat, chunk);
        }
        out
    }

    pub fn dual_cell_volume(&self) -> f64 {
        self.dual_spacing().powi(self.dim as i32)
    }

    /// Whether every coordinate lies in the inner half-box `|x_i| ≤ L/2`.
    pub fn in_inner_half(&self, x: &[f64]) -> bool {
        x[..self.dim].iter().all(|v| v.abs() <= 0.5 * self.half_width + 1e-12)
    }
}

/// Real polynomial in `dim` variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Result<Self> {
        for (_, e) in &terms {
            if e.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: e.len() });
            }
        }
        Ok(Self { dim, terms })
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self { dim, terms: vec![(c, vec![0; dim])] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(_, e)| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { dim: self.dim, terms: self.terms.iter().map(|(a, e)| (a * c, e.clone())).collect() }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| c * e.iter().zip(z).map(|(&k, &v)| v.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// Fills `out[i] = ∂_i P(z)`.
    pub fn gradient(&self, z: &[f64], out: &mut [f64]) {
        out[..self.dim].fill(0.0);
        for (c, e) in &self.terms {
            for i in 0..self.dim {
                if e[i] == 0 {
                    continue;
                }
                let mut term = c * e[i] as f64;
                for (j, (&k, &v)) in e.iter().zip(z).enumerate() {
                    let power = if j == i { k - 1 } else { k };
                    term *= v.powi(power as i32);
                }
                out[i] += term;
            }
        }
    }

    /// `sup_{|w| = r} |P(c + w)|` bounded by evaluating absolute coefficients at `|c_i| + r`.
    fn radial_bound(&self, center: &[f64], r: f64) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| {
                c.abs() * e.iter().zip(center).map(|(&k, &v)| (v.abs() + r).powi(k as i32)).product::<f64>()
            })
            .sum()
    }
}

/// Smooth bounded `q`-profile `P(q) · exp(−α |q − q₀|²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QProfile {
    poly: Polynomial,
    alpha: f64,
    center: Vec<f64>,
    sup_bound: f64,
}

impl QProfile {
    pub fn new(poly: Polynomial, alpha: f64, center: Vec<f64>) -> Result<Self> {
        if center.len() != poly.dim() {
            return Err(Error::DimensionMismatch { expected: poly.dim(), got: center.len() });
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("profile decay must be non-negative, got {alpha}")));
        }
        if alpha == 0.0 && poly.degree() > 0 {
            return Err(Error::Domain("a profile without decay must have a constant polynomial".into()));
        }
        let sup_bound = if alpha == 0.0 {
            poly.radial_bound(&center, 0.0)
        } else {
            let r_max = ((poly.degree() as f64 + 40.0) / alpha).sqrt();
            let samples = 4000;
            (0..=samples)
                .map(|i| {
                    let r = r_max * i as f64 / samples as f64;
                    let r_hi = r_max * (i + 1) as f64 / samples as f64;
                    poly.radial_bound(&center, r_hi) * (-alpha * r * r).exp()
                })
                .fold(0.0, f64::max)
        };
        Ok(Self { poly, alpha, center, sup_bound })
    }

    /// `amplitude · exp(−α |q − q₀|²)`.
    pub fn gaussian(amplitude: f64, alpha: f64, center: Vec<f64>) -> Result<Self> {
        Self::new(Polynomial::constant(center.len(), amplitude), alpha, center)
    }

    /// The constant profile `amplitude`.
    pub fn constant(dim: usize, amplitude: f64) -> Self {
        Self::new(Polynomial::constant(dim, amplitude), 0.0, vec![0.0; dim]).expect("constant profile")
    }

    pub fn dim(&self) -> usize {
        self.poly.dim()
    }

    pub fn is_constant(&self) -> bool {
        self.alpha == 0.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { poly: self.poly.scaled(c), alpha: self.alpha, center: self.center.clone(), sup_bound: self.sup_bound * c.abs() }
    }

    /// An upper bound for `sup_q |profile(q)|`.
    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        if self.alpha == 0.0 {
            return self.poly.eval(q);
        }
        let r2: f64 = q.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        self.poly.eval(q) * (-self.alpha * r2).exp()
    }

    pub fn gradient(&self, q: &[f64], out: &mut [f64]) {
        let n = self.dim();
        if self.alpha == 0.0 {
            out[..n].fill(0.0);
            return;
        }
        let r2: f64 = q.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        let g = (-self.alpha * r2).exp();
        let p = self.poly.eval(q);
        self.poly.gradient(q, out);
        for i in 0..n {
            out[i] = (out[i] - 2.0 * self.alpha * (q[i] - self.center[i]) * p) * g;
        }
    }
}

/// A function `φ(q; x)` on configuration space squared, the kernel picture.
pub trait KernelSymbol: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, q: &[f64], x: &[f64]) -> C64;

    /// Fills `out[j] = ∂_{q_j} φ(q; x)`.
    fn grad_q(&self, _q: &[f64], _x: &[f64], _out: &mut [C64]) -> Result<()> {
        Err(Error::Unsupported("this symbol has no analytic q-gradient".into()))
    }

    /// An upper bound for `sup_q |φ(q; x)|`; infinite when unknown.
    fn x_envelope(&self, _x: &[f64]) -> f64 {
        f64::INFINITY
    }

    /// Length scale of the decay in `x`, if known.
    fn x_scale(&self) -> Option<f64> {
        None
    }

    fn is_q_independent(&self) -> bool {
        false
    }
}

/// A function `f(q, p)` on phase space.
pub trait PhaseSymbol: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, q: &[f64], p: &[f64]) -> C64;

    fn grad_q(&self, q: &[f64], p: &[f64], out: &mut [C64]);

    fn grad_p(&self, q: &[f64], p: &[f64], out: &mut [C64]);

    /// The partial Fourier transform, when known in closed form.
    fn kernel_form(&self) -> KernelForm {
        KernelForm::Unavailable
    }
}

/// Closed form of `𝔽f` for a phase-space symbol.
#[derive(Clone)]
pub enum KernelForm {
    Analytic(Arc<dyn KernelSymbol>),
    /// `f(q, p) = v(q)`, whose transform is a delta in `x`.
    Multiplication(QProfile),
    Unavailable,
}

/// `P(q) e^{−α|q−q₀|²} · e^{−β|x−x₀|²} · e^{i k₀·x}`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSymbol {
    profile: QProfile,
    beta: f64,
    x0: Vec<f64>,
    k0: Vec<f64>,
}

impl GaussianSymbol {
    pub fn new(profile: QProfile, beta: f64, x0: Vec<f64>, k0: Vec<f64>) -> Result<Self> {
        let n = profile.dim();
        if x0.len() != n || k0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x0.len().max(k0.len()) });
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Domain(format!("x-decay must be positive, got {beta}")));
        }
        Ok(Self { profile, beta, x0, k0 })
    }

    /// Real, even-in-`x` instance `amplitude · e^{−α|q−q₀|²} e^{−β|x|²}`.
    pub fn real_even(amplitude: f64, alpha: f64, q0: Vec<f64>, beta: f64) -> Result<Self> {
        let n = q0.len();
        Self::new(QProfile::gaussian(amplitude, alpha, q0)?, beta, vec![0.0; n], vec![0.0; n])
    }

    pub fn dim(&self) -> usize {
        self.profile.dim()
    }

    pub fn profile(&self) -> &QProfile {
        &self.profile
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { profile: self.profile.scaled(c), ..self.clone() }
    }

    fn x_part(&self, x: &[f64]) -> C64 {
        let mut r2 = 0.0;
        let mut phase = 0.0;
        for i in 0..self.dim() {
            let d = x[i] - self.x0[i];
            r2 += d * d;
            phase += self.k0[i] * x[i];
        }
        let decay = (-self.beta * r2).exp();
        if phase == 0.0 {
            C64::new(decay, 0.0)
        } else {
            C64::from_polar(decay, phase)
        }
    }

    /// The phase-space symbol whose partial Fourier transform is `self`.
    pub fn phase_form(&self) -> GaussianPhase {
        GaussianPhase { kernel: Arc::new(self.clone()) }
    }
}

impl KernelSymbol for GaussianSymbol {
    fn dim(&self) -> usize {
        self.profile.dim()
    }

    fn eval(&self, q: &[f64], x: &[f64]) -> C64 {
        self.x_part(x) * self.profile.value(q)
    }

    fn grad_q(&self, q: &[f64], x: &[f64], out: &mut [C64]) -> Result<()> {
        let mut g = [0.0; MAX_DIM];
        self.profile.gradient(q, &mut g);
        let xp = self.x_part(x);
        for i in 0..self.dim() {
            out[i] = xp * g[i];
        }
        Ok(())
    }

    fn x_envelope(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.x0).map(|(a, b)| (a - b) * (a - b)).sum();
        self.profile.sup_bound() * (-self.beta * r2).exp()
    }

    fn x_scale(&self) -> Option<f64> {
        Some(1.0 / (2.0 * self.beta).sqrt())
    }

    fn is_q_independent(&self) -> bool {
        self.profile.is_constant()
    }
}

/// `a(q) (π/β)^{N/2} e^{i(p+k₀)·x₀} e^{−|p+k₀|²/(4β)}`, the phase-space form of a [`GaussianSymbol`].
#[derive(Clone, Debug)]
pub struct GaussianPhase {
    kernel: Arc<GaussianSymbol>,
}

impl GaussianPhase {
    /// `v(q) · e^{−γ|p − p₀|²}` for a profile `v`.
    pub fn new(profile: QProfile, gamma: f64, p0: Vec<f64>) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::Domain(format!("p-decay must be positive, got {gamma}")));
        }
        let n = profile.dim();
        let beta = 1.0 / (4.0 * gamma);
        let norm = (PI / beta).powf(n as f64 / 2.0);
        let kernel = GaussianSymbol::new(profile.scaled(1.0 / norm), beta, vec![0.0; n], p0.iter().map(|v| -v).collect())?;
        Ok(Self { kernel: Arc::new(kernel) })
    }

    pub fn kernel(&self) -> &GaussianSymbol {
        &self.kernel
    }

    fn p_part(&self, p: &[f64]) -> (C64, [C64; MAX_DIM]) {
        let k = &self.kernel;
        let n = k.dim();
        let mut r2 = 0.0;
        let mut phase = 0.0;
        let mut dlog = [C64::new(0.0, 0.0); MAX_DIM];
        for i in 0..n {
            let s = p[i] + k.k0[i];
            r2 += s * s;
            phase += s * k.x0[i];
            dlog[i] = C64::new(-s / (2.0 * k.beta), k.x0[i]);
        }
        let norm = (PI / k.beta).powf(n as f64 / 2.0);
        (C64::from_polar(norm * (-r2 / (4.0 * k.beta)).exp(), phase), dlog)
    }
}

impl PhaseSymbol for GaussianPhase {
    fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn eval(&self, q: &[f64], p: &[f64]) -> C64 {
        self.p_part(p).0 * self.kernel.profile.value(q)
    }

    fn grad_q(&self, q: &[f64], p: &[f64], out: &mut [C64]) {
        let mut g = [0.0; MAX_DIM];
        self.kernel.profile.gradient(q, &mut g);
        let pp = self.p_part(p).0;
        for i in 0..self.dim() {
            out[i] = pp * g[i];
        }
    }

    fn grad_p(&self, q: &[f64], p: &[f64], out: &mut [C64]) {
        let (pp, dlog) = self.p_part(p);
        let v = pp * self.kernel.profile.value(q);
        for i in 0..self.dim() {
            out[i] = v * dlog[i];
        }
    }

    fn kernel_form(&self) -> KernelForm {
        KernelForm::Analytic(self.kernel.clone())
    }
}

/// `f(q, p) = v(q)`.
#[derive(Clone, Debug)]
pub struct Multiplication {
    profile: QProfile,
}

impl Multiplication {
    pub fn new(profile: QProfile) -> Self {
        Self { profile }
    }

    pub fn profile(&self) -> &QProfile {
        &self.profile
    }
}

impl PhaseSymbol for Multiplication {
    fn dim(&self) -> usize {
        self.profile.dim()
    }

    fn eval(&self, q: &[f64], _p: &[f64]) -> C64 {
        C64::new(self.profile.value(q), 0.0)
    }

    fn grad_q(&self, q: &[f64], _p: &[f64], out: &mut [C64]) {
        let mut g = [0.0; MAX_DIM];
        self.profile.gradient(q, &mut g);
        for i in 0..self.dim() {
            out[i] = C64::new(g[i], 0.0);
        }
    }

    fn grad_p(&self, _q: &[f64], _p: &[f64], out: &mut [C64]) {
        out[..self.dim()].fill(C64::new(0.0, 0.0));
    }

    fn kernel_form(&self) -> KernelForm {
        KernelForm::Multiplication(self.profile.clone())
    }
}

/// `a(q) · w · [x = 0]`: a grid delta in `x` of weight `w`, the unit of convolution when `w = Δ^{−N}`.
#[derive(Clone, Debug)]
pub struct DiscreteDelta {
    profile: QProfile,
    weight: f64,
}

impl DiscreteDelta {
    pub fn new(profile: QProfile, weight: f64) -> Self {
        Self { profile, weight }
    }

    /// Weight `Δ^{−N}` of the given grid.
    pub fn on_grid(profile: QProfile, grid: &Grid) -> Self {
        Self { profile, weight: 1.0 / grid.cell_volume() }
    }
}

impl KernelSymbol for DiscreteDelta {
    fn dim(&self) -> usize {
        self.profile.dim()
    }

    fn eval(&self, q: &[f64], x: &[f64]) -> C64 {
        if x.iter().all(|&v| v == 0.0) {
            C64::new(self.weight * self.profile.value(q), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    }

    fn grad_q(&self, q: &[f64], x: &[f64], out: &mut [C64]) -> Result<()> {
        let n = self.dim();
        if x.iter().all(|&v| v == 0.0) {
            let mut g = [0.0; MAX_DIM];
            self.profile.gradient(q, &mut g);
            for i in 0..n {
                out[i] = C64::new(self.weight * g[i], 0.0);
            }
        } else {
            out[..n].fill(C64::new(0.0, 0.0));
        }
        Ok(())
    }

    fn x_envelope(&self, x: &[f64]) -> f64 {
        if x.iter().all(|&v| v == 0.0) {
            self.weight * self.profile.sup_bound()
        } else {
            0.0
        }
    }

    fn is_q_independent(&self) -> bool {
        self.profile.is_constant()
    }
}

/// `P(q, p) · e^{−α|q−q₀|² − γ|p−p₀|²}` with `P` a polynomial in the `2N` phase-space variables.
#[derive(Clone, Debug)]
pub struct PolyGaussPhase {
    dim: usize,
    poly: Polynomial,
    alpha: f64,
    q0: Vec<f64>,
    gamma: f64,
    p0: Vec<f64>,
}

impl PolyGaussPhase {
    pub fn new(poly: Polynomial, alpha: f64, q0: Vec<f64>, gamma: f64, p0: Vec<f64>) -> Result<Self> {
        let dim = q0.len();
        if poly.dim() != 2 * dim || p0.len() != dim {
            return Err(Error::DimensionMismatch { expected: 2 * dim, got: poly.dim() });
        }
        if !(alpha >= 0.0) || !(gamma >= 0.0) {
            return Err(Error::Domain("Gaussian decay rates must be non-negative".into()));
        }
        Ok(Self { dim, poly, alpha, q0, gamma, p0 })
    }

    fn parts(&self, q: &[f64], p: &[f64]) -> ([f64; 2 * MAX_DIM], f64) {
        let n = self.dim;
        let mut z = [0.0; 2 * MAX_DIM];
        let mut e = 0.0;
        for i in 0..n {
            z[i] = q[i];
            z[n + i] = p[i];
            e += self.alpha * (q[i] - self.q0[i]).powi(2) + self.gamma * (p[i] - self.p0[i]).powi(2);
        }
        (z, (-e).exp())
    }

    fn gradient(&self, q: &[f64], p: &[f64]) -> [f64; 2 * MAX_DIM] {
        let n = self.dim;
        let (z, g) = self.parts(q, p);
        let value = self.poly.eval(&z[..2 * n]);
        let mut d = [0.0; 2 * MAX_DIM];
        self.poly.gradient(&z[..2 * n], &mut d);
        for i in 0..n {
            d[i] = (d[i] - 2.0 * self.alpha * (q[i] - self.q0[i]) * value) * g;
            d[n + i] = (d[n + i] - 2.0 * self.gamma * (p[i] - self.p0[i]) * value) * g;
        }
        d
    }
}

impl PhaseSymbol for PolyGaussPhase {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, q: &[f64], p: &[f64]) -> C64 {
        let (z, g) = self.parts(q, p);
        C64::new(self.poly.eval(&z[..2 * self.dim]) * g, 0.0)
    }

    fn grad_q(&self, q: &[f64], p: &[f64], out: &mut [C64]) {
        let d = self.gradient(q, p);
        for i in 0..self.dim {
            out[i] = C64::new(d[i], 0.0);
        }
    }

    fn grad_p(&self, q: &[f64], p: &[f64], out: &mut [C64]) {
        let d = self.gradient(q, p);
        for i in 0..self.dim {
            out[i] = C64::new(d[self.dim + i], 0.0);
        }
    }
}

/// Pointwise product `f · g` of two phase-space symbols.
pub struct PhaseProduct<'a> {
    pub left: &'a dyn PhaseSymbol,
    pub right: &'a dyn PhaseSymbol,
}

impl PhaseSymbol for PhaseProduct<'_> {
    fn dim(&self) -> usize {
        self.left.dim()
    }

    fn eval(&self, q: &[f64], p: &[f64]) -> C64 {
        self.left.eval(q, p) * self.right.eval(q, p)
    }

    fn grad_q(&self, q: &[f64], p: &[f64], out: &mut [C64]) {
        let (mut a, mut b) = ([C64::new(0.0, 0.0); MAX_DIM], [C64::new(0.0, 0.0); MAX_DIM]);
        self.left.grad_q(q, p, &mut a);
        self.right.grad_q(q, p, &mut b);
        let (fl, fr) = (self.left.eval(q, p), self.right.eval(q, p));
        for i in 0..self.dim() {
            out[i] = a[i] * fr + fl * b[i];
        }
    }

    fn grad_p(&self, q: &[f64], p: &[f64], out: &mut [C64]) {
        let (mut a, mut b) = ([C64::new(0.0, 0.0); MAX_DIM], [C64::new(0.0, 0.0); MAX_DIM]);
        self.left.grad_p(q, p, &mut a);
        self.right.grad_p(q, p, &mut b);
        let (fl, fr) = (self.left.eval(q, p), self.right.eval(q, p));
        for i in 0..self.dim() {
            out[i] = a[i] * fr + fl * b[i];
        }
    }
}

/// Product grid for symbols: a `q`-grid for the first variable and an `x`-grid
/// for the second; phase-space samples use the dual of the `x`-grid for `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolGrid {
    pub q: Grid,
    pub x: Grid,
}

impl SymbolGrid {
    pub fn new(q: Grid, x: Grid) -> Result<Self> {
        if q.dim() != x.dim() {
            return Err(Error::DimensionMismatch { expected: q.dim(), got: x.dim() });
        }
        Ok(Self { q, x })
    }

    /// The same grid for both variables.
    pub fn square(grid: Grid) -> Self {
        Self { q: grid.clone(), x: grid }
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    pub fn len(&self) -> usize {
        self.q.len() * self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Samples `φ(q_i; x_j)` stored at `i * x.len() + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSamples {
    grid: SymbolGrid,
    values: Vec<C64>,
}

/// Samples `f(q_i, p_j)` on the dual of the `x`-grid, stored at `i * x.len() + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSamples {
    grid: SymbolGrid,
    values: Vec<C64>,
}

macro_rules! sample_common {
    ($t:ty) => {
        impl $t {
            pub fn from_values(grid: SymbolGrid, values: Vec<C64>) -> Result<Self> {
                if values.len() != grid.len() {
                    return Err(Error::GridMismatch(format!(
                        "{} values for a grid of {} nodes",
                        values.len(),
                        grid.len()
                    )));
                }
                Ok(Self { grid, values })
            }

            pub fn zeros(grid: SymbolGrid) -> Self {
                let len = grid.len();
                Self { grid, values: vec![C64::new(0.0, 0.0); len] }
            }

            pub fn grid(&self) -> &SymbolGrid {
                &self.grid
            }

            pub fn values(&self) -> &[C64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [C64] {
                &mut self.values
            }

            pub fn get(&self, iq: usize, ix: usize) -> C64 {
                self.values[iq * self.grid.x.len() + ix]
            }

            pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
                Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
            }

            pub fn scaled(&self, c: C64) -> Self {
                self.map(|v| v * c)
            }

            fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
                if self.grid != other.grid {
                    return Err(Error::GridMismatch("samples live on different grids".into()));
                }
                Ok(Self {
                    grid: self.grid.clone(),
                    values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
                })
            }

            pub fn add(&self, other: &Self) -> Result<Self> {
                self.zip_with(other, |a, b| a + b)
            }

            pub fn sub(&self, other: &Self) -> Result<Self> {
                self.zip_with(other, |a, b| a - b)
            }

            pub fn real_part(&self) -> Self {
                self.map(|v| C64::new(v.re, 0.0))
            }

            pub fn imag_part(&self) -> Self {
                self.map(|v| C64::new(v.im, 0.0))
            }

            pub fn max_abs(&self) -> f64 {
                self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
            }
        }
    };
}

sample_common!(KernelSamples);
sample_common!(PhaseSamples);

impl KernelSamples {
    /// `‖φ‖₁ = Δ^N Σ_x max_q |φ(q; x)|`.
    pub fn norm_l1a(&self) -> f64 {
        norm_l1a(self)
    }
}

/// `Δ^N Σ_x max_q |φ(q; x)|`.
pub fn norm_l1a(samples: &KernelSamples) -> f64 {
    let nx = samples.grid.x.len();
    let mut col_max = vec![0.0f64; nx];
    for row in samples.values.chunks(nx) {
        for (m, v) in col_max.iter_mut().zip(row) {
            *m = m.max(v.norm());
        }
    }
    samples.grid.x.cell_volume() * col_max.iter().sum::<f64>()
}

/// `max |f|` over the phase-space grid.
pub fn sup_norm(samples: &PhaseSamples) -> f64 {
    samples.max_abs()
}

/// Samples a kernel symbol on every node of `grid`.
pub fn sample_kernel(symbol: &dyn KernelSymbol, grid: &SymbolGrid) -> Result<KernelSamples> {
    if symbol.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: symbol.dim() });
    }
    let n = grid.dim();
    let xs = grid.x.points();
    let nx = grid.x.len();
    let mut values = vec![C64::new(0.0, 0.0); grid.len()];
    values.par_chunks_mut(nx).enumerate().for_each(|(iq, row)| {
        let mut q = [0.0; MAX_DIM];
        grid.q.point(iq, &mut q);
        for (ix, v) in row.iter_mut().enumerate() {
            *v = symbol.eval(&q[..n], &xs[ix * n..(ix + 1) * n]);
        }
    });
    Ok(KernelSamples { grid: grid.clone(), values })
}

/// Samples a phase-space symbol on the `q`-grid times the dual of the `x`-grid.
pub fn sample_phase(symbol: &dyn PhaseSymbol, grid: &SymbolGrid) -> Result<PhaseSamples> {
    if symbol.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: symbol.dim() });
    }
    let n = grid.dim();
    let ps = grid.x.dual_points();
    let np = grid.x.len();
    let mut values = vec![C64::new(0.0, 0.0); grid.len()];
    values.par_chunks_mut(np).enumerate().for_each(|(iq, row)| {
        let mut q = [0.0; MAX_DIM];
        grid.q.point(iq, &mut q);
        for (ip, v) in row.iter_mut().enumerate() {
            *v = symbol.eval(&q[..n], &ps[ip * n..(ip + 1) * n]);
        }
    });
    Ok(PhaseSamples { grid: grid.clone(), values })
}

/// In-place multidimensional FFT of one slice, axis by axis.
fn fft_slice(grid: &Grid, data: &mut [C64], inverse: bool, planner: &mut FftPlanner<f64>) {
    let n = grid.points_per_axis();
    let dim = grid.dim();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut line = vec![C64::new(0.0, 0.0); n];
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (m, v) in line.iter_mut().enumerate() {
                    *v = data[base + m * stride];
                }
                fft.process(&mut line);
                for (m, v) in line.iter().enumerate() {
                    data[base + m * stride] = *v;
                }
            }
        }
    }
}

/// `Π_i (−1)^{m_i + shift}` over the axes of a flat index.
fn checkerboard(grid: &Grid, flat: usize, shift: usize) -> f64 {
    let mut idx = [0usize; MAX_DIM];
    grid.multi_index(flat, &mut idx);
    let parity: usize = idx[..grid.dim()].iter().map(|&m| m + shift).sum();
    if parity % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn transform_rows(grid: &SymbolGrid, input: &[C64], inverse: bool) -> Vec<C64> {
    let xg = &grid.x;
    let nx = xg.len();
    let half = xg.points_per_axis() / 2;
    let (pre_shift, post_shift, scale) = if inverse {
        (0, half, xg.cell_volume())
    } else {
        (half, 0, xg.dual_cell_volume() / (2.0 * PI).powi(xg.dim() as i32))
    };
    let pre: Vec<f64> = (0..nx).map(|j| checkerboard(xg, j, pre_shift)).collect();
    let post: Vec<f64> = (0..nx).map(|j| checkerboard(xg, j, post_shift) * scale).collect();
    let mut out = input.to_vec();
    out.par_chunks_mut(nx).for_each_init(FftPlanner::new, |planner, row| {
        for (v, s) in row.iter_mut().zip(&pre) {
            *v *= *s;
        }
        fft_slice(xg, row, inverse, planner);
        for (v, s) in row.iter_mut().zip(&post) {
            *v *= *s;
        }
    });
    out
}

/// `𝔽` in the second variable, per `q`-slice.
pub fn partial_fourier(samples: &PhaseSamples, target: &SymbolGrid) -> Result<KernelSamples> {
    if &samples.grid != target {
        return Err(Error::GridMismatch("phase samples do not live on the dual of the target grid".into()));
    }
    Ok(KernelSamples { grid: target.clone(), values: transform_rows(target, &samples.values, false) })
}

/// `𝔽⁻¹` in the second variable, per `q`-slice.
pub fn inverse_partial_fourier(samples: &KernelSamples, target: &SymbolGrid) -> Result<PhaseSamples> {
    if &samples.grid != target {
        return Err(Error::GridMismatch("kernel samples do not live on the target grid".into()));
    }
    Ok(PhaseSamples { grid: target.clone(), values: transform_rows(target, &samples.values, true) })
}

/// `max |φ(q; x)| (1 + |x|)^{N+1}` over the grid, the decay constant of the sampled symbol.
pub fn decay_constant(samples: &KernelSamples) -> f64 {
    let g = &samples.grid.x;
    let n = g.dim();
    let nx = g.len();
    let mut x = [0.0; MAX_DIM];
    let mut worst: f64 = 0.0;
    for ix in 0..nx {
        g.point(ix, &mut x);
        let r = x[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        let w = (1.0 + r).powi(n as i32 + 1);
        for iq in 0..samples.grid.q.len() {
            worst = worst.max(samples.get(iq, ix).norm() * w);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    struct Separable1d {
        f: fn(f64, f64) -> C64,
    }

    impl KernelSymbol for Separable1d {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, q: &[f64], x: &[f64]) -> C64 {
            (self.f)(q[0], x[0])
        }
    }

    struct PhaseFn1d {
        f: fn(f64, f64) -> C64,
    }

    impl PhaseSymbol for PhaseFn1d {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, q: &[f64], p: &[f64]) -> C64 {
            (self.f)(q[0], p[0])
        }
        fn grad_q(&self, _: &[f64], _: &[f64], _: &mut [C64]) {}
        fn grad_p(&self, _: &[f64], _: &[f64], _: &mut [C64]) {}
    }

    #[test]
    fn grid_basics() {
        let g = Grid::new(2, 8.0, 64).unwrap();
        assert_eq!(g.spacing() * 64.0, 16.0);
        assert_eq!(g.len(), 4096);
        let mut p = [0.0; 2];
        g.point(65, &mut p);
        assert_eq!(p, [-8.0 + 0.25, -8.0 + 0.25]);
        assert_eq!(g.node_index(&p, 1e-9), Some(65));
        assert_abs_diff_eq!(g.dual_spacing() * g.spacing() * 64.0, 2.0 * PI, epsilon = 1e-12);
        assert!(Grid::new(2, 8.0, 63).is_err());
        assert!(Grid::new(2, 0.0, 64).is_err());
    }

    #[test]
    fn fourier_gaussian_pair_and_round_trip() {
        let grid = SymbolGrid::new(Grid::new(1, 4.0, 8).unwrap(), Grid::new(1, 12.0, 128).unwrap()).unwrap();
        let f = PhaseFn1d { f: |q, p| C64::new((-(q * q)).exp() * (-p * p / 2.0).exp(), 0.0) };
        let samples = sample_phase(&f, &grid).unwrap();
        let kernel = partial_fourier(&samples, &grid).unwrap();
        let mut worst: f64 = 0.0;
        for iq in 0..grid.q.len() {
            let q = grid.q.coordinate(iq);
            for ix in 0..grid.x.len() {
                let x = grid.x.coordinate(ix);
                // (2π)^{-1} ∫ e^{-ixk} e^{-k²/2} dk = e^{-x²/2} / √(2π)
                let exact = (-(q * q)).exp() * (-x * x / 2.0).exp() / (2.0 * PI).sqrt();
                worst = worst.max((kernel.get(iq, ix) - exact).norm());
            }
        }
        assert!(worst < 1e-12, "{worst}");
        let back = inverse_partial_fourier(&kernel, &grid).unwrap();
        let err = back.sub(&samples).unwrap().max_abs();
        assert!(err < 1e-10, "{err}");

        let zero = PhaseSamples::zeros(grid.clone());
        assert_eq!(partial_fourier(&zero, &grid).unwrap().max_abs(), 0.0);
        let other = SymbolGrid::square(Grid::new(1, 4.0, 8).unwrap());
        assert!(partial_fourier(&samples, &other).is_err());
    }

    #[test]
    fn gaussian_symbol_round_trip_2d() {
        let grid = SymbolGrid::new(Grid::new(2, 3.0, 4).unwrap(), Grid::new(2, 8.0, 64).unwrap()).unwrap();
        let g = GaussianSymbol::new(
            QProfile::gaussian(1.3, 0.4, vec![0.2, -0.1]).unwrap(),
            0.5,
            vec![0.3, 0.0],
            vec![0.0, 0.5],
        )
        .unwrap();
        let k = sample_kernel(&g, &grid).unwrap();
        let f = sample_phase(&g.phase_form(), &grid).unwrap();
        let transformed = partial_fourier(&f, &grid).unwrap();
        assert!(transformed.sub(&k).unwrap().max_abs() < 1e-10);
        let back = inverse_partial_fourier(&k, &grid).unwrap();
        assert!(back.sub(&f).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn norm_l1a_examples() {
        let grid = SymbolGrid::new(Grid::new(1, 4.0, 16).unwrap(), Grid::new(1, 8.0, 256).unwrap()).unwrap();
        let phi = Separable1d { f: |q, x| C64::new((-(q * q)).exp() * (-x.abs()).exp(), 0.0) };
        let s = sample_kernel(&phi, &grid).unwrap();
        assert!((s.norm_l1a() - 2.0 * (1.0 - (-8.0f64).exp())).abs() < 1e-3);
        assert_eq!(KernelSamples::zeros(grid.clone()).norm_l1a(), 0.0);
        let c = C64::new(0.0, -2.0);
        assert_eq!(s.scaled(c).norm_l1a(), 2.0 * s.norm_l1a());
    }

    #[test]
    fn sup_norm_examples() {
        let grid = SymbolGrid::square(Grid::new(2, 4.0, 16).unwrap());
        let g = PolyGaussPhase::new(Polynomial::constant(4, 1.0), 1.0, vec![0.0; 2], 1.0, vec![0.0; 2]).unwrap();
        let s = sample_phase(&g, &grid).unwrap();
        assert_eq!(sup_norm(&s), 1.0);
        assert_eq!(sup_norm(&PhaseSamples::zeros(grid.clone())), 0.0);
        assert_eq!(sup_norm(&s.scaled(C64::new(-3.0, 0.0))), 3.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let profile = QProfile::new(
            Polynomial::new(2, vec![(1.0, vec![0, 0]), (0.5, vec![1, 0]), (-0.2, vec![1, 1])]).unwrap(),
            0.6,
            vec![0.1, 0.3],
        )
        .unwrap();
        let g = GaussianSymbol::new(profile, 0.7, vec![0.2, -0.4], vec![1.0, 0.3]).unwrap();
        let h = 1e-5;
        let (q, x) = ([0.3, -0.8], [0.5, 1.1]);
        let mut grad = [C64::new(0.0, 0.0); 2];
        g.grad_q(&q, &x, &mut grad).unwrap();
        for i in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (g.eval(&qp, &x) - g.eval(&qm, &x)) / (2.0 * h);
            assert!((fd - grad[i]).norm() < 1e-8);
        }
        let f = g.phase_form();
        let p = [0.4, -0.9];
        let (mut gq, mut gp) = ([C64::new(0.0, 0.0); 2], [C64::new(0.0, 0.0); 2]);
        f.grad_q(&q, &p, &mut gq);
        f.grad_p(&q, &p, &mut gp);
        for i in 0..2 {
            let mut a = q;
            let mut b = q;
            a[i] += h;
            b[i] -= h;
            assert!(((f.eval(&a, &p) - f.eval(&b, &p)) / (2.0 * h) - gq[i]).norm() < 1e-8);
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            assert!(((f.eval(&q, &a) - f.eval(&q, &b)) / (2.0 * h) - gp[i]).norm() < 1e-8);
        }
        // envelope bounds every sample
        let grid = SymbolGrid::square(Grid::new(2, 6.0, 24).unwrap());
        let s = sample_kernel(&g, &grid).unwrap();
        let mut x = [0.0; 2];
        for ix in 0..grid.x.len() {
            grid.x.point(ix, &mut x);
            let env = g.x_envelope(&x);
            for iq in 0..grid.q.len() {
                assert!(s.get(iq, ix).norm() <= env * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn decay_constant_is_finite_for_gaussians() {
        let grid = SymbolGrid::square(Grid::new(2, 8.0, 32).unwrap());
        let g = GaussianSymbol::real_even(1.0, 0.5, vec![0.0; 2], 0.5).unwrap();
        let c = decay_constant(&sample_kernel(&g, &grid).unwrap());
        assert!(c.is_finite() && c >= 1.0);
    }
}
