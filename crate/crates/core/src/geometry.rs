//! Magnetic fields, vector potentials, gauge functions, and the line and
//! surface integrals built from them.
//!
//! Triangles are parametrised as `a + t(b−a) + s(c−b)` with `0 ≤ s ≤ t ≤ 1`;
//! the vertex order fixes the orientation everywhere (fluxes, cocycles and
//! product phases).

use std::fmt;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussLegendre;

use crate::{Error, Result, C64, MAX_DIM};

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`, sorted by node.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_legendre(order: usize) -> Result<Self> {
        let order = NonZeroUsize::new(order)
            .ok_or_else(|| Error::Domain("quadrature order must be positive".into()))?;
        let rule = GaussLegendre::new(order);
        let mut pairs: Vec<(f64, f64)> = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫₀¹ f(t) dt`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }

    /// `∫₀¹ f(t) dt` for complex integrands.
    pub fn integrate_complex(&self, mut f: impl FnMut(f64) -> C64) -> C64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| f(t) * w)
            .sum()
    }

    /// `∫₀¹dt ∫₀ᵗds f(t, s)` through the substitution `s = t·u`.
    pub fn integrate_triangle(&self, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        let mut total = 0.0;
        for (&t, &wt) in self.nodes.iter().zip(&self.weights) {
            let mut inner = 0.0;
            for (&u, &wu) in self.nodes.iter().zip(&self.weights) {
                inner += wu * f(t, t * u);
            }
            total += wt * t * inner;
        }
        total
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_legendre(16).expect("order 16 is valid")
    }
}

type MatrixFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldFamily {
    Constant,
    GaussianBump2d,
    Custom,
}

impl fmt::Display for FieldFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldFamily::Constant => "constant",
            FieldFamily::GaussianBump2d => "gaussian-bump-2d",
            FieldFamily::Custom => "custom",
        })
    }
}

#[derive(Clone)]
enum FieldKind {
    Constant(Vec<f64>),
    Bump { amplitude: f64, center: [f64; 2], width: f64 },
    Custom(MatrixFn),
}

/// Antisymmetric matrix-valued field `q ↦ B_jk(q)`.
#[derive(Clone)]
pub struct MagneticField {
    dim: usize,
    kind: FieldKind,
}

impl fmt::Debug for MagneticField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("MagneticField");
        s.field("dim", &self.dim).field("family", &self.family());
        match &self.kind {
            FieldKind::Constant(m) => s.field("matrix", m),
            FieldKind::Bump { amplitude, center, width } => s
                .field("amplitude", amplitude)
                .field("center", center)
                .field("width", width),
            FieldKind::Custom(_) => s.field("components", &"<fn>"),
        };
        s.finish()
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if !(2..=MAX_DIM).contains(&dim) {
        return Err(Error::Domain(format!(
            "configuration dimension must lie in 2..={MAX_DIM}, got {dim}"
        )));
    }
    Ok(())
}

impl MagneticField {
    /// Constant field from a row-major `dim × dim` antisymmetric matrix.
    pub fn constant(dim: usize, matrix: &[f64]) -> Result<Self> {
        check_dim(dim)?;
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: matrix.len() });
        }
        for j in 0..dim {
            for k in 0..dim {
                if matrix[j * dim + k] != -matrix[k * dim + j] {
                    return Err(Error::Domain(format!(
                        "field matrix is not antisymmetric at ({j}, {k})"
                    )));
                }
            }
        }
        Ok(Self { dim, kind: FieldKind::Constant(matrix.to_vec()) })
    }

    /// Constant planar field with `B_12 = b12`.
    pub fn constant_2d(b12: f64) -> Self {
        Self { dim: 2, kind: FieldKind::Constant(vec![0.0, b12, -b12, 0.0]) }
    }

    pub fn zero(dim: usize) -> Result<Self> {
        Self::constant(dim, &vec![0.0; dim * dim])
    }

    /// Planar field `B_12(q) = amplitude · exp(−|q − center|² / width²)`.
    pub fn gaussian_bump_2d(amplitude: f64, center: [f64; 2], width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::Domain(format!("bump width must be positive, got {width}")));
        }
        Ok(Self { dim: 2, kind: FieldKind::Bump { amplitude, center, width } })
    }

    /// User-supplied field; `components(q, out)` fills the row-major matrix.
    ///
    /// Antisymmetry is checked at every probe point, and for `dim ≥ 3` so is
    /// closedness (`Σ_cyclic ∂_i B_jk ≈ 0`) with central differences of step
    /// `step`, against `tolerance`.
    pub fn custom<F>(dim: usize, components: F, probes: &[Vec<f64>], step: f64, tolerance: f64) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        check_dim(dim)?;
        let field = Self { dim, kind: FieldKind::Custom(Arc::new(components)) };
        let mut m = [0.0; MAX_DIM * MAX_DIM];
        for q in probes {
            if q.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: q.len() });
            }
            field.matrix_at(q, &mut m);
            for j in 0..dim {
                for k in 0..dim {
                    let defect = (m[j * dim + k] + m[k * dim + j]).abs();
                    if defect > tolerance {
                        return Err(Error::Domain(format!(
                            "custom field is not antisymmetric at {q:?}: defect {defect:e}"
                        )));
                    }
                }
            }
        }
        if dim >= 3 {
            let defect = closedness_residual(&field, probes, step);
            if defect > tolerance {
                return Err(Error::Domain(format!(
                    "custom field is not closed: max cyclic derivative sum {defect:e}"
                )));
            }
        }
        Ok(field)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> FieldFamily {
        match self.kind {
            FieldKind::Constant(_) => FieldFamily::Constant,
            FieldKind::Bump { .. } => FieldFamily::GaussianBump2d,
            FieldKind::Custom(_) => FieldFamily::Custom,
        }
    }

    /// The matrix of a constant field.
    pub fn as_constant(&self) -> Option<&[f64]> {
        match &self.kind {
            FieldKind::Constant(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.kind, FieldKind::Constant(m) if m.iter().all(|&v| v == 0.0))
    }

    /// Fills `out[j * dim + k] = B_jk(q)`.
    pub fn matrix_at(&self, q: &[f64], out: &mut [f64]) {
        let n = self.dim;
        match &self.kind {
            FieldKind::Constant(m) => out[..n * n].copy_from_slice(m),
            FieldKind::Bump { .. } => {
                let b = self.bump_value(q);
                out[..4].copy_from_slice(&[0.0, b, -b, 0.0]);
            }
            FieldKind::Custom(f) => f(q, &mut out[..n * n]),
        }
    }

    pub fn component(&self, q: &[f64], j: usize, k: usize) -> f64 {
        let mut m = [0.0; MAX_DIM * MAX_DIM];
        self.matrix_at(q, &mut m);
        m[j * self.dim + k]
    }

    fn bump_value(&self, q: &[f64]) -> f64 {
        match &self.kind {
            FieldKind::Bump { amplitude, center, width } => {
                let d0 = q[0] - center[0];
                let d1 = q[1] - center[1];
                amplitude * (-(d0 * d0 + d1 * d1) / (width * width)).exp()
            }
            _ => unreachable!(),
        }
    }

    /// `Σ_jk B_jk(q) u_j v_k`.
    pub fn contract(&self, q: &[f64], u: &[f64], v: &[f64]) -> f64 {
        match &self.kind {
            FieldKind::Bump { .. } => self.bump_value(q) * (u[0] * v[1] - u[1] * v[0]),
            FieldKind::Constant(m) => contract_matrix(m, self.dim, u, v),
            FieldKind::Custom(f) => {
                let mut m = [0.0; MAX_DIM * MAX_DIM];
                f(q, &mut m[..self.dim * self.dim]);
                contract_matrix(&m, self.dim, u, v)
            }
        }
    }
}

pub(crate) fn contract_matrix(m: &[f64], n: usize, u: &[f64], v: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..n {
        let mut row = 0.0;
        for k in 0..n {
            row += m[j * n + k] * v[k];
        }
        total += u[j] * row;
    }
    total
}

/// Max over probes and index triples `i < j < k` of `|∂_i B_jk + ∂_j B_ki + ∂_k B_ij|`.
pub fn closedness_residual(field: &MagneticField, probes: &[Vec<f64>], step: f64) -> f64 {
    let n = field.dim();
    let mut worst: f64 = 0.0;
    let mut plus = [0.0; MAX_DIM * MAX_DIM];
    let mut minus = [0.0; MAX_DIM * MAX_DIM];
    for q in probes {
        // derivative[i][jk]
        let mut deriv = vec![0.0; n * n * n];
        let mut p = q.clone();
        for i in 0..n {
            p[i] = q[i] + step;
            field.matrix_at(&p, &mut plus);
            p[i] = q[i] - step;
            field.matrix_at(&p, &mut minus);
            p[i] = q[i];
            for jk in 0..n * n {
                deriv[i * n * n + jk] = (plus[jk] - minus[jk]) / (2.0 * step);
            }
        }
        let d = |i: usize, j: usize, k: usize| deriv[i * n * n + j * n + k];
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    worst = worst.max((d(i, j, k) + d(j, k, i) + d(k, i, j)).abs());
                }
            }
        }
    }
    worst
}

/// `∫₀¹dt∫₀ᵗds Σ_jk B_jk(base + t·u + s·v) cu_j cv_k`.
fn simplex_integral(
    field: &MagneticField,
    base: &[f64],
    u: &[f64],
    v: &[f64],
    cu: &[f64],
    cv: &[f64],
    rule: &QuadratureRule,
) -> f64 {
    let n = field.dim();
    if let Some(m) = field.as_constant() {
        return 0.5 * contract_matrix(m, n, cu, cv);
    }
    let mut point = [0.0; MAX_DIM];
    rule.integrate_triangle(|t, s| {
        for i in 0..n {
            point[i] = base[i] + t * u[i] + s * v[i];
        }
        field.contract(&point[..n], cu, cv)
    })
}

fn check_points(dim: usize, points: &[&[f64]]) -> Result<()> {
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
        }
    }
    Ok(())
}

/// Flux `Γ_B(<a,b,c>)` of the field through the oriented triangle.
pub fn triangle_flux(field: &MagneticField, a: &[f64], b: &[f64], c: &[f64], rule: &QuadratureRule) -> Result<f64> {
    let n = field.dim();
    check_points(n, &[a, b, c])?;
    let mut u = [0.0; MAX_DIM];
    let mut v = [0.0; MAX_DIM];
    for i in 0..n {
        u[i] = b[i] - a[i];
        v[i] = c[i] - b[i];
    }
    Ok(simplex_integral(field, a, &u[..n], &v[..n], &u[..n], &v[..n], rule))
}

/// `Ω_B(q, x, y; ħ)`, the smooth product-phase exponent; `ħ = 0` gives its leading term.
pub fn omega_exponent(field: &MagneticField, hbar: f64, q: &[f64], x: &[f64], y: &[f64], rule: &QuadratureRule) -> Result<f64> {
    let n = field.dim();
    check_points(n, &[q, x, y])?;
    if !(hbar >= 0.0) {
        return Err(Error::Domain(format!("hbar must be non-negative, got {hbar}")));
    }
    let mut base = [0.0; MAX_DIM];
    let mut u = [0.0; MAX_DIM];
    let mut v = [0.0; MAX_DIM];
    let mut xy = [0.0; MAX_DIM];
    for i in 0..n {
        base[i] = q[i] - 0.5 * hbar * x[i];
        u[i] = hbar * y[i];
        xy[i] = x[i] - y[i];
        v[i] = hbar * xy[i];
    }
    Ok(simplex_integral(field, &base[..n], &u[..n], &v[..n], y, &xy[..n], rule))
}

/// The 2-cocycle `exp(−(i/ħ) Γ_B(<q, q+ħx, q+ħx+ħy>))`.
///
/// The flux is evaluated with edges factored out of the integrand, so the
/// phase is `−ħ · ∫∫ B(·)(x, y)` and never divides by `ħ`.
pub fn cocycle(field: &MagneticField, hbar: f64, q: &[f64], x: &[f64], y: &[f64], rule: &QuadratureRule) -> Result<C64> {
    let n = field.dim();
    check_points(n, &[q, x, y])?;
    if !(hbar > 0.0) {
        return Err(Error::Domain(format!("cocycle requires hbar > 0, got {hbar}")));
    }
    let mut u = [0.0; MAX_DIM];
    let mut v = [0.0; MAX_DIM];
    for i in 0..n {
        u[i] = hbar * x[i];
        v[i] = hbar * y[i];
    }
    let reduced = simplex_integral(field, q, &u[..n], &v[..n], x, y, rule);
    Ok(C64::from_polar(1.0, -hbar * reduced))
}

/// `|ω(q;x,y)·ω(q;x+y,z) − ω(q+ħx;y,z)·ω(q;x,y+z)|`.
pub fn check_cocycle_identity(
    field: &MagneticField,
    hbar: f64,
    q: &[f64],
    x: &[f64],
    y: &[f64],
    z: &[f64],
    rule: &QuadratureRule,
) -> Result<f64> {
    let n = field.dim();
    check_points(n, &[q, x, y, z])?;
    let mut xy = [0.0; MAX_DIM];
    let mut yz = [0.0; MAX_DIM];
    let mut shifted = [0.0; MAX_DIM];
    for i in 0..n {
        xy[i] = x[i] + y[i];
        yz[i] = y[i] + z[i];
        shifted[i] = q[i] + hbar * x[i];
    }
    let lhs = cocycle(field, hbar, q, x, y, rule)? * cocycle(field, hbar, q, &xy[..n], z, rule)?;
    let rhs = cocycle(field, hbar, &shifted[..n], y, z, rule)? * cocycle(field, hbar, q, x, &yz[..n], rule)?;
    Ok((lhs - rhs).norm())
}

#[derive(Clone)]
enum GaugeKind {
    Zero,
    Linear(Vec<f64>),
    Gaussian { amplitude: f64, center: Vec<f64>, width: f64 },
    Custom { value: ScalarFn, gradient: MatrixFn },
}

/// Smooth scalar `χ` with its gradient.
#[derive(Clone)]
pub struct GaugeFunction {
    dim: usize,
    kind: GaugeKind,
}

impl fmt::Debug for GaugeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("GaugeFunction(")?;
        f.write_str(&self.describe())?;
        f.write_str(")")
    }
}

impl GaugeFunction {
    pub fn zero(dim: usize) -> Self {
        Self { dim, kind: GaugeKind::Zero }
    }

    /// `χ(q) = c·q`.
    pub fn linear(coefficients: Vec<f64>) -> Self {
        Self { dim: coefficients.len(), kind: GaugeKind::Linear(coefficients) }
    }

    /// `χ(q) = amplitude · exp(−|q − center|² / width²)`.
    pub fn gaussian(amplitude: f64, center: Vec<f64>, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Domain(format!("gauge width must be positive, got {width}")));
        }
        Ok(Self { dim: center.len(), kind: GaugeKind::Gaussian { amplitude, center, width } })
    }

    pub fn custom<V, G>(dim: usize, value: V, gradient: G) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { dim, kind: GaugeKind::Custom { value: Arc::new(value), gradient: Arc::new(gradient) } }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, GaugeKind::Zero)
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            GaugeKind::Zero => "zero".into(),
            GaugeKind::Linear(c) => format!("linear{c:?}"),
            GaugeKind::Gaussian { amplitude, center, width } => {
                format!("gaussian(amplitude={amplitude}, center={center:?}, width={width})")
            }
            GaugeKind::Custom { .. } => "custom".into(),
        }
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        match &self.kind {
            GaugeKind::Zero => 0.0,
            GaugeKind::Linear(c) => c.iter().zip(q).map(|(a, b)| a * b).sum(),
            GaugeKind::Gaussian { amplitude, center, width } => {
                let r2: f64 = q.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                amplitude * (-r2 / (width * width)).exp()
            }
            GaugeKind::Custom { value, .. } => value(q),
        }
    }

    pub fn gradient(&self, q: &[f64], out: &mut [f64]) {
        match &self.kind {
            GaugeKind::Zero => out[..self.dim].fill(0.0),
            GaugeKind::Linear(c) => out[..self.dim].copy_from_slice(c),
            GaugeKind::Gaussian { center, width, .. } => {
                let v = self.value(q);
                for i in 0..self.dim {
                    out[i] = -2.0 * (q[i] - center[i]) / (width * width) * v;
                }
            }
            GaugeKind::Custom { gradient, .. } => gradient(q, &mut out[..self.dim]),
        }
    }

    /// Max over probes of `|∇χ − central differences of χ|`.
    pub fn gradient_residual(&self, probes: &[Vec<f64>], step: f64) -> f64 {
        let mut worst: f64 = 0.0;
        let mut g = [0.0; MAX_DIM];
        for q in probes {
            self.gradient(q, &mut g);
            let mut p = q.clone();
            for i in 0..self.dim {
                p[i] = q[i] + step;
                let fp = self.value(&p);
                p[i] = q[i] - step;
                let fm = self.value(&p);
                p[i] = q[i];
                worst = worst.max((g[i] - (fp - fm) / (2.0 * step)).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Debug)]
pub enum Gauge {
    Transversal,
    Symmetric,
    Transformed(GaugeFunction),
    Custom,
}

impl fmt::Display for Gauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gauge::Transversal => f.write_str("transversal"),
            Gauge::Symmetric => f.write_str("symmetric"),
            Gauge::Transformed(chi) => write!(f, "transformed({})", chi.describe()),
            Gauge::Custom => f.write_str("custom"),
        }
    }
}

#[derive(Clone)]
enum PotentialKind {
    /// `A(q) = M q`, row-major `M`.
    Linear(Vec<f64>),
    Transversal { field: MagneticField, rule: QuadratureRule },
    Shifted { base: Box<VectorPotential>, chi: GaugeFunction },
    Custom(MatrixFn),
}

/// Covector field `A` with `dA = B`, tagged by how it was obtained.
#[derive(Clone)]
pub struct VectorPotential {
    dim: usize,
    gauge: Gauge,
    kind: PotentialKind,
}

impl fmt::Debug for VectorPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorPotential")
            .field("dim", &self.dim)
            .field("gauge", &self.gauge.to_string())
            .finish()
    }
}

impl VectorPotential {
    pub fn zero(dim: usize) -> Self {
        Self { dim, gauge: Gauge::Transversal, kind: PotentialKind::Linear(vec![0.0; dim * dim]) }
    }

    /// `A(q) = M q` for a row-major `dim × dim` matrix.
    pub fn linear(dim: usize, matrix: Vec<f64>, gauge: Gauge) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: matrix.len() });
        }
        Ok(Self { dim, gauge, kind: PotentialKind::Linear(matrix) })
    }

    pub fn custom<F>(dim: usize, components: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { dim, gauge: Gauge::Custom, kind: PotentialKind::Custom(Arc::new(components)) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gauge(&self) -> &Gauge {
        &self.gauge
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.kind, PotentialKind::Linear(m) if m.iter().all(|&v| v == 0.0))
    }

    /// Fills `out[j] = A_j(q)`.
    pub fn eval(&self, q: &[f64], out: &mut [f64]) {
        let n = self.dim;
        match &self.kind {
            PotentialKind::Linear(m) => {
                for j in 0..n {
                    out[j] = (0..n).map(|k| m[j * n + k] * q[k]).sum();
                }
            }
            PotentialKind::Transversal { field, rule } => {
                out[..n].fill(0.0);
                let mut point = [0.0; MAX_DIM];
                let mut b = [0.0; MAX_DIM * MAX_DIM];
                for (&s, &w) in rule.nodes().iter().zip(rule.weights()) {
                    for i in 0..n {
                        point[i] = s * q[i];
                    }
                    field.matrix_at(&point[..n], &mut b);
                    for j in 0..n {
                        let row: f64 = (0..n).map(|k| b[j * n + k] * q[k]).sum();
                        out[j] -= w * s * row;
                    }
                }
            }
            PotentialKind::Shifted { base, chi } => {
                base.eval(q, out);
                let mut g = [0.0; MAX_DIM];
                chi.gradient(q, &mut g);
                for j in 0..n {
                    out[j] += g[j];
                }
            }
            PotentialKind::Custom(f) => f(q, &mut out[..n]),
        }
    }

    fn linear_matrix(&self) -> Option<&[f64]> {
        match &self.kind {
            PotentialKind::Linear(m) => Some(m),
            _ => None,
        }
    }
}

/// `A_j(x) = −Σ_k x_k ∫₀¹ s B_jk(s x) ds`; exact linear form for constant fields.
pub fn transversal_gauge(field: &MagneticField, rule: &QuadratureRule) -> VectorPotential {
    let n = field.dim();
    match field.as_constant() {
        Some(m) => VectorPotential {
            dim: n,
            gauge: Gauge::Transversal,
            kind: PotentialKind::Linear(m.iter().map(|v| -0.5 * v).collect()),
        },
        None => VectorPotential {
            dim: n,
            gauge: Gauge::Transversal,
            kind: PotentialKind::Transversal { field: field.clone(), rule: rule.clone() },
        },
    }
}

/// `A(q) = −½ B q` for a constant field.
pub fn symmetric_gauge(field: &MagneticField) -> Result<VectorPotential> {
    let m = field
        .as_constant()
        .ok_or_else(|| Error::Unsupported("the symmetric gauge needs a constant field".into()))?;
    VectorPotential::linear(field.dim(), m.iter().map(|v| -0.5 * v).collect(), Gauge::Symmetric)
}

/// `A + ∇χ`.
pub fn gauge_transform(potential: &VectorPotential, chi: &GaugeFunction) -> Result<VectorPotential> {
    if chi.dim() != potential.dim() {
        return Err(Error::DimensionMismatch { expected: potential.dim(), got: chi.dim() });
    }
    Ok(VectorPotential {
        dim: potential.dim(),
        gauge: Gauge::Transformed(chi.clone()),
        kind: PotentialKind::Shifted { base: Box::new(potential.clone()), chi: chi.clone() },
    })
}

/// Line integral `Γ_A([x, y])` along the straight segment.
pub fn circulation(potential: &VectorPotential, x: &[f64], y: &[f64], rule: &QuadratureRule) -> f64 {
    let n = potential.dim();
    let mut d = [0.0; MAX_DIM];
    let mut point = [0.0; MAX_DIM];
    let mut a = [0.0; MAX_DIM];
    for i in 0..n {
        d[i] = y[i] - x[i];
    }
    if let Some(m) = potential.linear_matrix() {
        for i in 0..n {
            point[i] = 0.5 * (x[i] + y[i]);
        }
        let mut total = 0.0;
        for j in 0..n {
            let aj: f64 = (0..n).map(|k| m[j * n + k] * point[k]).sum();
            total += aj * d[j];
        }
        return total;
    }
    rule.integrate(|t| {
        for i in 0..n {
            point[i] = x[i] + t * d[i];
        }
        potential.eval(&point[..n], &mut a);
        (0..n).map(|j| a[j] * d[j]).sum()
    })
}

/// Max over probes and `j < k` of `|(∂_j A_k − ∂_k A_j) − B_jk|`, central differences.
pub fn verify_potential(potential: &VectorPotential, field: &MagneticField, probes: &[Vec<f64>], step: f64) -> Result<f64> {
    let n = field.dim();
    if potential.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: potential.dim() });
    }
    if !(step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {step}")));
    }
    let mut worst: f64 = 0.0;
    let mut plus = [0.0; MAX_DIM];
    let mut minus = [0.0; MAX_DIM];
    let mut b = [0.0; MAX_DIM * MAX_DIM];
    for q in probes {
        check_points(n, &[q])?;
        // jac[j][k] = ∂_j A_k
        let mut jac = [0.0; MAX_DIM * MAX_DIM];
        let mut p = q.clone();
        for j in 0..n {
            p[j] = q[j] + step;
            potential.eval(&p, &mut plus);
            p[j] = q[j] - step;
            potential.eval(&p, &mut minus);
            p[j] = q[j];
            for k in 0..n {
                jac[j * n + k] = (plus[k] - minus[k]) / (2.0 * step);
            }
        }
        field.matrix_at(q, &mut b);
        for j in 0..n {
            for k in j + 1..n {
                let curl = jac[j * n + k] - jac[k * n + j];
                worst = worst.max((curl - b[j * n + k]).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadrature_weights_sum_to_one_and_integrate_polynomials() {
        for order in [4, 16, 20] {
            let rule = QuadratureRule::gauss_legendre(order).unwrap();
            assert_abs_diff_eq!(rule.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for deg in 0..2 * order {
                let exact = 1.0 / (deg as f64 + 1.0);
                assert_abs_diff_eq!(rule.integrate(|t| t.powi(deg as i32)), exact, epsilon = 1e-12);
            }
        }
        assert!(QuadratureRule::gauss_legendre(0).is_err());
    }

    #[test]
    fn triangle_rule_integrates_monomials() {
        let rule = QuadratureRule::default();
        // ∫₀¹∫₀ᵗ t^a s^b ds dt = 1 / ((b+1)(a+b+2))
        for a in 0..4 {
            for b in 0..4 {
                let exact = 1.0 / ((b as f64 + 1.0) * (a as f64 + b as f64 + 2.0));
                let got = rule.integrate_triangle(|t, s| t.powi(a) * s.powi(b));
                assert_abs_diff_eq!(got, exact, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn transversal_gauge_examples() {
        let rule = QuadratureRule::default();
        let a = transversal_gauge(&MagneticField::constant_2d(1.0), &rule);
        let mut out = [0.0; 2];
        a.eval(&[2.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 1.0]);

        let zero = transversal_gauge(&MagneticField::zero(2).unwrap(), &rule);
        zero.eval(&[0.3, -1.2], &mut out);
        assert_eq!(out, [0.0, 0.0]);

        let bump = MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.0).unwrap();
        let a = transversal_gauge(&bump, &rule);
        a.eval(&[1.0, 0.0], &mut out);
        assert_abs_diff_eq!(out[1], (1.0 - (-1.0f64).exp()) / 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(out[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn verify_potential_examples() {
        let rule = QuadratureRule::default();
        let probes: Vec<Vec<f64>> = vec![vec![0.1, 0.2], vec![-1.0, 0.7], vec![1.5, -0.4]];
        let b = MagneticField::constant_2d(1.3);
        let a = transversal_gauge(&b, &rule);
        assert!(verify_potential(&a, &b, &probes, 1e-4).unwrap() < 1e-9);

        let z = MagneticField::zero(2).unwrap();
        assert_eq!(verify_potential(&VectorPotential::zero(2), &z, &probes, 1e-4).unwrap(), 0.0);

        let bump = MagneticField::gaussian_bump_2d(1.0, [0.2, -0.1], 1.2).unwrap();
        let a = transversal_gauge(&bump, &QuadratureRule::gauss_legendre(20).unwrap());
        assert!(verify_potential(&a, &bump, &probes, 1e-3).unwrap() < 1e-5);
    }

    #[test]
    fn circulation_examples() {
        let rule = QuadratureRule::default();
        let a = symmetric_gauge(&MagneticField::constant_2d(1.0)).unwrap();
        assert_abs_diff_eq!(circulation(&a, &[1.0, 0.0], &[1.0, 1.0], &rule), 0.5, epsilon = 1e-15);
        assert_eq!(circulation(&a, &[0.4, 0.3], &[0.4, 0.3], &rule), 0.0);
        assert_abs_diff_eq!(circulation(&a, &[0.0, 0.0], &[1.0, 1.0], &rule), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn triangle_flux_examples() {
        let rule = QuadratureRule::default();
        let b = MagneticField::constant_2d(1.0);
        let f = triangle_flux(&b, &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &rule).unwrap();
        assert_abs_diff_eq!(f, 0.5, epsilon = 1e-15);
        let bump = MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.0).unwrap();
        assert_eq!(triangle_flux(&bump, &[0.3, 0.1], &[0.3, 0.1], &[1.0, 2.0], &rule).unwrap(), 0.0);

        let b = MagneticField::constant_2d(0.7);
        let (a0, b0, c0) = ([0.2, -0.3], [1.1, 0.4], [-0.5, 0.9]);
        let base = triangle_flux(&b, &a0, &b0, &c0, &rule).unwrap();
        let lam = 2.5;
        let s = |p: [f64; 2]| [lam * p[0], lam * p[1]];
        let scaled = triangle_flux(&b, &s(a0), &s(b0), &s(c0), &rule).unwrap();
        assert_abs_diff_eq!(scaled, lam * lam * base, epsilon = 1e-12);
    }

    #[test]
    fn cocycle_examples() {
        let rule = QuadratureRule::default();
        let bump = MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.0).unwrap();
        let w = cocycle(&bump, 0.5, &[0.2, 0.1], &[1.0, -0.4], &[0.0, 0.0], &rule).unwrap();
        assert_eq!(w, C64::new(1.0, 0.0));
        let w = cocycle(&MagneticField::zero(2).unwrap(), 0.5, &[0.2, 0.1], &[1.0, -0.4], &[0.3, 0.8], &rule).unwrap();
        assert_eq!(w, C64::new(1.0, 0.0));
        assert!(cocycle(&bump, 0.0, &[0.0; 2], &[0.0; 2], &[0.0; 2], &rule).is_err());
        assert!(cocycle(&bump, -1.0, &[0.0; 2], &[0.0; 2], &[0.0; 2], &rule).is_err());
    }

    #[test]
    fn omega_constant_field_and_zero() {
        let rule = QuadratureRule::default();
        let bbar = 1.7;
        let b = MagneticField::constant_2d(bbar);
        let (x, y) = ([0.4, -1.3], [2.0, 0.5]);
        let expected = -(bbar / 2.0) * (x[0] * y[1] - x[1] * y[0]);
        for hbar in [0.0, 0.3, 1.0] {
            let w = omega_exponent(&b, hbar, &[5.0, -2.0], &x, &y, &rule).unwrap();
            assert_abs_diff_eq!(w, expected, epsilon = 1e-13);
        }
        let z = MagneticField::zero(2).unwrap();
        assert_eq!(omega_exponent(&z, 0.4, &[1.0, 2.0], &x, &y, &rule).unwrap(), 0.0);
    }

    #[test]
    fn gauge_transform_examples() {
        let rule = QuadratureRule::default();
        let zero = VectorPotential::zero(2);
        let chi = GaugeFunction::linear(vec![1.0, 0.0]);
        let shifted = gauge_transform(&zero, &chi).unwrap();
        let mut out = [0.0; 2];
        shifted.eval(&[3.0, -7.0], &mut out);
        assert_eq!(out, [1.0, 0.0]);

        let b = MagneticField::constant_2d(1.0);
        let a = transversal_gauge(&b, &rule);
        let same = gauge_transform(&a, &GaugeFunction::zero(2)).unwrap();
        let mut o2 = [0.0; 2];
        a.eval(&[0.3, 0.9], &mut out);
        same.eval(&[0.3, 0.9], &mut o2);
        assert_eq!(out, o2);

        let probes = vec![vec![0.3, 0.2], vec![-0.8, 1.1]];
        let chi = GaugeFunction::gaussian(0.8, vec![0.1, -0.2], 1.0).unwrap();
        let moved = gauge_transform(&a, &chi).unwrap();
        let r0 = verify_potential(&a, &b, &probes, 1e-5).unwrap();
        let r1 = verify_potential(&moved, &b, &probes, 1e-5).unwrap();
        assert!((r0 - r1).abs() < 1e-9);
        assert!(chi.gradient_residual(&probes, 1e-4) < 1e-7);
    }

    #[test]
    fn custom_fields_are_checked() {
        let probes = vec![vec![0.1, 0.2, 0.3], vec![-0.5, 0.4, 1.0]];
        // B = dA for A = (0, 0, q1 q2): B_13 = q2, B_23 = q1 is closed.
        let closed = |q: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            out[2] = q[1];
            out[6] = -q[1];
            out[5] = q[0];
            out[7] = -q[0];
        };
        assert!(MagneticField::custom(3, closed, &probes, 1e-4, 1e-6).is_ok());
        // B_12 = q3 alone has ∂_3 B_12 = 1.
        let open = |q: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            out[1] = q[2];
            out[3] = -q[2];
        };
        assert!(MagneticField::custom(3, open, &probes, 1e-4, 1e-6).is_err());
        let asym = |_: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            out[1] = 1.0;
        };
        assert!(MagneticField::custom(2, asym, &[vec![0.0, 0.0]], 1e-4, 1e-9).is_err());
        assert!(MagneticField::constant(2, &[0.0, 1.0, 1.0, 0.0]).is_err());
    }
}
