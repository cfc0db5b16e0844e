//! Schrödinger-representation operators on a wavefunction grid.
//!
//! Kernels are assembled as `M[x, y] = ħ^{−N} Δ^N e^{−(i/ħ)Γ_A([x,y])} φ((x+y)/2, (y−x)/ħ)`,
//! so matrix products reproduce operator products and `Op^ħ_A(f) = Rep^ħ_A(𝔽f)`.
//! Magnetic translations shift by lattice vectors with periodic wrap.

use std::io::{self, Read, Write};

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::algebra::{LazyTwisted, ProductContext};
use crate::geometry::{circulation, cocycle, GaugeFunction, MagneticField, QuadratureRule, VectorPotential};
use crate::symbols::{Grid, KernelForm, KernelSymbol, PhaseSymbol, QProfile};
use crate::{Error, Result, C64, MAX_DIM};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Configuration-space grid carrying wavefunctions, with `⟨u, v⟩ = Δ^N Σ conj(u) v`.
#[derive(Clone, Debug, PartialEq)]
pub struct WavefunctionGrid {
    grid: Grid,
}

impl WavefunctionGrid {
    pub fn new(grid: Grid) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn inner_product(&self, u: &[C64], v: &[C64]) -> C64 {
        u.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<C64>() * self.grid.cell_volume()
    }

    pub fn norm(&self, u: &[C64]) -> f64 {
        self.inner_product(u, u).re.sqrt()
    }

    /// Samples `u` at every node.
    pub fn sample(&self, u: impl Fn(&[f64]) -> C64) -> Vec<C64> {
        let n = self.dim();
        let pts = self.grid.points();
        pts.chunks(n).map(&u).collect()
    }
}

/// Dense operator on a wavefunction grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteOperator {
    pub matrix: Array2<C64>,
    pub hbar: f64,
    pub gauge: String,
    pub label: String,
}

impl DiscreteOperator {
    pub fn new(matrix: Array2<C64>, hbar: f64, gauge: impl Into<String>, label: impl Into<String>) -> Self {
        Self { matrix, hbar, gauge: gauge.into(), label: label.into() }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.matrix)
    }

    /// `‖M − M†‖_F / ‖M‖_F` (zero for the zero matrix).
    pub fn adjoint_residual(&self) -> f64 {
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        let m = &self.matrix;
        let mut total = 0.0;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                total += (m[[i, j]] - m[[j, i]].conj()).norm_sqr();
            }
        }
        total.sqrt() / norm
    }

    /// `max |U†U − I|` over entries.
    pub fn unitarity_residual(&self) -> f64 {
        let m = &self.matrix;
        let product = m.t().mapv(|v| v.conj()).dot(m);
        let mut worst: f64 = 0.0;
        for ((i, j), v) in product.indexed_iter() {
            let target = if i == j { C64::new(1.0, 0.0) } else { ZERO };
            worst = worst.max((v - target).norm());
        }
        worst
    }

    pub fn compose(&self, other: &DiscreteOperator) -> DiscreteOperator {
        DiscreteOperator::new(
            self.matrix.dot(&other.matrix),
            self.hbar,
            self.gauge.clone(),
            format!("({})({})", self.label, other.label),
        )
    }
}

pub fn frobenius(m: &Array2<C64>) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Smallest `ħ` at which a kernel of decay length `x_scale` is resolved by the grid:
/// in the row variable the kernel has width `ħ · x_scale`, which must cover one spacing.
pub fn min_admissible_hbar(grid: &WavefunctionGrid, x_scale: f64) -> f64 {
    grid.grid.spacing() / x_scale
}

fn check_hbar(hbar: f64) -> Result<()> {
    if !(hbar > 0.0) || !hbar.is_finite() {
        return Err(Error::Domain(format!("quantization needs hbar > 0, got {hbar}")));
    }
    Ok(())
}

/// `Rep^ħ_A(φ)` as a dense matrix.
pub fn rep_operator(
    phi: &dyn KernelSymbol,
    potential: &VectorPotential,
    hbar: f64,
    grid: &WavefunctionGrid,
    rule: &QuadratureRule,
) -> Result<DiscreteOperator> {
    check_hbar(hbar)?;
    let n = grid.dim();
    if phi.dim() != n || potential.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: phi.dim().max(potential.dim()) });
    }
    if let Some(scale) = phi.x_scale() {
        let min = min_admissible_hbar(grid, scale);
        if hbar < min * (1.0 - 1e-12) {
            return Err(Error::Resolution { hbar, min_hbar: min });
        }
    }
    let pts = grid.grid.points();
    let dimension = grid.len();
    let weight = grid.grid.cell_volume() / hbar.powi(n as i32);
    let mut matrix = Array2::<C64>::zeros((dimension, dimension));
    matrix
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(dimension)
        .enumerate()
        .for_each(|(i, row)| {
            let x = &pts[i * n..(i + 1) * n];
            let mut mid = [0.0; MAX_DIM];
            let mut rel = [0.0; MAX_DIM];
            for (j, entry) in row.iter_mut().enumerate() {
                let y = &pts[j * n..(j + 1) * n];
                for a in 0..n {
                    mid[a] = 0.5 * (x[a] + y[a]);
                    rel[a] = (y[a] - x[a]) / hbar;
                }
                if phi.x_envelope(&rel[..n]) == 0.0 {
                    continue;
                }
                let value = phi.eval(&mid[..n], &rel[..n]);
                if value == ZERO {
                    continue;
                }
                let gamma = circulation(potential, x, y, rule);
                *entry = value * C64::from_polar(weight, -gamma / hbar);
            }
        });
    Ok(DiscreteOperator::new(matrix, hbar, potential.gauge().to_string(), "rep"))
}

/// The multiplication operator `diag(v(x))`.
pub fn multiplication_operator(profile: &QProfile, hbar: f64, grid: &WavefunctionGrid, gauge: &str) -> DiscreteOperator {
    let values = grid.sample(|x| C64::new(profile.value(x), 0.0));
    DiscreteOperator::new(Array2::from_diag(&Array1::from(values)), hbar, gauge, "multiplication")
}

/// `Op^ħ_A(f) = Rep^ħ_A(𝔽f)` for symbols with a closed-form partial Fourier transform.
pub fn op_operator(
    f: &dyn PhaseSymbol,
    potential: &VectorPotential,
    hbar: f64,
    grid: &WavefunctionGrid,
    rule: &QuadratureRule,
) -> Result<DiscreteOperator> {
    check_hbar(hbar)?;
    match f.kernel_form() {
        KernelForm::Analytic(k) => {
            let mut op = rep_operator(k.as_ref(), potential, hbar, grid, rule)?;
            op.label = "op".into();
            Ok(op)
        }
        KernelForm::Multiplication(profile) => {
            Ok(multiplication_operator(&profile, hbar, grid, &potential.gauge().to_string()))
        }
        KernelForm::Unavailable => Err(Error::Unsupported(
            "no closed-form kernel; use op_operator_numeric with a momentum grid".into(),
        )),
    }
}

/// `𝔽f` evaluated by the trapezoid rule over the nodes of a momentum grid.
pub struct NumericKernel<'a> {
    symbol: &'a dyn PhaseSymbol,
    momenta: Vec<f64>,
    weight: f64,
    dim: usize,
}

impl<'a> NumericKernel<'a> {
    pub fn new(symbol: &'a dyn PhaseSymbol, momenta: &Grid) -> Self {
        let dim = momenta.dim();
        let weight = momenta.cell_volume() / (2.0 * std::f64::consts::PI).powi(dim as i32);
        Self { symbol, momenta: momenta.points(), weight, dim }
    }
}

impl KernelSymbol for NumericKernel<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, q: &[f64], x: &[f64]) -> C64 {
        let n = self.dim;
        let total: C64 = self
            .momenta
            .chunks(n)
            .map(|k| {
                let dot: f64 = (0..n).map(|i| x[i] * k[i]).sum();
                self.symbol.eval(q, k) * C64::from_polar(1.0, -dot)
            })
            .sum();
        total * self.weight
    }
}

/// `Op^ħ_A(f)` with `𝔽f` computed numerically on `momenta`.
pub fn op_operator_numeric(
    f: &dyn PhaseSymbol,
    potential: &VectorPotential,
    hbar: f64,
    grid: &WavefunctionGrid,
    rule: &QuadratureRule,
    momenta: &Grid,
) -> Result<DiscreteOperator> {
    let kernel = NumericKernel::new(f, momenta);
    let mut op = rep_operator(&kernel, potential, hbar, grid, rule)?;
    op.label = "op".into();
    Ok(op)
}

/// Per-axis node shift `ħ x / Δ`, which must be an integer.
fn lattice_shift(grid: &WavefunctionGrid, hbar: f64, x: &[f64]) -> Result<[i64; MAX_DIM]> {
    let mut shift = [0i64; MAX_DIM];
    let spacing = grid.grid.spacing();
    for (a, &v) in x.iter().enumerate().take(grid.dim()) {
        let m = hbar * v / spacing;
        let r = m.round();
        if (m - r).abs() > 1e-9 {
            return Err(Error::OffLattice(format!("ħ·x = {} is not a multiple of Δ = {spacing} on axis {a}", hbar * v)));
        }
        shift[a] = r as i64;
    }
    Ok(shift)
}

fn shifted_index(grid: &Grid, row: usize, shift: &[i64]) -> usize {
    let n = grid.points_per_axis() as i64;
    let mut idx = [0usize; MAX_DIM];
    grid.multi_index(row, &mut idx);
    for a in 0..grid.dim() {
        idx[a] = (idx[a] as i64 + shift[a]).rem_euclid(n) as usize;
    }
    grid.flat_index(&idx)
}

/// `(U u)(y) = e^{−(i/ħ)Γ_A([y, y+ħx])} u(y + ħx)`, periodic in the node index.
pub fn magnetic_translation(
    potential: &VectorPotential,
    hbar: f64,
    x: &[f64],
    grid: &WavefunctionGrid,
    rule: &QuadratureRule,
) -> Result<DiscreteOperator> {
    check_hbar(hbar)?;
    let n = grid.dim();
    let shift = lattice_shift(grid, hbar, x)?;
    let dimension = grid.len();
    let mut matrix = Array2::<C64>::zeros((dimension, dimension));
    let mut y = [0.0; MAX_DIM];
    let mut end = [0.0; MAX_DIM];
    for row in 0..dimension {
        grid.grid.point(row, &mut y);
        for a in 0..n {
            end[a] = y[a] + hbar * x[a];
        }
        let gamma = circulation(potential, &y[..n], &end[..n], rule);
        matrix[[row, shifted_index(&grid.grid, row, &shift[..n])]] = C64::from_polar(1.0, -gamma / hbar);
    }
    Ok(DiscreteOperator::new(matrix, hbar, potential.gauge().to_string(), format!("translation{:?}", x)))
}

/// `W(q, p) = e^{−i(Q + ħq/2)·p} U(q)`.
pub fn weyl_system(
    potential: &VectorPotential,
    hbar: f64,
    q: &[f64],
    p: &[f64],
    grid: &WavefunctionGrid,
    rule: &QuadratureRule,
) -> Result<DiscreteOperator> {
    let mut op = magnetic_translation(potential, hbar, q, grid, rule)?;
    let n = grid.dim();
    let mut y = [0.0; MAX_DIM];
    for (row, mut line) in op.matrix.rows_mut().into_iter().enumerate() {
        grid.grid.point(row, &mut y);
        let dot: f64 = (0..n).map(|a| (y[a] + 0.5 * hbar * q[a]) * p[a]).sum();
        let phase = C64::from_polar(1.0, -dot);
        line.mapv_inplace(|v| v * phase);
    }
    op.label = format!("weyl{:?}{:?}", q, p);
    Ok(op)
}

/// The diagonal operator `ω^ħ_B(Q; x, y)`.
pub fn cocycle_operator(field: &MagneticField, hbar: f64, x: &[f64], y: &[f64], grid: &WavefunctionGrid, rule: &QuadratureRule) -> Result<Array2<C64>> {
    let values: Result<Vec<C64>> = grid.grid.points().chunks(grid.dim()).map(|q| cocycle(field, hbar, q, x, y, rule)).collect();
    Ok(Array2::from_diag(&Array1::from(values?)))
}

/// Max entry of `|A − B|` over rows whose node lies in the inner half-box.
pub fn interior_max_difference(a: &Array2<C64>, b: &Array2<C64>, grid: &WavefunctionGrid) -> f64 {
    let mut y = [0.0; MAX_DIM];
    let mut worst: f64 = 0.0;
    for row in 0..a.nrows() {
        grid.grid.point(row, &mut y);
        if !grid.grid.in_inner_half(&y) {
            continue;
        }
        for col in 0..a.ncols() {
            worst = worst.max((a[[row, col]] - b[[row, col]]).norm());
        }
    }
    worst
}

/// `max |U diag(a) U† − diag(a(· + ħx))|` over interior rows.
pub fn covariance_residual(
    potential: &VectorPotential,
    hbar: f64,
    x: &[f64],
    profile: &QProfile,
    grid: &WavefunctionGrid,
    rule: &QuadratureRule,
) -> Result<f64> {
    let u = magnetic_translation(potential, hbar, x, grid, rule)?;
    let n = grid.dim();
    let a = Array2::from_diag(&Array1::from(grid.sample(|y| C64::new(profile.value(y), 0.0))));
    let shifted = Array2::from_diag(&Array1::from(grid.sample(|y| {
        let mut z = [0.0; MAX_DIM];
        for i in 0..n {
            z[i] = y[i] + hbar * x[i];
        }
        C64::new(profile.value(&z[..n]), 0.0)
    })));
    let lhs = u.matrix.dot(&a).dot(&u.matrix.t().mapv(|v| v.conj()));
    Ok(interior_max_difference(&lhs, &shifted, grid))
}

/// `‖Op_{A+∇χ}(f) − V Op_A(f) V†‖_F / ‖Op_A(f)‖_F` with `V = diag(e^{(i/ħ)χ})`.
pub fn check_gauge_covariance(
    f: &dyn PhaseSymbol,
    potential: &VectorPotential,
    chi: &GaugeFunction,
    hbar: f64,
    grid: &WavefunctionGrid,
    rule: &QuadratureRule,
) -> Result<f64> {
    let moved = crate::geometry::gauge_transform(potential, chi)?;
    let base = op_operator(f, potential, hbar, grid, rule)?;
    let other = op_operator(f, &moved, hbar, grid, rule)?;
    let phases: Vec<C64> = grid.sample(|q| C64::from_polar(1.0, chi.value(q) / hbar));
    let norm = base.frobenius_norm();
    let mut total = 0.0;
    for ((i, j), v) in base.matrix.indexed_iter() {
        let conjugated = phases[i] * v * phases[j].conj();
        total += (other.matrix[[i, j]] - conjugated).norm_sqr();
    }
    Ok(if norm == 0.0 { total.sqrt() } else { total.sqrt() / norm })
}

/// Five-point central difference along `axis` at a flat node, if the stencil fits.
fn central_difference(grid: &Grid, values: &[Option<C64>], node: usize, axis: usize) -> Option<C64> {
    let n = grid.points_per_axis();
    let mut idx = [0usize; MAX_DIM];
    grid.multi_index(node, &mut idx);
    if idx[axis] < 2 || idx[axis] + 2 >= n {
        return None;
    }
    let at = |offset: isize| {
        let mut j = idx;
        j[axis] = (idx[axis] as isize + offset) as usize;
        values[grid.flat_index(&j)]
    };
    let (m2, m1, p1, p2) = (at(-2)?, at(-1)?, at(1)?, at(2)?);
    Some((m2 - m1 * 8.0 + p1 * 8.0 - p2) / (12.0 * grid.spacing()))
}

fn apply_momentum(grid: &Grid, potential: &VectorPotential, hbar: f64, u: &[Option<C64>], axis: usize) -> Vec<Option<C64>> {
    let n = grid.dim();
    let mut q = [0.0; MAX_DIM];
    let mut a = [0.0; MAX_DIM];
    (0..grid.len())
        .map(|node| {
            let d = central_difference(grid, u, node, axis)?;
            grid.point(node, &mut q);
            potential.eval(&q[..n], &mut a);
            Some(C64::new(0.0, -hbar) * d - u[node]? * a[axis])
        })
        .collect()
}

/// Max over inner-half-box nodes and `j < k` of `|i[Π_j, Π_k]u − ħB_kj u|`
/// with `Π_j = −iħD_j − A_j` and fourth-order differences `D_j`.
pub fn check_commutation(
    potential: &VectorPotential,
    field: &MagneticField,
    hbar: f64,
    u: impl Fn(&[f64]) -> C64,
    grid: &WavefunctionGrid,
) -> Result<f64> {
    check_hbar(hbar)?;
    let n = grid.dim();
    let g = &grid.grid;
    let values: Vec<Option<C64>> = grid.sample(&u).into_iter().map(Some).collect();
    let momenta: Vec<Vec<Option<C64>>> = (0..n).map(|j| apply_momentum(g, potential, hbar, &values, j)).collect();
    let mut worst: f64 = 0.0;
    let mut q = [0.0; MAX_DIM];
    for j in 0..n {
        for k in j + 1..n {
            let jk = apply_momentum(g, potential, hbar, &momenta[k], j);
            let kj = apply_momentum(g, potential, hbar, &momenta[j], k);
            for node in 0..g.len() {
                g.point(node, &mut q);
                if !g.in_inner_half(&q) {
                    continue;
                }
                let (Some(a), Some(b), Some(v)) = (jk[node], kj[node], values[node]) else {
                    return Err(Error::Domain("the inner half-box is too close to the boundary for the stencil".into()));
                };
                let lhs = C64::new(0.0, 1.0) * (a - b);
                let rhs = v * (hbar * field.component(&q[..n], k, j));
                worst = worst.max((lhs - rhs).norm());
            }
        }
    }
    Ok(worst)
}

/// Power-iteration controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIteration {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 10_000 }
    }
}

/// Largest singular value by power iteration on `M†M` from the normalised all-ones vector.
pub fn operator_norm(m: &Array2<C64>) -> Result<f64> {
    operator_norm_with(m, PowerIteration::default())
}

pub fn operator_norm_with(m: &Array2<C64>, controls: PowerIteration) -> Result<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return Ok(0.0);
    }
    let mut v = vec![C64::new(1.0 / (cols as f64).sqrt(), 0.0); cols];
    let mut previous: Option<f64> = None;
    let mut last_step: Option<f64> = None;
    let mut sigma = 0.0;
    let mut bound = f64::INFINITY;
    let slice = m.as_standard_layout();
    let data = slice.as_slice().expect("standard layout");
    for _ in 0..controls.max_iterations {
        let w: Vec<C64> = data
            .par_chunks(cols)
            .map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum::<C64>())
            .collect();
        sigma = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if sigma == 0.0 {
            return Ok(0.0);
        }
        let mut u = vec![ZERO; cols];
        for (row, &wr) in data.chunks(cols).zip(&w) {
            if wr == ZERO {
                continue;
            }
            for (acc, a) in u.iter_mut().zip(row) {
                *acc += a.conj() * wr;
            }
        }
        let un = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for (dst, src) in v.iter_mut().zip(&u) {
            *dst = src / un;
        }
        if let Some(prev) = previous {
            let step = (sigma - prev).abs();
            bound = match last_step {
                Some(ls) if ls > 0.0 && step < ls => step * ls / (ls - step),
                _ => step,
            };
            if step <= controls.tolerance * sigma && bound <= controls.tolerance * sigma {
                return Ok(sigma);
            }
            last_step = Some(step);
        }
        previous = Some(sigma);
    }
    Err(Error::NotConverged { iterations: controls.max_iterations, last: sigma, bound })
}

/// `‖Rep(φ⋄ψ) − Rep(φ)Rep(ψ)‖_F / (‖Rep(φ)‖_F ‖Rep(ψ)‖_F)`, with the product
/// kernel evaluated on demand on the context grid.
pub fn homomorphism_check(
    phi: &dyn KernelSymbol,
    psi: &dyn KernelSymbol,
    potential: &VectorPotential,
    ctx: &ProductContext,
    grid: &WavefunctionGrid,
    rule: &QuadratureRule,
) -> Result<f64> {
    let lazy = LazyTwisted::new(phi, psi, ctx)?;
    let joint = rep_operator(&lazy, potential, ctx.hbar, grid, rule)?;
    let a = rep_operator(phi, potential, ctx.hbar, grid, rule)?;
    let b = rep_operator(psi, potential, ctx.hbar, grid, rule)?;
    let product = a.matrix.dot(&b.matrix);
    let diff = frobenius(&(&joint.matrix - &product));
    Ok(diff / (a.frobenius_norm() * b.frobenius_norm()))
}

/// Recovers the symbol of an operator at wavefunction nodes `q_nodes` and momenta `momenta`
/// (`len × N` row-major):
/// `h(q, k) = 2^N Σ_m e^{−2imΔ·k/ħ} e^{(i/ħ)Γ_A([q+mΔ, q−mΔ])} M[q+mΔ, q−mΔ]`.
pub fn dequantize(
    op: &DiscreteOperator,
    potential: &VectorPotential,
    grid: &WavefunctionGrid,
    rule: &QuadratureRule,
    q_nodes: &[usize],
    momenta: &[f64],
) -> Vec<C64> {
    let g = &grid.grid;
    let n = g.dim();
    let per_axis = g.points_per_axis() as i64;
    let hbar = op.hbar;
    let nk = momenta.len() / n;
    let spacing = g.spacing();
    let mut out = vec![ZERO; q_nodes.len() * nk];
    for (iqi, &node) in q_nodes.iter().enumerate() {
        let mut idx = [0usize; MAX_DIM];
        g.multi_index(node, &mut idx);
        // admissible offsets per axis keep both q ± mΔ on the grid
        let reach: Vec<i64> = (0..n).map(|a| (idx[a] as i64).min(per_axis - 1 - idx[a] as i64)).collect();
        let mut offsets: Vec<[i64; MAX_DIM]> = vec![[0; MAX_DIM]];
        for a in 0..n {
            let mut next = Vec::new();
            for o in &offsets {
                for m in -reach[a]..=reach[a] {
                    let mut c = *o;
                    c[a] = m;
                    next.push(c);
                }
            }
            offsets = next;
        }
        let mut x = [0.0; MAX_DIM];
        let mut y = [0.0; MAX_DIM];
        let mut plus = [0usize; MAX_DIM];
        let mut minus = [0usize; MAX_DIM];
        let terms: Vec<([f64; MAX_DIM], C64)> = offsets
            .iter()
            .map(|o| {
                for a in 0..n {
                    plus[a] = (idx[a] as i64 + o[a]) as usize;
                    minus[a] = (idx[a] as i64 - o[a]) as usize;
                }
                let (r, c) = (g.flat_index(&plus), g.flat_index(&minus));
                g.point(r, &mut x);
                g.point(c, &mut y);
                let gamma = circulation(potential, &x[..n], &y[..n], rule);
                let mut shift = [0.0; MAX_DIM];
                for a in 0..n {
                    shift[a] = o[a] as f64 * spacing;
                }
                (shift, op.matrix[[r, c]] * C64::from_polar(1.0, gamma / hbar))
            })
            .collect();
        for ik in 0..nk {
            let k = &momenta[ik * n..(ik + 1) * n];
            let total: C64 = terms
                .iter()
                .map(|(s, v)| {
                    let dot: f64 = (0..n).map(|a| s[a] * k[a]).sum();
                    v * C64::from_polar(1.0, -2.0 * dot / hbar)
                })
                .sum();
            out[iqi * nk + ik] = total * 2f64.powi(n as i32);
        }
    }
    out
}

const MAGIC: &[u8; 4] = b"MWOP";

/// Writes `"MWOP"`, the row count as `u32`, two reserved zero `u32`s, then the
/// matrix row-major as little-endian `(re, im)` `f64` pairs.
pub fn write_operator(matrix: &Array2<C64>, mut out: impl Write) -> io::Result<()> {
    if matrix.nrows() != matrix.ncols() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "operator matrix must be square"));
    }
    let dim = u32::try_from(matrix.nrows()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "matrix too large"))?;
    out.write_all(MAGIC)?;
    out.write_all(&dim.to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    for v in matrix.rows().into_iter().flat_map(|r| r.to_vec()) {
        out.write_all(&v.re.to_le_bytes())?;
        out.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_operator(mut input: impl Read) -> io::Result<Array2<C64>> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "missing MWOP magic"));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let mut buf = [0u8; 16];
    let mut values = Vec::with_capacity(dim * dim);
    for _ in 0..dim * dim {
        input.read_exact(&mut buf)?;
        let re = f64::from_le_bytes(buf[..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(buf[8..].try_into().expect("8 bytes"));
        values.push(C64::new(re, im));
    }
    Array2::from_shape_vec((dim, dim), values).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}
