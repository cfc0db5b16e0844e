//! Composition laws on symbols: the twisted convolution `⋄^ħ`, its classical
//! limit `⋄⁰`, the magnetic Moyal product `∘^ħ`, the involution, the magnetic
//! Poisson brackets in both pictures, and the Jordan and scaled-commutator
//! combinations.
//!
//! The twisted product of kernels is
//!
//! ```text
//! (φ⋄ψ)(q;x) = Δ^N Σ_y φ(q − ħ(x−y)/2; y) ψ(q + ħy/2; x−y) e^{−iħΩ_B(q,x,y;ħ)}
//! ```
//!
//! with `y` over the nodes of the product grid and shifted arguments evaluated
//! analytically.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::geometry::{contract_matrix, triangle_flux, MagneticField, QuadratureRule};
use crate::symbols::{
    inverse_partial_fourier, DiscreteDelta, Grid, KernelForm, KernelSamples, KernelSymbol, PhaseSamples,
    PhaseSymbol, SymbolGrid,
};
use crate::{Error, Result, C64, MAX_DIM};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Default relative envelope threshold below which product terms are skipped.
pub const DEFAULT_PRUNE: f64 = 1e-16;

/// Data shared by every twisted product at one value of `ħ`.
#[derive(Clone, Debug)]
pub struct ProductContext {
    pub field: MagneticField,
    pub hbar: f64,
    pub grid: SymbolGrid,
    /// Rule for the phase exponent `Ω_B` on non-constant fields.
    pub rule: QuadratureRule,
    /// Terms whose envelope product falls below `prune · max φ · max ψ` are skipped.
    pub prune: f64,
}

impl ProductContext {
    pub fn new(field: MagneticField, hbar: f64, grid: SymbolGrid, rule: QuadratureRule) -> Result<Self> {
        if !(0.0..=1.0).contains(&hbar) {
            return Err(Error::Domain(format!("hbar must lie in [0, 1], got {hbar}")));
        }
        if field.dim() != grid.dim() {
            return Err(Error::DimensionMismatch { expected: grid.dim(), got: field.dim() });
        }
        Ok(Self { field, hbar, grid, rule, prune: DEFAULT_PRUNE })
    }

    pub fn with_prune(mut self, prune: f64) -> Self {
        self.prune = prune;
        self
    }

    pub fn with_hbar(&self, hbar: f64) -> Result<Self> {
        let mut ctx = Self::new(self.field.clone(), hbar, self.grid.clone(), self.rule.clone())?;
        ctx.prune = self.prune;
        Ok(ctx)
    }

    fn require_positive(&self) -> Result<()> {
        if self.hbar == 0.0 {
            return Err(Error::Domain("the twisted product needs hbar > 0; use classical_product".into()));
        }
        Ok(())
    }
}

fn check_symbol(s: &dyn KernelSymbol, dim: usize) -> Result<()> {
    if s.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: s.dim() });
    }
    Ok(())
}

/// Per-`(x, y)` evaluation of the phase `e^{−iħΩ_B}` over all `q`.
struct PhaseEvaluator<'a> {
    ctx: &'a ProductContext,
    dim: usize,
    constant: Option<&'a [f64]>,
    /// Collapsed-triangle nodes `(t, s, weight)`.
    nodes: Vec<(f64, f64, f64)>,
}

impl<'a> PhaseEvaluator<'a> {
    fn new(ctx: &'a ProductContext) -> Self {
        let r = &ctx.rule;
        let mut nodes = Vec::with_capacity(r.order() * r.order());
        for (&t, &wt) in r.nodes().iter().zip(r.weights()) {
            for (&u, &wu) in r.nodes().iter().zip(r.weights()) {
                nodes.push((t, t * u, wt * wu * t));
            }
        }
        Self { ctx, dim: ctx.field.dim(), constant: ctx.field.as_constant(), nodes }
    }

    /// `Ω_B(q, x, y; ħ)` at one point.
    fn omega(&self, q: &[f64], x: &[f64], y: &[f64], d: &[f64]) -> f64 {
        let n = self.dim;
        if let Some(m) = self.constant {
            return 0.5 * contract_matrix(m, n, y, d);
        }
        let h = self.ctx.hbar;
        let mut point = [0.0; MAX_DIM];
        let mut total = 0.0;
        for &(t, s, w) in &self.nodes {
            for i in 0..n {
                point[i] = q[i] + h * (-0.5 * x[i] + t * y[i] + s * d[i]);
            }
            total += w * self.ctx.field.contract(&point[..n], y, d);
        }
        total
    }

    fn phase(&self, q: &[f64], x: &[f64], y: &[f64], d: &[f64]) -> C64 {
        let w = self.omega(q, x, y, d);
        if w == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            C64::from_polar(1.0, -self.ctx.hbar * w)
        }
    }
}

/// Twisted products of several pairs on the same grid, sharing the phase computation.
pub fn twisted_products(pairs: &[(&dyn KernelSymbol, &dyn KernelSymbol)], ctx: &ProductContext) -> Result<Vec<KernelSamples>> {
    ctx.require_positive()?;
    let n = ctx.grid.dim();
    for (a, b) in pairs {
        check_symbol(*a, n)?;
        check_symbol(*b, n)?;
    }
    let qs = ctx.grid.q.points();
    let xs = ctx.grid.x.points();
    let nq = ctx.grid.q.len();
    let nx = ctx.grid.x.len();
    let np = pairs.len();
    let h = ctx.hbar;
    let phase = PhaseEvaluator::new(ctx);

    let env_phi: Vec<Vec<f64>> = pairs
        .iter()
        .map(|(a, _)| (0..nx).map(|iy| a.x_envelope(&xs[iy * n..(iy + 1) * n])).collect())
        .collect();
    let thresholds: Vec<f64> = pairs
        .iter()
        .zip(&env_phi)
        .map(|((_, b), ea)| {
            let ma = ea.iter().cloned().fold(0.0, f64::max);
            let mb = (0..nx).map(|i| b.x_envelope(&xs[i * n..(i + 1) * n])).fold(0.0, f64::max);
            ctx.prune * ma * mb
        })
        .collect();
    let vol = ctx.grid.x.cell_volume();

    let columns: Vec<Vec<C64>> = (0..nx)
        .into_par_iter()
        .map(|ix| {
            let x = &xs[ix * n..(ix + 1) * n];
            let mut acc = vec![ZERO; np * nq];
            let mut d = [0.0; MAX_DIM];
            let mut q1 = [0.0; MAX_DIM];
            let mut q2 = [0.0; MAX_DIM];
            let mut active = vec![false; np];
            for iy in 0..nx {
                let y = &xs[iy * n..(iy + 1) * n];
                for i in 0..n {
                    d[i] = x[i] - y[i];
                }
                let d = &d[..n];
                let mut any = false;
                for p in 0..np {
                    let ea = env_phi[p][iy];
                    active[p] = ea > 0.0 && ea * pairs[p].1.x_envelope(d) >= thresholds[p];
                    any |= active[p];
                }
                if !any {
                    continue;
                }
                let fixed = phase.constant.map(|_| phase.phase(&qs[..n], x, y, d));
                for iq in 0..nq {
                    let q = &qs[iq * n..(iq + 1) * n];
                    for i in 0..n {
                        q1[i] = q[i] - 0.5 * h * d[i];
                        q2[i] = q[i] + 0.5 * h * y[i];
                    }
                    let ph = match fixed {
                        Some(c) => c,
                        None => phase.phase(q, x, y, d),
                    };
                    for p in 0..np {
                        if active[p] {
                            let (a, b) = pairs[p];
                            acc[p * nq + iq] += a.eval(&q1[..n], y) * b.eval(&q2[..n], d) * ph;
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut out: Vec<KernelSamples> = (0..np).map(|_| KernelSamples::zeros(ctx.grid.clone())).collect();
    for (ix, col) in columns.iter().enumerate() {
        for p in 0..np {
            let values = out[p].values_mut();
            for iq in 0..nq {
                values[iq * nx + ix] = col[p * nq + iq] * vol;
            }
        }
    }
    Ok(out)
}

/// `φ ⋄^ħ ψ` sampled on the context grid.
pub fn twisted_product(phi: &dyn KernelSymbol, psi: &dyn KernelSymbol, ctx: &ProductContext) -> Result<KernelSamples> {
    Ok(twisted_products(&[(phi, psi)], ctx)?.pop().expect("one pair"))
}

/// `(φ ⋄^ħ ψ)(q; x)` at a single, arbitrary point.
pub fn twisted_value(phi: &dyn KernelSymbol, psi: &dyn KernelSymbol, ctx: &ProductContext, q: &[f64], x: &[f64]) -> Result<C64> {
    ctx.require_positive()?;
    let lazy = LazyTwisted::new(phi, psi, ctx)?;
    Ok(lazy.eval(q, x))
}

/// `φ ⋄^ħ ψ` as a kernel symbol evaluated on demand, one `y`-sum per call.
pub struct LazyTwisted<'a> {
    phi: &'a dyn KernelSymbol,
    psi: &'a dyn KernelSymbol,
    ctx: &'a ProductContext,
    ys: Vec<f64>,
    env_phi: Vec<f64>,
    threshold: f64,
    phase: PhaseEvaluator<'a>,
}

impl<'a> LazyTwisted<'a> {
    pub fn new(phi: &'a dyn KernelSymbol, psi: &'a dyn KernelSymbol, ctx: &'a ProductContext) -> Result<Self> {
        ctx.require_positive()?;
        let n = ctx.grid.dim();
        check_symbol(phi, n)?;
        check_symbol(psi, n)?;
        let ys = ctx.grid.x.points();
        let ny = ctx.grid.x.len();
        let env_phi: Vec<f64> = (0..ny).map(|i| phi.x_envelope(&ys[i * n..(i + 1) * n])).collect();
        let mb = (0..ny).map(|i| psi.x_envelope(&ys[i * n..(i + 1) * n])).fold(0.0, f64::max);
        let threshold = ctx.prune * env_phi.iter().cloned().fold(0.0, f64::max) * mb;
        Ok(Self { phi, psi, ctx, ys, env_phi, threshold, phase: PhaseEvaluator::new(ctx) })
    }
}

impl KernelSymbol for LazyTwisted<'_> {
    fn dim(&self) -> usize {
        self.ctx.grid.dim()
    }

    fn eval(&self, q: &[f64], x: &[f64]) -> C64 {
        let n = self.dim();
        let h = self.ctx.hbar;
        let mut d = [0.0; MAX_DIM];
        let mut q1 = [0.0; MAX_DIM];
        let mut q2 = [0.0; MAX_DIM];
        let mut acc = ZERO;
        for (iy, y) in self.ys.chunks(n).enumerate() {
            let ea = self.env_phi[iy];
            if ea == 0.0 {
                continue;
            }
            for i in 0..n {
                d[i] = x[i] - y[i];
            }
            if ea * self.psi.x_envelope(&d[..n]) < self.threshold {
                continue;
            }
            for i in 0..n {
                q1[i] = q[i] - 0.5 * h * d[i];
                q2[i] = q[i] + 0.5 * h * y[i];
            }
            let ph = self.phase.phase(q, x, y, &d[..n]);
            acc += self.phi.eval(&q1[..n], y) * self.psi.eval(&q2[..n], &d[..n]) * ph;
        }
        acc * self.ctx.grid.x.cell_volume()
    }

    fn x_scale(&self) -> Option<f64> {
        match (self.phi.x_scale(), self.psi.x_scale()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (Some(a), None) | (None, Some(a)) => Some(a),
            (None, None) => None,
        }
    }
}

/// `φ ⋄⁰ ψ`: pointwise in `q`, convolution in `x`.
pub fn classical_product(phi: &dyn KernelSymbol, psi: &dyn KernelSymbol, grid: &SymbolGrid) -> Result<KernelSamples> {
    let n = grid.dim();
    check_symbol(phi, n)?;
    check_symbol(psi, n)?;
    let xs = grid.x.points();
    let nx = grid.x.len();
    let vol = grid.x.cell_volume();
    let diffs = DifferenceLattice::new(&grid.x);
    let mut out = KernelSamples::zeros(grid.clone());
    out.values_mut().par_chunks_mut(nx).enumerate().for_each(|(iq, row)| {
        let mut q = [0.0; MAX_DIM];
        grid.q.point(iq, &mut q);
        let q = &q[..n];
        let phis: Vec<C64> = (0..nx).map(|iy| phi.eval(q, &xs[iy * n..(iy + 1) * n])).collect();
        let psis: Vec<C64> = diffs.points.chunks(n).map(|d| psi.eval(q, d)).collect();
        for (ix, v) in row.iter_mut().enumerate() {
            let mut acc = ZERO;
            for iy in 0..nx {
                if phis[iy] != ZERO {
                    acc += phis[iy] * psis[diffs.index(ix, iy)];
                }
            }
            *v = acc * vol;
        }
    });
    Ok(out)
}

/// The lattice of node differences `x_i − y_j = (i − j)Δ` of a grid.
struct DifferenceLattice {
    dim: usize,
    n: usize,
    points: Vec<f64>,
}

impl DifferenceLattice {
    fn new(grid: &Grid) -> Self {
        let dim = grid.dim();
        let n = grid.points_per_axis();
        let side = 2 * n - 1;
        let total = side.pow(dim as u32);
        let mut points = vec![0.0; total * dim];
        for (flat, chunk) in points.chunks_mut(dim).enumerate() {
            let mut f = flat;
            for axis in (0..dim).rev() {
                let k = (f % side) as f64 - (n - 1) as f64;
                chunk[axis] = k * grid.spacing();
                f /= side;
            }
        }
        Self { dim, n, points }
    }

    fn index(&self, ix: usize, iy: usize) -> usize {
        let side = 2 * self.n - 1;
        let (mut a, mut b) = (ix, iy);
        let mut idx = [0usize; MAX_DIM];
        for axis in (0..self.dim).rev() {
            idx[axis] = (a % self.n) + (self.n - 1) - (b % self.n);
            a /= self.n;
            b /= self.n;
        }
        idx[..self.dim].iter().fold(0, |acc, &m| acc * side + m)
    }
}

/// `φ ⋄⁰ ψ` from samples via zero-padded FFT convolution per `q`-slice.
pub fn classical_product_samples(a: &KernelSamples, b: &KernelSamples) -> Result<KernelSamples> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch("factors live on different grids".into()));
    }
    let grid = a.grid();
    let xg = &grid.x;
    let dim = xg.dim();
    let n = xg.points_per_axis();
    let m = 2 * n;
    let padded = m.pow(dim as u32);
    let nx = xg.len();
    let vol = xg.cell_volume();
    let big = Grid::new(dim, 1.0, m)?;
    let small = xg.clone();
    let mut out = KernelSamples::zeros(grid.clone());
    let mut planner = rustfft::FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let transform = |data: &mut [C64], inverse: bool| {
        let fft = if inverse { &inv } else { &fwd };
        let mut line = vec![ZERO; m];
        for axis in 0..dim {
            let stride = m.pow((dim - 1 - axis) as u32);
            let block = stride * m;
            for start in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[base + k * stride];
                    }
                    fft.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
        }
    };
    let mut idx = [0usize; MAX_DIM];
    for iq in 0..grid.q.len() {
        let mut pa = vec![ZERO; padded];
        let mut pb = vec![ZERO; padded];
        for j in 0..nx {
            small.multi_index(j, &mut idx);
            let at = big.flat_index(&idx);
            pa[at] = a.get(iq, j);
            pb[at] = b.get(iq, j);
        }
        transform(&mut pa, false);
        transform(&mut pb, false);
        for (u, v) in pa.iter_mut().zip(&pb) {
            *u *= *v;
        }
        transform(&mut pa, true);
        // linear convolution index i + j lands on output node i + j − n/2
        let norm = vol / padded as f64;
        let values = out.values_mut();
        for j in 0..nx {
            small.multi_index(j, &mut idx);
            for axis in 0..dim {
                idx[axis] += n / 2;
            }
            values[iq * nx + j] = pa[big.flat_index(&idx)] * norm;
        }
    }
    Ok(out)
}

/// The kernel-picture form of a phase-space symbol on the context grid.
enum KernelOf {
    Analytic(std::sync::Arc<dyn KernelSymbol>),
    Delta(DiscreteDelta),
}

impl KernelOf {
    fn from_phase(f: &dyn PhaseSymbol, grid: &SymbolGrid) -> Result<Self> {
        match f.kernel_form() {
            KernelForm::Analytic(k) => Ok(KernelOf::Analytic(k)),
            KernelForm::Multiplication(profile) => Ok(KernelOf::Delta(DiscreteDelta::on_grid(profile, &grid.x))),
            KernelForm::Unavailable => Err(Error::Unsupported(
                "the Moyal product needs symbols whose partial Fourier transform is known".into(),
            )),
        }
    }

    fn as_dyn(&self) -> &dyn KernelSymbol {
        match self {
            KernelOf::Analytic(k) => k.as_ref(),
            KernelOf::Delta(d) => d,
        }
    }
}

/// `f ∘^ħ g = 𝔽⁻¹[(𝔽f) ⋄^ħ (𝔽g)]` sampled on the context grid's phase space.
pub fn moyal_product(f: &dyn PhaseSymbol, g: &dyn PhaseSymbol, ctx: &ProductContext) -> Result<PhaseSamples> {
    let kf = KernelOf::from_phase(f, &ctx.grid)?;
    let kg = KernelOf::from_phase(g, &ctx.grid)?;
    let kernel = twisted_product(kf.as_dyn(), kg.as_dyn(), ctx)?;
    inverse_partial_fourier(&kernel, &ctx.grid)
}

/// Direct quadrature of the magnetic Moyal product at one phase-space point,
/// with the double phase-space integral evaluated on tensor grids: positions on
/// `positions` and momenta on `momenta` (its node coordinates).
///
/// Slow (`O(n_x^{2N} n_k^N)` per point); a cross-check only.
pub fn moyal_direct(
    f: &dyn PhaseSymbol,
    g: &dyn PhaseSymbol,
    field: &MagneticField,
    hbar: f64,
    q: &[f64],
    p: &[f64],
    positions: &Grid,
    momenta: &Grid,
    rule: &QuadratureRule,
) -> Result<C64> {
    let n = field.dim();
    if !(hbar > 0.0) {
        return Err(Error::Domain(format!("direct Moyal quadrature needs hbar > 0, got {hbar}")));
    }
    let xs = positions.points();
    let ks = momenta.points();
    let nx = positions.len();
    let nk = momenta.len();
    let two_over_h = 2.0 / hbar;
    // F[x][y] = Σ_k f(x, k) e^{(2i/ħ)(q−y)·k},  G[x][y] = Σ_l g(y, l) e^{−(2i/ħ)(q−x)·l}
    let fx: Vec<C64> = (0..nx * nk).map(|i| f.eval(&xs[(i / nk) * n..(i / nk + 1) * n], &ks[(i % nk) * n..(i % nk + 1) * n])).collect();
    let gy: Vec<C64> = (0..nx * nk).map(|i| g.eval(&xs[(i / nk) * n..(i / nk + 1) * n], &ks[(i % nk) * n..(i % nk + 1) * n])).collect();
    let wave = |shift: &[f64], sign: f64| -> Vec<C64> {
        (0..nk)
            .map(|ik| {
                let k = &ks[ik * n..(ik + 1) * n];
                let dot: f64 = (0..n).map(|i| (q[i] - shift[i]) * k[i]).sum();
                C64::from_polar(1.0, sign * two_over_h * dot)
            })
            .collect()
    };
    let wf: Vec<Vec<C64>> = (0..nx).map(|iy| wave(&xs[iy * n..(iy + 1) * n], 1.0)).collect();
    let wg: Vec<Vec<C64>> = (0..nx).map(|ix| wave(&xs[ix * n..(ix + 1) * n], -1.0)).collect();
    let mut total = ZERO;
    let mut a = [0.0; MAX_DIM];
    let mut b = [0.0; MAX_DIM];
    let mut c = [0.0; MAX_DIM];
    for ix in 0..nx {
        let x = &xs[ix * n..(ix + 1) * n];
        for iy in 0..nx {
            let y = &xs[iy * n..(iy + 1) * n];
            let ff: C64 = (0..nk).map(|ik| fx[ix * nk + ik] * wf[iy][ik]).sum();
            if ff == ZERO {
                continue;
            }
            let gg: C64 = (0..nk).map(|il| gy[iy * nk + il] * wg[ix][il]).sum();
            for i in 0..n {
                a[i] = q[i] - y[i] + x[i];
                b[i] = x[i] - q[i] + y[i];
                c[i] = y[i] - x[i] + q[i];
            }
            let flux = triangle_flux(field, &a[..n], &b[..n], &c[..n], rule)?;
            let plane: f64 = (0..n).map(|i| (y[i] - x[i]) * p[i]).sum();
            total += ff * gg * C64::from_polar(1.0, two_over_h * plane - flux / hbar);
        }
    }
    let measure = (two_over_h * positions.spacing() * momenta.spacing() / (2.0 * PI)).powi(2 * n as i32);
    Ok(total * measure)
}

/// `φ^⋄(q; x) = conj φ(q; −x)`.
pub struct Involuted<'a>(pub &'a dyn KernelSymbol);

fn negate(x: &[f64]) -> [f64; MAX_DIM] {
    let mut out = [0.0; MAX_DIM];
    for (o, v) in out.iter_mut().zip(x) {
        *o = -v;
    }
    out
}

impl KernelSymbol for Involuted<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, q: &[f64], x: &[f64]) -> C64 {
        self.0.eval(q, &negate(x)[..x.len()]).conj()
    }

    fn grad_q(&self, q: &[f64], x: &[f64], out: &mut [C64]) -> Result<()> {
        self.0.grad_q(q, &negate(x)[..x.len()], out)?;
        for v in out[..self.dim()].iter_mut() {
            *v = v.conj();
        }
        Ok(())
    }

    fn x_envelope(&self, x: &[f64]) -> f64 {
        self.0.x_envelope(&negate(x)[..x.len()])
    }

    fn x_scale(&self) -> Option<f64> {
        self.0.x_scale()
    }

    fn is_q_independent(&self) -> bool {
        self.0.is_q_independent()
    }
}

/// The involution `φ ↦ φ^⋄`.
pub fn involution(phi: &dyn KernelSymbol) -> Involuted<'_> {
    Involuted(phi)
}

/// `{f, g}_B(q, p) = Σ_j (∂_{q_j}f ∂_{p_j}g − ∂_{p_j}f ∂_{q_j}g) + Σ_jk B_jk(q) ∂_{p_j}f ∂_{p_k}g`.
pub fn poisson_bracket_at(f: &dyn PhaseSymbol, g: &dyn PhaseSymbol, field: &MagneticField, q: &[f64], p: &[f64]) -> C64 {
    let n = field.dim();
    let mut fq = [ZERO; MAX_DIM];
    let mut fp = [ZERO; MAX_DIM];
    let mut gq = [ZERO; MAX_DIM];
    let mut gp = [ZERO; MAX_DIM];
    f.grad_q(q, p, &mut fq);
    f.grad_p(q, p, &mut fp);
    g.grad_q(q, p, &mut gq);
    g.grad_p(q, p, &mut gp);
    let mut total = ZERO;
    for j in 0..n {
        total += fq[j] * gp[j] - fp[j] * gq[j];
    }
    if !field.is_zero() {
        let mut b = [0.0; MAX_DIM * MAX_DIM];
        field.matrix_at(q, &mut b);
        for j in 0..n {
            for k in 0..n {
                let bjk = b[j * n + k];
                if bjk != 0.0 {
                    total += fp[j] * gp[k] * bjk;
                }
            }
        }
    }
    total
}

/// `{f, g}_B` sampled on the phase-space nodes of `grid`.
pub fn poisson_bracket_b(f: &dyn PhaseSymbol, g: &dyn PhaseSymbol, field: &MagneticField, grid: &SymbolGrid) -> Result<PhaseSamples> {
    let n = grid.dim();
    if f.dim() != n || g.dim() != n || field.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: f.dim().max(g.dim()).max(field.dim()) });
    }
    let ps = grid.x.dual_points();
    let np = grid.x.len();
    let mut out = PhaseSamples::zeros(grid.clone());
    out.values_mut().par_chunks_mut(np).enumerate().for_each(|(iq, row)| {
        let mut q = [0.0; MAX_DIM];
        grid.q.point(iq, &mut q);
        for (ip, v) in row.iter_mut().enumerate() {
            *v = poisson_bracket_at(f, g, field, &q[..n], &ps[ip * n..(ip + 1) * n]);
        }
    });
    Ok(out)
}

/// The kernel-picture bracket
/// `−i Σ_j [(Q_jφ)⋄⁰(∂_jψ) − (∂_jφ)⋄⁰(Q_jψ)] − Σ_jk B_jk (Q_jφ)⋄⁰(Q_kψ)`,
/// where `Q_j` multiplies by `x_j` and `∂_j` differentiates in `q_j`.
pub fn kernel_bracket(phi: &dyn KernelSymbol, psi: &dyn KernelSymbol, field: &MagneticField, grid: &SymbolGrid) -> Result<KernelSamples> {
    let n = grid.dim();
    check_symbol(phi, n)?;
    check_symbol(psi, n)?;
    let xs = grid.x.points();
    let nx = grid.x.len();
    let vol = grid.x.cell_volume();
    let diffs = DifferenceLattice::new(&grid.x);
    let stride = n + 1;
    let mut out = KernelSamples::zeros(grid.clone());
    let mut first_error = std::sync::Mutex::new(None);
    out.values_mut().par_chunks_mut(nx).enumerate().for_each(|(iq, row)| {
        let mut q = [0.0; MAX_DIM];
        grid.q.point(iq, &mut q);
        let q = &q[..n];
        let mut b = [0.0; MAX_DIM * MAX_DIM];
        field.matrix_at(q, &mut b);
        // value followed by the q-gradient, per node
        let table = |s: &dyn KernelSymbol, pts: &[f64]| -> Result<Vec<C64>> {
            let count = pts.len() / n;
            let mut t = vec![ZERO; count * stride];
            for (i, x) in pts.chunks(n).enumerate() {
                t[i * stride] = s.eval(q, x);
                s.grad_q(q, x, &mut t[i * stride + 1..(i + 1) * stride])?;
            }
            Ok(t)
        };
        let (tp, ts) = match (table(phi, &xs), table(psi, &diffs.points)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                first_error.lock().unwrap().get_or_insert(e);
                return;
            }
        };
        for (ix, v) in row.iter_mut().enumerate() {
            let x = &xs[ix * n..(ix + 1) * n];
            let mut acc = ZERO;
            for iy in 0..nx {
                let a = &tp[iy * stride..(iy + 1) * stride];
                let id = diffs.index(ix, iy);
                let c = &ts[id * stride..(id + 1) * stride];
                let y = &xs[iy * n..(iy + 1) * n];
                let mut canonical = ZERO;
                let mut magnetic = 0.0;
                for j in 0..n {
                    let dj = x[j] - y[j];
                    canonical += a[0] * c[1 + j] * y[j] - a[1 + j] * c[0] * dj;
                    for k in 0..n {
                        magnetic += b[j * n + k] * y[j] * (x[k] - y[k]);
                    }
                }
                acc += C64::new(0.0, -1.0) * canonical - a[0] * c[0] * magnetic;
            }
            *v = acc * vol;
        }
    });
    if let Some(e) = first_error.get_mut().unwrap().take() {
        return Err(e);
    }
    Ok(out)
}

/// `(½(φ⋄ψ + ψ⋄φ), (φ⋄ψ − ψ⋄φ)/(iħ))`.
pub fn jordan_and_scaled_commutator(phi: &dyn KernelSymbol, psi: &dyn KernelSymbol, ctx: &ProductContext) -> Result<(KernelSamples, KernelSamples)> {
    let mut both = twisted_products(&[(phi, psi), (psi, phi)], ctx)?;
    let ba = both.pop().expect("two products");
    let ab = both.pop().expect("two products");
    Ok(jordan_and_commutator_of(&ab, &ba, ctx.hbar))
}

pub(crate) fn jordan_and_commutator_of(ab: &KernelSamples, ba: &KernelSamples, hbar: f64) -> (KernelSamples, KernelSamples) {
    let jordan = ab.add(ba).expect("same grid").scaled(C64::new(0.5, 0.0));
    let commutator = ab.sub(ba).expect("same grid").scaled(C64::new(0.0, -1.0 / hbar));
    (jordan, commutator)
}

/// Max-over-nodes residuals of the Poisson-algebra axioms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonAxiomReport {
    /// `|{f,g} + {g,f}|`.
    pub antisymmetry: f64,
    /// `|{f, g·h} − g{f,h} − {f,g}h|`.
    pub leibniz: f64,
    /// `|{f,{g,h}} + {g,{h,f}} + {h,{f,g}}|`.
    pub jacobi: f64,
}

/// `{g, h}_B` as a phase-space symbol whose gradients are five-point central differences.
struct BracketSymbol<'a> {
    g: &'a dyn PhaseSymbol,
    h: &'a dyn PhaseSymbol,
    field: &'a MagneticField,
    step: f64,
}

impl BracketSymbol<'_> {
    fn derivative(&self, q: &[f64], p: &[f64], axis: usize, in_q: bool) -> C64 {
        let n = self.field.dim();
        let mut qq = [0.0; MAX_DIM];
        let mut pp = [0.0; MAX_DIM];
        qq[..n].copy_from_slice(q);
        pp[..n].copy_from_slice(p);
        let mut at = |offset: f64| {
            if in_q {
                qq[axis] = q[axis] + offset;
            } else {
                pp[axis] = p[axis] + offset;
            }
            poisson_bracket_at(self.g, self.h, self.field, &qq[..n], &pp[..n])
        };
        let d = self.step;
        (at(-2.0 * d) - at(-d) * 8.0 + at(d) * 8.0 - at(2.0 * d)) / (12.0 * d)
    }
}

impl PhaseSymbol for BracketSymbol<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn eval(&self, q: &[f64], p: &[f64]) -> C64 {
        poisson_bracket_at(self.g, self.h, self.field, q, p)
    }

    fn grad_q(&self, q: &[f64], p: &[f64], out: &mut [C64]) {
        for j in 0..self.dim() {
            out[j] = self.derivative(q, p, j, true);
        }
    }

    fn grad_p(&self, q: &[f64], p: &[f64], out: &mut [C64]) {
        for j in 0..self.dim() {
            out[j] = self.derivative(q, p, j, false);
        }
    }
}

/// Checks antisymmetry, the Leibniz rule and the Jacobi identity of `{·,·}_B` at
/// the phase-space nodes of `grid`; Jacobi uses fourth-order finite differences
/// of step `step` for the outer gradients.
pub fn check_poisson_axioms(
    f: &dyn PhaseSymbol,
    g: &dyn PhaseSymbol,
    h: &dyn PhaseSymbol,
    field: &MagneticField,
    grid: &SymbolGrid,
    step: f64,
) -> Result<PoissonAxiomReport> {
    let n = grid.dim();
    if !(step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {step}")));
    }
    for s in [f.dim(), g.dim(), h.dim(), field.dim()] {
        if s != n {
            return Err(Error::DimensionMismatch { expected: n, got: s });
        }
    }
    let gh_product = crate::symbols::PhaseProduct { left: g, right: h };
    let gh = BracketSymbol { g, h, field, step };
    let hf = BracketSymbol { g: h, h: f, field, step };
    let fg = BracketSymbol { g: f, h: g, field, step };
    let ps = grid.x.dual_points();
    let np = grid.x.len();
    let rows: Vec<PoissonAxiomReport> = (0..grid.q.len())
        .into_par_iter()
        .map(|iq| {
            let mut q = [0.0; MAX_DIM];
            grid.q.point(iq, &mut q);
            let q = &q[..n];
            let mut r = PoissonAxiomReport { antisymmetry: 0.0, leibniz: 0.0, jacobi: 0.0 };
            for ip in 0..np {
                let p = &ps[ip * n..(ip + 1) * n];
                let a = poisson_bracket_at(f, g, field, q, p);
                let b = poisson_bracket_at(g, f, field, q, p);
                r.antisymmetry = r.antisymmetry.max((a + b).norm());
                let lhs = poisson_bracket_at(f, &gh_product, field, q, p);
                let rhs = g.eval(q, p) * poisson_bracket_at(f, h, field, q, p) + a * h.eval(q, p);
                r.leibniz = r.leibniz.max((lhs - rhs).norm());
                let j = poisson_bracket_at(f, &gh, field, q, p)
                    + poisson_bracket_at(g, &hf, field, q, p)
                    + poisson_bracket_at(h, &fg, field, q, p);
                r.jacobi = r.jacobi.max(j.norm());
            }
            r
        })
        .collect();
    Ok(rows.into_iter().fold(PoissonAxiomReport { antisymmetry: 0.0, leibniz: 0.0, jacobi: 0.0 }, |acc, r| {
        PoissonAxiomReport {
            antisymmetry: acc.antisymmetry.max(r.antisymmetry),
            leibniz: acc.leibniz.max(r.leibniz),
            jacobi: acc.jacobi.max(r.jacobi),
        }
    }))
}
