//! The `ħ → 0` harness: von Neumann, Dirac and Rieffel residual curves,
//! convergence-order fits and the expansion diagnostics of the twisted product.

use std::time::Instant;

use crate::algebra::{classical_product, jordan_and_commutator_of, kernel_bracket, twisted_products, ProductContext};
use crate::geometry::{omega_exponent, MagneticField, QuadratureRule, VectorPotential};
use crate::quantization::{min_admissible_hbar, op_operator, operator_norm, WavefunctionGrid};
use crate::symbols::{norm_l1a, sample_kernel, KernelSamples, KernelSymbol, PhaseSymbol, SymbolGrid};
use crate::{Error, Result, C64, MAX_DIM};

/// Residuals at or below this level count as exact zeros.
pub const EXACT_THRESHOLD: f64 = 1e-14;

/// `1, 2^{−1}, …, 2^{−k}`.
pub fn geometric_ladder(k: usize) -> Vec<f64> {
    (0..=k).map(|i| 0.5f64.powi(i as i32)).collect()
}

/// Drops entries below `min_hbar` (with a relative slack of `1e−12`).
pub fn truncate_ladder(ladder: &[f64], min_hbar: f64) -> Vec<f64> {
    ladder.iter().copied().filter(|&h| h >= min_hbar * (1.0 - 1e-12)).collect()
}

pub fn validate_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::Domain("the hbar ladder is empty".into()));
    }
    for w in ladder.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::Domain(format!("the hbar ladder must be strictly decreasing ({} then {})", w[0], w[1])));
        }
    }
    if let Some(&h) = ladder.iter().find(|&&h| !(h > 0.0 && h <= 1.0)) {
        return Err(Error::Domain(format!("hbar {h} lies outside (0, 1]")));
    }
    Ok(())
}

/// Which residuals a sweep computes, on which ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub ladder: Vec<f64>,
    pub von_neumann: bool,
    pub dirac: bool,
    /// Record wall-clock time per ladder point.
    pub timing: bool,
}

impl SweepConfig {
    pub fn new(ladder: Vec<f64>) -> Result<Self> {
        validate_ladder(&ladder)?;
        Ok(Self { ladder, von_neumann: true, dirac: true, timing: false })
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { ladder: geometric_ladder(6), von_neumann: true, dirac: true, timing: false }
    }
}

/// One ladder point of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub hbar: f64,
    /// `‖½(φ⋄ψ + ψ⋄φ) − φ⋄⁰ψ‖₁`.
    pub vn_residual: Option<f64>,
    /// `‖φ⋄ψ − φ⋄⁰ψ‖₁`.
    pub vn_single: Option<f64>,
    /// `‖(φ⋄ψ − ψ⋄φ)/(iħ) − {φ,ψ}^B‖₁`.
    pub dirac_residual: Option<f64>,
    /// Largest `‖·‖₁` difference between a twisted product and `⋄⁰`, either order.
    pub product_difference: f64,
    /// Largest `‖·‖₁` of the phase-space imaginary part over the residual integrands.
    pub realness_defect: f64,
    pub runtime_s: Option<f64>,
}

/// Outcome of a log-log least-squares fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OrderFit {
    Slope { slope: f64, intercept: f64, slope_stderr: f64, fit_residual: f64, rows_used: usize },
    /// Every residual in the fitting window is below [`EXACT_THRESHOLD`].
    Exact,
}

impl OrderFit {
    pub fn slope(&self) -> Option<f64> {
        match self {
            OrderFit::Slope { slope, .. } => Some(*slope),
            OrderFit::Exact => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub vn_fit: Option<Result<OrderFit>>,
    pub dirac_fit: Option<Result<OrderFit>>,
    /// The domination envelope bounding every product difference.
    pub envelope: f64,
}

impl SweepResult {
    pub fn vn_curve(&self) -> Vec<(f64, f64)> {
        self.rows.iter().filter_map(|r| r.vn_residual.map(|v| (r.hbar, v))).collect()
    }

    pub fn dirac_curve(&self) -> Vec<(f64, f64)> {
        self.rows.iter().filter_map(|r| r.dirac_residual.map(|v| (r.hbar, v))).collect()
    }
}

/// True when the last three values of `curve` strictly decrease.
pub fn decreasing_tail(curve: &[(f64, f64)]) -> bool {
    curve.len() >= 3 && curve[curve.len() - 3..].windows(2).all(|w| w[1].1 < w[0].1)
}

/// Local slopes `log(r_{i−1}/r_i) / log(ħ_{i−1}/ħ_i)`, `NaN` for the first row or non-positive data.
pub fn partial_slopes(curve: &[(f64, f64)]) -> Vec<f64> {
    let mut out = vec![f64::NAN; curve.len()];
    for i in 1..curve.len() {
        let (h0, r0) = curve[i - 1];
        let (h1, r1) = curve[i];
        if r0 > 0.0 && r1 > 0.0 {
            out[i] = (r0 / r1).ln() / (h0 / h1).ln();
        }
    }
    out
}

/// Least-squares line through `(log ħ, log residual)` over the smallest decade of `ħ`.
pub fn fit_order(rows: &[(f64, f64)]) -> Result<OrderFit> {
    let hmin = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let window: Vec<(f64, f64)> = rows.iter().copied().filter(|r| r.0 <= 10.0 * hmin * (1.0 + 1e-12)).collect();
    if window.len() < 3 {
        return Err(Error::TooFewRows(window.len()));
    }
    if window.iter().all(|r| r.1.abs() < EXACT_THRESHOLD) {
        return Ok(OrderFit::Exact);
    }
    let usable: Vec<(f64, f64)> = window.iter().filter(|r| r.1 > 0.0).map(|r| (r.0.ln(), r.1.ln())).collect();
    if usable.len() < 3 {
        return Err(Error::TooFewRows(usable.len()));
    }
    let m = usable.len() as f64;
    let mx = usable.iter().map(|r| r.0).sum::<f64>() / m;
    let my = usable.iter().map(|r| r.1).sum::<f64>() / m;
    let sxx: f64 = usable.iter().map(|r| (r.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|r| (r.0 - mx) * (r.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = usable.iter().map(|r| (r.1 - intercept - slope * r.0).powi(2)).sum();
    let slope_stderr = if usable.len() > 2 { (sse / (m - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(OrderFit::Slope { slope, intercept, slope_stderr, fit_residual: sse.sqrt(), rows_used: usable.len() })
}

/// `‖φ(q;x) − conj φ(q;−x)‖₁ / 2`, the `‖·‖₁` of the imaginary part of the phase-space
/// symbol, over the nodes whose reflection lies on the grid.
pub fn realness_defect(samples: &KernelSamples) -> f64 {
    let grid = samples.grid();
    let x = &grid.x;
    let n = x.dim();
    let per = x.points_per_axis();
    let nq = grid.q.len();
    let mut idx = [0usize; MAX_DIM];
    let mut total = 0.0;
    for ix in 0..x.len() {
        x.multi_index(ix, &mut idx);
        if idx[..n].iter().any(|&m| m == 0) {
            continue;
        }
        let mut mirror = [0usize; MAX_DIM];
        for a in 0..n {
            mirror[a] = per - idx[a];
        }
        let im = x.flat_index(&mirror[..n]);
        let worst = (0..nq).map(|iq| (samples.get(iq, ix) - samples.get(iq, im).conj()).norm()).fold(0.0, f64::max);
        total += 0.5 * worst;
    }
    total * x.cell_volume()
}

/// `Γ((N+1)/2)` for the integer or half-integer argument.
fn gamma_half_integer(twice: usize) -> f64 {
    // Γ(1) = 1, Γ(1/2) = √π, Γ(z + 1) = zΓ(z)
    let (mut z, mut value) = if twice % 2 == 0 { (1.0, 1.0) } else { (0.5, std::f64::consts::PI.sqrt()) };
    while 2.0 * z < twice as f64 - 0.5 {
        value *= z;
        z += 1.0;
    }
    value
}

/// `∫ ⟨x⟩^{−(N+1)} dx = π^{(N+1)/2} / Γ((N+1)/2)` over `R^N`.
pub fn japanese_bracket_integral(dim: usize) -> f64 {
    std::f64::consts::PI.powf((dim as f64 + 1.0) / 2.0) / gamma_half_integer(dim + 1)
}

fn weighted_sup(samples: &KernelSamples, m: f64) -> f64 {
    let grid = samples.grid();
    let n = grid.dim();
    let nx = grid.x.len();
    let xs = grid.x.points();
    samples
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = &xs[(i % nx) * n..(i % nx + 1) * n];
            let r2: f64 = x.iter().map(|a| a * a).sum();
            (1.0 + r2).powf(0.5 * m) * v.norm()
        })
        .fold(0.0, f64::max)
}

/// `2 (sup ⟨x⟩^m |φ|)(sup ⟨x⟩^m |ψ|)(∫⟨x⟩^{−m})²` with `m = N + 1`, sups taken over grid nodes.
pub fn domination_envelope(phi: &KernelSamples, psi: &KernelSamples) -> f64 {
    let n = phi.grid().dim();
    let m = n as f64 + 1.0;
    2.0 * weighted_sup(phi, m) * weighted_sup(psi, m) * japanese_bracket_integral(n).powi(2)
}

/// The `ħ`-independent data of a sweep: `φ⋄⁰ψ` and `{φ,ψ}^B`.
pub struct ClassicalLimit {
    pub product: KernelSamples,
    pub bracket: Option<KernelSamples>,
}

impl ClassicalLimit {
    pub fn new(phi: &dyn KernelSymbol, psi: &dyn KernelSymbol, field: &MagneticField, grid: &SymbolGrid, with_bracket: bool) -> Result<Self> {
        let product = classical_product(phi, psi, grid)?;
        let bracket = if with_bracket { Some(kernel_bracket(phi, psi, field, grid)?) } else { None };
        Ok(Self { product, bracket })
    }
}

/// One ladder point: both twisted products, then every residual that `config` asks for.
pub fn ladder_point(
    phi: &dyn KernelSymbol,
    psi: &dyn KernelSymbol,
    ctx: &ProductContext,
    limit: &ClassicalLimit,
    config: &SweepConfig,
) -> Result<SweepRow> {
    let start = Instant::now();
    let mut both = twisted_products(&[(phi, psi), (psi, phi)], ctx)?;
    let ba = both.pop().expect("two products");
    let ab = both.pop().expect("two products");
    let (jordan, commutator) = jordan_and_commutator_of(&ab, &ba, ctx.hbar);
    let diff_ab = norm_l1a(&ab.sub(&limit.product)?);
    let diff_ba = norm_l1a(&ba.sub(&limit.product)?);
    let mut realness = 0.0f64;
    let mut row = SweepRow {
        hbar: ctx.hbar,
        vn_residual: None,
        vn_single: None,
        dirac_residual: None,
        product_difference: diff_ab.max(diff_ba),
        realness_defect: 0.0,
        runtime_s: None,
    };
    if config.von_neumann {
        let residual = jordan.sub(&limit.product)?;
        realness = realness.max(realness_defect(&residual));
        row.vn_residual = Some(norm_l1a(&residual));
        row.vn_single = Some(diff_ab);
    }
    if config.dirac {
        let bracket = limit.bracket.as_ref().ok_or_else(|| Error::Domain("the Dirac residual needs the kernel bracket".into()))?;
        let residual = commutator.sub(bracket)?;
        realness = realness.max(realness_defect(&residual));
        row.dirac_residual = Some(norm_l1a(&residual));
    }
    row.realness_defect = realness;
    if config.timing {
        row.runtime_s = Some(start.elapsed().as_secs_f64());
    }
    Ok(row)
}

/// The von Neumann residuals `(Jordan, single product)` at `ctx.hbar`.
pub fn residual_von_neumann(phi: &dyn KernelSymbol, psi: &dyn KernelSymbol, ctx: &ProductContext) -> Result<(f64, f64)> {
    let limit = ClassicalLimit::new(phi, psi, &ctx.field, &ctx.grid, false)?;
    let config = SweepConfig { ladder: vec![ctx.hbar], von_neumann: true, dirac: false, timing: false };
    let row = ladder_point(phi, psi, ctx, &limit, &config)?;
    Ok((row.vn_residual.expect("requested"), row.vn_single.expect("requested")))
}

/// The Dirac residual at `ctx.hbar`.
pub fn residual_dirac(phi: &dyn KernelSymbol, psi: &dyn KernelSymbol, ctx: &ProductContext) -> Result<f64> {
    let limit = ClassicalLimit::new(phi, psi, &ctx.field, &ctx.grid, true)?;
    let config = SweepConfig { ladder: vec![ctx.hbar], von_neumann: false, dirac: true, timing: false };
    Ok(ladder_point(phi, psi, ctx, &limit, &config)?.dirac_residual.expect("requested"))
}

/// Runs every ladder point of `config` with the field, grid and rule of `base`.
pub fn sweep(phi: &dyn KernelSymbol, psi: &dyn KernelSymbol, base: &ProductContext, config: &SweepConfig) -> Result<SweepResult> {
    validate_ladder(&config.ladder)?;
    let limit = ClassicalLimit::new(phi, psi, &base.field, &base.grid, config.dirac)?;
    let envelope = domination_envelope(&sample_kernel(phi, &base.grid)?, &sample_kernel(psi, &base.grid)?);
    let rows = config
        .ladder
        .iter()
        .map(|&h| ladder_point(phi, psi, &base.with_hbar(h)?, &limit, config))
        .collect::<Result<Vec<_>>>()?;
    let mut result = SweepResult { rows, vn_fit: None, dirac_fit: None, envelope };
    if config.von_neumann {
        result.vn_fit = Some(fit_order(&result.vn_curve()));
    }
    if config.dirac {
        result.dirac_fit = Some(fit_order(&result.dirac_curve()));
    }
    Ok(result)
}

/// Operator norms of `Op^ħ_A(f)` along a ladder, with the `ħ = 0` endpoint `sup|f|`.
#[derive(Clone, Debug, PartialEq)]
pub struct RieffelCurve {
    /// `(ħ, ‖Op^ħ_A(f)‖)`, `ħ` descending.
    pub rows: Vec<(f64, f64)>,
    pub sup_norm: f64,
    /// Ladder entries dropped because they fall below the admissible `ħ`.
    pub truncated: Vec<f64>,
}

impl RieffelCurve {
    /// `|‖Op^{ħ_min}(f)‖ − sup|f||`.
    pub fn endpoint_gap(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| (r.1 - self.sup_norm).abs())
    }

    /// Largest `|norm(ħ_i) − norm(ħ_{i+1})|` over successive ladder points.
    pub fn max_jump(&self) -> f64 {
        self.rows.windows(2).map(|w| (w[0].1 - w[1].1).abs()).fold(0.0, f64::max)
    }
}

/// `rieffel_curve` with `sup|f|` supplied by the caller.
pub fn rieffel_curve(
    f: &dyn PhaseSymbol,
    potential: &VectorPotential,
    ladder: &[f64],
    grid: &WavefunctionGrid,
    rule: &QuadratureRule,
    sup_norm: f64,
) -> Result<RieffelCurve> {
    validate_ladder(ladder)?;
    let min = match f.kernel_form() {
        crate::symbols::KernelForm::Analytic(k) => k.x_scale().map_or(0.0, |s| min_admissible_hbar(grid, s)),
        _ => 0.0,
    };
    let kept = truncate_ladder(ladder, min);
    let truncated = ladder[kept.len()..].to_vec();
    if kept.is_empty() {
        return Err(Error::Resolution { hbar: ladder[0], min_hbar: min });
    }
    let rows = kept
        .iter()
        .map(|&h| Ok((h, operator_norm(&op_operator(f, potential, h, grid, rule)?.matrix)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RieffelCurve { rows, sup_norm, truncated })
}

/// Max-modulus diagnostics of the first-order expansion of the twisted product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpansionReport {
    pub hbar: f64,
    /// `max |𝔏^+_z φ − ½ z·∇_q φ|`.
    pub shift_plus_error: f64,
    /// `max |𝔏^−_z φ − ½ z·∇_q φ|`.
    pub shift_minus_error: f64,
    /// `max |R_B(q, x, y; ħ)|`.
    pub remainder_max: f64,
}

/// `(𝔏^±_z φ)(q;x) = ½ z·∫₀¹ ds ∇_qφ(q ± sħz/2; x)`.
pub fn shifted_gradient(phi: &dyn KernelSymbol, hbar: f64, z: &[f64], q: &[f64], x: &[f64], sign: f64, rule: &QuadratureRule) -> Result<C64> {
    let n = phi.dim();
    if z.iter().all(|&v| v == 0.0) {
        return Ok(C64::new(0.0, 0.0));
    }
    let mut point = [0.0; MAX_DIM];
    let mut grad = [C64::new(0.0, 0.0); MAX_DIM];
    let mut total = C64::new(0.0, 0.0);
    for (&s, &w) in rule.nodes().iter().zip(rule.weights()) {
        let s = 0.5 * (s + 1.0);
        for i in 0..n {
            point[i] = q[i] + sign * s * 0.5 * hbar * z[i];
        }
        phi.grad_q(&point[..n], x, &mut grad[..n])?;
        let dot: C64 = (0..n).map(|i| grad[i] * z[i]).sum();
        total += dot * (0.5 * w);
    }
    Ok(total * 0.5)
}

/// `R_B = (e^{−iħΩ_B(ħ)} − e^{−iħΩ_B(0)})/ħ`.
pub fn phase_remainder(field: &MagneticField, hbar: f64, q: &[f64], x: &[f64], y: &[f64], rule: &QuadratureRule) -> Result<C64> {
    if !(hbar > 0.0) {
        return Err(Error::Domain(format!("the phase remainder needs hbar > 0, got {hbar}")));
    }
    let now = omega_exponent(field, hbar, q, x, y, rule)?;
    let limit = omega_exponent(field, 0.0, q, x, y, rule)?;
    Ok((C64::from_polar(1.0, -hbar * now) - C64::from_polar(1.0, -hbar * limit)) / hbar)
}

/// Evaluates the expansion diagnostics with `q` over `grid.q` and `x`, `y`, `z` over `grid.x`.
pub fn expansion_diagnostics(
    phi: &dyn KernelSymbol,
    field: &MagneticField,
    hbar: f64,
    grid: &SymbolGrid,
    rule: &QuadratureRule,
) -> Result<ExpansionReport> {
    let n = grid.dim();
    let qs = grid.q.points();
    let xs = grid.x.points();
    let mut report = ExpansionReport { hbar, shift_plus_error: 0.0, shift_minus_error: 0.0, remainder_max: 0.0 };
    let mut grad = [C64::new(0.0, 0.0); MAX_DIM];
    for q in qs.chunks(n) {
        for x in xs.chunks(n) {
            phi.grad_q(q, x, &mut grad[..n])?;
            for z in xs.chunks(n) {
                let limit: C64 = (0..n).map(|i| grad[i] * (0.5 * z[i])).sum();
                let plus = shifted_gradient(phi, hbar, z, q, x, 1.0, rule)?;
                let minus = shifted_gradient(phi, hbar, z, q, x, -1.0, rule)?;
                report.shift_plus_error = report.shift_plus_error.max((plus - limit).norm());
                report.shift_minus_error = report.shift_minus_error.max((minus - limit).norm());
                report.remainder_max = report.remainder_max.max(phase_remainder(field, hbar, q, x, z, rule)?.norm());
            }
        }
    }
    Ok(report)
}
