//! Configuration parsing, subcommand dispatch and CSV/SVG output for the `magweyl` tool.
//!
//! Configurations are flat `key = value` files with `#` comments. Every run writes a
//! CSV whose leading `#` lines record the tool version, a SHA-256 hash of the effective
//! configuration and the effective configuration itself, defaults included.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::algebra::{check_poisson_axioms, twisted_product, ProductContext};
use crate::geometry::{
    check_cocycle_identity, circulation, gauge_transform, symmetric_gauge, transversal_gauge, triangle_flux, GaugeFunction,
    MagneticField, QuadratureRule, VectorPotential,
};
use crate::quantization::{check_gauge_covariance, op_operator, operator_norm, write_operator, WavefunctionGrid};
use crate::semiclassics::{decreasing_tail, geometric_ladder, partial_slopes, rieffel_curve, sweep, OrderFit, SweepConfig};
use crate::symbols::{norm_l1a, sample_kernel, GaussianPhase, Grid, KernelSymbol, Multiplication, PhaseSymbol, QProfile, SymbolGrid};
use crate::{Error, MAX_DIM};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Names of the symbol slots a configuration may define.
pub const SLOTS: [&str; 5] = ["phi", "psi", "f", "g", "h"];

/// One problem found while reading a configuration.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfigIssue {
    Syntax { line: usize, message: String },
    UnknownKey { line: usize, key: String },
    DuplicateKey { key: String, first: usize, second: usize },
    Range { key: String, message: String },
    Unresolved { key: String, name: String },
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigIssue::Syntax { line, message } => write!(f, "syntax error (line {line}): {message}"),
            ConfigIssue::UnknownKey { line, key } => write!(f, "unknown key (line {line}): `{key}`"),
            ConfigIssue::DuplicateKey { key, first, second } => {
                write!(f, "duplicate key: `{key}` set on lines {first} and {second}")
            }
            ConfigIssue::Range { key, message } => write!(f, "range violation: `{key}`: {message}"),
            ConfigIssue::Unresolved { key, name } => write!(f, "unresolved reference: `{key}` names unknown symbol `{name}`"),
        }
    }
}

/// Every issue found in a configuration, in discovery order.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Clone, Debug, PartialEq)]
pub enum FieldConfig {
    Zero,
    /// Row-major `N × N` matrix.
    Constant(Vec<f64>),
    Bump { amplitude: f64, center: [f64; 2], width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaugeChoice {
    Transversal,
    Symmetric,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChiConfig {
    Zero,
    Linear(Vec<f64>),
    Gaussian { amplitude: f64, center: Vec<f64>, width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymbolFamily {
    /// `a e^{−α|q−q₀|²} e^{−γ|p−p₀|²}`.
    Gaussian,
    /// `a e^{−α|q−q₀|²}`, independent of `p`.
    Multiplication,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolSpec {
    pub family: SymbolFamily,
    pub amplitude: f64,
    pub alpha: f64,
    pub center: Vec<f64>,
    pub gamma: f64,
    pub momentum: Vec<f64>,
}

impl SymbolSpec {
    pub fn phase(&self) -> crate::Result<Box<dyn PhaseSymbol>> {
        let profile = QProfile::gaussian(self.amplitude, self.alpha, self.center.clone())?;
        Ok(match self.family {
            SymbolFamily::Gaussian => Box::new(GaussianPhase::new(profile, self.gamma, self.momentum.clone())?),
            SymbolFamily::Multiplication => Box::new(Multiplication::new(profile)),
        })
    }

    pub fn kernel(&self) -> crate::Result<crate::symbols::GaussianSymbol> {
        match self.family {
            SymbolFamily::Gaussian => {
                let profile = QProfile::gaussian(self.amplitude, self.alpha, self.center.clone())?;
                Ok(GaussianPhase::new(profile, self.gamma, self.momentum.clone())?.kernel().clone())
            }
            SymbolFamily::Multiplication => {
                Err(Error::Unsupported("multiplication symbols have no smooth kernel; use a gaussian family".into()))
            }
        }
    }

    /// `sup |f|`, attained at `(q₀, p₀)`.
    pub fn sup_norm(&self) -> f64 {
        self.amplitude.abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub plots: bool,
    pub timing: bool,
    pub matrix: Option<PathBuf>,
}

/// A validated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub grid_l: f64,
    pub grid_n: usize,
    pub grid_q_l: f64,
    pub grid_q_n: usize,
    pub wave_l: f64,
    pub wave_n: usize,
    pub quad_order: usize,
    pub field: FieldConfig,
    pub gauge: GaugeChoice,
    pub chi: ChiConfig,
    pub symbols: BTreeMap<String, SymbolSpec>,
    pub hbar: f64,
    pub ladder: Vec<f64>,
    pub hbar_list: Vec<f64>,
    pub seed: u64,
    pub flux_draws: usize,
    pub flux_scale: f64,
    pub flux_tolerance: f64,
    pub cocycle_draws: usize,
    pub cocycle_scale: f64,
    pub cocycle_tolerance: f64,
    pub product_pair: (String, String),
    pub product_banach_slack: f64,
    pub poisson_triple: [String; 3],
    pub poisson_step: f64,
    pub poisson_antisymmetry_tolerance: f64,
    pub poisson_leibniz_tolerance: f64,
    pub poisson_jacobi_tolerance: f64,
    pub quantize_symbol: String,
    pub quantize_tolerance: f64,
    pub gauge_check_symbol: String,
    pub gauge_check_tolerance: f64,
    pub converge_pair: (String, String),
    pub converge_von_neumann: bool,
    pub converge_dirac: bool,
    pub rieffel_symbol: String,
    pub rieffel_gap_tolerance: f64,
    pub output: OutputConfig,
    /// The effective configuration, defaults included, sorted by key.
    pub effective: BTreeMap<String, String>,
}

impl RunConfig {
    /// SHA-256 of the effective configuration rendered as sorted `key = value` lines.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in &self.effective {
            hasher.update(format!("{k} = {v}\n").as_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn quadrature(&self) -> QuadratureRule {
        QuadratureRule::gauss_legendre(self.quad_order).expect("validated order")
    }

    pub fn magnetic_field(&self) -> crate::Result<MagneticField> {
        match &self.field {
            FieldConfig::Zero => MagneticField::zero(self.dim),
            FieldConfig::Constant(m) => MagneticField::constant(self.dim, m),
            FieldConfig::Bump { amplitude, center, width } => MagneticField::gaussian_bump_2d(*amplitude, *center, *width),
        }
    }

    pub fn potential(&self, field: &MagneticField) -> crate::Result<VectorPotential> {
        match self.gauge {
            GaugeChoice::Transversal => Ok(transversal_gauge(field, &self.quadrature())),
            GaugeChoice::Symmetric => symmetric_gauge(field),
        }
    }

    pub fn gauge_function(&self) -> crate::Result<GaugeFunction> {
        match &self.chi {
            ChiConfig::Zero => Ok(GaugeFunction::zero(self.dim)),
            ChiConfig::Linear(c) => Ok(GaugeFunction::linear(c.clone())),
            ChiConfig::Gaussian { amplitude, center, width } => GaugeFunction::gaussian(*amplitude, center.clone(), *width),
        }
    }

    pub fn product_grid(&self) -> SymbolGrid {
        SymbolGrid::new(
            Grid::new(self.dim, self.grid_q_l, self.grid_q_n).expect("validated grid"),
            Grid::new(self.dim, self.grid_l, self.grid_n).expect("validated grid"),
        )
        .expect("same dimension")
    }

    pub fn wave_grid(&self) -> WavefunctionGrid {
        WavefunctionGrid::new(Grid::new(self.dim, self.wave_l, self.wave_n).expect("validated grid"))
    }

    pub fn symbol(&self, name: &str) -> &SymbolSpec {
        &self.symbols[name]
    }
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Reader {
    entries: HashMap<String, Entry>,
    order: Vec<String>,
    issues: Vec<ConfigIssue>,
    effective: BTreeMap<String, String>,
}

fn format_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

impl Reader {
    fn new(text: &str) -> Self {
        let mut entries: HashMap<String, Entry> = HashMap::new();
        let mut order = Vec::new();
        let mut issues = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                issues.push(ConfigIssue::Syntax { line, message: format!("expected `key = value`, found `{content}`") });
                continue;
            };
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                issues.push(ConfigIssue::Syntax { line, message: format!("invalid key `{key}`") });
                continue;
            }
            if let Some(previous) = entries.get(key) {
                issues.push(ConfigIssue::DuplicateKey { key: key.to_string(), first: previous.line, second: line });
                continue;
            }
            order.push(key.to_string());
            entries.insert(key.to_string(), Entry { value: value.trim().to_string(), line, used: false });
        }
        Self { entries, order, issues, effective: BTreeMap::new() }
    }

    /// The raw value of `key` (or `default`) and the line it came from.
    fn raw(&mut self, key: &str, default: &str) -> (String, Option<usize>) {
        match self.entries.get_mut(key) {
            Some(e) => {
                e.used = true;
                (e.value.clone(), Some(e.line))
            }
            None => (default.to_string(), None),
        }
    }

    fn bad_value(&mut self, key: &str, line: Option<usize>, what: &str, value: &str) {
        let message = format!("`{key}` expects {what}, found `{value}`");
        match line {
            Some(line) => self.issues.push(ConfigIssue::Syntax { line, message }),
            None => self.issues.push(ConfigIssue::Range { key: key.into(), message }),
        }
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        let (v, _) = self.raw(key, default);
        self.effective.insert(key.into(), v.clone());
        v
    }

    fn f64(&mut self, key: &str, default: f64) -> f64 {
        let (v, line) = self.raw(key, &format!("{default}"));
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => {
                self.effective.insert(key.into(), format!("{x}"));
                x
            }
            _ => {
                self.bad_value(key, line, "a finite number", &v);
                self.effective.insert(key.into(), v);
                default
            }
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> usize {
        let (v, line) = self.raw(key, &default.to_string());
        match v.parse::<usize>() {
            Ok(x) => {
                self.effective.insert(key.into(), x.to_string());
                x
            }
            Err(_) => {
                self.bad_value(key, line, "a non-negative integer", &v);
                self.effective.insert(key.into(), v);
                default
            }
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> bool {
        let (v, line) = self.raw(key, &default.to_string());
        let b = match v.as_str() {
            "true" => true,
            "false" => false,
            _ => {
                self.bad_value(key, line, "`true` or `false`", &v);
                default
            }
        };
        self.effective.insert(key.into(), b.to_string());
        b
    }

    fn list(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        let (v, line) = self.raw(key, &format_list(default));
        if v.is_empty() {
            self.effective.insert(key.into(), String::new());
            return Vec::new();
        }
        let parsed: Result<Vec<f64>, _> = v.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match parsed {
            Ok(xs) if xs.iter().all(|x| x.is_finite()) => {
                self.effective.insert(key.into(), format_list(&xs));
                xs
            }
            _ => {
                self.bad_value(key, line, "a comma-separated list of numbers", &v);
                self.effective.insert(key.into(), v);
                default.to_vec()
            }
        }
    }

    fn names(&mut self, key: &str, default: &str, count: usize) -> Vec<String> {
        let v = self.string(key, default);
        let names: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
        if names.len() != count {
            self.range(key, format!("expects {count} comma-separated symbol names"));
            return default.split(',').map(str::to_string).collect();
        }
        for name in &names {
            if !SLOTS.contains(&name.as_str()) {
                self.issues.push(ConfigIssue::Unresolved { key: key.into(), name: name.clone() });
            }
        }
        names
    }

    fn range(&mut self, key: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue::Range { key: key.into(), message: message.into() });
    }

    fn positive(&mut self, key: &str, value: f64) {
        if !(value > 0.0) {
            self.range(key, format!("must be > 0, got {value}"));
        }
    }

    fn even_at_least(&mut self, key: &str, value: usize, min: usize) {
        if value % 2 != 0 {
            self.range(key, format!("n must be even, got {value}"));
        } else if value < min {
            self.range(key, format!("n must be at least {min}, got {value}"));
        }
    }

    fn finish_unknown(&mut self) {
        for key in &self.order {
            let e = &self.entries[key];
            if !e.used {
                self.issues.push(ConfigIssue::UnknownKey { line: e.line, key: key.clone() });
            }
        }
    }
}

fn default_symbol(slot: &str, dim: usize) -> SymbolSpec {
    let center = |first: f64, second: f64| {
        let mut c = vec![0.0; dim];
        if dim >= 1 {
            c[0] = first;
        }
        if dim >= 2 {
            c[1] = second;
        }
        c
    };
    let (amplitude, alpha, c, gamma) = match slot {
        "phi" => (1.0, 0.5, center(0.2, 0.0), 0.5),
        "psi" => (1.0, 0.3, center(-0.3, 0.1), 0.25),
        "f" => (1.0, 0.5, center(0.0, 0.0), 8.0),
        "g" => (1.0, 0.3, center(0.2, -0.1), 0.5),
        _ => (0.7, 0.4, center(-0.2, 0.3), 0.3),
    };
    SymbolSpec { family: SymbolFamily::Gaussian, amplitude, alpha, center: c, gamma, momentum: vec![0.0; dim] }
}

/// Parses and validates a configuration, reporting every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let mut r = Reader::new(text);
    let dim = r.usize("dim", 2);
    if dim == 0 || dim > MAX_DIM {
        r.range("dim", format!("must lie in 1..={MAX_DIM}, got {dim}"));
    }
    let dim = dim.clamp(1, MAX_DIM);
    let grid_l = r.f64("grid.L", 8.0);
    let grid_n = r.usize("grid.n", 32);
    let grid_q_l = r.f64("grid.q_L", 4.0);
    let grid_q_n = r.usize("grid.q_n", 8);
    let wave_l = r.f64("wave.L", 1.5);
    let wave_n = r.usize("wave.n", 48);
    for (key, l) in [("grid.L", grid_l), ("grid.q_L", grid_q_l), ("wave.L", wave_l)] {
        r.positive(key, l);
    }
    r.even_at_least("grid.n", grid_n, 16);
    r.even_at_least("wave.n", wave_n, 16);
    r.even_at_least("grid.q_n", grid_q_n, 2);
    let quad_order = r.usize("quad.order", 20);
    if quad_order < 4 {
        r.range("quad.order", format!("order must be at least 4, got {quad_order}"));
    }

    let kind = r.string("field.kind", "constant");
    let b12 = r.f64("field.b12", 0.5);
    let matrix = r.list("field.matrix", &[]);
    let amplitude = r.f64("field.amplitude", 1.0);
    let fcenter = r.list("field.center", &[0.0, 0.0]);
    let width = r.f64("field.width", 1.5);
    let field = match kind.as_str() {
        "zero" => FieldConfig::Zero,
        "constant" => {
            if !matrix.is_empty() {
                if matrix.len() != dim * dim {
                    r.range("field.matrix", format!("needs {} entries for dim {dim}", dim * dim));
                } else if MagneticField::constant(dim, &matrix).is_err() {
                    r.range("field.matrix", "must be antisymmetric");
                }
                FieldConfig::Constant(matrix)
            } else if dim == 2 {
                FieldConfig::Constant(vec![0.0, b12, -b12, 0.0])
            } else {
                r.range("field.matrix", "a constant field in dim != 2 needs an explicit matrix");
                FieldConfig::Zero
            }
        }
        "bump" => {
            if dim != 2 {
                r.range("field.kind", "the bump field is planar and needs dim = 2");
            }
            if fcenter.len() != 2 {
                r.range("field.center", "needs 2 coordinates");
            }
            r.positive("field.width", width);
            let c = [fcenter.first().copied().unwrap_or(0.0), fcenter.get(1).copied().unwrap_or(0.0)];
            FieldConfig::Bump { amplitude, center: c, width }
        }
        other => {
            r.range("field.kind", format!("expects zero, constant or bump, found `{other}`"));
            FieldConfig::Zero
        }
    };

    let gauge = match r.string("gauge.kind", "transversal").as_str() {
        "transversal" => GaugeChoice::Transversal,
        "symmetric" => {
            if matches!(field, FieldConfig::Bump { .. }) {
                r.range("gauge.kind", "the symmetric gauge needs a constant field");
            }
            GaugeChoice::Symmetric
        }
        other => {
            r.range("gauge.kind", format!("expects transversal or symmetric, found `{other}`"));
            GaugeChoice::Transversal
        }
    };
    let chi_kind = r.string("gauge.chi", "gaussian");
    let chi_amplitude = r.f64("gauge.chi_amplitude", 1.0);
    let chi_center = r.list("gauge.chi_center", &vec![0.0; dim]);
    let chi_width = r.f64("gauge.chi_width", 1.0);
    let mut default_coefficients = vec![0.0; dim];
    default_coefficients[0] = 1.0;
    let chi_coefficients = r.list("gauge.chi_coefficients", &default_coefficients);
    let chi = match chi_kind.as_str() {
        "zero" => ChiConfig::Zero,
        "linear" => {
            if chi_coefficients.len() != dim {
                r.range("gauge.chi_coefficients", format!("needs {dim} entries"));
            }
            ChiConfig::Linear(chi_coefficients)
        }
        "gaussian" => {
            if chi_center.len() != dim {
                r.range("gauge.chi_center", format!("needs {dim} coordinates"));
            }
            r.positive("gauge.chi_width", chi_width);
            ChiConfig::Gaussian { amplitude: chi_amplitude, center: chi_center, width: chi_width }
        }
        other => {
            r.range("gauge.chi", format!("expects zero, linear or gaussian, found `{other}`"));
            ChiConfig::Zero
        }
    };

    let mut symbols = BTreeMap::new();
    for slot in SLOTS {
        let d = default_symbol(slot, dim);
        let family = match r.string(&format!("{slot}.family"), "gaussian").as_str() {
            "gaussian" => SymbolFamily::Gaussian,
            "multiplication" => SymbolFamily::Multiplication,
            other => {
                r.range(&format!("{slot}.family"), format!("expects gaussian or multiplication, found `{other}`"));
                SymbolFamily::Gaussian
            }
        };
        let spec = SymbolSpec {
            family,
            amplitude: r.f64(&format!("{slot}.amplitude"), d.amplitude),
            alpha: r.f64(&format!("{slot}.alpha"), d.alpha),
            center: r.list(&format!("{slot}.center"), &d.center),
            gamma: r.f64(&format!("{slot}.gamma"), d.gamma),
            momentum: r.list(&format!("{slot}.momentum"), &d.momentum),
        };
        r.positive(&format!("{slot}.alpha"), spec.alpha);
        r.positive(&format!("{slot}.gamma"), spec.gamma);
        if spec.center.len() != dim {
            r.range(&format!("{slot}.center"), format!("needs {dim} coordinates"));
        }
        if spec.momentum.len() != dim {
            r.range(&format!("{slot}.momentum"), format!("needs {dim} coordinates"));
        }
        symbols.insert(slot.to_string(), spec);
    }

    let hbar = r.f64("hbar", 0.5);
    if !(hbar > 0.0 && hbar <= 1.0) {
        r.range("hbar", format!("must satisfy 0 < hbar <= 1, got {hbar}"));
    }
    let steps = r.usize("hbar.ladder", 6);
    if steps > 40 {
        r.range("hbar.ladder", format!("at most 40 halvings, got {steps}"));
    }
    let listed = r.list("hbar.list", &[]);
    let ladder = if listed.is_empty() { geometric_ladder(steps.min(40)) } else { listed.clone() };
    if let Err(e) = crate::semiclassics::validate_ladder(&ladder) {
        r.range("hbar.list", e.to_string());
    }
    let hbar_list = if listed.is_empty() { vec![1.0, 0.5, 0.25] } else { listed };

    let seed = r.usize("seed", 1) as u64;
    let flux_draws = r.usize("flux.draws", 20);
    let flux_scale = r.f64("flux.scale", 1.0);
    let flux_tolerance = r.f64("flux.tolerance", 1e-10);
    let cocycle_draws = r.usize("cocycle.draws", 100);
    let cocycle_scale = r.f64("cocycle.scale", 1.0);
    let cocycle_tolerance = r.f64("cocycle.tolerance", 1e-8);
    for (key, v) in [("flux.draws", flux_draws), ("cocycle.draws", cocycle_draws)] {
        if v == 0 {
            r.range(key, "needs at least one draw");
        }
    }
    let product_pair = r.names("product.pair", "phi,psi", 2);
    let product_banach_slack = r.f64("product.banach_slack", 1e-9);
    let poisson_triple = r.names("poisson.triple", "f,g,h", 3);
    let poisson_step = r.f64("poisson.step", 1e-3);
    let poisson_antisymmetry_tolerance = r.f64("poisson.antisymmetry_tolerance", 1e-12);
    let poisson_leibniz_tolerance = r.f64("poisson.leibniz_tolerance", 1e-8);
    let poisson_jacobi_tolerance = r.f64("poisson.jacobi_tolerance", 1e-5);
    let quantize_symbol = r.names("quantize.symbol", "f", 1).remove(0);
    let quantize_tolerance = r.f64("quantize.tolerance", 1e-10);
    let gauge_check_symbol = r.names("gauge_check.symbol", "f", 1).remove(0);
    let gauge_check_tolerance = r.f64("gauge_check.tolerance", 1e-7);
    let converge_pair = r.names("converge.pair", "phi,psi", 2);
    let conditions = r.string("converge.conditions", "von_neumann,dirac");
    let mut converge_von_neumann = false;
    let mut converge_dirac = false;
    for c in conditions.split(',').map(str::trim) {
        match c {
            "von_neumann" => converge_von_neumann = true,
            "dirac" => converge_dirac = true,
            other => r.range("converge.conditions", format!("unknown condition `{other}`")),
        }
    }
    let rieffel_symbol = r.names("rieffel.symbol", "f", 1).remove(0);
    let rieffel_gap_tolerance = r.f64("rieffel.gap_tolerance", 0.1);
    for (key, v) in [
        ("flux.scale", flux_scale),
        ("flux.tolerance", flux_tolerance),
        ("cocycle.scale", cocycle_scale),
        ("cocycle.tolerance", cocycle_tolerance),
        ("poisson.step", poisson_step),
        ("poisson.antisymmetry_tolerance", poisson_antisymmetry_tolerance),
        ("poisson.leibniz_tolerance", poisson_leibniz_tolerance),
        ("poisson.jacobi_tolerance", poisson_jacobi_tolerance),
        ("quantize.tolerance", quantize_tolerance),
        ("gauge_check.tolerance", gauge_check_tolerance),
        ("rieffel.gap_tolerance", rieffel_gap_tolerance),
    ] {
        r.positive(key, v);
    }
    if product_banach_slack < 0.0 {
        r.range("product.banach_slack", "must be >= 0");
    }
    for (key, names) in [
        ("converge.pair", &converge_pair),
        ("product.pair", &product_pair),
    ] {
        for name in names {
            if let Some(spec) = symbols.get(name) {
                if spec.family == SymbolFamily::Multiplication {
                    r.range(key, format!("`{name}` must be a gaussian symbol to have a smooth kernel"));
                }
            }
        }
    }

    let path = r.string("output.path", "");
    let plots = r.bool("output.plots", false);
    let timing = r.bool("output.timing", false);
    let matrix_path = r.string("output.matrix", "");

    r.finish_unknown();
    if !r.issues.is_empty() {
        return Err(ConfigErrors(r.issues));
    }
    let to_path = |s: String| if s.is_empty() { None } else { Some(PathBuf::from(s)) };
    let pair = |v: Vec<String>| (v[0].clone(), v[1].clone());
    Ok(RunConfig {
        dim,
        grid_l,
        grid_n,
        grid_q_l,
        grid_q_n,
        wave_l,
        wave_n,
        quad_order,
        field,
        gauge,
        chi,
        symbols,
        hbar,
        ladder,
        hbar_list,
        seed,
        flux_draws,
        flux_scale,
        flux_tolerance,
        cocycle_draws,
        cocycle_scale,
        cocycle_tolerance,
        product_pair: pair(product_pair),
        product_banach_slack,
        poisson_triple: [poisson_triple[0].clone(), poisson_triple[1].clone(), poisson_triple[2].clone()],
        poisson_step,
        poisson_antisymmetry_tolerance,
        poisson_leibniz_tolerance,
        poisson_jacobi_tolerance,
        quantize_symbol,
        quantize_tolerance,
        gauge_check_symbol,
        gauge_check_tolerance,
        converge_pair: pair(converge_pair),
        converge_von_neumann,
        converge_dirac,
        rieffel_symbol,
        rieffel_gap_tolerance,
        output: OutputConfig { path: to_path(path), plots, timing, matrix: to_path(matrix_path) },
        effective: r.effective,
    })
}

/// The subcommands of the tool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Triangle fluxes against Stokes circulations at random triangles.
    Flux,
    /// The 2-cocycle identity at random points.
    CocycleCheck,
    /// Samples of the twisted product of two symbols.
    Product,
    /// Antisymmetry, Leibniz and Jacobi residuals of the magnetic Poisson bracket.
    PoissonCheck,
    /// Operator norm and self-adjointness of a quantized symbol.
    Quantize,
    /// Gauge-covariance residuals of a quantized symbol.
    GaugeCheck,
    /// Von Neumann and Dirac residual curves along the hbar ladder.
    Converge,
    /// Operator norms along the hbar ladder with the classical endpoint.
    Rieffel,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Flux => "flux",
            Command::CocycleCheck => "cocycle-check",
            Command::Product => "product",
            Command::PoissonCheck => "poisson-check",
            Command::Quantize => "quantize",
            Command::GaugeCheck => "gauge-check",
            Command::Converge => "converge",
            Command::Rieffel => "rieffel",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "magweyl", version, about = "Magnetic Weyl calculus experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// CSV destination; overrides `output.path`. Standard output when neither is set.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

/// A CSV table plus the plots derived from it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Trailing `# key=value` lines.
    pub notes: Vec<(String, String)>,
    /// Named violated invariants with details.
    pub violations: Vec<(String, String)>,
    pub plots: Vec<Plot>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub name: String,
    pub title: String,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
    pub log_x: bool,
    pub log_y: bool,
}

impl Report {
    fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), ..Self::default() }
    }

    fn note(&mut self, key: &str, value: impl fmt::Display) {
        self.notes.push((key.into(), value.to_string()));
    }

    fn check(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        if !ok {
            self.violations.push((name.into(), detail.into()));
        }
    }
}

/// Formats with 17 significant digits; `nan`, `inf`, `-inf` for non-finite values.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Renders the CSV text of `report` for `command` under `config`.
pub fn render_csv(command: Command, config: &RunConfig, report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# magweyl {} subcommand={}", env!("CARGO_PKG_VERSION"), command.name());
    let _ = writeln!(out, "# config_sha256={}", config.hash());
    for (k, v) in &config.effective {
        let _ = writeln!(out, "# config {k} = {v}");
    }
    let _ = writeln!(out, "{}", report.columns.join(","));
    for row in &report.rows {
        let line: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    for (k, v) in &report.notes {
        let _ = writeln!(out, "# {k}={v}");
    }
    for (k, v) in &report.violations {
        let _ = writeln!(out, "# violated {k}: {v}");
    }
    out
}

/// A minimal SVG line chart; non-positive values are dropped on logarithmic axes.
pub fn render_svg(plot: &Plot) -> String {
    let (w, h, margin) = (640.0, 420.0, 60.0);
    let tx = |v: f64| if plot.log_x { v.log10() } else { v };
    let ty = |v: f64| if plot.log_y { v.log10() } else { v };
    let keep = |&(x, y): &(f64, f64)| (!plot.log_x || x > 0.0) && (!plot.log_y || y > 0.0) && x.is_finite() && y.is_finite();
    let points: Vec<Vec<(f64, f64)>> =
        plot.series.iter().map(|(_, s)| s.iter().filter(|p| keep(p)).map(|&(x, y)| (tx(x), ty(y))).collect()).collect();
    let all: Vec<(f64, f64)> = points.iter().flatten().copied().collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if all.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| margin + (x - x0) / (x1 - x0) * (w - 2.0 * margin);
    let py = |y: f64| h - margin - (y - y0) / (y1 - y0) * (h - 2.0 * margin);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#, w / 2.0, plot.title);
    let _ = writeln!(
        svg,
        r#"<rect x="{margin}" y="{margin}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * margin,
        h - 2.0 * margin
    );
    let axis = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3}") };
    let _ = writeln!(svg, r#"<text x="{margin}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#, h - margin + 16.0, axis(x0, plot.log_x));
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
        w - margin,
        h - margin + 16.0,
        axis(x1, plot.log_x)
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#, margin - 4.0, h - margin, axis(y0, plot.log_y));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#, margin - 4.0, margin + 10.0, axis(y1, plot.log_y));
    for (i, ((name, _), pts)) in plot.series.iter().zip(&points).enumerate() {
        let color = colors[i % colors.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{name}</text>"#,
            margin + 10.0,
            margin + 18.0 + 16.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn run_flux(config: &RunConfig) -> crate::Result<Report> {
    let field = config.magnetic_field()?;
    let potential = config.potential(&field)?;
    let rule = config.quadrature();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = Report::new(&["draw", "flux", "circulation", "stokes_residual"]);
    let mut worst: f64 = 0.0;
    for draw in 0..config.flux_draws {
        let a = random_point(&mut rng, config.dim, config.flux_scale);
        let b = random_point(&mut rng, config.dim, config.flux_scale);
        let c = random_point(&mut rng, config.dim, config.flux_scale);
        let flux = triangle_flux(&field, &a, &b, &c, &rule)?;
        let loop_sum = circulation(&potential, &a, &b, &rule) + circulation(&potential, &b, &c, &rule) + circulation(&potential, &c, &a, &rule);
        let residual = (flux - loop_sum).abs();
        worst = worst.max(residual);
        report.rows.push(vec![draw as f64, flux, loop_sum, residual]);
    }
    report.note("max_stokes_residual", format_value(worst));
    report.check("stokes", worst <= config.flux_tolerance, format!("max residual {worst:e} > {:e}", config.flux_tolerance));
    Ok(report)
}

fn run_cocycle(config: &RunConfig) -> crate::Result<Report> {
    let field = config.magnetic_field()?;
    let rule = config.quadrature();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = Report::new(&["draw", "residual"]);
    let mut worst: f64 = 0.0;
    let mut curve = Vec::new();
    for draw in 0..config.cocycle_draws {
        let q = random_point(&mut rng, config.dim, config.cocycle_scale);
        let x = random_point(&mut rng, config.dim, config.cocycle_scale);
        let y = random_point(&mut rng, config.dim, config.cocycle_scale);
        let z = random_point(&mut rng, config.dim, config.cocycle_scale);
        let residual = check_cocycle_identity(&field, config.hbar, &q, &x, &y, &z, &rule)?;
        worst = worst.max(residual);
        report.rows.push(vec![draw as f64, residual]);
        curve.push((draw as f64, residual));
    }
    report.note("max_residual", format_value(worst));
    report.check("cocycle_identity", worst <= config.cocycle_tolerance, format!("max residual {worst:e} > {:e}", config.cocycle_tolerance));
    report.plots.push(Plot { name: "cocycle".into(), title: "cocycle identity residual per draw".into(), series: vec![("residual".into(), curve)], log_x: false, log_y: true });
    Ok(report)
}

fn run_product(config: &RunConfig) -> crate::Result<Report> {
    let field = config.magnetic_field()?;
    let grid = config.product_grid();
    let (a, b) = &config.product_pair;
    let phi = config.symbol(a).kernel()?;
    let psi = config.symbol(b).kernel()?;
    let ctx = ProductContext::new(field, config.hbar, grid.clone(), config.quadrature())?;
    let product = twisted_product(&phi, &psi, &ctx)?;
    let n = config.dim;
    let mut columns: Vec<String> = (1..=n).map(|i| format!("q_{i}")).collect();
    columns.extend((1..=n).map(|i| format!("x_{i}")));
    columns.push("re".into());
    columns.push("im".into());
    let mut report = Report { columns, ..Report::default() };
    let (mut q, mut x) = ([0.0; MAX_DIM], [0.0; MAX_DIM]);
    for iq in 0..grid.q.len() {
        grid.q.point(iq, &mut q);
        for ix in 0..grid.x.len() {
            grid.x.point(ix, &mut x);
            let v = product.get(iq, ix);
            let mut row: Vec<f64> = q[..n].to_vec();
            row.extend_from_slice(&x[..n]);
            row.push(v.re);
            row.push(v.im);
            report.rows.push(row);
        }
    }
    let norm = norm_l1a(&product);
    let bound = norm_l1a(&sample_kernel(&phi, &grid)?) * norm_l1a(&sample_kernel(&psi, &grid)?);
    report.note("product_norm_l1", format_value(norm));
    report.note("factor_norm_bound", format_value(bound));
    report.check(
        "banach_inequality",
        norm <= bound * (1.0 + config.product_banach_slack),
        format!("‖φ⋄ψ‖₁ = {norm:e} exceeds ‖φ‖₁‖ψ‖₁ = {bound:e}"),
    );
    Ok(report)
}

fn run_poisson(config: &RunConfig) -> crate::Result<Report> {
    let field = config.magnetic_field()?;
    let [a, b, c] = &config.poisson_triple;
    let (f, g, h) = (config.symbol(a).phase()?, config.symbol(b).phase()?, config.symbol(c).phase()?);
    let axioms = check_poisson_axioms(f.as_ref(), g.as_ref(), h.as_ref(), &field, &config.product_grid(), config.poisson_step)?;
    let mut report = Report::new(&["invariant", "residual", "tolerance"]);
    for (i, (name, value, tol)) in [
        ("antisymmetry", axioms.antisymmetry, config.poisson_antisymmetry_tolerance),
        ("leibniz", axioms.leibniz, config.poisson_leibniz_tolerance),
        ("jacobi", axioms.jacobi, config.poisson_jacobi_tolerance),
    ]
    .into_iter()
    .enumerate()
    {
        report.rows.push(vec![i as f64, value, tol]);
        report.note(&format!("invariant_{i}"), name);
        report.check(name, value <= tol, format!("residual {value:e} > {tol:e}"));
    }
    Ok(report)
}

fn run_quantize(config: &RunConfig) -> crate::Result<Report> {
    let field = config.magnetic_field()?;
    let potential = config.potential(&field)?;
    let rule = config.quadrature();
    let grid = config.wave_grid();
    let f = config.symbol(&config.quantize_symbol).phase()?;
    let mut report = Report::new(&["hbar", "operator_norm", "adjoint_residual", "frobenius_norm"]);
    for (i, &h) in config.hbar_list.iter().enumerate() {
        let op = op_operator(f.as_ref(), &potential, h, &grid, &rule)?;
        let norm = operator_norm(&op.matrix)?;
        let adjoint = op.adjoint_residual();
        report.rows.push(vec![h, norm, adjoint, op.frobenius_norm()]);
        report.check("self_adjointness", adjoint <= config.quantize_tolerance, format!("hbar {h}: residual {adjoint:e}"));
        if i == 0 {
            if let Some(path) = &config.output.matrix {
                let file = std::fs::File::create(path).map_err(|e| Error::Domain(format!("cannot write {}: {e}", path.display())))?;
                write_operator(&op.matrix, std::io::BufWriter::new(file)).map_err(|e| Error::Domain(e.to_string()))?;
                report.note("matrix_dump", path.display());
            }
        }
    }
    Ok(report)
}

fn run_gauge_check(config: &RunConfig) -> crate::Result<Report> {
    let field = config.magnetic_field()?;
    let potential = config.potential(&field)?;
    let chi = config.gauge_function()?;
    let rule = config.quadrature();
    let grid = config.wave_grid();
    let f = config.symbol(&config.gauge_check_symbol).phase()?;
    // the transformed potential must still generate the same field
    gauge_transform(&potential, &chi)?;
    let mut report = Report::new(&["hbar", "residual"]);
    for &h in &config.hbar_list {
        let residual = check_gauge_covariance(f.as_ref(), &potential, &chi, h, &grid, &rule)?;
        report.rows.push(vec![h, residual]);
        report.check("gauge_covariance", residual <= config.gauge_check_tolerance, format!("hbar {h}: residual {residual:e}"));
    }
    Ok(report)
}

fn fit_note(report: &mut Report, key: &str, fit: &Option<crate::Result<OrderFit>>) {
    match fit {
        Some(Ok(OrderFit::Slope { slope, intercept, slope_stderr, rows_used, .. })) => {
            report.note(&format!("{key}_slope"), format_value(*slope));
            report.note(&format!("{key}_slope_stderr"), format_value(*slope_stderr));
            report.note(&format!("{key}_intercept"), format_value(*intercept));
            report.note(&format!("{key}_fit_rows"), rows_used);
        }
        Some(Ok(OrderFit::Exact)) => report.note(&format!("{key}_slope"), "exact"),
        Some(Err(e)) => report.note(&format!("{key}_slope"), format!("unavailable ({e})")),
        None => {}
    }
}

fn run_converge(config: &RunConfig) -> crate::Result<Report> {
    let field = config.magnetic_field()?;
    let (a, b) = &config.converge_pair;
    let phi = config.symbol(a).kernel()?;
    let psi = config.symbol(b).kernel()?;
    let ctx = ProductContext::new(field, config.ladder[0], config.product_grid(), config.quadrature())?;
    let sweep_config = SweepConfig {
        ladder: config.ladder.clone(),
        von_neumann: config.converge_von_neumann,
        dirac: config.converge_dirac,
        timing: config.output.timing,
    };
    let result = sweep(&phi as &dyn KernelSymbol, &psi, &ctx, &sweep_config)?;
    let vn = result.vn_curve();
    let dirac = result.dirac_curve();
    let slopes = partial_slopes(&vn);
    let mut report = Report::new(&["hbar", "vn_residual", "dirac_residual", "vn_slope_partial", "runtime_s"]);
    for (i, row) in result.rows.iter().enumerate() {
        report.rows.push(vec![
            row.hbar,
            row.vn_residual.unwrap_or(f64::NAN),
            row.dirac_residual.unwrap_or(f64::NAN),
            slopes.get(i).copied().unwrap_or(f64::NAN),
            row.runtime_s.unwrap_or(f64::NAN),
        ]);
    }
    fit_note(&mut report, "vn", &result.vn_fit);
    fit_note(&mut report, "dirac", &result.dirac_fit);
    report.note("domination_envelope", format_value(result.envelope));
    let worst_difference = result.rows.iter().map(|r| r.product_difference).fold(0.0, f64::max);
    report.note("max_product_difference", format_value(worst_difference));
    let realness = result.rows.iter().map(|r| r.realness_defect).fold(0.0, f64::max);
    report.note("max_realness_defect", format_value(realness));
    for row in &result.rows {
        if let Some(single) = row.vn_single {
            report.note(&format!("vn_single_product[{}]", row.hbar), format_value(single));
        }
    }
    report.check("domination_envelope", worst_difference <= result.envelope, format!("difference {worst_difference:e} exceeds {:e}", result.envelope));
    if config.converge_von_neumann && vn.len() >= 3 {
        report.check("von_neumann_decreasing_tail", decreasing_tail(&vn), "the last three residuals do not strictly decrease");
    }
    if config.converge_dirac && dirac.len() >= 3 {
        report.check("dirac_decreasing_tail", decreasing_tail(&dirac), "the last three residuals do not strictly decrease");
    }
    let mut series = Vec::new();
    if !vn.is_empty() {
        series.push(("von Neumann".to_string(), vn));
    }
    if !dirac.is_empty() {
        series.push(("Dirac".to_string(), dirac));
    }
    report.plots.push(Plot { name: "converge".into(), title: "residuals against hbar".into(), series, log_x: true, log_y: true });
    Ok(report)
}

fn run_rieffel(config: &RunConfig) -> crate::Result<Report> {
    let field = config.magnetic_field()?;
    let potential = config.potential(&field)?;
    let spec = config.symbol(&config.rieffel_symbol);
    let f = spec.phase()?;
    let sup = spec.sup_norm();
    let curve = rieffel_curve(f.as_ref(), &potential, &config.ladder, &config.wave_grid(), &config.quadrature(), sup)?;
    let mut report = Report::new(&["hbar", "operator_norm"]);
    for &(h, v) in &curve.rows {
        report.rows.push(vec![h, v]);
    }
    report.rows.push(vec![0.0, sup]);
    report.note("sup_norm", format_value(sup));
    report.note("endpoint_gap", format_value(curve.endpoint_gap()));
    report.note("max_jump", format_value(curve.max_jump()));
    report.note("truncated_hbar", format!("{:?}", curve.truncated));
    let gap = curve.endpoint_gap();
    report.check("rieffel_endpoint_gap", gap < config.rieffel_gap_tolerance * sup, format!("gap {gap:e} >= {} sup|f|", config.rieffel_gap_tolerance));
    let mut points = curve.rows.clone();
    points.push((0.0, sup));
    report.plots.push(Plot { name: "rieffel".into(), title: "operator norm against hbar".into(), series: vec![("norm".into(), points)], log_x: false, log_y: false });
    Ok(report)
}

/// Runs `command` and returns its report.
pub fn execute(command: Command, config: &RunConfig) -> crate::Result<Report> {
    match command {
        Command::Flux => run_flux(config),
        Command::CocycleCheck => run_cocycle(config),
        Command::Product => run_product(config),
        Command::PoissonCheck => run_poisson(config),
        Command::Quantize => run_quantize(config),
        Command::GaugeCheck => run_gauge_check(config),
        Command::Converge => run_converge(config),
        Command::Rieffel => run_rieffel(config),
    }
}

fn plot_path(csv: &Path, name: &str) -> PathBuf {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "magweyl".into());
    csv.with_file_name(format!("{stem}.{name}.svg"))
}

/// Runs `command`, writes the CSV (and plots) and returns the exit code.
pub fn run(command: Command, config: &RunConfig, out: Option<&Path>) -> i32 {
    let report = match execute(command, config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("magweyl {}: {e}", command.name());
            return match e {
                Error::Domain(_) | Error::DimensionMismatch { .. } | Error::Resolution { .. } | Error::OffLattice(_) | Error::Unsupported(_) => EXIT_CONFIG,
                _ => EXIT_INVARIANT,
            };
        }
    };
    let csv = render_csv(command, config, &report);
    let destination = out.map(Path::to_path_buf).or_else(|| config.output.path.clone());
    match &destination {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &csv) {
                eprintln!("magweyl: cannot write {}: {e}", path.display());
                return EXIT_INVARIANT;
            }
            if config.output.plots {
                for plot in &report.plots {
                    let p = plot_path(path, &plot.name);
                    if let Err(e) = std::fs::write(&p, render_svg(plot)) {
                        eprintln!("magweyl: cannot write {}: {e}", p.display());
                    }
                }
            }
        }
        None => {
            print!("{csv}");
            if config.output.plots && !report.plots.is_empty() {
                eprintln!("magweyl: plots need an output path; skipped");
            }
        }
    }
    for (name, detail) in &report.violations {
        eprintln!("invariant violated: {name}: {detail}");
    }
    if report.violations.is_empty() { EXIT_OK } else { EXIT_INVARIANT }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("MAGWEYL_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(0) => {}
            Ok(n) => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            Err(_) => eprintln!("magweyl: ignoring MAGWEYL_THREADS={v}"),
        }
    }
}

/// Entry point shared by the binary: parses arguments, reads the configuration and runs.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    configure_threads();
    let text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("magweyl: cannot read {}: {e}", path.display());
                return EXIT_CONFIG;
            }
        },
        None => String::new(),
    };
    let config = match parse_config(&text) {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("{errors}");
            return EXIT_CONFIG;
        }
    };
    run(cli.command, &config, cli.out.as_deref())
}
