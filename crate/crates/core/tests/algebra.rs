use magweyl::algebra::*;
use magweyl::geometry::{MagneticField, QuadratureRule, VectorPotential};
use magweyl::quantization::{dequantize, op_operator, WavefunctionGrid};
use magweyl::symbols::*;
use magweyl::C64;
use std::f64::consts::PI;

fn grid(q_l: f64, q_n: usize, x_l: f64, x_n: usize) -> SymbolGrid {
    SymbolGrid::new(Grid::new(2, q_l, q_n).unwrap(), Grid::new(2, x_l, x_n).unwrap()).unwrap()
}

fn default_grid() -> SymbolGrid {
    grid(2.0, 4, 8.0, 32)
}

fn gauss(amp: f64, alpha: f64, q0: [f64; 2], beta: f64) -> GaussianSymbol {
    GaussianSymbol::real_even(amp, alpha, q0.to_vec(), beta).unwrap()
}

/// A complex, non-even kernel with a displaced centre and a plane-wave factor.
fn skewed(amp: f64, alpha: f64, q0: [f64; 2], beta: f64, x0: [f64; 2], k0: [f64; 2]) -> GaussianSymbol {
    GaussianSymbol::new(QProfile::gaussian(amp, alpha, q0.to_vec()).unwrap(), beta, x0.to_vec(), k0.to_vec()).unwrap()
}

#[test]
fn twisted_product_matches_a_denser_independent_sum() {
    let g = default_grid();
    let b12 = 0.5;
    let hbar = 0.5;
    let ctx = ProductContext::new(MagneticField::constant_2d(b12), hbar, g.clone(), QuadratureRule::default()).unwrap();
    let phi = skewed(1.0, 0.5, [0.2, 0.0], 0.5, [0.3, 0.0], [0.0, 0.4]);
    let psi = gauss(1.0, 0.3, [-0.3, 0.1], 0.8);
    let product = twisted_product(&phi, &psi, &ctx).unwrap();

    // the constant-field phase is ħ·B₁₂(y₁d₂ − y₂d₁)/2 with d = x − y
    let fine = Grid::new(2, 8.0, 64).unwrap();
    let ys = fine.points();
    let mut oracle = KernelSamples::zeros(g.clone());
    let (mut q, mut x) = ([0.0; 2], [0.0; 2]);
    let nx = g.x.len();
    for iq in 0..g.q.len() {
        g.q.point(iq, &mut q);
        for ix in 0..nx {
            g.x.point(ix, &mut x);
            let mut acc = C64::new(0.0, 0.0);
            for y in ys.chunks(2) {
                let d = [x[0] - y[0], x[1] - y[1]];
                let q1 = [q[0] - 0.5 * hbar * d[0], q[1] - 0.5 * hbar * d[1]];
                let q2 = [q[0] + 0.5 * hbar * y[0], q[1] + 0.5 * hbar * y[1]];
                let omega = 0.5 * b12 * (y[0] * d[1] - y[1] * d[0]);
                acc += phi.eval(&q1, y) * psi.eval(&q2, &d) * C64::from_polar(1.0, -hbar * omega);
            }
            oracle.values_mut()[iq * nx + ix] = acc * fine.cell_volume();
        }
    }
    let diff = norm_l1a(&product.sub(&oracle).unwrap());
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn classical_product_of_separable_gaussians() {
    // a(q)u(x) ⋄⁰ b(q)v(x) = a(q)b(q)(u∗v)(x), and for Gaussians
    // (u∗v)(x) = π/(β₁+β₂) · e^{−β₁β₂|x − x₁ − x₂|²/(β₁+β₂)}
    let g = grid(2.0, 4, 8.0, 32);
    let (b1, b2) = (0.6, 0.9);
    let (x1, x2) = ([0.4, -0.2], [-0.1, 0.3]);
    let pa = QProfile::gaussian(1.2, 0.4, vec![0.1, 0.0]).unwrap();
    let pb = QProfile::gaussian(0.7, 0.2, vec![-0.3, 0.2]).unwrap();
    let phi = GaussianSymbol::new(pa.clone(), b1, x1.to_vec(), vec![0.0; 2]).unwrap();
    let psi = GaussianSymbol::new(pb.clone(), b2, x2.to_vec(), vec![0.0; 2]).unwrap();
    let c = classical_product(&phi, &psi, &g).unwrap();
    let (mut q, mut x) = ([0.0; 2], [0.0; 2]);
    let mut worst: f64 = 0.0;
    for iq in 0..g.q.len() {
        g.q.point(iq, &mut q);
        for ix in 0..g.x.len() {
            g.x.point(ix, &mut x);
            if !g.x.in_inner_half(&x) {
                continue;
            }
            let r2 = (x[0] - x1[0] - x2[0]).powi(2) + (x[1] - x1[1] - x2[1]).powi(2);
            let exact = pa.value(&q) * pb.value(&q) * PI / (b1 + b2) * (-b1 * b2 * r2 / (b1 + b2)).exp();
            worst = worst.max((c.get(iq, ix) - exact).norm());
        }
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn unit_gaussian_self_convolution() {
    // u = e^{−x²/2} per axis gives √π e^{−x²/4} per axis
    let g = grid(1.0, 2, 8.0, 32);
    let u = gauss(1.0, 0.0, [0.0, 0.0], 0.5);
    let c = classical_product(&u, &u, &g).unwrap();
    let mut x = [0.0; 2];
    let mut worst: f64 = 0.0;
    for ix in 0..g.x.len() {
        g.x.point(ix, &mut x);
        let exact = PI.sqrt() * (-x[0] * x[0] / 4.0).exp() * PI.sqrt() * (-x[1] * x[1] / 4.0).exp();
        if g.x.in_inner_half(&x) {
            worst = worst.max((c.get(1, ix) - exact).norm());
        }
    }
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn small_hbar_product_is_close_to_the_classical_product() {
    let g = default_grid();
    let phi = gauss(1.0, 0.5, [0.2, 0.0], 0.5);
    let psi = gauss(1.0, 0.3, [-0.3, 0.1], 1.0);
    let bound = norm_l1a(&sample_kernel(&phi, &g).unwrap()) * norm_l1a(&sample_kernel(&psi, &g).unwrap());
    for field in [MagneticField::constant_2d(1.0), MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.5).unwrap()] {
        let ctx = ProductContext::new(field, 1e-3, g.clone(), QuadratureRule::gauss_legendre(8).unwrap()).unwrap();
        let t = twisted_product(&phi, &psi, &ctx).unwrap();
        let c = classical_product(&phi, &psi, &g).unwrap();
        let diff = norm_l1a(&t.sub(&c).unwrap());
        assert!(diff < 1e-2 * bound, "{diff} vs {bound}");
    }
}

#[test]
fn zero_field_moyal_product_matches_composition_of_weyl_operators() {
    let hbar = 1.0;
    let g = grid(1.0, 2, 8.0, 32);
    let ctx = ProductContext::new(MagneticField::zero(2).unwrap(), hbar, g.clone(), QuadratureRule::default()).unwrap();
    let f = GaussianPhase::new(QProfile::gaussian(1.0, 0.5, vec![0.2, 0.0]).unwrap(), 0.5, vec![0.3, 0.0]).unwrap();
    let h = GaussianPhase::new(QProfile::gaussian(0.8, 0.3, vec![-0.2, 0.1]).unwrap(), 0.4, vec![0.0, -0.2]).unwrap();
    let moyal = moyal_product(&f, &h, &ctx).unwrap();

    let wave = WavefunctionGrid::new(Grid::new(2, 4.0, 32).unwrap());
    let rule = QuadratureRule::default();
    let a = VectorPotential::zero(2);
    let composed = op_operator(&f, &a, hbar, &wave, &rule).unwrap().compose(&op_operator(&h, &a, hbar, &wave, &rule).unwrap());
    let momenta = g.x.dual_points();
    let (mut q, mut w) = ([0.0; 2], [0.0; 2]);
    let mut worst: f64 = 0.0;
    for iq in 0..g.q.len() {
        g.q.point(iq, &mut q);
        let node = wave.grid().node_index(&q, 1e-9).expect("q nodes lie on the wavefunction grid");
        wave.grid().point(node, &mut w);
        let symbol = dequantize(&composed, &a, &wave, &rule, &[node], &momenta);
        for (ip, v) in symbol.iter().enumerate() {
            worst = worst.max((v - moyal.get(iq, ip)).norm());
        }
    }
    let scale = sup_norm(&moyal);
    assert!(worst / scale < 1e-4, "{} / {scale}", worst);
}

#[test]
fn flat_cutoff_acts_as_an_approximate_unit() {
    let g = grid(2.0, 4, 8.0, 32);
    let ctx = ProductContext::new(MagneticField::constant_2d(0.5), 0.5, g.clone(), QuadratureRule::default()).unwrap();
    let f = GaussianPhase::new(QProfile::gaussian(1.0, 0.5, vec![0.2, 0.0]).unwrap(), 0.5, vec![0.3, 0.0]).unwrap();
    let cutoff = Multiplication::new(QProfile::gaussian(1.0, 1e-4, vec![0.0; 2]).unwrap());
    let reference = sample_phase(&f, &g).unwrap();
    let dual = g.x.dual_points();
    let (mut q, nq, np) = ([0.0; 2], g.q.len(), g.x.len());
    for product in [moyal_product(&f, &cutoff, &ctx).unwrap(), moyal_product(&cutoff, &f, &ctx).unwrap()] {
        let mut worst: f64 = 0.0;
        for iq in 0..nq {
            g.q.point(iq, &mut q);
            if !g.q.in_inner_half(&q) {
                continue;
            }
            for ip in 0..np {
                if g.x.in_inner_half(&dual[2 * ip..2 * ip + 2]) {
                    worst = worst.max((product.get(iq, ip) - reference.get(iq, ip)).norm());
                }
            }
        }
        assert!(worst < 1e-3, "{worst}");
    }
}

#[test]
fn moyal_product_matches_the_direct_phase_space_quadrature() {
    let hbar = 1.0;
    let field = MagneticField::constant_2d(0.5);
    let g = grid(1.0, 2, 8.0, 32);
    let rule = QuadratureRule::default();
    let ctx = ProductContext::new(field.clone(), hbar, g.clone(), rule.clone()).unwrap();
    let f = GaussianPhase::new(QProfile::gaussian(1.0, 0.5, vec![0.2, 0.0]).unwrap(), 0.5, vec![0.3, 0.0]).unwrap();
    let h = GaussianPhase::new(QProfile::gaussian(0.8, 0.3, vec![-0.2, 0.1]).unwrap(), 0.4, vec![0.0, -0.2]).unwrap();
    let moyal = moyal_product(&f, &h, &ctx).unwrap();
    let positions = Grid::new(2, 4.0, 16).unwrap();
    let momenta = Grid::new(2, 4.0, 16).unwrap();
    let scale = sup_norm(&moyal);
    let (mut q, mut p) = ([0.0; 2], [0.0; 2]);
    // dual node (m₁, m₂) sits at ((m₁ − 16)π/8, (m₂ − 16)π/8)
    for (iq, m) in [(3, [17, 16]), (0, [16, 16]), (1, [18, 15]), (2, [14, 17])] {
        let ip = m[0] * 32 + m[1];
        g.q.point(iq, &mut q);
        g.x.dual_point(ip, &mut p);
        let direct = moyal_direct(&f, &h, &field, hbar, &q, &p, &positions, &momenta, &rule).unwrap();
        let rel = (direct - moyal.get(iq, ip)).norm() / scale;
        assert!(rel < 1e-3, "q={q:?} p={p:?}: {rel}");
    }
}

#[test]
fn involution_properties() {
    let g = default_grid();
    let phi = skewed(1.0, 0.2, [0.0, 0.3], 0.5, [0.3, 0.1], [0.5, -0.2]);
    let once = involution(&phi);
    let twice = involution(&once);
    let (q, x) = ([0.3, -0.2], [1.1, 0.4]);
    assert_eq!(twice.eval(&q, &x), phi.eval(&q, &x));
    let even = gauss(1.0, 0.2, [0.0, 0.0], 0.5);
    assert_eq!(involution(&even).eval(&q, &x), even.eval(&q, &x));
    // the grid misses the +L node, so the reflected norm agrees only to tail size
    let n1 = norm_l1a(&sample_kernel(&phi, &g).unwrap());
    let n2 = norm_l1a(&sample_kernel(&involution(&phi), &g).unwrap());
    assert!((n1 - n2).abs() < 1e-10 * n1, "{n1} {n2}");
}

#[test]
fn involution_reverses_products() {
    let g = default_grid();
    for field in [MagneticField::constant_2d(1.0), MagneticField::gaussian_bump_2d(1.0, [0.2, 0.0], 1.5).unwrap()] {
        let ctx = ProductContext::new(field, 0.5, g.clone(), QuadratureRule::gauss_legendre(8).unwrap()).unwrap();
        let phi = skewed(1.0, 0.5, [0.2, 0.0], 0.6, [0.3, 0.0], [0.0, 0.4]);
        let psi = skewed(0.8, 0.3, [-0.3, 0.1], 0.8, [0.0, -0.2], [0.3, 0.0]);
        let lazy = LazyTwisted::new(&phi, &psi, &ctx).unwrap();
        let left = sample_kernel(&involution(&lazy), &g).unwrap();
        let right = twisted_product(&involution(&psi), &involution(&phi), &ctx).unwrap();
        let diff = norm_l1a(&left.sub(&right).unwrap());
        assert!(diff < 1e-8, "{diff}");
    }
}

#[test]
fn banach_inequality_holds() {
    let g = default_grid();
    let pairs = [
        (gauss(1.0, 0.5, [0.2, 0.0], 0.5), gauss(1.0, 0.3, [-0.3, 0.1], 1.0)),
        (skewed(1.0, 0.5, [0.2, 0.0], 0.6, [0.3, 0.0], [0.0, 0.4]), skewed(0.8, 0.3, [-0.3, 0.1], 0.8, [0.0, -0.2], [0.3, 0.0])),
    ];
    for field in [MagneticField::zero(2).unwrap(), MagneticField::constant_2d(1.0), MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.5).unwrap()] {
        for hbar in [1.0, 0.25] {
            let ctx = ProductContext::new(field.clone(), hbar, g.clone(), QuadratureRule::gauss_legendre(8).unwrap()).unwrap();
            for (phi, psi) in &pairs {
                let lhs = norm_l1a(&twisted_product(phi, psi, &ctx).unwrap());
                let rhs = norm_l1a(&sample_kernel(phi, &g).unwrap()) * norm_l1a(&sample_kernel(psi, &g).unwrap());
                assert!(lhs <= rhs + 1e-6, "{lhs} > {rhs}");
            }
        }
    }
}

fn associativity_defect(x_n: usize) -> f64 {
    let g = grid(1.0, 2, 8.0, x_n);
    let ctx = ProductContext::new(MagneticField::constant_2d(1.0), 0.5, g.clone(), QuadratureRule::default()).unwrap();
    let phi = gauss(1.0, 0.5, [0.2, 0.0], 0.5);
    let psi = gauss(1.0, 0.3, [-0.3, 0.1], 0.5);
    let rho = gauss(0.8, 0.4, [0.0, 0.2], 0.6);
    let left_inner = LazyTwisted::new(&phi, &psi, &ctx).unwrap();
    let right_inner = LazyTwisted::new(&psi, &rho, &ctx).unwrap();
    let left = twisted_product(&left_inner, &rho, &ctx).unwrap();
    let right = twisted_product(&phi, &right_inner, &ctx).unwrap();
    norm_l1a(&left.sub(&right).unwrap())
}

#[test]
fn associativity_improves_under_refinement() {
    let coarse = associativity_defect(8);
    let fine = associativity_defect(16);
    assert!(fine < 1e-4, "{fine}");
    assert!(fine < 0.5 * coarse, "{coarse} -> {fine}");
}

#[test]
fn kernel_bracket_is_the_transported_poisson_bracket() {
    let g = default_grid();
    let f = GaussianPhase::new(QProfile::gaussian(1.0, 0.5, vec![0.2, 0.0]).unwrap(), 0.5, vec![0.3, 0.0]).unwrap();
    let h = GaussianPhase::new(QProfile::gaussian(0.8, 0.3, vec![-0.2, 0.1]).unwrap(), 0.4, vec![0.0, -0.2]).unwrap();
    for field in [MagneticField::zero(2).unwrap(), MagneticField::constant_2d(0.7), MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.5).unwrap()] {
        let phase_side = partial_fourier(&poisson_bracket_b(&f, &h, &field, &g).unwrap(), &g).unwrap();
        let kernel_side = kernel_bracket(f.kernel(), h.kernel(), &field, &g).unwrap();
        let diff = norm_l1a(&phase_side.sub(&kernel_side).unwrap());
        assert!(diff < 1e-6, "{field:?}: {diff}");
        let own = kernel_bracket(f.kernel(), f.kernel(), &field, &g).unwrap();
        assert!(own.max_abs() < 1e-12);
    }
}

#[test]
fn jordan_and_commutator_identities() {
    let g = default_grid();
    let ctx = ProductContext::new(MagneticField::zero(2).unwrap(), 0.5, g.clone(), QuadratureRule::default()).unwrap();
    let a = GaussianSymbol::new(QProfile::constant(2, 1.0), 0.5, vec![0.2, 0.0], vec![0.0, 0.3]).unwrap();
    let b = GaussianSymbol::new(QProfile::constant(2, 0.7), 0.8, vec![0.0, -0.1], vec![0.2, 0.0]).unwrap();
    let (jordan, commutator) = jordan_and_scaled_commutator(&a, &b, &ctx).unwrap();
    assert!(commutator.max_abs() < 1e-12, "{}", commutator.max_abs());
    let ab = twisted_product(&a, &b, &ctx).unwrap();
    assert!(jordan.sub(&ab).unwrap().max_abs() < 1e-12);
}

#[test]
fn product_is_continuous_in_hbar() {
    let g = default_grid();
    let phi = gauss(1.0, 0.5, [0.2, 0.0], 0.5);
    let psi = gauss(1.0, 0.3, [-0.3, 0.1], 1.0);
    let ctx = ProductContext::new(MagneticField::constant_2d(1.0), 0.5, g, QuadratureRule::default()).unwrap();
    let base = twisted_product(&phi, &psi, &ctx).unwrap();
    let gaps: Vec<f64> = [0.25, 0.0625, 0.015625]
        .iter()
        .map(|d| norm_l1a(&twisted_product(&phi, &psi, &ctx.with_hbar(0.5 + d).unwrap()).unwrap().sub(&base).unwrap()))
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

fn poisson_triple() -> (GaussianPhase, GaussianPhase, PolyGaussPhase) {
    let f = GaussianPhase::new(QProfile::gaussian(1.0, 0.5, vec![0.0; 2]).unwrap(), 8.0, vec![0.0; 2]).unwrap();
    let g = GaussianPhase::new(QProfile::gaussian(1.0, 0.3, vec![0.2, -0.1]).unwrap(), 0.5, vec![0.1, 0.0]).unwrap();
    let poly = Polynomial::new(4, vec![(0.7, vec![0, 0, 0, 0]), (0.3, vec![1, 0, 0, 1]), (-0.2, vec![0, 1, 1, 0])]).unwrap();
    let h = PolyGaussPhase::new(poly, 0.4, vec![-0.2, 0.3], 0.3, vec![0.0, 0.2]).unwrap();
    (f, g, h)
}

#[test]
fn poisson_axioms_for_zero_constant_and_bump_fields() {
    let g = grid(2.0, 4, 4.0, 8);
    let (f, gg, h) = poisson_triple();
    for field in [MagneticField::zero(2).unwrap(), MagneticField::constant_2d(0.7), MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.5).unwrap()] {
        let r = check_poisson_axioms(&f, &gg, &h, &field, &g, 1e-3).unwrap();
        assert!(r.antisymmetry < 1e-12, "{r:?}");
        assert!(r.leibniz < 1e-8, "{r:?}");
        assert!(r.jacobi < 1e-5, "{r:?}");
    }
}

#[test]
fn jacobi_residual_is_fourth_order_in_the_step() {
    let g = grid(2.0, 4, 4.0, 8);
    let (f, gg, h) = poisson_triple();
    let field = MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.5).unwrap();
    let coarse = check_poisson_axioms(&f, &gg, &h, &field, &g, 0.1).unwrap().jacobi;
    let fine = check_poisson_axioms(&f, &gg, &h, &field, &g, 0.05).unwrap().jacobi;
    let ratio = coarse / fine;
    assert!(ratio > 12.0 && ratio < 20.0, "{coarse} {fine} {ratio}");
}
