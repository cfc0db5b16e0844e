use magweyl::algebra::{twisted_product, ProductContext};
use magweyl::geometry::{symmetric_gauge, MagneticField, QuadratureRule};
use magweyl::quantization::WavefunctionGrid;
use magweyl::semiclassics::*;
use magweyl::symbols::*;

fn grid() -> SymbolGrid {
    SymbolGrid::new(Grid::new(2, 2.0, 4).unwrap(), Grid::new(2, 8.0, 32).unwrap()).unwrap()
}

fn gauss(amp: f64, alpha: f64, q0: [f64; 2], beta: f64) -> GaussianSymbol {
    GaussianSymbol::real_even(amp, alpha, q0.to_vec(), beta).unwrap()
}

#[test]
fn q_independent_symbols_without_field_have_vanishing_residuals() {
    let ctx = ProductContext::new(MagneticField::zero(2).unwrap(), 1.0, grid(), QuadratureRule::default()).unwrap();
    let a = GaussianSymbol::new(QProfile::constant(2, 1.0), 0.5, vec![0.2, 0.0], vec![0.0, 0.3]).unwrap();
    let b = GaussianSymbol::new(QProfile::constant(2, 0.7), 0.8, vec![0.0, -0.1], vec![0.2, 0.0]).unwrap();
    let result = sweep(&a, &b, &ctx, &SweepConfig::new(geometric_ladder(3)).unwrap()).unwrap();
    for row in &result.rows {
        assert!(row.vn_residual.unwrap() < 1e-10, "{row:?}");
        assert!(row.dirac_residual.unwrap() < 1e-10, "{row:?}");
    }
}

#[test]
fn equal_symbols_have_no_dirac_residual() {
    let phi = gauss(1.0, 0.5, [0.2, 0.0], 0.5);
    for field in [MagneticField::constant_2d(1.0), MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.5).unwrap()] {
        let ctx = ProductContext::new(field, 0.5, grid(), QuadratureRule::gauss_legendre(6).unwrap()).unwrap();
        assert!(residual_dirac(&phi, &phi, &ctx).unwrap() < 1e-10);
    }
}

#[test]
fn constant_field_residuals_decrease_and_product_differences_are_dominated() {
    let base = ProductContext::new(MagneticField::constant_2d(1.0), 1.0, grid(), QuadratureRule::default()).unwrap();
    let phi = gauss(1.0, 0.5, [0.2, 0.0], 0.5);
    let psi = gauss(1.0, 0.3, [-0.3, 0.1], 1.0);
    let result = sweep(&phi, &psi, &base, &SweepConfig::new(geometric_ladder(5)).unwrap()).unwrap();
    assert!(decreasing_tail(&result.vn_curve()));
    assert!(decreasing_tail(&result.dirac_curve()));
    for fit in [&result.vn_fit, &result.dirac_fit] {
        let slope = fit.as_ref().unwrap().as_ref().unwrap().slope().unwrap();
        assert!(slope > 0.8, "{slope}");
    }
    for row in &result.rows {
        assert!(row.product_difference <= result.envelope, "{} > {}", row.product_difference, result.envelope);
        // the Jordan residual is at least as small as a single product's
        assert!(row.vn_residual.unwrap() <= row.vn_single.unwrap() * (1.0 + 1e-12));
    }
}

#[test]
fn residuals_of_real_symbols_are_real_in_phase_space() {
    let phi = gauss(1.0, 0.5, [0.2, 0.0], 0.5);
    let psi = gauss(1.0, 0.3, [-0.3, 0.1], 1.0);
    let fields = [
        (MagneticField::constant_2d(1.0), QuadratureRule::default()),
        (MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.5).unwrap(), QuadratureRule::gauss_legendre(12).unwrap()),
    ];
    let small = SymbolGrid::new(Grid::new(2, 1.0, 2).unwrap(), Grid::new(2, 8.0, 32).unwrap()).unwrap();
    for (field, rule) in fields {
        let ctx = ProductContext::new(field, 1.0, small.clone(), rule).unwrap();
        let config = SweepConfig::new(vec![1.0, 0.5]).unwrap();
        let limit = ClassicalLimit::new(&phi, &psi, &ctx.field, &ctx.grid, true).unwrap();
        for &h in &config.ladder {
            let row = ladder_point(&phi, &psi, &ctx.with_hbar(h).unwrap(), &limit, &config).unwrap();
            assert!(row.realness_defect < 1e-10, "{row:?}");
        }
    }
}

#[test]
fn rieffel_curve_of_a_multiplication_symbol_is_flat() {
    let rule = QuadratureRule::default();
    let a = symmetric_gauge(&MagneticField::constant_2d(0.5)).unwrap();
    let w = WavefunctionGrid::new(Grid::new(2, 2.0, 16).unwrap());
    let f = Multiplication::new(QProfile::gaussian(2.0, 0.5, vec![0.0; 2]).unwrap());
    let curve = rieffel_curve(&f, &a, &geometric_ladder(4), &w, &rule, 2.0).unwrap();
    assert!(curve.truncated.is_empty());
    for (_, norm) in &curve.rows {
        // power iteration stops at relative accuracy 1e-8
        assert!((norm - 2.0).abs() < 1e-7, "{norm}");
    }
    assert!(curve.endpoint_gap() < 1e-7);
    assert!(curve.max_jump() < 1e-7);
}

#[test]
fn rieffel_norms_scale_linearly() {
    let rule = QuadratureRule::default();
    let a = symmetric_gauge(&MagneticField::constant_2d(0.5)).unwrap();
    let w = WavefunctionGrid::new(Grid::new(2, 1.5, 16).unwrap());
    let profile = QProfile::gaussian(1.0, 0.5, vec![0.0; 2]).unwrap();
    let f = GaussianPhase::new(profile.clone(), 2.0, vec![0.0; 2]).unwrap();
    let g = GaussianPhase::new(profile.scaled(-3.0), 2.0, vec![0.0; 2]).unwrap();
    let ladder = [1.0, 0.5];
    let cf = rieffel_curve(&f, &a, &ladder, &w, &rule, 1.0).unwrap();
    let cg = rieffel_curve(&g, &a, &ladder, &w, &rule, 3.0).unwrap();
    for (x, y) in cf.rows.iter().zip(&cg.rows) {
        assert!((3.0 * x.1 - y.1).abs() < 1e-6 * y.1, "{x:?} {y:?}");
    }
}

#[test]
fn rieffel_ladder_drops_unresolvable_hbar() {
    let rule = QuadratureRule::default();
    let a = symmetric_gauge(&MagneticField::constant_2d(0.5)).unwrap();
    let w = WavefunctionGrid::new(Grid::new(2, 2.0, 8).unwrap());
    let f = GaussianPhase::new(QProfile::gaussian(1.0, 0.5, vec![0.0; 2]).unwrap(), 0.5, vec![0.0; 2]).unwrap();
    let curve = rieffel_curve(&f, &a, &geometric_ladder(4), &w, &rule, 1.0).unwrap();
    // Δ = 0.5 and the kernel's x-scale is 1, so ħ below 0.5 is dropped
    assert_eq!(curve.truncated, vec![0.25, 0.125, 0.0625]);
    assert_eq!(curve.rows.len(), 2);
}

#[test]
fn shifted_gradients_and_remainders() {
    let rule = QuadratureRule::default();
    let g = SymbolGrid::new(Grid::new(2, 1.0, 2).unwrap(), Grid::new(2, 2.0, 4).unwrap()).unwrap();
    let phi = gauss(1.0, 0.5, [0.2, 0.0], 0.5);
    assert_eq!(shifted_gradient(&phi, 0.5, &[0.0, 0.0], &[0.1, 0.2], &[0.3, 0.0], 1.0, &rule).unwrap().norm(), 0.0);

    let constant = expansion_diagnostics(&phi, &MagneticField::constant_2d(1.0), 0.5, &g, &rule).unwrap();
    assert!(constant.remainder_max < 1e-12, "{constant:?}");

    let bump = MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.5).unwrap();
    let reports: Vec<ExpansionReport> = geometric_ladder(4)
        .iter()
        .map(|&h| expansion_diagnostics(&phi, &bump, h, &g, &rule).unwrap())
        .collect();
    for w in reports.windows(2) {
        assert!(w[1].remainder_max < w[0].remainder_max, "{reports:?}");
        assert!(w[1].shift_plus_error < w[0].shift_plus_error);
        assert!(w[1].shift_minus_error < w[0].shift_minus_error);
    }
}

#[test]
fn envelope_dominates_direct_product_differences() {
    let g = grid();
    let phi = gauss(1.0, 1.0, [0.0, 0.0], 0.5);
    let psi = gauss(0.8, 0.5, [0.5, -0.5], 0.5);
    let env = domination_envelope(&sample_kernel(&phi, &g).unwrap(), &sample_kernel(&psi, &g).unwrap());
    let bump = MagneticField::gaussian_bump_2d(1.0, [0.0, 0.0], 1.5).unwrap();
    let ctx = ProductContext::new(bump, 1.0, g.clone(), QuadratureRule::gauss_legendre(6).unwrap()).unwrap();
    let classical = magweyl::algebra::classical_product(&phi, &psi, &g).unwrap();
    for h in [1.0, 0.25] {
        let t = twisted_product(&phi, &psi, &ctx.with_hbar(h).unwrap()).unwrap();
        assert!(norm_l1a(&t.sub(&classical).unwrap()) <= env);
    }
}
