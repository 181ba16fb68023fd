use gengeom::grid::{
    ext_deriv, interior, lie_bracket, lie_form, mul_scalar, wedge, AffineDiffeo, Field, KForm, ScalarField,
    SymTensor2, TorusGrid, VectorField,
};
use gengeom::hodge::HodgeContext;
use gengeom::rng::Stream;
use gengeom::symmetry::GroupElement;
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn t3() -> TorusGrid {
    TorusGrid::new(3, 8).unwrap()
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(12)
}

fn signed_permutation(rng: &mut Stream) -> Vec<Vec<i64>> {
    let mut perm = vec![0, 1, 2];
    for i in (1..3).rev() {
        perm.swap(i, rng.index(i + 1));
    }
    (0..3)
        .map(|r| (0..3).map(|c| if perm[r] == c { rng.sign() as i64 } else { 0 }).collect())
        .collect()
}

fn random_element(grid: TorusGrid, odd: bool, rng: &mut Stream) -> GroupElement {
    let shift = (0..3).map(|_| rng.index(grid.res()) as i64).collect();
    let phi = AffineDiffeo::new(grid, signed_permutation(rng), shift).unwrap();
    let a = odd.then(|| KForm::random(grid, 1, 1, rng));
    GroupElement::new(phi, KForm::random(grid, 2, 1, rng), a).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn exterior_derivative_squares_to_zero(seed in any::<u64>(), k in 0usize..2) {
        let mut rng = Stream::new(seed, 0);
        let w = KForm::random(t3(), k, 3, &mut rng);
        let dd = ext_deriv(&ext_deriv(&w).unwrap()).unwrap();
        prop_assert!(dd.max_abs() < TOL * (1.0 + w.max_abs()));
    }

    #[test]
    fn graded_leibniz_rule(seed in any::<u64>(), p in 0usize..2) {
        let grid = t3();
        let mut rng = Stream::new(seed, 1);
        let a = KForm::random(grid, p, 2, &mut rng);
        let b = KForm::random(grid, 1, 2, &mut rng);
        let lhs = ext_deriv(&wedge(&a, &b).unwrap()).unwrap();
        let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
        let mut rhs = wedge(&ext_deriv(&a).unwrap(), &b).unwrap();
        rhs.axpy(sign, &wedge(&a, &ext_deriv(&b).unwrap()).unwrap());
        prop_assert!(lhs.minus(&rhs).max_abs() < TOL);
    }

    #[test]
    fn lie_derivative_of_one_form_matches_coordinates(seed in any::<u64>()) {
        let grid = t3();
        let mut rng = Stream::new(seed, 2);
        let u = VectorField::random(grid, 2, &mut rng);
        let alpha = KForm::random(grid, 1, 2, &mut rng);
        let cartan = lie_form(&u, &alpha).unwrap();
        for i in 0..3 {
            let mut expected = ScalarField::zeros(grid);
            for k in 0..3 {
                let transport = mul_scalar(&u.scalar(k), &alpha.scalar(i).partial(k)).unwrap();
                let stretch = mul_scalar(&alpha.scalar(k), &u.scalar(k).partial(i)).unwrap();
                expected.axpy(1.0, &transport.plus(&stretch));
            }
            let got = cartan.scalar(i);
            prop_assert!(got.minus(&expected).max_abs() < TOL);
        }
    }

    #[test]
    fn lie_bracket_satisfies_jacobi(seed in any::<u64>()) {
        let grid = t3();
        let mut rng = Stream::new(seed, 3);
        let [u, v, w] = [(); 3].map(|_| VectorField::random(grid, 1, &mut rng));
        let uv = lie_bracket(&u, &v).unwrap();
        let vu = lie_bracket(&v, &u).unwrap();
        prop_assert!(uv.plus(&vu).max_abs() < TOL);
        let cyc = lie_bracket(&u, &lie_bracket(&v, &w).unwrap()).unwrap()
            .plus(&lie_bracket(&v, &lie_bracket(&w, &u).unwrap()).unwrap())
            .plus(&lie_bracket(&w, &lie_bracket(&u, &v).unwrap()).unwrap());
        prop_assert!(cyc.max_abs() < 1e-8);
    }

    #[test]
    fn interior_product_anticommutes(seed in any::<u64>()) {
        let grid = t3();
        let mut rng = Stream::new(seed, 4);
        // band 1 keeps the nested products inside the band, so no truncation
        let u = VectorField::random(grid, 1, &mut rng);
        let v = VectorField::random(grid, 1, &mut rng);
        let h = KForm::random(grid, 3, 1, &mut rng);
        let uv = interior(&u, &interior(&v, &h).unwrap()).unwrap();
        let vu = interior(&v, &interior(&u, &h).unwrap()).unwrap();
        prop_assert!(uv.plus(&vu).max_abs() < TOL);
    }

    #[test]
    fn double_star_is_graded_identity(seed in any::<u64>(), k in 0usize..4) {
        let grid = t3();
        let mut rng = Stream::new(seed, 5);
        let (a, b, c) = (rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3));
        let metric = SymTensor2::constant(grid, &[2.0, a, b, a, 1.5, c, b, c, 1.0]);
        let ctx = HodgeContext::new(metric).unwrap();
        let w = KForm::random(grid, k, 2, &mut rng);
        let ss = ctx.star(&ctx.star(&w).unwrap()).unwrap();
        prop_assert!(ss.minus(&w).max_abs() < TOL);
    }

    #[test]
    fn hodge_parts_reassemble_and_are_orthogonal(seed in any::<u64>(), k in 0usize..4) {
        let grid = t3();
        let ctx = HodgeContext::flat(grid);
        let mut rng = Stream::new(seed, 6);
        let w = KForm::random(grid, k, 3, &mut rng);
        let parts = ctx.hodge_decompose(&w).unwrap();
        let sum = parts.exact.plus(&parts.coexact).plus(&parts.harmonic);
        prop_assert!(sum.minus(&w).max_abs() < TOL);
        let scale = ctx.l2_norm(&w).powi(2).max(1.0);
        for (x, y) in [(&parts.exact, &parts.coexact), (&parts.exact, &parts.harmonic), (&parts.coexact, &parts.harmonic)] {
            prop_assert!(ctx.l2_inner(x, y).unwrap().abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn group_law_is_associative_with_inverses(seed in any::<u64>(), odd in any::<bool>()) {
        let grid = t3();
        let mut rng = Stream::new(seed, 7);
        let [x, y, z] = [(); 3].map(|_| random_element(grid, odd, &mut rng));
        let left = x.compose(&y).unwrap().compose(&z).unwrap();
        let right = x.compose(&y.compose(&z).unwrap()).unwrap();
        prop_assert!(left.distance(&right) < TOL);
        let id = GroupElement::identity(grid, odd);
        prop_assert!(x.compose(&x.inverse().unwrap()).unwrap().distance(&id) < TOL);
        prop_assert!(x.inverse().unwrap().compose(&x).unwrap().distance(&id) < TOL);
    }
}

#[test]
fn derivative_of_plane_wave_is_analytic() {
    let grid = TorusGrid::new(3, 12).unwrap();
    let k = [2.0, -1.0, 3.0];
    let phase = |x: &[f64]| k[0] * x[0] + k[1] * x[1] + k[2] * x[2];
    let f = ScalarField::from_fn(grid, |x| phase(x).sin());
    let df = ext_deriv(&f.as_form()).unwrap();
    for i in 0..3 {
        let expected = ScalarField::from_fn(grid, |x| k[i] * phase(x).cos());
        assert!(df.scalar(i).minus(&expected).max_abs() < 1e-11);
    }
}

#[test]
fn flat_torus_betti_numbers() {
    for (dim, res) in [(2, 8), (3, 8)] {
        let ctx = HodgeContext::flat(TorusGrid::new(dim, res).unwrap());
        for k in 0..=dim {
            let count = ctx.harmonic_basis(k).unwrap().len();
            assert_eq!(count, gengeom::grid::binomial(dim, k), "b_{k} of T^{dim}");
        }
    }
}
