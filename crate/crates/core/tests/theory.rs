use dinr::models::{init_model, random_coords, Backbone, Mode, Model, ModelSpec, Solver};
use dinr::theory::gradient::{closed_form_dinr_gradient, JacobianChain};
use dinr::theory::linalg::{determinant, eigen_sym, numerical_rank};
use dinr::theory::lipschitz::{flow_lipschitz_check, lipschitz_estimate, random_pairs};
use dinr::theory::ntk::{empirical_ntk, lognormal_fit, ntk_rank_compare, output_gradient, DEFAULT_PROBE_CAP};
use dinr::theory::rank::rank_propagation_check;
use dinr::theory::riccati::convergence_slope;
use dinr::theory::{rademacher_bound, BoundInputs, BoundVariant};
use dinr::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

fn small_dinr(backbone: Backbone, seed: u64) -> Model {
    let spec = ModelSpec {
        backbone,
        mode: Mode::Dynamical,
        embed_dim: 4,
        hidden_width: 4,
        depth: 2,
        steps: 3,
        fourier_scale: 1.0,
        omega0: 3.0,
        seed,
        ..ModelSpec::default()
    };
    init_model(&spec).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
    num / den
}

fn random_symmetric(n: usize, seed: u64) -> Tensor {
    let mut g = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = g.random_range(-1.0..1.0);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    Tensor::matrix(n, n, a).unwrap()
}

#[test]
fn closed_form_gradient_matches_tape() {
    for backbone in [Backbone::Ffnet, Backbone::Siren] {
        for seed in 0..10 {
            let m = small_dinr(backbone, seed);
            let x = random_coords(1, 2, seed + 100);
            let closed = closed_form_dinr_gradient(&m, &x).unwrap().gradient;
            let tape = output_gradient(&m, &x).unwrap();
            assert_eq!(closed.names().collect::<Vec<_>>(), tape.names().collect::<Vec<_>>());
            for name in tape.names() {
                let e = rel_err(closed.get(name).unwrap(), tape.get(name).unwrap());
                assert!(e < 1e-8, "{backbone:?} seed {seed} block {name}: {e}");
            }
        }
    }
}

#[test]
fn closed_form_rejects_rk4() {
    let spec = ModelSpec { solver: Solver::Rk4, ..small_dinr(Backbone::Ffnet, 0).spec };
    let m = init_model(&spec).unwrap();
    let x = random_coords(1, 2, 0);
    assert!(matches!(closed_form_dinr_gradient(&m, &x), Err(Error::Unsupported(_))));
}

#[test]
fn single_step_is_a_residual_gradient() {
    let spec = ModelSpec { steps: 1, ..small_dinr(Backbone::Siren, 3).spec };
    let m = init_model(&spec).unwrap();
    let x = random_coords(1, 2, 9);
    let cf = closed_form_dinr_gradient(&m, &x).unwrap();
    assert_eq!(cf.chain.len(), 1);
    let p = cf.chain.total();
    assert_eq!(p, cf.chain.factor(0));
    let tape = output_gradient(&m, &x).unwrap();
    assert!(rel_err(cf.gradient.get("embed.w").unwrap(), tape.get("embed.w").unwrap()) < 1e-10);
}

#[test]
fn zero_field_gives_identity_products() {
    let mut m = small_dinr(Backbone::Ffnet, 4);
    m.scale_body(0.0);
    let x = random_coords(1, 2, 1);
    let cf = closed_form_dinr_gradient(&m, &x).unwrap();
    assert_eq!(cf.chain.total(), Tensor::identity(4));
    assert!(cf.states.windows(2).all(|w| w[0] == w[1]));
    let tape = output_gradient(&m, &x).unwrap();
    for name in tape.names() {
        assert!(rel_err(cf.gradient.get(name).unwrap(), tape.get(name).unwrap()) < 1e-10);
    }
}

#[test]
fn chain_product_matches_direct_multiplication() {
    let mut g = Xoshiro256PlusPlus::seed_from_u64(1);
    let js: Vec<Tensor> = (0..5)
        .map(|_| Tensor::matrix(3, 3, (0..9).map(|_| StandardNormal.sample(&mut g)).collect()).unwrap())
        .collect();
    let c = JacobianChain::new(js, 0.1).unwrap();
    let mut p = Tensor::identity(3);
    for k in 0..5 {
        p = c.factor(k).matmul(&p).unwrap();
    }
    assert!(rel_err(c.total().data(), p.data()) < 1e-12);
    assert_eq!(c.partial(3, 2), Tensor::identity(3));
}

#[test]
fn rank_propagation_with_full_rank_sum() {
    // J_sum full rank, dt ||J_sum|| < 1
    let j0 = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 0., 0., 0., 0., 0.]).unwrap();
    let j1 = Tensor::matrix(3, 3, vec![0., 0., 0., 0., 1., 0., 0., 0., 0.]).unwrap();
    let j2 = Tensor::matrix(3, 3, vec![0., 0., 0., 0., 0., 0., 0., 0., 1.]).unwrap();
    let c = JacobianChain::new(vec![j0, j1, j2], 0.01).unwrap();
    assert_eq!(numerical_rank(&c.j_sum(), 1e-8), 3);
    let r = rank_propagation_check(&c, 1e-8).unwrap();
    assert_eq!(r.rank_p, 3);
    assert!(r.hypotheses_met && r.satisfied);
}

#[test]
fn rk4_and_euler_slopes() {
    let steps = [64, 128, 256, 512];
    let e = convergence_slope(0.5, 1.0, &steps, Solver::Euler).unwrap();
    let r = convergence_slope(0.5, 1.0, &steps, Solver::Rk4).unwrap();
    assert!((e - 1.0).abs() < 0.15, "euler slope {e}");
    assert!((r - 4.0).abs() < 0.15, "rk4 slope {r}");
}

#[test]
fn ntk_of_linear_model_by_hand() {
    // y = theta x with a 1x1 identity embedding and no body
    let spec = ModelSpec {
        backbone: Backbone::Linear,
        mode: Mode::Static,
        in_dim: 1,
        embed_dim: 1,
        depth: 0,
        out_bias: false,
        ..ModelSpec::default()
    };
    let mut m = init_model(&spec).unwrap();
    m.set_block("out.w", Tensor::matrix(1, 1, vec![0.7]).unwrap()).unwrap();
    let x = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
    let k = empirical_ntk(&m, &x, 16).unwrap();
    assert_eq!(k.data(), &[1.0, 2.0, 2.0, 4.0]);
}

#[test]
fn ntk_is_symmetric_psd_and_duplicates_rows() {
    let m = small_dinr(Backbone::Siren, 2);
    let mut c = random_coords(6, 2, 3).into_data();
    c.extend_from_slice(&c[0..2].to_vec());
    let coords = Tensor::matrix(7, 2, c).unwrap();
    let k = empirical_ntk(&m, &coords, DEFAULT_PROBE_CAP).unwrap();
    assert_eq!(k.transpose(), k);
    assert_eq!(k.row(0), k.row(6));
    let e = eigen_sym(&k).unwrap();
    assert!(e.iter().all(|&v| v >= -1e-10 * e[0]));
    assert!(empirical_ntk(&m, &coords, 4).is_err());
}

#[test]
fn lognormal_recovers_parameters() {
    let mut g = Xoshiro256PlusPlus::seed_from_u64(11);
    let dist = Normal::new(-1.0f64, 0.8).unwrap();
    let mut eigs: Vec<f64> = (0..256).map(|_| dist.sample(&mut g).exp()).collect();
    eigs.sort_by(|a, b| b.total_cmp(a));
    let (mu, sigma) = lognormal_fit(&eigs, 256).unwrap();
    assert!((mu + 1.0).abs() < 0.1 && (sigma - 0.8).abs() < 0.08, "{mu} {sigma}");
}

#[test]
fn rank_compare_degenerate_case_matches() {
    let base = ModelSpec { backbone: Backbone::Ffnet, embed_dim: 8, hidden_width: 8, depth: 1, fourier_scale: 1.0, ..ModelSpec::default() };
    let s = init_model(&ModelSpec { mode: Mode::Static, ..base.clone() }).unwrap();
    let mut d = init_model(&ModelSpec { mode: Mode::Dynamical, steps: 1, ..base }).unwrap();
    d.scale_body(0.0);
    let coords = random_coords(16, 2, 5);
    assert!(ntk_rank_compare(&s, &d, &random_coords(4, 2, 5), 64).is_err());
    let r = ntk_rank_compare(&s, &d, &coords, 64).unwrap();
    assert!(r.static_report.effective_rank >= 1.0 && r.dynamical_report.effective_rank >= 1.0);
    // permuting the probe leaves the ranks unchanged
    let perm: Vec<usize> = (0..16).rev().collect();
    let r2 = ntk_rank_compare(&s, &d, &coords.select_rows(&perm), 64).unwrap();
    assert!((r.dynamical_report.effective_rank - r2.dynamical_report.effective_rank).abs() < 1e-8);
    assert_eq!(r.dynamical_report.numerical_rank, r2.dynamical_report.numerical_rank);
}

#[test]
fn zero_field_flow_ratio_is_embedding_only() {
    let mut m = small_dinr(Backbone::Ffnet, 8);
    m.scale_body(0.0);
    let l = lipschitz_estimate(&m);
    let r = flow_lipschitz_check(&m, &random_pairs(50, 2, 1), l.phi, 0.0).unwrap();
    assert_eq!(r.violations, 0);
    assert!(r.max_ratio <= l.phi * (1.0 + 1e-9));
}

#[test]
fn scalar_linear_flow_is_tight() {
    // phi(x) = x, f(z) = 2 z with a single linear layer, psi = identity
    let spec = ModelSpec {
        backbone: Backbone::Linear,
        mode: Mode::Dynamical,
        in_dim: 1,
        embed_dim: 1,
        depth: 1,
        steps: 5,
        ..ModelSpec::default()
    };
    let mut m = init_model(&spec).unwrap();
    m.set_block("body.w0", Tensor::matrix(2, 1, vec![2.0, 0.0]).unwrap()).unwrap();
    m.set_block("body.b0", Tensor::matrix(1, 1, vec![0.0]).unwrap()).unwrap();
    let pairs = vec![(vec![0.3], vec![-0.2]), (vec![0.1], vec![0.1])];
    let r = flow_lipschitz_check(&m, &pairs, 1.0, 2.0).unwrap();
    let exact = 1.4f64.powi(5);
    assert_eq!(r.skipped, 1);
    assert!((r.max_ratio - exact).abs() < 1e-12 && (r.bound - exact).abs() < 1e-12);
    assert_eq!(r.violations, 0);
}

#[test]
fn bound_shapes() {
    let unit = BoundInputs {
        l_psi: Some(1.0),
        l_phi: Some(1.0),
        l_f: Some(1.0),
        l0: Some(1.5),
        ell: Some(2),
        d: Some(1.0),
        t: Some(0.0),
        m: Some(1),
        d_y: Some(1),
        n: Some(1),
        b_phi: Some(2.0),
        e: Some(0.0),
    };
    let c = 6.0 * std::f64::consts::PI.sqrt();
    assert!((rademacher_bound(&unit, BoundVariant::KeRegularized).unwrap() - 2.0 * c).abs() < 1e-12);
    let mut last = 0.0;
    for t in [0.0, 0.5, 1.0, 2.0] {
        let b = rademacher_bound(&BoundInputs { t: Some(t), ..unit.clone() }, BoundVariant::Dinr).unwrap();
        assert!(b > last || t == 0.0);
        last = b;
    }
    let mut last = f64::INFINITY;
    for n in [1, 10, 100] {
        let b = rademacher_bound(&BoundInputs { n: Some(n), ..unit.clone() }, BoundVariant::Dinr).unwrap();
        assert!(b < last);
        last = b;
    }
    // e^{L0^ell T} >= L0^ell at T = 1 for L0^ell = 2.25
    let matched = BoundInputs { t: Some(1.0), ..unit };
    assert!(rademacher_bound(&matched, BoundVariant::DinrDepth).unwrap() >= rademacher_bound(&matched, BoundVariant::Inr).unwrap());
}

#[test]
fn eigen_sym_small_hand_cases() {
    // [[a, b], [b, c]] roots of the characteristic polynomial
    for (a, b, c) in [(1.0, 0.5, -2.0), (4.0, -3.0, 4.0), (0.0, 1.0, 0.0)] {
        let e = eigen_sym(&Tensor::matrix(2, 2, vec![a, b, b, c]).unwrap()).unwrap();
        let (tr, det): (f64, f64) = (a + c, a * c - b * b);
        let disc = (tr * tr / 4.0 - det).sqrt();
        assert!((e[0] - (tr / 2.0 + disc)).abs() < 1e-10 && (e[1] - (tr / 2.0 - disc)).abs() < 1e-10);
    }
    // 3x3 with known spectrum {4, 1, 1}
    let k = Tensor::matrix(3, 3, vec![2., 1., 1., 1., 2., 1., 1., 1., 2.]).unwrap();
    let e = eigen_sym(&k).unwrap();
    assert!((e[0] - 4.0).abs() < 1e-10 && (e[1] - 1.0).abs() < 1e-10 && (e[2] - 1.0).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn eigen_sym_preserves_trace_and_determinant(seed in any::<u64>()) {
        let k = random_symmetric(16, seed);
        let e = eigen_sym(&k).unwrap();
        let tr: f64 = (0..16).map(|i| k.data()[i * 17]).sum();
        let det = determinant(&k).unwrap();
        prop_assert!((e.iter().sum::<f64>() - tr).abs() <= 1e-9 * tr.abs().max(1.0));
        prop_assert!((e.iter().product::<f64>() - det).abs() <= 1e-9 * det.abs().max(1e-12));
        prop_assert!(e.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn flow_bound_holds_on_random_models(seed in 0u64..10_000, solver_rk4 in any::<bool>()) {
        let spec = ModelSpec {
            solver: if solver_rk4 { Solver::Rk4 } else { Solver::Euler },
            ..small_dinr(Backbone::Siren, seed).spec
        };
        let m = init_model(&spec).unwrap();
        let l = lipschitz_estimate(&m);
        let r = flow_lipschitz_check(&m, &random_pairs(20, 2, seed), l.phi, l.f).unwrap();
        prop_assert_eq!(r.violations, 0);
    }

    #[test]
    fn ntk_min_eigenvalue_is_nonnegative(seed in 0u64..1000) {
        let m = small_dinr(Backbone::Ffnet, seed);
        let k = empirical_ntk(&m, &random_coords(10, 2, seed), 64).unwrap();
        let e = eigen_sym(&k).unwrap();
        prop_assert!(*e.last().unwrap() >= -1e-10 * e[0]);
    }

    #[test]
    fn dinr_bound_dominates_inr_when_exponential_is_larger(l0 in 0.5f64..2.0, ell in 1u32..4, t in 0.0f64..3.0) {
        let inputs = BoundInputs {
            l_psi: Some(1.3), l_phi: Some(0.7), l0: Some(l0), ell: Some(ell), d: Some(2.0),
            t: Some(t), m: Some(4), d_y: Some(1), n: Some(100), ..BoundInputs::default()
        };
        let a = l0.powi(ell as i32);
        if (a * t).exp() >= a {
            prop_assert!(rademacher_bound(&inputs, BoundVariant::DinrDepth).unwrap() >= rademacher_bound(&inputs, BoundVariant::Inr).unwrap());
        }
    }
}
