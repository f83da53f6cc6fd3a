mod common;

use common::*;
use kcontract::certify::{
    ari_constant_theta, certify_lti_lurie, certify_networked, certify_thm1, conclusion_check,
    DomainGrid, EPS_STRICT,
};
use kcontract::expr::Arity;
use kcontract::model::{hopfield, networked, Interval};
use kcontract::rng::Rng;
use kcontract::spectral::sym_sqrt;
use kcontract::{BoxDomain, Matrix, MetricSpec, NetworkedModel, VectorFunction};
use proptest::prelude::*;

/// `y = Cx` over a 5-point tensor grid of [-1,1]^n, which contains x = 0.
fn y_samples(inst: &LtiInstance) -> Vec<Vec<f64>> {
    let dom = BoxDomain::cube(inst.n(), -1.0, 1.0).unwrap();
    DomainGrid::tensor(&dom, 5)
        .iter()
        .map(|x| inst.c.mul_vec(x))
        .collect()
}

fn certify(inst: &LtiInstance) -> kcontract::certify::Certificate {
    let phi = VectorFunction::parse(&inst.phi, Arity::y(inst.c.rows())).unwrap();
    certify_lti_lurie(
        &inst.a,
        &inst.b,
        &inst.c,
        &phi,
        &inst.p,
        inst.k,
        &y_samples(inst),
    )
    .unwrap()
}

/// Hopfield network with `W1 = s·Q1`, `W2 = Q2` orthogonal and tanh
/// activations; both η2 suprema are attained at the origin.
fn orthogonal_hopfield(rng: &mut Rng, n: usize) -> kcontract::GlsModel {
    let d: Vec<f64> = (0..n).map(|_| rng.uniform_in(1.0, 3.0)).collect();
    let w1 = orthogonal(rng, n).scale(rng.uniform_in(0.3, 1.5));
    let w2 = orthogonal(rng, n);
    let h: Vec<String> = (1..=n).map(|i| format!("tanh(y{i})")).collect();
    hopfield(
        &Matrix::from_diag(&d),
        &w1,
        &w2,
        &h,
        BoxDomain::cube(n, -2.0, 2.0).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lti_conclusion_holds_at_fresh_points(n in 1usize..=5, seed: u64) {
        let mut rng = Rng::new(seed);
        let inst = LtiInstance::random(&mut rng, n);
        let cert = certify(&inst);
        prop_assume!(cert.is_certified());
        let theta = sym_sqrt(&inst.p).unwrap();
        let bound = -(cert.eta1 + cert.eta2);
        for _ in 0..100 {
            let x = rng.point_in(&vec![-3.0; n], &vec![3.0; n]);
            let v = riemannian_top_k(&inst.closed_loop_jacobian(&x), &theta, inst.k);
            prop_assert!(v <= bound + 1e-8, "{v} > {bound}");
        }
    }

    #[test]
    fn each_valid_side_certifies(n in 1usize..=5, seed: u64) {
        let mut rng = Rng::new(seed);
        let inst = LtiInstance::random(&mut rng, n);
        let cert = certify(&inst);
        let theta = sym_sqrt(&inst.p).unwrap();
        for eta2 in [cert.eta2_b.unwrap(), cert.eta2_c.unwrap()] {
            if cert.eta1 + eta2 <= 0.0 {
                continue;
            }
            let bound = -(cert.eta1 + eta2);
            for _ in 0..50 {
                let x = rng.point_in(&vec![-3.0; n], &vec![3.0; n]);
                let v = riemannian_top_k(&inst.closed_loop_jacobian(&x), &theta, inst.k);
                prop_assert!(v <= bound + 1e-8);
            }
        }
        prop_assert_eq!(cert.eta2, cert.eta2_b.unwrap().max(cert.eta2_c.unwrap()));
    }

    #[test]
    fn riccati_and_eigenvalue_forms_agree(n in 1usize..=5, seed: u64) {
        let mut rng = Rng::new(seed);
        let inst = LtiInstance::random(&mut rng, n);
        let cert = certify(&inst);
        let theta = sym_sqrt(&inst.p).unwrap();
        let oracle = -top_k(&inst.h(&theta), inst.k);
        prop_assert!((cert.eta1_eigen.unwrap() - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
        prop_assert!((cert.eta1 - oracle).abs() <= 1e-6, "riccati {} vs eigen {oracle}", cert.eta1);
    }

    #[test]
    fn gls_conclusion_holds_for_both_sides(n in 1usize..=4, k_frac in 0.0f64..1.0, seed: u64) {
        let mut rng = Rng::new(seed);
        let model = orthogonal_hopfield(&mut rng, n);
        let k = 1 + ((k_frac * n as f64) as usize).min(n - 1);
        let metric = MetricSpec::identity();
        let cert = certify_thm1(&model, &metric, k, &DomainGrid::new(3)).unwrap();
        let fresh: Vec<Vec<f64>> = (0..100)
            .map(|_| rng.point_in(model.state_domain().low(), model.state_domain().high()))
            .collect();
        for eta2 in [cert.eta2_b.unwrap(), cert.eta2_c.unwrap()] {
            if cert.eta1 + eta2 > 0.0 {
                let check = conclusion_check(&model, &metric, k, &fresh, -(cert.eta1 + eta2)).unwrap();
                prop_assert!(check.holds, "{check:?}");
            }
        }
    }

    #[test]
    fn ari_matches_eigen_form_for_constant_metric(n in 1usize..=4, seed: u64) {
        let mut rng = Rng::new(seed);
        let model = orthogonal_hopfield(&mut rng, n);
        let e = rand_symmetric(&mut rng, n, 0.4 / n as f64);
        let p = &Matrix::identity(n) + &e;
        let k = 1 + (rng.next_u64() % n as u64) as usize;
        let cert = ari_constant_theta(&model, &p, k, &DomainGrid::new(3)).unwrap();
        prop_assert!((cert.eta1 - cert.eta1_eigen.unwrap()).abs() <= 1e-6);
        prop_assert!(cert.notes.is_empty(), "{:?}", cert.notes);
    }
}

fn random_network(rng: &mut Rng, n: usize, unit: f64) -> NetworkedModel {
    let a: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.2, 2.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 0.2)).collect();
    let w1 = rand_matrix(rng, n, n, 0.8);
    let w2 = rand_matrix(rng, n, n, 0.8);
    network_in_units(&a, &b, &w1, &w2, unit)
}

/// `ẋ = -d(x) + W1 tanh(W2 x)` with `d_i(x) = a_i x_i + b_i sin(x_i)`,
/// written in coordinates `z = c·x`. Derivative bounds of `d` are sampled
/// numerically on the domain, as a user would.
fn network_in_units(a: &[f64], b: &[f64], w1: &Matrix, w2: &Matrix, c: f64) -> NetworkedModel {
    let n = a.len();
    let d: Vec<String> = (0..n)
        .map(|i| {
            let z = format!("(x{}/{c:e})", i + 1);
            format!("{c:e}*({:e}*{z} + {:e}*sin({z}))", a[i], b[i])
        })
        .collect();
    let f: Vec<String> = (1..=n).map(|i| format!("tanh(y{i})")).collect();
    let dom = BoxDomain::cube(n, -2.0 * c, 2.0 * c).unwrap();
    let dv = VectorFunction::parse(&d, Arity::x(n)).unwrap();
    let jac = dv.jacobian(kcontract::expr::Block::X);
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for x in DomainGrid::tensor(&dom, 9) {
        let j = jac.eval(&kcontract::expr::Env::x(&x)).unwrap();
        for i in 0..n {
            lo[i] = lo[i].min(j[(i, i)]);
            hi[i] = hi[i].max(j[(i, i)]);
        }
    }
    let bounds = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| Interval::new(*l, *h).unwrap())
        .collect();
    networked(
        w1.scale(c),
        w2.scale(1.0 / c),
        &d,
        &f,
        vec![0.0; n],
        bounds,
        1.0,
        dom,
    )
    .unwrap()
}

#[test]
fn networked_certification_is_monotone_in_k() {
    let mut rng = Rng::new(2024);
    let mut certified_somewhere = 0;
    let mut failed_somewhere = 0;
    for _ in 0..50 {
        let n = 2 + (rng.next_u64() % 5) as usize;
        let net = random_network(&mut rng, n, 1.0);
        let verdicts: Vec<bool> = (1..=n)
            .map(|k| certify_networked(&net, k).unwrap().is_certified())
            .collect();
        for k in 1..n {
            assert!(
                !verdicts[k - 1] || verdicts[k],
                "k={} certifies but k+1 does not",
                k
            );
        }
        certified_somewhere += verdicts.iter().any(|v| *v) as usize;
        failed_somewhere += verdicts.iter().any(|v| !*v) as usize;
    }
    // the family must exercise both outcomes for the check to mean anything
    assert!(certified_somewhere > 5 && failed_somewhere > 5);
}

#[test]
fn scalar_metric_verdict_is_unit_invariant() {
    let mut rng = Rng::new(77);
    for _ in 0..30 {
        let n = 2 + (rng.next_u64() % 3) as usize;
        let a: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.2, 2.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 0.2)).collect();
        let w1 = rand_matrix(&mut rng, n, n, 0.8);
        let w2 = rand_matrix(&mut rng, n, n, 0.8);
        let base = network_in_units(&a, &b, &w1, &w2, 1.0);
        for c in [1e-3, 0.37, 1.0, 12.5, 1e4] {
            let scaled = network_in_units(&a, &b, &w1, &w2, c);
            for k in 1..=n {
                let (p, q) = (
                    certify_networked(&base, k).unwrap(),
                    certify_networked(&scaled, k).unwrap(),
                );
                let margin = p.small_gain_rhs.unwrap() - p.small_gain_lhs.unwrap();
                if margin.abs() > 1e3 * EPS_STRICT {
                    assert_eq!(p.verdict, q.verdict, "c={c} k={k}");
                }
                let (pa, qa) = (p.alpha_k.unwrap(), q.alpha_k.unwrap());
                assert!((pa - qa).abs() <= 1e-9 * (1.0 + pa.abs()));
            }
        }
    }
}
