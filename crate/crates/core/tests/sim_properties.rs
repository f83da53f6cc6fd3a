mod common;

use common::*;
use kcontract::certify::certify_lti_lurie;
use kcontract::compound::parallelotope_volume;
use kcontract::expr::Arity;
use kcontract::model::lti_lurie;
use kcontract::rng::Rng;
use kcontract::sim::{
    final_half, fit_slope, integrate, integrate_with_variational, LinearField, SimConfig,
};
use kcontract::spectral::sym_sqrt;
use kcontract::{BoxDomain, Matrix, MetricSpec, VectorFunction};
use proptest::prelude::*;

fn endpoint_error(a: &Matrix, x0: &[f64], t: f64, cfg: &SimConfig) -> f64 {
    let traj = integrate(&LinearField(a.clone()), x0, cfg).unwrap();
    assert!((traj.final_time() - t).abs() < 1e-12);
    let exact = expm(&a.scale(t)).mul_vec(x0);
    traj.final_state()
        .iter()
        .zip(&exact)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

fn full_rank_w0(rng: &mut Rng, n: usize, k: usize) -> Matrix {
    &Matrix::from_fn(n, k, |i, j| if i == j { 1.0 } else { 0.0 }) + &rand_matrix(rng, n, k, 0.3)
}

/// A certified LTI Lurie instance with its certificate, GLS model and metric.
struct Certified {
    model: kcontract::GlsModel,
    metric: MetricSpec,
    rate: f64,
    sigma1: f64,
    sigma2: f64,
    k: usize,
}

fn certified_instance(rng: &mut Rng, n: usize) -> Option<Certified> {
    let inst = LtiInstance::random(rng, n);
    let phi = VectorFunction::parse(&inst.phi, Arity::y(inst.c.rows())).unwrap();
    let dom = BoxDomain::cube(n, -1.0, 1.0).unwrap();
    let ys: Vec<Vec<f64>> = kcontract::certify::DomainGrid::tensor(&dom, 5)
        .iter()
        .map(|x| inst.c.mul_vec(x))
        .collect();
    let cert = certify_lti_lurie(&inst.a, &inst.b, &inst.c, &phi, &inst.p, inst.k, &ys).unwrap();
    if !cert.is_certified() {
        return None;
    }
    let model = lti_lurie(&inst.a, &inst.b, &inst.c, &inst.phi, dom).unwrap();
    let metric = MetricSpec::constant(sym_sqrt(&inst.p).unwrap()).unwrap();
    Some(Certified {
        model,
        metric,
        rate: cert.rate,
        sigma1: cert.sigma1,
        sigma2: cert.sigma2,
        k: inst.k,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn halving_the_step_cuts_the_error_eightfold(n in 1usize..=4, seed: u64) {
        let mut rng = Rng::new(seed);
        let a = rand_stable(&mut rng, n);
        let x0: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let t = 2.0;
        let cfg = |h: f64| SimConfig::new(t).with_fixed_step(h);
        let coarse = endpoint_error(&a, &x0, t, &cfg(t / 40.0));
        let fine = endpoint_error(&a, &x0, t, &cfg(t / 80.0));
        prop_assume!(fine > 1e-14);
        prop_assert!(coarse / fine >= 8.0, "coarse {coarse:e} fine {fine:e}");
    }

    #[test]
    fn tighter_tolerances_reduce_the_error(n in 1usize..=4, seed: u64) {
        let mut rng = Rng::new(seed);
        let a = rand_stable(&mut rng, n);
        let x0: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let loose = endpoint_error(&a, &x0, 3.0, &SimConfig::new(3.0).with_tolerances(1e-5, 1e-7));
        let tight = endpoint_error(&a, &x0, 3.0, &SimConfig::new(3.0).with_tolerances(1e-10, 1e-12));
        prop_assert!(tight < loose && tight < 1e-8);
    }

    #[test]
    fn volume_paths_agree(n in 1usize..=5, seed: u64) {
        let mut rng = Rng::new(seed);
        let k = 1 + (rng.next_u64() % n as u64) as usize;
        let a = &rand_matrix(&mut rng, n, n, 1.5) - &Matrix::identity(n).scale(rng.uniform_in(0.0, 3.0));
        let x0: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let w0 = full_rank_w0(&mut rng, n, k);
        let (_, trace) = integrate_with_variational(
            &LinearField(a), &x0, &w0, None, &SimConfig::new(20.0),
        ).unwrap();
        let cols: Vec<Vec<f64>> = (0..k).map(|j| trace.w_final.column(j)).collect();
        let via_volume = parallelotope_volume(&cols).unwrap().ln() + trace.log_offset;
        let recorded = *trace.logvol.last().unwrap();
        prop_assert!((via_volume - recorded).abs() <= 1e-10 * (1.0 + recorded.abs()),
            "{via_volume} vs {recorded}");
    }
}

#[test]
fn weighted_volume_decays_at_the_certified_rate() {
    let mut rng = Rng::new(31);
    let mut checked = 0;
    while checked < 15 {
        let n = 2 + (rng.next_u64() % 3) as usize;
        let Some(c) = certified_instance(&mut rng, n) else {
            continue;
        };
        let x0 = rng.point_in(&vec![-1.0; n], &vec![1.0; n]);
        let w0 = full_rank_w0(&mut rng, n, c.k);
        let t_end = (8.0 / c.rate).min(40.0);
        let cfg = SimConfig::new(t_end).with_tolerances(1e-10, 1e-12);
        let (_, trace) =
            integrate_with_variational(&c.model, &x0, &w0, Some(&c.metric), &cfg).unwrap();

        let (t, v) = final_half(&trace, true);
        let slope = fit_slope(&t, &v);
        assert!(
            slope <= -c.rate + 0.05 * c.rate,
            "slope {slope} vs rate {}",
            c.rate
        );

        let shift = 0.5 * c.k as f64 * (c.sigma2 / c.sigma1).ln();
        for (t, lv) in trace.times.iter().zip(&trace.logvol) {
            let bound = trace.logvol[0] + shift - c.rate * t + 1e-6;
            assert!(*lv <= bound, "t={t}: {lv} > {bound}");
        }
        checked += 1;
    }
}

#[test]
fn integration_is_deterministic() {
    let mut rng = Rng::new(8);
    let c = loop {
        if let Some(c) = certified_instance(&mut rng, 3) {
            break c;
        }
    };
    let w0 = full_rank_w0(&mut rng, 3, c.k);
    let cfg = SimConfig::new(5.0);
    let a = integrate_with_variational(&c.model, &[0.3, -0.2, 0.9], &w0, Some(&c.metric), &cfg);
    let b = integrate_with_variational(&c.model, &[0.3, -0.2, 0.9], &w0, Some(&c.metric), &cfg);
    assert_eq!(a.unwrap(), b.unwrap());
}
