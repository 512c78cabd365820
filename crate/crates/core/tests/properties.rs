use proptest::prelude::*;
use sidyn::beta_seq;
use sidyn::dynamics::{self, OptimizerConfig, TraceRecord};
use sidyn::io;
use sidyn::objective::{Batch, Objective, ToyRational};
use sidyn::vector;

fn point() -> impl Strategy<Value = [f64; 2]> {
    (-5.0..5.0f64, -5.0..5.0f64).prop_filter("away from the origin", |(x, y)| x.hypot(*y) > 1e-2).prop_map(|(x, y)| [x, y])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gradient_is_orthogonal_and_inverse_homogeneous(p in point(), c in 0.05..20.0f64) {
        let e = ToyRational.evaluate(&p, Batch::Full).unwrap();
        let gn = vector::norm(&e.gradient);
        if gn > 0.0 {
            prop_assert!(vector::dot(&p, &e.gradient).abs() <= 1e-12 * vector::norm(&p) * gn);
        }
        let scaled = [c * p[0], c * p[1]];
        let s = ToyRational.evaluate(&scaled, Batch::Full).unwrap();
        prop_assert!((s.value - e.value).abs() <= 1e-12);
        for i in 0..2 {
            prop_assert!((c * s.gradient[i] - e.gradient[i]).abs() <= 1e-12 * (1.0 + e.gradient[i].abs()));
        }
    }

    #[test]
    fn norm_recursion_holds_for_any_start(p in point(), eta in 0.01..2.0f64, el in 0.0..0.2f64) {
        let cfg = OptimizerConfig::gd(eta, el / eta, 200);
        let t = dynamics::run(&ToyRational, &cfg, &p).unwrap();
        let next: Vec<f64> = t.records.iter().skip(1).map(TraceRecord::rho_sq)
            .chain(std::iter::once(vector::norm_sq(&t.final_point))).collect();
        for (r, m) in t.records.iter().zip(next) {
            let s = 1.0 - el;
            let predicted = s * s * r.rho_sq() + eta * eta * r.eff_grad_norm * r.eff_grad_norm / r.rho_sq();
            prop_assert!((m - predicted).abs() <= 1e-9 * predicted);
            prop_assert!((0.0..=2.0).contains(&r.cos_dist));
        }
    }

    #[test]
    fn norm_never_shrinks_without_decay(p in point(), eta in 0.01..2.0f64) {
        let t = dynamics::run(&ToyRational, &OptimizerConfig::gd(eta, 0.0, 200), &p).unwrap();
        for w in t.records.windows(2) {
            // Once the gradient vanishes ρ is constant up to rounding.
            prop_assert!(w[1].rho >= w[0].rho * (1.0 - 1e-15));
        }
    }

    #[test]
    fn determined_sequence_stays_above_its_fixed_point(alpha in 0.01..0.49f64, beta in 1e-3..1e3f64, k in 1.0..10.0f64) {
        let star = (beta / alpha).sqrt();
        let mut x = k * star;
        for _ in 0..500 {
            let next = beta_seq::recur(x, alpha, beta);
            prop_assert!(next >= star * (1.0 - 1e-12));
            prop_assert!(next <= x * (1.0 + 1e-12));
            x = next;
        }
    }

    #[test]
    fn trace_csv_roundtrips(vals in prop::collection::vec((any::<f64>(), 0.0..1.0f64), 1..20)) {
        let records: Vec<TraceRecord> = vals.iter().enumerate().filter(|(_, (v, _))| v.is_finite()).map(|(i, (v, e))| TraceRecord {
            step: i,
            loss: *v,
            rho: v.abs() + 1.0,
            grad_norm: *e,
            eff_grad_norm: e * 3.0,
            eff_lr: 1.0 / (v.abs() + 1.0),
            cos_dist: *e / 7.0,
            train_error: (i % 2 == 0).then_some(*e),
        }).collect();
        let text = io::trace_csv(&records);
        prop_assert_eq!(io::parse_trace_csv(&text).unwrap(), records);
    }
}
