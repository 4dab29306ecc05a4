use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use viewnav::world::wrap_angle;
use viewnav::{
    denormalize, generate_dataset, normalize, trajectory, AngularLobe, ConfidenceField, NavigationLabel, Pose,
    PoseGrid, Proposal, WorldConfig,
};

fn grid() -> impl Strategy<Value = PoseGrid> {
    (2usize..40, 1usize..40, 0.5f64..5.0, 0.0f64..60.0)
        .prop_map(|(a, r, r_min, span)| PoseGrid::new(a, r, r_min, r_min + span).unwrap())
}

fn field() -> impl Strategy<Value = ConfidenceField> {
    let lobe = (0.0f64..TAU, 0.05f64..3.0, 0.0f64..1.0).prop_map(|(mu, s, w)| AngularLobe::new(mu, s, w));
    (prop::collection::vec(lobe, 1..6), -10.0f64..60.0, 0.1f64..10.0, 0.0f64..0.5)
        .prop_map(|(lobes, half, slope, bias)| ConfidenceField::new(lobes, half, slope, bias).unwrap())
}

proptest! {
    #[test]
    fn trajectory_ends_at_the_clamped_proposal(
        g in grid(),
        theta in 0.0f64..TAU,
        r in 0.0f64..70.0,
        dtheta in -PI..=PI,
        dr in -60.0f64..60.0,
        n in 0usize..8,
    ) {
        let start = g.clamp(Pose::new(theta, r));
        let wps = trajectory(&g, start, Proposal::new(dtheta, dr), n);
        prop_assert_eq!(wps.len(), n + 1);
        let end = wps[n];
        prop_assert_eq!(end, g.clamp(Pose::new(start.theta + dtheta, start.r + dr)));
        for wp in &wps {
            prop_assert!(wp.r >= g.r_min && wp.r <= g.r_max);
            prop_assert!((0.0..TAU).contains(&wp.theta));
        }
    }

    #[test]
    fn normalization_round_trips(g in grid(), u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        let span = g.radial_span();
        let label = NavigationLabel { dtheta: u * TAU - PI, dr: v * 2.0 * span - span, reachable: true };
        let norm = normalize(&label, &g);
        prop_assert!((0.0..=1.0).contains(&norm[0]) && (0.0..=1.0).contains(&norm[1]));
        let back = denormalize(norm, &g);
        prop_assert!((back.dtheta - label.dtheta).abs() < 1e-12);
        prop_assert!((back.dr - label.dr).abs() < 1e-12);
    }

    #[test]
    fn confidence_is_a_periodic_probability(f in field(), theta in -20.0f64..20.0, r in 0.0f64..100.0) {
        let p = f.confidence(Pose::new(theta, r));
        prop_assert!((0.0..=1.0).contains(&p));
        let q = f.confidence(Pose::new(theta + TAU, r));
        prop_assert!((p - q).abs() < 1e-9);
        prop_assert_eq!(wrap_angle(theta), Pose::new(theta, r).theta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn labels_respect_their_invariants(
        f in field(),
        n_angles in 2usize..20,
        n_radii in 1usize..12,
        p_thres in 0.05f64..0.95,
    ) {
        let g = PoseGrid::new(n_angles, n_radii, 1.0, 1.0 + 2.0 * n_radii as f64).unwrap();
        let world = WorldConfig::new(g, 4, 0.0, 0).unwrap();
        let ds = generate_dataset(&world, &f, p_thres, 1.0, 0).unwrap();
        prop_assert_eq!(ds.len(), g.len());
        for rec in &ds.records {
            prop_assert!(rec.label.dtheta.abs() <= PI);
            prop_assert!(rec.label.dr.abs() <= g.radial_span() + 1e-12);
            if rec.p >= p_thres {
                prop_assert_eq!((rec.label.dtheta, rec.label.dr), (0.0, 0.0));
            }
            if rec.label.reachable {
                let landed = g.snap(Pose::new(rec.pose.theta + rec.label.dtheta, rec.pose.r + rec.label.dr));
                prop_assert!(ds.record_at(landed).unwrap().p >= p_thres);
            }
        }
    }
}
