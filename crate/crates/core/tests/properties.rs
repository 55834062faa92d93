//! Randomised invariants over geometry, dynamics, rewards, communication and
//! the neural forward pass.

use std::f64::consts::PI;

use proptest::prelude::*;
use svoflow::communication::{communicate, AdversaryInput, CommMode, Provenance, EGO_INDEX, INVISIBLE_SVO};
use svoflow::dynamics::{bicycle_step, pid_speed_control, Action, ControllerMemory, PidParams, VehicleState};
use svoflow::geometry::{boxes_overlap, normalize_angle, OrientedBox, Pose2D};
use svoflow::idm::{idm_acceleration, IdmParams};
use svoflow::observation::{ObservationFrame, SerializedObservation};
use svoflow::policy::{Architecture, WeightBundle};
use svoflow::reward::{adversary_reward, alpha_to_svo, compose, individual_reward, RewardWeights};
use svoflow::scenario::{ScenarioName, ScenarioSpec, VehicleParams};

fn pose() -> impl Strategy<Value = Pose2D> {
    (-100.0..100.0f64, -100.0..100.0f64, -PI..PI).prop_map(|(x, y, t)| Pose2D::new(x, y, t))
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn inside_convex(p: [f64; 2], quad: &[[f64; 2]; 4]) -> bool {
    let signs: Vec<f64> = (0..4).map(|i| cross(quad[i], quad[(i + 1) % 4], p)).collect();
    signs.iter().all(|&s| s >= 0.0) || signs.iter().all(|&s| s <= 0.0)
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

/// Independent overlap oracle: containment of a corner or crossing edges.
fn overlap_oracle(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    if ca.iter().any(|&p| inside_convex(p, &cb)) || cb.iter().any(|&p| inside_convex(p, &ca)) {
        return true;
    }
    (0..4).any(|i| (0..4).any(|j| segments_cross(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4])))
}

fn random_observation(seed: u64, width: usize, n_dyn: usize, n_static: usize, h: usize) -> SerializedObservation {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut block = |rows: usize, cols: usize| -> Vec<f32> { (0..rows * cols).map(|_| rng.gen_range(-30.0..30.0)).collect() };
    SerializedObservation {
        dynamic_width: width,
        history_len: h,
        dynamic: (0..n_dyn).map(|_| block(h, width)).collect(),
        statics: (0..n_static).map(|k| block(1 + k % 4, 5)).collect(),
        self_index: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn frame_transforms_invert(p in pose(), f in pose()) {
        let back = p.transform_to_frame(&f).transform_from_frame(&f);
        prop_assert!((back.x - p.x).abs() < 1e-9 && (back.y - p.y).abs() < 1e-9);
        prop_assert!(normalize_angle(back.theta - p.theta).abs() < 1e-9);
        let same = p.transform_to_frame(&Pose2D::origin());
        prop_assert_eq!((same.x, same.y, same.theta), (p.x, p.y, p.theta));
        // distances are preserved
        let q = Pose2D::new(p.x + 3.0, p.y - 1.0, 0.0);
        let d = p.transform_to_frame(&f).distance_to(&q.transform_to_frame(&f));
        prop_assert!((d - p.distance_to(&q)).abs() < 1e-9);
    }

    #[test]
    fn normalized_angles_stay_in_range(a in -1e4..1e4f64) {
        let n = normalize_angle(a);
        prop_assert!(n > -PI && n <= PI);
        prop_assert!((n.sin() - a.sin()).abs() < 1e-9 && (n.cos() - a.cos()).abs() < 1e-9);
    }

    #[test]
    fn overlap_is_symmetric_and_matches_oracle(
        a in (-8.0..8.0f64, -8.0..8.0f64, -PI..PI, 1.0..6.0f64, 0.5..3.0f64),
        b in (-8.0..8.0f64, -8.0..8.0f64, -PI..PI, 1.0..6.0f64, 0.5..3.0f64),
    ) {
        let ba = OrientedBox::new(Pose2D::new(a.0, a.1, a.2), a.3, a.4);
        let bb = OrientedBox::new(Pose2D::new(b.0, b.1, b.2), b.3, b.4);
        let got = boxes_overlap(&ba, &bb);
        prop_assert_eq!(got, boxes_overlap(&bb, &ba));
        prop_assert_eq!(got, overlap_oracle(&ba, &bb));
        prop_assert!(boxes_overlap(&ba, &ba));
    }

    #[test]
    fn points_on_a_path_project_onto_it(frac in 0.0..1.0f64, which in 0usize..4, path in 0usize..64) {
        let name = ScenarioName::ALL[which];
        let spec = ScenarioSpec::bundled(name);
        let g = spec.path(path % spec.candidate_paths.len());
        let s = frac * g.total_length();
        let p = g.pose_at(s);
        let proj = g.project([p.x, p.y]);
        prop_assert!(proj.lateral_offset.abs() < 1e-9);
        prop_assert!((g.pose_at(proj.arclength).distance_to(&p)) < 1e-9);
        let lo = (s - 5.0).max(0.0);
        let hi = s + 20.0;
        let w = g.project_window([p.x + 0.7, p.y - 0.4], lo, hi);
        prop_assert!(w.arclength >= lo && w.arclength <= hi.min(g.total_length()) + 1e-12);
    }

    #[test]
    fn bicycle_speed_and_heading_stay_closed(
        v0 in 0.0..10.0f64,
        controls in proptest::collection::vec((-50.0..50.0f64, -2.0..2.0f64), 1..60),
    ) {
        let params = VehicleParams::default();
        let pid = PidParams::for_step(0.1, params.accel_max);
        let mut mem = ControllerMemory::default();
        let mut state = VehicleState { pose: Pose2D::origin(), speed: v0 };
        for (v_ref, sigma) in controls {
            let a = Action::new(v_ref, sigma).clamped(&params);
            prop_assert!(a.v_ref >= 0.0 && a.v_ref <= params.v_max && a.sigma.abs() <= params.sigma_max);
            let accel = pid_speed_control(&state, a.v_ref, &pid, &mut mem, 0.1);
            prop_assert!(accel.abs() <= params.accel_max);
            let next = bicycle_step(&state, accel, a.sigma, 0.1, &params);
            prop_assert!(next.speed >= 0.0 && next.speed <= params.v_max);
            prop_assert!(next.pose.theta > -PI && next.pose.theta <= PI);
            prop_assert!(next.pose.distance_to(&state.pose) <= state.speed * 0.1 + 1e-12);
            state = next;
        }
    }

    #[test]
    fn idm_is_bounded_and_gap_monotone(v in 0.0..10.0f64, vf in 0.0..10.0f64, gap in 0.01..80.0f64, extra in 0.0..20.0f64) {
        let p = IdmParams::default();
        let a = idm_acceleration(v, vf, gap, &p);
        prop_assert!(a >= -p.emergency_decel() && a <= p.a);
        prop_assert!(idm_acceleration(v, vf, gap + extra, &p) >= a);
    }

    #[test]
    fn reward_terms_are_bounded(speed in 0.0..10.0f64, failed: bool, w1 in 0.1..5.0f64, ratio in 10.0..200.0f64) {
        let w = RewardWeights::new(w1, w1 * ratio).unwrap();
        let r = individual_reward(speed, 10.0, failed, &w);
        prop_assert!(r.r_speed >= -1.0 && r.r_speed <= 1.0);
        prop_assert!(r.r_fail == 0.0 || r.r_fail == -1.0);
        prop_assert_eq!(r.individual, w.omega1 * r.r_speed + w.omega2 * r.r_fail);
        prop_assert_eq!(r.individual + adversary_reward(r.individual), 0.0);
        if failed {
            // any failure outweighs any speed gain
            prop_assert!(r.individual < individual_reward(0.0, 10.0, false, &w).individual);
        }
    }

    #[test]
    fn composition_interpolates_on_the_circle(own in -200.0..200.0f64, others in -200.0..200.0f64, c in 0.0..=90.0f64) {
        let r = compose(own, others, c);
        let (s, co) = c.to_radians().sin_cos();
        prop_assert!((s * s + co * co - 1.0).abs() < 1e-12);
        let bound = own.abs().max(others.abs()) * std::f64::consts::SQRT_2 + 1e-9;
        prop_assert!(r.abs() <= bound);
        prop_assert_eq!(compose(own, others, 0.0), own);
        prop_assert_eq!(compose(own, others, 90.0), others);
    }

    #[test]
    fn attacker_angles_are_negative(alpha in 0.0..1e6f64) {
        let c = alpha_to_svo(alpha);
        prop_assert!((-90.0..0.0).contains(&c));
    }

    #[test]
    fn delivery_invariants(
        genuine in proptest::collection::vec(0.0..=90.0f64, 1..20),
        receiver_seed in any::<usize>(),
        mistaken in 0.0..=90.0f64,
        distance in 0.0..60.0f64,
    ) {
        let receiver = receiver_seed % genuine.len();
        let full = communicate(&CommMode::FullyVisibleGenuine, receiver, &genuine, None).unwrap();
        prop_assert_eq!(&full.entries, &genuine);
        let own = communicate(&CommMode::SelfVisible, receiver, &genuine, None).unwrap();
        for (i, (&e, &p)) in own.entries.iter().zip(&own.provenance).enumerate() {
            if i == receiver {
                prop_assert_eq!((e, p), (genuine[i], Provenance::Genuine));
            } else {
                prop_assert_eq!((e, p), (INVISIBLE_SVO, Provenance::Invisible));
            }
        }
        let obs = ObservationFrame {
            agent_polylines: vec![],
            agent_ids: vec![],
            static_polylines: vec![],
            frame: Pose2D::origin(),
            self_index: 0,
            ego_index: None,
        };
        let source = move |_: &ObservationFrame| mistaken;
        let input = AdversaryInput { source: Some(&source), observation: Some(&obs), ego_distance: distance, clip_radius: 30.0 };
        let adv = communicate(&CommMode::Adversarial, receiver, &genuine, Some(input)).unwrap();
        for (i, &e) in adv.entries.iter().enumerate() {
            prop_assert!((0.0..=90.0).contains(&e));
            if i != EGO_INDEX {
                prop_assert_eq!(e.to_bits(), genuine[i].to_bits());
            }
        }
        let expected = if distance > 30.0 { genuine[EGO_INDEX] } else { mistaken };
        prop_assert_eq!(adv.entries[EGO_INDEX].to_bits(), expected.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn network_outputs_stay_in_range(seed in any::<u64>(), obs_seed in any::<u64>(), n_dyn in 1usize..5, n_static in 0usize..5) {
        let lower = WeightBundle::seeded(&Architecture::lower_level(), seed);
        let out = lower.forward(&random_observation(obs_seed, 6, n_dyn, n_static, 3)).unwrap();
        prop_assert!(out[0].is_finite() && (0.0..=10.0).contains(&out[0]));
        prop_assert!(out[1].is_finite() && out[1].abs() <= 0.6);
        let adv = WeightBundle::seeded(&Architecture::adversary(), seed);
        let out = adv.forward(&random_observation(obs_seed, 5, n_dyn, n_static, 3)).unwrap();
        prop_assert!(out[0].is_finite() && (0.0..=90.0).contains(&out[0]));
    }
}
