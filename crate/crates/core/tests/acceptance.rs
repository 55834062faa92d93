//! Acceptance suite. Each test prints one `PASS`/`FAIL` line on stderr (not
//! captured by the harness) and then asserts.
//!
//! Pinned tolerances:
//! * P1: illegal-status rates exactly 0.0 over 4 maps x 200 cases x 10 repeats
//! * P2: status percentages sum to 100 within 1e-9
//! * P3: bitwise equality
//! * P4: exact endpoints and zero sums, trigonometric identity within 1e-12
//! * P5: relative error <= 1e-12 over 1000 draws
//! * P6: circle radius within 1%, PID steady-state error < 0.01 after 2 s
//! * P7: reference agreement within 1e-5, permutation invariance within 1e-6
//! * P8: bitwise equality off the ego entry

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svoflow::communication::{communicate, AdversaryInput, CommMode, EGO_INDEX};
use svoflow::dynamics::{bicycle_step, pid_speed_control, Action, ControllerMemory, PidParams, VehicleState};
use svoflow::env::{EnvMode, TerminationStatus};
use svoflow::geometry::Pose2D;
use svoflow::idm::{idm_acceleration, IdmParams};
use svoflow::metrics::{aggregate_metrics, EfficiencyMode, MetricScope};
use svoflow::observation::{build_adversary_observation, SerializedObservation};
use svoflow::policy::{Architecture, OutputKind, PolicyHandle, TensorMap, WeightBundle, WeightError};
use svoflow::reward::{adversary_reward, alpha_to_svo, compose, individual_reward, RewardWeights};
use svoflow::rollout::{replay, run_batch, EpisodeLog, LogDetail, Participants};
use svoflow::scenario::{generate_cases, ScenarioName, SvoMode, VehicleParams};

fn report(id: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{id} {verdict} {detail}");
}

fn idm_flow() -> Participants {
    Participants::flow_only(PolicyHandle::idm(), CommMode::FullyVisibleGenuine)
}

fn adversarial(seed: u64) -> Participants {
    let lower = Arc::new(WeightBundle::seeded(&Architecture::lower_level(), seed));
    let adv = Arc::new(WeightBundle::seeded(&Architecture::adversary(), seed ^ 0x5eed));
    Participants {
        flow: PolicyHandle::idm(),
        comm: CommMode::Adversarial,
        ego: Some(PolicyHandle::neural_lower(lower).unwrap()),
        adversary: Some(PolicyHandle::neural_adversary(adv).unwrap()),
    }
}

#[test]
fn p1_idm_flow_keeps_to_the_road() {
    let mut pass = true;
    let mut detail = String::new();
    for name in ScenarioName::ALL {
        let e = common::env(name);
        let cases = generate_cases(e.scenario(), 200, 2024, SvoMode::Uniform).unwrap();
        let logs = run_batch(&e, &cases, 10, 7, &idm_flow(), 1, LogDetail::Summary).unwrap();
        let r = aggregate_metrics(&logs, MetricScope::Flow, EfficiencyMode::NormalizedSpeed).unwrap();
        let ok = r.off_road_pct.value == 0.0 && r.off_route_pct.value == 0.0 && r.wrong_lane_pct.value == 0.0;
        pass &= ok;
        detail += &format!(
            "[{name}: episodes={} off_road={} off_route={} wrong_lane={} success={:.1} collision={:.1} timeout={:.1}] ",
            r.episode_count,
            r.off_road_pct.value,
            r.off_route_pct.value,
            r.wrong_lane_pct.value,
            r.success_pct.value,
            r.collision_pct.value,
            r.timeout_pct.value
        );
    }
    report("P1", pass, detail.trim_end());
    assert!(pass, "{detail}");
}

#[test]
fn p2_statuses_partition_the_agents() {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut seen = std::collections::BTreeSet::new();
    let lower = Arc::new(WeightBundle::seeded(&Architecture::lower_level(), 3));
    let neural = Participants::flow_only(PolicyHandle::neural_lower(lower).unwrap(), CommMode::SelfVisible);
    for name in ScenarioName::ALL {
        let e = common::env(name);
        let cases = generate_cases(e.scenario(), 12, 99, SvoMode::Uniform).unwrap();
        for parts in [idm_flow(), neural.clone(), adversarial(5)] {
            let logs = run_batch(&e, &cases, 2, 1, &parts, 1, LogDetail::Summary).unwrap();
            for l in &logs {
                for a in &l.summary {
                    // exactly one terminal status, recorded once
                    pass &= a.status.is_terminal() && a.terminated_at.is_some();
                    seen.insert(a.status);
                }
            }
            for scope in [MetricScope::Flow, MetricScope::EgoOnly] {
                let Ok(r) = aggregate_metrics(&logs, scope, EfficiencyMode::NormalizedSpeed) else {
                    continue;
                };
                let dev = (r.status_total() - 100.0).abs();
                worst = worst.max(dev);
                pass &= dev <= 1e-9;
                let failures = r.collision_pct.value + r.off_road_pct.value + r.off_route_pct.value + r.wrong_lane_pct.value;
                pass &= (r.safety_pct.value - (100.0 - failures)).abs() <= 1e-9;
            }
        }
    }
    let statuses: Vec<&str> = seen.iter().map(|s| s.as_str()).collect();
    report("P2", pass, &format!("max |sum - 100| = {worst:e}, statuses observed {statuses:?}"));
    assert!(pass);
}

fn bitwise_logs(a: &[EpisodeLog], b: &[EpisodeLog]) -> bool {
    // serde_json keeps full f64 precision, so equal text means equal bits
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x == y
                && serde_json::to_string(&x.steps).unwrap() == serde_json::to_string(&y.steps).unwrap()
                && serde_json::to_string(&x.summary).unwrap() == serde_json::to_string(&y.summary).unwrap()
        })
}

#[test]
fn p3_runs_are_deterministic() {
    let mut pass = true;
    let mut detail = String::new();
    for name in ScenarioName::ALL {
        let e = common::env(name);
        let cases = generate_cases(e.scenario(), 3, 17, SvoMode::Uniform).unwrap();
        for (label, parts) in [("idm", idm_flow()), ("adversarial", adversarial(11))] {
            let one = run_batch(&e, &cases, 2, 5, &parts, 1, LogDetail::Full).unwrap();
            let again = run_batch(&e, &cases, 2, 5, &parts, 1, LogDetail::Full).unwrap();
            let four = run_batch(&e, &cases, 2, 5, &parts, 4, LogDetail::Full).unwrap();
            let replays = one.iter().all(|l| replay(&e, l, None).unwrap().is_exact());
            let ok = bitwise_logs(&one, &again) && bitwise_logs(&one, &four) && replays;
            if !ok {
                detail += &format!("[{name}/{label} diverged] ");
            }
            pass &= ok;
        }
    }
    report("P3", pass, if pass { "repeat, 1 vs 4 workers and replay bitwise identical" } else { detail.trim_end() });
    assert!(pass, "{detail}");
}

#[test]
fn p4_reward_identities() {
    let mut pass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = RewardWeights::default();
    for _ in 0..10_000 {
        let own: f64 = rng.gen_range(-101.0..1.0);
        let others: f64 = rng.gen_range(-101.0..1.0);
        pass &= compose(own, others, 0.0).to_bits() == own.to_bits();
        pass &= compose(own, others, 90.0).to_bits() == others.to_bits();
        let ego = individual_reward(rng.gen_range(0.0..10.0), 10.0, rng.gen_bool(0.3), &w).individual;
        pass &= ego + adversary_reward(ego) == 0.0;
    }
    pass &= alpha_to_svo(1.0) == -45.0;
    let mut range_ok = true;
    for alpha in [0.0, 1e-12, 0.01, 0.5, 1.0, 2.0, 100.0, 1e9, 1e300] {
        let c = alpha_to_svo(alpha);
        range_ok &= (-90.0..0.0).contains(&c);
    }
    pass &= range_ok;
    let mut worst: f64 = 0.0;
    for k in 0..=900 {
        let c = k as f64 * 0.1;
        let (s, co) = c.to_radians().sin_cos();
        worst = worst.max((co * co + s * s - 1.0).abs());
    }
    pass &= worst <= 1e-12;
    report(
        "P4",
        pass,
        &format!("endpoints exact, zero-sum exact, alpha_to_svo(1) = {}, max |cos^2+sin^2-1| = {worst:e}", alpha_to_svo(1.0)),
    );
    assert!(pass);
}

/// Independent transcription of the car-following law with its clamp.
fn idm_reference(v: f64, vf: f64, gap: f64, p: &IdmParams) -> f64 {
    if gap <= 0.0 {
        return -2.0 * p.b;
    }
    let s_star = p.s0 + v * p.time_gap + (v * (v - vf)) / (2.0 * (p.a * p.b).sqrt());
    let raw = p.a * (1.0 - (v / p.v0).powi(4) - (s_star / gap) * (s_star / gap));
    raw.max(-2.0 * p.b).min(p.a)
}

#[test]
fn p5_car_following_matches_reference() {
    let p = IdmParams::default();
    assert_eq!(p.delta, 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let v = rng.gen_range(0.0..10.0);
        let vf = rng.gen_range(0.0..10.0);
        let gap = rng.gen_range(0.5..60.0);
        let got = idm_acceleration(v, vf, gap, &p);
        let want = idm_reference(v, vf, gap, &p);
        let rel = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
        worst = worst.max(rel);
    }
    let mut monotone = true;
    for v in [0.0, 2.0, 6.0, 10.0] {
        for vf in [0.0, 3.0, 10.0] {
            let mut prev = f64::NEG_INFINITY;
            for k in 1..=2000 {
                let a = idm_acceleration(v, vf, k as f64 * 0.05, &p);
                monotone &= a >= prev;
                prev = a;
            }
        }
    }
    let pass = worst <= 1e-12 && monotone;
    report("P5", pass, &format!("max relative error {worst:e} over 1000 draws, gap sweep monotone = {monotone}"));
    assert!(pass);
}

#[test]
fn p6_vehicle_dynamics() {
    let params = VehicleParams::default();
    // circle radius
    let dt = 0.001;
    let mut circle_ok = true;
    let mut worst_rel: f64 = 0.0;
    for sigma in [0.1, 0.3, 0.6] {
        let v = 5.0;
        let radius = params.wheelbase / f64::tan(sigma);
        let steps = (2.0 * PI * radius / v / dt).round() as usize;
        let mut s = VehicleState { pose: Pose2D::origin(), speed: v };
        let mut pts = Vec::with_capacity(steps);
        for _ in 0..steps {
            s = bicycle_step(&s, 0.0, sigma, dt, &params);
            pts.push((s.pose.x, s.pose.y));
        }
        let cx = pts.iter().map(|p| p.0).sum::<f64>() / steps as f64;
        let cy = pts.iter().map(|p| p.1).sum::<f64>() / steps as f64;
        let r = pts.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / steps as f64;
        let rel = (r - radius).abs() / radius;
        worst_rel = worst_rel.max(rel);
        circle_ok &= rel <= 0.01;
    }

    // speed closure under fuzzed controls
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pid = PidParams::for_step(0.1, params.accel_max);
    let mut closure_ok = true;
    for _ in 0..10_000 {
        let mut s = VehicleState { pose: Pose2D::origin(), speed: rng.gen_range(0.0..=params.v_max) };
        let mut mem = ControllerMemory::default();
        for _ in 0..20 {
            let raw = match rng.gen_range(0..10) {
                0 => Action::new(f64::NAN, f64::NAN),
                1 => Action::new(f64::INFINITY, f64::NEG_INFINITY),
                _ => Action::new(rng.gen_range(-100.0..100.0), rng.gen_range(-3.0..3.0)),
            };
            let a = raw.clamped(&params);
            let accel = pid_speed_control(&s, a.v_ref, &pid, &mut mem, 0.1);
            s = bicycle_step(&s, accel, a.sigma, 0.1, &params);
            closure_ok &= s.speed >= 0.0 && s.speed <= params.v_max && s.pose.x.is_finite() && s.pose.y.is_finite();
        }
    }

    // speed tracking
    let mut pid_ok = true;
    let mut worst_err: f64 = 0.0;
    for v_ref in [1.0, 3.0, 6.0, 10.0] {
        for v0 in [0.0, 5.0, 10.0] {
            let mut s = VehicleState { pose: Pose2D::origin(), speed: v0 };
            let mut mem = ControllerMemory::default();
            for step in 1..=50 {
                let accel = pid_speed_control(&s, v_ref, &pid, &mut mem, 0.1);
                s = bicycle_step(&s, accel, 0.0, 0.1, &params);
                if step >= 20 {
                    let err = (s.speed - v_ref).abs();
                    worst_err = worst_err.max(err);
                    pid_ok &= err < 0.01;
                }
            }
        }
    }
    let pass = circle_ok && closure_ok && pid_ok;
    report(
        "P6",
        pass,
        &format!(
            "max circle radius error {:.2e}%, speed closure over 10000 sequences = {closure_ok}, \
             max tracking error after 2 s {worst_err:e}",
            worst_rel * 100.0
        ),
    );
    assert!(pass);
}

/// Independent forward pass over the raw tensor map.
struct Reference<'a>(&'a TensorMap);

impl Reference<'_> {
    fn linear(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let w = &self.0[&format!("{name}.weight")];
        let b = &self.0[&format!("{name}.bias")];
        let (rows, cols) = (w.shape[0], w.shape[1]);
        (0..rows)
            .map(|r| b.data[r] as f64 + (0..cols).map(|c| w.data[r * cols + c] as f64 * x[c]).sum::<f64>())
            .collect()
    }

    fn mlp(&self, prefix: &str, x: &[f64]) -> Vec<f64> {
        let n = (0..).take_while(|i| self.0.contains_key(&format!("{prefix}.{i}.weight"))).count();
        let mut h = x.to_vec();
        for i in 0..n {
            h = self.linear(&format!("{prefix}.{i}"), &h);
            if i + 1 < n {
                h.iter_mut().for_each(|v| *v = if *v > 0.0 { *v } else { 0.0 });
            }
        }
        h
    }

    fn polyline(&self, encoder: &str, rows: &[f32], width: usize) -> Vec<f64> {
        let per: Vec<Vec<f64>> = rows
            .chunks(width)
            .map(|r| self.mlp(&format!("{encoder}.vector_mlp"), &r.iter().map(|&v| v as f64).collect::<Vec<_>>()))
            .collect();
        let mut pooled = vec![0.0; per[0].len()];
        for p in &per {
            for (a, b) in pooled.iter_mut().zip(p) {
                *a += b;
            }
        }
        self.mlp(&format!("{encoder}.polyline_post_mlp"), &pooled)
    }

    fn forward(&self, obs: &SerializedObservation) -> Vec<f64> {
        let heads = self.0["meta.heads"].data[0] as usize;
        let mut tokens: Vec<Vec<f64>> = obs.dynamic.iter().map(|p| self.polyline("dynamic_encoder", p, obs.dynamic_width)).collect();
        tokens.extend(obs.statics.iter().map(|p| self.polyline("static_encoder", p, 5)));
        let d = tokens[0].len();
        let dh = d / heads;
        let q = self.linear("mha.q", &tokens[obs.self_index]);
        let k: Vec<Vec<f64>> = tokens.iter().map(|t| self.linear("mha.k", t)).collect();
        let v: Vec<Vec<f64>> = tokens.iter().map(|t| self.linear("mha.v", t)).collect();
        let mut concat = Vec::with_capacity(d);
        for h in 0..heads {
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| (h * dh..(h + 1) * dh).map(|i| q[i] * kj[i]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            // log-sum-exp normalisation
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            for i in h * dh..(h + 1) * dh {
                concat.push(logits.iter().zip(&v).map(|(l, vj)| (l - lse).exp() * vj[i]).sum::<f64>());
            }
        }
        let feature = self.linear("mha.o", &concat);
        let raw = self.mlp("decoder_mlp", &feature);
        if self.0["meta.output_kind"].data[0] == 0.0 {
            let v_max = self.0["meta.v_max"].data[0] as f64;
            let sigma_max = self.0["meta.sigma_max"].data[0] as f64;
            vec![v_max * (1.0 + raw[0].tanh()) / 2.0, sigma_max * raw[1].tanh()]
        } else {
            vec![45.0 * (1.0 + raw[0].tanh())]
        }
    }
}

fn small_arch(rng: &mut ChaCha8Rng) -> Architecture {
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let feature_dim = heads * rng.gen_range(1..=8 / heads);
    let lower = rng.gen_bool(0.5);
    Architecture {
        input_dim: if lower { 6 } else { 5 },
        feature_dim,
        heads,
        vector_hidden: rng.gen_range(1..=8),
        decoder_hidden: rng.gen_range(1..=8),
        output: if lower { OutputKind::Action } else { OutputKind::Svo },
        v_max: 10.0,
        sigma_max: 0.6,
    }
}

fn random_obs(rng: &mut ChaCha8Rng, width: usize) -> SerializedObservation {
    let total = rng.gen_range(1..=3);
    let n_dyn = rng.gen_range(1..=total);
    let h = rng.gen_range(1..=4);
    let mut block = |rows: usize, cols: usize| -> Vec<f32> { (0..rows * cols).map(|_| rng.gen_range(-3.0f32..3.0)).collect() };
    let dynamic = (0..n_dyn).map(|_| block(h, width)).collect();
    let statics = (n_dyn..total).map(|k| block(1 + k, 5)).collect();
    SerializedObservation {
        dynamic_width: width,
        history_len: h,
        dynamic,
        statics,
        self_index: 0,
    }
}

fn permuted(obs: &SerializedObservation, rng: &mut ChaCha8Rng) -> SerializedObservation {
    use rand::seq::SliceRandom;
    let shuffle_rows = |p: &Vec<f32>, w: usize, rng: &mut ChaCha8Rng| -> Vec<f32> {
        let mut rows: Vec<&[f32]> = p.chunks(w).collect();
        rows.shuffle(rng);
        rows.concat()
    };
    let mut dynamic: Vec<Vec<f32>> = obs.dynamic.iter().map(|p| shuffle_rows(p, obs.dynamic_width, rng)).collect();
    let own = dynamic.remove(obs.self_index);
    dynamic.shuffle(rng);
    let self_index = rng.gen_range(0..=dynamic.len());
    dynamic.insert(self_index, own);
    let mut statics: Vec<Vec<f32>> = obs.statics.iter().map(|p| shuffle_rows(p, 5, rng)).collect();
    statics.shuffle(rng);
    SerializedObservation {
        dynamic_width: obs.dynamic_width,
        history_len: obs.history_len,
        dynamic,
        statics,
        self_index,
    }
}

#[test]
fn p7_neural_inference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_ref: f64 = 0.0;
    let mut worst_perm: f64 = 0.0;
    let mut bounds_ok = true;
    let mut roundtrip_ok = true;
    let mut corruption_ok = true;
    for bundle_seed in 0..100u64 {
        let arch = small_arch(&mut rng);
        let bundle = WeightBundle::seeded(&arch, bundle_seed);
        let reference = Reference(bundle.tensors());
        for _ in 0..5 {
            let obs = random_obs(&mut rng, arch.input_dim);
            let got = bundle.forward(&obs).unwrap();
            let want = reference.forward(&obs);
            for (g, w) in got.iter().zip(&want) {
                worst_ref = worst_ref.max((g - w).abs());
            }
            let perm = bundle.forward(&permuted(&obs, &mut rng)).unwrap();
            for (g, p) in got.iter().zip(&perm) {
                worst_perm = worst_perm.max((g - p).abs());
            }
            bounds_ok &= match arch.output {
                OutputKind::Action => (0.0..=10.0).contains(&got[0]) && got[1].abs() <= 0.6,
                OutputKind::Svo => (0.0..=90.0).contains(&got[0]),
            };
        }
        let bytes = bundle.to_bytes();
        let back = WeightBundle::from_bytes(&bytes).unwrap();
        roundtrip_ok &= back.to_bytes() == bytes
            && back.tensors().len() == bundle.tensors().len()
            && back.tensors().iter().zip(bundle.tensors()).all(|((n1, t1), (n2, t2))| n1 == n2 && t1.bits_eq(t2));
        let mut flipped = bytes.clone();
        let at = rng.gen_range(12..bytes.len() - 4);
        flipped[at] ^= 0x10;
        corruption_ok &= matches!(WeightBundle::from_bytes(&flipped), Err(WeightError::ChecksumMismatch { .. }));
        corruption_ok &= WeightBundle::from_bytes(&bytes[..bytes.len() - 1]).is_err();
        let mut magic = bytes.clone();
        magic[0] = b'X';
        corruption_ok &= matches!(WeightBundle::from_bytes(&magic), Err(WeightError::BadMagic));
    }
    let pass = worst_ref <= 1e-5 && worst_perm <= 1e-6 && bounds_ok && roundtrip_ok && corruption_ok;
    report(
        "P7",
        pass,
        &format!(
            "max reference error {worst_ref:e}, max permutation error {worst_perm:e}, bounds = {bounds_ok}, \
             round trip = {roundtrip_ok}, corruption rejected = {corruption_ok}"
        ),
    );
    assert!(pass);
}

#[test]
fn p8_adversary_touches_only_the_ego_entry() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // real adversary observations from an ego-vs-flow world
    let e = common::env(ScenarioName::Merge);
    let case = &generate_cases(e.scenario(), 1, 8, SvoMode::Uniform).unwrap()[0];
    let world = e.reset(case, EnvMode::EgoVsFlow, 0).unwrap();
    let observations: Vec<_> = world.agents[1..]
        .iter()
        .map(|a| build_adversary_observation(&e, &world, a.id).unwrap())
        .collect();
    let network = PolicyHandle::neural_adversary(Arc::new(WeightBundle::seeded(&Architecture::adversary(), 8))).unwrap();
    let clip = e.config().clip_radius;

    let mut pass = true;
    let mut beyond = 0;
    let mut within = 0;
    for draw in 0..10_000 {
        let n = rng.gen_range(1..=16);
        let genuine: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=90.0)).collect();
        let receiver = rng.gen_range(0..n);
        let distance = rng.gen_range(0.0..2.0 * clip);
        let obs = &observations[draw % observations.len()];
        let fixed: f64 = rng.gen_range(0.0..=90.0);
        let from_network = |o: &svoflow::observation::ObservationFrame| network.mistaken_svo(o).unwrap();
        let from_value = move |_: &svoflow::observation::ObservationFrame| fixed;
        let input = AdversaryInput {
            source: Some(if draw % 2 == 0 { &from_network } else { &from_value }),
            observation: Some(obs),
            ego_distance: distance,
            clip_radius: clip,
        };
        let d = communicate(&CommMode::Adversarial, receiver, &genuine, Some(input)).unwrap();
        pass &= d.entries.len() == n;
        for (i, (&got, &g)) in d.entries.iter().zip(&genuine).enumerate() {
            pass &= (0.0..=90.0).contains(&got);
            if i != EGO_INDEX {
                pass &= got.to_bits() == g.to_bits();
            }
        }
        if distance > clip {
            beyond += 1;
            pass &= d.entries[EGO_INDEX].to_bits() == genuine[EGO_INDEX].to_bits();
        } else {
            within += 1;
        }
    }
    report("P8", pass, &format!("10000 draws ({within} within clip radius, {beyond} beyond)"));
    assert!(pass);
    assert_eq!(world.agents[0].status, TerminationStatus::Alive);
}
