//! Property tests for the invariants each module promises.

use followrl::baselines::{idm_accel, IdmParams};
use followrl::control::{collect_reverse_data, powertrain_step, CollectConfig, ControlNet, PowertrainModel};
use followrl::datasets::{build_transitions, split_train_eval, FollowingEpisode, RelabeledDataset, Source, TrajectoryRecord};
use followrl::ddpg::{sample_mixed_tagged, DdpgAgent, DdpgConfig, ReplayBuffer, Transition};
use followrl::eval::{run_scenario, ttc_summary, Scenario, StdKind};
use followrl::neural::{MlpNet, OutputActivation};
use followrl::reward::{reward_total, RewardConfig};
use followrl::sim::{gen_leader_profile, normalize_state, ConstantAccel, FollowEnv, Observation, SimConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn transition(tag: f64) -> Transition {
    Transition { state: Observation([tag; 4]), action: 0.0, reward: tag, next_state: Observation([tag; 4]), done: false }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn observation_stays_in_range(v in 0.0f64..40.0, a in -9.0f64..5.0, vl in 0.0f64..40.0, g in -20.0f64..400.0) {
        let cfg = SimConfig::default();
        let o = normalize_state(v, a, vl, g, &cfg).unwrap();
        prop_assert!(o.0[0] >= 0.0);
        prop_assert!((0.0..=1.0).contains(&o.0[1]));
        prop_assert!((0.0..=1.0).contains(&o.0[3]));
    }

    #[test]
    fn simulator_respects_physical_bounds(seed in 0u64..1000, actions in prop::collection::vec(-20.0f64..20.0, 1..300)) {
        let cfg = SimConfig { max_steps: 250, ..Default::default() };
        let mut env = FollowEnv::new(cfg.clone(), RewardConfig::default()).unwrap();
        env.reset(gen_leader_profile(seed, 30.0, &cfg).unwrap(), seed).unwrap();
        for a in actions {
            if env.is_done() {
                break;
            }
            let out = env.step(a).unwrap();
            prop_assert!(out.info.v_follower >= 0.0);
            prop_assert!(out.info.accel >= cfg.a_min && out.info.accel <= cfg.a_max);
            prop_assert!(out.reward.is_finite());
            prop_assert!(env.step_index() <= cfg.max_steps);
            if !out.info.collision {
                prop_assert!(out.info.gap >= 0.0);
            }
        }
    }

    #[test]
    fn reward_terms_compose(v in 0.0f64..30.0, vl in 0.0f64..30.0, g in 0.1f64..300.0, j in -100.0f64..100.0) {
        let cfg = RewardConfig::default();
        let b = reward_total(v, vl, g, j, &cfg).unwrap();
        let sum = cfg.w_safe * b.r_safe + cfg.w_gap * b.r_gap + cfg.w_jerk * b.r_jerk;
        prop_assert!((b.total - sum).abs() <= 1e-12);
        prop_assert!(b.r_safe > -1.0 && b.r_safe <= 0.0);
        prop_assert!(b.r_jerk <= 0.0);
        if g <= b.g_lim {
            prop_assert!((0.0..=1.0).contains(&b.r_gap));
        }
    }

    #[test]
    fn tanh_head_is_bounded(seed in 0u64..500, x in prop::array::uniform4(-3.0f64..3.0)) {
        let net = MlpNet::new(&[4, 32, 32, 1], OutputActivation::Tanh, seed).unwrap();
        let y = net.predict(&x).unwrap()[0];
        prop_assert!(y > -1.0 && y < 1.0);
    }

    #[test]
    fn replay_buffer_evicts_oldest(cap in 1usize..50, n in 0usize..200) {
        let mut buf = ReplayBuffer::new(cap);
        for i in 0..n {
            buf.push(transition(i as f64));
        }
        prop_assert_eq!(buf.len(), n.min(cap));
        let kept: Vec<f64> = buf.iter_fifo().map(|t| t.reward).collect();
        let want: Vec<f64> = (n.saturating_sub(cap)..n).map(|i| i as f64).collect();
        prop_assert_eq!(kept, want);
    }

    #[test]
    fn exploratory_actions_are_clipped(seed in 0u64..200, obs in prop::array::uniform4(-1.0f64..2.0)) {
        let sim = SimConfig::default();
        let agent = DdpgAgent::new(DdpgConfig::default(), &sim, seed).unwrap();
        let mut noise = agent.make_noise(seed);
        for _ in 0..50 {
            let a = agent.select_action(&Observation(obs), &mut noise, true);
            prop_assert!(a >= sim.a_min && a <= sim.a_max);
        }
    }

    #[test]
    fn batch_composition_for_any_ratio(r in 0.0f64..=1.0, batch in 1usize..128, seed in 0u64..100) {
        let sim = ReplayBuffer::from_transitions(vec![transition(0.0); 10]);
        let practical = ReplayBuffer::from_transitions(vec![transition(1.0); 10]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = sample_mixed_tagged(&sim, &practical, batch, r, &mut rng).unwrap();
        let want = ((r * batch as f64) + 0.5).floor() as usize;
        prop_assert_eq!(b.len(), batch);
        prop_assert_eq!(b.iter().filter(|(t, p)| *p && t.reward == 1.0).count(), want);
    }

    #[test]
    fn relabeling_drops_two_records_per_episode(v0 in 0.0f64..20.0, accels in prop::collection::vec(-3.0f64..3.0, 2..80)) {
        let dt = 0.1;
        let mut records = vec![TrajectoryRecord { t: 0.0, v_leader: 10.0, v_follower: v0, gap: 30.0 }];
        for (k, a) in accels.iter().enumerate() {
            let prev = records[k];
            let v = (prev.v_follower + a * dt).max(0.0);
            let gap = (prev.gap + (prev.v_leader - v) * dt).max(0.5);
            records.push(TrajectoryRecord { t: (k + 1) as f64 * dt, v_leader: 10.0, v_follower: v, gap });
        }
        let n = records.len();
        let ep = FollowingEpisode::new("p", Source::Ngsim, dt, records).unwrap();
        let ds = build_transitions(&ep, &SimConfig::default(), &RewardConfig::default()).unwrap();
        prop_assert_eq!(ds.len(), n - 2);
        let cfg = SimConfig::default();
        prop_assert!(ds.transitions.iter().all(|t| t.action >= cfg.a_min && t.action <= cfg.a_max && t.reward.is_finite()));
        prop_assert!(ds.transitions.last().unwrap().done);
        prop_assert!(ds.transitions[..ds.len() - 1].iter().all(|t| !t.done));
    }

    #[test]
    fn split_partitions_transitions(lens in prop::collection::vec(3usize..60, 1..40), frac in 0.5f64..0.99, seed in 0u64..50) {
        let parts = lens.iter().enumerate().map(|(i, &n)| {
            let records = (0..n).map(|k| TrajectoryRecord { t: k as f64 * 0.1, v_leader: 5.0, v_follower: 5.0, gap: 20.0 }).collect();
            let ep = FollowingEpisode::new(format!("e{i}"), Source::Napoli, 0.1, records).unwrap();
            build_transitions(&ep, &SimConfig::default(), &RewardConfig::default()).unwrap()
        }).collect();
        let ds = RelabeledDataset::concat(parts);
        let (tr, ev) = split_train_eval(&ds, frac, seed).unwrap();
        prop_assert_eq!(tr.len() + ev.len(), ds.len());
        let spans: usize = tr.episodes.iter().chain(&ev.episodes).map(|s| s.len).sum();
        prop_assert_eq!(spans, ds.len());
    }

    #[test]
    fn idm_output_within_actuator_limits(v in 0.0f64..30.0, vl in 0.0f64..30.0, g in 0.05f64..200.0) {
        let p = IdmParams::default();
        let a = idm_accel(v, vl, g, &p).unwrap();
        prop_assert!(a >= p.a_min && a <= p.a_max);
    }

    #[test]
    fn powertrain_never_reverses(th in 0.0f64..=1.0, br in 0.0f64..=1.0, v in 0.0f64..45.0) {
        let m = PowertrainModel::default();
        let (_, v_next) = powertrain_step(&m, th, br, v, 0.1).unwrap();
        prop_assert!(v_next >= 0.0);
        prop_assert!(powertrain_step(&m, th + 1.01, br, v, 0.1).is_err());
        prop_assert!(powertrain_step(&m, th, -br - 0.01, v, 0.1).is_err());
    }

    #[test]
    fn control_outputs_are_pedals(seed in 0u64..300, x in prop::array::uniform3(-50.0f64..50.0)) {
        let net = ControlNet::new(seed).unwrap();
        let (t, b) = net.pedals(x[0], x[1], x[2]);
        prop_assert!((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&b));
    }

    #[test]
    fn ttc_statistics_are_ordered(vals in prop::collection::vec(prop::option::of(0.01f64..30.0), 0..200)) {
        let s = ttc_summary(&vals, 10.0, StdKind::Population);
        let kept: Vec<f64> = vals.iter().flatten().copied().filter(|x| *x <= 10.0).collect();
        prop_assert_eq!(s.count, kept.len());
        if let (Some(min), Some(med)) = (s.minimum, s.median) {
            let max = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min <= med && med <= max);
        } else {
            prop_assert!(kept.is_empty());
        }
    }

    #[test]
    fn traces_have_aligned_columns(a in -3.0f64..3.0, seed in 0u64..100) {
        let sim = SimConfig::default();
        let sc = Scenario { name: "p".into(), profile: gen_leader_profile(seed, 40.0, &sim).unwrap(), init_gap: 25.0, init_speed: 0.0 };
        let tr = run_scenario(&mut ConstantAccel(a), &sc, &sim, &RewardConfig::default()).unwrap();
        let n = tr.len();
        for len in [tr.v_leader.len(), tr.v_follower.len(), tr.gap.len(), tr.accel.len(), tr.jerk.len(), tr.reward.len(), tr.ttc.len()] {
            prop_assert_eq!(len, n);
        }
        let end = if tr.collision { n - 1 } else { n };
        prop_assert!(tr.gap[..end].iter().all(|g| *g > 0.0));
    }
}

#[test]
fn collector_never_presses_both_pedals() {
    let samples = collect_reverse_data(&PowertrainModel::default(), &CollectConfig { duration: 300.0, ..Default::default() }, 4).unwrap();
    assert!(samples.iter().all(|s| s.throttle * s.brake == 0.0));
    assert!(samples.iter().all(|s| (0.0..=1.0).contains(&s.throttle) && (0.0..=1.0).contains(&s.brake) && s.v >= 0.0));
}
