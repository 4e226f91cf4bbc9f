use proptest::prelude::*;
use ssrs::rng::{seeded, stream};
use ssrs::schedules::{lambda_at, alpha_at, p_u_at, ScheduleState};
use ssrs::{
    apply_augment, double_entropy, pseudo_label, select, shannon_entropy, soft_select, AugmentSpec, ReplayBuffer64,
    RewardSet64, TrajectoryMatrix64, Transition64,
};

fn traj(rows: usize, m1: usize) -> impl Strategy<Value = TrajectoryMatrix64> {
    (prop::collection::vec(0.0..255.0f64, rows * m1), prop::collection::vec(0usize..3, rows), prop::collection::vec(-2.0..2.0f64, rows))
        .prop_map(move |(states, acts, rewards)| {
            let actions = acts.iter().flat_map(|&a| (0..3).map(move |j| if j == a { 1.0 } else { 0.0 })).collect();
            TrajectoryMatrix64::new(m1, 3, states, actions, rewards).unwrap()
        })
}

#[derive(Debug, Clone)]
enum Op {
    Push(f64),
    Shape(usize, f64),
    Clear(usize),
    ClearAll,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => prop_oneof![Just(0.0), Just(1.0), Just(-0.5)].prop_map(Op::Push),
        2 => (any::<usize>(), -1.0..1.0f64).prop_map(|(i, r)| Op::Shape(i, r)),
        1 => any::<usize>().prop_map(Op::Clear),
        1 => Just(Op::ClearAll),
    ]
}

proptest! {
    #[test]
    fn entropy_bounds_and_scale_invariance(
        v in prop::collection::vec(0.0..100.0f64, 1..64),
        c in 0.01..1000.0f64,
    ) {
        let h = shannon_entropy(&v).unwrap();
        let positive = v.iter().filter(|&&x| x > 0.0).count().max(1);
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (positive as f64).ln() + 1e-9);
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        prop_assert!((shannon_entropy(&scaled).unwrap() - h).abs() < 1e-9);
    }

    #[test]
    fn uniform_entries_reach_max_entropy(n in 1usize..200, x in 0.1..10.0f64) {
        let h = shannon_entropy(&vec![x; n]).unwrap();
        prop_assert!((h - (n as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn augmentations_touch_states_only(t in (1usize..6).prop_flat_map(|r| traj(r, 16)), seed in any::<u64>()) {
        for kind in AugmentSpec::KINDS {
            let spec = AugmentSpec::from_name(kind, &Default::default()).unwrap();
            let out = apply_augment(&spec, &t, &mut seeded(seed, stream::AUGMENT)).unwrap();
            prop_assert_eq!((out.rows(), out.state_dim(), out.action_dim()), (t.rows(), t.state_dim(), t.action_dim()));
            prop_assert_eq!(out.actions(), t.actions());
            prop_assert_eq!(out.rewards(), t.rewards());
            prop_assert!(out.states().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn double_entropy_is_scale_equivariant(t in (1usize..5).prop_flat_map(|r| traj(r, 16)), c in 0.1..10.0f64, n in 1usize..9) {
        // entropies are scale free, so scaling the input scales the output
        let scaled = TrajectoryMatrix64::new(16, 3, t.states().iter().map(|x| x * c).collect(), t.actions().to_vec(), t.rewards().to_vec()).unwrap();
        let (a, b) = (double_entropy(&t, n).unwrap(), double_entropy(&scaled, n).unwrap());
        for (x, y) in a.states().iter().zip(b.states()) {
            prop_assert!((x * c - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn nonzero_cache_tracks_recount(ops in prop::collection::vec(op(), 0..80), capacity in 1usize..10) {
        let mut buf = ReplayBuffer64::new(capacity).unwrap();
        for op in ops {
            match op {
                Op::Push(r) => buf.push(Transition64::new(vec![1.0, 2.0], vec![1.0, 0.0], r, vec![2.0, 3.0], false)).unwrap(),
                Op::Shape(i, r) if !buf.is_empty() => {
                    let i = i % buf.len();
                    let allowed = buf.get(i).unwrap().original_reward == 0.0;
                    prop_assert_eq!(buf.set_shaped_reward(i, r).is_ok(), allowed);
                }
                Op::Clear(i) if !buf.is_empty() => buf.clear_shaping(i % buf.len()),
                Op::ClearAll => { buf.clear_all_shaping(); }
                _ => {}
            }
            prop_assert_eq!(buf.nonzero_count(), buf.recount_nonzero());
            prop_assert!(buf.len() <= capacity);
            for e in buf.iter() {
                prop_assert!(e.shaped || e.transition.reward == e.original_reward);
                prop_assert!(!e.shaped || e.original_reward == 0.0);
            }
        }
    }

    #[test]
    fn selection_stays_in_reward_set(
        q in prop::collection::vec(0.0..1.0f64, 2..16),
        lambda in 0.0..1.0f64,
        temp in 0.01..5.0f64,
        lo in -5.0..0.0f64,
        hi in 0.1..5.0f64,
    ) {
        let mut zset = RewardSet64::new(q.len()).unwrap();
        zset.observe(lo);
        zset.observe(hi);
        let z = zset.values();
        let hard = select(&q, z, lambda);
        let max = q.iter().cloned().fold(f64::MIN, f64::max);
        if max > lambda {
            prop_assert!(z.contains(&hard));
        } else {
            prop_assert_eq!(hard, 0.0);
        }
        let soft = soft_select(&q, z, temp);
        prop_assert!(soft >= lo - 1e-9 && soft <= hi + 1e-9);
        match pseudo_label(&q, lambda) {
            Some(label) => {
                prop_assert!(max >= lambda);
                prop_assert_eq!(label.iter().sum::<f64>(), 1.0);
            }
            None => prop_assert!(max < lambda),
        }
    }

    #[test]
    fn schedules_are_bounded_and_monotone(t1 in 0.0..1.0f64, t2 in 0.0..1.0f64, total in 1.0..5000.0f64) {
        let (a, b) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (la, lb) = (lambda_at(a * total, total).unwrap(), lambda_at(b * total, total).unwrap());
        prop_assert!(la <= lb + 1e-12);
        prop_assert!((0.6 - 1e-12..=0.9).contains(&la));
        let (aa, ab) = (alpha_at(a * total, total).unwrap(), alpha_at(b * total, total).unwrap());
        prop_assert!(aa <= ab + 1e-12);
        prop_assert!((0.2 - 1e-12..=0.7 + 1e-12).contains(&aa));
    }

    #[test]
    fn p_u_is_a_proportion(ep in 0.0..1.0f64, nonzero in 0usize..1000, extra in 0usize..1000, base in 0.0..1.0f64) {
        let p = p_u_at(&ScheduleState::new(ep * 100.0, 100.0, nonzero, nonzero + extra), base);
        prop_assert!((0.0..=1.0).contains(&p));
    }
}
