use cascade_core::io::{load_shares, load_users, save_shares, save_users, users_from_corpus, HistoryEntry, HistoryStore};
use cascade_core::simulate::{default_mixture, ONE_DAY_S, ONE_WEEK_S};
use cascade_core::weseer::DEFAULT_GRID;
use cascade_core::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(pd: f64, d: u64, seed: u64, horizon_s: f64) -> SimSpec {
    SimSpec {
        kernel: KernelParams::default(),
        p_profile: PProfile::constant(pd / d as f64).unwrap(),
        degree_dist: DegreeDist::Constant { d },
        root_degree: Some(DegreeDist::Constant { d: 500 }),
        horizon_s,
        seed,
        max_events: 100_000,
    }
}

fn ev(id: u64, degree: u64, time_s: f64) -> ShareEvent {
    ShareEvent {
        event_id: id,
        parent_id: (id > 0).then_some(0),
        user_id: format!("u{id}"),
        degree,
        channel: Channel::GroupChat,
        parent_channel: (id > 0).then_some(Channel::Other),
        time_s,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_and_exposure_are_monotone(seed in 0u64..10_000, pd in 0.2f64..0.9) {
        let c = simulate(&spec(pd, 8, seed, ONE_DAY_S)).unwrap();
        prop_assert!(validate_cascade(&c).is_empty());
        let k = KernelParams::default();
        let mut prev = (0u64, 0.0f64, 0.0f64);
        for i in 0..=48 {
            let t = i as f64 * 1800.0;
            let ex = exposure(&c, t, &k);
            let r = c.reshare_count(t);
            prop_assert!(r >= prev.0 && ex.n_t >= prev.1 && ex.n_t_eff >= prev.2);
            prop_assert!(ex.n_t_eff <= ex.n_t * (1.0 + 1e-12));
            prev = (r, ex.n_t, ex.n_t_eff);
        }
        let late = exposure(&c, 1e12, &k);
        prop_assert!((late.n_t - late.n_t_eff).abs() <= 1e-2 * late.n_t);
    }

    #[test]
    fn likelihood_peaks_at_estimate(seed in 0u64..10_000, pd in 0.3f64..0.8, frac in 0.1f64..1.0) {
        let c = simulate(&spec(pd, 10, seed, ONE_DAY_S)).unwrap();
        let k = KernelParams::default();
        let t = ONE_DAY_S * frac;
        prop_assume!(c.reshare_count(t) > 0);
        let p_hat = estimate_p(&c, t, &k, 1).unwrap();
        let at = log_likelihood(&c, t, p_hat, &k).unwrap();
        for delta in [-0.1, -0.01, 0.01, 0.1] {
            prop_assert!(at >= log_likelihood(&c, t, p_hat * (1.0 + delta), &k).unwrap());
        }
    }

    #[test]
    fn final_size_monotone(
        r in 0u64..1000,
        n in 1.0f64..1e5,
        frac in 0.0f64..1.0,
        p in 0.0f64..0.05,
        dp in 0.0f64..0.01,
        n_star in 1.0f64..50.0,
        dn in 0.0f64..10.0,
    ) {
        let ne = n * frac;
        let base = predict_final(r, n, ne, p, n_star, 0.01);
        if let Some(v) = base.value() {
            prop_assert!(v >= r as f64);
            prop_assert_eq!(v == r as f64, p == 0.0 || n == ne || p * (n - ne) < f64::EPSILON * r as f64);
            for other in [predict_final(r, n, ne, p + dp, n_star, 0.01), predict_final(r, n, ne, p, n_star + dn, 0.01)] {
                match other {
                    Outcome::Predicted { value } => prop_assert!(value >= v),
                    o => prop_assert_eq!(o, Outcome::Supercritical),
                }
            }
        } else {
            prop_assert_eq!(base, Outcome::Supercritical);
        }
    }

    #[test]
    fn flat_speed_matches_baseline(per_frame in 1usize..6, frames in 1usize..12, degree in 1u64..50, n_init in 1.0f64..10.0) {
        let schedule = TimeframeSchedule::default();
        let mut events = vec![ev(0, 400, 0.0)];
        for f in 0..frames {
            let (lo, hi) = schedule.frame_bounds_s(f).unwrap();
            for j in 0..per_frame {
                let id = events.len() as u64;
                events.push(ev(id, degree, lo + (hi - lo) * (j as f64 + 0.5) / per_frame as f64));
            }
        }
        let c = Cascade::new("flat", 0, events, None);
        let times: Vec<f64> = schedule.boundaries_s()[1..=frames].to_vec();
        let params = ModelParams { n_star_default: n_init, ..ModelParams::default() };
        let base = seismic_series(&c, &times, &params);
        let w = weseer_series(&c, &times, &params, n_init).unwrap();
        for (a, b) in base.iter().zip(&w) {
            if b.p * n_init < 1.0 - params.epsilon_subcritical {
                prop_assert_eq!(a.outcome, b.outcome);
                prop_assert_eq!(a.p, b.p);
                prop_assert_eq!(b.n_star_used, n_init);
            }
        }
    }

    #[test]
    fn share_loading_is_order_independent(seed in 0u64..1000) {
        let corpus = simulate_corpus(3, &default_mixture(), seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b, u) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("u"));
        save_shares(&corpus, &a).unwrap();
        save_users(&users_from_corpus(&corpus), &u).unwrap();
        let mut lines: Vec<String> = std::fs::read_to_string(&a).unwrap().lines().map(str::to_string).collect();
        lines.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        std::fs::write(&b, lines.join("\n") + "\n").unwrap();
        let users = load_users(&u).unwrap();
        prop_assert_eq!(load_shares(&a, &users).unwrap(), load_shares(&b, &users).unwrap());
    }
}

#[test]
fn recommendation_lands_near_generating_degree() {
    let d = 100.0;
    let params = ModelParams::default();
    let times = params.schedule.boundaries_s();
    let mut hits = 0;
    for seed in 0..10 {
        let spec = SimSpec {
            kernel: KernelParams::default(),
            p_profile: PProfile::constant(0.6 / d).unwrap(),
            degree_dist: DegreeDist::lognormal_with_mean(d, 0.5),
            root_degree: Some(DegreeDist::Constant { d: 30_000 }),
            horizon_s: ONE_WEEK_S,
            seed,
            max_events: 200_000,
        };
        let c = simulate(&spec).unwrap();
        let rec = recommend_degree(&c, &DEFAULT_GRID, c.final_size.unwrap() as f64, &times, &params).unwrap();
        let idx = DEFAULT_GRID.iter().position(|g| *g == rec.best).unwrap();
        let target = DEFAULT_GRID.iter().position(|g| *g == d).unwrap();
        hits += (idx.abs_diff(target) <= 1) as usize;
    }
    assert!(hits >= 8, "best within one grid step of {d} in {hits}/10 cascades");
}

#[test]
fn history_sessions_do_not_interleave() {
    let dir = tempfile::tempdir().unwrap();
    let store = HistoryStore::open(dir.path()).unwrap();
    std::thread::scope(|s| {
        for session in 0..4 {
            let store = &store;
            s.spawn(move || {
                for i in 0..50 {
                    let entry = HistoryEntry {
                        n_init: i as f64,
                        timestamp: 600.0,
                        series_ref: format!("s{session}-{i}"),
                    };
                    store.append(&format!("sess{session}"), entry).unwrap();
                }
            });
        }
    });
    let reopened = HistoryStore::open(dir.path()).unwrap();
    for session in 0..4 {
        let h = reopened.list(&format!("sess{session}")).unwrap();
        let refs: Vec<String> = h.entries.iter().map(|e| e.series_ref.clone()).collect();
        let expected: Vec<String> = (0..50).map(|i| format!("s{session}-{i}")).collect();
        assert_eq!(refs, expected);
    }
}
