mod common;

use cachelab::metrics::ClusterAssignment;
use cachelab::policies::*;
use cachelab::profiles::AppProfile;
use proptest::prelude::*;

/// Convex non-increasing slowdown table ending at 1.
fn convex_table(mut gains: Vec<f64>) -> Vec<f64> {
    gains.sort_by(|a, b| b.total_cmp(a));
    let mut t = vec![1.0; gains.len() + 1];
    for i in (0..gains.len()).rev() {
        t[i] = t[i + 1] + gains[i];
    }
    t
}

fn at(t: &[f64], w: usize) -> f64 {
    t[w.min(t.len()) - 1]
}

/// Smallest total slowdown over every split of `budget` ways.
fn brute_min_sum(tables: &[Vec<f64>], budget: usize) -> f64 {
    fn go(tables: &[Vec<f64>], left: usize, acc: f64, best: &mut f64) {
        match tables {
            [] => {}
            [last] => *best = best.min(acc + at(last, left)),
            [first, rest @ ..] => {
                for w in 1..=left - rest.len() {
                    go(rest, left - w, acc + at(first, w), best);
                }
            }
        }
    }
    let mut best = f64::INFINITY;
    go(tables, budget, 0.0, &mut best);
    best
}

proptest! {
    #[test]
    fn lookahead_is_optimal_on_convex_tables(
        gains in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 1..=4),
        extra in 0usize..8,
    ) {
        let tables: Vec<Vec<f64>> = gains.into_iter().map(convex_table).collect();
        let budget = tables.len() + extra;
        let alloc = lookahead(&tables, budget).unwrap();
        prop_assert_eq!(alloc.iter().sum::<usize>(), budget);
        prop_assert!(alloc.iter().all(|&w| w >= 1));
        let got: f64 = tables.iter().zip(&alloc).map(|(t, &w)| at(t, w)).sum();
        prop_assert!((got - brute_min_sum(&tables, budget)).abs() < 1e-9);
    }

    #[test]
    fn lookahead_ignores_slowdown_scale(
        excess in prop::collection::vec(prop::collection::vec(0u32..64, 6), 1..=4),
        extra in 0usize..10,
        shift in 1u32..=2,
    ) {
        let scale = f64::from(1u32 << shift);
        let table = |e: &Vec<u32>, c: f64| e.iter().map(|&x| 1.0 + c * f64::from(x) / 64.0).collect::<Vec<f64>>();
        let base: Vec<Vec<f64>> = excess.iter().map(|e| table(e, 1.0)).collect();
        let scaled: Vec<Vec<f64>> = excess.iter().map(|e| table(e, scale)).collect();
        let budget = base.len() + extra;
        prop_assert_eq!(lookahead(&base, budget).unwrap(), lookahead(&scaled, budget).unwrap());
    }

    #[test]
    fn amplified_sensitivity_stays_sensitive(
        excess in prop::collection::vec(0.0f64..0.5, 11),
        amp in 1.0f64..4.0,
        llc in 0.0f64..40.0,
    ) {
        let p = LfocParams::default();
        let mut e = excess;
        e[10] = 0.0;
        let table = |c: f64| e.iter().map(|x| 1.0 + c * x).collect::<Vec<f64>>();
        let llcs = vec![llc; 11];
        if classify_tables(&table(1.0), &llcs, &p).unwrap() == AppClass::Sensitive {
            prop_assert_eq!(classify_tables(&table(amp), &llcs, &p).unwrap(), AppClass::Sensitive);
        }
    }

    #[test]
    fn damped_streaming_stays_streaming(
        excess in prop::collection::vec(0.0f64..0.06, 11),
        damp in 0.0f64..=1.0,
        llc in 10.0f64..40.0,
    ) {
        let p = LfocParams::default();
        let table = |c: f64| excess.iter().map(|x| 1.0 + c * x).collect::<Vec<f64>>();
        let llcs = vec![llc; 11];
        if classify_tables(&table(1.0), &llcs, &p).unwrap() == AppClass::Streaming {
            prop_assert_eq!(classify_tables(&table(damp), &llcs, &p).unwrap(), AppClass::Streaming);
        }
    }

    #[test]
    fn lfoc_partition_is_always_feasible(
        classes in prop::collection::vec(0u8..3, 1..20),
        k in 2usize..20,
        capacity in any::<bool>(),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let params = LfocParams {
            gap_mode: if capacity { GapMode::Capacity } else { GapMode::Literal },
            ..Default::default()
        };
        let mut sets = ClassSets::default();
        for (i, c) in classes.iter().enumerate() {
            match c {
                0 => sets.streaming.push(i),
                1 => sets.sensitive.push((i, (0..k).map(|_| 1.0 + rng.gen_range(0.0..2.0)).collect())),
                _ => sets.light.push(i),
            }
        }
        let needed = sets.sensitive.len() + usize::from(!sets.streaming.is_empty() && !sets.sensitive.is_empty());
        match lfoc_partition(&sets, k, &params) {
            Ok(a) => {
                prop_assert!(a.validate(classes.len(), k).is_ok(), "{:?}", a);
                let streaming_clusters = a.clusters.iter().filter(|c| c.iter().any(|x| sets.streaming.contains(x))).count();
                if !sets.sensitive.is_empty() && !sets.streaming.is_empty() {
                    prop_assert!(streaming_clusters <= 2);
                    for s in &sets.streaming {
                        prop_assert_eq!(a.ways_of(*s), Some(1));
                    }
                }
            }
            Err(e) => prop_assert!(k < needed, "{e}"),
        }
    }
}

#[test]
fn fixture_classes() {
    let p = LfocParams::default();
    let w = common::fixture_workload();
    let classes: Vec<AppClass> = w.apps.iter().map(|a| classify(a, &p)).collect();
    assert_eq!(
        classes,
        vec![
            AppClass::Streaming,
            AppClass::Sensitive,
            AppClass::LightSharing,
            AppClass::LightSharing
        ]
    );
}

#[test]
fn fixture_assignment() {
    let a = lfoc_assignment(&common::fixture_workload(), &LfocParams::default()).unwrap();
    assert_eq!(a, ClusterAssignment::new(vec![vec![0], vec![1, 2, 3]], vec![1, 10]));
}

#[test]
fn classification_uses_the_slowdown_table() {
    // slowdown is derived from IPC, so a dip above the full-cache IPC is clamped
    let k = 4;
    let p = AppProfile::new("n", vec![0.99, 1.02, 1.0, 1.0], vec![20.0; k], vec![0.1; k], None).unwrap();
    assert_eq!(p.slowdown_table(), &[1.0 / 0.99, 1.0, 1.0, 1.0]);
    assert_eq!(classify(&p, &LfocParams::default()), AppClass::Streaming);
}
