use proptest::prelude::*;
use relalloc::model::{expand_plan, AllocationPlan, Configuration, Platform, Scenario, Service};

fn scenario() -> impl Strategy<Value = Scenario> {
    (
        (0.1f64..10.0, 1usize..64, 1e-6f64..0.5),
        prop::collection::vec((1e-3f64..1e4, 1e-300f64..0.999), 1..40),
        any::<u64>(),
    )
        .prop_map(|((cpu, mem, f), services, seed)| Scenario {
            platform: Platform::new(cpu, mem, f).unwrap(),
            services: services
                .into_iter()
                .map(|(demand, reliability)| Service { demand, reliability })
                .collect(),
            seed,
        })
}

fn plan() -> impl Strategy<Value = AllocationPlan> {
    (1usize..8).prop_flat_map(|ns| {
        (
            prop::collection::vec(
                prop::collection::btree_map(0..ns, 0.0f64..=1.0, 1..=ns),
                1..10,
            ),
            prop::collection::vec(0u32..50, 10),
            prop::collection::vec(0.01f64..1.0, ns),
            prop::collection::vec(0.0f64..100.0, ns),
        )
            .prop_map(|(configs, lambdas, slices, targets)| AllocationPlan {
                multiplicities: lambdas[..configs.len()].iter().map(|&l| l as f64).collect(),
                configurations: configs.into_iter().map(Configuration::from_pairs).collect(),
                slices,
                replica_targets: targets,
            })
    })
}

proptest! {
    #[test]
    fn scenario_round_trips(s in scenario()) {
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn plan_round_trips(p in plan()) {
        let back = AllocationPlan::from_json(&p.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(expand_plan(&back).unwrap(), expand_plan(&p).unwrap());
    }
}

#[test]
fn plan_files_round_trip_and_revalidate() {
    let platform = Platform::new(1.0, 2, 0.01).unwrap();
    let plan = AllocationPlan {
        configurations: vec![
            Configuration::from_pairs([(0, 1.0), (1, 1.0)]),
            Configuration::from_pairs([(1, 1.0), (2, 0.5)]),
        ],
        multiplicities: vec![3.0, 2.0],
        slices: vec![0.6, 0.4, 0.8],
        replica_targets: vec![3.0, 5.0, 1.0],
    };
    plan.validate(&platform).unwrap();
    let dir = std::env::temp_dir().join(format!("relalloc-plan-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("plan.json");
    plan.save(&path).unwrap();
    let back = AllocationPlan::load(&path).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    back.validate(&platform).unwrap();
    assert_eq!(back, plan);
    let machines = expand_plan(&back).unwrap();
    assert_eq!(machines.len(), 5);
    assert!((machines[4][&2] - 0.4).abs() < 1e-15);
}

#[test]
fn malformed_inputs_are_rejected() {
    assert!(Scenario::from_json("{\"platform\": 3}").is_err());
    let broken = AllocationPlan {
        configurations: vec![Configuration::from_pairs([(0, 1.0)])],
        multiplicities: vec![1.0],
        slices: vec![0.5],
        replica_targets: vec![2.0],
    };
    assert!(broken.validate(&Platform::new(1.0, 2, 0.01).unwrap()).is_err());
    let fractional = AllocationPlan { multiplicities: vec![1.5], ..broken };
    assert!(expand_plan(&fractional).is_err());
}
