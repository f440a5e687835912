use std::sync::Arc;

use proptest::prelude::*;
use safebatch::io::*;
use safebatch::Error;
use safebatch_core::approx::{FeatureMap, QFunction};
use safebatch_core::learner::RunTrace;
use safebatch_core::*;

fn bytes_of<F: FnOnce(&mut Vec<u8>) -> safebatch::Result<()>>(f: F) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).unwrap();
    buf
}

#[test]
fn frozenlake_dataset_round_trips() {
    let mdp = build_frozenlake(&Layout::standard_8x8()).unwrap();
    let behavior = dataset::make_frozenlake_behavior(&mdp, 0.95).unwrap();
    let d = collect(&mdp, &behavior, CollectOptions::new(200, 100), &mut rng::stream(1, "collect")).unwrap();
    let text = bytes_of(|w| write_dataset(w, &d));
    assert!(text.starts_with(b"traj_id,t,x,a,x_next,c,g_1,done,behavior_prob\n"));
    let back = read_dataset(text.as_slice()).unwrap();
    assert_eq!(back, d);
    assert_eq!(bytes_of(|w| write_dataset(w, &back)), text);
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/d.csv");
    let mdp = build_random_mdp(4, 3, 2, 5).unwrap();
    let d = collect(&mdp, &StochasticPolicy::uniform(4, 3), CollectOptions::new(7, 9), &mut rng::stream(5, "c")).unwrap();
    save_dataset(&path, &d).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), d);
    let missing = load_dataset(&dir.path().join("absent.csv")).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
}

#[test]
fn broken_trajectories_are_rejected_on_read() {
    // Second row does not start where the first ended.
    let text = "traj_id,t,x,a,x_next,c,done,behavior_prob\n0,0,0,1,1,0,0,0.5\n0,1,2,1,3,0,0,0.5\n";
    assert!(matches!(read_dataset(text.as_bytes()), Err(Error::Core(safebatch_core::Error::Data(_)))));
}

#[test]
fn policies_and_mixtures_round_trip() {
    let a = DeterministicPolicy::new(vec![0, 3, 2, 1], 4).unwrap();
    let b = DeterministicPolicy::new(vec![1, 1, 1, 1], 4).unwrap();
    let text = bytes_of(|w| write_policy(w, &a));
    assert_eq!(read_policy_file(text.as_slice(), 4).unwrap(), PolicyFile::Deterministic(a.clone()));
    assert!(read_policy_file(text.as_slice(), 3).is_err(), "action 3 is out of range for 3 actions");

    let mix = MixturePolicy::from_parts(vec![a, b], vec![3, 1], vec![-0.25, 1.0 / 3.0], vec![vec![0.1], vec![0.7]]).unwrap();
    let text = bytes_of(|w| write_mixture(w, &mix));
    assert!(text.starts_with(b"member,count,weight,C_hat,G_hat_1,actions\n"));
    assert_eq!(read_policy_file(text.as_slice(), 4).unwrap(), PolicyFile::Mixture(mix));
}

#[test]
fn out_of_order_policy_rows_name_their_line() {
    let text = "x,action\n0,1\n2,1\n";
    match read_policy_file(text.as_bytes(), 4).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn q_functions_round_trip() {
    let q = QFunction::tabular(3, 2, vec![0.5, -1.0, 1e-17, 2.0, 3.25, -0.0]).unwrap();
    let text = bytes_of(|w| write_q(w, &q));
    assert!(text.starts_with(b"x,a,value\n0,0,"));
    assert_eq!(read_q(text.as_slice(), 3, 2).unwrap(), q);

    let features = Arc::new(FeatureMap::one_hot(2, 2));
    let q = QFunction::linear(features, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let text = bytes_of(|w| write_q(w, &q));
    assert!(text.starts_with(b"index,weight\n"));
    assert_eq!(read_q(text.as_slice(), 2, 2).unwrap(), q);
    assert!(read_q(text.as_slice(), 3, 2).is_err());
}

#[test]
fn trace_columns_follow_the_dual_dimension() {
    let mdp = build_frozenlake(&Layout::standard_4x4()).unwrap();
    let behavior = dataset::make_frozenlake_behavior(&mdp, 0.9).unwrap();
    let d = collect(&mdp, &behavior, CollectOptions::new(200, 50), &mut rng::stream(2, "c")).unwrap();
    let mut config = LearnerConfig::new(vec![0.1], 30.0, 50.0, 0.05);
    config.max_rounds = Some(5);
    let out = run(&d, &config, Some(&mdp)).unwrap();
    let text = String::from_utf8(bytes_of(|w| write_trace(w, &out.trace))).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "round,lambda_1,lambda_2,C_hat,G_1,L_max,L_min,gap");
    for (line, record) in lines.zip(&out.trace.records) {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[0] as u64, record.round);
        assert_eq!(fields[7], record.gap);
        assert_eq!(fields[5] - fields[6], record.l_max - record.l_min);
    }
    config.dual_flavor = DualFlavor::OgdBall;
    let out = run(&d, &config, Some(&mdp)).unwrap();
    let text = String::from_utf8(bytes_of(|w| write_trace(w, &out.trace))).unwrap();
    assert!(text.starts_with("round,lambda_1,C_hat,G_1,L_max,L_min,gap\n"));
    let empty = RunTrace { records: vec![], termination: learner::Termination::Converged };
    assert_eq!(bytes_of(|w| write_trace(w, &empty)), b"round,C_hat,L_max,L_min,gap\n");
}

#[test]
fn layouts_resolve_by_name_or_path() {
    assert_eq!(load_layout("8x8").unwrap(), Layout::standard_8x8());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.txt");
    std::fs::write(&path, "SFG\nFHF\n").unwrap();
    let layout = load_layout(path.to_str().unwrap()).unwrap();
    assert_eq!((layout.rows(), layout.cols()), (2, 3));
    std::fs::write(&path, "SXG\n").unwrap();
    assert!(matches!(load_layout(path.to_str().unwrap()), Err(Error::Core(_))));
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (0usize..3, prop::collection::vec((1usize..6, any::<bool>()), 0..6)).prop_flat_map(|(m, trajs)| {
        let steps: usize = trajs.iter().map(|t| t.0).sum();
        (
            Just(m),
            Just(trajs),
            prop::collection::vec((0usize..5, 0usize..4, -1e6f64..1e6, prop::collection::vec(0.0f64..1e3, m), 1e-6f64..=1.0), steps),
        )
            .prop_map(|(m, trajs, cells)| {
                let mut samples = Vec::new();
                let mut cells = cells.into_iter();
                for (id, (len, ends)) in trajs.into_iter().enumerate() {
                    let mut x = 0;
                    for t in 0..len {
                        let (next, a, c, g, p) = cells.next().unwrap();
                        samples.push(TransitionSample {
                            traj_id: 10 * id as u64 + 3,
                            t: t as u64,
                            x,
                            a,
                            x_next: next,
                            c,
                            g,
                            done: ends && t + 1 == len,
                            behavior_prob: p,
                        });
                        x = next;
                    }
                }
                Dataset::new(m, samples).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_round_trip_is_the_identity(d in arb_dataset()) {
        let text = bytes_of(|w| write_dataset(w, &d));
        let back = read_dataset(text.as_slice()).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(bytes_of(|w| write_dataset(w, &back)), text);
    }

    #[test]
    fn tabular_q_round_trip_is_the_identity(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 12)) {
        let q = QFunction::tabular(4, 3, values).unwrap();
        let text = bytes_of(|w| write_q(w, &q));
        prop_assert_eq!(read_q(text.as_slice(), 4, 3).unwrap(), q);
    }
}
