use sqs_core::field::{law_moments, sample_environment, CellLaw, DomainSpec, Environment, FieldSpec};
use sqs_core::solver::SolverOptions;
use sqs_core::sqs::{
    build_offline_tables, cell_response_table, sqs1_error, sqs2_error, sqs2_lhs, superposition_check, table_key, OfflineConfig,
    OfflineTables,
};
use sqs_core::Error;

fn tables(spec: &FieldSpec, n: usize, r: usize) -> OfflineTables {
    let mut cfg = OfflineConfig::new(n, r);
    cfg.solver = SolverOptions::with_tol(1e-13);
    build_offline_tables(spec, &law_moments(spec), &cfg).unwrap()
}

#[test]
fn first_criterion_is_distance_to_law_mean() {
    let spec = FieldSpec::checkerboard(1, 0.5).unwrap();
    let moments = law_moments(&spec);
    let domain = DomainSpec::new(2, 1).unwrap();
    let env = |cells: Vec<f64>| Environment { domain, cells, seed: 0 };
    assert_eq!(sqs1_error(&env(vec![1.0, 1.0]), &moments), 1.0);
    assert_eq!(sqs1_error(&env(vec![1.0, -1.0]), &moments), 0.0);
}

#[test]
fn first_criterion_matches_binomial_mean_deviation() {
    let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
    let moments = law_moments(&spec);
    let domain = DomainSpec::new(20, 2).unwrap();
    let seeds = 10_000u64;
    let measured: f64 = (0..seeds).map(|s| sqs1_error(&sample_environment(&spec, &domain, s).unwrap(), &moments)).sum::<f64>() / seeds as f64;
    // E|2B - n| / n for B ~ Binomial(n, 1/2), summed in log space.
    let n = 400usize;
    let mut ln_choose = 0.0f64;
    let mut expected = 0.0;
    for k in 0..=n {
        if k > 0 {
            ln_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        let p = (ln_choose - n as f64 * std::f64::consts::LN_2).exp();
        expected += p * (2.0 * k as f64 - n as f64).abs() / n as f64;
    }
    let sd = (1.0 - expected * expected).max(0.0).sqrt() / (n as f64).sqrt() / (seeds as f64).sqrt();
    assert!((measured - expected).abs() < 4.0 * sd, "{measured} vs {expected}");
}

#[test]
fn superposition_holds_at_discrete_level() {
    let opts = SolverOptions::with_tol(1e-13);
    for d in [1, 2] {
        let spec = FieldSpec::checkerboard(d, 0.5).unwrap();
        for n in [2, 4] {
            let t = tables(&spec, n, 2);
            let domain = DomainSpec::new(n, d).unwrap();
            for seed in 0..5 {
                let env = sample_environment(&spec, &domain, seed).unwrap();
                for p in 0..d {
                    let res = superposition_check(&spec, &env, &t, p, &opts).unwrap();
                    assert!(res <= 1e-8, "d={d} N={n} seed={seed}: residual {res}");
                }
            }
        }
    }
}

#[test]
fn single_cell_perturbation_is_one_translated_response() {
    let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
    let t = tables(&spec, 4, 2);
    let mut cells = vec![0.0; 16];
    cells[5] = 1.0;
    let env = Environment { domain: DomainSpec::new(4, 2).unwrap(), cells, seed: 0 };
    let res = superposition_check(&spec, &env, &t, 0, &SolverOptions::with_tol(1e-13)).unwrap();
    assert!(res <= 1e-8, "{res}");
}

#[test]
fn circulant_matches_shifted_solve() {
    let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
    let t = tables(&spec, 4, 2);
    let source = [1usize, 3];
    let (direct, _) = cell_response_table(&spec, 4, 2, &source, &SolverOptions::with_tol(1e-13)).unwrap();
    for (j, block) in direct.iter().enumerate() {
        let jc = [j / 4, j % 4];
        let looked_up = t.pair(&source, &jc);
        for (a, b) in block.iter().zip(looked_up) {
            assert!((a - b).abs() <= 1e-10, "j={j}: {a} vs {b}");
        }
    }
}

#[test]
fn whole_space_table_decays() {
    let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
    let t = tables(&spec, 4, 2);
    assert!(t.decay_ratio <= 0.05, "{}", t.decay_ratio);
    let mut cfg = OfflineConfig::new(4, 2);
    cfg.decay_threshold = 1e-12;
    match build_offline_tables(&spec, &law_moments(&spec), &cfg) {
        Err(Error::SlowDecay { .. }) => {}
        other => panic!("expected slow decay, got {other:?}"),
    }
}

#[test]
fn right_hand_side_is_stable_in_shell_count() {
    let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
    let moments = law_moments(&spec);
    let build = |k| {
        let mut cfg = OfflineConfig::new(4, 2);
        cfg.shells = Some(k);
        build_offline_tables(&spec, &moments, &cfg).unwrap()
    };
    let (a, b) = (build(3), build(5));
    let scale = a.rhs2.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (x, y) in a.rhs2.iter().zip(&b.rhs2) {
        assert!((x - y).abs() <= 0.05 * scale);
    }
}

#[test]
fn deterministic_law_has_zero_second_criterion() {
    let spec = FieldSpec::new(
        2,
        0.5,
        vec![1.0, 1.0],
        sqs_core::field::UnitCoefficient::identity(2),
        CellLaw::Deterministic { value: 0.4 },
    )
    .unwrap();
    let t = tables(&spec, 4, 1);
    let env = sample_environment(&spec, &DomainSpec::new(4, 2).unwrap(), 1).unwrap();
    assert!(t.rhs2.iter().all(|v| *v == 0.0));
    assert!(sqs2_error(&env, &t).unwrap() < 1e-14);
}

#[test]
fn scores_are_pure_and_tables_checked() {
    let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
    let t = tables(&spec, 4, 2);
    let env = sample_environment(&spec, &DomainSpec::new(4, 2).unwrap(), 2).unwrap();
    let dup = env.clone();
    assert_eq!(sqs2_error(&env, &t).unwrap(), sqs2_error(&dup, &t).unwrap());
    assert_eq!(sqs2_lhs(&env, &t, false).unwrap(), sqs2_lhs(&env, &t, false).unwrap());
    let wrong = sample_environment(&spec, &DomainSpec::new(5, 2).unwrap(), 2).unwrap();
    assert!(matches!(sqs2_error(&wrong, &t), Err(Error::TableMismatch { .. })));
}

#[test]
fn tables_round_trip_and_refuse_other_keys() {
    let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
    let cfg = OfflineConfig::new(3, 1);
    let t = build_offline_tables(&spec, &law_moments(&spec), &cfg).unwrap();
    let dir = std::env::temp_dir().join(format!("sqs-tables-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("t.json");
    t.save(&path).unwrap();
    let back = OfflineTables::load(&path, &table_key(&spec, &cfg)).unwrap();
    let env = sample_environment(&spec, &DomainSpec::new(3, 2).unwrap(), 4).unwrap();
    assert_eq!(sqs2_error(&env, &t).unwrap(), sqs2_error(&env, &back).unwrap());
    let other = table_key(&spec, &OfflineConfig::new(3, 2));
    assert!(matches!(OfflineTables::load(&path, &other), Err(Error::TableMismatch { .. })));
    std::fs::remove_dir_all(&dir).unwrap();
}
