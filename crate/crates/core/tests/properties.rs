use carechoice::cli_io::schema::{patients_csv, read_patients, PatientRow};
use carechoice::model::{
    choice_probability, log_choice_probability, utility_uninsured, utility_variant,
    BehavioralVariant, CostParams, Facility, PatientProfile, Severity,
};
use carechoice::par;
use proptest::prelude::*;

fn facility() -> impl Strategy<Value = Facility> {
    (0usize..4).prop_map(|i| Facility::ALL[i])
}

proptest! {
    #[test]
    fn logistic_is_a_probability_and_symmetric(v in -800.0f64..800.0) {
        let p = choice_probability(v);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p + choice_probability(-v) - 1.0).abs() < 1e-15);
        prop_assert!(log_choice_probability(v) <= 0.0);
        if p > 1e-300 {
            prop_assert!((log_choice_probability(v) - p.ln()).abs() < 1e-12 * p.ln().abs().max(1.0));
        }
    }

    #[test]
    fn neutral_variants_equal_baseline(
        theta in 1e-6f64..(1.0 - 1e-6),
        gamma in -0.2f64..0.2,
        travel in 0.0f64..1.0,
        lambda in 0.5f64..0.99,
        f in facility(),
    ) {
        let cp = CostParams::from_lambda(0.9, 1.5, lambda, [1.0, 4.8, 9.8, 25.1], 0.8, 6300.0).unwrap();
        let th = Severity::new(theta).unwrap();
        let base = utility_uninsured(th, &cp, f, gamma, travel);
        for v in [
            BehavioralVariant::PresentBias { delta: 1.0 },
            BehavioralVariant::Salience { mu: 1.0 },
            BehavioralVariant::BiasedBelief { lambda_tilde: lambda },
        ] {
            prop_assert!((utility_variant(v, th, &cp, f, gamma, travel).unwrap() - base).abs() <= 1e-12);
        }
    }

    #[test]
    fn higher_weight_raises_utility(theta in 0.01f64..0.99, g in -0.2f64..0.2, dg in 1e-4f64..0.2) {
        let cp = CostParams::from_lambda(0.9, 1.5, 0.85, [1.0; 4], 0.8, 6300.0).unwrap();
        let th = Severity::new(theta).unwrap();
        prop_assert!(utility_uninsured(th, &cp, Facility::Thc, g + dg, 0.0) > utility_uninsured(th, &cp, Facility::Thc, g, 0.0));
    }

    #[test]
    fn chunked_sums_ignore_thread_count(xs in proptest::collection::vec(-1e6f64..1e6, 0..3000)) {
        let one = par::with_threads(1, || par::sum_by(&xs, |x| x * 1.000_001));
        let many = par::with_threads(3, || par::sum_by(&xs, |x| x * 1.000_001));
        prop_assert_eq!(one.to_bits(), many.to_bits());
    }

    #[test]
    fn patient_csv_round_trip(
        flags in proptest::collection::vec(any::<[bool; 8]>(), 1..30),
        age in 40.0f64..95.0,
        dist in 0.1f64..60.0,
    ) {
        let patients: Vec<PatientProfile> = flags
            .iter()
            .enumerate()
            .map(|(i, b)| PatientProfile {
                id: i as u64,
                theta: Severity::new(0.5).unwrap(),
                facility: Facility::ALL[i % 4],
                poor_household: b[0],
                distant: b[1],
                rural_hukou: b[2],
                urban: b[3],
                minority: b[4],
                male: b[5],
                high_income: b[6],
                age: age + i as f64,
                distance_km: dist,
                used_ambulatory: b[7],
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, patients_csv(&patients).unwrap()).unwrap();
        let back = read_patients(&path).unwrap();
        prop_assert_eq!(back.len(), patients.len());
        for (a, b) in back.iter().zip(&patients) {
            prop_assert_eq!(PatientRow::from(a), PatientRow::from(b));
        }
    }
}
