use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use theta_unfold::cli::{period_label, presets, BackendArg, CaseSpec, FormSpec, GammaSpec, GroupKind, GroupSpec};
use theta_unfold::exactalg::{ExactMat, Fq, OpMatrix, Rat};
use theta_unfold::formed::{FormedSpace, Symmetry};
use theta_unfold::transfer::{datum_on_model, transfer_partition, transfer_with_witness};
use theta_unfold::weil::{HeisenbergModel, WeilRep};

fn form_spec() -> impl Strategy<Value = FormSpec> {
    prop_oneof![
        (1usize..5, any::<bool>()).prop_map(|(d, s)| FormSpec {
            dim: Some(d),
            disc: Some(if s { theta_unfold::cli::Disc::Square } else { theta_unfold::cli::Disc::Nonsquare }),
            diag: None,
        }),
        prop::collection::vec(-3i64..4, 1..5).prop_map(|d| FormSpec { diag: Some(d), ..Default::default() }),
    ]
}

fn group_spec() -> impl Strategy<Value = GroupSpec> {
    prop_oneof![
        form_spec().prop_map(|form| GroupSpec { kind: GroupKind::Orthogonal, form }),
        (1usize..4).prop_map(|k| GroupSpec { kind: GroupKind::Symplectic, form: FormSpec { dim: Some(2 * k), ..Default::default() } }),
    ]
}

fn case_spec() -> impl Strategy<Value = CaseSpec> {
    (
        prop::option::of(prop::sample::select(vec![3u32, 5, 7])),
        group_spec(),
        group_spec(),
        prop::collection::vec(1usize..5, 0..4),
        prop::collection::btree_map(1usize..5, form_spec(), 0..3),
        prop::collection::vec(prop::sample::select(vec!["weil", "steps", "vanishing"]), 0..3),
        prop::option::of(any::<u64>()),
        prop::option::of(prop_oneof![Just(BackendArg::Exact), Just(BackendArg::Float)]),
    )
        .prop_map(|(q, g, gprime, mut partition, forms, checks, seed, backend)| {
            partition.sort_unstable_by(|a, b| b.cmp(a));
            CaseSpec {
                q,
                g,
                gprime,
                gamma_prime: GammaSpec { partition, forms: forms.into_iter().map(|(k, v)| (k.to_string(), v)).collect() },
                checks: checks.into_iter().map(String::from).collect(),
                seed,
                backend,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spec_json_round_trip(spec in case_spec()) {
        let text = serde_json::to_string(&spec).unwrap();
        let back: CaseSpec = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn transfer_removes_first_column(parts in prop::collection::vec(1usize..6, 0..5), extra in 0usize..4) {
        let used: usize = parts.iter().filter(|&&x| x >= 2).map(|x| x - 1).sum();
        let dim_v = used + extra;
        let lam = transfer_partition(&parts, dim_v).unwrap();
        prop_assert_eq!(lam.iter().sum::<usize>(), dim_v);
        prop_assert!(lam.windows(2).all(|w| w[0] >= w[1]));
        let long = parts.iter().filter(|&&x| x >= 2).count();
        prop_assert_eq!(lam.iter().filter(|&&x| x >= 2).count(), parts.iter().filter(|&&x| x >= 3).count());
        prop_assert_eq!(lam.len(), long + dim_v - used);
        if used > 0 {
            prop_assert!(transfer_partition(&parts, used - 1).is_err());
        }
    }

    #[test]
    fn period_label_ignores_order(mut parts in prop::collection::vec(1usize..5, 1..5), sym in prop_oneof![Just(Symmetry::Orthogonal), Just(Symmetry::Symplectic)]) {
        let a = period_label(sym, &parts);
        parts.reverse();
        prop_assert_eq!(a, period_label(sym, &parts));
    }

    #[test]
    fn witness_on_random_regular_orbits(k in 1usize..4, extra in prop::collection::vec(prop::sample::select(vec![1i64, -1, 2, 3]), 0..3), b in prop::sample::select(vec![1i64, -1, 2])) {
        // [2k] on Sp_2k transfers to [2k−1, 1^…] on an orthogonal space
        let p = Rat::int(0);
        let forms: BTreeMap<usize, FormedSpace<Rat>> = [(2 * k, FormedSpace::diagonal(&[Rat::int(b)], &p).unwrap())].into_iter().collect();
        let gp = datum_on_model(Symmetry::Symplectic, forms, &p).unwrap();
        let mut diag = vec![1i64; 2 * k - 1];
        diag.extend(extra);
        let v = FormedSpace::diagonal(&diag.iter().map(|&x| Rat::int(x)).collect::<Vec<_>>(), &p).unwrap();
        if let Some(w) = transfer_with_witness(&gp, &v).unwrap() {
            prop_assert!(w.check().is_empty());
            let g = w.glue_isomorphism();
            prop_assert!(g.is_bijective() && g.pulls_back_form());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn weil_multiplicative_on_sp4(seed in any::<u64>(), q in prop::sample::select(vec![3u32, 5])) {
        let w = FormedSpace::standard_symplectic(4, &Fq::new(0, q)).unwrap();
        let model = Arc::new(HeisenbergModel::from_split(&w).unwrap());
        let rep: WeilRep<ExactMat> = WeilRep::new(model.clone(), seed);
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = model.random_element(&mut rng, 8);
        let b = model.random_element(&mut rng, 8);
        prop_assert!(rep.omega(&a).mul(&rep.omega(&b)).same(&rep.omega(&a.mul(&b))));
    }
}

#[test]
fn every_preset_parses() {
    for p in presets() {
        theta_unfold::cli::parse_case::<Fq>(&p.spec).unwrap_or_else(|e| panic!("{}: {e}", p.name));
    }
}
