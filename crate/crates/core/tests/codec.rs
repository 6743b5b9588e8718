use dce_core::codec::{default_alternative_labels, BASE_PLACEHOLDER};
use dce_core::{
    decode_design, export_design, import_design, label_design, random_initial_design,
    render_plain_text, AttributeSpec, Coding, DesignFormat, DesignSettings, LabeledDesign,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn settings_strategy() -> impl Strategy<Value = (Vec<usize>, usize, bool, u64)> {
    (
        prop::collection::vec(2usize..=5, 1..=5),
        2usize..=3,
        any::<bool>(),
        any::<u64>(),
    )
}

fn labeled(levels: &[usize], alts: usize, opt_out: bool, seed: u64) -> (LabeledDesign, Coding) {
    let alts = alts.min(levels.iter().product());
    let k: usize = levels.iter().map(|l| l - 1).sum();
    let mut settings =
        DesignSettings::from_levels(levels, alts, k.div_ceil(alts - 1) + 1).with_opt_out(opt_out);
    settings.attributes = levels
        .iter()
        .enumerate()
        .map(|(a, &n)| AttributeSpec {
            name: format!("Attr {a}"),
            levels: (0..n)
                .map(|l| format!("lvl-{a}-{l} ({})", seed % 97))
                .collect(),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coded = random_initial_design(&settings, &mut rng).unwrap();
    let coding = Coding::new(
        settings.attributes.iter().map(|a| a.name.clone()).collect(),
        settings
            .attributes
            .iter()
            .map(|a| a.levels.clone())
            .collect(),
    )
    .unwrap();
    let design = label_design(
        &coded,
        settings.attributes.iter().map(|a| a.name.clone()).collect(),
        settings
            .attributes
            .iter()
            .map(|a| a.levels.clone())
            .collect(),
    )
    .unwrap();
    (design, coding)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn decode_recovers_levels((levels, alts, opt_out, seed) in settings_strategy()) {
        let (design, coding) = labeled(&levels, alts, opt_out, seed);
        let decoded = decode_design(&design).unwrap();
        let matrix = design.coded.level_matrix().unwrap();
        prop_assert_eq!(decoded.len(), design.coded.n_sets);
        for (set, truth) in decoded.iter().zip(&matrix) {
            let real: Vec<_> = set.alternatives.iter().filter(|a| !a.opt_out).collect();
            prop_assert_eq!(real.len(), truth.len());
            prop_assert_eq!(set.alternatives.last().unwrap().opt_out, opt_out);
            for (j, (alt, lv)) in real.iter().zip(truth).enumerate() {
                for (a, al) in alt.levels.iter().enumerate() {
                    prop_assert_eq!(&al.attribute, &design.attribute_names[a]);
                    prop_assert_eq!(&al.level, &design.level_names[a][lv[a]]);
                }
                prop_assert_eq!(&coding.encode(lv), &design.coded.set_rows(set.set)[j].x);
            }
        }
        let text = render_plain_text(&decoded);
        prop_assert_eq!(text.matches("Choice set ").count(), design.coded.n_sets);
    }

    #[test]
    fn json_round_trip_is_lossless((levels, alts, opt_out, seed) in settings_strategy()) {
        let (design, _) = labeled(&levels, alts, opt_out, seed);
        let bytes = export_design(&design, DesignFormat::Json);
        let back = import_design(&bytes, DesignFormat::Json).unwrap();
        prop_assert_eq!(&back, &design);
        prop_assert_eq!(export_design(&back, DesignFormat::Json), bytes);
    }

    #[test]
    fn csv_round_trip_keeps_matrix((levels, alts, opt_out, seed) in settings_strategy()) {
        let (design, _) = labeled(&levels, alts, opt_out, seed);
        let bytes = export_design(&design, DesignFormat::Csv);
        let back = import_design(&bytes, DesignFormat::Csv).unwrap();
        prop_assert_eq!(&back.coded.rows, &design.coded.rows);
        prop_assert_eq!(&back.coded.column_names, &design.coded.column_names);
        prop_assert_eq!(&back.attribute_names, &design.attribute_names);
        for (got, want) in back.level_names.iter().zip(&design.level_names) {
            prop_assert_eq!(got[0].as_str(), BASE_PLACEHOLDER);
            prop_assert_eq!(&got[1..], &want[1..]);
        }
        prop_assert_eq!(back.coded.opt_out, design.coded.opt_out);
        prop_assert_eq!(back.coded.alts_per_set, design.coded.alts_per_set);
        prop_assert_eq!(export_design(&back, DesignFormat::Csv), bytes);
    }

    #[test]
    fn corrupted_cells_never_decode_silently(
        (levels, alts, opt_out, seed) in settings_strategy(),
        row_pick in any::<prop::sample::Index>(),
        col_pick in any::<prop::sample::Index>(),
        value in prop_oneof![Just(0.0), Just(1.0), Just(0.5), Just(2.0), Just(-1.0)],
    ) {
        let (mut design, coding) = labeled(&levels, alts, opt_out, seed);
        let r = row_pick.index(design.coded.rows.len());
        let c = col_pick.index(design.coded.n_params());
        design.coded.rows[r].x[c] = value;
        let bytes = export_design(&design, DesignFormat::Json);
        let Ok(imported) = import_design(&bytes, DesignFormat::Json) else {
            return Ok(());
        };
        // anything accepted must decode back to exactly the stored matrix
        let decoded = decode_design(&imported).unwrap();
        for (set, rows) in decoded.iter().zip(imported.coded.sets()) {
            for (alt, row) in set.alternatives.iter().zip(rows) {
                if alt.opt_out {
                    prop_assert!(row.x.iter().all(|&v| v == 0.0));
                    continue;
                }
                let lv: Vec<usize> = alt.levels.iter().enumerate().map(|(a, al)| {
                    imported.level_names[a].iter().position(|n| n == &al.level).unwrap()
                }).collect();
                prop_assert_eq!(coding.encode(&lv), row.x.clone());
            }
        }
    }
}

#[test]
fn table_one_names_decode_readably() {
    let settings = DesignSettings {
        attributes: vec![
            AttributeSpec::new("Efficacy", &["30%", "50%", "70%"]),
            AttributeSpec::new("Side effects", &["Mild", "Severe"]),
            AttributeSpec::new("Duration", &["6 months", "1 year", "2 years"]),
            AttributeSpec::new("Cost", &["100", "150", "200"]),
        ],
        ..DesignSettings::from_levels(&[3, 2, 3, 3], 2, 16).with_opt_out(true)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let coded = random_initial_design(&settings, &mut rng).unwrap();
    let design = label_design(
        &coded,
        settings.attributes.iter().map(|a| a.name.clone()).collect(),
        settings
            .attributes
            .iter()
            .map(|a| a.levels.clone())
            .collect(),
    )
    .unwrap();
    assert_eq!(
        default_alternative_labels(&design.coded),
        ["Option 1", "Option 2", "Opt-out"]
    );
    let text = render_plain_text(&decode_design(&design).unwrap());
    assert!(text.starts_with("Choice set 1\n  Option 1:\n    Efficacy: "));
    assert_eq!(text.matches("  Opt-out\n").count(), 16);
    assert_eq!(text.matches("    Cost: ").count(), 32);
}
