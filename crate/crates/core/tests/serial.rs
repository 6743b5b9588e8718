use dce_core::serial::{AnswerOutcome, UpdateOutcome};
use dce_core::{
    d_error, generate_design, Coefficients, DesignSettings, LabeledDesign, OptimizerConfig,
    SerialMode, Survey, SurveyDefinition,
};

fn survey(settings: &DesignSettings, mode: SerialMode) -> Survey {
    let result = generate_design(settings).unwrap();
    let design = LabeledDesign::from_result(&result, settings).unwrap();
    let mut def = SurveyDefinition::new(design, settings.clone());
    def.serial_mode = mode;
    def.optimizer = Some(OptimizerConfig {
        n_starts: 2,
        ..OptimizerConfig::default()
    });
    Survey::new(def).unwrap()
}

fn regeneration_points(outcomes: &[UpdateOutcome]) -> Vec<usize> {
    outcomes
        .iter()
        .filter_map(|o| match o {
            UpdateOutcome::Regenerated { at_respondents, .. } => Some(*at_respondents),
            UpdateOutcome::Unchanged { .. } => None,
        })
        .collect()
}

#[test]
fn batch_mode_regenerates_every_fifth_respondent() {
    let settings = DesignSettings::from_levels(&[3, 2, 3, 3], 2, 16)
        .with_opt_out(true)
        .with_seed(9999);
    let mut s = survey(&settings, SerialMode::per_batch(5));
    let beta = Coefficients::from_values(vec![0.6, -0.4, 0.3, 0.5, -0.2, -0.3, -0.5]);
    let outcomes = s.simulate_respondents(&beta, 12, 1).unwrap();
    assert_eq!(regeneration_points(&outcomes), vec![5, 10]);
    assert_eq!(s.regenerations(), 2);
    let history: Vec<usize> = s
        .state
        .design_history
        .iter()
        .map(|v| v.at_respondents)
        .collect();
    assert_eq!(history, vec![0, 5, 10]);
    // respondents 6..=10 answered version 1, 11 and 12 version 2
    assert_eq!(s.state.respondent_versions[&6], 1);
    assert_eq!(s.state.respondent_versions[&11], 2);
    let regenerated = &s.state.design_history[1];
    assert!(regenerated.design.settings.as_ref().unwrap().bayesian);
    assert_eq!(regenerated.design.settings.as_ref().unwrap().seed, 9999 + 5);
}

#[test]
fn per_respondent_mode_regenerates_after_each() {
    let settings = DesignSettings::from_levels(&[2, 2], 2, 12).with_seed(4);
    let mut s = survey(&settings, SerialMode::PerRespondent);
    let beta = Coefficients::from_values(vec![0.4, -0.3]);
    let outcomes = s.simulate_respondents(&beta, 4, 2).unwrap();
    assert_eq!(regeneration_points(&outcomes), vec![1, 2, 3, 4]);
    assert_eq!(s.regenerations(), 4);
}

#[test]
fn failed_fit_keeps_design_and_logs_reason() {
    let settings = DesignSettings::from_levels(&[3, 2, 3, 3], 2, 8).with_seed(1);
    let mut s = survey(&settings, SerialMode::PerRespondent);
    // always choose the first option: the fit on one respondent cannot be identified
    let st = s.start_session().unwrap();
    let mut last = None;
    for _ in 0..8 {
        last = Some(s.submit_answer(st.session, 1).unwrap());
    }
    match last.unwrap() {
        AnswerOutcome::Finished {
            update: UpdateOutcome::Unchanged { reason },
            ..
        } => {
            assert!(reason.is_some());
        }
        other => panic!("expected a skipped update, got {other:?}"),
    }
    assert_eq!(s.regenerations(), 0);
    assert_eq!(s.state.update_log.len(), 1);
    assert!(s.state.update_log[0].reason.is_some());
}

#[test]
fn every_task_has_one_chosen_row() {
    let settings = DesignSettings::from_levels(&[3, 2, 3, 3], 2, 16)
        .with_opt_out(true)
        .with_seed(9);
    let mut s = survey(&settings, SerialMode::None);
    s.simulate_respondents(&Coefficients::zeros(7), 10, 3)
        .unwrap();
    let data = s.close();
    data.validate().unwrap();
    assert_eq!(data.n_tasks(), 160);
    for task in data.tasks() {
        assert_eq!(
            task.iter().filter(|&&i| data.rows[i].choice == 1).count(),
            1
        );
    }
    assert_eq!(s.state.design_history.len(), 1);
}

#[test]
fn serial_design_is_usually_no_worse_at_truth() {
    let beta = Coefficients::from_values(vec![0.6, -0.4, 0.3, 0.5, -0.2, -0.3, -0.5]);
    let mut better = 0;
    for run in 0..4u64 {
        let settings = DesignSettings::from_levels(&[3, 2, 3, 3], 2, 16)
            .with_opt_out(true)
            .with_seed(500 + run);
        let mut s = survey(&settings, SerialMode::per_batch(10));
        s.simulate_respondents(&beta, 30, run).unwrap();
        let initial = d_error(&s.state.design_history[0].design.coded, &beta).unwrap();
        let last = d_error(&s.current_design().coded, &beta).unwrap();
        if last <= initial {
            better += 1;
        }
    }
    assert!(better >= 3, "only {better} of 4 runs improved");
}
