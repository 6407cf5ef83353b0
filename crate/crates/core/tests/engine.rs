mod common;

use common::small_config;
use cotrain::corpus::{concat_views, Label, LabeledDataset, UnlabeledDataset, View};
use cotrain::semisup_engine::{
    cotrain, cotrain_prepared, selection_size, selftrain, supervised_init, CotrainConfig,
    Prediction, Prepared, PseudoLabeledSet,
};
use cotrain::synth_gen::{generate, SyntheticCorpus};
use cotrain::Error;

fn corpus(seed: u64) -> SyntheticCorpus {
    generate(&small_config(seed)).unwrap()
}

fn config(c: &SyntheticCorpus) -> CotrainConfig {
    let mut cfg = CotrainConfig::for_task(c.labeled.space.clone());
    cfg.train_cfg.max_epochs = 30;
    cfg.train_cfg.patience = 10;
    cfg
}

#[test]
fn empty_pool_returns_supervised_init_bitwise() {
    let c = corpus(1);
    let cfg = config(&c);
    let empty = UnlabeledDataset::new(Vec::new()).unwrap();
    let out = cotrain(&c.labeled, &c.test, &empty, &cfg).unwrap();
    let prep = Prepared::new(
        &c.labeled,
        &c.test,
        &empty,
        &[View::Fnd, View::Imp],
        cfg.min_df,
    )
    .unwrap();
    assert_eq!(
        out.fnd.weights(),
        supervised_init(&prep, View::Fnd, &cfg).unwrap().weights()
    );
    assert_eq!(
        out.imp.weights(),
        supervised_init(&prep, View::Imp, &cfg).unwrap().weights()
    );
    assert_eq!(out.best_round, 0);
    assert!(out.selections.is_empty());

    for view in [View::Fnd, View::Concat] {
        let st = selftrain(&c.labeled, &c.test, &empty, view, &cfg).unwrap();
        let prep = Prepared::new(&c.labeled, &c.test, &empty, &[view], cfg.min_df).unwrap();
        assert_eq!(
            st.params.weights(),
            supervised_init(&prep, view, &cfg).unwrap().weights()
        );
    }
}

#[test]
fn empty_labeled_set_is_an_error() {
    let c = corpus(2);
    let empty = LabeledDataset::new(c.labeled.space.clone(), Vec::new()).unwrap();
    assert!(matches!(
        cotrain(&empty, &c.test, &c.pool, &config(&c)),
        Err(Error::EmptyData)
    ));
}

#[test]
fn cotrain_is_deterministic_and_logs_are_consistent() {
    let c = corpus(3);
    let cfg = config(&c);
    let a = cotrain(&c.labeled, &c.test, &c.pool, &cfg).unwrap();
    let b = cotrain(&c.labeled, &c.test, &c.pool, &cfg).unwrap();
    assert_eq!(a.fnd.weights(), b.fnd.weights());
    assert_eq!(a.imp.weights(), b.imp.weights());
    assert_eq!(a.logs, b.logs);
    assert_eq!(a.selections, b.selections);

    let round0 = a.logs[0].valid_accuracy["ensemble"];
    assert!(a.logs[a.best_round].valid_accuracy["ensemble"] >= round0);
    for log in &a.logs[1..] {
        assert_eq!(log.steps.len(), 2);
        for s in &log.steps {
            assert!(s.agreed <= c.pool.len());
            assert_eq!(s.selected, selection_size(cfg.top_k_percent, s.agreed));
        }
    }
    let pool_ids: std::collections::HashSet<&str> =
        c.pool.items.iter().map(|r| r.id.as_str()).collect();
    for sel in &a.selections {
        assert!(sel
            .set
            .items
            .iter()
            .all(|p| pool_ids.contains(p.id.as_str())));
    }
}

#[test]
fn merged_training_set_keeps_labeled_examples_unchanged() {
    let c = corpus(4);
    let prep = Prepared::new(&c.labeled, &c.test, &c.pool, &[View::Fnd, View::Imp], 2).unwrap();
    // Pseudo-labels that contradict the truth on purpose.
    let items: Vec<Prediction> = c
        .pool
        .items
        .iter()
        .take(50)
        .map(|r| Prediction {
            id: r.id.clone(),
            label: Label(1 - c.hidden_labels[&r.id].0),
            confidence: 0.9,
        })
        .collect();
    let set = PseudoLabeledSet {
        source_view: View::Fnd,
        items,
    };
    for view in [View::Fnd, View::Imp] {
        let f = prep.view(view).unwrap();
        let merged = prep.merged_examples(view, &set).unwrap();
        assert_eq!(merged.len(), c.labeled.len() + 50);
        for (i, (x, y)) in merged.iter().take(c.labeled.len()).enumerate() {
            assert_eq!(*x, &f.labeled[i]);
            assert_eq!(*y, c.labeled.items[i].1);
        }
        for (p, (x, y)) in set.items.iter().zip(&merged[c.labeled.len()..]) {
            let j = prep.pool_ids.iter().position(|id| id == &p.id).unwrap();
            assert_eq!(*x, &f.pool[j]);
            assert_eq!(*y, p.label);
        }
    }
    let bogus = PseudoLabeledSet {
        source_view: View::Fnd,
        items: vec![Prediction {
            id: "nope".into(),
            label: Label(0),
            confidence: 0.5,
        }],
    };
    assert!(prep.merged_examples(View::Fnd, &bogus).is_err());
}

#[test]
fn one_round_never_returns_worse_than_init() {
    for seed in 0..5 {
        let mut c = corpus(10 + seed);
        c.pool = c.pool.truncated(200);
        let mut cfg = config(&c);
        cfg.max_rounds = 1;
        let out = cotrain(&c.labeled, &c.test, &c.pool, &cfg).unwrap();
        let best = out.logs[out.best_round].valid_accuracy["ensemble"];
        assert!(best >= out.logs[0].valid_accuracy["ensemble"]);

        cfg.top_k_percent = 100.0;
        let st = selftrain(&c.labeled, &c.test, &c.pool, View::Imp, &cfg).unwrap();
        let key = st.logs[0].valid_accuracy.keys().next().unwrap().clone();
        assert!(st.logs[st.best_round].valid_accuracy[&key] >= st.logs[0].valid_accuracy[&key]);
    }
}

#[test]
fn warm_start_and_round_start_teacher_run() {
    let c = corpus(6);
    let mut cfg = config(&c);
    cfg.max_rounds = 2;
    cfg.warm_start = true;
    cfg.fresh_second_teacher = false;
    let prep = Prepared::new(
        &c.labeled,
        &c.test,
        &c.pool,
        &[View::Fnd, View::Imp],
        cfg.min_df,
    )
    .unwrap();
    let out = cotrain_prepared(&prep, None, &cfg).unwrap();
    assert!(out.logs.len() >= 2);
}

#[test]
fn concat_view_reads_both_sections() {
    let c = corpus(7);
    let r = &c.labeled.items[0].0;
    let joined = concat_views(r);
    assert!(joined.contains(r.fnd_text()) && joined.contains(r.imp_text()));
    assert_eq!(r.view_text(View::Concat), joined);
}
