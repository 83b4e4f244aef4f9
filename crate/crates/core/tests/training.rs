use toxbias_core::corpus::{AuxTask, Comment, LabelSchema, Preprocessor, Tokenizer};
use toxbias_core::embed::{build_table, EmbeddingTable};
use toxbias_core::loss::LossConfig;
use toxbias_core::metrics::{prf1, Score};
use toxbias_core::nn::{predict, Hyper, Pooling};
use toxbias_core::synth::{bias_corpus, random_vectors, separable_corpus, BiasCorpusConfig};
use toxbias_core::train::{
    evaluate, grid_search_alpha, propagate_identities, run_experiment, scored_examples, train_fold, AdamConfig,
    ExperimentConfig, PropagationConfig, TrainConfig,
};
use toxbias_core::Error;

fn small_hyper(heads: usize) -> Hyper {
    Hyper { embed_dim: 16, hidden: 8, dense1: 16, dense2: 16, heads, dropout_rate: 0.1, pooling: Pooling::Attention }
}

fn small_train(heads: usize, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        adam: AdamConfig { learning_rate: 5e-3, ..AdamConfig::default() },
        seed,
        loss: LossConfig { heads, ..LossConfig::default() },
        aux_task: if heads == 0 { AuxTask::None } else { AuxTask::Identities },
        patience: None,
        alpha_grid: vec![0.6],
    }
}

fn random_table(pre: &Preprocessor, dim: usize, seed: u64) -> EmbeddingTable {
    let a = random_vectors(&pre.vocab, dim / 2, 0.5, seed);
    let b = random_vectors(&pre.vocab, dim - dim / 2, 0.5, seed + 1);
    build_table(&pre.vocab, &a, dim / 2, &b, dim - dim / 2, seed).unwrap()
}

fn separable(n: usize, seed: u64) -> (Vec<Comment>, EmbeddingTable) {
    let records = separable_corpus(n, seed);
    let schema = LabelSchema::new(vec![], vec![]);
    let pre = Preprocessor::fit(&records, Tokenizer::default(), schema, 16, 3.0, 1, None);
    let table = random_table(&pre, 16, seed);
    (pre.comments(&records).unwrap(), table)
}

#[test]
fn separable_corpus_is_learned() {
    let (comments, table) = separable(200, 1);
    let (train, val) = comments.split_at(160);
    let cfg = TrainConfig { loss: LossConfig { alpha: 1.0, c: 1.0, heads: 0, ..LossConfig::default() }, ..small_train(0, 30, 3) };
    let (params, rec) = train_fold(train, val, &table, &small_hyper(0), &cfg).unwrap();
    let preds = predict(&params, &table, val).unwrap();
    let schema = LabelSchema::new(vec![], vec![]);
    let f1 = prf1(&scored_examples(val, &preds, &schema), 0.5).f1;
    assert!(f1 >= 0.95, "validation F1 {f1}, log {:?}", rec.epochs);
    assert_eq!(table, separable(200, 1).1, "embedding table is frozen");
}

#[test]
fn training_is_deterministic() {
    let (comments, table) = separable(60, 2);
    let (train, val) = comments.split_at(48);
    let cfg = TrainConfig { loss: LossConfig { alpha: 1.0, heads: 0, ..LossConfig::default() }, ..small_train(0, 3, 5) };
    let a = train_fold(train, val, &table, &small_hyper(0), &cfg).unwrap();
    let b = train_fold(train, val, &table, &small_hyper(0), &cfg).unwrap();
    assert_eq!(a, b);
    let other = train_fold(train, val, &table, &small_hyper(0), &TrainConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.1.epochs, other.1.epochs);
}

#[test]
fn zero_epochs_and_empty_splits() {
    let (comments, table) = separable(20, 3);
    let cfg = TrainConfig { loss: LossConfig { heads: 0, ..LossConfig::default() }, ..small_train(0, 0, 1) };
    let (params, rec) = train_fold(&comments[..10], &comments[10..], &table, &small_hyper(0), &cfg).unwrap();
    assert!(rec.epochs.is_empty());
    assert_eq!(params, toxbias_core::nn::init_params(&small_hyper(0), 1).unwrap());
    assert_eq!(
        train_fold(&[], &comments, &table, &small_hyper(0), &cfg).unwrap_err(),
        Error::EmptySplit("training")
    );
}

fn bias_setup(seed: u64, n_train: usize) -> (Vec<Comment>, Vec<Comment>, EmbeddingTable, LabelSchema) {
    let corpus = bias_corpus(&BiasCorpusConfig { n_train, n_test: n_train / 2, ..BiasCorpusConfig::default() }, seed);
    let pre = Preprocessor::fit(&corpus.train, Tokenizer::default(), corpus.schema.clone(), 24, 3.0, 1, None);
    let table = random_table(&pre, 16, seed);
    (pre.comments(&corpus.train).unwrap(), pre.comments(&corpus.test).unwrap(), table, corpus.schema)
}

#[test]
fn propagation_recovers_duplicated_identity() {
    let (train, _, table, _) = bias_setup(4, 800);
    let gay = 0;
    let source = train.iter().find(|c| c.identity_labels[gay] == 1.0).unwrap().clone();
    let mut unannotated = vec![Comment {
        id: "copy".into(),
        identity_labels: vec![0.0; 6],
        needs_propagation: true,
        ..source.clone()
    }];
    let mut ptrain = small_train(6, 40, 2);
    ptrain.adam.learning_rate = 1e-2;
    let pcfg = PropagationConfig { hyper: small_hyper(6), train: ptrain };
    let n = propagate_identities(&train, &mut unannotated, &table, &pcfg, 3.0).unwrap();
    assert_eq!(n, 1);
    let c = &unannotated[0];
    assert!(c.propagated && !c.needs_propagation);
    assert!(c.identity_labels[gay] > 0.5, "{:?}", c.identity_labels);
    assert!(c.identity_labels.iter().all(|v| (0.0..=1.0).contains(v)));

    let mut none: Vec<Comment> = vec![];
    assert_eq!(propagate_identities(&train, &mut none, &table, &pcfg, 3.0).unwrap(), 0);
    assert!(propagate_identities(&[], &mut unannotated, &table, &pcfg, 3.0).is_err());
}

#[test]
fn experiment_runs_end_to_end() {
    let (train, _, table, schema) = bias_setup(5, 120);
    let cfg = ExperimentConfig {
        hyper: small_hyper(6),
        train: small_train(6, 2, 9),
        folds: 2,
        grid_search: false,
        propagation: None,
        p: -5.0,
    };
    let out = run_experiment(train.clone(), &table, &schema, &cfg).unwrap();
    assert_eq!(out.record.folds.len(), 2);
    assert_eq!(out.models.len(), 2);
    let aucs: Vec<f64> = out.record.aggregate.per_fold.iter().map(|f| f.auc.value().unwrap()).collect();
    let mean = out.record.aggregate.mean.auc.value().unwrap();
    assert!((mean - (aucs[0] + aucs[1]) / 2.0).abs() < 1e-15);

    let again = run_experiment(train.clone(), &table, &schema, &cfg).unwrap();
    assert_eq!(again.record, out.record);

    let mut unlabeled = train;
    unlabeled[0].needs_propagation = true;
    assert!(matches!(
        run_experiment(unlabeled, &table, &schema, &cfg),
        Err(Error::PropagationRequired { unannotated: 1 })
    ));
}

#[test]
fn grid_search_reports_every_point() {
    let (train, test, table, schema) = bias_setup(6, 120);
    let cfg = small_train(6, 1, 1);
    let g = grid_search_alpha(&train, &test, &table, &small_hyper(6), &schema, &[0.4], &cfg, -5.0).unwrap();
    assert_eq!(g.chosen_alpha, 0.4);
    assert_eq!(g.points.len(), 1);
    let g = grid_search_alpha(&train, &test, &table, &small_hyper(6), &schema, &[0.2, 0.8], &cfg, -5.0).unwrap();
    assert_eq!(g.points.len(), 2);
    assert!(grid_search_alpha(&train, &test, &table, &small_hyper(6), &schema, &[], &cfg, -5.0).is_err());
    let report = evaluate(
        &toxbias_core::nn::init_params(&small_hyper(6), 0).unwrap(),
        &table,
        &test,
        &schema,
        -5.0,
    )
    .unwrap();
    assert_eq!(report.subgroups.len(), 6);
    assert!(matches!(report.overall_auc, Score::Defined(_)));
}
