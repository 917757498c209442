use std::path::Path;

use find_client::{Client, ClientError, CompareParams, MetricsParams};
use find_core::api::{
    ApplyRequest, CreateSession, DatasetSource, DisableRequest, EmbeddingSource, OracleSpec, RegisterDataset, RunConfig,
    SimulateRequest, TrainRequest,
};
use find_core::feedback::{Answer, Policy, SessionStatus, TaskType};
use find_core::synth::{sentiment_corpus, SentimentSpec};
use find_service::{start, ServiceConfig};

fn small_config() -> RunConfig {
    RunConfig {
        filter_sizes: vec![2, 3],
        filters_per_size: 3,
        max_len: 30,
        max_epochs: 4,
        patience: 2,
        learning_rate: 3e-3,
        ..RunConfig::default()
    }
}

fn fixture(dir: &Path) -> OracleSpec {
    let f = sentiment_corpus(&SentimentSpec {
        train: 80,
        dev: 20,
        test: 40,
        embed_dim: 12,
        ..Default::default()
    })
    .unwrap();
    f.write(dir).unwrap();
    OracleSpec::from_oracle(&f.oracle, &f.dataset.classes)
}

fn register(dir: &Path) -> RegisterDataset {
    RegisterDataset {
        name: Some("toy".into()),
        data: DatasetSource::Path {
            path: dir.join("dataset.jsonl"),
            format: None,
        },
        embeddings: EmbeddingSource::Path {
            path: dir.join("embeddings.txt"),
        },
    }
}

fn config(data_dir: &Path) -> ServiceConfig {
    ServiceConfig {
        port: 0,
        data_dir: data_dir.to_path_buf(),
        ..ServiceConfig::default()
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn full_simulated_loop_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let oracle = fixture(&tmp.path().join("fixture"));
    let data_dir = tmp.path().join("data");
    let server = start(&config(&data_dir)).await.unwrap();
    let client = Client::new(server.url());
    assert_eq!(client.health().await.unwrap().status, "ok");

    let ds = client.register_dataset(&register(&tmp.path().join("fixture"))).await.unwrap();
    assert_eq!(ds.classes, vec!["negative", "positive"]);
    assert_eq!((ds.train, ds.dev, ds.test), (80, 20, 40));
    // registration is idempotent
    assert_eq!(client.register_dataset(&register(&tmp.path().join("fixture"))).await.unwrap(), ds);

    let trained = client
        .train_wait(&TrainRequest {
            dataset_id: ds.dataset_id.clone(),
            config: small_config(),
            seed: 3,
        })
        .await
        .unwrap();
    let m = trained.model.model_id.clone();
    assert_eq!(trained.model.lineage, m);
    assert_eq!(trained.model.feature_count, 6);
    assert!(client.training_log(&m).await.unwrap().lines().count() == trained.training.epochs);

    let features = client.features(&m).await.unwrap();
    assert_eq!(features.len(), 6);
    let cloud_before = client.cloud(&m, 0, None).await.unwrap();
    assert_eq!(cloud_before.len(), 1);
    assert!(matches!(client.cloud(&m, 6, None).await, Err(ClientError::Api { .. })));

    let created = client
        .create_session(&CreateSession {
            model_id: m.clone(),
            task: TaskType::BinaryGraded,
            policy: Policy::MajorityVote,
            top_n: None,
        })
        .await
        .unwrap();
    assert_eq!(created.questions, 6);
    let sid = created.session_id;

    // an out-of-range choice is rejected with the allowed options
    let bad = client
        .answers(
            &sid,
            vec![Answer {
                question_id: 0,
                respondent_id: "r1".into(),
                choice: 9,
                cloud: 0,
                timestamp_ms: 0,
            }],
        )
        .await
        .unwrap_err();
    match bad {
        ClientError::Api { status, body } => {
            assert_eq!(status.as_u16(), 422);
            assert_eq!(body.allowed.unwrap().len(), 5);
        }
        other => panic!("unexpected {other}"),
    }

    let empty = client.apply(&sid, &ApplyRequest::default()).await.unwrap_err();
    assert!(empty.to_string().contains("no answers to aggregate"), "{empty}");

    let ack = client
        .simulate(
            &sid,
            &SimulateRequest {
                oracle,
                respondents: 10,
                noise: 0.1,
                seed: 1,
            },
        )
        .await
        .unwrap();
    assert_eq!(ack.total, 60);

    let apply_req = ApplyRequest {
        config: small_config(),
        seed: 3,
        finetune_always: false,
    };
    let applied = client.apply_wait(&sid, &apply_req).await.unwrap();
    assert_eq!(applied.model.parent.as_deref(), Some(m.as_str()));
    assert_eq!(applied.model.lineage, m);
    assert_eq!(applied.model.disabled, applied.disabled);
    let session = client.session(&sid).await.unwrap();
    assert_eq!(session.status, SessionStatus::Applied);

    let again = client.apply(&sid, &apply_req).await.unwrap_err();
    assert_eq!(again.code(), Some("conflict"));

    // originals never change
    assert_eq!(client.cloud(&m, 0, None).await.unwrap(), cloud_before);

    let cmp = client
        .compare(&m, &applied.model.model_id, &CompareParams::default())
        .await
        .unwrap();
    assert!((cmp.delta_macro_f1 - (cmp.b.macro_f1 - cmp.a.macro_f1)).abs() < 1e-15);
    assert!(cmp.p_value > 0.0 && cmp.p_value <= 1.0);

    let metrics = client
        .metrics(
            &m,
            &MetricsParams {
                bias: vec!["male".into(), "female".into()],
                ..Default::default()
            },
        )
        .await
        .unwrap();
    assert_eq!(metrics.report.size, 40);
    assert!(metrics.bias.is_some());

    let disabled = client
        .disable_wait(
            &m,
            &DisableRequest {
                features: [0, 1].into(),
                config: small_config(),
                seed: 0,
                finetune_always: false,
            },
        )
        .await
        .unwrap();
    assert!(disabled.fine_tuned);
    assert_eq!(disabled.model.disabled, [0, 1].into());

    let state = client.state().await.unwrap();
    server.stop().await.unwrap();

    let server = start(&config(&data_dir)).await.unwrap();
    let client = Client::new(server.url());
    assert_eq!(client.state().await.unwrap(), state);
    assert_eq!(client.cloud(&m, 0, None).await.unwrap(), cloud_before);
    server.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_ids_are_not_found() {
    let tmp = tempfile::tempdir().unwrap();
    let server = start(&config(tmp.path())).await.unwrap();
    let client = Client::new(server.url());
    for err in [
        client.model("nope").await.unwrap_err(),
        client.session("nope").await.unwrap_err(),
        client.job("nope").await.unwrap_err(),
        client
            .train(&TrainRequest {
                dataset_id: "nope".into(),
                config: RunConfig::default(),
                seed: 0,
            })
            .await
            .unwrap_err(),
    ] {
        assert_eq!(err.code(), Some("not_found"), "{err}");
    }
    server.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn imported_snapshot_keeps_its_content_id() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(&tmp.path().join("fixture"));
    let server = start(&config(&tmp.path().join("data"))).await.unwrap();
    let client = Client::new(server.url());
    let ds = client.register_dataset(&register(&tmp.path().join("fixture"))).await.unwrap();
    let trained = client
        .train_wait(&TrainRequest {
            dataset_id: ds.dataset_id.clone(),
            config: small_config(),
            seed: 1,
        })
        .await
        .unwrap();
    let bytes = client.snapshot(&trained.model.model_id).await.unwrap();
    assert_eq!(find_core::snapshot::snapshot_id(&bytes), trained.model.model_id);
    let imported = client.import(&ds.dataset_id, bytes).await.unwrap();
    assert_eq!(imported.model_id, trained.model.model_id);
    let garbage = client.import(&ds.dataset_id, b"not a snapshot".to_vec()).await.unwrap_err();
    assert_eq!(garbage.code(), Some("validation"));
    server.stop().await.unwrap();
}
