use selfnet::artifact::{Checkpoint, CheckpointError};
use selfnet::data::Batch;
use selfnet::eval::score;
use selfnet::synthetic::{planted_split, PlantedConfig};
use selfnet::train::{clip_gradients, train, ClipMode, Init, Status, TrainConfig};
use selfnet::{Error, Graph, Lexicon, Mode};

fn toy_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.apply_text(
        "embed_dim = 8\nhidden_size = 6\nmlp_hidden = 12\nbuckets = 300\n\
         epochs = 3\nbatch_size = 16\nlearning_rate = 0.005\nseed = 9",
    )
    .unwrap();
    c
}

fn toy_split() -> selfnet::data::DatasetSplit {
    planted_split([96, 32, 32], PlantedConfig::default(), 4)
}

#[test]
fn identical_seeds_give_identical_runs() {
    let split = toy_split();
    let config = toy_config();
    let a = train(&split, &config, Init::Fresh(None), |_, _, _| Ok(())).unwrap();
    let b = train(&split, &config, Init::Fresh(None), |_, _, _| Ok(())).unwrap();
    assert_eq!(a.status, Status::Completed);
    assert_eq!(a.log().len(), 3);
    let bits = |o: &selfnet::train::TrainOutcome| -> Vec<String> {
        o.log().iter().map(|r| r.csv_row()).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.last, b.last);

    let mut other = config.clone();
    other.seed += 1;
    let c = train(&split, &other, Init::Fresh(None), |_, _, _| Ok(())).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let split = toy_split();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.ckpt");
    let mut short = toy_config();
    short.epochs = 2;
    let first = train(&split, &short, Init::Fresh(None), |_, _, _| Ok(())).unwrap();
    first.last.save(&path).unwrap();

    let full = toy_config();
    let resumed = train(
        &split,
        &full,
        Init::Resume(Checkpoint::load(&path).unwrap()),
        |_, _, _| Ok(()),
    )
    .unwrap();
    let straight = train(&split, &full, Init::Fresh(None), |_, _, _| Ok(())).unwrap();
    assert_eq!(resumed.last, straight.last);
    assert_eq!(resumed.log(), straight.log());

    let mut changed = full.clone();
    changed.learning_rate *= 2.0;
    let err = train(
        &split,
        &changed,
        Init::Resume(first.last.clone()),
        |_, _, _| Ok(()),
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let split = toy_split();
    let out = train(&split, &toy_config(), Init::Fresh(None), |_, _, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    out.last.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, out.last);

    let mut lexicon = Lexicon::new();
    let probe: Vec<&_> = split.test.iter().take(8).collect();
    let batch = Batch::assemble(&probe, &mut lexicon, &back.model.vocab);
    let a = out.last.model.predict_batch(&batch, &lexicon).unwrap();
    let b = back.model.predict_batch(&batch, &lexicon).unwrap();
    let bits = |v: &[[f64; 2]]| -> Vec<u64> { v.iter().flatten().map(|x| x.to_bits()).collect() };
    assert_eq!(bits(&a), bits(&b));

    let mut again = Vec::new();
    let path2 = dir.path().join("again.ckpt");
    back.save(&path2).unwrap();
    again.extend(std::fs::read(&path2).unwrap());
    assert_eq!(again, std::fs::read(&path).unwrap());
}

#[test]
fn damaged_checkpoints_are_reported_distinctly() {
    let split = toy_split();
    let mut config = toy_config();
    config.epochs = 1;
    let out = train(&split, &config, Init::Fresh(None), |_, _, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    out.last.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(
        Checkpoint::decode(&magic),
        Err(CheckpointError::Version { .. })
    ));
    let mut version = bytes.clone();
    version[7] = 99;
    assert!(matches!(
        Checkpoint::decode(&version),
        Err(CheckpointError::Version { .. })
    ));
    for cut in [10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::decode(&bytes[..cut]), Err(CheckpointError::Truncated(_))),
            "cut at {cut}"
        );
    }

    // A checkpoint whose config block claims a different hidden size.
    let mut wrong = out.last.clone();
    wrong.config.model.hidden_size = 5;
    let path_wrong = dir.path().join("wrong.ckpt");
    wrong.save(&path_wrong).unwrap();
    let err = Checkpoint::load(&path_wrong).unwrap_err();
    assert!(
        matches!(err, Error::Checkpoint(CheckpointError::Shape { .. })),
        "{err}"
    );

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(
        Checkpoint::decode(&trailing),
        Err(CheckpointError::Invalid(_))
    ));
}

#[test]
fn divergence_keeps_the_last_good_state() {
    let split = toy_split();
    let mut config = toy_config();
    config.learning_rate = 1e300;
    let mut seen = Vec::new();
    let out = train(&split, &config, Init::Fresh(None), |row, _, _| {
        seen.push(row.epoch);
        Ok(())
    })
    .unwrap();
    let Status::Diverged { epoch, reason } = &out.status else {
        panic!("expected divergence, got {:?}", out.status);
    };
    assert_eq!(*epoch, seen.len() + 1, "{reason}");
    assert_eq!(out.last.state.epoch, seen.len());
    for (name, t) in out.last.model.params.named() {
        assert!(t.is_finite(), "{name}");
    }
}

#[test]
fn best_checkpoint_is_at_least_as_good_as_the_first_epoch() {
    let split = planted_split([256, 64, 64], PlantedConfig::default(), 5);
    let mut config = toy_config();
    config.epochs = 6;
    let mut first = None;
    let out = train(&split, &config, Init::Fresh(None), |row, ckpt, _| {
        if row.epoch == 1 {
            first = Some(ckpt.clone());
        }
        Ok(())
    })
    .unwrap();
    let best = out.best.unwrap();
    let f1 = |c: &Checkpoint| score(&c.model, &split.valid, 32).unwrap().metrics.f1;
    assert!(f1(&best) >= f1(&first.unwrap()));
    assert_eq!(best.state.best_valid_f1, Some(f1(&best)));
}

#[test]
fn clipped_gradients_respect_the_threshold_every_step() {
    let split = toy_split();
    let config = toy_config();
    let out = train(&split, &config, Init::Fresh(None), |_, _, _| Ok(())).unwrap();
    let model = &out.last.model;
    let mut lexicon = Lexicon::new();
    let mut rng = rand::rngs::mock::StepRng::new(1, 7);
    for chunk in split.train.chunks(16) {
        let refs: Vec<&_> = chunk.iter().collect();
        let batch = Batch::assemble(&refs, &mut lexicon, &model.vocab);
        let mut g = Graph::new();
        let vars = model.params.register(&mut g);
        let (l, _) = selfnet::model::loss(&mut g, &vars, &batch, &lexicon, &model.config, Mode::Train, &mut rng)
            .unwrap();
        let mut grads = g.backward(l).unwrap();
        clip_gradients(&mut grads, 0.3, ClipMode::GlobalNorm);
        assert!(grads.global_norm() <= 0.3 + 1e-12);
        clip_gradients(&mut grads, 1e-3, ClipMode::Value);
        assert!(grads.iter().all(|(_, t)| t.data().iter().all(|x| x.abs() <= 1e-3)));
    }
}

#[test]
fn empty_splits_are_rejected() {
    let mut split = toy_split();
    split.valid.clear();
    assert!(matches!(
        train(&split, &toy_config(), Init::Fresh(None), |_, _, _| Ok(())),
        Err(Error::Empty(_))
    ));
}
