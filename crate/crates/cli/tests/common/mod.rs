#![allow(dead_code)]

use std::path::{Path, PathBuf};

use selfnet::artifact::{Checkpoint, TrainingState};
use selfnet::data::{write_jsonl, DatasetSplit};
use selfnet::model::ModelParams;
use selfnet::train::{AdamState, TrainConfig};
use selfnet::{NgramVocabulary, SelfNet, Tensor};
use selfnet_cli::Overrides;

/// Small enough to train in well under a second per epoch.
pub const TOY_CONFIG: &str = "\
# toy model
embed_dim = 8
hidden_size = 6
mlp_hidden = 12
buckets = 300
epochs = 2
batch_size = 16
learning_rate = 0.005
";

pub fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.txt");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn write_split(dir: &Path, split: &DatasetSplit) {
    std::fs::create_dir_all(dir).unwrap();
    for (name, part) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        let records: Vec<_> = part.iter().map(|e| e.to_record(Vec::new())).collect();
        write_jsonl(dir.join(format!("{name}.jsonl")), &records).unwrap();
    }
}

pub fn overrides(config: &Path) -> Overrides {
    Overrides {
        config: Some(config.to_path_buf()),
        seed: Some(0),
        ..Overrides::default()
    }
}

/// A checkpoint with `M = I`, zero encoder and head, and embedding rows set
/// so that every token in `sentence` composes to its vector in `vectors`.
pub fn constructed_checkpoint(sentence: &[&str], vectors: &[Vec<f64>]) -> Checkpoint {
    let d = vectors[0].len();
    let mut config = TrainConfig::default();
    config
        .apply_text(&format!("embed_dim = {d}\nhidden_size = 2\nmlp_hidden = 3\nbuckets = 100000"))
        .unwrap();
    let tokens: Vec<String> = sentence.iter().map(|s| s.to_string()).collect();
    let vocab = NgramVocabulary::build(config.vocab.clone(), [&tokens]).unwrap();
    let mut params = ModelParams::zeros(&config.model, vocab.input_rows()).unwrap();
    params.bilinear = Tensor::identity(d);
    for (token, v) in sentence.iter().zip(vectors) {
        for row in vocab.bag(token) {
            params.embedding.row_mut(row).copy_from_slice(v);
        }
    }
    let adam = AdamState::new(params.named());
    Checkpoint {
        model: SelfNet {
            config: config.model.clone(),
            vocab,
            params,
        },
        config,
        adam,
        state: TrainingState {
            epoch: 0,
            seed: 0,
            best_valid_f1: None,
            best_epoch: None,
            history: Vec::new(),
        },
    }
}
