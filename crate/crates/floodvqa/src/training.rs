//! Training a fusion head on cached features.

use std::time::Instant;

use floodvqa_core::{
    EpochStats, FeatureSet, FusionConfig, FusionModel, LabelVocabulary, QAPair, QuestionType, TrainConfig, Trainer,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::FeatureStore;

/// Features, labels and question types aligned row by row with the pairs
/// they came from.
#[derive(Debug, Clone)]
pub struct LabeledFeatures {
    pub features: FeatureSet<f32>,
    pub question_ids: Vec<String>,
    pub types: Vec<QuestionType>,
}

/// Joins pairs with their cached vectors. Every lookup is checked before any
/// row is assembled, so a missing item fails fast with a count.
pub fn build_features(
    pairs: &[QAPair],
    vocab: &LabelVocabulary,
    image_store: &FeatureStore,
    text_store: &FeatureStore,
) -> Result<LabeledFeatures> {
    let missing_images: Vec<&str> = pairs
        .iter()
        .map(|p| p.image_id.as_str())
        .filter(|id| !image_store.contains(id))
        .collect();
    let missing_texts: Vec<&str> = pairs
        .iter()
        .map(|p| p.question_id.as_str())
        .filter(|id| !text_store.contains(id))
        .collect();
    for (missing, store) in [(&missing_images, image_store), (&missing_texts, text_store)] {
        if let Some(first) = missing.first() {
            log::error!(
                "{} of {} items absent from {}",
                missing.len(),
                pairs.len(),
                store.dir().display()
            );
            return Err(Error::MissingFeature {
                store: store.dir().to_path_buf(),
                item_id: first.to_string(),
            });
        }
    }

    let mut features = FeatureSet::new(image_store.output_dim(), text_store.output_dim());
    let mut question_ids = Vec::with_capacity(pairs.len());
    let mut types = Vec::with_capacity(pairs.len());
    for p in pairs {
        features.push(image_store.get(&p.image_id)?, text_store.get(&p.question_id)?, p.label(vocab)?)?;
        question_ids.push(p.question_id.clone());
        types.push(p.question_type);
    }
    Ok(LabeledFeatures {
        features,
        question_ids,
        types,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRef {
    pub encoder: String,
    pub output_dim: usize,
    pub checksum: String,
}

impl StoreRef {
    pub fn of(store: &FeatureStore) -> Self {
        StoreRef {
            encoder: store.encoder_name().to_string(),
            output_dim: store.output_dim(),
            checksum: store.checksum().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    #[serde(flatten)]
    pub stats: EpochStats,
    /// Wall-clock seconds since training started, at the end of this epoch.
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub pipeline_version: String,
    pub model_tag: String,
    pub fusion: FusionConfig,
    pub training: TrainConfig,
    pub split_seed: Option<u64>,
    pub image_features: Option<StoreRef>,
    pub text_features: Option<StoreRef>,
    pub train_pairs: usize,
    pub parameters: usize,
    pub epochs: Vec<EpochRecord>,
    pub total_seconds: f64,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.stats.mean_loss)
    }
}

pub struct TrainOutcome {
    pub model: FusionModel<f32>,
    pub log: TrainLog,
}

/// Fits a freshly initialized head. The feature widths in `fusion` must match
/// the data.
pub fn train(
    model_tag: &str,
    fusion: FusionConfig,
    training: TrainConfig,
    data: &LabeledFeatures,
) -> Result<TrainOutcome> {
    let set = &data.features;
    for (modality, expected, actual) in [
        ("image", fusion.image_dim, set.image_dim()),
        ("text", fusion.text_dim, set.text_dim()),
    ] {
        if expected != actual {
            return Err(floodvqa_core::Error::Shape {
                modality,
                expected,
                actual,
            }
            .into());
        }
    }
    let model = FusionModel::<f32>::init(fusion.clone())?;
    let parameters = model.num_parameters();
    let mut trainer = Trainer::new(model, training.clone())?;
    log::info!(
        "{model_tag}: {} pairs, {parameters} parameters, {} epochs of {} steps",
        set.len(),
        training.epochs,
        training.steps_per_epoch(set.len())
    );

    let start = Instant::now();
    let mut epochs = Vec::with_capacity(training.epochs);
    for _ in 0..training.epochs {
        let stats = trainer.run_epoch(set)?;
        let elapsed_seconds = start.elapsed().as_secs_f64();
        log::info!(
            "{model_tag} epoch {:>3}: loss {:.4}, train acc {:.2}%, {:.1}s",
            stats.epoch,
            stats.mean_loss,
            stats.train_accuracy,
            elapsed_seconds
        );
        epochs.push(EpochRecord { stats, elapsed_seconds });
    }
    let total_seconds = start.elapsed().as_secs_f64();

    let log = TrainLog {
        pipeline_version: crate::pipeline_version(),
        model_tag: model_tag.to_string(),
        fusion,
        training,
        split_seed: None,
        image_features: None,
        text_features: None,
        train_pairs: set.len(),
        parameters,
        epochs,
        total_seconds,
    };
    Ok(TrainOutcome {
        model: trainer.into_model(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::write_store;
    use floodvqa_core::vocab::build_label_vocabulary;
    use floodvqa_core::FusionMethod;

    #[test]
    fn missing_feature_fails_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let (img_dir, txt_dir) = (dir.path().join("img"), dir.path().join("txt"));
        write_store(&img_dir, "i", 2, [("img1", &[1.0f32, 2.0][..])]).unwrap();
        write_store(&txt_dir, "t", 2, [("q1", &[0.5f32, 0.5][..])]).unwrap();
        let vocab = build_label_vocabulary();
        let pairs = vec![
            QAPair::new("q1", "img1", "Is the road flooded?", "Yes", QuestionType::YesNo).unwrap(),
            QAPair::new("q2", "img1", "Is it?", "No", QuestionType::YesNo).unwrap(),
        ];
        let (i, t) = (FeatureStore::open(&img_dir).unwrap(), FeatureStore::open(&txt_dir).unwrap());
        let err = build_features(&pairs, &vocab, &i, &t).unwrap_err();
        assert!(matches!(err, Error::MissingFeature { ref item_id, .. } if item_id == "q2"));

        let data = build_features(&pairs[..1], &vocab, &i, &t).unwrap();
        let wrong = FusionConfig::new(FusionMethod::Concat, 3, 2);
        assert!(train("x", wrong, TrainConfig::default(), &data).is_err());

        let mut cfg = TrainConfig::default();
        cfg.epochs = 2;
        let out = train("x", FusionConfig::new(FusionMethod::Concat, 2, 2), cfg, &data).unwrap();
        assert_eq!(out.log.epochs.len(), 2);
        assert!(out.log.epochs[1].elapsed_seconds >= out.log.epochs[0].elapsed_seconds);
        let json = serde_json::to_value(&out.log).unwrap();
        assert_eq!(json["epochs"][0]["epoch"], 1);
    }
}
