//! Per-image signals: handcrafted features, ingested embeddings, PCA and the
//! triplet-trained linear embedding.

pub mod color;
pub mod embeddings;
pub mod image;
pub mod pca;
pub mod phash;
pub mod pipeline;
pub mod triplet;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use self::color::DominantColor;
pub use self::embeddings::{load_embeddings, EmbeddingSet};
pub use self::image::{CropRect, RawImage};
pub use self::pca::PcaModel;
pub use self::phash::{hamming, phash};
pub use self::pipeline::{FamilySource, FamilySpec, PipelineConfig};
pub use self::triplet::{
    triplet_loss, triplet_train, Triplet, TripletEmbeddingModel, TripletTrainConfig,
};

use crate::error::Result;

/// Everything the engine knows about one image. Fields are optional because
/// embedding-only queries and synthetic documents carry partial bundles.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub embeddings: BTreeMap<String, Vec<f32>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub color_hist: Vec<f32>,
    #[serde(default)]
    pub dominant_color: Option<DominantColor>,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub phash: Option<u64>,
    #[serde(default, with = "opt_u128_hex")]
    pub digest: Option<u128>,
    #[serde(default)]
    pub metadata_text: Option<String>,
}

impl FeatureBundle {
    pub fn embedding(&self, family: &str) -> Option<&[f32]> {
        self.embeddings.get(family).map(Vec::as_slice)
    }
}

/// Computes the pixel-derived features of `image` (after `crop`, when given)
/// and every computable family of `pipeline`. External families are left
/// absent. The digest always describes the uncropped source.
pub fn extract_features(
    image: &RawImage,
    crop: Option<&CropRect>,
    pipeline: &PipelineConfig,
) -> Result<FeatureBundle> {
    let cropped;
    let region = match crop {
        Some(c) => {
            cropped = image.crop(c)?;
            &cropped
        }
        None => image,
    };
    let color_hist = color::color_histogram(region);
    let mut embeddings = BTreeMap::new();
    for spec in pipeline.families() {
        if spec.source == FamilySource::ColorHist {
            embeddings.insert(spec.name.clone(), color_hist.clone());
        }
    }
    for spec in pipeline.families() {
        if let FamilySource::Triplet { model, input } = &spec.source {
            let v = model.embed(&embeddings[input])?;
            embeddings.insert(spec.name.clone(), v);
        }
    }
    Ok(FeatureBundle {
        embeddings,
        color_hist,
        dominant_color: Some(color::dominant_color(region)),
        category: None,
        phash: Some(phash::phash(region)),
        digest: Some(image.digest()),
        metadata_text: None,
    })
}

mod opt_u128_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<u128>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(d) => s.serialize_some(&format!("{d:032x}")),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u128>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        s.map(|s| u128::from_str_radix(&s, 16).map_err(serde::de::Error::custom))
            .transpose()
    }
}
