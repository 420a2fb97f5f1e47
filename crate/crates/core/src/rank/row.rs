//! Level-2 feature rows.
//!
//! Slot order is fixed by the index's family list: one `dist.<family>` slot
//! per family, then dominant color, category, text and L1 distance, then one
//! mask slot per defaultable feature.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::feature::FeatureBundle;
use crate::index::{Index, IndexManifest, Shard};
use crate::math::{digest_hex, sq_dist};
use crate::quantize::DistanceTable;

use super::text::QueryText;

/// Value substituted for a distance that cannot be computed.
pub const MISSING_DISTANCE: f32 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    families: Vec<String>,
    names: Vec<String>,
}

impl FeatureRegistry {
    pub fn for_families(families: &[String]) -> Self {
        let mut names: Vec<String> = families.iter().map(|f| format!("dist.{f}")).collect();
        names.extend(
            [
                "dominant_color_dist",
                "category_match",
                "text_match",
                "l1_distance",
            ]
            .map(String::from),
        );
        names.extend(families.iter().map(|f| format!("missing.{f}")));
        names.extend(
            ["missing.dominant_color", "missing.category", "missing.text"].map(String::from),
        );
        Self {
            families: families.to_vec(),
            names,
        }
    }

    pub fn for_manifest(manifest: &IndexManifest) -> Self {
        let families: Vec<String> = manifest.families.iter().map(|f| f.name.clone()).collect();
        Self::for_families(&families)
    }

    /// A registry with arbitrary slot names, for models trained outside an index.
    pub fn new(names: Vec<String>) -> Self {
        Self {
            families: Vec::new(),
            names,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn families(&self) -> &[String] {
        &self.families
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn digest(&self) -> String {
        digest_hex(self.names.join("\n").as_bytes())
    }

    fn dominant_color_slot(&self) -> usize {
        self.families.len()
    }

    fn mask_base(&self) -> usize {
        self.families.len() + 4
    }
}

/// Dense values plus the mask of slots that carry a substituted default.
/// The mask is mirrored into the `missing.*` slots of `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct L2FeatureRow {
    pub values: Vec<f32>,
    pub mask: Vec<bool>,
}

/// `s / (1 + s)`: squared distance squashed into [0, 1).
fn squash(s: f32) -> f32 {
    s / (1.0 + s)
}

/// Everything about the query a row needs, computed once per query.
pub struct QueryRowContext<'a> {
    registry: FeatureRegistry,
    query: &'a FeatureBundle,
    tables: Vec<Option<DistanceTable>>,
    text: Option<QueryText>,
    exact: bool,
}

impl<'a> QueryRowContext<'a> {
    /// `exact` uses raw stored vectors where available, ADC otherwise.
    pub fn new(query: &'a FeatureBundle, index: &'a Index, exact: bool) -> Result<Self> {
        let registry = FeatureRegistry::for_manifest(index.manifest());
        let tables = registry
            .families
            .iter()
            .map(|f| match query.embedding(f) {
                Some(v) => {
                    let m = &index.models().families[f];
                    m.pq.distance_table(&m.pca.apply(v)?).map(Some)
                }
                None => Ok(None),
            })
            .collect::<Result<_>>()?;
        let text = query
            .metadata_text
            .as_deref()
            .filter(|t| !t.is_empty())
            .map(|t| QueryText::new(t, index.idf()));
        Ok(Self {
            registry,
            query,
            tables,
            text,
            exact,
        })
    }

    pub fn registry(&self) -> &FeatureRegistry {
        &self.registry
    }

    /// The Level-1 family's table, if the query carries that embedding.
    pub fn table(&self, family: &str) -> Option<&DistanceTable> {
        let i = self.registry.families.iter().position(|f| f == family)?;
        self.tables[i].as_ref()
    }

    fn family_distance(&self, i: usize, shard: &Shard, pos: usize) -> Option<f32> {
        let name = &self.registry.families[i];
        let store = shard.family(name)?;
        if self.exact {
            if let (Some(raw), Some(q)) = (store.raw(pos), self.query.embedding(name)) {
                return Some(sq_dist(q, raw));
            }
        }
        let table = self.tables[i].as_ref()?;
        table.adc_distance(store.code(pos)?).ok()
    }
}

/// Row for the document at `pos` of `shard`.
pub fn assemble_feature_row(
    ctx: &QueryRowContext<'_>,
    shard: &Shard,
    pos: usize,
    l1_distance: f32,
) -> L2FeatureRow {
    let reg = &ctx.registry;
    let nf = reg.families.len();
    let mut values = vec![0f32; reg.len()];
    let mut mask = vec![false; reg.len()];
    let meta = shard.meta(pos);

    for i in 0..nf {
        match ctx.family_distance(i, shard, pos) {
            Some(d) => values[i] = squash(d),
            None => {
                values[i] = MISSING_DISTANCE;
                mask[i] = true;
            }
        }
    }

    let dc = reg.dominant_color_slot();
    match (&ctx.query.dominant_color, &meta.dominant_color) {
        (Some(q), Some(c)) => values[dc] = q.distance(c),
        _ => {
            values[dc] = MISSING_DISTANCE;
            mask[dc] = true;
        }
    }
    match (&ctx.query.category, &meta.category) {
        (Some(q), Some(c)) => values[dc + 1] = f32::from(u8::from(q == c)),
        _ => mask[dc + 1] = true,
    }
    match &ctx.text {
        Some(q) if !meta.metadata_text.is_empty() => {
            values[dc + 2] = q.score(&meta.metadata_text) as f32
        }
        _ => mask[dc + 2] = true,
    }
    values[dc + 3] = l1_distance;

    // Mirror the mask into the missing.* slots.
    let base = reg.mask_base();
    for i in 0..nf {
        values[base + i] = f32::from(u8::from(mask[i]));
    }
    for (k, slot) in (dc..dc + 3).enumerate() {
        values[base + nf + k] = f32::from(u8::from(mask[slot]));
    }
    L2FeatureRow { values, mask }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_layout() {
        let r = FeatureRegistry::for_families(&["a".into(), "b".into()]);
        assert_eq!(
            r.names(),
            [
                "dist.a",
                "dist.b",
                "dominant_color_dist",
                "category_match",
                "text_match",
                "l1_distance",
                "missing.a",
                "missing.b",
                "missing.dominant_color",
                "missing.category",
                "missing.text"
            ]
        );
        assert_eq!(r.slot("l1_distance"), Some(5));
        assert_ne!(
            r.digest(),
            FeatureRegistry::for_families(&["a".into()]).digest()
        );
    }

    #[test]
    fn squash_range() {
        assert_eq!(squash(0.0), 0.0);
        assert!(squash(1e3) < 1.0 && squash(1e3) > 0.99);
    }
}
