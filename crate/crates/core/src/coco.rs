//! The subset of COCO-style annotation JSON this crate reads. Unknown
//! fields are ignored. Boxes are `[x, y, width, height]` on disk.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub image_id: u64,
    pub bbox: [f64; 4],
    pub category_id: u64,
}

impl CocoAnnotation {
    pub fn corners(&self) -> Result<BBox> {
        let [x, y, w, h] = self.bbox;
        BBox::from_xywh(x, y, w, h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
}

impl CocoDataset {
    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Self = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for img in &self.images {
            if !ids.insert(img.id) {
                return Err(Error::invalid(format!("duplicate image id {}", img.id)));
            }
        }
        for (i, a) in self.annotations.iter().enumerate() {
            if !ids.contains(&a.image_id) {
                return Err(Error::invalid(format!("annotation {i} refers to unknown image {}", a.image_id)));
            }
            a.corners().map_err(|e| Error::invalid(format!("annotation {i}: {e}")))?;
        }
        Ok(())
    }

    /// Annotations grouped by image id, in file order within each image.
    pub fn by_image(&self) -> BTreeMap<u64, Vec<&CocoAnnotation>> {
        let mut map: BTreeMap<u64, Vec<&CocoAnnotation>> = self.images.iter().map(|i| (i.id, Vec::new())).collect();
        for a in &self.annotations {
            map.entry(a.image_id).or_default().push(a);
        }
        map
    }

    pub fn category_name(&self, id: u64) -> Option<&str> {
        self.categories.iter().find(|c| c.id == id).map(|c| c.name.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "info": {"year": 2017},
        "images": [{"id": 1, "file_name": "a.png", "width": 64, "height": 48, "license": 3},
                   {"id": 2, "file_name": "b.png", "width": 64, "height": 48}],
        "annotations": [{"id": 10, "image_id": 1, "bbox": [10, 20, 30, 5], "category_id": 11, "iscrowd": 0},
                        {"image_id": 1, "bbox": [0.5, 0.5, 1, 1], "category_id": 7}],
        "categories": [{"id": 11, "name": "fire hydrant"}, {"id": 7, "name": "stop sign"}]
    }"#;

    #[test]
    fn parses_subset_and_converts_boxes() {
        let ds = CocoDataset::from_json(SAMPLE).unwrap();
        assert_eq!(ds.images.len(), 2);
        assert_eq!(ds.annotations[0].corners().unwrap(), BBox::new(10.0, 20.0, 40.0, 25.0).unwrap());
        assert_eq!(ds.category_name(11), Some("fire hydrant"));
        let g = ds.by_image();
        assert_eq!(g[&1].len(), 2);
        assert!(g[&2].is_empty());
    }

    #[test]
    fn rejects_bad_references() {
        let bad = r#"{"images": [], "annotations": [{"image_id": 4, "bbox": [0,0,1,1], "category_id": 1}]}"#;
        assert!(CocoDataset::from_json(bad).is_err());
        let neg = r#"{"images": [{"id":1,"file_name":"x","width":1,"height":1}],
                      "annotations": [{"image_id": 1, "bbox": [0,0,-1,1], "category_id": 1}]}"#;
        assert!(CocoDataset::from_json(neg).is_err());
        let dup = r#"{"images": [{"id":1,"file_name":"x","width":1,"height":1},{"id":1,"file_name":"y","width":1,"height":1}],
                      "annotations": []}"#;
        assert!(CocoDataset::from_json(dup).is_err());
        assert!(CocoDataset::from_json("{").is_err());
    }
}
