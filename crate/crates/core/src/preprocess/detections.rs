use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geometry::BoundingBox;
use crate::error::{Error, Result};

/// One line of an external detector's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub boxes: Vec<[i64; 4]>,
    #[serde(default)]
    pub scores: Vec<f64>,
}

impl Detection {
    /// Highest-scoring box; the first box when scores are absent.
    pub fn best_box(&self) -> Option<BoundingBox> {
        if self.boxes.is_empty() {
            return None;
        }
        let best = if self.scores.len() == self.boxes.len() {
            self.scores
                .iter()
                .enumerate()
                .fold(0, |best, (i, &s)| if s > self.scores[best] { i } else { best })
        } else {
            0
        };
        Some(BoundingBox::from_array(self.boxes[best]))
    }
}

pub fn load_detections(path: &Path) -> Result<HashMap<String, Detection>> {
    let file = std::fs::File::open(path)?;
    let mut out = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let det: Detection = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.insert(det.image_id.clone(), det);
    }
    Ok(out)
}
