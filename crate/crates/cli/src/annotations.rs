//! Line-delimited JSON annotation records, one image per line.
//!
//! ```text
//! {"image":"images/a.pgm","width":768,"height":384,"boxes":[{"class":"box","bbox":[10,12,40,44]}]}
//! ```
//!
//! Detection files use the same grammar with a `score` on every box.
//! Image paths are relative to the annotation file's directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use symdet::{BBox, ClassVocabulary, Detection};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub class: String,
    pub bbox: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<BoxRecord>,
}

impl BoxRecord {
    pub fn bbox(&self) -> BBox {
        let [a, b, c, d] = self.bbox;
        BBox::new(a, b, c, d)
    }
}

impl ImageRecord {
    pub fn truth(&self, vocab: &ClassVocabulary) -> Result<Vec<(usize, BBox)>, CliError> {
        self.boxes
            .iter()
            .map(|b| {
                let c = class_index(vocab, &b.class)?;
                let bbox = b.bbox();
                let inside = bbox.xmax <= self.width as f64 && bbox.ymax <= self.height as f64;
                if !(bbox.is_valid() && inside) {
                    return Err(CliError::Data(format!(
                        "{}: box {:?} is invalid or out of bounds",
                        self.image, b.bbox
                    )));
                }
                Ok((c, bbox))
            })
            .collect()
    }

    pub fn detections(&self, vocab: &ClassVocabulary) -> Result<Vec<Detection>, CliError> {
        self.boxes
            .iter()
            .map(|b| {
                let score =
                    b.score.ok_or_else(|| CliError::Data(format!("{}: detection without score", self.image)))?;
                Ok(Detection { bbox: b.bbox(), class_index: class_index(vocab, &b.class)?, score })
            })
            .collect()
    }
}

fn class_index(vocab: &ClassVocabulary, name: &str) -> Result<usize, CliError> {
    match vocab.lookup(name) {
        Some(c) if c > 0 => Ok(c),
        _ => Err(CliError::Data(format!("unknown class {name:?}"))),
    }
}

pub fn read(path: &Path) -> Result<Vec<ImageRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn to_text(records: &[ImageRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

pub fn write(path: &Path, records: &[ImageRecord]) -> Result<(), CliError> {
    fs::write(path, to_text(records)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_vocab(path: &Path) -> Result<ClassVocabulary, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let names = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    ClassVocabulary::from_names(names)
        .ok_or_else(|| CliError::Data(format!("{}: vocabulary must start with background", path.display())))
}

pub fn write_vocab(path: &Path, vocab: &ClassVocabulary) -> Result<(), CliError> {
    let text: String = vocab.names().iter().map(|n| format!("{n}\n")).collect();
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
