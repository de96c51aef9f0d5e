use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned detection box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    #[serde(default)]
    pub class_id: i64,
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl BoundingBox2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
            class_id: 0,
            confidence: 1.0,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::InvalidArgument(format!(
                "bbox must have x_min < x_max and y_min < y_max: {self:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidArgument(format!(
                "bbox confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Picks the highest-confidence box of a class; earlier boxes win ties.
    pub fn best_of(boxes: &[BoundingBox2D], class_id: i64) -> Option<BoundingBox2D> {
        boxes
            .iter()
            .filter(|b| b.class_id == class_id)
            .fold(None, |best: Option<&BoundingBox2D>, b| match best {
                Some(cur) if cur.confidence >= b.confidence => Some(cur),
                _ => Some(b),
            })
            .copied()
    }
}
