use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// Points with optional per-point normals, colors in `[0, 1]` and labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
    colors: Option<Vec<Vector3<f64>>>,
    labels: Option<Vec<i64>>,
}

const UNIT_TOL: f64 = 1e-6;

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            ..Default::default()
        }
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        self.check_len("normals", normals.len())?;
        if let Some((i, n)) = normals
            .iter()
            .enumerate()
            .find(|(_, n)| (n.norm() - 1.0).abs() > UNIT_TOL)
        {
            return Err(Error::InvalidArgument(format!(
                "normal {i} has length {}, expected unit",
                n.norm()
            )));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_colors(mut self, colors: Vec<Vector3<f64>>) -> Result<Self> {
        self.check_len("colors", colors.len())?;
        if colors.iter().flat_map(|c| c.iter()).any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("colors must lie in [0, 1]".into()));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        self.check_len("labels", labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.points.len() {
            return Err(Error::ShapeError(format!(
                "{what} has {len} entries but cloud has {} points",
                self.points.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn colors(&self) -> Option<&[Vector3<f64>]> {
        self.colors.as_deref()
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    /// New cloud made of the given indices, in that order, attributes carried along.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let pick = |v: &Vec<_>| -> Vec<_> { indices.iter().map(|&i| v[i]).collect() };
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(pick),
            colors: self.colors.as_ref().map(pick),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}
