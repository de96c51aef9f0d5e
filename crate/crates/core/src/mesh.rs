use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::se3::PoseSE3;

/// Indexed triangle mesh in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidArgument(format!(
                "triangle {t:?} references a vertex beyond {n}"
            )));
        }
        if vertices.iter().any(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite vertex".into()));
        }
        Ok(Self {
            vertices,
            triangles,
            normals: None,
        })
    }

    /// Attaches per-vertex normals; they are normalized here.
    pub fn with_vertex_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::ShapeError(format!(
                "{} normals for {} vertices",
                normals.len(),
                self.vertices.len()
            )));
        }
        let normals = normals
            .into_iter()
            .map(|n| {
                n.try_normalize(1e-12)
                    .ok_or_else(|| Error::InvalidArgument("zero-length vertex normal".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn triangle(&self, i: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Counter-clockwise winding gives the outward normal.
    pub fn face_normal(&self, i: usize) -> Option<Vector3<f64>> {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a)).try_normalize(1e-300)
    }

    pub fn face_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.face_area(i)).sum()
    }

    pub fn transformed(&self, pose: &PoseSE3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| pose.apply(v)).collect(),
            triangles: self.triangles.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| pose.apply_vector(n)).collect()),
        }
    }

    /// Axis-aligned box centered at the origin with outward winding.
    pub fn cuboid(size: Vector3<f64>) -> TriangleMesh {
        let h = size * 0.5;
        let vertices = (0..8)
            .map(|i| {
                Point3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
            })
            .collect();
        let quads = [
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
        ];
        let triangles = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        TriangleMesh::new(vertices, triangles).expect("valid cuboid")
    }

    /// Subdivided icosahedron scaled to an ellipsoid, with analytic vertex normals.
    pub fn ellipsoid(semi_axes: Vector3<f64>, subdivisions: usize) -> TriangleMesh {
        let (dirs, triangles) = icosphere(subdivisions);
        let vertices = dirs
            .iter()
            .map(|d| Point3::from(d.component_mul(&semi_axes)))
            .collect();
        let normals = dirs
            .iter()
            .map(|d| d.component_div(&semi_axes))
            .collect();
        TriangleMesh::new(vertices, triangles)
            .and_then(|m| m.with_vertex_normals(normals))
            .expect("valid ellipsoid")
    }

    pub fn sphere(radius: f64, subdivisions: usize) -> TriangleMesh {
        Self::ellipsoid(Vector3::repeat(radius), subdivisions)
    }
}

fn icosphere(subdivisions: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::from(*v).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Largest vertex-to-vertex distance.
///
/// Exact `O(V²)` scan, parallel over the first index. The max-reduction is
/// order independent so the result does not depend on the thread count.
pub fn mesh_diameter(mesh: &TriangleMesh) -> Result<f64> {
    points_diameter(mesh.vertices())
}

pub fn points_diameter(points: &[Point3<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::DegenerateMesh(format!(
            "diameter needs at least 2 vertices, got {}",
            points.len()
        )));
    }
    let max_sq = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let a = points[i];
            points[i + 1..]
                .iter()
                .map(|b| (b - a).norm_squared())
                .fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let d = max_sq.sqrt();
    if d <= 0.0 {
        return Err(Error::DegenerateMesh("all vertices coincide".into()));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_diameter(pts: &[Point3<f64>]) -> f64 {
        let mut best = 0.0f64;
        for a in pts {
            for b in pts {
                best = best.max(nalgebra::distance(a, b));
            }
        }
        best
    }

    #[test]
    fn unit_cube_diameter_is_sqrt3() {
        let cube = TriangleMesh::cuboid(Vector3::repeat(1.0));
        assert!((mesh_diameter(&cube).unwrap() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn two_point_diameter() {
        let m = TriangleMesh::new(vec![Point3::origin(), Point3::new(0.0, 0.0, 2.0)], vec![]).unwrap();
        assert_eq!(mesh_diameter(&m).unwrap(), 2.0);
    }

    #[test]
    fn degenerate_meshes_rejected() {
        let empty = TriangleMesh::new(vec![], vec![]).unwrap();
        assert!(matches!(mesh_diameter(&empty), Err(Error::DegenerateMesh(_))));
        let single = TriangleMesh::new(vec![Point3::origin()], vec![]).unwrap();
        assert!(matches!(mesh_diameter(&single), Err(Error::DegenerateMesh(_))));
    }

    #[test]
    fn random_mesh_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let verts: Vec<_> = (0..50)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random::<f64>()))
            .collect();
        let tris = (0..48).map(|i| [i, i + 1, i + 2]).collect();
        let m = TriangleMesh::new(verts.clone(), tris).unwrap();
        assert_eq!(mesh_diameter(&m).unwrap(), brute_force_diameter(&verts));
    }

    #[test]
    fn diameter_invariant_under_rigid_motion() {
        let m = TriangleMesh::ellipsoid(Vector3::new(0.05, 0.03, 0.02), 2);
        let pose = PoseSE3::from_axis_angle(
            &Unit::new_normalize(Vector3::new(0.3, -1.0, 0.2)),
            1.1,
            Vector3::new(0.4, -0.2, 1.5),
        );
        let d0 = mesh_diameter(&m).unwrap();
        let d1 = mesh_diameter(&m.transformed(&pose)).unwrap();
        assert!((d0 - d1).abs() < 1e-9);
    }

    #[test]
    fn bad_indices_rejected() {
        assert!(TriangleMesh::new(vec![Point3::origin(); 2], vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn cuboid_faces_point_outward() {
        let m = TriangleMesh::cuboid(Vector3::new(1.0, 2.0, 3.0));
        for i in 0..m.triangles().len() {
            let [a, b, c] = m.triangle(i);
            let centroid = (a.coords + b.coords + c.coords) / 3.0;
            assert!(m.face_normal(i).unwrap().dot(&centroid) > 0.0);
        }
        assert!((m.surface_area() - 22.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_faces_point_outward() {
        let m = TriangleMesh::sphere(1.0, 2);
        for i in 0..m.triangles().len() {
            let [a, b, c] = m.triangle(i);
            let centroid = (a.coords + b.coords + c.coords) / 3.0;
            assert!(m.face_normal(i).unwrap().dot(&centroid) > 0.0);
        }
    }
}
