//! Points, triangle meshes and axis-aligned boxes.

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: Vector3<f64>,
    /// Linear RGB in `[0, 1]`.
    pub color: [f64; 3],
}

impl ColoredPoint {
    pub fn new(position: Vector3<f64>, color: [f64; 3]) -> Self {
        ColoredPoint { position, color }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub colors: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn validate(&self) -> Result<()> {
        if self.colors.len() != self.vertices.len() {
            return Err(Error::invalid("mesh: one color per vertex required"));
        }
        let n = self.vertices.len() as u32;
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&v| v >= n)) {
            return Err(Error::invalid(format!("mesh: face {f:?} references a missing vertex")));
        }
        Ok(())
    }

    pub fn triangle(&self, face: usize) -> [Vector3<f64>; 3] {
        let f = self.faces[face];
        [self.vertices[f[0] as usize], self.vertices[f[1] as usize], self.vertices[f[2] as usize]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn face_centroid(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(face);
        (a + b + c) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Keeps the listed faces and drops vertices no longer referenced.
    /// Keeps the accepted faces and the vertices they use, both in their
    /// original order.
    pub fn with_faces(&self, keep: impl Fn(usize) -> bool) -> Mesh {
        let kept: Vec<usize> = (0..self.faces.len()).filter(|&f| keep(f)).collect();
        let mut used = vec![false; self.vertices.len()];
        for &f in &kept {
            for &v in &self.faces[f] {
                used[v as usize] = true;
            }
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut out = Mesh::default();
        for (v, _) in used.iter().enumerate().filter(|(_, u)| **u) {
            remap[v] = out.vertices.len() as u32;
            out.vertices.push(self.vertices[v]);
            out.colors.push(self.colors[v]);
        }
        out.faces = kept.iter().map(|&f| self.faces[f].map(|v| remap[v as usize])).collect();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Aabb { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Aabb::new(first, first);
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Cube with the same minimum corner and side equal to the largest extent.
    pub fn cubified(&self) -> Aabb {
        let side = self.extent().max();
        Aabb::new(self.min, self.min + Vector3::repeat(side))
    }

    /// Grows each axis by `fraction` of its extent, split evenly on both sides.
    pub fn expanded(&self, fraction: [f64; 3]) -> Aabb {
        let e = self.extent();
        let pad = Vector3::new(e.x * fraction[0], e.y * fraction[1], e.z * fraction[2]) * 0.5;
        Aabb::new(self.min - pad, self.max + pad)
    }

    /// Child box for octant bits `x | y << 1 | z << 2` (bit set = upper half).
    pub fn octant(&self, index: u8) -> Aabb {
        let mid = self.center();
        let mut min = self.min;
        let mut max = mid;
        for axis in 0..3 {
            if index >> axis & 1 == 1 {
                min[axis] = mid[axis];
                max[axis] = self.max[axis];
            }
        }
        Aabb::new(min, max)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.min.x, self.min.y, self.min.z, self.max.x, self.max.y, self.max.z]
    }

    pub fn from_array(a: [f64; 6]) -> Aabb {
        Aabb::new(Vector3::new(a[0], a[1], a[2]), Vector3::new(a[3], a[4], a[5]))
    }
}
