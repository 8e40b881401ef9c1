//! Mesh generators used by the scenarios, the check suite and the tests.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::Result;
use crate::field::Vec3;
use crate::mesh::EmbeddedMesh;

/// Vertices of a regular `n`-gon inscribed in the circle of radius `r`, starting on the x axis.
pub fn circle_positions(n: usize, r: f64) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / n as f64;
            Vec3::new(r * th.cos(), r * th.sin(), 0.0)
        })
        .collect()
}

/// Planar circle in R^2.
pub fn circle(n: usize, r: f64) -> Result<EmbeddedMesh> {
    EmbeddedMesh::curve(circle_positions(n, r), 2)
}

/// Planar ellipse with semi-axes `a`, `b`, sampled uniformly in the angle parameter.
pub fn ellipse(n: usize, a: f64, b: f64) -> Result<EmbeddedMesh> {
    let p = (0..n)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / n as f64;
            Vec3::new(a * th.cos(), b * th.sin(), 0.0)
        })
        .collect();
    EmbeddedMesh::curve(p, 2)
}

/// Non-planar closed space curve `(cos t, sin t, 0.3 sin 2t)`, used for the codimension-2 case.
pub fn trefoil_like(n: usize) -> Result<EmbeddedMesh> {
    let p = (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            Vec3::new(t.cos(), t.sin(), 0.3 * (2.0 * t).sin())
        })
        .collect();
    EmbeddedMesh::curve(p, 3)
}

/// Unit icosahedron with outward-oriented faces.
pub fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let p = raw.iter().map(|&(x, y, z)| Vec3::new(x, y, z).normalize()).collect();
    let t = vec![
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
    (p, t)
}

/// Raw positions and faces of a subdivided icosahedron projected onto the sphere of radius `r`.
pub fn icosphere_data(subdivisions: usize, r: f64) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let (mut p, mut t) = icosahedron();
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(t.len() * 4);
        let mut mid = |a: usize, b: usize, p: &mut Vec<Vec3>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                p.push(((p[a] + p[b]) * 0.5).normalize());
                p.len() - 1
            })
        };
        for &[a, b, c] in &t {
            let ab = mid(a, b, &mut p);
            let bc = mid(b, c, &mut p);
            let ca = mid(c, a, &mut p);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        t = next;
    }
    for x in &mut p {
        *x *= r;
    }
    (p, t)
}

/// Icosphere mesh; subdivision 3 has 642 vertices.
pub fn icosphere(subdivisions: usize, r: f64) -> Result<EmbeddedMesh> {
    let (p, t) = icosphere_data(subdivisions, r);
    EmbeddedMesh::surface(p, t)
}
