//! Direction sets on the unit sphere: icospheres, Fibonacci lattices and the
//! 362-direction evaluation hemisphere.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    [v[0] / n, v[1] / n, v[2] / n]
}

pub fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Icosahedron refined by `subdivisions` rounds of edge bisection and
/// projected to the unit sphere: 12, 42, 162, 642, 2562, 10242 vertices.
pub fn icosphere(subdivisions: usize) -> Vec<[f64; 3]> {
    let t = (1.0 + libm::sqrt(5.0)) / 2.0;
    let mut verts: Vec<[f64; 3]> = [
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
    .into_iter()
    .map(normalize)
    .collect();
    let mut faces: Vec<[usize; 3]> = alloc::vec![
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
        let mut midpoints: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                verts.push(normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    verts
}

/// `n` points spread evenly over the upper hemisphere (z uniform in (0, 1)).
pub fn fibonacci_hemisphere(n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| {
            let z = (i as f64 + 0.5) / n as f64;
            let r = libm::sqrt(1.0 - z * z);
            let phi = GOLDEN_ANGLE * i as f64;
            [r * libm::cos(phi), r * libm::sin(phi), z]
        })
        .collect()
}

/// Map `v` to its representative in the closed upper hemisphere:
/// `z > 0`, or on the equator `y > 0`, or on the equator's axis `x ≥ 0`.
pub fn canonical(v: [f64; 3]) -> [f64; 3] {
    const TIE: f64 = 1e-12;
    let keep = if v[2].abs() > TIE {
        v[2] > 0.0
    } else if v[1].abs() > TIE {
        v[1] > 0.0
    } else {
        v[0] >= 0.0
    };
    if keep {
        v
    } else {
        [-v[0], -v[1], -v[2]]
    }
}

/// Indices of the first occurrence of each direction modulo sign.
pub fn antipodal_unique(dirs: &[[f64; 3]]) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for (i, d) in dirs.iter().enumerate() {
        let n = libm::sqrt(dot(d, d));
        let dup = keep.iter().any(|&j| {
            let e = &dirs[j];
            let m = libm::sqrt(dot(e, e));
            n > 0.0 && m > 0.0 && dot(d, e).abs() / (n * m) > 1.0 - 1e-9
        });
        if !dup {
            keep.push(i);
        }
    }
    keep
}

/// Fixed evaluation set for spherical-harmonic comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct Hemisphere {
    dirs: Vec<[f64; 3]>,
}

impl Hemisphere {
    pub fn directions(&self) -> &[[f64; 3]] {
        &self.dirs
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

pub const HEMISPHERE_POINTS: usize = 362;
const REPULSION_STEPS: usize = 60;
const REPULSION_STEP: f64 = 0.003;

/// 362 directions on the upper hemisphere, built deterministically: a
/// Fibonacci lattice relaxed by a fixed number of electrostatic repulsion
/// steps in which every point also repels its antipode's neighbours, then
/// folded onto the closed upper hemisphere.
pub fn make_hemisphere_362() -> Hemisphere {
    let n = HEMISPHERE_POINTS;
    let mut pts = fibonacci_hemisphere(n);
    let mut forces = alloc::vec![[0.0f64; 3]; n];
    for _ in 0..REPULSION_STEPS {
        for (i, f) in forces.iter_mut().enumerate() {
            let p = pts[i];
            let mut acc = [0.0; 3];
            for (j, q) in pts.iter().enumerate() {
                for sign in [1.0, -1.0] {
                    if sign > 0.0 && i == j {
                        continue;
                    }
                    let d = [p[0] - sign * q[0], p[1] - sign * q[1], p[2] - sign * q[2]];
                    let r2 = dot(&d, &d);
                    let inv = 1.0 / (r2 * libm::sqrt(r2));
                    acc[0] += d[0] * inv;
                    acc[1] += d[1] * inv;
                    acc[2] += d[2] * inv;
                }
            }
            let radial = dot(&acc, &p);
            *f = [acc[0] - radial * p[0], acc[1] - radial * p[1], acc[2] - radial * p[2]];
        }
        let scale = forces
            .iter()
            .flat_map(|f| f.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            break;
        }
        for (p, f) in pts.iter_mut().zip(&forces) {
            let k = REPULSION_STEP / scale;
            *p = normalize([p[0] + k * f[0], p[1] + k * f[1], p[2] + k * f[2]]);
        }
    }
    let dirs: Vec<[f64; 3]> = pts.into_iter().map(canonical).collect();
    assert_eq!(dirs.len(), HEMISPHERE_POINTS);
    Hemisphere { dirs }
}
