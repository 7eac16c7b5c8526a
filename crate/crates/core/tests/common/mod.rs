//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use cutform::isovol::CutGraph;
use cutform::{LevelSet, Mesh2D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Independent labelling: union-find over same-state graph edges.
pub fn oracle(g: &CutGraph) -> Vec<usize> {
    let n = g.num_vertices();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for v in 0..n {
        for &w in g.neighbours(v) {
            if g.state(v) == g.state(w) {
                let (a, b) = (find(&mut parent, v), find(&mut parent, w));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    (0..n).map(|v| find(&mut parent, v)).collect()
}

/// Labels agree up to a bijection.
pub fn bijective(a: &[usize], b: &[usize]) -> bool {
    let mut ab = HashMap::new();
    let mut ba = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
}

pub fn random_levelset(mesh: &Mesh2D, rng: &mut ChaCha8Rng) -> LevelSet {
    let bumps: Vec<([f64; 2], f64, f64)> = (0..rng.gen_range(2..7))
        .map(|_| ([rng.gen(), rng.gen()], rng.gen_range(0.05..0.15), rng.gen_range(-1.0..1.0)))
        .collect();
    let shift = rng.gen_range(-0.2..0.2);
    LevelSet::from_fn(mesh, |p| {
        shift
            + bumps
                .iter()
                .map(|(c, s, a)| a * (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (2.0 * s * s)).exp())
                .sum::<f64>()
    })
    .unwrap()
}

pub fn random_partition(mesh: &Mesh2D, rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
    let np = rng.gen_range(2..=8);
    let seeds: Vec<[f64; 2]> = (0..np).map(|_| [rng.gen(), rng.gen()]).collect();
    let parts = (0..mesh.num_cells())
        .map(|c| {
            let q = mesh.cell_centroid(c);
            (0..np)
                .min_by(|&i, &j| {
                    let d = |s: [f64; 2]| (q[0] - s[0]).hypot(q[1] - s[1]);
                    d(seeds[i]).total_cmp(&d(seeds[j]))
                })
                .unwrap()
        })
        .collect();
    (parts, np)
}
