//! Ward agglomerative clustering used to initialise the mixture fits.

use crate::error::{Error, Result};

/// Larger inputs are clustered on an evenly spaced sample, then every point
/// joins the nearest sample-cluster centroid.
pub const MAX_AGGLOMERATION_POINTS: usize = 1000;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ward merges of `n` points (row-major, dimension `d`) via the
/// nearest-neighbour chain. Returns `(a, b, height)` triples, where cluster
/// `b` is absorbed into `a`.
fn ward_merges(points: &[f64], n: usize, d: usize) -> Vec<(usize, usize, f64)> {
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(&points[i * d..(i + 1) * d], &points[j * d..(j + 1) * d]);
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut remaining = n;
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("active cluster"));
        }
        loop {
            let a = chain[chain.len() - 1];
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            let (mut best, mut best_d) = match prev {
                Some(p) => (p, dist[a * n + p]),
                None => (usize::MAX, f64::INFINITY),
            };
            for c in 0..n {
                if active[c] && c != a && dist[a * n + c] < best_d {
                    best = c;
                    best_d = dist[a * n + c];
                }
            }
            if Some(best) == prev {
                break;
            }
            chain.push(best);
        }
        let b = chain.pop().expect("chain pair");
        let a = chain.pop().expect("chain pair");
        let (keep, gone) = (a.min(b), a.max(b));
        let h = dist[keep * n + gone];
        let (nk, ng) = (size[keep] as f64, size[gone] as f64);
        for c in 0..n {
            if active[c] && c != keep && c != gone {
                let nc = size[c] as f64;
                let v = ((nk + nc) * dist[keep * n + c] + (ng + nc) * dist[gone * n + c] - nc * h)
                    / (nk + ng + nc);
                dist[keep * n + c] = v;
                dist[c * n + keep] = v;
            }
        }
        size[keep] += size[gone];
        active[gone] = false;
        remaining -= 1;
        merges.push((keep, gone, h));
    }
    merges
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Cuts the Ward tree of the points at `g` groups.
fn ward_partition(points: &[f64], n: usize, d: usize, g: usize) -> Vec<usize> {
    let mut merges = ward_merges(points, n, d);
    // Ward heights are monotone along the tree, so applying merges in height
    // order reproduces the greedy agglomeration.
    merges.sort_by(|x, y| x.2.total_cmp(&y.2));
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b, _) in merges.iter().take(n - g) {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        parent[rb.max(ra)] = ra.min(rb);
    }
    relabel((0..n).map(|i| find(&mut parent, i)).collect())
}

/// Renumbers labels 0.. in order of first appearance.
fn relabel(raw: Vec<usize>) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    raw.into_iter()
        .map(|l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

fn centroids(points: &[f64], d: usize, labels: &[usize], g: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; d]; g];
    let mut counts = vec![0usize; g];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for k in 0..d {
            sums[l][k] += points[i * d + k];
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= c.max(1) as f64;
        }
    }
    sums
}

/// Splits the largest group in two: its medoid half and the rest.
fn split_largest(points: &[f64], d: usize, labels: &mut [usize], new_label: usize) {
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels.iter() {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let Some((&largest, _)) = counts.iter().max_by_key(|(l, c)| (**c, std::cmp::Reverse(**l))) else {
        return;
    };
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == largest).collect();
    if members.len() < 2 {
        return;
    }
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let medoid = *members
        .iter()
        .min_by(|&&a, &&b| {
            let da: f64 = members.iter().map(|&j| sq_dist(row(a), row(j))).sum();
            let db: f64 = members.iter().map(|&j| sq_dist(row(b), row(j))).sum();
            da.total_cmp(&db)
        })
        .expect("members");
    let mut by_distance: Vec<(f64, usize)> = members
        .iter()
        .map(|&i| (sq_dist(row(i), row(medoid)), i))
        .collect();
    by_distance.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    for &(_, i) in &by_distance[by_distance.len() / 2..] {
        labels[i] = new_label;
    }
}

/// Hard partition of `n` points into `g` groups by Ward agglomeration.
pub fn hierarchical_init(points: &[f64], d: usize, g: usize) -> Result<Vec<usize>> {
    let n = if d == 0 { 0 } else { points.len() / d };
    if g == 0 || g > n {
        return Err(Error::invalid(format!(
            "cannot form {g} groups from {n} points"
        )));
    }
    if g == 1 {
        return Ok(vec![0; n]);
    }
    let mut labels = if n <= MAX_AGGLOMERATION_POINTS {
        ward_partition(points, n, d, g)
    } else {
        let m = MAX_AGGLOMERATION_POINTS;
        let sample: Vec<usize> = (0..m).map(|i| i * n / m).collect();
        let mut sub = Vec::with_capacity(m * d);
        for &i in &sample {
            sub.extend_from_slice(&points[i * d..(i + 1) * d]);
        }
        let sub_labels = ward_partition(&sub, m, d, g);
        let centers = centroids(&sub, d, &sub_labels, g);
        (0..n)
            .map(|i| {
                let p = &points[i * d..(i + 1) * d];
                (0..g)
                    .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                    .expect("groups")
            })
            .collect()
    };
    // Duplicate centroids can leave groups empty.
    loop {
        let mut present = vec![false; g];
        for &l in &labels {
            present[l] = true;
        }
        match present.iter().position(|p| !p) {
            Some(empty) => {
                let before = labels.clone();
                split_largest(points, d, &mut labels, empty);
                if labels == before {
                    break;
                }
            }
            None => break,
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_blobs_are_separated() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let e = (i as f64 * 0.37).sin() * 0.3;
            pts.extend([e, -e]);
        }
        for i in 0..15 {
            let e = (i as f64 * 0.91).cos() * 0.3;
            pts.extend([10.0 + e, 10.0 - e]);
        }
        let labels = hierarchical_init(&pts, 2, 2).unwrap();
        assert!(labels[..20].iter().all(|&l| l == labels[0]));
        assert!(labels[20..].iter().all(|&l| l == labels[20]));
        assert_ne!(labels[0], labels[20]);
    }

    #[test]
    fn degenerate_group_counts() {
        let pts = [0.0, 1.0, 3.0, 7.0];
        assert_eq!(hierarchical_init(&pts, 1, 1).unwrap(), vec![0; 4]);
        let mut singletons = hierarchical_init(&pts, 1, 4).unwrap();
        singletons.sort_unstable();
        assert_eq!(singletons, vec![0, 1, 2, 3]);
        assert!(hierarchical_init(&pts, 1, 5).is_err());
    }

    #[test]
    fn ward_cut_on_a_line() {
        // Heights: {0,1} at 1, then {3} joins far later than {7,8}.
        let pts = [0.0, 1.0, 7.0, 8.0, 3.0];
        let labels = hierarchical_init(&pts, 1, 3).unwrap();
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[2], labels[3]);
        assert_ne!(labels[4], labels[0]);
        assert_ne!(labels[4], labels[2]);
    }

    #[test]
    fn duplicates_still_give_every_group() {
        let pts = vec![1.0; 1500];
        let labels = hierarchical_init(&pts, 1, 3).unwrap();
        for g in 0..3 {
            assert!(labels.contains(&g));
        }
    }
}
