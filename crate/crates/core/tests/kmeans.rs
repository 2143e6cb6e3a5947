use diffaudit_core::attacks::{inertia, kmeans, squared_distance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Recomputes the objective directly from the definition.
fn brute_inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize]) -> f64 {
    let mut total = 0.0;
    for (p, &a) in points.iter().zip(assign) {
        for (x, c) in p.iter().zip(&centroids[a]) {
            total += (x - c) * (x - c);
        }
    }
    total
}

#[test]
fn inertia_never_increases_across_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for case in 0..100 {
        let n = rng.random_range(5..60);
        let k = rng.random_range(1..=n.min(8));
        let d = rng.random_range(1..6);
        let pts = random_points(&mut rng, n, d);
        let r = kmeans(&pts, k, 100, case).unwrap();
        for w in r.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "case {case}: {:?}", r.inertia_history);
        }
        let direct = brute_inertia(&pts, &r.centroids, &r.assignments);
        assert!((direct - r.inertia).abs() <= 1e-9 * (1.0 + direct), "case {case}");
        assert!((inertia(&pts, &r.centroids, &r.assignments) - direct).abs() <= 1e-9 * (1.0 + direct));
        // Every point sits with its nearest centroid once converged.
        if r.converged {
            for (p, &a) in pts.iter().zip(&r.assignments) {
                let best = r.centroids.iter().map(|c| squared_distance(p, c)).fold(f64::INFINITY, f64::min);
                assert!(squared_distance(p, &r.centroids[a]) <= best + 1e-12);
            }
        }
    }
}

#[test]
fn two_blobs_reach_the_brute_force_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let mut pts = Vec::new();
    for i in 0..12 {
        let centre = if i < 6 { 0.0 } else { 10.0 };
        pts.push(vec![centre + rng.random_range(-0.5..0.5), centre + rng.random_range(-0.5..0.5)]);
    }
    // Exhaustive search over all 2-partitions.
    let mut best = f64::INFINITY;
    for bits in 1u32..(1 << pts.len()) - 1 {
        let assign: Vec<usize> = (0..pts.len()).map(|i| ((bits >> i) & 1) as usize).collect();
        let mut cents = vec![vec![0.0; 2]; 2];
        let mut counts = [0.0; 2];
        for (p, &a) in pts.iter().zip(&assign) {
            counts[a] += 1.0;
            for j in 0..2 {
                cents[a][j] += p[j];
            }
        }
        for a in 0..2 {
            for j in 0..2 {
                cents[a][j] /= counts[a];
            }
        }
        best = best.min(brute_inertia(&pts, &cents, &assign));
    }
    let r = kmeans(&pts, 2, 100, 5).unwrap();
    assert!(r.converged);
    assert!((r.inertia - best).abs() < 1e-9, "{} vs {best}", r.inertia);
    assert!(r.assignments[..6].iter().all(|&a| a == r.assignments[0]));
    assert!(r.assignments[6..].iter().all(|&a| a != r.assignments[0]));
}

#[test]
fn same_seed_same_clustering() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let pts = random_points(&mut rng, 40, 3);
    let a = kmeans(&pts, 5, 100, 9).unwrap();
    let b = kmeans(&pts, 5, 100, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn one_cluster_per_point_has_zero_inertia() {
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    let pts = random_points(&mut rng, 7, 4);
    let r = kmeans(&pts, 7, 100, 1).unwrap();
    assert_eq!(r.inertia, 0.0);
    let mut seen = r.assignments.clone();
    seen.sort();
    assert_eq!(seen, (0..7).collect::<Vec<_>>());
}

#[test]
fn rejects_bad_input() {
    let pts = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    assert!(kmeans(&pts, 0, 10, 0).is_err());
    assert!(kmeans(&pts, 3, 10, 0).is_err());
    assert!(kmeans(&[vec![0.0], vec![1.0, 2.0]], 1, 10, 0).is_err());
}
