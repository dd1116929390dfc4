use lanekit_core::ABSENT;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Lane-like instances: well separated ground truth, noisy predictions,
/// some lanes missing or spurious.
pub fn structured_instance(r: &mut ChaCha8Rng, h: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n_gt = r.random_range(0..=4);
    let mut base = 50.0;
    let mut gt = Vec::new();
    for _ in 0..n_gt {
        base += r.random_range(80.0..300.0);
        let slope = r.random_range(-1.5..1.5);
        let top = r.random_range(0..h / 2);
        gt.push((0..h).map(|j| if j < top { ABSENT } else { base + slope * 10.0 * j as f64 }).collect::<Vec<_>>());
    }
    let mut pred: Vec<Vec<f64>> = gt
        .iter()
        .filter_map(|l| {
            if !r.random_bool(0.85) {
                return None;
            }
            Some(
                l.iter()
                    .map(|&x| if x == ABSENT || r.random_bool(0.1) { ABSENT } else { x + r.random_range(-30.0..30.0) })
                    .collect(),
            )
        })
        .collect();
    while pred.len() < 4 && r.random_bool(0.3) {
        let x = r.random_range(0.0..1280.0);
        pred.push((0..h).map(|j| x + r.random_range(-5.0..5.0) + j as f64).collect());
    }
    // predictions come in arbitrary order
    for i in (1..pred.len()).rev() {
        pred.swap(i, r.random_range(0..=i));
    }
    (gt, pred)
}
