use millable::grid::{GridDims, ScalarGrid};
use millable::conv::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 0.5;
    let d = GridDims::new(9, 7, 5, h, [0.0;3]).unwrap();
    let values: Vec<f64> = (0..d.len()).map(|_| if rng.gen::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect();
    let obstacle = ScalarGrid::from_values(d, values).unwrap();
    let td = GridDims::new(1, 1, 1, h, [-0.25, -0.25, -0.25]).unwrap();
    let delta = ScalarGrid::filled(td, 1.0);
    let fft = correlate_fft(&obstacle, &delta.reflect()).unwrap();
    let scale = h.powi(3);
    let mut bad = vec![];
    for i in 0..obstacle.dims.len() {
        let e = (fft.field.values[i] - obstacle.values[i] * scale).abs();
        if e > 1e-9 { bad.push((obstacle.dims.coords(i), fft.field.values[i]/scale, obstacle.values[i])); }
    }
    println!("bad {}/{}", bad.len(), d.len());
    for b in bad.iter().take(12) { println!("{:?}", b); }
}
