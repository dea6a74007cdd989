use denopt_core::model::{ModelSpec, SurrogateModel};
use denopt_core::synth::generate_dataset;
use denopt_core::trainer::{train, TrainConfig, perturb};
use denopt_core::losses::gdi_loss;
use rand::SeedableRng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
    let ds = generate_dataset(1, 16, 7).unwrap();
    let mol = &ds.molecules[0];
    let spec = ModelSpec::new(16, mol.features.len());
    let model = SurrogateModel::initialize(spec, 7).unwrap();
    let cfg = TrainConfig { epochs, batch_size: 16, adam_lr: lr, seed: 7, ..TrainConfig::default() };
    let out = train(&ds, model, &cfg).unwrap();

    // Field along the ray from p* through p̄ and at random perturbations.
    let dir = (&mol.dsad - &mol.ground_state).normalize();
    println!("{:>8} {:>10} {:>10} {:>10}", "t", "lam|g|/d", "cos(g,d)", "gdi");
    for &t in &[0.001, 0.005, 0.01, 0.02, 0.05, 0.08, 0.15] {
        let p = &mol.ground_state + &dir * t;
        let g = out.model.input_gradient(mol, &p);
        let d = &p - &mol.ground_state;
        let cos = g.dot(&d) / (g.norm() * d.norm());
        let gdi = gdi_loss(&p, &mol.ground_state, &g, 0.9, 0.1);
        println!("{t:8.3} {:10.4} {cos:10.4} {gdi:10.6}", 0.1 * g.norm() / t);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let mut losses = Vec::new();
    for _ in 0..200 {
        let p = perturb(&mol.ground_state, &mut rng, 0.05, 0.05);
        let g = out.model.input_gradient(mol, &p);
        losses.push(gdi_loss(&p, &mol.ground_state, &g, 0.9, 0.1));
    }
    losses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("fresh-perturbation gdi: min {:.5} med {:.5} p90 {:.5} max {:.5}",
        losses[0], losses[100], losses[180], losses[199]);
    // cache state
    if let Some(c) = out.cache.get(&mol.id) {
        println!("cache entry distance to p*: {:.5}", (c - &mol.ground_state).norm());
    }
}
