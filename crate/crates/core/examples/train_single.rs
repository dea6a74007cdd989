use denopt_core::model::{ModelSpec, SurrogateModel};
use denopt_core::synth::generate_dataset;
use denopt_core::trainer::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(100);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
    let ds = generate_dataset(n, 16, 7).unwrap();
    let spec = ModelSpec::new(16, ds.molecules[0].features.len());
    let model = SurrogateModel::initialize(spec, 7).unwrap();
    let cfg = TrainConfig { epochs, batch_size: 1, adam_lr: lr, seed: 7, ..TrainConfig::default() };
    let out = train(&ds, model, &cfg).unwrap();
    for e in (0..epochs).step_by(epochs/10).chain([epochs-1]) {
        let contr: Vec<f64> = out.log.records.iter().filter(|r| r.epoch == e).map(|r| r.mean_contraction).collect();
        let mc = contr.iter().sum::<f64>() / contr.len() as f64;
        println!("epoch {e:4}: loss {:.6}  contraction {:.4}", out.log.epoch_mean_loss(e), mc);
    }
    // fixed-point quality
    for mol in ds.molecules.iter().take(3) {
        let g = out.model.input_gradient(mol, &mol.ground_state).norm();
        println!("mol {}: |grad| at p* = {:.3e}", mol.id, g);
    }
}
