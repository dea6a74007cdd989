use denopt_core::model::{ModelSpec, SurrogateModel};
use denopt_core::synth::generate_dataset;
use denopt_core::trainer::{train, SamplingMode, TrainConfig, perturb};
use denopt_core::losses::gdi_loss;
use rand::SeedableRng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_mol: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(400);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let batch: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(4);
    let ds = generate_dataset(n_mol, 16, 7).unwrap();
    let spec = ModelSpec::new(16, ds.molecules[0].features.len());
    let model = SurrogateModel::initialize(spec, 7).unwrap();
    let cfg = TrainConfig { epochs, batch_size: batch, adam_lr: lr, seed: 7,
        mode: SamplingMode::Static, ..TrainConfig::default() };
    let out = train(&ds, model, &cfg).unwrap();
    for e in (0..epochs).step_by((epochs/10).max(1)).chain([epochs-1]) {
        println!("epoch {e:4}: loss {:.6}", out.log.epoch_mean_loss(e));
    }
    {
        use denopt_core::basis::{density_l2_error, overlap_matrix};
        use denopt_core::denopt::{optimize, OptimizerConfig, Termination};
        let mut ratios = Vec::new();
        let mut stopped = 0;
        let opt_cfg = OptimizerConfig::default();
        for mol in &ds.molecules {
            let s_m = overlap_matrix(&mol.basis);
            let init_err = density_l2_error(&(&mol.dsad - &mol.ground_state), &s_m);
            let traj = optimize(&out.model, mol, &opt_cfg).unwrap();
            let fin_err = density_l2_error(&(traj.final_coeffs() - &mol.ground_state), &s_m);
            ratios.push(fin_err / init_err);
            if traj.terminated_by == Termination::StopTol { stopped += 1; }
        }
        ratios.sort_by(|a,b| a.partial_cmp(b).unwrap());
        println!("err ratio min {:.4} med {:.4} max {:.4}; stop {}/{}",
            ratios[0], ratios[ratios.len()/2], ratios[ratios.len()-1], stopped, ds.molecules.len());
    }
    // fresh-sample GDI after training
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let mut tot = 0.0; let mut nz = 0;
    let n_test = 500;
    for _ in 0..n_test {
        for mol in &ds.molecules {
            let p = perturb(&mol.ground_state, &mut rng, 0.05, 0.05);
            let g = out.model.input_gradient(mol, &p);
            let l = gdi_loss(&p, &mol.ground_state, &g, 0.9, 0.1);
            tot += l; if l > 0.0 { nz += 1; }
        }
    }
    println!("fresh-sample mean gdi {:.6}, violation rate {:.3}", tot / (n_test * n_mol) as f64, nz as f64 / (n_test * n_mol) as f64);
}
// evaluation of optimize-from-dsad quality appended below in main2 (unused)
