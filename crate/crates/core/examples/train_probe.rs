use denopt_core::basis::{density_l2_error, overlap_matrix};
use denopt_core::denopt::{optimize, OptimizerConfig, Termination};
use denopt_core::model::{ModelSpec, SurrogateModel};
use denopt_core::synth::generate_dataset;
use denopt_core::trainer::{train, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(50);
    let batch: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(16);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let hidden: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(64);

    let n_mol: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(64);
    let ds = generate_dataset(n_mol, 16, 7).unwrap();
    let spec = ModelSpec::new(16, ds.molecules[0].features.len()).with_hidden(vec![hidden, hidden]);
    let model = SurrogateModel::initialize(spec, 7).unwrap();
    let cfg = TrainConfig { epochs, batch_size: batch, adam_lr: lr, seed: 7, ..TrainConfig::default() };

    let t0 = Instant::now();
    let out = train(&ds, model, &cfg).unwrap();
    let train_time = t0.elapsed();
    for e in (0..epochs).step_by(5).chain([epochs-1]) {
        let contr: Vec<f64> = out.log.records.iter().filter(|r| r.epoch == e).map(|r| r.mean_contraction).collect();
        let mc = contr.iter().sum::<f64>() / contr.len() as f64;
        eprintln!("epoch {e:3}: loss {:.6}  mean_contraction {:.4}", out.log.epoch_mean_loss(e), mc);
    }

    let mut ratios = Vec::new();
    let mut stopped = 0;
    let mut grad_at_dsad = Vec::new();
    let opt_cfg = OptimizerConfig::default();
    for mol in &ds.molecules {
        let s = overlap_matrix(&mol.basis);
        let init_err = density_l2_error(&(&mol.dsad - &mol.ground_state), &s);
        let traj = optimize(&out.model, mol, &opt_cfg).unwrap();
        let fin_err = density_l2_error(&(traj.final_coeffs() - &mol.ground_state), &s);
        ratios.push(fin_err / init_err);
        grad_at_dsad.push(out.model.input_gradient(mol, &mol.dsad).norm());
        if traj.terminated_by == Termination::StopTol { stopped += 1; }
    }
    ratios.sort_by(|a,b| a.partial_cmp(b).unwrap());
    grad_at_dsad.sort_by(|a,b| a.partial_cmp(b).unwrap());
    println!("train time: {:.1?}", train_time);
    println!("err ratio  min {:.4} med {:.4} max {:.4}", ratios[0], ratios[n_mol/2], ratios[n_mol-1]);
    println!("|grad| at dsad: min {:.2e} med {:.2e} max {:.2e}", grad_at_dsad[0], grad_at_dsad[n_mol/2], grad_at_dsad[n_mol-1]);
    println!("stop_tol fraction: {}/{}", stopped, n_mol);
    let mut cache_d = Vec::new();
    for mol in &ds.molecules {
        if let Some(c) = out.cache.get(&mol.id) {
            cache_d.push((c - &mol.ground_state).norm());
        }
    }
    cache_d.sort_by(|a,b| a.partial_cmp(b).unwrap());
    if !cache_d.is_empty() {
        println!("cache dist to p*: min {:.4} med {:.4} max {:.4} (n={})",
            cache_d[0], cache_d[cache_d.len()/2], cache_d[cache_d.len()-1], cache_d.len());
    }
    // trajectory-from-dsad detail for 3 molecules
    for mol in ds.molecules.iter().take(3) {
        let traj = optimize(&out.model, mol, &opt_cfg).unwrap();
        let n = traj.steps.len();
        let d0 = traj.steps[0].dist_to_gs;
        let dend = traj.steps[n-1].dist_to_gs;
        println!("{}: steps {} d0 {:.4} dfinal {:.4} gdi0 {:.5} terminated {:?}",
            mol.id, traj.steps[n-1].index, d0, dend, traj.steps[0].gdi_loss, traj.terminated_by);
    }
}
