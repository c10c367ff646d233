use lhs_cli::synth::{synth_graph, SynthSpec};
use lhs_core::attack::{poison_greedy, evade_injected, evaluate_under_attack, PipelineMode};
use lhs_core::encoder::{lhs_pipeline, vanilla_gcn_pipeline, PipelineConfig, TrainConfig};
use lhs_core::inducer::{InducerConfig, SolverKind};
use lhs_core::refiner::RefineConfig;

fn cfg(sigma: f64) -> PipelineConfig {
    PipelineConfig {
        inducer: InducerConfig {
            lambda1: 0.8, sigma, rounds: 2,
            solver: SolverKind::ExactReducedRidge,
            ..Default::default()
        },
        refine: RefineConfig {
            epochs: 80, patience: 20, hidden_dim: 32, embed_dim: 16,
            n_pos: 128, n_neg: 128, sigma, ..Default::default()
        },
        train: TrainConfig {
            epochs: 400, patience: 120, hidden_dim: 32, latent_dim: 16,
            lr: 0.005,
            ..Default::default()
        },
    }
}

fn main() {
    for (f, deg) in [(8usize, 12.0f64), (16, 16.0)] {
        println!("=== F={f} deg={deg}");
        let mut vp = vec![]; let mut lp = vec![]; let mut vi = vec![]; let mut li = vec![];
        let mut ehr2 = vec![];
        for seed in 1..=3u64 {
            let spec = SynthSpec {
                n_nodes: 800, classes: 4, feature_dim: f,
                target_homophily: 0.25, mean_degree: deg,
                feature_separation: 0.5, seed,
            };
            let ds = synth_graph(&spec).unwrap();
            let c = cfg(0.6);
            let vanilla = vanilla_gcn_pipeline(&ds.graph, &c, seed).unwrap();
            let lhs = lhs_pipeline(&ds.graph, &c, seed).unwrap();
            ehr2.push(lhs.rounds.last().unwrap().ehr_thresholded.unwrap_or(0.0));
            let pois = poison_greedy(&ds.graph, 0.25, seed + 100).unwrap();
            let v_p = vanilla_gcn_pipeline(&pois.graph, &c, seed).unwrap();
            let l_p = lhs_pipeline(&pois.graph, &c, seed).unwrap();
            vp.push(vanilla.test_accuracy - v_p.test_accuracy);
            lp.push(lhs.test_accuracy - l_p.test_accuracy);
            let inj = evade_injected(&ds.graph, &ds.graph.test_nodes(), 5, 0.9, seed + 200).unwrap();
            let vr = evaluate_under_attack(&vanilla, &ds.graph, &inj, PipelineMode::FrozenStructure).unwrap();
            let lr = evaluate_under_attack(&lhs, &ds.graph, &inj, PipelineMode::RefreshStructure).unwrap();
            vi.push(vr.degradation); li.push(lr.degradation);
            println!(
                "  s{seed}: van={:.3} lhs={:.3} ehr2={:.3} | pois v={:.3} l={:.3} | inj v={:.3} l={:.3}",
                vanilla.test_accuracy, lhs.test_accuracy, ehr2.last().unwrap(),
                vp.last().unwrap(), lp.last().unwrap(), vi.last().unwrap(), li.last().unwrap()
            );
        }
        let m = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        println!("  MEANS: ehr2={:.3} pois v={:.3} l={:.3} | inj v={:.3} l={:.3}",
                 m(&ehr2), m(&vp), m(&lp), m(&vi), m(&li));
    }
}
