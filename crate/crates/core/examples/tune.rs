use jointherm_core::dataset::*;
use jointherm_core::mat::Mat;
use jointherm_core::network::*;
use jointherm_core::training::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use std::path::PathBuf;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let forget_bias: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(300);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let data: String = args.get(4).cloned().unwrap_or("/tmp/smoke/full5".into());
    let hidden: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(32);
    let dropout: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let dir = PathBuf::from(data);
    let selection = FeatureSelection::default();
    let mut sequences = Vec::new();
    for i in 0..18 {
        let p = dir.join(format!("traj_{i:02}.csv"));
        let records = read_records(&p).unwrap();
        sequences.push(Sequence {
            id: format!("traj_{i:02}"),
            inputs: select_features(&records, &selection).unwrap(),
            targets: target_matrix(&records),
        });
    }
    let unseen_ids = vec!["traj_16".to_string(), "traj_17".to_string()];
    let (seen, unseen) = split_seen_unseen(sequences, &unseen_ids).unwrap();

    let mut network = NetworkConfig::with_input(7);
    network.lstm_hidden = hidden;
    network.dense_widths[0] = hidden;

    let normalization = Normalization {
        selection,
        input: compute_norm_stats_pooled(&seen.sequences.iter().map(|s| s.inputs.clone()).collect::<Vec<_>>()).unwrap(),
        target: compute_norm_stats_pooled(&seen.sequences.iter().map(|s| s.targets.clone()).collect::<Vec<_>>()).unwrap(),
    };
    let items: Vec<(Mat, Mat)> = seen.sequences.iter().map(|s| (
        normalize(&s.inputs, &normalization.input).unwrap(),
        normalize(&s.targets, &normalization.target).unwrap(),
    )).collect();
    let mut params = init_params(&network, 0).unwrap();
    params.lstm.forget_gate.bias = vec![forget_bias; hidden];
    let mut adam = AdamState::new(params.param_count(), lr);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        for &i in &order {
            let (x, y) = &items[i];
            let (pred, cache) = forward(&params, x, Dropout::Train { p: dropout, rng: &mut rng }).unwrap();
            let (loss, dloss) = mse_loss(&pred, y).unwrap();
            acc += loss;
            let grads = backward(&params, &cache, &dloss).unwrap();
            adam_step(&mut params, &grads, &mut adam).unwrap();
        }
        if (epoch + 1) % 100 == 0 {
            eprintln!("epoch {:4}: loss {:.4e}", epoch + 1, acc / items.len() as f64);
        }
    }
    use jointherm_core::evaluation::evaluate_model;
    let report = evaluate_model(&params, &normalization, &unseen, "x", "y").unwrap();
    for m in &report.aggregate {
        println!("joint {}: rmse {:.4} maxae {:.4}", m.joint, m.rmse, m.max_abs_error);
    }
}
