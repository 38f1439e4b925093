use aasist_core::train::{synth_dataset, TrainConfig, Trainer};

fn violations(batch: &[usize]) -> (usize, Vec<f64>) {
    let cfg = TrainConfig { lr: 1e-5, lr_min: 1e-5, ..TrainConfig::default() };
    let data = synth_dataset(cfg.seed, cfg.n_per_class);
    let mut tr = Trainer::new(cfg, &data).unwrap();
    let mut losses = Vec::with_capacity(20);
    for _ in 0..20 {
        losses.push(tr.train_step(batch).unwrap());
    }
    let v = losses.windows(2).filter(|w| w[1] > w[0]).count();
    (v, losses)
}

#[test]
fn descent_variants() {
    let cfg = TrainConfig { lr: 1e-5, lr_min: 1e-5, ..TrainConfig::default() };
    let data = synth_dataset(cfg.seed, cfg.n_per_class);
    let mut tr = Trainer::new(cfg.clone(), &data).unwrap();
    let shuffled = tr.next_batch();
    let labels: Vec<usize> = shuffled.iter().map(|&i| data.labels[i]).collect();
    println!("shuffled batch {shuffled:?} labels {labels:?}");

    let (v1, l1) = violations(&shuffled);
    println!("shuffled:   {v1} violations  {l1:?}");
    let seq: Vec<usize> = (0..8).collect();
    let (v2, l2) = violations(&seq);
    println!("sequential: {v2} violations  {l2:?}");
}
