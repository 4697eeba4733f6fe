use nacs_core::dns::{
    architecture_pass, derive_network, dns_epoch, draw_noise, forward_mixed, mixing_weights, sample_networks,
    train_step_weights, update_alpha, AlphaParams, DnsConfig, DnsState, SampleMode, Split, SuperNet, SyntheticTask,
};
use nacs_core::optim::{Adam, Sgd};
use nacs_core::rng::stream;
use nacs_core::workload::{BlockChoice, LayerSlot, NetworkSpace};
use rand::Rng;

fn batch(n: usize, dim: usize, classes: usize, seed: u64) -> Split {
    let mut rng = stream(seed, &[]);
    Split {
        dim,
        x: (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        y: (0..n).map(|_| rng.random_range(0..classes)).collect(),
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn one_hot_alpha_forwards_the_chosen_op() {
    let net = SuperNet::new(&[vec![Some(3), Some(0), Some(5)]], 4, 2, 1).unwrap();
    let x = [0.3, -0.2, 0.9, 0.1];
    let mut rng = stream(2, &[]);
    for k in 0..3 {
        let mut row = vec![-1e9; 3];
        row[k] = 1e9;
        let out = forward_mixed(&net, 0, &x, &row, 1.0, &mut rng, SampleMode::Relaxed).unwrap();
        assert_close(&out, &net.op_forward(0, k, &x).unwrap(), 1e-12);
    }
}

#[test]
fn identical_candidates_mix_to_their_common_output() {
    let net = SuperNet::new(&[vec![Some(4), Some(4), Some(4)]], 4, 2, 3).unwrap();
    let x = [1.0, -0.5, 0.25, 0.0];
    let common = net.op_forward(0, 0, &x).unwrap();
    let mut rng = stream(4, &[]);
    for _ in 0..20 {
        let row: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let out = forward_mixed(&net, 0, &x, &row, 0.7, &mut rng, SampleMode::Relaxed).unwrap();
        assert_close(&out, &common, 1e-12);
    }
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let mut net = SuperNet::new(&[vec![Some(3), Some(0)], vec![Some(2), Some(4)]], 4, 3, 5).unwrap();
    let before = net.omega.clone();
    let alpha = AlphaParams::zeros(2, 2);
    let mut opt = Sgd::new(0.0, 0.9, net.omega.len());
    let b = batch(8, 4, 3, 6);
    let mut rng = stream(7, &[]);
    for _ in 0..5 {
        train_step_weights(&mut net, &alpha, &b, &mut opt, 1.0, SampleMode::Relaxed, &mut rng).unwrap();
    }
    assert_eq!(net.omega, before);
}

#[test]
fn separable_task_is_learned() {
    let task = SyntheticTask {
        input_dim: 4,
        num_classes: 2,
        clusters_per_class: 1,
        center_scale: 2.0,
        noise_std: 0.3,
        train_size: 256,
        val_size: 64,
        seed: 3,
    };
    let data = task.generate().unwrap();
    let mut net = SuperNet::new(&[vec![Some(4)]], 4, 2, 8).unwrap();
    let alpha = AlphaParams::zeros(1, 1);
    let mut opt = Sgd::new(0.1, 0.9, net.omega.len());
    let mut rng = stream(9, &[]);
    for step in 0..200 {
        let idx: Vec<usize> = (0..32).map(|i| (step * 32 + i) % data.train.len()).collect();
        train_step_weights(&mut net, &alpha, &data.train.gather(&idx), &mut opt, 1.0, SampleMode::Relaxed, &mut rng)
            .unwrap();
    }
    let p = net.pass(&[vec![1.0]], &data.train, false).unwrap();
    assert!(p.correct as f64 / data.train.len() as f64 > 0.95, "{}", p.correct);
}

#[test]
fn zero_lambda_is_the_plain_validation_step() {
    let net = SuperNet::new(&[vec![Some(3), Some(0), Some(2)], vec![Some(2), Some(4), Some(1)]], 4, 3, 10).unwrap();
    let b = batch(16, 4, 3, 11);
    let table = vec![vec![5.0, 0.0, 2.0], vec![1.0, 7.0, 3.0]];
    let mut alpha = AlphaParams::zeros(2, 3);
    alpha.logits[0] = vec![0.3, -0.1, 0.5];
    let noise = draw_noise(&alpha, &mut stream(12, &[]));
    let with =
        architecture_pass(&net, &alpha, &b, &noise, 1.5, SampleMode::Relaxed, Some((&table, 0.0)), true).unwrap();
    let without = architecture_pass(&net, &alpha, &b, &noise, 1.5, SampleMode::Relaxed, None, true).unwrap();
    assert_eq!(with.grad_alpha, without.grad_alpha);
    assert_eq!(with.loss, without.ce);

    let other = vec![vec![0.0; 3]; 2];
    let mut a1 = alpha.clone();
    let mut a2 = alpha.clone();
    let mut o1 = Adam::new(0.05, 6);
    let mut o2 = Adam::new(0.05, 6);
    update_alpha(&net, &mut a1, &b, &table, 0.0, &mut o1, 1.5, SampleMode::Relaxed, &mut stream(13, &[])).unwrap();
    update_alpha(&net, &mut a2, &b, &other, 0.0, &mut o2, 1.5, SampleMode::Relaxed, &mut stream(13, &[])).unwrap();
    assert_eq!(a1, a2);
}

#[test]
fn huge_lambda_moves_to_the_cheapest_candidate() {
    // equal widths start identical, so the validation loss cannot tell them apart
    let net = SuperNet::new(&[vec![Some(3), Some(3), Some(3)]], 4, 2, 14).unwrap();
    let b = batch(16, 4, 2, 15);
    let table = vec![vec![5.0, 1.0, 3.0]];
    let mut alpha = AlphaParams::zeros(1, 3);
    let mut opt = Adam::new(0.05, 3);
    let mut rng = stream(16, &[]);
    for _ in 0..100 {
        update_alpha(&net, &mut alpha, &b, &table, 1e3, &mut opt, 1.0, SampleMode::Relaxed, &mut rng).unwrap();
    }
    let row = &alpha.logits[0];
    assert!(row[1] > row[0] && row[1] > row[2], "{row:?}");
}

#[test]
fn shifting_an_alpha_row_keeps_the_weights() {
    let mask = vec![vec![true, true, false, true]];
    let mut alpha = AlphaParams::zeros(1, 4);
    alpha.logits[0] = vec![0.2, -1.0, 3.0, 0.7];
    let noise = draw_noise(&alpha, &mut stream(17, &[]));
    let (_, a) = mixing_weights(&alpha, &mask, &noise, 0.8, SampleMode::Relaxed).unwrap();
    alpha.logits[0].iter_mut().for_each(|v| *v += 12.5);
    let (_, b) = mixing_weights(&alpha, &mask, &noise, 0.8, SampleMode::Relaxed).unwrap();
    assert_close(&a[0], &b[0], 1e-12);
}

fn two_way_space() -> NetworkSpace {
    NetworkSpace {
        input_channels: 8,
        input_spatial: 4,
        layers: vec![LayerSlot { out_channels: 8, stride: 1 }],
        candidates: vec![BlockChoice::new(3, 3, 1), BlockChoice::new(1, 3, 1)],
    }
}

#[test]
fn uniform_alpha_samples_both_candidates_equally() {
    let space = two_way_space();
    let alpha = AlphaParams::for_space(&space);
    let n = 10_000;
    let nets = sample_networks(&alpha, &space, n, 1.0, &mut stream(18, &[])).unwrap();
    let zeros = nets.iter().filter(|d| d.choices[0] == 0).count();
    let sd = (0.25 / n as f64).sqrt();
    assert!((zeros as f64 / n as f64 - 0.5).abs() <= 3.0 * sd, "{zeros}");
}

#[test]
fn zero_lambda_concentrates_on_the_better_candidate() {
    // skip cannot separate the clusters; the op can
    let space = NetworkSpace {
        input_channels: 8,
        input_spatial: 4,
        layers: vec![LayerSlot { out_channels: 8, stride: 1 }],
        candidates: vec![BlockChoice::skip(), BlockChoice::new(3, 6, 1)],
    };
    let task = SyntheticTask { num_classes: 2, clusters_per_class: 4, ..SyntheticTask::default() };
    let data = task.generate().unwrap();
    let mut wins = 0;
    for seed in 0..20 {
        let cfg = DnsConfig { seed, ..DnsConfig::default() };
        let mut state = DnsState::new(&space, &task, &cfg).unwrap();
        for epoch in 0..10 {
            dns_epoch(&mut state, &data, &cfg, epoch, None).unwrap();
        }
        if derive_network(&state.alpha, &space).unwrap().choices == vec![1] {
            wins += 1;
        }
    }
    assert!(wins > 10, "{wins}/20");
}
