use dmvc::deepclust::{dec_finetune, idec_train, DecConfig, IdecConfig};
use dmvc::flatclust::{kmeans, KMeansConfig};
use dmvc::mvnet::{MvNetModel, MvNetSpec};
use dmvc::nnet::{
    max_relative_error, numeric_gradient, train_autoencoder, MlpModel, MlpSpec, MseLoss,
    Parameters, TrainConfig,
};
use dmvc::{nmi, seed, Partition};
use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rng: &mut seed::Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// `per` samples around each center with unit noise; labels in blob order.
fn blobs(centers: &[Vec<f64>], per: usize, seed: u64) -> (Array2<f64>, Partition) {
    let mut rng = seed::rng(seed);
    let d = centers[0].len();
    let mut data = Array2::zeros((centers.len() * per, d));
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for i in 0..per {
            let noise = gaussian(&mut rng, 1, d);
            for j in 0..d {
                data[[c * per + i, j]] = center[j] + noise[[0, j]];
            }
            labels.push(c);
        }
    }
    (data, Partition::from_assignments(labels).unwrap())
}

fn small_idec() -> IdecConfig {
    let train = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 32,
        epochs: 200,
        ..TrainConfig::default()
    };
    IdecConfig {
        pretrain: train.clone(),
        finetune: TrainConfig { epochs: 20, ..train },
        dec: DecConfig::default(),
    }
}

#[test]
fn branches_do_not_see_other_views() {
    let spec = MvNetSpec::from_profile(&[3, 4], &[6], &[5], 2).unwrap();
    let net = MvNetModel::init(&spec, 9);
    let mut rng = seed::rng(1);
    let a = gaussian(&mut rng, 5, 3);
    let b = gaussian(&mut rng, 5, 4);
    let b2 = gaussian(&mut rng, 5, 4);
    let e1 = net.branch_embeddings(&[a.view(), b.view()]).unwrap();
    let e2 = net.branch_embeddings(&[a.view(), b2.view()]).unwrap();
    assert_eq!(e1.ncols(), 4);
    assert_eq!(e1.slice(ndarray::s![.., ..2]), e2.slice(ndarray::s![.., ..2]));
    assert_ne!(e1.slice(ndarray::s![.., 2..]), e2.slice(ndarray::s![.., 2..]));
}

#[test]
fn head_reads_branch_outputs_in_view_order() {
    let spec = MvNetSpec::from_profile(&[3, 2, 5], &[4], &[6], 3).unwrap();
    let net = MvNetModel::init(&spec, 4);
    let mut rng = seed::rng(2);
    let views: Vec<Array2<f64>> = [3, 2, 5].iter().map(|&d| gaussian(&mut rng, 7, d)).collect();
    let inputs: Vec<ArrayView2<f64>> = views.iter().map(|v| v.view()).collect();
    let outs: Vec<Array2<f64>> = net
        .branches()
        .iter()
        .zip(&inputs)
        .map(|(b, v)| b.forward(*v).unwrap())
        .collect();
    let outs: Vec<ArrayView2<f64>> = outs.iter().map(|o| o.view()).collect();
    let manual = net.head().forward(concatenate(Axis(1), &outs).unwrap().view()).unwrap();
    assert_eq!(net.forward(&inputs).unwrap(), manual);
    assert_eq!(net.head().spec().input_dim(), 9);
}

#[test]
fn single_view_network_is_head_after_branch() {
    let spec = MvNetSpec::from_profile(&[4], &[5], &[3], 2).unwrap();
    let net = MvNetModel::init(&spec, 5);
    let x = gaussian(&mut seed::rng(3), 6, 4);
    let via_parts = net.head().forward(net.branches()[0].forward(x.view()).unwrap().view()).unwrap();
    assert_eq!(net.forward(&[x.view()]).unwrap(), via_parts);
}

#[test]
fn mvnet_checkpoint_round_trip() {
    let spec = MvNetSpec::from_profile(&[3, 2], &[4], &[4], 2).unwrap();
    let net = MvNetModel::init(&spec, 6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    net.save(&path).unwrap();
    let back = MvNetModel::load(&path).unwrap();
    assert_eq!(back.param_slices(), net.param_slices());
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut rng = seed::rng(4);
    let mut model = MlpModel::init(&MlpSpec::with_hidden(4, &[7, 5], 3).unwrap(), 0);
    for s in model.param_slices_mut() {
        s.iter_mut().for_each(|w| *w = rng.random_range(-0.8..0.8));
    }
    let x = gaussian(&mut rng, 8, 4);
    let target = gaussian(&mut rng, 8, 3);
    let (_, grads, _) = model
        .grad(x.view(), &MseLoss { target: target.view() })
        .unwrap();
    let analytic = grads.into_flat().concat();
    let numeric = numeric_gradient(&model.param_slices().concat(), 1e-5, |w| {
        let mut m = model.clone();
        let mut offset = 0;
        for s in m.param_slices_mut() {
            s.copy_from_slice(&w[offset..offset + s.len()]);
            offset += s.len();
        }
        dmvc::nnet::mse_with_grad(m.forward(x.view()).unwrap().view(), target.view()).0
    });
    assert!(max_relative_error(&analytic, &numeric, 1e-6) < 1e-4);
}

#[test]
fn autoencoder_recovers_a_linear_subspace() {
    let mut rng = seed::rng(5);
    let latent = gaussian(&mut rng, 300, 2);
    let mixing = gaussian(&mut rng, 2, 8);
    let data = latent.dot(&mixing);
    let variance = data.mapv(|v| v * v).mean().unwrap();
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 32,
        epochs: 150,
        seed: 1,
        ..TrainConfig::default()
    };
    let ae = train_autoencoder(data.view(), &MlpSpec::with_hidden(8, &[32], 2).unwrap(), &cfg).unwrap();
    assert!(ae.final_mse < 0.05 * variance, "mse {} vs variance {variance}", ae.final_mse);
}

#[test]
fn idec_separates_three_blobs() {
    let centers = vec![vec![0.0, 0.0, 0.0], vec![12.0, 0.0, 0.0], vec![0.0, 12.0, 0.0]];
    let (data, truth) = blobs(&centers, 40, 7);
    let spec = MlpSpec::with_hidden(3, &[16, 8], 3).unwrap();
    for s in 0..3 {
        let out = idec_train(data.view(), 3, &spec, &small_idec(), s).unwrap();
        assert_eq!(nmi(&out.partition, &truth).unwrap(), 1.0, "seed {s}");
    }
}

#[test]
fn zero_gamma_is_kmeans_on_the_embedding() {
    let centers = vec![vec![0.0, 0.0], vec![8.0, 0.0], vec![0.0, 8.0], vec![8.0, 8.0]];
    let (data, _) = blobs(&centers, 25, 8);
    let mut cfg = small_idec();
    cfg.dec.gamma = 0.0;
    let out = idec_train(data.view(), 4, &MlpSpec::with_hidden(2, &[16], 3).unwrap(), &cfg, 2).unwrap();
    assert!(out.log.is_empty());
    // the partition is a Lloyd fixed point of the returned centroids
    let z = out.encoder.forward(data.view()).unwrap();
    for (row, &label) in z.rows().into_iter().zip(out.partition.assignments()) {
        let d2: Vec<f64> = out
            .centroids
            .rows()
            .into_iter()
            .map(|c| (&row - &c).mapv(|v| v * v).sum())
            .collect();
        let nearest = (0..d2.len()).min_by(|&a, &b| d2[a].total_cmp(&d2[b])).unwrap();
        assert_eq!(nearest, label);
    }
    for c in 0..4 {
        let members: Vec<usize> = (0..z.nrows()).filter(|&i| out.partition.assignments()[i] == c).collect();
        for j in 0..z.ncols() {
            let mean = members.iter().map(|&i| z[[i, j]]).sum::<f64>() / members.len() as f64;
            assert!((mean - out.centroids[[c, j]]).abs() < 1e-9);
        }
    }
}

#[test]
fn frozen_finetune_keeps_kmeans_labels() {
    let mut rng = seed::rng(9);
    let x = gaussian(&mut rng, 60, 5);
    let net = MlpModel::init(&MlpSpec::with_hidden(5, &[8], 3).unwrap(), 3);
    let z = net.forward(x.view()).unwrap();
    let km = kmeans(z.view(), &KMeansConfig::new(4).with_seed(11)).unwrap();
    let train = TrainConfig {
        learning_rate: 0.0,
        batch_size: 16,
        epochs: 1,
        ..TrainConfig::default()
    };
    let refined = dec_finetune(
        net.clone(),
        &[x.view()],
        4,
        &train,
        &DecConfig::default(),
        Some(km.centroids.clone()),
        "test",
    )
    .unwrap();
    assert_eq!(refined.partition.canonical(), km.partition.canonical());
    assert_eq!(refined.net.param_slices(), net.param_slices());
}
