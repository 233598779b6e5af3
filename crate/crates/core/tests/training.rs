use analogy_core::corpus::{generate_corpus, make_splits, Corpus, CorpusSpec, HeldoutRegistry, SplitSpec, Splits};
use analogy_core::model::{
    train, train_step, Architecture, EncoderParams, FreezeMode, Hyperparams, LossMode, PreparedImages,
};
use analogy_core::quadruples::{sample_batch, BatchMix};
use analogy_core::rng;

fn small() -> (Corpus, Splits, Architecture) {
    let corpus = generate_corpus(&CorpusSpec {
        num_categories: 6,
        num_properties: 4,
        exemplars_per_cell: 3,
        image_size: 12,
        ..CorpusSpec::default()
    })
    .unwrap();
    let splits = make_splits(&corpus, &SplitSpec::sample(corpus.dims(), 1, 2, 0).unwrap()).unwrap();
    let arch = Architecture {
        image_size: 12,
        conv1: 4,
        conv2: 6,
        hidden: 16,
        embed_dim: 8,
        ..Architecture::default()
    };
    (corpus, splits, arch)
}

#[test]
fn fixed_batch_overfits() {
    let (corpus, splits, arch) = small();
    let prepared = PreparedImages::new(&corpus, &splits.train).unwrap();
    let batch = sample_batch(
        &mut rng::stream(2, &[]),
        &splits.train,
        &HeldoutRegistry::default(),
        8,
        BatchMix::default(),
    )
    .unwrap();
    let hyper = Hyperparams {
        freeze: FreezeMode::All,
        lr: 0.02,
        ..Hyperparams::default()
    };
    let mut params = EncoderParams::init(arch, FreezeMode::All, &mut rng::stream(3, &[])).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..500 {
        last = train_step(&mut params, &prepared, &batch, &hyper, hyper.lr).unwrap().loss;
        if last < 0.05 {
            break;
        }
    }
    assert!(last < 0.05, "loss after 500 steps: {last}");
}

#[test]
fn positive_distance_falls_during_training() {
    let (corpus, splits, arch) = small();
    for loss in [LossMode::Single { margin: 0.4 }, LossMode::default()] {
        let hyper = Hyperparams {
            loss,
            steps: 300,
            batch_size: 16,
            freeze: FreezeMode::All,
            ..Hyperparams::default()
        };
        let (_, log) = train(&corpus, &splits, &hyper, None, arch, |_| {}).unwrap();
        let (early_loss, early_pos, _) = log.window_means(0..50);
        let (late_loss, late_pos, _) = log.window_means(250..300);
        assert!(late_pos < early_pos, "{}: positive distance {early_pos} -> {late_pos}", loss.name());
        assert!(late_loss < early_loss, "{}: loss {early_loss} -> {late_loss}", loss.name());
    }
}

#[test]
fn frozen_layers_do_not_move() {
    let (corpus, splits, arch) = small();
    let init = EncoderParams::init(arch, FreezeMode::All, &mut rng::stream(9, &[])).unwrap();
    for (freeze, first_moving) in [(FreezeMode::FcOnly, 2), (FreezeMode::FcPlusLastConv, 1), (FreezeMode::All, 0)] {
        let hyper = Hyperparams {
            steps: 5,
            batch_size: 8,
            freeze,
            ..Hyperparams::default()
        };
        let (trained, _) = train(&corpus, &splits, &hyper, Some(init.clone()), arch, |_| {}).unwrap();
        for (l, (a, b)) in init.layers().iter().zip(trained.layers()).enumerate() {
            let moved = a.weight.value != b.weight.value;
            assert_eq!(moved, l >= first_moving, "{freeze}: layer {}", a.name);
        }
    }
}

#[test]
fn training_is_bit_reproducible_across_thread_counts() {
    let (corpus, splits, arch) = small();
    let hyper = Hyperparams {
        steps: 20,
        batch_size: 12,
        ..Hyperparams::default()
    };
    let (a, log_a) = train(&corpus, &splits, &hyper, None, arch, |_| {}).unwrap();
    let (b, log_b) = train(&corpus, &splits, &hyper, None, arch, |_| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    let threaded = Hyperparams { threads: 3, ..hyper };
    let (c, _) = train(&corpus, &splits, &threaded, None, arch, |_| {}).unwrap();
    let (d, _) = train(&corpus, &splits, &threaded, None, arch, |_| {}).unwrap();
    assert_eq!(c, d);
}
