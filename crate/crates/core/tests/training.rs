use scarseg::tensor::{Rng, Tape, Tensor};
use scarseg::train::{
    bce_loss, AdamParams, AdamState, CallbackEvent, Checkpoint, EpochRecord, Example, Phase,
    TrainConfig, TrainHistory, Trainer, BEST_FILE, LAST_FILE,
};
use scarseg::unet::{UNetConfig, UNetModel};
use scarseg::Error;

fn tiny_config() -> UNetConfig {
    UNetConfig {
        depth: 2,
        base_width: 4,
        ..UNetConfig::default()
    }
}

/// Inputs are noise plus a bright square; the target marks the square.
fn examples(n: usize, size: usize, seed: u64) -> Vec<Example> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let r0 = rng.index(size / 2);
            let c0 = rng.index(size / 2);
            let side = size / 4 + rng.index(size / 4);
            let mut target = vec![0f32; size * size];
            for r in r0..r0 + side {
                for c in c0..c0 + side {
                    target[r * size + c] = 1.0;
                }
            }
            let mut input = Vec::with_capacity(4 * size * size);
            for ch in 0..4 {
                for &t in &target {
                    let sign = if ch == 3 { -1.0 } else { 1.0 };
                    input.push(sign * t + 0.3 * rng.standard_normal() as f32);
                }
            }
            Example {
                input: Tensor::new(&[1, 4, size, size], input).unwrap(),
                target: Tensor::new(&[1, 1, size, size], target).unwrap(),
            }
        })
        .collect()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_train: 4,
        batch_val: 2,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn trainer(cfg: TrainConfig) -> Trainer {
    let model = UNetModel::build(tiny_config(), &Rng::new(cfg.seed)).unwrap();
    Trainer::new(model, cfg).unwrap()
}

fn same_metrics(a: &EpochRecord, b: &EpochRecord) -> bool {
    let bits = |r: &EpochRecord| {
        [r.train_loss, r.val_loss, r.train_acc, r.val_acc, r.lr].map(f64::to_bits)
    };
    a.epoch == b.epoch && bits(a) == bits(b)
}

#[test]
fn bce_matches_scalar_loop() {
    let mut rng = Rng::new(5);
    let n = 2 * 3 * 7;
    let p: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.bernoulli(0.4)))).collect();
    let mut oracle = 0.0;
    for i in 0..n {
        let q = p[i].clamp(1e-7, 1.0 - 1e-7);
        oracle -= y[i] * q.ln() + (1.0 - y[i]) * (1.0 - q).ln();
    }
    oracle /= n as f64;
    let mut tape = Tape::<f64>::new();
    let pv = tape.leaf(Tensor::new(&[2, 1, 3, 7], p).unwrap());
    let l = bce_loss(&mut tape, pv, &Tensor::new(&[2, 1, 3, 7], y).unwrap()).unwrap();
    assert!((tape.value(l).item().unwrap() - oracle).abs() < 1e-6);
}

#[test]
fn bce_examples() {
    let mut tape = Tape::<f64>::new();
    let half = tape.leaf(Tensor::full(&[1, 1, 4, 4], 0.5).unwrap());
    let y = Tensor::new(&[1, 1, 4, 4], (0..16).map(|i| f64::from(i % 2)).collect()).unwrap();
    let l = bce_loss(&mut tape, half, &y).unwrap();
    assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-6);
    let exact = tape.leaf(y.clone());
    let l = bce_loss(&mut tape, exact, &y).unwrap();
    assert!(tape.value(l).item().unwrap() < 1e-6);
    let bad = Tensor::full(&[1, 1, 4, 4], 0.3).unwrap();
    let p = tape.leaf(Tensor::full(&[1, 1, 4, 4], 0.5).unwrap());
    assert!(matches!(bce_loss(&mut tape, p, &bad), Err(Error::Contract(_))));
}

#[test]
fn adam_hand_recurrence() {
    let mut store = scarseg::tensor::ParamStore::<f64>::new();
    let w = store.add("w", Tensor::scalar(1.0));
    let mut state = AdamState::new(&store).unwrap();
    let hp = AdamParams {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut expected = 1.0;
    let (mut m, mut v) = (0.0, 0.0);
    for t in 1..=2 {
        store.zero_grad();
        let mut tape = Tape::<f64>::new();
        let wv = tape.param(&store, w);
        let half = tape.constant(Tensor::scalar(0.5));
        let l = scarseg::tensor::mul(&mut tape, wv, half).unwrap();
        tape.backward_into(l, &mut store).unwrap();
        state.step(&mut store, hp, 1e-4).unwrap();
        m = 0.9 * m + 0.1 * 0.5;
        v = 0.999 * v + 0.001 * 0.25;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        expected -= 1e-4 * mh / (vh.sqrt() + 1e-8);
        assert_eq!(state.t, t as u64);
        assert!((store.get(w).item().unwrap() - expected).abs() < 1e-15);
    }
    assert!((expected - (1.0 - 2e-4)).abs() < 1e-10);
}

#[test]
fn val_epoch_is_pure() {
    let data = examples(5, 16, 1);
    let mut t = trainer(config(1));
    let a = t.run_epoch(&data, Phase::Val).unwrap();
    let b = t.run_epoch(&data, Phase::Val).unwrap();
    assert_eq!(a, b);
}

#[test]
fn one_step_per_epoch_when_batch_covers_dataset() {
    let data = examples(8, 16, 2);
    let mut t = trainer(TrainConfig {
        batch_train: 8,
        ..config(1)
    });
    let stats = t.run_epoch(&data, Phase::Train).unwrap();
    assert_eq!(stats.steps, 1);
    assert_eq!(t.adam.t, 1);
}

#[test]
fn trailing_singleton_is_merged() {
    let data = examples(9, 16, 3);
    let mut t = trainer(config(1));
    let stats = t.run_epoch(&data, Phase::Train).unwrap();
    assert_eq!(stats.steps, 2);
}

#[test]
fn single_sample_overfits() {
    let data = examples(1, 32, 4);
    let mut t = trainer(TrainConfig {
        early_stop_patience: 100,
        ..config(50)
    });
    t.fit(&data, None).unwrap();
    let r = &t.history.records;
    assert_eq!(r.len(), 50);
    assert!(r[49].train_loss < r[0].train_loss, "{} vs {}", r[49].train_loss, r[0].train_loss);
}

#[test]
fn callback_order_within_an_epoch() {
    // lr so small that the weights never move: the monitored loss is flat
    // and min_delta makes every epoch after the first a non-improvement
    let data = examples(2, 16, 6);
    let cfg = TrainConfig {
        lr: 1e-20,
        min_lr: 1e-30,
        min_delta: 1e-3,
        plateau_patience: 2,
        early_stop_patience: 4,
        batch_train: 2,
        ..config(20)
    };
    let model = UNetModel::build(UNetConfig { dropout_p: 0.0, ..tiny_config() }, &Rng::new(1)).unwrap();
    let mut t = Trainer::new(model, cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t = t.with_checkpoint_dir(dir.path()).unwrap();
    let outcome = t.fit(&data, None).unwrap();
    assert_eq!(outcome.epochs_run, 5);
    assert_eq!(outcome.stopped_at_best, Some(1));
    let kinds: Vec<String> = outcome
        .events
        .iter()
        .map(|e| match e {
            CallbackEvent::Metrics { epoch, .. } => format!("m{epoch}"),
            CallbackEvent::Checkpoint { epoch, best } => format!("c{epoch}{}", if *best { "*" } else { "" }),
            CallbackEvent::LrReduced { .. } => "lr".into(),
            CallbackEvent::EarlyStop { best_epoch } => format!("stop{best_epoch}"),
        })
        .collect();
    assert_eq!(
        kinds,
        ["m1", "c1*", "m2", "c2", "m3", "c3", "lr", "m4", "c4", "m5", "c5", "lr", "stop1"]
    );
    assert!(dir.path().join(BEST_FILE).exists());
    assert!(dir.path().join(LAST_FILE).exists());
    let lrs: Vec<f64> = t.history.records.iter().map(|r| r.lr).collect();
    assert_eq!(lrs[..3], [1e-20; 3]);
    assert!((lrs[3] - 1e-21).abs() < 1e-30);
}

#[test]
fn resume_replays_injected_history() {
    let mut ck = trainer(config(10)).checkpoint();
    let mut history = TrainHistory::default();
    for (i, v) in [1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95].into_iter().enumerate() {
        history
            .push(EpochRecord {
                epoch: i + 1,
                train_loss: v,
                val_loss: v,
                train_acc: 0.5,
                val_acc: 0.5,
                lr: 1e-4,
                wall_time: 0.0,
            })
            .unwrap();
    }
    ck.history = history;
    let t = Trainer::resume(ck.clone(), config(10)).unwrap();
    assert!((t.lr() - 1e-5).abs() < 1e-18);
    let t = Trainer::resume(ck, TrainConfig { plateau_patience: 6, ..config(10) }).unwrap();
    assert_eq!(t.lr(), 1e-4);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let data = examples(4, 16, 7);
    let mut t = trainer(config(2));
    t.fit(&data, Some(&data)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.amzs");
    let b = dir.path().join("b.amzs");
    t.checkpoint().save(&a).unwrap();
    Checkpoint::load(&a).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(Checkpoint::load(&a).unwrap().to_bytes().unwrap(), t.checkpoint().to_bytes().unwrap());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let bytes = trainer(config(1)).checkpoint().to_bytes().unwrap();
    let mut flipped = bytes.clone();
    flipped[0] ^= 0xff;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Format { offset: 0, .. })));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(Checkpoint::from_bytes(&version), Err(Error::Format { offset: 4, .. })));
    let mut payload = bytes.clone();
    let mid = payload.len() / 2;
    payload[mid] ^= 1;
    let err = Checkpoint::from_bytes(&payload).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]), Err(Error::Format { .. })));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..3]), Err(Error::Format { .. })));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let train = examples(6, 16, 8);
    let val = examples(3, 16, 9);
    let mut full = trainer(config(3));
    full.fit(&train, Some(&val)).unwrap();

    let mut first = trainer(config(2));
    first.fit(&train, Some(&val)).unwrap();
    let bytes = first.checkpoint().to_bytes().unwrap();
    let mut resumed = Trainer::resume(Checkpoint::from_bytes(&bytes).unwrap(), config(3)).unwrap();
    resumed.fit(&train, Some(&val)).unwrap();

    assert_eq!(resumed.history.len(), 3);
    for (a, b) in full.history.records.iter().zip(&resumed.history.records) {
        assert!(same_metrics(a, b), "{a:?} vs {b:?}");
    }
    assert_eq!(full.model, resumed.model);
}

#[test]
fn identical_seed_gives_identical_history_csv() {
    let data = examples(5, 16, 10);
    let run = || {
        let mut t = trainer(config(3));
        t.fit(&data, Some(&data[..2])).unwrap();
        t.history.to_csv()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.starts_with("epoch,train_loss,val_loss,train_acc,val_acc,lr\n"));
    assert_eq!(a.lines().count(), 4);
}

#[test]
fn invalid_train_config_is_rejected() {
    for bad in [
        TrainConfig { lr: 0.0, ..config(1) },
        TrainConfig { beta1: 1.0, ..config(1) },
        TrainConfig { batch_train: 0, ..config(1) },
        TrainConfig { plateau_patience: 0, ..config(1) },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
