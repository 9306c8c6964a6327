use kale_core::config::{build_corpus_graph, RunConfig};
use kale_core::corpus::ArtworkRecord;
use kale_core::embed::ProviderSet;
use kale_core::graph::{write_graph_bytes, HeteroGraph};
use kale_core::model::{BeamConfig, KaleModel, Vocabulary, EOS};
use kale_core::numeric::ParamStore;
use kale_core::synthetic::synthetic_corpus;
use kale_core::train::{fit, fit_until, read_loss_csv, write_loss_csv, Checkpoint, StepLog, Trainer, LOSS_CSV_HEADER};

struct Setup {
    cfg: RunConfig,
    records: Vec<ArtworkRecord>,
    graph: HeteroGraph,
    providers: ProviderSet,
    model: KaleModel,
    store: ParamStore<f64>,
}

fn setup(n: usize, cfg: RunConfig) -> Setup {
    let records = synthetic_corpus(n, 3);
    let providers = cfg.providers.build();
    let graph = build_corpus_graph(&records, &cfg, &providers).unwrap().graph;
    let vocab = Vocabulary::build(&records, cfg.model.min_freq);
    let mut store = ParamStore::new();
    let model = KaleModel::new(cfg.model.clone(), cfg.han.clone(), vocab, &graph, &mut store, cfg.seed).unwrap();
    Setup {
        cfg,
        records,
        graph,
        providers,
        model,
        store,
    }
}

fn small(epochs: u64) -> RunConfig {
    let mut cfg = RunConfig::toy();
    cfg.model.d_model = 16;
    cfg.han.head_dim = 4;
    cfg.han.hidden = 8;
    cfg.han.semantic_dim = 8;
    cfg.train.epochs = epochs;
    cfg.train.warmup_iters = 3;
    cfg.train.batch_size = 2;
    cfg
}

impl Setup {
    fn trainer(&self) -> Trainer<'_, f64> {
        let prepared = self.records.iter().map(|r| self.model.prepare(r, &self.graph, &self.providers).unwrap()).collect();
        Trainer::new(&self.model, self.store.clone(), prepared, self.cfg.train.clone(), self.cfg.seed).unwrap()
    }

    fn checkpoint(&self, t: &Trainer<'_, f64>) -> Checkpoint {
        Checkpoint::capture(
            self.cfg.to_toml(),
            t.step,
            t.epoch,
            self.model.vocab.tokens().to_vec(),
            &t.store,
            Some(&t.opt),
            write_graph_bytes(&self.graph),
        )
    }
}

#[test]
fn single_record_is_memorized() {
    let mut cfg = RunConfig::toy();
    cfg.train.epochs = 50;
    let s = setup(1, cfg);
    let mut t = s.trainer();
    let history = fit(&mut t, |_, _| Ok(())).unwrap();
    assert_eq!(history.len(), 50);
    let last = history.last().unwrap();
    assert!(last.l_ce < 0.1, "final l_ce {}", last.l_ce);
    assert!(history[0].l_ce > last.l_ce);
    assert!(t.evaluate_ce().unwrap() < 0.1);
}

#[test]
fn beta_zero_leaves_alignment_head_untouched() {
    let mut cfg = small(2);
    cfg.train.beta = 0.0;
    let s = setup(4, cfg);
    let mut t = s.trainer();
    let history = fit(&mut t, |_, _| Ok(())).unwrap();
    assert!(history.iter().all(|h| h.l_cma > 0.0 && h.l_total == h.l_ce));
    let mut changed_elsewhere = false;
    for ((_, before), (_, after)) in s.store.iter().zip(t.store.iter()) {
        let same = before.tensor.data().iter().zip(after.tensor.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if before.name.starts_with("cma.") {
            assert!(same, "{} moved", before.name);
        } else {
            changed_elsewhere |= !same;
        }
    }
    assert!(changed_elsewhere);
}

#[test]
fn positive_beta_trains_alignment_head() {
    let s = setup(4, small(1));
    let mut t = s.trainer();
    fit(&mut t, |_, _| Ok(())).unwrap();
    let id = s.store.id("cma.proj.w").unwrap();
    assert_ne!(s.store.get(id).tensor, t.store.get(id).tensor);
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let run = || {
        let s = setup(5, small(3));
        let mut t = s.trainer();
        let logs = fit(&mut t, |_, _| Ok(())).unwrap();
        (s.checkpoint(&t).to_bytes(), logs)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    assert!(a == b, "checkpoints differ");
}

#[test]
fn resumed_run_continues_the_same_trajectory() {
    let s = setup(5, small(4));
    let mut full = s.trainer();
    let uninterrupted = fit(&mut full, |_, _| Ok(())).unwrap();

    let mut first = s.trainer();
    let mut head = fit_until(&mut first, 2, |_, _| Ok(())).unwrap();
    let bytes = s.checkpoint(&first).to_bytes();
    drop(first);

    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let mut second = s.trainer();
    second.resume(&ck).unwrap();
    assert_eq!((second.epoch, second.step), (2, ck.step));
    head.extend(fit(&mut second, |_, _| Ok(())).unwrap());
    assert_eq!(head.len(), uninterrupted.len());
    for (a, b) in head.iter().zip(&uninterrupted) {
        assert_eq!(a.step, b.step);
        assert!((a.l_total - b.l_total).abs() < 1e-9);
        assert!((a.lr_other - b.lr_other).abs() < 1e-15);
    }
}

#[test]
fn epoch_callback_sees_every_epoch() {
    let s = setup(3, small(3));
    let mut t = s.trainer();
    let mut seen = Vec::new();
    fit(&mut t, |tr, logs| {
        seen.push((tr.epoch, logs.len()));
        Ok(())
    })
    .unwrap();
    let per = t.steps_per_epoch() as usize;
    assert_eq!(seen, vec![(1, per), (2, per), (3, per)]);
    assert_eq!(t.step, 3 * per as u64);
}

#[test]
fn loss_csv_round_trip_and_append() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    let row = |step| StepLog {
        step,
        l_ce: 1.25 / step as f64,
        l_cma: 0.5,
        l_total: 1.1,
        lr_vision: 1e-5,
        lr_graph: 1e-2,
        lr_other: 3.3e-7,
    };
    write_loss_csv(&path, &[row(1), row(2)], false).unwrap();
    write_loss_csv(&path, &[row(3)], true).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), LOSS_CSV_HEADER);
    assert_eq!(text.lines().count(), 4);
    assert_eq!(read_loss_csv(&path).unwrap(), vec![row(1), row(2), row(3)]);
}

#[test]
fn trained_model_decodes_with_beam_and_greedy() {
    let mut cfg = RunConfig::toy();
    cfg.train.epochs = 50;
    let s = setup(1, cfg);
    let mut t = s.trainer();
    fit(&mut t, |_, _| Ok(())).unwrap();
    let rec = &t.records()[0];
    let hyps = s.model.generate(&t.store, rec, BeamConfig { width: 3, ..BeamConfig::default() }).unwrap();
    let best = s.model.vocab.decode(&hyps[0].tokens);
    assert_eq!(best, s.records[0].captions[0].text);
    let g = s.model.greedy_caption(&t.store, rec, BeamConfig::default()).unwrap();
    assert_eq!(s.model.vocab.decode(&g.tokens), best);
    assert_eq!(g.tokens.last(), Some(&EOS));
}
