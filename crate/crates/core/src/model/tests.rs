use super::*;
use crate::data::{generate_pair, CLASSES};
use crate::gradcheck::{grad_check_inputs, DEFAULT_STEP};
use crate::params::ParamId;
use crate::rng::SplitMix64;

fn tiny() -> ModelConfig {
    ModelConfig {
        c: 8,
        stage_channels: [4, 8, 8, 8],
        expansion: 2,
        seed: 3,
    }
}

fn tight() -> Solver {
    let mut s = Solver::default();
    s.config.tol = 1e-14;
    s.config.max_iter = 400;
    s
}

fn ctx(ablations: Ablations) -> ForwardCtx<'static> {
    ForwardCtx {
        solver: tight(),
        ablations,
        sink: None,
    }
}

fn pair(seed: u64) -> SamplePair {
    generate_pair(seed, &CLASSES[seed as usize % CLASSES.len()], 32).unwrap()
}

use crate::data::SamplePair;

struct Run {
    g: Graph,
    shp: ShpOutputs,
    gat: GatOutputs,
    p: Bound,
}

fn run(net: &VcrNet, store: &ParamStore, s: &SamplePair, masks: MaskSource, ab: Ablations) -> Run {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let a = g.constant(s.img_in.clone());
    let b = g.constant(s.img_non.clone());
    let pose = g.constant(s.pose.clone());
    let (shp, gat) = net.forward(&mut g, &p, a, b, pose, masks, &ctx(ab)).unwrap();
    Run { g, shp, gat, p }
}

#[test]
fn forward_shapes_and_ranges() {
    let (net, store) = VcrNet::new(&tiny()).unwrap();
    let s = pair(0);
    let r = run(&net, &store, &s, MaskSource::Predicted, Ablations::default());
    for d in [r.shp.d_in, r.gat.d_non] {
        assert_eq!(r.g.shape(d), &[7, 8, 8]);
        assert!(r.g.value(d).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
    assert_eq!(r.g.shape(r.shp.f_hat_in), &[8, 8, 8]);
    assert_eq!(r.g.shape(r.gat.g_pooled), &[7, 8]);
    assert_eq!(r.gat.g_in.len(), 7);
    assert_eq!(r.g.shape(r.shp.z_pose), &[53, 8]);
    assert_eq!(r.gat.all_traces(&r.shp).count(), 3);
    assert!(r.gat.all_traces(&r.shp).all(|t| t.converged));
}

#[test]
fn teacher_masks_pool_then_threshold() {
    let mut gt = Tensor::zeros(&[7, 4, 4]);
    // Top-left 2×2 block averages 0.5, top-right 0.25.
    for (y, x) in [(0, 0), (0, 1)] {
        gt.data_mut()[y * 4 + x] = 1.0;
    }
    gt.data_mut()[2] = 1.0;
    let m = teacher_masks(&gt, 2, 2).unwrap();
    assert_eq!(&m.data()[..4], &[1.0, 0.0, 0.0, 0.0]);
    assert!(m.data()[4..].iter().all(|&v| v == 0.0));
    assert!(teacher_masks(&gt, 3, 3).is_err());
}

#[test]
fn contact_features_mask_algebra() {
    let mut rng = SplitMix64::new(1);
    let f = Tensor::randn(&[3, 4, 4], 1.0, &mut rng);
    let mut masks = Tensor::zeros(&[3, 4, 4]);
    masks.data_mut()[..16].fill(1.0);
    for i in 0..16 {
        masks.data_mut()[16 + i] = (i % 2) as f64;
        masks.data_mut()[32 + i] = ((i + 1) % 2) as f64;
    }
    let mut g = Graph::new();
    let fv = g.constant(f.clone());
    let out = extract_contact_features(&mut g, fv, &masks).unwrap();
    assert_eq!(g.value(out[0]), &f);
    let union: Vec<f64> = g.value(out[1]).data().iter().zip(g.value(out[2]).data()).map(|(a, b)| a + b).collect();
    assert_eq!(union, f.data());

    let zero = Tensor::zeros(&[2, 4, 4]);
    let out = extract_contact_features(&mut g, fv, &zero).unwrap();
    assert!(g.value(out[1]).data().iter().all(|&v| v == 0.0));
    let pooled = pool_contact_features(&mut g, &out, &zero).unwrap();
    assert!(g.value(pooled).data().iter().all(|&v| v == 0.0));

    assert!(extract_contact_features(&mut g, fv, &Tensor::zeros(&[7, 2, 2])).is_err());
}

#[test]
fn pooling_averages_over_support_and_expand_broadcasts() {
    let mut g = Graph::new();
    let f = Tensor::new(vec![2, 1, 3], vec![1.0, 2.0, 6.0, 0.0, 3.0, -3.0]).unwrap();
    let masks = Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 1.0]).unwrap();
    let fv = g.constant(f);
    let masked = extract_contact_features(&mut g, fv, &masks).unwrap();
    let pooled = pool_contact_features(&mut g, &masked, &masks).unwrap();
    assert_eq!(g.value(pooled).data(), &[4.0, 0.0]);
    let e = expand_pooled(&mut g, pooled, 2, 2).unwrap();
    assert_eq!(g.shape(e), &[2, 2, 2]);
    assert_eq!(g.value(e).data(), &[4.0, 4.0, 4.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn alignment_loss_examples() {
    let mut g = Graph::new();
    let zb = g.param(Tensor::new(vec![1, 2], vec![0.25f64.ln(), 0.75f64.ln()]).unwrap());
    let z = g.param(Tensor::zeros(&[1, 2]));
    let l = alignment_loss(&mut g, zb, z).unwrap();
    let expected = 0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln();
    assert!((g.value(l).item() - expected).abs() < 1e-14);
    assert!((g.value(l).item() - 0.130812035).abs() < 1e-8);
    g.backward(l).unwrap();
    assert!(g.grad(zb).is_some());
    assert!(g.grad(z).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));

    let mut rng = SplitMix64::new(4);
    for _ in 0..20 {
        let a = Tensor::randn(&[53, 6], 2.0, &mut rng);
        let b = Tensor::randn(&[53, 6], 2.0, &mut rng);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(b));
        let l = alignment_loss(&mut g, av, bv).unwrap();
        assert!(g.value(l).item() >= 0.0);
        let a2 = g.constant(a);
        let same = alignment_loss(&mut g, av, a2).unwrap();
        assert!(g.value(same).item().abs() < 1e-15);
    }
    let mut g = Graph::new();
    let (a, b) = (g.constant(Tensor::zeros(&[2, 3])), g.constant(Tensor::zeros(&[3, 2])));
    assert!(alignment_loss(&mut g, a, b).is_err());
}

#[test]
fn total_loss_examples() {
    let mut rng = SplitMix64::new(8);
    let gt = Tensor::uniform(&[7, 4, 4], 0.0, 1.0, &mut rng).map(|v| v.round());
    let mut g = Graph::new();
    let half = g.constant(Tensor::full(&[7, 2, 2], 0.5));
    let align = g.constant(Tensor::scalar(0.3));
    let (total, b) = total_loss(&mut g, half, half, &gt, &gt, align, LAMBDA).unwrap();
    assert!((b.l_in - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((b.l_non - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(b.l_total, b.l_in + b.l_non + b.l_align);
    assert_eq!(g.value(total).item(), b.l_total);

    let perfect = g.constant(gt.clone());
    let zero = g.constant(Tensor::scalar(0.0));
    let (_, b) = total_loss(&mut g, perfect, perfect, &gt, &gt, zero, LAMBDA).unwrap();
    assert!(b.l_total < 1e-10);

    let bad = gt.map(|v| v + 0.5);
    assert!(matches!(total_loss(&mut g, perfect, perfect, &bad, &gt, zero, LAMBDA), Err(Error::Data(_))));

    for _ in 0..20 {
        let lam = [rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)];
        let b = LossBundle::new(rng.next_f64(), rng.next_f64(), rng.next_f64(), lam);
        assert_eq!(b.l_total, lam[0] * b.l_in + lam[1] * b.l_non + lam[2] * b.l_align);
    }
}

#[test]
fn l_in_reaches_pose_encoder() {
    let (net, store) = VcrNet::new(&tiny()).unwrap();
    let s = pair(1);
    let mut r = run(&net, &store, &s, MaskSource::Predicted, Ablations::default());
    let gt = r.g.constant(Tensor::zeros(&[7, 8, 8]));
    let l = r.g.bce_loss(r.shp.d_in, gt).unwrap();
    r.g.backward(l).unwrap();
    let pose_ids: Vec<ParamId> = store.ids().filter(|&id| store.name(id).starts_with("pose.")).collect();
    assert!(!pose_ids.is_empty());
    let reached = pose_ids
        .iter()
        .filter(|&&id| r.g.grad(r.p[id]).is_some_and(|t| t.norm() > 0.0))
        .count();
    assert_eq!(reached, pose_ids.len());
}

#[test]
fn zero_deq_and_text_weights_collapse_to_raw_stages() {
    let (net, mut store) = VcrNet::new(&tiny()).unwrap();
    store.zero_prefix("shp.deq.");
    for id in net.text.residual_param_ids() {
        let z = Tensor::zeros(store.get(id).shape());
        store.set(id, z).unwrap();
    }
    let s = pair(2);
    let mut r = run(&net, &store, &s, MaskSource::Predicted, Ablations::default());
    assert!(r.g.value(r.shp.z_in).data().iter().all(|&v| v == 0.0));
    let p = store.bind_frozen(&mut r.g);
    let img = r.g.constant(s.img_in.clone());
    let stages = net.encode(&mut r.g, &p, img).unwrap();
    let x4t = map_to_tokens(&mut r.g, stages[3]).unwrap();
    assert_eq!(r.g.value(r.shp.x_hat_in), r.g.value(x4t));
    let abl = run(
        &net,
        &store,
        &s,
        MaskSource::Predicted,
        Ablations {
            text: true,
            ..Ablations::default()
        },
    );
    assert_eq!(abl.g.value(abl.shp.d_in), r.g.value(r.shp.d_in));
}

#[test]
fn zero_masks_cut_the_interactive_stream() {
    let (net, store) = VcrNet::new(&tiny()).unwrap();
    let s = pair(3);
    let mut other = s.clone();
    other.img_in = pair(10).img_in;
    let zeros = || MaskSource::Given(Tensor::zeros(&[7, 8, 8]));
    let a = run(&net, &store, &s, zeros(), Ablations::default());
    let b = run(&net, &store, &other, zeros(), Ablations::default());
    assert_ne!(a.g.value(a.shp.d_in), b.g.value(b.shp.d_in));
    assert_eq!(a.g.value(a.gat.d_non), b.g.value(b.gat.d_non));

    let ones = MaskSource::Given(Tensor::ones(&[7, 8, 8]));
    let c = run(&net, &store, &s, ones, Ablations::default());
    let d = run(&net, &store, &other, MaskSource::Given(Tensor::ones(&[7, 8, 8])), Ablations::default());
    assert_ne!(c.g.value(c.gat.d_non), d.g.value(d.gat.d_non));
    let e = run(&net, &store, &other, MaskSource::Given(Tensor::ones(&[7, 8, 8])), Ablations {
        apparent: true,
        ..Ablations::default()
    });
    assert_eq!(e.g.value(e.gat.d_non), b.g.value(b.gat.d_non));
}

#[test]
fn pose_ablation_bypasses_every_equilibrium() {
    let (net, store) = VcrNet::new(&tiny()).unwrap();
    let s = pair(4);
    let ab = Ablations {
        pose: true,
        ..Ablations::default()
    };
    let r = run(&net, &store, &s, MaskSource::Predicted, ab);
    assert_eq!(r.gat.all_traces(&r.shp).count(), 0);
    assert_eq!(r.g.value(r.gat.z_pose_bar), r.g.value(r.shp.z_pose));
    assert_eq!(ab.label(), "w/o pose");
    assert_eq!(Ablations::default().label(), "full");
}

fn small_train() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch: 2,
        flip: false,
        model: tiny(),
        ..TrainConfig::default()
    }
}

#[test]
fn train_step_is_finite_and_lr_zero_is_a_no_op() {
    let cfg = small_train();
    let (net, mut store) = VcrNet::new(&cfg.model).unwrap();
    let batch = [pair(0), pair(1)];
    let before = store.clone();
    let mut opt = AdamW::new(&store, 0.0, cfg.weight_decay);
    let rep = train_step(&net, &mut store, &mut opt, &batch, &cfg, 0).unwrap();
    assert!(rep.loss.is_finite());
    assert_eq!(rep.loss.l_total, rep.loss.l_in + rep.loss.l_non + rep.loss.l_align);
    // 3 forward + 3 adjoint solves per sample.
    assert_eq!(rep.traces.len(), 12);
    for (a, b) in store.values().iter().zip(before.values()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    opt.lr = cfg.lr;
    let rep2 = train_step(&net, &mut store, &mut opt, &batch, &cfg, 1).unwrap();
    assert_eq!(rep2.loss, rep.loss);
    let moved = store.values().iter().zip(before.values()).filter(|(a, b)| a != b).count();
    assert!(moved > store.len() / 2, "{moved} of {}", store.len());
    assert!(store.values().iter().all(|t| t.data().iter().all(|&v| v == v as f32 as f64)));
}

#[test]
fn every_ablation_trains() {
    for ab in [
        Ablations { text: true, ..Ablations::default() },
        Ablations { pose: true, ..Ablations::default() },
        Ablations { apparent: true, ..Ablations::default() },
    ] {
        let cfg = TrainConfig { ablations: ab, ..small_train() };
        let (net, mut store) = VcrNet::new(&cfg.model).unwrap();
        let mut opt = AdamW::new(&store, cfg.lr, cfg.weight_decay);
        let rep = train_step(&net, &mut store, &mut opt, &[pair(5)], &cfg, 0).unwrap();
        assert!(rep.loss.is_finite(), "{}", ab.label());
        if ab.pose {
            assert_eq!(rep.loss.l_align, 0.0);
        }
    }
}

#[test]
fn batches_cover_each_epoch_once() {
    let seen: Vec<usize> = (0..5).flat_map(|s| batch_indices(10, 2, 7, s)).map(|(i, _)| i).collect();
    let mut sorted = seen.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    assert_eq!(batch_indices(10, 2, 7, 3), batch_indices(10, 2, 7, 3));
    let flips = (0..50).flat_map(|s| batch_indices(10, 2, 7, s)).filter(|(_, f)| *f).count();
    assert!((20..80).contains(&flips));
}

#[test]
fn checkpoint_round_trip_resumes_exactly() {
    let cfg = small_train();
    let (net, mut store) = VcrNet::new(&cfg.model).unwrap();
    let mut opt = AdamW::new(&store, cfg.lr, cfg.weight_decay);
    let batch = [pair(6)];
    train_step(&net, &mut store, &mut opt, &batch, &cfg, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &net, &store, Some(&opt), 1, Some(&cfg)).unwrap();

    let ck = load_checkpoint(dir.path()).unwrap();
    assert_eq!(ck.manifest.step, 1);
    assert_eq!(ck.store.values(), store.values());
    let mut opt2 = ck.optimizer.unwrap();
    assert_eq!(opt2, opt);
    let mut store2 = ck.store;
    let a = train_step(&net, &mut store, &mut opt, &batch, &cfg, 1).unwrap();
    let b = train_step(&ck.model, &mut store2, &mut opt2, &batch, &cfg, 1).unwrap();
    assert_eq!(a.loss, b.loss);
    assert_eq!(store.values(), store2.values());

    let manifest = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.replace("\"version\": 1", "\"version\": 9")).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
    std::fs::write(&manifest, &text).unwrap();
    let name = "shp.sp.kernel";
    let file = dir.path().join(format!("params/{name}.tnsr"));
    crate::tnsr::write(&Tensor::zeros(&[1, 2]), &file).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
}

/// Store values with the listed parameters replaced by graph inputs.
fn bind_with(g: &mut Graph, store: &ParamStore, swap: &[(ParamId, Var)]) -> Bound {
    let mut vars = store.bind_frozen(g).vars().to_vec();
    for &(id, v) in swap {
        vars[id.index()] = v;
    }
    Bound::from_vars(vars)
}

const PATH_STEP: f64 = 1e-4;

/// Max relative error of `Σ R ⊙ feature` with respect to the named
/// parameters, `R` a fixed random map and `feature` chosen by `pick`.
fn path_grad_error(names: &[&str], seed: u64, pick: fn(&ShpOutputs, &GatOutputs) -> Var) -> f64 {
    let (net, store) = VcrNet::new(&ModelConfig { seed, ..tiny() }).unwrap();
    let s = pair(seed);
    let checked: Vec<ParamId> = names.iter().map(|n| store.id(n).unwrap()).collect();
    let inputs: Vec<Tensor> = checked.iter().map(|&id| store.get(id).clone()).collect();
    let masks = teacher_masks(&s.gt_in, 8, 8).unwrap();
    let mut rng = SplitMix64::new(seed ^ 0xabc);
    let f = |g: &mut Graph, vs: &[Var]| -> Result<Var> {
        let swap: Vec<(ParamId, Var)> = checked.iter().copied().zip(vs.iter().copied()).collect();
        let p = bind_with(g, &store, &swap);
        let a = g.constant(s.img_in.clone());
        let b = g.constant(s.img_non.clone());
        let pose = g.constant(s.pose.clone());
        let (shp, gat) = net.forward(g, &p, a, b, pose, MaskSource::Given(masks.clone()), &ctx(Ablations::default()))?;
        let feat = pick(&shp, &gat);
        let r = g.constant(Tensor::randn(g.shape(feat), 1.0, &mut SplitMix64::new(seed)));
        let prod = g.mul(feat, r)?;
        Ok(g.sum(prod))
    };
    // A wider step keeps solver round-off below the truncation error.
    grad_check_inputs(f, &inputs, PATH_STEP, Some((4, &mut rng))).unwrap().max_rel_error
}

#[test]
fn shp_path_matches_finite_differences() {
    let names = ["shp.deq.src1.wq", "shp.deq.src2.uv", "shp.sp.kernel", "shp.text.wk", "parts.table", "pose.lift.w"];
    for seed in 0..4 {
        let err = path_grad_error(&names, seed, |shp, _| shp.x_sp);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn gat_path_matches_finite_differences() {
    let names = ["gat.deq.src2.uq", "gat.deq_app.src1.wv", "gat.deq_app.ffn_out.w", "gat.fuse_out.kernel", "shp.fuse.out.kernel"];
    for seed in 0..4 {
        let err = path_grad_error(&names, seed, |_, gat| gat.f_fuse);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn alignment_loss_matches_finite_differences_in_its_first_argument() {
    let mut rng = SplitMix64::new(12);
    for _ in 0..5 {
        let target = Tensor::randn(&[5, 4], 1.5, &mut rng);
        let zb = Tensor::randn(&[5, 4], 1.5, &mut rng);
        let f = |g: &mut Graph, vs: &[Var]| {
            let t = g.constant(target.clone());
            alignment_loss(g, vs[0], t)
        };
        let report = grad_check_inputs(f, &[zb], DEFAULT_STEP, None).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
