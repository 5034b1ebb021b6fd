use std::collections::BTreeMap;

use rand::Rng;

use super::augment::{strong_augment, weak_augment};
use super::{lr_at, LossTerm, TrainConfig};
use crate::aquasynth::Datasets;
use crate::boxes::GtBox;
use crate::error::{invalid, Error, Result};
use crate::image::stack;
use crate::losses::{da_loss, det_loss, enh_loss, gray_world_loss, LossReport};
use crate::model::network::{backbone, det_head, uie_head};
use crate::model::{Bound, NetworkWeights};
use crate::seeds::rng_for;
use crate::tensor::{sgd_update, Graph, Tensor, Var};

const ENH_STREAM: u64 = 0x7e01;
const DET_STREAM: u64 = 0x7e02;

/// Inputs of one step: a paired enhancement batch and a labelled detection
/// batch. The same detection images double as the unpaired set.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBatch {
    pub enh_input: Tensor<f32>,
    pub enh_target: Tensor<f32>,
    pub det_input: Tensor<f32>,
    pub det_gts: Vec<Vec<GtBox>>,
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub weights: NetworkWeights,
    pub velocity: BTreeMap<String, Tensor<f32>>,
    /// Times the adaptation loss has been evaluated.
    pub da_calls: u64,
    /// Ground-truth boxes that matched no anchor, summed over steps.
    pub unmatched: u64,
    pub gt_boxes: u64,
}

impl TrainState {
    pub fn new(weights: NetworkWeights) -> Self {
        let velocity = weights.tensors.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect();
        TrainState { weights, velocity, da_calls: 0, unmatched: 0, gt_boxes: 0 }
    }

    pub fn step(&self) -> u64 {
        self.weights.step
    }
}

/// Batch for `step`; a pure function of `(data, cfg.seed, step)`.
pub fn make_batch(data: &Datasets, cfg: &TrainConfig, step: u64) -> Result<StepBatch> {
    if data.paired.is_empty() || data.labeled.is_empty() {
        return invalid("training needs non-empty paired and labelled sets");
    }
    let mut rng = rng_for(cfg.seed, ENH_STREAM, step);
    let mut inputs = Vec::with_capacity(cfg.enh_batch);
    let mut targets = Vec::with_capacity(cfg.enh_batch);
    for _ in 0..cfg.enh_batch {
        let p = &data.paired[rng.random_range(0..data.paired.len())];
        let (mut imgs, _, _) = weak_augment(&mut rng, &[&p.degraded, &p.clear], &[], &[], &cfg.augment);
        targets.push(imgs.pop().expect("two images"));
        inputs.push(imgs.pop().expect("two images"));
    }

    let mut rng = rng_for(cfg.seed, DET_STREAM, step);
    let n = data.labeled.len();
    let mut det_images = Vec::with_capacity(cfg.det_batch);
    let mut det_gts = Vec::with_capacity(cfg.det_batch);
    for _ in 0..cfg.det_batch {
        let idx: [usize; 4] = std::array::from_fn(|_| rng.random_range(0..n));
        let s = strong_augment(&mut rng, idx.map(|i| &data.labeled[i]), &cfg.augment);
        det_gts.push(s.gts());
        det_images.push(s.image);
    }
    Ok(StepBatch {
        enh_input: stack(&inputs.iter().collect::<Vec<_>>())?,
        enh_target: stack(&targets.iter().collect::<Vec<_>>())?,
        det_input: stack(&det_images.iter().collect::<Vec<_>>())?,
        det_gts,
    })
}

fn weighted_total(g: &mut Graph<f32>, terms: &[(Var, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        let s = if w == 1.0 { v } else { g.mul_scalar(v, w) };
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    acc.ok_or_else(|| Error::InvalidArgument("no active loss terms".into()))
}

/// L2 norm of a set of tensors taken as one vector.
pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a Tensor<f32>>) -> f64 {
    grads.into_iter().flat_map(|g| g.data()).map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// One forward/backward pass over the stage's summed loss and one momentum
/// SGD update. On any non-finite value the state is left untouched.
pub fn train_step(state: &mut TrainState, batch: &StepBatch, cfg: &TrainConfig) -> Result<LossReport> {
    let step = state.step();
    let stage = cfg.schedule.stage(step)?;
    let active = stage.losses();
    let net = &cfg.network;
    let w = &cfg.loss_weights;

    let mut g = Graph::<f32>::new();
    let p = Bound::new(&mut g, &state.weights, |_| true);
    let mut report = LossReport::default();
    let mut terms = Vec::new();

    let xs = g.constant(batch.enh_input.clone());
    let ys = g.constant(batch.enh_target.clone());
    let fs = backbone(&mut g, net, &p, xs)?;
    let enhanced = uie_head(&mut g, net, &p, &fs)?;
    let l_enh = enh_loss(&mut g, enhanced, ys)?;
    terms.push((l_enh, w.enh));

    let xr = g.constant(batch.det_input.clone());
    let fr = backbone(&mut g, net, &p, xr)?;
    let grids = det_head(&mut g, net, &p, &fr)?;
    let det_r = det_loss(&mut g, &grids, &batch.det_gts, net)?;
    terms.push((det_r.total, w.det_r));

    let mut l_uns = None;
    let mut l_det_e = None;
    let mut l_da = None;
    if active.contains(&LossTerm::Uns) {
        let xe = uie_head(&mut g, net, &p, &fr)?;
        let uns = gray_world_loss(&mut g, xe)?;
        terms.push((uns, w.uns));
        l_uns = Some(uns);
        let fe = backbone(&mut g, net, &p, xe)?;
        let grids_e = det_head(&mut g, net, &p, &fe)?;
        let det_e = det_loss(&mut g, &grids_e, &batch.det_gts, net)?;
        terms.push((det_e.total, w.det_e));
        l_det_e = Some(det_e.total);
        if active.contains(&LossTerm::Da) {
            let da = da_loss(&mut g, fr.embedding, fe.embedding)?;
            terms.push((da, w.da));
            l_da = Some(da);
        }
    }
    let total = weighted_total(&mut g, &terms)?;

    let val = |v: Option<Var>| v.map(|v| g.value(v).item() as f64);
    report.enh = val(Some(l_enh));
    report.det_r = val(Some(det_r.total));
    report.uns = val(l_uns);
    report.det_e = val(l_det_e);
    report.da = val(l_da);
    report.total = g.value(total).item() as f64;
    if !report.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss at step {step}: {report:?}")));
    }

    let grads = g.backward(total)?;
    let mut updates = Vec::with_capacity(state.weights.tensors.len());
    for (name, var) in p.iter() {
        let grad = grads.get_or_zeros(var);
        if !grad.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name} at step {step}")));
        }
        updates.push((name.to_string(), grad));
    }
    if let Some(max) = cfg.grad_clip {
        let norm = global_norm(updates.iter().map(|(_, g)| g));
        if norm > max {
            let scale = (max / norm) as f32;
            for (_, g) in &mut updates {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    let lr = lr_at(step, cfg) as f32;
    let momentum = cfg.momentum as f32;
    for (name, grad) in updates {
        let param = state.weights.tensors.get_mut(&name).expect("bound from these weights");
        let vel = state.velocity.get_mut(&name).ok_or_else(|| Error::InvalidArgument(format!("no momentum buffer for {name}")))?;
        sgd_update(param, &grad, vel, lr, momentum)?;
    }
    state.weights.step += 1;
    if l_da.is_some() {
        state.da_calls += 1;
    }
    state.unmatched += det_r.targets.unmatched as u64;
    state.gt_boxes += batch.det_gts.iter().map(Vec::len).sum::<usize>() as u64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aquasynth::{build_datasets, DatasetConfig, DatasetSizes};
    use crate::model::NetworkConfig;
    use crate::trainer::StageSchedule;

    fn small() -> (Datasets, TrainConfig) {
        let mut dc = DatasetConfig::default();
        dc.scene.image_size = 32;
        dc.scene.min_object_size = 6;
        dc.scene.max_object_size = 12;
        dc.sizes = DatasetSizes { paired: 6, labeled: 6, eval_per_split: 2 };
        let data = build_datasets(&dc).unwrap();
        let network = NetworkConfig {
            input_size: 32,
            stem_channels: 4,
            stage_channels: vec![8, 8, 16],
            uie_channels: vec![8, 4, 4],
            anchors: vec![vec![[6.0, 6.0], [9.0, 7.0], [7.0, 9.0]], vec![[12.0, 12.0], [16.0, 12.0], [12.0, 16.0]]],
            ..Default::default()
        };
        let cfg = TrainConfig {
            network,
            schedule: StageSchedule::new(2, 4, 6).unwrap(),
            det_batch: 3,
            enh_batch: 2,
            seed: 5,
            ..Default::default()
        };
        (data, cfg)
    }

    #[test]
    fn batches_are_reproducible_and_shaped() {
        let (data, cfg) = small();
        let a = make_batch(&data, &cfg, 3).unwrap();
        assert_eq!(a, make_batch(&data, &cfg, 3).unwrap());
        assert_ne!(a, make_batch(&data, &cfg, 4).unwrap());
        assert_eq!(a.enh_input.shape(), &[2, 3, 32, 32]);
        assert_eq!(a.det_input.shape(), &[3, 3, 32, 32]);
        assert_eq!(a.det_gts.len(), 3);
    }

    #[test]
    fn report_terms_follow_the_stage() {
        let (data, cfg) = small();
        let mut state = TrainState::new(NetworkWeights::init(&cfg.network, cfg.seed).unwrap());
        for step in 0..cfg.schedule.n {
            let before = state.weights.clone();
            let r = train_step(&mut state, &make_batch(&data, &cfg, step).unwrap(), &cfg).unwrap();
            let want: Vec<&str> = cfg.schedule.stage(step).unwrap().losses().iter().map(|t| t.name()).collect();
            assert_eq!(r.present(), want);
            let sum: f64 = r.terms().iter().flatten().sum();
            assert!((r.total - sum).abs() < 1e-5 * sum.max(1.0), "{r:?}");
            assert_ne!(state.weights.tensors, before.tensors);
            assert_eq!(state.step(), step + 1);
            assert_eq!(state.da_calls, step.saturating_sub(cfg.schedule.n_m - 1));
        }
    }

    #[test]
    fn non_finite_input_leaves_state_untouched() {
        let (data, cfg) = small();
        let mut state = TrainState::new(NetworkWeights::init(&cfg.network, 1).unwrap());
        let mut batch = make_batch(&data, &cfg, 0).unwrap();
        batch.enh_target.data_mut()[0] = f32::NAN;
        let before = state.clone();
        assert!(matches!(train_step(&mut state, &batch, &cfg), Err(Error::Numeric(_))));
        assert_eq!(state, before);
    }

    #[test]
    fn clipping_bounds_the_first_update() {
        let (data, mut cfg) = small();
        cfg.grad_clip = Some(1e-3);
        let mut state = TrainState::new(NetworkWeights::init(&cfg.network, 2).unwrap());
        let before = state.weights.clone();
        train_step(&mut state, &make_batch(&data, &cfg, 0).unwrap(), &cfg).unwrap();
        let deltas: Vec<Tensor<f32>> = before
            .tensors
            .iter()
            .map(|(n, t)| {
                let after = &state.weights.tensors[n];
                Tensor::new(t.shape().to_vec(), after.data().iter().zip(t.data()).map(|(a, b)| a - b).collect()).unwrap()
            })
            .collect();
        let step = global_norm(&deltas) / cfg.base_lr;
        assert!((step - 1e-3).abs() < 1e-5, "{step}");
    }

    #[test]
    fn global_norm_spans_tensors() {
        let a = Tensor::new(vec![2], vec![3.0f32, 0.0]).unwrap();
        let b = Tensor::new(vec![1], vec![4.0f32]).unwrap();
        assert!((global_norm([&a, &b]) - 5.0).abs() < 1e-12);
    }
}
