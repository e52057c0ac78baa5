use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::cvae::{Batch, ModelConfig};
use crate::envs::{toy_dataset, uncorrelated_dataset, Action, GridLayout, GridState, Transition};
use crate::error::Result;

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Train = 1,
    Val = 2,
    Test = 3,
    Init = 4,
    Noise = 5,
    Eval = 6,
    Probe = 7,
    Agent = 8,
    Rollout = 9,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

pub fn toy_batch(model: &ModelConfig, pairs: &[(f64, f64)]) -> Result<Batch> {
    let x = Array2::from_shape_fn((pairs.len(), 1), |(i, _)| pairs[i].0);
    let y = Array2::from_shape_fn((pairs.len(), 1), |(i, _)| pairs[i].1);
    Batch::encode(model, &x, &y)
}

/// Raw grid conditioning row: six coordinates and the action index.
pub fn grid_input(state: &GridState, action: Action) -> [f64; 7] {
    state.with_action(action)
}

pub fn grid_batch(model: &ModelConfig, records: &[Transition]) -> Result<Batch> {
    let x = Array2::from_shape_fn((records.len(), 7), |(i, j)| {
        grid_input(&records[i].state, records[i].action)[j]
    });
    let y = Array2::from_shape_fn((records.len(), 6), |(i, j)| records[i].next.to_f64()[j]);
    Batch::encode(model, &x, &y)
}

/// Where training minibatches come from.
#[derive(Debug, Clone)]
pub enum BatchSource {
    /// Uniform draws with replacement from a fixed encoded set.
    Fixed(Batch),
    /// Fresh uniformly sampled grid transitions for every batch.
    Fresh { layout: GridLayout, model: ModelConfig },
}

impl BatchSource {
    pub fn next<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Batch> {
        match self {
            BatchSource::Fixed(all) => {
                let rows: Vec<usize> = (0..size).map(|_| rng.gen_range(0..all.len())).collect();
                Ok(all.select(&rows))
            }
            BatchSource::Fresh { layout, model } => {
                grid_batch(model, &uncorrelated_dataset(layout, size, rng))
            }
        }
    }
}

/// Training source plus encoded validation and test sets for one seed.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: BatchSource,
    pub val: Batch,
    pub test: Batch,
    /// Raw toy pairs of the training split (empty on grid domains).
    pub toy_train: Vec<(f64, f64)>,
    pub toy_test: Vec<(f64, f64)>,
}

pub fn build_datasets(cfg: &ExperimentConfig, seed: u64) -> Result<Datasets> {
    let model = cfg.model_config();
    if cfg.domain.is_grid() {
        let val = uncorrelated_dataset(&cfg.layout, cfg.val_size, &mut stream_rng(seed, Stream::Val));
        let test = uncorrelated_dataset(&cfg.layout, cfg.test_size, &mut stream_rng(seed, Stream::Test));
        let train = if cfg.train_size == 0 {
            BatchSource::Fresh {
                layout: cfg.layout.clone(),
                model: model.clone(),
            }
        } else {
            let t = uncorrelated_dataset(&cfg.layout, cfg.train_size, &mut stream_rng(seed, Stream::Train));
            BatchSource::Fixed(grid_batch(&model, &t)?)
        };
        Ok(Datasets {
            train,
            val: grid_batch(&model, &val)?,
            test: grid_batch(&model, &test)?,
            toy_train: Vec::new(),
            toy_test: Vec::new(),
        })
    } else {
        let train = toy_dataset(&cfg.toy, cfg.train_size, &mut stream_rng(seed, Stream::Train))?;
        let val = toy_dataset(&cfg.toy, cfg.val_size, &mut stream_rng(seed, Stream::Val))?;
        let test = toy_dataset(&cfg.toy, cfg.test_size, &mut stream_rng(seed, Stream::Test))?;
        Ok(Datasets {
            train: BatchSource::Fixed(toy_batch(&model, &train)?),
            val: toy_batch(&model, &val)?,
            test: toy_batch(&model, &test)?,
            toy_train: train,
            toy_test: test,
        })
    }
}

/// Uniformly drawn valid `(state, action)` pairs.
pub fn probe_set(layout: &GridLayout, count: usize, seed: u64) -> Vec<(GridState, Action)> {
    let mut rng = stream_rng(seed, Stream::Probe);
    let open = layout.open_cells();
    (0..count)
        .map(|_| {
            let mut pick = || open[rng.gen_range(0..open.len())];
            let state = GridState {
                agent: pick(),
                ghost1: pick(),
                ghost2: pick(),
            };
            (state, Action::ALL[rng.gen_range(0..4)])
        })
        .collect()
}
