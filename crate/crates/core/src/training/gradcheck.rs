use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mse_loss, TrainError};
use crate::model::{ModelConfig, PPTNet};
use crate::numeric::gradcheck::{check_params, GradCheckReport, FD_STEP};
use crate::numeric::{ParamStore, Tape, Tensor};

/// Default number of sampled parameter entries.
pub const GRAD_CHECK_SAMPLES: usize = 200;

/// Finite-difference check of the full model's MSE gradient on random data.
///
/// Dropout is disabled. `samples = None` checks every parameter entry.
pub fn grad_check(
    config: &ModelConfig,
    batch: usize,
    samples: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport, TrainError> {
    let mut net = PPTNet::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let x = Tensor::randn(&[batch, config.lookback, config.n_features], 1.0, &mut rng);
    let y = Tensor::randn(&[batch, config.horizon, config.n_features], 1.0, &mut rng);
    let model = net.clone();
    check_params(
        &mut net.store,
        |tape: &mut Tape, store: &ParamStore| -> Result<_, TrainError> {
            let mut m = model.clone();
            m.store = store.clone();
            let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
            let pred = m.forward::<ChaCha8Rng>(tape, xv, None)?;
            mse_loss(tape, pred, yv, None)
        },
        samples,
        FD_STEP,
        seed,
    )
}

/// Finite-difference check of a single affine layer `x·W + b` under MSE.
pub fn grad_check_linear(
    inputs: usize,
    outputs: usize,
    seed: u64,
) -> Result<GradCheckReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::randn(&[inputs, outputs], 1.0, &mut rng));
    let b = store.add("b", Tensor::randn(&[outputs], 1.0, &mut rng));
    let x = Tensor::randn(&[5, inputs], 1.0, &mut rng);
    let y = Tensor::randn(&[5, outputs], 1.0, &mut rng);
    check_params(
        &mut store,
        |tape: &mut Tape, s: &ParamStore| -> Result<_, TrainError> {
            let (wv, bv) = (tape.param(s, w), tape.param(s, b));
            let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
            let pred = tape.linear(xv, wv, Some(bv))?;
            mse_loss(tape, pred, yv, None)
        },
        None,
        FD_STEP,
        seed,
    )
}
