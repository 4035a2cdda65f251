//! Shared fixtures for the pipeline benchmarks.

use lpvmax::harness::{random_inputs, simulate_with_snr, Snr};
use lpvmax::lpv_ss::random_stable_model;
use lpvmax::{DataSet, Dims, LpvSsModel};

/// The two-state benchmark system with two inputs, outputs and scheduling
/// channels.
pub fn benchmark_model() -> LpvSsModel {
    random_stable_model(Dims::new(2, 2, 2, 2), 1, 0.8).expect("generator accepts fixed dims")
}

/// `len` samples of noisy data from [`benchmark_model`] at 40 dB.
pub fn benchmark_data(len: usize) -> (LpvSsModel, DataSet) {
    let model = benchmark_model();
    let dims = model.dims();
    let (u, p) = random_inputs(len, dims.n_u, dims.n_p, 7);
    let (_, y, _) = simulate_with_snr(&model, &u, &p, 7, Snr::Db(40.0)).expect("stable model");
    (model, DataSet::new(u, p, y).expect("matching lengths"))
}
