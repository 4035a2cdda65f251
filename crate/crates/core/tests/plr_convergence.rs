//! Benchmark-scale behaviour of the PLR iterations on noise-free data.

use lpvmax::harness::{generate_signals, run_seed, ExperimentConfig};
use lpvmax::plr::plr_fit;
use lpvmax::predictor::{loss, residuals, MaxModel};

const CONFIG: &str = r#"
snr_db = "inf"

[model]
source = "random"
seed = 1
dims = { n_x = 2, n_u = 2, n_y = 2, n_p = 2 }

[orders]
n_b = 4
n_c = 2
"#;

#[test]
fn loss_reaches_truncation_floor_and_settles() {
    let cfg = ExperimentConfig::from_toml(CONFIG).unwrap();
    let truth = cfg.model.load().unwrap();
    // the true system's own MAX tables at the fitted orders; without noise
    // its loss is the truncation error, the floor for these orders
    let oracle = MaxModel::from_ss(&truth, cfg.orders.n_b, cfg.orders.n_c);
    let runs = 10;
    let mut good = 0;
    for i in 0..runs {
        let s = generate_signals(&truth, &cfg, run_seed(11, i)).unwrap();
        let report = plr_fit(&s.train, cfg.orders, &cfg.plr_config()).unwrap();
        let floor = loss(&residuals(&oracle, &s.train).unwrap());
        let l = &report.loss_per_iter;
        let settled = l[1..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-3));
        let final_loss = *l.last().unwrap();
        if report.converged && settled && final_loss < 1.05 * floor {
            good += 1;
        } else {
            eprintln!("run {i}: floor {floor:e}, losses {l:?}");
        }
    }
    assert!(good * 10 >= runs * 9, "{good}/{runs} runs met the floor");
}
