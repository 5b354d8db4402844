use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stockloss::model::{Architecture, ModelConfig, ModelParams, Network};
use stockloss::{LossConfig, LossVariant, SignalDelta};

fn check(arch: Architecture, loss: LossConfig) {
    let cfg = ModelConfig {
        hidden_width: 4,
        seq_len: 3,
        use_hold: loss.use_hold,
        ..ModelConfig::new(arch, 3)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let params = ModelParams::init(&cfg, &mut rng);
    let window: Vec<f64> = (0..cfg.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let delta = SignalDelta::new(vec![0.02, -0.015, 0.01]).unwrap();
    let net = Network::new(cfg, params.clone()).unwrap();
    let (_, grad) = net.backward(&window, &delta, &loss).unwrap();

    let h = 1e-6;
    let value_at = |values: &[f64]| {
        let p = ModelParams {
            layout: params.layout.clone(),
            values: values.to_vec(),
        };
        Network::new(cfg, p).unwrap().backward(&window, &delta, &loss).unwrap().0
    };
    let mut probe = params.values.clone();
    for k in 0..probe.len() {
        let base = probe[k];
        probe[k] = base + h;
        let plus = value_at(&probe);
        probe[k] = base - h;
        let minus = value_at(&probe);
        probe[k] = base;
        let fd = (plus - minus) / (2.0 * h);
        let scale = grad[k].abs().max(fd.abs()).max(1e-5);
        assert!(
            (grad[k] - fd).abs() / scale < 1e-5,
            "{arch:?} {} param {k}: analytic {} vs fd {fd}",
            loss.label(),
            grad[k]
        );
    }
}

#[test]
fn linear_parameter_gradients_match_finite_differences() {
    for v in LossVariant::ALL {
        check(Architecture::Linear, LossConfig::new(v));
        check(Architecture::Linear, LossConfig::new(v).with_hold(true));
    }
}

#[test]
fn mlp_parameter_gradients_match_finite_differences() {
    for v in LossVariant::ALL {
        check(Architecture::Mlp, LossConfig::new(v));
        check(Architecture::Mlp, LossConfig::new(v).with_hold(true));
    }
}
