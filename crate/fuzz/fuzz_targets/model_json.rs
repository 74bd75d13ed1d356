#![no_main]

use idens_autodiff::Tensor;
use idens_core::conditional::ConditionalModel;
use idens_core::data::Arm;
use idens_core::flow::FlowModel;
use idens_core::nuisance::NuisanceModel;
use idens_core::target::TargetFlowPair;
use libfuzzer_sys::fuzz_target;

// First byte picks the decoder; the rest is the JSON text.
fuzz_target!(|data: &[u8]| {
    let Some((&kind, rest)) = data.split_first() else { return };
    let Ok(s) = std::str::from_utf8(rest) else { return };
    match kind % 3 {
        0 => {
            if let Ok(f) = FlowModel::from_json(s) {
                let y = vec![0.25; f.dim()];
                let _ = f.log_prob(&y);
            }
        }
        1 => {
            if let Ok(m) = NuisanceModel::from_json(s) {
                let x = vec![0.5; m.hypernet.fc1.input_dim()];
                let y = Tensor::zeros([1, m.outcome_dim()]);
                let _ = m.cond_log_prob_many(&x, Arm::Treated, &y);
                let _ = m.propensity(&x);
            }
        }
        _ => {
            if let Ok(p) = TargetFlowPair::from_json(s) {
                let y = vec![0.25; p.flows[0].dim()];
                let _ = p.inf_log_prob(1, &y);
            }
        }
    }
});
