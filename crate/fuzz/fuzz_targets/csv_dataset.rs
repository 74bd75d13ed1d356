#![no_main]

use idens_core::data::{read_csv, CsvSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let schema = CsvSchema {
        covariates: vec!["x0".into(), "x1".into()],
        treatment: "a".into(),
        outcomes: vec!["y0".into()],
        counterfactuals: vec!["y0_cf".into()],
    };
    if let Ok(ds) = read_csv(data, &schema) {
        assert_eq!(ds.x().rows(), ds.len());
        assert!(ds.a().iter().all(|&a| a <= 1));
        let _ = ds.outcome_range();
    }
});
