#![no_main]

use idens_bench::results::{read_results, write_results};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_results(data) {
        let mut buf = Vec::new();
        write_results(&mut buf, &rows).unwrap();
        let again = read_results(buf.as_slice()).unwrap();
        assert_eq!(again.len(), rows.len());
        if !rows.is_empty() {
            let _ = idens_bench::compare_methods(&rows);
        }
    }
});
