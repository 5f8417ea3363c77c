#![no_main]

use libfuzzer_sys::fuzz_target;
use meshrl::io::{results_from_csv, results_to_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok((rows, hash)) = results_from_csv(s) {
        let text = results_to_csv(&rows, hash.as_deref());
        let (again, _) = results_from_csv(&text).expect("written results must parse");
        assert_eq!(again, rows);
    }
});
