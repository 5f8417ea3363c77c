#![no_main]

use libfuzzer_sys::fuzz_target;
use meshrl::io::{trace_from_csv, trace_to_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok((trace, hash)) = trace_from_csv(s) {
        let text = trace_to_csv(&trace, hash.as_deref());
        let (again, _) = trace_from_csv(&text).expect("written trace must parse");
        assert_eq!(again, trace);
    }
});
