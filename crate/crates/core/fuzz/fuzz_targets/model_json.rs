#![no_main]

use libfuzzer_sys::fuzz_target;
use meshrl::sysmodel::SystemModel;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(model) = SystemModel::from_json(s) {
        let _ = model.predict(10.0, 10.0, 0.5, 0.5, 0.0, 0.0);
        let _ = model.predict(f64::MAX, -1.0, 1.0, 0.0, 1.0, 1.0);
    }
});
