#![no_main]

use libfuzzer_sys::fuzz_target;
use meshrl::agent::{observe, PolicyCheckpoint};
use meshrl::mesh::MeshState;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(ckpt) = PolicyCheckpoint::from_json(s) {
        let state = MeshState { d1: 0.3, d2: 1.2, l1: 12.0, l2: 4.0 };
        let obs = observe(&state, &ckpt.policy.normalizer);
        let d = ckpt.policy.distribution(&obs);
        assert!(d.greedy() < ckpt.policy.num_actions());
        let _ = ckpt.policy.value(&obs);
    }
});
