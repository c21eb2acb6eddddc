#![no_main]

use helideck::yaw::YawCheckpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(ck) = YawCheckpoint::from_json(text) else { return };
    if let Ok(model) = ck.model() {
        let features = vec![0.5; model.net().config().feature_dim];
        let _ = model.estimate(&features);
    }
});
