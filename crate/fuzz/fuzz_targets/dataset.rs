#![no_main]

use helideck::geometry::Camera;
use helideck::sim::parse_dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ds) = parse_dataset(text) {
        let _ = ds.yaw_samples(&Camera::pinned());
    }
});
