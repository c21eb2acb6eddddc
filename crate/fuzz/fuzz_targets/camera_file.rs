#![no_main]

use helideck::calibration::{camera_file_json, parse_camera_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(camera) = parse_camera_file(text) {
        let again = parse_camera_file(&camera_file_json(&camera)).expect("written camera file parses");
        assert_eq!(again, camera);
    }
});
