#![no_main]

use helideck::model::Skeleton;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = Skeleton::from_json(text) {
        // Anything accepted must survive a round trip.
        assert_eq!(Skeleton::from_json(&s.to_json()).unwrap(), s);
    }
});
