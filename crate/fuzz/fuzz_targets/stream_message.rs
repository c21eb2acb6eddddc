#![no_main]

use helideck::wire::StreamMessage;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = StreamMessage::parse(text) {
        let again = m.to_json();
        assert_eq!(StreamMessage::parse(&again).unwrap().to_json(), again);
    }
});
