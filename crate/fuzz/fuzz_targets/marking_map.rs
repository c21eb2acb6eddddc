#![no_main]

use helideck::calibration::{homography_dlt, MarkingMap, MarkingObservation};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(map) = MarkingMap::from_json(text) else { return };
    // Feed the map through the homography fit with made-up pixels.
    let obs: Vec<MarkingObservation> = map
        .markings
        .iter()
        .map(|m| MarkingObservation { id: m.id.clone(), u: 100.0 * m.x + 640.0, v: 50.0 * m.y + 360.0 })
        .collect();
    if let Ok(markings) = map.associate(&obs) {
        let _ = homography_dlt(&markings);
    }
});
