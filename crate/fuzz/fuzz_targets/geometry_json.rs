#![no_main]
use libfuzzer_sys::fuzz_target;

use graphla::ScanGeometry;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = serde_json::from_slice::<ScanGeometry>(data) {
        let _ = g.validate();
    }
});
